import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nested_opinf.fom import cubic_heat_snapshots, fom_inner_product_weight  # noqa: E402
from nested_opinf.pod import compute_pod  # noqa: E402


@pytest.fixture(scope="session")
def heat_data():
    """Default cubic-heat training set and its weighted POD basis."""
    snaps = cubic_heat_snapshots()
    basis = compute_pod(snaps, 10, fom_inner_product_weight(snaps.n))
    return snaps, basis


def kappa_theta(param, t):
    return [1.0, float(param[0])]


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)
