"""Full-order models used to generate snapshot data.

* 1D cubic heat equation ``x_t = kappa x_zz - x^3`` on ``(0, 1)`` with zero
  Dirichlet boundaries and ``x(0, z) = 10 z (1 - z)``, discretized with
  second-order finite differences and Crank-Nicolson in time.
* A random stable linear system ``x' = (A0 + z A1) x`` with a known invariant
  subspace, whose trajectories and derivatives are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .pod import SnapshotSet

__all__ = [
    "NewtonError",
    "CubicHeatConfig",
    "cubic_heat_solve",
    "cubic_heat_snapshots",
    "fom_inner_product_weight",
    "LinearFom",
    "linear_parametric_fom",
    "TRAINING_KAPPAS",
]

TRAINING_KAPPAS = (0.1, 0.01, 0.001)
NEWTON_TOL = 1e-10
NEWTON_MAXITER = 20


class NewtonError(RuntimeError):
    """Newton iteration of an implicit time step did not converge."""


@dataclass(frozen=True)
class CubicHeatConfig:
    kappa: float
    n: int = 201
    t_end: float = 0.2
    dt: float = 1e-3
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs n >= 3 nodes, got {self.n}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-8 * max(1.0, steps):
            raise ValueError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")
        return int(round(steps))

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)


def initial_condition(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return 10.0 * z * (1.0 - z)


def cubic_heat_solve(config: CubicHeatConfig, x0=None) -> SnapshotSet:
    """Crank-Nicolson solve; snapshots every ``snapshot_stride`` steps from ``t = 0``.

    Each step solves ``y - dt/2 f(y) = x + dt/2 f(x)`` with
    ``f(x) = kappa L x - x^3`` by Newton's method on the interior nodes;
    boundary nodes stay zero.

    Raises
    ------
    NewtonError
        If a step needs more than 20 Newton iterations to reach a relative
        update size of 1e-10.
    """
    n_steps = config.n_steps
    if n_steps // config.snapshot_stride < 1:
        raise ValueError(
            f"t_end={config.t_end} with dt={config.dt} and stride {config.snapshot_stride} "
            "yields a single snapshot; need at least two")
    z = config.grid
    x = initial_condition(z) if x0 is None else np.asarray(x0, dtype=float).copy()
    x[0] = x[-1] = 0.0
    h = 1.0 / (config.n - 1)
    kappa, dt = config.kappa, config.dt
    c = kappa / h**2
    m = config.n - 2

    def f(y):
        lap = -2.0 * y
        lap[1:] += y[:-1]
        lap[:-1] += y[1:]
        return c * lap - y**3

    ab = np.zeros((3, m))
    ab[0, 1:] = -0.5 * dt * c
    ab[2, :-1] = -0.5 * dt * c

    snaps = [x.copy()]
    times = [0.0]
    y = x[1:-1].copy()
    for step in range(1, n_steps + 1):
        rhs = y + 0.5 * dt * f(y)
        y_new = y.copy()
        for it in range(NEWTON_MAXITER):
            G = y_new - 0.5 * dt * f(y_new) - rhs
            ab[1] = 1.0 + 0.5 * dt * (2.0 * c + 3.0 * y_new**2)
            dy = la.solve_banded((1, 1), ab, -G)
            y_new += dy
            if np.max(np.abs(dy)) <= NEWTON_TOL * max(1.0, np.max(np.abs(y_new))):
                break
        else:
            raise NewtonError(
                f"Newton did not converge at step {step} (t={step * dt:.6g}, kappa={kappa}): "
                f"last update {np.max(np.abs(dy)):.3e}, residual {np.max(np.abs(G)):.3e}")
        y = y_new
        if step % config.snapshot_stride == 0:
            full = np.zeros(config.n)
            full[1:-1] = y
            snaps.append(full)
            times.append(step * dt)
    return SnapshotSet.single(np.column_stack(snaps), times, [kappa])


def cubic_heat_snapshots(kappas=TRAINING_KAPPAS, **kwargs) -> SnapshotSet:
    """Concatenated cubic-heat trajectories, one per ``kappa``."""
    return SnapshotSet.concatenate([cubic_heat_solve(CubicHeatConfig(kappa=k, **kwargs)) for k in kappas])


def fom_inner_product_weight(n: int) -> np.ndarray:
    """Trapezoidal quadrature weights of the uniform grid on ``[0, 1]``."""
    if n < 3:
        raise ValueError(f"grid needs n >= 3 nodes, got {n}")
    h = 1.0 / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass
class LinearFom:
    """Linear system ``x' = (A0 + z A1) x``."""

    A0: np.ndarray
    A1: np.ndarray | None = None
    basis: np.ndarray | None = None

    def A(self, z: float = 0.0) -> np.ndarray:
        return self.A0 if self.A1 is None else self.A0 + z * self.A1

    def trajectory(self, x0, times, z: float = 0.0) -> SnapshotSet:
        """Exact states ``expm(A t) x0`` and derivatives ``A x(t)``."""
        A = self.A(z)
        x0 = np.asarray(x0, dtype=float)
        times = np.asarray(times, dtype=float)
        X = np.column_stack([la.expm(A * (t - times[0])) @ x0 for t in times])
        return SnapshotSet.single(X, times, [z], derivatives=A @ X)

    def intrusive(self, V, z: float = 0.0) -> np.ndarray:
        """Galerkin projection ``V^T A(z) V``."""
        V = np.asarray(V, dtype=float)
        return V.T @ self.A(z) @ V


def _contractive_block(rng, r: int) -> np.ndarray:
    B = rng.standard_normal((r, r)) / np.sqrt(r)
    shift = np.linalg.eigvalsh(0.5 * (B + B.T)).max() + 1.0
    return B - shift * np.eye(r)


def linear_parametric_fom(n: int, r_true: int, seed: int = 0, parametric: bool = False) -> LinearFom:
    """Random stable linear system with an ``r_true``-dimensional invariant subspace.

    In the coordinates of a random orthogonal ``Q`` the system matrices are
    block diagonal, so trajectories started in ``span(Q[:, :r_true])`` (stored
    as ``basis``) stay there.  The symmetric parts of all blocks are negative
    definite for every ``z >= 0``.  With ``parametric`` a second matrix ``A1``
    of the same block structure is drawn.
    """
    if not 1 <= r_true <= n:
        raise ValueError(f"need 1 <= r_true <= n, got r_true={r_true}, n={n}")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))

    def assemble(top, bottom):
        M = np.zeros((n, n))
        M[:r_true, :r_true] = top
        M[r_true:, r_true:] = bottom
        return Q @ M @ Q.T

    A0 = assemble(_contractive_block(rng, r_true), -np.diag(rng.uniform(1.0, 5.0, n - r_true)))
    A1 = None
    if parametric:
        S = rng.standard_normal((r_true, r_true))
        top = 0.5 * (S - S.T) - 0.5 * np.eye(r_true)
        A1 = assemble(top, -0.5 * np.eye(n - r_true))
    return LinearFom(A0, A1, Q[:, :r_true].copy())
