import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import kappa_theta
from nested_opinf.features import ModelForm, restrict_feature_columns
from nested_opinf.nested import (
    TrainingConfig,
    balanced_factors,
    candidate_weights,
    expand_operators,
    iterative_updates,
    select_candidate,
    train_nested,
    weight_grid,
)
from nested_opinf.regression import RomOperators, assemble, solve_regularized
from nested_opinf.rom import rollout
from oracles import normal_equations, select_exhaustive


def test_expand_example():
    ops = RomOperators("c,A,H", [[[1.0]], [[2.0]], [[3.0]]])
    big = expand_operators(ops)
    np.testing.assert_array_equal(big.matrices[0], [[1], [0]])
    np.testing.assert_array_equal(big.matrices[1], [[2, 0], [0, 0]])
    np.testing.assert_array_equal(big.matrices[2], [[3, 0, 0], [0, 0, 0]])
    assert expand_operators(RomOperators.zeros("c,A,H,G", 2)) == RomOperators.zeros("c,A,H,G", 3)


def test_expand_composes_and_restricts_back():
    rng = np.random.default_rng(0)
    form = ModelForm.parse("c,A:1,H,G")
    ops = RomOperators.from_stacked(form, rng.standard_normal((2, form.n_columns(2))))
    twice = expand_operators(expand_operators(ops))
    assert twice.dim == 4
    assert twice.restrict(2) == ops
    np.testing.assert_array_equal(twice.stacked()[:2, restrict_feature_columns(2, 4, form)], ops.stacked())


def test_select_examples():
    inf = np.inf
    assert select_candidate([5, 10], [inf, 1.0]) == 0
    assert select_candidate([10, 5], [inf, 0.1]) == 1
    assert select_candidate([10, 5, 5.4], [inf, 0.1, 0.9], 0.1) == 2
    assert select_candidate([inf, inf], [inf, 1.0]) == 0
    assert select_candidate([np.nan, 1.0], [inf, 1.0]) == 1
    assert select_candidate([2.0, 1.0, 1.0], [inf, 0.5, 0.5]) == 1


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.one_of(st.floats(0, 1e6), st.just(np.inf)), min_size=1, max_size=8),
       st.floats(0, 2.0), st.integers(0, 2**32 - 1))
def test_select_rule_properties(deltas, delta_bar, seed):
    rng = np.random.default_rng(seed)
    n = len(deltas)
    sigmas = np.concatenate([[np.inf], rng.choice([0.1, 0.5, 1.0, 2.0], n - 1)])
    i = select_candidate(deltas, sigmas, delta_bar)
    assert i == select_exhaustive(deltas, sigmas, delta_bar)
    dmin = min(deltas)
    if deltas[0] <= (1 + delta_bar) * dmin:
        assert i == 0
    elif np.isfinite(deltas[0]):
        assert (1 + delta_bar) * deltas[i] <= (1 + delta_bar) ** 2 * dmin
        assert deltas[i] < deltas[0]
        assert deltas[0] > (1 + delta_bar) * dmin


def test_candidate_weights_blocks():
    form = ModelForm.parse("c,A")
    W = candidate_weights(form, 3, [1.0, 2.0], n_previous=2, block_multiplier=10.0)
    old = restrict_feature_columns(2, 3, form)
    assert W.shape == (3, 4)
    np.testing.assert_array_equal(W[:2][:, old], [[10, 20, 20], [10, 20, 20]])
    np.testing.assert_array_equal(W[2], [1, 2, 2, 2])
    np.testing.assert_array_equal(W[:2, 3], [2, 2])
    F = candidate_weights(form, 3, 1.0, n_previous=2, freeze=True)
    assert np.all(np.isinf(F[:2][:, old])) and np.all(np.isfinite(F[2]))


def test_balanced_grid():
    assert balanced_factors(24, 2) == (4, 6)
    assert balanced_factors(24, 3) == (2, 3, 4)
    grid = weight_grid(2, 24, 1e-6, 1.0)
    assert len(grid) == 24 and len(set(grid)) == 24
    assert min(min(g) for g in grid) == pytest.approx(1e-6)
    assert weight_grid(1, 1, 1e-4, 1.0) == [(pytest.approx(1e-2),)]


def _toy_data(rng, K=20, s=2):
    t = np.linspace(0, 1, K)
    P = np.column_stack([np.exp(-t), 0.5 * np.exp(-2 * t)])[:, :s]
    R = -P * np.arange(1, s + 1)
    return assemble(P, R, "c,A,H", [1.0], t, [0, K])


def test_iterative_fixed_point_and_stacked_oracle():
    rng = np.random.default_rng(0)
    data = _toy_data(rng)
    m = data.D.shape[1]
    w = np.full(m, 0.3)
    guess = RomOperators.from_stacked(data.form, 0.1 * rng.standard_normal((2, m)))
    ops, sigma, div = iterative_updates(data, w, guess, 1)
    states, _ = rollout(guess, data.P, data.times, data.boundaries, data.thetas)
    from nested_opinf.features import feature_matrix
    D2 = np.vstack([data.D, feature_matrix(states, data.form, data.thetas)])
    ref = normal_equations(D2, np.vstack([data.R, data.R]), w, guess.stacked())
    np.testing.assert_allclose(ops.stacked(), ref, rtol=1e-8, atol=1e-10)
    assert not div and sigma >= 0.3

    exact = RomOperators.from_stacked(data.form, np.array([[0, -1, 0, 0, 0, 0], [0, 0, -2, 0, 0, 0.0]]))
    # The exact operators reproduce P up to the finite-difference error of R;
    # use R built from them so the fixed point is exact.
    data.R = data.D @ exact.stacked().T
    states, _ = rollout(exact, data.P, data.times, data.boundaries, data.thetas)
    data.P = states
    data.D = feature_matrix(states, data.form, data.thetas)
    data.R = data.D @ exact.stacked().T
    one, _, _ = iterative_updates(data, w, exact, 1)
    two, _, _ = iterative_updates(data, w, exact, 2)
    np.testing.assert_allclose(one.stacked(), exact.stacked(), atol=1e-12)
    np.testing.assert_allclose(two.stacked(), one.stacked(), atol=1e-12)


def test_iterative_divergence_returns_last_good():
    rng = np.random.default_rng(1)
    data = _toy_data(rng)
    bad = RomOperators.from_stacked(data.form, np.array([[0, 0, 0, 50.0, 0, 0], [0, 0, 0, 0, 0, 50.0]]))
    ops, sigma, div = iterative_updates(data, np.ones(6), bad, 3, p0=np.array([[5.0, 5.0]]))
    assert div and ops == bad and sigma == np.inf


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(r=3, r0=4, weight_candidates=[1.0]).validate()
    with pytest.raises(ValueError):
        TrainingConfig(r=3, weight_candidates=[]).validate()
    with pytest.raises(ValueError):
        TrainingConfig(r=3, weight_candidates=[0.0]).validate()
    with pytest.raises(ValueError):
        TrainingConfig(r=11, weight_candidates=[1.0]).validate(basis_rank=10)
    with pytest.raises(ValueError):
        TrainingConfig(r=3, r0=2, weight_candidates=[1.0],
                       initial_guess=RomOperators.zeros("A", 1)).validate()


GRID = weight_grid(2, 12, 1e-8, 1e-2)


@pytest.fixture(scope="module")
def nested_run(heat_data):
    snaps, basis = heat_data
    return train_nested(snaps, basis, "A:1,G", kappa_theta, TrainingConfig(r=4, weight_candidates=GRID))


def test_monotone_acceptance_and_log(nested_run):
    ops, log = nested_run
    assert [st.s for st in log.stages] == [1, 2, 3, 4]
    assert ops == log.stage_operators[4]
    for st_ in log.stages:
        assert st_.delta_star <= st_.delta_ref
        assert st_.candidates[0].sigma == np.inf
        assert len(st_.candidates) == len(GRID) + 1
        assert st_.delta_star <= min(c.delta for c in st_.candidates)
    recs = log.records()
    assert sum(r["kind"] == "summary" for r in recs) == 4
    assert recs[0]["sigma"] == "inf"


def test_bound_diagnostic_dominates_increment(nested_run, heat_data):
    _, log = nested_run
    for prev, cur in zip(log.stages[:-1], log.stages[1:]):
        increase = cur.delta_full_ref - prev.delta_full_star
        assert increase <= cur.bound * (1 + 1e-10)
        assert increase == pytest.approx(cur.zeta_sum, rel=1e-8, abs=1e-12 * prev.delta_full_star)


def test_standard_mode_equals_nested_with_r0_r(heat_data):
    snaps, basis = heat_data
    a = train_nested(snaps, basis, "A:1,G", kappa_theta, TrainingConfig(r=3, r0=3, weight_candidates=GRID))
    b = train_nested(snaps, basis, "A:1,G", kappa_theta, TrainingConfig(r=3, r0=3, weight_candidates=GRID))
    assert a[0] == b[0]
    assert a[1].records() == b[1].records()


def test_warm_start_and_threads(heat_data, nested_run):
    snaps, basis = heat_data
    _, log = nested_run
    cfg = TrainingConfig(r=4, r0=3, initial_guess=log.stage_operators[3], weight_candidates=GRID)
    warm, wlog = train_nested(snaps, basis, "A:1,G", kappa_theta, cfg)
    assert wlog.stages[0].s == 3
    assert wlog.stages[0].delta_ref == pytest.approx(log.stages[2].delta_star, rel=1e-12)
    cfg.workers = 3
    threaded, tlog = train_nested(snaps, basis, "A:1,G", kappa_theta, cfg)
    assert threaded == warm and tlog.records() == wlog.records()


def test_all_diverged_keeps_expanded_guess(heat_data):
    snaps, basis = heat_data
    base, _ = train_nested(snaps, basis, "A:1,G", kappa_theta, TrainingConfig(r=2, weight_candidates=GRID))
    boosted = type(snaps)(snaps.states, snaps.times, snaps.boundaries, snaps.params,
                          derivatives=1e12 * np.sign(snaps.states + 1e-300))
    cfg = TrainingConfig(r=3, r0=2, initial_guess=base, weight_candidates=[1e-8, 1e-6])
    ops, log = train_nested(boosted, basis, "A:1,G", kappa_theta, cfg)
    assert all(st_.all_diverged and st_.i_star == 0 for st_ in log.stages)
    assert log.stage_operators[2] == base
    assert ops == expand_operators(base)
    assert log.any_stage_all_diverged


def test_freeze_mode_restricts_to_stage_operators(heat_data):
    snaps, basis = heat_data
    cfg = TrainingConfig(r=4, weight_candidates=GRID, freeze_previous=True)
    ops, log = train_nested(snaps, basis, "A:1,G", kappa_theta, cfg)
    for s in range(1, 4):
        assert ops.restrict(s) == log.stage_operators[s]
    for st_ in log.stages[1:]:
        for c in st_.candidates[1:]:
            if c.infeasible:
                assert c.delta == np.inf


def test_block_multiplier_changes_weights_only_for_old_entries(heat_data):
    snaps, basis = heat_data
    a, _ = train_nested(snaps, basis, "A:1,G", kappa_theta, TrainingConfig(r=1, weight_candidates=GRID))
    b, _ = train_nested(snaps, basis, "A:1,G", kappa_theta,
                        TrainingConfig(r=1, weight_candidates=GRID, block_multiplier=10.0))
    assert a == b  # no previously learned entries at the first stage
