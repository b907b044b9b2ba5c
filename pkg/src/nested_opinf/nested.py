"""Nested Operator Inference: hierarchical training over growing reduced spaces.

Starting from dimension ``r0``, each stage ``s`` zero-pads the operators of
stage ``s - 1`` into an initial guess, solves one regularized OpInf problem
toward that guess per candidate weight combination, rolls every candidate out
over the training snapshots and keeps the most stable candidate whose
reconstruction error is within ``1 + delta_bar`` of the best one.  The
unmodified guess is always candidate 0 with infinite stability, so a stage
never accepts an update that fails to lower the error.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .features import ModelForm, as_form, feature_matrix, restrict_feature_columns
from .io import encode_float
from .pod import PodBasis, SnapshotSet, project, weighted_sqnorms
from .regression import (
    DataMatrices,
    RomOperators,
    assemble,
    residual_diagnostics,
    solve_regularized,
    time_derivatives,
    weight_vector,
)
from .rom import reconstruction_error, rollout, zeta

__all__ = [
    "TrainingConfig",
    "CandidateRecord",
    "StageRecord",
    "TrainingLog",
    "expand_operators",
    "select_candidate",
    "candidate_weights",
    "iterative_updates",
    "train_nested",
    "constant_theta",
    "theta_rows",
    "balanced_factors",
    "weight_grid",
]

log = logging.getLogger(__name__)

ThetaProvider = Callable[[np.ndarray, float], Sequence[float]]


def constant_theta(param, t) -> list[float]:
    """Scaling coefficients of a non-parametric model form."""
    return [1.0]


@dataclass
class TrainingConfig:
    """Inputs of a nested OpInf run.

    ``weight_candidates`` holds one entry per candidate: either a scalar used
    for every term or one positive weight per model-form term.
    """

    r: int
    weight_candidates: Sequence
    r0: int = 1
    initial_guess: RomOperators | None = None
    delta_bar: float = 0.0
    i_max: int = 1
    block_multiplier: float = 1.0
    freeze_previous: bool = False
    step: float = 1e-3
    workers: int = 1

    def validate(self, basis_rank: int | None = None) -> None:
        if not 1 <= self.r0 <= self.r:
            raise ValueError(f"need 1 <= r0 <= r, got r0={self.r0}, r={self.r}")
        if basis_rank is not None and self.r > basis_rank:
            raise ValueError(f"r={self.r} exceeds basis rank {basis_rank}")
        if len(self.weight_candidates) == 0:
            raise ValueError("need at least one weight candidate")
        for omega in self.weight_candidates:
            if np.any(np.asarray(omega, dtype=float) <= 0):
                raise ValueError(f"candidate weights must be positive, got {omega}")
        if self.delta_bar < 0:
            raise ValueError("delta_bar must be >= 0")
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")
        if self.block_multiplier <= 0:
            raise ValueError("block_multiplier must be positive")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.initial_guess is not None and self.initial_guess.dim != self.r0:
            raise ValueError(
                f"initial guess has dim {self.initial_guess.dim}, expected r0={self.r0}")


@dataclass
class CandidateRecord:
    i: int
    omega: list | None
    delta: float
    sigma: float
    diverged: bool
    infeasible: bool = False


@dataclass
class StageRecord:
    """Everything measured during one stage ``s``.

    ``delta_full_ref`` and ``delta_full_star`` add the training snapshots'
    projection residual onto ``V_s`` to the reduced-coordinate errors, giving
    the full-state reconstruction error ``sum_k ||V_s x_hat(t_k) - x(t_k)||^2``.
    """

    s: int
    candidates: list
    i_star: int
    projection_residual: float
    zeta_sum: float | None
    bound: float | None
    residual_norms: np.ndarray

    @property
    def delta_ref(self) -> float:
        return self.candidates[0].delta

    @property
    def delta_star(self) -> float:
        return self.candidates[self.i_star].delta

    @property
    def sigma_star(self) -> float:
        return self.candidates[self.i_star].sigma

    @property
    def delta_full_ref(self) -> float:
        return self.delta_ref + self.projection_residual

    @property
    def delta_full_star(self) -> float:
        return self.delta_star + self.projection_residual

    @property
    def all_diverged(self) -> bool:
        return all(c.diverged for c in self.candidates[1:])


@dataclass
class TrainingLog:
    stages: list = field(default_factory=list)
    stage_operators: dict = field(default_factory=dict)

    @property
    def any_stage_all_diverged(self) -> bool:
        return any(st.all_diverged for st in self.stages)

    def records(self) -> list[dict]:
        out = []
        for st in self.stages:
            for c in st.candidates:
                out.append({
                    "kind": "candidate", "s": st.s, "i": c.i, "omega": c.omega,
                    "delta": encode_float(c.delta), "sigma": encode_float(c.sigma),
                    "diverged": c.diverged, "infeasible": c.infeasible,
                })
            out.append({
                "kind": "summary", "s": st.s, "i_star": st.i_star,
                "delta_ref": encode_float(st.delta_ref),
                "delta_star": encode_float(st.delta_star),
                "sigma_star": encode_float(st.sigma_star),
                "projection_residual": encode_float(st.projection_residual),
                "zeta_sum": None if st.zeta_sum is None else encode_float(st.zeta_sum),
                "bound": None if st.bound is None else encode_float(st.bound),
                "residual_norms": [encode_float(v) for v in st.residual_norms],
                "all_diverged": st.all_diverged,
            })
        return out

    def write_jsonl(self, path) -> None:
        lines = [json.dumps(rec, sort_keys=True) for rec in self.records()]
        Path(path).write_text("\n".join(lines) + "\n")


def expand_operators(ops: RomOperators) -> RomOperators:
    """Zero-pad every operator from dimension ``s - 1`` to ``s``.

    Old entries keep their positions: the new row and all feature columns
    involving the new mode are zero.
    """
    s = ops.dim + 1
    mats = []
    for term, M in zip(ops.form.terms, ops.matrices):
        new = np.zeros((s, term.width(s)))
        new[: s - 1, : M.shape[1]] = M
        mats.append(new)
    return RomOperators(ops.form, mats)


def select_candidate(deltas, sigmas, delta_bar: float = 0.0) -> int:
    """Most stable candidate whose error is within ``1 + delta_bar`` of the best.

    NaN errors count as infinite.  Ties in ``sigmas`` go to the smaller index.
    """
    deltas = np.asarray(deltas, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if deltas.size == 0 or deltas.shape != sigmas.shape:
        raise ValueError("deltas and sigmas must be non-empty and of equal length")
    deltas = np.where(np.isnan(deltas), np.inf, deltas)
    feasible = deltas <= (1.0 + delta_bar) * deltas.min()
    best = -1
    for i in np.flatnonzero(feasible):
        if best < 0 or sigmas[i] > sigmas[best]:
            best = i
    return int(best)


def candidate_weights(form: ModelForm, s: int, omega, *, n_previous: int | None = None,
                      block_multiplier: float = 1.0, freeze: bool = False) -> np.ndarray:
    """Per-entry weight matrix (``s x n_columns``) for one candidate.

    Entries learned at an earlier stage (rows and feature columns of the
    first ``n_previous`` modes) get their weight multiplied by
    ``block_multiplier``, or are pinned (infinite weight) when ``freeze``.
    """
    w = weight_vector(form, s, omega)
    W = np.tile(w, (s, 1))
    if n_previous is not None and 0 < n_previous < s and (freeze or block_multiplier != 1.0):
        old = restrict_feature_columns(n_previous, s, form)
        block = np.ix_(np.arange(n_previous), old)
        W[block] = np.inf if freeze else W[block] * block_multiplier
    return W


def iterative_updates(data: DataMatrices, weights, guess: RomOperators, i_max: int,
                      p0=None, step: float = 1e-3):
    """Refine operators against their own rollouts.

    Each iteration rolls out the current operators from the trajectory
    initial states (``p0``, default the first row of each trajectory in
    ``data.P``), builds a second data matrix from the rollout states, stacks
    it under ``D`` with the derivative targets repeated, and solves the
    regularized problem toward the current operators.

    Returns
    -------
    ops : RomOperators
    sigma_min : float
        Smallest singular value over all iterations (``inf`` if none ran).
    diverged : bool
        True if a rollout diverged; ``ops`` is then the last iterate whose
        rollout stayed bounded.
    """
    if i_max < 1:
        raise ValueError("i_max must be >= 1")
    if data.P is None or data.times is None:
        raise ValueError("iterative updates need P and times in the data matrices")
    boundaries = data.boundaries if data.boundaries is not None else np.array([0, data.K])
    thetas = data.thetas if data.thetas is not None else np.ones((data.K, 1))
    R2 = np.vstack([data.R, data.R])
    current = guess
    sigma_min = np.inf
    for _ in range(i_max):
        states, diverged = rollout(current, data.P, data.times, boundaries, thetas, step, initial=p0)
        if diverged:
            return current, sigma_min, True
        D_itr = feature_matrix(states, data.form, thetas)
        O, sigma = solve_regularized(np.vstack([data.D, D_itr]), R2, weights, current.stacked())
        current = RomOperators.from_stacked(data.form, O)
        sigma_min = min(sigma_min, sigma)
    return current, sigma_min, False


def theta_rows(snapshots: SnapshotSet, theta_provider: ThetaProvider | None) -> np.ndarray:
    """Scaling coefficients for every snapshot column, one row each."""
    provider = theta_provider or constant_theta
    rows = []
    for j, sl in enumerate(snapshots.slices()):
        for t in snapshots.times[sl]:
            rows.append(np.asarray(provider(snapshots.params[j], float(t)), dtype=float))
    return np.array(rows)


def balanced_factors(total: int, parts: int) -> tuple[int, ...]:
    """Factor ``total`` into ``parts`` integers as close to equal as possible (ascending)."""
    if total < 1 or parts < 1:
        raise ValueError("total and parts must be positive")
    best = None

    def search(rest, k, lo, acc):
        nonlocal best
        if k == 1:
            if rest >= lo:
                cand = (*acc, rest)
                if best is None or cand[-1] / cand[0] < best[-1] / best[0]:
                    best = cand
            return
        f = lo
        while f ** k <= rest:
            if rest % f == 0:
                search(rest // f, k - 1, f, (*acc, f))
            f += 1

    search(total, parts, 1, ())
    return best


def weight_grid(n_terms: int, n_omega: int, lo: float = 1e-10, hi: float = 1.0) -> list[tuple]:
    """Tensor grid of ``n_omega`` log-spaced weight combinations over ``[lo, hi]``.

    ``n_omega`` is split into ``n_terms`` balanced factors; term ``i`` gets
    the ``i``-th smallest.  An axis with a single point sits at the geometric
    mean of ``lo`` and ``hi``.
    """
    if not 0 < lo <= hi:
        raise ValueError(f"need 0 < lo <= hi, got lo={lo}, hi={hi}")
    axes = [np.logspace(np.log10(lo), np.log10(hi), k) if k > 1 else np.array([np.sqrt(lo * hi)])
            for k in balanced_factors(n_omega, n_terms)]
    return [tuple(float(v) for v in combo) for combo in itertools.product(*axes)]


def _omega_list(omega, n_terms: int) -> list[float]:
    return np.broadcast_to(np.asarray(omega, dtype=float), (n_terms,)).tolist()


def train_nested(snapshots: SnapshotSet, basis: PodBasis, form, theta_provider: ThetaProvider | None,
                 config: TrainingConfig):
    """Learn ROM operators of dimension ``config.r`` by nested expansion.

    Parameters
    ----------
    snapshots : SnapshotSet
        Training trajectories.  Exact derivatives, if attached, are projected
        and used instead of finite differences.
    basis : PodBasis
        Reduced basis with at least ``config.r`` modes.
    form : ModelForm or str
    theta_provider : callable ``(param, t) -> theta`` or None
        Scaling coefficients per snapshot; ``None`` means ``[1]``.
    config : TrainingConfig

    Returns
    -------
    ops : RomOperators
        Operators selected at the last stage.
    log : TrainingLog
        Per-stage candidate errors, stability values and diagnostics, plus
        the selected operators of every stage.
    """
    form = as_form(form)
    config.validate(basis.r)
    r, r0 = config.r, config.r0

    P = project(snapshots, basis, r)
    if snapshots.derivatives is not None:
        R = project(snapshots.derivatives, basis, r)
    else:
        R = time_derivatives(P, snapshots.times, snapshots.boundaries)
    thetas = theta_rows(snapshots, theta_provider)
    full = assemble(P, R, form, thetas, snapshots.times, snapshots.boundaries)

    total_energy = float(weighted_sqnorms(basis.weight, snapshots.states).sum())
    starts = snapshots.initial_indices()
    lengths = np.diff(snapshots.boundaries)

    train_log = TrainingLog()
    ops = None
    for s in range(r0, r + 1):
        data = full.restrict(s)
        if s == r0:
            guess = config.initial_guess if config.initial_guess is not None else RomOperators.zeros(form, s)
            guess = RomOperators(form, guess.matrices)
        else:
            guess = expand_operators(ops)

        ref_states, ref_div = rollout(guess, data.P, data.times, data.boundaries, data.thetas, config.step)
        delta0 = np.inf if ref_div else reconstruction_error(data.P, ref_states)
        candidates = [CandidateRecord(0, None, delta0, np.inf, ref_div)]
        n_previous = s - 1 if s > r0 else None

        def run(i_omega):
            i, omega = i_omega
            W = candidate_weights(form, s, omega, n_previous=n_previous,
                                  block_multiplier=config.block_multiplier,
                                  freeze=config.freeze_previous)
            if config.i_max > 1:
                cand, sigma, _ = iterative_updates(data, W, guess, config.i_max, step=config.step)
            else:
                O, sigma = solve_regularized(data.D, data.R, W, guess.stacked())
                cand = RomOperators.from_stacked(form, O)
            states, div = rollout(cand, data.P, data.times, data.boundaries, data.thetas, config.step)
            delta = np.inf if div else reconstruction_error(data.P, states)
            infeasible = bool(config.freeze_previous and n_previous and delta > delta0)
            rec = CandidateRecord(i, _omega_list(omega, len(form)),
                                  np.inf if infeasible else delta, sigma, div, infeasible)
            return rec, cand

        jobs = list(enumerate(config.weight_candidates, start=1))
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(run, jobs))
        else:
            results = [run(job) for job in jobs]
        candidates += [rec for rec, _ in results]
        ops_list = [guess] + [cand for _, cand in results]

        i_star = select_candidate([c.delta for c in candidates], [c.sigma for c in candidates],
                                  config.delta_bar)
        ops = ops_list[i_star]

        if s > r0:
            a0 = P[starts, s - 1]
            zsum = float(sum(zeta(a0[j], P[sl, s - 1]).sum()
                             for j, sl in enumerate(snapshots.slices())))
            bound = float(3.0 * np.sum(lengths * a0**2) + basis.energy_increment(s))
        else:
            zsum, bound = None, None
        Ps = data.P
        stage = StageRecord(
            s=s,
            candidates=candidates,
            i_star=i_star,
            projection_residual=total_energy - float(np.einsum("ij,ij->", Ps, Ps)),
            zeta_sum=zsum,
            bound=bound,
            residual_norms=residual_diagnostics(data, guess).residual_norms,
        )
        train_log.stages.append(stage)
        train_log.stage_operators[s] = ops
        log.info("stage s=%d: i*=%d delta_ref=%.6g delta*=%.6g sigma*=%.6g%s", s, i_star,
                 stage.delta_ref, stage.delta_star, stage.sigma_star,
                 " (all candidates diverged)" if stage.all_diverged else "")
    return ops, train_log
