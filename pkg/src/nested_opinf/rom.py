"""Time integration of polynomial ROMs and the error measures built on it."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import feature_matrix
from .pod import PodBasis, weighted_sqnorms
from .regression import RomOperators

__all__ = [
    "RomSolution",
    "integrate",
    "rollout",
    "reconstruction_error",
    "zeta",
    "effectivity",
    "cumulative_effectivity",
    "relative_errors",
    "write_solution_csv",
]

DIVERGENCE_FACTOR = 1e8


@dataclass
class RomSolution:
    """Reduced states (``s x K``) at the requested output times."""

    states: np.ndarray
    times: np.ndarray
    diverged: bool = False


@np.errstate(over="ignore", invalid="ignore")
def _rk4_batch(O, form, X0, times, thetas, step, threshold):
    """Classic RK4 for a batch of initial states sharing the output times.

    ``thetas`` has shape ``(B, N, G)``; ``thetas[:, k]`` is held fixed on
    ``[t_k, t_{k+1}]``.  Integration stops at the first step where any state
    leaves the ball of radius ``threshold`` (or turns non-finite); later
    outputs repeat the last accepted state.
    """
    B, s = X0.shape
    N = times.size
    out = np.empty((B, N, s))
    out[:, 0] = X0
    X = X0.copy()
    OT = O.T
    for k in range(N - 1):
        span = times[k + 1] - times[k]
        nsub = max(1, int(np.ceil(span / step - 1e-9)))
        h = span / nsub
        theta = thetas[:, k]

        def f(Y):
            return feature_matrix(Y, form, theta) @ OT

        for _ in range(nsub):
            k1 = f(X)
            k2 = f(X + 0.5 * h * k1)
            k3 = f(X + 0.5 * h * k2)
            k4 = f(X + h * k3)
            Xn = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            norms = np.sqrt(np.einsum("ij,ij->i", Xn, Xn))
            if not np.all(norms <= threshold):
                out[:, k + 1:] = X[:, None, :]
                return out, True
            X = Xn
        out[:, k + 1] = X
    return out, False


def _theta_schedule(theta_schedule, n_times: int, n_groups: int) -> np.ndarray:
    th = np.asarray(theta_schedule, dtype=float)
    if th.ndim <= 1:
        th = np.broadcast_to(np.atleast_1d(th), (n_times, th.size))
    if th.shape != (n_times, n_groups):
        raise ValueError(f"theta schedule has shape {th.shape}, expected ({n_times}, {n_groups})")
    return th


def integrate(ops: RomOperators, x0, output_times, theta_schedule=(1.0,), step: float = 1e-3,
              threshold: float | None = None) -> RomSolution:
    """Fixed-step RK4 solution of ``x' = O [features(x, theta)]``.

    Parameters
    ----------
    ops : RomOperators
    x0 : (s,) array
        State at ``output_times[0]``.
    output_times : (N,) array
        Increasing output times; each one is hit exactly by shrinking the
        internal step on that interval.
    theta_schedule : (G,) or (N, G) array
        Scaling coefficients, constant or one row per output interval.
    step : float
        Largest internal step.
    threshold : float, optional
        Divergence radius, default ``1e8 * (1 + ||x0||)``.

    Returns
    -------
    RomSolution
        ``diverged`` is set if the state left the divergence ball; outputs
        after that point repeat the last finite state.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != ops.dim:
        raise ValueError(f"x0 has {x0.size} entries, operators have dim {ops.dim}")
    times = np.asarray(output_times, dtype=float).ravel()
    if np.any(np.diff(times) <= 0):
        raise ValueError("output times must be increasing")
    if threshold is None:
        threshold = DIVERGENCE_FACTOR * (1.0 + np.linalg.norm(x0))
    th = _theta_schedule(theta_schedule, times.size, ops.form.n_groups)
    states, diverged = _rk4_batch(ops.stacked(), ops.form, x0[None, :], times, th[None], step, threshold)
    return RomSolution(states[0].T.copy(), times.copy(), diverged)


def rollout(ops: RomOperators, P, times, boundaries, thetas, step: float = 1e-3, initial=None):
    """Roll out ``ops`` from the first row of every trajectory in ``P``.

    ``initial`` (one row per trajectory) overrides those starting states.
    Trajectories that share identical output times are integrated together.

    Returns
    -------
    states : (K, s) array
        ROM states aligned with the rows of ``P``.
    diverged : bool
    """
    P = np.asarray(P, dtype=float)
    K, s = P.shape
    thetas = np.broadcast_to(np.asarray(thetas, dtype=float), (K, ops.form.n_groups))
    bounds = list(zip(np.asarray(boundaries)[:-1], np.asarray(boundaries)[1:]))
    starts = P[[a for a, _ in bounds]] if initial is None else np.atleast_2d(np.asarray(initial, dtype=float))
    if starts.shape != (len(bounds), s):
        raise ValueError(f"initial states have shape {starts.shape}, expected {(len(bounds), s)}")
    first = {a: x for (a, _), x in zip(bounds, starts)}
    out = np.empty((K, s))
    batches: dict[bytes, list[tuple[int, int]]] = {}
    for a, b in bounds:
        batches.setdefault(np.asarray(times[a:b], dtype=float).tobytes(), []).append((a, b))
    O = ops.stacked()
    for group in batches.values():
        a0, b0 = group[0]
        t = np.asarray(times[a0:b0], dtype=float)
        X0 = np.array([first[a] for a, _ in group])
        th = np.stack([thetas[a:b] for a, b in group])
        threshold = DIVERGENCE_FACTOR * (1.0 + np.linalg.norm(X0, axis=1).min())
        states, diverged = _rk4_batch(O, ops.form, X0, t, th, step, threshold)
        if diverged:
            return out, True
        for (a, b), traj in zip(group, states):
            out[a:b] = traj
    return out, False


def reconstruction_error(P, sol) -> float:
    """``sum_k ||p(t_k) - x_hat(t_k)||^2``; ``inf`` for a diverged solution.

    ``sol`` is a :class:`RomSolution` or a ``K x s`` array aligned with ``P``.
    """
    P = np.asarray(P, dtype=float)
    if isinstance(sol, RomSolution):
        if sol.diverged:
            return np.inf
        X = sol.states.T
    else:
        X = np.asarray(sol, dtype=float)
    if X.shape != P.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {X.shape}")
    diff = P - X
    return float(np.einsum("ij,ij->", diff, diff))


def zeta(v_dot_x0, v_dot_x) -> np.ndarray:
    """Error increment from appending a mode: ``a0 * (a0 - 2 a(t))``.

    ``a0`` is the new mode's coefficient of the initial state and ``a(t)``
    its coefficient of the snapshot at each time.
    """
    a0 = np.asarray(v_dot_x0, dtype=float)
    return a0 * (a0 - 2.0 * np.asarray(v_dot_x, dtype=float))


def _rom_states(rom_sol) -> np.ndarray:
    return rom_sol.states if isinstance(rom_sol, RomSolution) else np.asarray(rom_sol, dtype=float)


def _squared_errors(fom_states, rom_sol, basis: PodBasis, s: int):
    X = np.asarray(fom_states, dtype=float)
    Xr = _rom_states(rom_sol)[:s]
    Vs = basis.modes[:, :s]
    rom_err = weighted_sqnorms(basis.weight, Vs @ Xr - X)
    proj_err = weighted_sqnorms(basis.weight, Vs @ basis.coefficients(X, s) - X)
    return rom_err, proj_err


def effectivity(fom_states, rom_sol, basis: PodBasis, s: int, k_max: int) -> float:
    """ROM error over projection error, root-sum-square over the first ``k_max`` snapshots.

    Both errors are measured in the basis inner product.  Returns ``inf`` if
    only the projection error vanishes and ``nan`` if both do.
    """
    X = np.asarray(fom_states, dtype=float)
    if not 1 <= k_max <= X.shape[1]:
        raise ValueError(f"k_max must be in 1..{X.shape[1]}")
    rom_err, proj_err = _squared_errors(X[:, :k_max], _rom_states(rom_sol)[:, :k_max], basis, s)
    num, den = rom_err.sum(), proj_err.sum()
    if den == 0:
        return np.nan if num == 0 else np.inf
    return float(np.sqrt(num / den))


def cumulative_effectivity(fom_states, rom_sol, basis: PodBasis, s: int) -> np.ndarray:
    """Effectivity with ``k_max = 1, 2, ..., K`` in one pass."""
    rom_err, proj_err = _squared_errors(fom_states, rom_sol, basis, s)
    num, den = np.cumsum(rom_err), np.cumsum(proj_err)
    with np.errstate(divide="ignore", invalid="ignore"):
        eff = np.sqrt(num / den)
    return np.where(den == 0, np.where(num == 0, np.nan, np.inf), eff)


def relative_errors(fom_states, rom_sol, basis: PodBasis, s: int) -> np.ndarray:
    """``||V_s x_hat(t_k) - x(t_k)||_M / ||x(t_k)||_M`` for each snapshot."""
    X = np.asarray(fom_states, dtype=float)
    rom_err, _ = _squared_errors(X, rom_sol, basis, s)
    return np.sqrt(rom_err / weighted_sqnorms(basis.weight, X))


def write_solution_csv(path, sol: RomSolution) -> None:
    s = sol.states.shape[0]
    lines = [",".join(["t"] + [f"x{i + 1}" for i in range(s)])]
    for t, col in zip(sol.times, sol.states.T):
        lines.append(",".join(repr(float(v)) for v in (t, *col)))
    Path(path).write_text("\n".join(lines) + "\n")
