"""Snapshot containers and proper orthogonal decomposition."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.linalg as la

from . import io

__all__ = [
    "SnapshotSet",
    "PodBasis",
    "compute_pod",
    "project",
    "save_snapshots",
    "load_snapshots",
    "save_basis",
    "load_basis",
]


@dataclass
class SnapshotSet:
    """Full-order trajectories stored column-wise.

    Attributes
    ----------
    states : (n, K) array
        Snapshots of all trajectories, concatenated along columns.
    times : (K,) array
        Time stamps, strictly increasing inside each trajectory.
    boundaries : (T + 1,) int array
        Column offsets; trajectory ``j`` occupies ``boundaries[j]:boundaries[j+1]``.
    params : list of arrays
        One parameter vector per trajectory (empty for non-parametric data).
    derivatives : (n, K) array, optional
        Exact time derivatives.  When present they replace finite differences
        during training.
    """

    states: np.ndarray
    times: np.ndarray
    boundaries: np.ndarray
    params: list = field(default_factory=list)
    derivatives: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.boundaries = np.asarray(self.boundaries, dtype=int).ravel()
        if self.states.ndim != 2:
            raise ValueError("states must be an n x K matrix")
        n, K = self.states.shape
        if self.times.size != K:
            raise ValueError(f"{self.times.size} time stamps for {K} snapshots")
        b = self.boundaries
        if b.size < 2 or b[0] != 0 or b[-1] != K or np.any(np.diff(b) < 1):
            raise ValueError(f"boundaries {b.tolist()} do not partition 0..{K}")
        if not self.params:
            self.params = [np.zeros(0) for _ in range(b.size - 1)]
        self.params = [np.atleast_1d(np.asarray(p, dtype=float)) for p in self.params]
        if len(self.params) != b.size - 1:
            raise ValueError(f"{len(self.params)} parameter vectors for {b.size - 1} trajectories")
        for j, sl in enumerate(self.slices()):
            t = self.times[sl]
            if t.size < 2:
                raise ValueError(f"trajectory {j} has {t.size} snapshot(s); need at least 2")
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"times of trajectory {j} are not strictly increasing")
        if self.derivatives is not None:
            self.derivatives = np.asarray(self.derivatives, dtype=float)
            if self.derivatives.shape != self.states.shape:
                raise ValueError("derivatives must have the same shape as states")

    @classmethod
    def single(cls, states, times, param=(), derivatives=None) -> "SnapshotSet":
        states = np.asarray(states, dtype=float)
        return cls(states, times, [0, states.shape[1]], [param], derivatives)

    @classmethod
    def concatenate(cls, sets: Sequence["SnapshotSet"]) -> "SnapshotSet":
        if not sets:
            raise ValueError("nothing to concatenate")
        offsets = [0]
        for s in sets:
            offsets += (offsets[-1] + s.boundaries[1:]).tolist()
        have_ddt = all(s.derivatives is not None for s in sets)
        return cls(
            np.hstack([s.states for s in sets]),
            np.concatenate([s.times for s in sets]),
            offsets,
            [p for s in sets for p in s.params],
            np.hstack([s.derivatives for s in sets]) if have_ddt else None,
        )

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def K(self) -> int:
        return self.states.shape[1]

    @property
    def n_trajectories(self) -> int:
        return self.boundaries.size - 1

    def slices(self) -> Iterator[slice]:
        for a, b in zip(self.boundaries[:-1], self.boundaries[1:]):
            yield slice(int(a), int(b))

    def trajectory(self, j: int) -> "SnapshotSet":
        sl = list(self.slices())[j]
        ddt = None if self.derivatives is None else self.derivatives[:, sl]
        return SnapshotSet.single(self.states[:, sl], self.times[sl], self.params[j], ddt)

    def initial_indices(self) -> np.ndarray:
        return self.boundaries[:-1].copy()


def _weight_factor(weight, n: int):
    """Validated weight: the diagonal itself, or the lower Cholesky factor ``L``
    of a full weight ``M = L L^T``."""
    if weight is None:
        return None
    W = np.asarray(weight, dtype=float)
    if W.ndim == 1:
        if W.size != n or np.any(W <= 0):
            raise ValueError("diagonal weight must have n positive entries")
        return W
    if W.shape != (n, n):
        raise ValueError(f"weight must be ({n},) or ({n}, {n}), got {W.shape}")
    if not np.allclose(W, W.T, rtol=1e-12, atol=0):
        raise ValueError("weight matrix must be symmetric")
    try:
        return la.cholesky(W, lower=True)
    except la.LinAlgError:
        raise ValueError("weight matrix must be positive definite") from None


def apply_weight(weight, X) -> np.ndarray:
    """Compute ``M @ X`` for a diagonal (vector) or full weight."""
    X = np.asarray(X, dtype=float)
    if weight is None:
        return X
    W = np.asarray(weight)
    if W.ndim == 1:
        return W[:, None] * X if X.ndim == 2 else W * X
    return W @ X


def weighted_sqnorms(weight, X) -> np.ndarray:
    """Column-wise squared norms ``x^T M x``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.einsum("ij,ij->j", X, apply_weight(weight, X))


@dataclass(frozen=True)
class PodBasis:
    """POD modes with their singular values and residual energies.

    ``residual_energy[s]`` is the squared projection error of the snapshots
    onto the first ``s`` modes, for ``s = 0 .. min(n, K)``; entry 0 is the
    total snapshot energy.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    residual_energy: np.ndarray
    weight: np.ndarray | None = None
    truncated: bool = False

    @property
    def n(self) -> int:
        return self.modes.shape[0]

    @property
    def r(self) -> int:
        return self.modes.shape[1]

    def energy_increment(self, s: int) -> float:
        """``eps_{s-1}^2 - eps_s^2``: snapshot energy captured by mode ``s``."""
        return float(self.residual_energy[s - 1] - self.residual_energy[s])

    def coefficients(self, X, s: int | None = None) -> np.ndarray:
        """Reduced coordinates ``V_s^T M X`` (shape ``s x K``)."""
        s = self.r if s is None else s
        return self.modes[:, :s].T @ apply_weight(self.weight, X)

    def reconstruct(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        return self.modes[:, : coeffs.shape[0]] @ coeffs

    def restrict(self, s: int) -> "PodBasis":
        return PodBasis(self.modes[:, :s], self.singular_values[:s],
                        self.residual_energy, self.weight, self.truncated)


def compute_pod(snapshots, r_max: int, weight=None) -> PodBasis:
    """POD basis of the snapshot columns under the inner product ``<x, y>_M``.

    Parameters
    ----------
    snapshots : SnapshotSet or (n, K) array
        All trajectories are used together.
    r_max : int
        Number of modes to keep, at most ``min(n, K)``.
    weight : (n,) or (n, n) array, optional
        Diagonal or full symmetric positive definite inner-product weight
        ``M``.  Identity if omitted.

    Returns
    -------
    PodBasis
        Modes are ``M``-orthonormal.  If the snapshots have numerical rank
        below ``r_max`` the basis is cut to that rank, ``truncated`` is set and
        a warning is issued.
    """
    X = snapshots.states if isinstance(snapshots, SnapshotSet) else np.asarray(snapshots, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, K = X.shape
    if not 1 <= r_max <= min(n, K):
        raise ValueError(f"r_max must be in 1..{min(n, K)}, got {r_max}")

    L = _weight_factor(weight, n)
    if L is None:
        Y = X
    elif L.ndim == 1:
        Y = np.sqrt(L)[:, None] * X
    else:
        Y = L.T @ X
    U, sigma, _ = la.svd(Y, full_matrices=False, lapack_driver="gesdd")

    # Deterministic signs: largest-magnitude entry of each left vector positive.
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs

    energy = np.concatenate([np.cumsum((sigma**2)[::-1])[::-1], [0.0]])

    tol = sigma[0] * max(n, K) * np.finfo(float).eps if sigma.size else 0.0
    rank = int(np.sum(sigma > tol))
    r = r_max
    truncated = False
    if rank < r_max:
        warnings.warn(f"snapshot rank {rank} < requested r_max={r_max}; basis truncated",
                      RuntimeWarning, stacklevel=2)
        r, truncated = max(rank, 1), True

    Ur = U[:, :r]
    if L is None:
        modes = Ur
    elif L.ndim == 1:
        modes = Ur / np.sqrt(L)[:, None]
    else:
        modes = la.solve_triangular(L.T, Ur, lower=False)
    w = None if weight is None else np.asarray(weight, dtype=float)
    return PodBasis(modes, sigma[:r].copy(), energy, w, truncated)


def project(snapshots, basis: PodBasis, s: int | None = None) -> np.ndarray:
    """Projected snapshots ``P_s`` (``K x s``), row ``k`` = ``V_s^T M x(t_k)``."""
    s = basis.r if s is None else s
    if not 1 <= s <= basis.r:
        raise ValueError(f"s must be in 1..{basis.r}, got {s}")
    X = snapshots.states if isinstance(snapshots, SnapshotSet) else np.asarray(snapshots, dtype=float)
    return basis.coefficients(X, s).T


# --- files -----------------------------------------------------------------

def save_snapshots(directory, snapshots: SnapshotSet, metadata: Sequence[dict] | None = None,
                   csv: bool = False) -> list[Path]:
    """Write one ``traj_XXX.opnf`` file (plus JSON sidecar) per trajectory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for j, sl in enumerate(snapshots.slices()):
        stem = directory / f"traj_{j:03d}"
        io.write_matrix_binary(stem.with_suffix(".opnf"), snapshots.states[:, sl].T)
        if csv:
            io.write_snapshots_csv(stem.with_suffix(".csv"), snapshots.states[:, sl])
        meta = dict(metadata[j]) if metadata else {}
        meta["times"] = snapshots.times[sl].tolist()
        meta["param"] = snapshots.params[j].tolist()
        io.dump_json(stem.with_suffix(".json"), meta)
        written.append(stem.with_suffix(".opnf"))
    return written


def load_snapshots(directory) -> tuple[SnapshotSet, list[dict]]:
    """Read every ``traj_*.opnf`` in ``directory`` in name order."""
    directory = Path(directory)
    files = sorted(directory.glob("traj_*.opnf"))
    if not files:
        raise FileNotFoundError(f"no traj_*.opnf snapshot files in {directory}")
    sets, metas = [], []
    for f in files:
        meta = io.load_json(f.with_suffix(".json"))
        states = io.read_matrix_binary(f).T
        sets.append(SnapshotSet.single(states, meta["times"], meta.get("param", ())))
        metas.append(meta)
    return SnapshotSet.concatenate(sets), metas


def save_basis(path, basis: PodBasis) -> None:
    """Modes go to ``<path>.opnf``; everything else to the JSON at ``path``."""
    path = Path(path)
    io.write_matrix_binary(path.with_suffix(".opnf"), basis.modes)
    weight = None if basis.weight is None else basis.weight.tolist()
    io.dump_json(path, {
        "modes_file": path.with_suffix(".opnf").name,
        "singular_values": basis.singular_values.tolist(),
        "residual_energy": basis.residual_energy.tolist(),
        "weight": weight,
        "truncated": basis.truncated,
    })


def load_basis(path) -> PodBasis:
    path = Path(path)
    meta = io.load_json(path)
    modes = io.read_matrix_binary(path.parent / meta["modes_file"])
    weight = None if meta["weight"] is None else np.asarray(meta["weight"], dtype=float)
    return PodBasis(modes, np.asarray(meta["singular_values"]),
                    np.asarray(meta["residual_energy"]), weight, bool(meta["truncated"]))
