"""Operator Inference data matrices and the regularized least-squares solve."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .features import ModelForm, as_form, feature_matrix, restrict_feature_columns

__all__ = [
    "RomOperators",
    "DataMatrices",
    "ResidualDiagnostics",
    "time_derivatives",
    "assemble",
    "weight_vector",
    "solve_regularized",
    "opinf_solve",
    "residual_diagnostics",
    "save_operators",
    "load_operators",
]


@dataclass
class RomOperators:
    """Coefficient matrices of a polynomial ROM, one per model-form term.

    ``matrices[i]`` has shape ``(dim, form.terms[i].width(dim))``; the
    constant term is stored as a ``(dim, 1)`` column.
    """

    form: ModelForm
    matrices: list

    def __post_init__(self):
        self.form = as_form(self.form)
        self.matrices = [np.array(M, dtype=float, ndmin=2) for M in self.matrices]
        if len(self.matrices) != len(self.form):
            raise ValueError(f"{len(self.matrices)} matrices for {len(self.form)} terms")
        s = self.matrices[0].shape[0]
        for term, M in zip(self.form.terms, self.matrices):
            if M.shape != (s, term.width(s)):
                raise ValueError(f"term {term}: expected shape {(s, term.width(s))}, got {M.shape}")

    @property
    def dim(self) -> int:
        return self.matrices[0].shape[0]

    @classmethod
    def zeros(cls, form, dim: int) -> "RomOperators":
        form = as_form(form)
        return cls(form, [np.zeros((dim, t.width(dim))) for t in form.terms])

    @classmethod
    def from_stacked(cls, form, O) -> "RomOperators":
        form = as_form(form)
        O = np.asarray(O, dtype=float)
        offsets = form.offsets(O.shape[0])
        if O.shape[1] != offsets[-1]:
            raise ValueError(f"stacked operator has {O.shape[1]} columns, form needs {offsets[-1]}")
        return cls(form, [O[:, a:b] for a, b in zip(offsets[:-1], offsets[1:])])

    def stacked(self) -> np.ndarray:
        """The ``dim x n_columns`` matrix ``[c, A, H, ...]``."""
        return np.hstack(self.matrices)

    def rhs(self, X, theta) -> np.ndarray:
        """Right-hand side for a state ``(s,)`` or a batch ``(B, s)``."""
        X = np.asarray(X, dtype=float)
        F = feature_matrix(np.atleast_2d(X), self.form, theta)
        out = F @ self.stacked().T
        return out[0] if X.ndim == 1 else out

    def restrict(self, s: int) -> "RomOperators":
        """Operators acting on the first ``s`` reduced coordinates only."""
        cols = restrict_feature_columns(s, self.dim, self.form)
        return RomOperators.from_stacked(self.form, self.stacked()[:s, cols])

    def __eq__(self, other) -> bool:
        if not isinstance(other, RomOperators):
            return NotImplemented
        return self.form == other.form and all(
            np.array_equal(a, b) for a, b in zip(self.matrices, other.matrices)
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "form": str(self.form),
            "terms": [
                {
                    "degree": t.degree,
                    "theta_group": t.group,
                    "matrix": [[float(v).hex() for v in row] for row in M],
                }
                for t, M in zip(self.form.terms, self.matrices)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RomOperators":
        form = ModelForm.from_terms((t["degree"], t["theta_group"]) for t in data["terms"])
        if str(form) != data.get("form", str(form)):
            raise ValueError(f"form string {data['form']!r} disagrees with terms {form}")
        mats = [np.array([[float.fromhex(v) for v in row] for row in t["matrix"]], dtype=float)
                .reshape(data["dim"], -1) for t in data["terms"]]
        ops = cls(form, mats)
        if ops.dim != data["dim"]:
            raise ValueError(f"dim {data['dim']} disagrees with matrices ({ops.dim})")
        return ops


def save_operators(path, ops: RomOperators) -> None:
    Path(path).write_text(json.dumps(ops.to_dict(), indent=1) + "\n")


def load_operators(path) -> RomOperators:
    return RomOperators.from_dict(json.loads(Path(path).read_text()))


def time_derivatives(P, times, boundaries=None) -> np.ndarray:
    """Finite-difference time derivatives of each trajectory's rows.

    Second-order central differences (nonuniform grids allowed) in the
    interior of each trajectory, first-order one-sided differences at its two
    ends.  Trajectory boundaries are never differenced across.
    """
    P = np.asarray(P, dtype=float)
    times = np.asarray(times, dtype=float).ravel()
    if P.ndim == 1:
        P = P[:, None]
    K = P.shape[0]
    if times.size != K:
        raise ValueError(f"{times.size} times for {K} rows")
    if boundaries is None:
        boundaries = [0, K]
    out = np.empty_like(P)
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        t = times[a:b]
        if b - a < 3:
            raise ValueError(f"trajectory rows {a}:{b} have fewer than 3 samples")
        if np.any(np.diff(t) == 0):
            raise ValueError(f"duplicate time stamps in trajectory rows {a}:{b}")
        out[a:b] = np.gradient(P[a:b], t, axis=0, edge_order=1)
    return out


@dataclass
class DataMatrices:
    """Data matrix ``D`` (``K x n_columns``) and derivative matrix ``R`` (``K x s``).

    ``P``, ``thetas``, ``times`` and ``boundaries`` are kept so that ROMs
    learned from these matrices can be rolled out over the same snapshots.
    """

    D: np.ndarray
    R: np.ndarray
    s: int
    form: ModelForm
    P: np.ndarray | None = None
    thetas: np.ndarray | None = None
    times: np.ndarray | None = None
    boundaries: np.ndarray | None = field(default=None)

    @property
    def K(self) -> int:
        return self.D.shape[0]

    def restrict(self, s: int) -> "DataMatrices":
        cols = restrict_feature_columns(s, self.s, self.form)
        P = None if self.P is None else self.P[:, :s]
        return DataMatrices(self.D[:, cols], self.R[:, :s], s, self.form, P,
                            self.thetas, self.times, self.boundaries)


def assemble(P, R_full, form, theta_per_row, times=None, boundaries=None) -> DataMatrices:
    """Build ``D`` row by row from the projected states ``P`` (``K x s``)."""
    form = as_form(form)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    R = np.atleast_2d(np.asarray(R_full, dtype=float))
    K, s = P.shape
    if R.shape != (K, s):
        raise ValueError(f"R has shape {R.shape}, expected {(K, s)}")
    thetas = np.asarray(theta_per_row, dtype=float)
    thetas = np.broadcast_to(thetas, (K, thetas.shape[-1])).copy()
    D = feature_matrix(P, form, thetas)
    return DataMatrices(D, R, s, form, P, thetas,
                        None if times is None else np.asarray(times, dtype=float),
                        None if boundaries is None else np.asarray(boundaries, dtype=int))


def weight_vector(form, s: int, omegas) -> np.ndarray:
    """Per-column weights: ``omegas[i]`` repeated over term ``i``'s columns."""
    form = as_form(form)
    omegas = np.broadcast_to(np.asarray(omegas, dtype=float), (len(form),))
    if np.any(omegas <= 0):
        raise ValueError("regularization weights must be positive")
    return np.repeat(omegas, form.widths(s))


def solve_regularized(D, R, weights, guess):
    """Minimize ``||D O^T - R||_F^2 + ||W * (O - guess)^T||_F^2`` over ``O``.

    Parameters
    ----------
    D : (K, m) array
    R : (K, s) array
    weights : (m,) or (s, m) array
        Column weights shared by all output rows, or one weight row per
        output row.  An infinite weight pins that entry to its guess; those
        columns are dropped from the row's unknowns.
    guess : (s, m) array

    Returns
    -------
    O : (s, m) array
    sigma_min : float
        Smallest singular value of the extended matrix ``[D; diag(w)]``
        (over the distinct weight rows; ``inf`` if every entry is pinned).
    """
    D = np.asarray(D, dtype=float)
    R = np.asarray(R, dtype=float)
    guess = np.asarray(guess, dtype=float)
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(R))):
        raise ValueError("non-finite entries in data or derivative matrix")
    K, m = D.shape
    s = R.shape[1]
    if guess.shape != (s, m):
        raise ValueError(f"guess has shape {guess.shape}, expected {(s, m)}")
    W = np.asarray(weights, dtype=float)
    if W.ndim == 1:
        W = np.broadcast_to(W, (s, m))
    if W.shape != (s, m):
        raise ValueError(f"weights have shape {W.shape}, expected {(m,)} or {(s, m)}")
    if np.any(W <= 0) or np.any(np.isnan(W)):
        raise ValueError("regularization weights must be positive")

    residual = R - D @ guess.T
    delta = np.zeros((m, s))
    sigma_min = np.inf
    groups: dict[bytes, list[int]] = {}
    for j in range(s):
        groups.setdefault(W[j].tobytes(), []).append(j)
    for rows in groups.values():
        w = W[rows[0]]
        free = np.isfinite(w)
        if not free.any():
            continue
        E = np.vstack([D[:, free], np.diag(w[free])])
        U, sig, Vt = la.svd(E, full_matrices=False, lapack_driver="gesdd")
        delta[np.ix_(free, rows)] = Vt.T @ ((U[:K].T @ residual[:, rows]) / sig[:, None])
        sigma_min = min(sigma_min, float(sig[-1]))
    return guess + delta.T, sigma_min


def opinf_solve(data: DataMatrices, w, guess: RomOperators | None = None):
    """Regularized OpInf solve toward an initial guess.

    Returns the operators ``guess + Delta`` where ``Delta`` minimizes
    ``||D Delta^T - (R - D guess^T)||_F^2 + ||diag(w) Delta^T||_F^2``, and the
    smallest singular value of ``[D; diag(w)]`` (at least ``min(w)``).
    """
    if guess is None:
        guess = RomOperators.zeros(data.form, data.s)
    O, sigma = solve_regularized(data.D, data.R, w, guess.stacked())
    return RomOperators.from_stacked(data.form, O), sigma


@dataclass
class ResidualDiagnostics:
    """Squared residual column norms and the implied update-size bounds."""

    residual_norms: np.ndarray
    bound: np.ndarray | None


def residual_diagnostics(data: DataMatrices, ops: RomOperators, sigma: float | None = None):
    """``||col_j(R - D O^T)||^2`` for each ``j``, and the bound ``norm / sigma^2``.

    With ``ops`` the initial guess and ``sigma`` the value returned by the
    solve, the bound caps the squared norm of row ``j`` of the learned update.
    """
    res = data.R - data.D @ ops.stacked().T
    norms = np.einsum("ij,ij->j", res, res)
    bound = None if sigma is None else norms / float(sigma) ** 2
    return ResidualDiagnostics(norms, bound)

