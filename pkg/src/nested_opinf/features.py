"""Condensed polynomial features and the model forms built from them.

Monomials of degree ``d`` in ``s`` variables are listed without duplicates,
grouped by the largest participating mode index (ascending) and ordered
lexicographically inside each group.  For ``d = 2`` this gives
``w1^2, w1 w2, w2^2, w1 w3, w2 w3, w3^2, ...``.  Because every monomial
involving mode ``s + 1`` sorts after all monomials of modes ``1..s``, the
feature list for dimension ``s`` is a prefix of the list for ``s + 1``.
Zero-padding operators to a larger dimension therefore only appends columns.
"""

from __future__ import annotations

import functools
import itertools
import re
from dataclasses import dataclass
from math import comb
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "MonomialIndexMap",
    "Term",
    "ModelForm",
    "num_monomials",
    "monomial_indices",
    "condensed_product",
    "feature_vector",
    "feature_matrix",
    "restrict_feature_columns",
    "condense_symmetric",
]

MAX_DEGREE = 3
_LETTERS = {0: "c", 1: "A", 2: "H", 3: "G"}
_DEGREES = {v: k for k, v in _LETTERS.items()}


def num_monomials(s: int, d: int) -> int:
    """Number of distinct degree-``d`` monomials in ``s`` variables."""
    if d == 0:
        return 1
    return comb(s + d - 1, d)


@functools.lru_cache(maxsize=None)
def _index_array(s: int, d: int) -> np.ndarray:
    combos = list(itertools.combinations_with_replacement(range(s), d))
    # Stable sort keeps lexicographic order inside each max-index group.
    combos.sort(key=lambda c: c[-1])
    arr = np.array(combos, dtype=np.intp).reshape(len(combos), d)
    arr.setflags(write=False)
    return arr


def monomial_indices(s: int, d: int) -> np.ndarray:
    """Zero-based multi-indices of the condensed degree-``d`` monomials.

    Returns an ``(num_monomials(s, d), d)`` read-only integer array whose rows
    are nondecreasing.
    """
    if s < 1 or d < 1:
        raise ValueError(f"need s >= 1 and d >= 1, got s={s}, d={d}")
    return _index_array(s, d)


@dataclass(frozen=True)
class MonomialIndexMap:
    """Ordered multi-indices (one-based) for dimension ``dim`` and ``degree``."""

    dim: int
    degree: int

    @property
    def index_list(self) -> list[tuple[int, ...]]:
        return [tuple(int(i) + 1 for i in row) for row in monomial_indices(self.dim, self.degree)]

    def __len__(self) -> int:
        return num_monomials(self.dim, self.degree)


def condensed_product(w, d: int) -> np.ndarray:
    """Duplicate-free degree-``d`` monomials of ``w``.

    ``w`` may be a vector of length ``s`` or a ``(B, s)`` batch of vectors, in
    which case the result has shape ``(B, num_monomials(s, d))``.

    >>> condensed_product([1.0, 2.0, 3.0], 2)
    array([1., 2., 4., 3., 6., 9.])
    """
    w = np.asarray(w, dtype=float)
    if w.shape[-1] == 0 or w.size == 0:
        raise ValueError("empty state")
    if d < 1:
        raise ValueError(f"degree must be >= 1, got {d}")
    idx = monomial_indices(w.shape[-1], d)
    out = w[..., idx[:, 0]]
    for j in range(1, d):
        out = out * w[..., idx[:, j]]
    return out


@dataclass(frozen=True)
class Term:
    """One polynomial term of a model form.

    ``degree`` 0 is the constant term.  ``group`` selects which scaling
    coefficient ``theta[group]`` multiplies the term.
    """

    degree: int
    group: int = 0

    def __post_init__(self):
        if not 0 <= self.degree <= MAX_DEGREE:
            raise ValueError(f"term degree must be in 0..{MAX_DEGREE}, got {self.degree}")
        if self.group < 0:
            raise ValueError(f"theta group must be >= 0, got {self.group}")

    def width(self, s: int) -> int:
        return num_monomials(s, self.degree)

    def __str__(self) -> str:
        letter = _LETTERS[self.degree]
        return letter if self.group == 0 else f"{letter}:{self.group}"


_TOKEN = re.compile(r"^([cAHG])(?::(\d+))?$")


@dataclass(frozen=True)
class ModelForm:
    """Ordered list of polynomial terms defining a ROM's right-hand side.

    The string form lists terms separated by commas, each a letter
    (``c`` constant, ``A`` linear, ``H`` quadratic, ``G`` cubic) with an
    optional ``:g`` scaling-group suffix, e.g. ``"A:1,G"``.
    """

    terms: tuple[Term, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("model form needs at least one term")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError(f"duplicate terms in model form {self}")

    @classmethod
    def parse(cls, text: str) -> "ModelForm":
        terms = []
        for token in text.replace(" ", "").split(","):
            m = _TOKEN.match(token)
            if m is None:
                raise ValueError(f"bad model-form token {token!r} in {text!r}")
            terms.append(Term(_DEGREES[m.group(1)], int(m.group(2) or 0)))
        return cls(tuple(terms))

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[int, int] | Term]) -> "ModelForm":
        return cls(tuple(t if isinstance(t, Term) else Term(*t) for t in terms))

    def __str__(self) -> str:
        return ",".join(str(t) for t in self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def n_groups(self) -> int:
        return max(t.group for t in self.terms) + 1

    def widths(self, s: int) -> list[int]:
        return [t.width(s) for t in self.terms]

    def n_columns(self, s: int) -> int:
        return sum(self.widths(s))

    def offsets(self, s: int) -> np.ndarray:
        """Start column of each term block, plus the total as last entry."""
        return np.concatenate([[0], np.cumsum(self.widths(s))]).astype(int)

    def column_terms(self, s: int) -> np.ndarray:
        """Term index owning each feature column."""
        return np.repeat(np.arange(len(self.terms)), self.widths(s))


def _check_theta(theta, form: ModelForm) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != form.n_groups:
        raise ValueError(
            f"mismatched theta length: form {form} needs {form.n_groups} "
            f"scaling coefficients, got {theta.shape[-1]}"
        )
    return theta


def feature_matrix(W, form: ModelForm, theta) -> np.ndarray:
    """Feature rows for a batch of states.

    Parameters
    ----------
    W : (B, s) array
        States, one per row.
    form : ModelForm
    theta : (G,) or (B, G) array
        Scaling coefficients, shared or one row per state.

    Returns
    -------
    (B, form.n_columns(s)) array
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[1] == 0:
        raise ValueError("empty state")
    form = as_form(form)
    theta = _check_theta(theta, form)
    theta = np.broadcast_to(theta, (W.shape[0], form.n_groups))
    blocks = []
    for term in form.terms:
        scale = theta[:, term.group : term.group + 1]
        if term.degree == 0:
            blocks.append(scale.copy())
        elif term.degree == 1:
            blocks.append(scale * W)
        else:
            blocks.append(scale * condensed_product(W, term.degree))
    return np.hstack(blocks)


def feature_vector(w, form: ModelForm, theta) -> np.ndarray:
    """Feature row ``[theta_g * (w ⊗̂ ... ⊗̂ w) for each term]`` of one state."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError("feature_vector expects a single state vector")
    return feature_matrix(w[None, :], form, theta)[0]


def restrict_feature_columns(s_small: int, s_large: int, form: ModelForm) -> np.ndarray:
    """Columns of the ``s_large`` feature row that only involve modes ``1..s_small``.

    The returned indices are in the ``s_small`` feature order.
    """
    if not 1 <= s_small <= s_large:
        raise ValueError(f"need 1 <= s_small <= s_large, got {s_small}, {s_large}")
    form = as_form(form)
    offsets = form.offsets(s_large)
    cols = [
        np.arange(start, start + term.width(s_small))
        for start, term in zip(offsets[:-1], form.terms)
    ]
    return np.concatenate(cols)


def condense_symmetric(S) -> np.ndarray:
    """Coefficients ``h`` with ``h @ (w ⊗̂ w) == w^T S w`` for square ``S``.

    ``S_ii`` lands on the ``w_i^2`` column and ``S_ij + S_ji`` on ``w_i w_j``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("expected a square matrix")
    idx = monomial_indices(S.shape[0], 2)
    i, j = idx[:, 0], idx[:, 1]
    return np.where(i == j, S[i, j], S[i, j] + S[j, i])


def as_form(form: ModelForm | str | Sequence) -> ModelForm:
    """Accept a ModelForm, its string form, or a sequence of ``(degree, group)``."""
    if isinstance(form, ModelForm):
        return form
    if isinstance(form, str):
        return ModelForm.parse(form)
    return ModelForm.from_terms(form)
