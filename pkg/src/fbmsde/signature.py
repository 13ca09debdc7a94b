"""Truncated tensor algebra and exact signatures of piecewise-linear paths.

A truncated tensor element over R^d at degree n is the tuple
(x0, x1, ..., xn) with xk in (R^d)^{tensor k}; multiplication truncates

    (x * y)_k = sum_{j=0..k} x_j tensor y_{k-j}.

The signature of a linear segment with increment v is exp(v):
level k equals v^{tensor k} / k!.  Signatures of piecewise-linear paths
are products of segment signatures (Chen's identity), which is exact -
no numerical integration enters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ResourceError

__all__ = [
    "TensorElement",
    "PiecewisePath",
    "identity_tensor",
    "tensor_mul",
    "tensor_norm",
    "segment_signature",
    "path_signature",
    "iterated_integral",
    "check_chen",
    "p_variation_control",
]

MAX_DEGREE = 8
_MAX_LEVEL_ENTRIES = 10_000_000


def _check_shape(dimension: int, degree: int) -> None:
    if dimension < 1:
        raise DomainError(f"dimension must be >= 1, got {dimension}")
    if degree < 0 or degree > MAX_DEGREE:
        raise ResourceError(f"degree must lie in 0..{MAX_DEGREE}, got {degree}")
    if dimension**degree > _MAX_LEVEL_ENTRIES:
        raise ResourceError(
            f"level {degree} over R^{dimension} has {dimension**degree} entries, "
            f"above the cap {_MAX_LEVEL_ENTRIES}"
        )


@dataclass
class TensorElement:
    """Truncated tensor-algebra element; levels[k] has shape (d,) * k."""

    dimension: int
    degree: int
    levels: list

    def __post_init__(self) -> None:
        _check_shape(self.dimension, self.degree)
        if len(self.levels) != self.degree + 1:
            raise DomainError("levels must contain degree + 1 arrays")
        fixed = []
        for k, lvl in enumerate(self.levels):
            arr = np.asarray(lvl, dtype=float)
            if arr.shape != (self.dimension,) * k:
                raise DomainError(
                    f"level {k} must have shape {(self.dimension,) * k}, got {arr.shape}"
                )
            fixed.append(arr)
        self.levels = fixed

    def level_norms(self) -> list:
        """Frobenius norm of each level."""
        return [float(np.sqrt(np.sum(lvl * lvl))) for lvl in self.levels]

    def scalar_part(self) -> float:
        return float(self.levels[0])


def identity_tensor(dimension: int, degree: int) -> TensorElement:
    """The multiplicative unit (1, 0, ..., 0)."""
    _check_shape(dimension, degree)
    levels = [np.zeros((dimension,) * k) for k in range(degree + 1)]
    levels[0] = np.asarray(1.0)
    return TensorElement(dimension, degree, levels)


def tensor_mul(a: TensorElement, b: TensorElement) -> TensorElement:
    """Truncated tensor product; degrees and dimensions must match."""
    if a.dimension != b.dimension or a.degree != b.degree:
        raise DomainError("tensor_mul requires matching dimension and degree")
    levels = []
    for k in range(a.degree + 1):
        acc = np.zeros((a.dimension,) * k)
        for j in range(k + 1):
            term = np.multiply.outer(a.levels[j], b.levels[k - j])
            acc = acc + term.reshape(acc.shape)
        levels.append(acc)
    return TensorElement(a.dimension, a.degree, levels)


def tensor_norm(a: TensorElement) -> float:
    """Sum of levelwise Frobenius norms; submultiplicative for the product."""
    return float(sum(a.level_norms()))


def segment_signature(increment, degree: int) -> TensorElement:
    """Signature of one linear segment: level k is increment^{tensor k}/k!."""
    v = np.asarray(increment, dtype=float)
    if v.ndim != 1:
        raise DomainError("increment must be a 1-d vector")
    _check_shape(v.size, degree)
    levels = [np.asarray(1.0)]
    for k in range(1, degree + 1):
        levels.append(np.multiply.outer(levels[-1], v) / k if k > 1 else v.copy())
    # levels[k] currently v^{tensor k} / (2*3*..*k) = v^{tensor k}/k!
    return TensorElement(v.size, degree, levels)


@dataclass
class PiecewisePath:
    """A continuous piecewise-linear path given by knots and node values.

    knots: strictly increasing, knots[0] == 0.0 and knots[-1] == 1.0.
    values: shape (len(knots), d).
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.knots = np.asarray(self.knots, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.knots.ndim != 1 or self.knots.size < 2:
            raise DomainError("need at least two knots")
        if self.values.ndim != 2 or self.values.shape[0] != self.knots.size:
            raise DomainError("values must have shape (len(knots), d)")
        if np.any(np.diff(self.knots) <= 0):
            raise DomainError("knots must be strictly increasing")
        if self.knots[0] != 0.0 or self.knots[-1] != 1.0:
            raise DomainError("paths are parametrized over [0, 1]")

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        t = float(t)
        if not (0.0 <= t <= 1.0):
            raise DomainError("time must lie in [0, 1]")
        return np.array(
            [np.interp(t, self.knots, self.values[:, j]) for j in range(self.dimension)]
        )

    def restrict(self, a: float, b: float) -> "PiecewisePath":
        """The sub-path on [a, b], reparametrized to [0, 1].

        Signatures are invariant under reparametrization, so restriction
        commutes with signature computation.
        """
        a, b = float(a), float(b)
        if not (0.0 <= a < b <= 1.0):
            raise DomainError("need 0 <= a < b <= 1")
        inner = self.knots[(self.knots > a) & (self.knots < b)]
        knots = np.concatenate([[a], inner, [b]])
        values = np.stack([self.value_at(t) for t in knots])
        return PiecewisePath(knots=(knots - a) / (b - a), values=values)


def path_signature(path: PiecewisePath, degree: int) -> TensorElement:
    """Exact truncated signature of a piecewise-linear path via Chen."""
    _check_shape(path.dimension, degree)
    sig = identity_tensor(path.dimension, degree)
    for incr in np.diff(path.values, axis=0):
        sig = tensor_mul(sig, segment_signature(incr, degree))
    return sig


def iterated_integral(path: PiecewisePath, word: tuple) -> float:
    """The signature entry for one word (letters are 1-based coordinates)."""
    if len(word) == 0:
        return 1.0
    if any(not (1 <= int(c) <= path.dimension) for c in word):
        raise DomainError(f"word letters must lie in 1..{path.dimension}, got {word}")
    sig = path_signature(path, len(word))
    idx = tuple(int(c) - 1 for c in word)
    return float(sig.levels[len(word)][idx])


def check_chen(path: PiecewisePath, split: float, degree: int) -> float:
    """Max levelwise defect of Chen's identity at an arbitrary split time."""
    split = float(split)
    if not (0.0 < split < 1.0):
        raise DomainError("split must lie strictly inside (0, 1)")
    full = path_signature(path, degree)
    left = path_signature(path.restrict(0.0, split), degree)
    right = path_signature(path.restrict(split, 1.0), degree)
    prod = tensor_mul(left, right)
    defect = 0.0
    for k in range(degree + 1):
        diff = np.max(np.abs(prod.levels[k] - full.levels[k])) if k else 0.0
        defect = max(defect, float(diff))
    return defect


def p_variation_control(path: PiecewisePath, p: float, level: int) -> float:
    """Total p-variation functional of signature level k over the knot lattice.

    Value is ( sup_D sum_l |S^{(k)}(t_{l-1}, t_l)|^{p/k} )^{k/p}, the
    supremum running over subdivisions D drawn from the path's knots.  For
    a straight line at level 1 this is |increment| for every p, and for
    p = 1, level 1 it is the total variation over the knots.
    """
    if p <= 0:
        raise DomainError("p must be positive")
    if level < 1:
        raise DomainError("level must be >= 1")
    _check_shape(path.dimension, level)
    knots = path.knots
    values = path.values
    n = knots.size
    # |level-k signature| over every knot interval [i, j]
    seg_norm = np.zeros((n, n))
    for i in range(n - 1):
        sig = identity_tensor(path.dimension, level)
        for j in range(i + 1, n):
            sig = tensor_mul(sig, segment_signature(values[j] - values[j - 1], level))
            lvl = sig.levels[level]
            seg_norm[i, j] = math.sqrt(float(np.sum(lvl * lvl)))
    # maximize the sum of |.|^{p/level} over subdivisions by forward DP
    expo = p / level
    best = np.full(n, -np.inf)
    best[0] = 0.0
    for j in range(1, n):
        cand = best[:j] + seg_norm[:j, j] ** expo
        best[j] = float(np.max(cand))
    return float(best[-1] ** (level / p))
