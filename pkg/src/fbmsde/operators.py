"""Vector fields acting as differential operators.

A vector field V = (v_1, .., v_n) acts on a scalar expression f by
(Vf)(x) = sum_i v_i(x) d f/d x_i.  Words of fields compose as operators with
the convention that the FIRST letter is the OUTERMOST application:
apply_word((i1, i2), f) = V_{i1}(V_{i2} f).  The opposite convention exists in
the literature; everything downstream (operator polynomials, expansion
coefficients) assumes this one.

Operator polynomials carry one real coefficient per explicit word; pattern
symmetry is the moment engines' concern, not stored here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import CapabilityError, DomainError
from .fbm import as_hurst
from .moments import expected_iterated_closed_form, mc_expected_iterated_many
from .symbolic import (DEFAULT_NODE_CAP, Expr, add, const, distinct_size, mul,
                       parse_expr, sub)

DEFAULT_BRACKET_TOL = 1e-10


@dataclass(frozen=True)
class VectorField:
    """n symbolic components defining a smooth vector field on R^n."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise DomainError("a vector field needs at least one component")
        for c in comps:
            if not isinstance(c, Expr):
                raise DomainError(f"component {c!r} is not an expression")
        n = len(comps)
        worst = max(c.max_var for c in comps)
        if worst > n:
            raise DomainError(
                f"component references x{worst} but the field has {n} components"
            )
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_strings(cls, sources):
        return cls(tuple(parse_expr(s) for s in sources))

    @property
    def dimension(self):
        return len(self.components)

    def __call__(self, f):
        return apply_field(self, f)

    def evaluate(self, x):
        """Field value at one point or a batch of points, shape (.., n)."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        out = np.column_stack([
            np.broadcast_to(c.evaluate(pts), pts.shape[0]) for c in self.components
        ])
        return out[0] if single else out


def apply_field(field_, f):
    """(Vf) = sum_i v_i * df/dx_i as a new expression."""
    if f.max_var > field_.dimension:
        raise DomainError(
            f"function references x{f.max_var} but the field lives on "
            f"R^{field_.dimension}"
        )
    out = const(0.0)
    for i, v in enumerate(field_.components):
        out = add(out, mul(v, f.diff(i)))
    return out


def _check_letters(word, d):
    for letter in word:
        if not 1 <= letter <= d:
            raise DomainError(f"word letter {letter} outside 1..{d}")


def apply_word(fields, word, f, node_cap=DEFAULT_NODE_CAP):
    """Compose V_{i1}(V_{i2}(.. V_{i_k} f)) for word = (i1, .., i_k).

    The first letter is the outermost operator.  Raises a resource error if
    an intermediate expression exceeds ``node_cap`` nodes.
    """
    word = tuple(int(i) for i in word)
    _check_letters(word, len(fields))
    g = f
    for letter in reversed(word):
        g = apply_field(fields[letter - 1], g)
        grown = distinct_size(g)
        if grown > node_cap:
            from .errors import ResourceError

            raise ResourceError(
                f"applying word {word} grew the expression to {grown} distinct "
                f"nodes (cap {node_cap})"
            )
    return g


def lie_bracket(v, w):
    """[V, W] with components sum_i (v_i dw_k/dx_i - w_i dv_k/dx_i)."""
    if v.dimension != w.dimension:
        raise DomainError(
            f"bracket needs equal dimensions, got {v.dimension} and {w.dimension}"
        )
    comps = []
    for k in range(v.dimension):
        acc = const(0.0)
        for i in range(v.dimension):
            acc = add(acc, sub(mul(v.components[i], w.components[k].diff(i)),
                               mul(w.components[i], v.components[k].diff(i))))
        comps.append(acc)
    return VectorField(tuple(comps))


def is_commuting(fields, probe_points, tol=DEFAULT_BRACKET_TOL):
    """Numerical commutativity certificate: every pairwise bracket is below
    ``tol`` at every probe point.  Necessary, not a proof."""
    pts = np.atleast_2d(np.asarray(probe_points, dtype=float))
    if pts.size == 0:
        raise DomainError("is_commuting needs at least one probe point")
    fields = tuple(fields)
    for a in range(len(fields)):
        for b in range(a + 1, len(fields)):
            bracket = lie_bracket(fields[a], fields[b])
            for comp in bracket.components:
                vals = comp.evaluate(pts)
                if np.max(np.abs(vals)) > tol:
                    return False
    return True


def _suffix_applications(fields, words, f, node_cap):
    """Memoized word applications sharing common suffixes (inner factors)."""
    memo = {(): f}

    def get(word):
        if word in memo:
            return memo[word]
        inner = get(word[1:])
        g = apply_field(fields[word[0] - 1], inner)
        grown = distinct_size(g)
        if grown > node_cap:
            from .errors import ResourceError

            raise ResourceError(
                f"applying word {word} grew the expression to {grown} distinct "
                f"nodes (cap {node_cap})"
            )
        memo[word] = g
        return g

    return {w: get(w) for w in words}


@dataclass
class OperatorPoly:
    """sum_I c_I V_{i1}..V_{ik}: coefficients keyed by explicit words."""

    terms: dict
    fields: tuple
    order: int
    coefficient_se: dict | None = field(default=None)
    engine: str = "closed"

    def __post_init__(self):
        self.fields = tuple(self.fields)
        d = len(self.fields)
        clean = {}
        for word, coeff in self.terms.items():
            word = tuple(int(i) for i in word)
            _check_letters(word, d)
            if len(word) > self.order:
                raise DomainError(
                    f"word {word} longer than declared order {self.order}"
                )
            clean[word] = float(coeff)
        self.terms = clean

    def apply_symbolic(self, f, node_cap=DEFAULT_NODE_CAP):
        """The expression sum_I c_I (V_I f); evaluate it anywhere afterwards."""
        applied = _suffix_applications(self.fields, list(self.terms), f, node_cap)
        out = const(0.0)
        for word, coeff in sorted(self.terms.items()):
            if coeff != 0.0:
                out = add(out, mul(const(coeff), applied[word]))
        return out

    def apply(self, f, x, node_cap=DEFAULT_NODE_CAP):
        """Evaluate (sum_I c_I V_I f) at the point x."""
        return self.apply_symbolic(f, node_cap=node_cap).evaluate(np.asarray(x, dtype=float))


def apply_operator(op, f, x, node_cap=DEFAULT_NODE_CAP):
    return op.apply(f, x, node_cap=node_cap)


def _common_dimension(fields):
    fields = tuple(fields)
    if not fields:
        raise DomainError("need at least one vector field")
    dims = {f.dimension for f in fields}
    if len(dims) != 1:
        raise DomainError(f"fields have mixed dimensions {sorted(dims)}")
    return fields, len(fields)


def commutative_gamma(k, fields):
    """(1/(k! 2^k)) (sum_i V_i^2)^k expanded into paired words.

    Valid for commuting fields at any Hurst index; commutativity is the
    caller's assertion (certify with :func:`is_commuting`).
    """
    fields, d = _common_dimension(fields)
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    coeff = 1.0 / (math.factorial(k) * 2**k)
    terms = {}
    for js in product(range(1, d + 1), repeat=k):
        word = tuple(x for j in js for x in (j, j))
        terms[word] = terms.get(word, 0.0) + coeff
    return OperatorPoly(terms=terms, fields=fields, order=2 * k,
                        engine="commutative")


def build_gamma(k, hurst, fields, engine="auto", *, mesh_level=10,
                replicates=100_000, seed=None, threads=1):
    """Expansion operator of order k: coefficients c_I = E[iterated fBm
    integral of word I over the unit simplex].

    Engines: ``closed`` (k=1 any H; k=2 for H > 1/4), ``commutative``
    (any k, commuting fields, via the k-th power of the sum of squares),
    ``mc`` (any k up to the word cap, any H; needs a seed).  ``auto`` picks
    the closed form when one exists and otherwise refuses with the list of
    engines that do cover the request.
    """
    h = as_hurst(hurst)
    fields, d = _common_dimension(fields)
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")

    if engine == "auto":
        if k == 1 or (k == 2 and h.analytic_gamma2):
            engine = "closed"
        else:
            raise CapabilityError(
                f"no closed form for k={k} at H={h.value}; valid engines: "
                f"'mc' (any k, any H, needs a seed) or 'commutative' "
                f"(commuting fields only)"
            )

    if engine == "closed":
        if k == 1:
            terms = {(i, i): 0.5 for i in range(1, d + 1)}
        elif k == 2:
            if not h.analytic_gamma2:
                raise CapabilityError(
                    f"closed-form k=2 coefficients need H > 1/4, got "
                    f"{h.value}; valid engines: 'mc' or 'commutative'"
                )
            terms = {}
            for word in product(range(1, d + 1), repeat=4):
                value = expected_iterated_closed_form(h, word).value
                if value != 0.0:
                    terms[word] = value
        else:
            raise CapabilityError(
                f"closed-form engine covers k in {{1, 2}}, got k={k}; valid "
                f"engines: 'mc' or 'commutative'"
            )
        return OperatorPoly(terms=terms, fields=fields, order=2 * k)

    if engine == "commutative":
        return commutative_gamma(k, fields)

    if engine == "mc":
        if seed is None:
            raise DomainError("the mc engine needs an explicit seed")
        words = list(product(range(1, d + 1), repeat=2 * k))
        estimates = mc_expected_iterated_many(h, words, mesh_level, replicates,
                                              seed, threads=threads)
        terms = {w: e.value for w, e in zip(words, estimates)}
        ses = {w: e.std_error for w, e in zip(words, estimates)}
        return OperatorPoly(terms=terms, fields=fields, order=2 * k,
                            coefficient_se=ses, engine="mc")

    raise CapabilityError(
        f"unknown engine {engine!r}; valid engines: 'closed', 'commutative', 'mc'"
    )


# ---------------------------------------------------------------------------
# Text ingestion.  Functions: one infix expression per non-blank line.
# Fields: blocks of component lines separated by blank lines, one block per
# field.  '#' starts a comment in both formats.


def _logical_lines(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        yield line


def load_functions(text):
    out = tuple(parse_expr(line) for line in _logical_lines(text) if line)
    if not out:
        raise DomainError("no expressions found")
    return out


def load_fields(text):
    blocks, current = [], []
    for line in _logical_lines(text):
        if line:
            current.append(line)
        elif current:
            blocks.append(current)
            current = []
    if current:
        blocks.append(current)
    if not blocks:
        raise DomainError("no vector fields found")
    fields = tuple(VectorField.from_strings(b) for b in blocks)
    _common_dimension(fields)
    return fields
