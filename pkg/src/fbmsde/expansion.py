"""Small-time expansion of E[f(X_t^x)] and invariant-measure residuals.

The headline object is the partial sum

    E[f(X_t^x)] ~ f(x) + sum_{k=1}^N t^{2kH} (Gamma_k f)(x),

whose coefficients come from the operator engines, validated against
Monte-Carlo estimates of the left side on a geometric grid of horizons.
Residuals are judged against their own Monte-Carlo noise: points below
4 standard errors carry no order information and are excluded from the
remainder-slope fit; if every point is below noise the expansion is
verified at the achieved resolution.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import CapabilityError, DomainError
from .fbm import as_hurst
from .moments import MomentEstimate, mc_weighted_word_sum
from .operators import OperatorPoly, apply_word, build_gamma
from .rng import TAG_MEASURE, stream, subseed
from .sde import SolveConfig, estimate_ptf
from .symbolic import Expr, add, call, const, mul, powr, sub, var

DEFAULT_QUAD_ORDER = 64
MAX_QUAD_DIMENSION = 3
_NORMALIZATION_TOL = 1e-6
_TAIL_TOL = 1e-6


# ---------------------------------------------------------------------------
# Expansion coefficients and validation.


def expansion_coefficients(spec, f, x=None, n_terms=2, engine="auto", *,
                           mesh_level=10, replicates=100_000, seed=None,
                           threads=1):
    """[Gamma_0 f(x), .., Gamma_N f(x)] as MomentEstimates (term 0 = f(x)).

    Deterministic engines return zero standard errors.  The mc engine
    estimates each term as a single per-path linear combination of word
    integrals, so its standard error is the true combined one.
    """
    x = spec.initial if x is None else np.asarray(x, dtype=float)
    if n_terms < 0:
        raise DomainError(f"need n_terms >= 0, got {n_terms}")
    h = spec.hurst
    terms = [MomentEstimate(value=float(f.evaluate(x)), std_error=0.0,
                            method="exact", hurst=h.value)]
    for k in range(1, n_terms + 1):
        if engine == "mc":
            if seed is None:
                raise DomainError("the mc engine needs an explicit seed")
            weights = {}
            for word in product(range(1, spec.driver_dimension + 1), repeat=2 * k):
                w = float(apply_word(spec.fields, word, f).evaluate(x))
                if w != 0.0:
                    weights[word] = w
            if not weights:
                terms.append(MomentEstimate(value=0.0, std_error=0.0,
                                            method="mc", hurst=h.value))
                continue
            terms.append(mc_weighted_word_sum(h, weights, mesh_level,
                                              replicates, subseed(seed, k),
                                              threads=threads))
        else:
            gamma = build_gamma(k, h, spec.fields, engine=engine,
                                mesh_level=mesh_level, replicates=replicates,
                                seed=None if seed is None else subseed(seed, k),
                                threads=threads)
            terms.append(MomentEstimate(value=float(gamma.apply(f, x)),
                                        std_error=0.0, method=engine,
                                        hurst=h.value))
    return terms


def geometric_grid(t_min, t_max, count):
    """A geometric horizon grid, endpoints included."""
    if not (0.0 < t_min < t_max):
        raise DomainError("need 0 < t_min < t_max")
    if count < 2:
        raise DomainError("need at least 2 grid points")
    return np.geomspace(t_min, t_max, count)


def _check_geometric(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.size < 4:
        raise DomainError(f"need at least 4 horizons, got {t.size}")
    if np.any(t <= 0.0) or np.any(t > 0.5):
        raise DomainError("horizons must lie in (0, 0.5]")
    if np.any(np.diff(t) <= 0.0):
        raise DomainError("horizons must be strictly increasing")
    ratios = t[1:] / t[:-1]
    if np.max(ratios) - np.min(ratios) > 1e-8 * np.max(ratios):
        raise DomainError("horizons must be geometrically spaced")
    return t


@dataclass(frozen=True)
class ValidationConfig:
    """Monte-Carlo setup for expansion validation, one run per horizon."""

    replicates: int
    seed: int
    mesh_level: int = 8
    substeps_per_cell: int = 2
    threads: int = 1
    solver: str = "wong_zakai"
    blowup_norm: float = 1e8


@dataclass
class ExpansionReport:
    hurst: float
    x: np.ndarray
    f: Expr
    terms: list          # (k, exponent 2kH, coefficient value)
    t_grid: np.ndarray
    mc_values: list      # MomentEstimate per horizon
    residuals: np.ndarray
    fitted_slope: float | None
    verdict: str

    def partial_sum(self, t):
        return float(sum(c * t**e for _, e, c in self.terms))

    def to_json_dict(self):
        return {
            "H": self.hurst,
            "x": [float(v) for v in self.x],
            "f_source": str(self.f),
            "terms": [
                {"k": k, "exponent": e, "value": c} for k, e, c in self.terms
            ],
            "t_grid": [float(t) for t in self.t_grid],
            "mc": [
                {"t": float(t), "mean": est.value, "se": est.std_error}
                for t, est in zip(self.t_grid, self.mc_values)
            ],
            "residuals": [float(r) for r in self.residuals],
            "slope": self.fitted_slope,
            "verdict": self.verdict,
        }

    def write_json(self, target):
        payload = json.dumps(self.to_json_dict(), indent=2, sort_keys=True)
        if hasattr(target, "write"):
            target.write(payload + "\n")
        else:
            with open(target, "w") as fh:
                fh.write(payload + "\n")

    def write_csv(self, target):
        if hasattr(target, "write"):
            self._write_rows(target)
        else:
            with open(target, "w", newline="") as fh:
                self._write_rows(fh)

    def _write_rows(self, fh: io.TextIOBase):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "mc_mean", "mc_se", "partial_sum", "residual"])
        for t, est, r in zip(self.t_grid, self.mc_values, self.residuals):
            writer.writerow([
                f"{t:.17g}", f"{est.value:.17g}", f"{est.std_error:.17g}",
                f"{self.partial_sum(t):.17g}", f"{r:.17g}",
            ])


def validate_expansion(spec, f, x=None, n_terms=2, t_grid=None, config=None,
                       engine="auto", node_cap=None):
    """Empirical check of the expansion order on a geometric horizon grid.

    Residual r(t) = MC estimate - partial sum.  The remainder slope is
    fitted by least squares on log|r| vs log t over the horizons where the
    residual rises above 4 standard errors; when there are none the report
    verdict is "remainder below MC resolution" — success for the o(.)
    claim at the precision actually achieved.
    """
    if config is None:
        raise DomainError("validate_expansion needs a ValidationConfig")
    x = spec.initial if x is None else np.asarray(x, dtype=float)
    t = _check_geometric(t_grid)
    coeffs = expansion_coefficients(spec, f, x, n_terms, engine=engine,
                                    mesh_level=config.mesh_level,
                                    replicates=config.replicates,
                                    seed=config.seed, threads=config.threads)
    h = spec.hurst.value
    terms = [(k, 2.0 * k * h, est.value) for k, est in enumerate(coeffs)]

    solve_cfg = SolveConfig(mesh_level=config.mesh_level,
                            substeps_per_cell=config.substeps_per_cell,
                            blowup_norm=config.blowup_norm)
    mc_values = []
    for i, ti in enumerate(t):
        est = estimate_ptf(spec, f, float(ti), solve_cfg, config.replicates,
                           subseed(config.seed, 1000 + i),
                           threads=config.threads, solver=config.solver)
        mc_values.append(est)

    partial = np.array([sum(c * ti**e for _, e, c in terms) for ti in t])
    residuals = np.array([est.value for est in mc_values]) - partial
    ses = np.array([est.std_error for est in mc_values])

    above = np.abs(residuals) > 4.0 * ses
    if not above.any():
        slope, verdict = None, "remainder below MC resolution"
    elif above.sum() == 1:
        slope = None
        verdict = "one residual above noise; no slope fit possible"
    else:
        slope = float(np.polyfit(np.log(t[above]),
                                 np.log(np.abs(residuals[above])), 1)[0])
        verdict = f"fitted remainder slope {slope:.4f}"
    return ExpansionReport(hurst=h, x=x, f=f, terms=terms, t_grid=t,
                           mc_values=mc_values, residuals=residuals,
                           fitted_slope=slope, verdict=verdict)


# ---------------------------------------------------------------------------
# Measures and invariant residuals.


@dataclass(frozen=True)
class MeasureSpec:
    """A probability measure given one of three ways.

    kind "density_on_box": smooth density against Lebesgue measure on a
    product box, integrated by tensor Gauss-Legendre quadrature.
    kind "sampler": a seeded point generator, integrated by Monte Carlo.
    kind "quadrature": explicit nodes and weights — the natural encoding
    for singular measures (point masses, curves) that no box density can
    represent at quadrature accuracy.
    """

    kind: str
    dimension: int
    density: Expr | None = None
    box: tuple | None = None
    sampler: object = None
    nodes: np.ndarray | None = None
    weights: np.ndarray | None = None
    quad_order: int = DEFAULT_QUAD_ORDER

    def __post_init__(self):
        if self.dimension < 1:
            raise DomainError("measure dimension must be >= 1")
        if self.kind == "density_on_box":
            if self.density is None or self.box is None:
                raise DomainError("density_on_box needs a density and a box")
            if self.dimension > MAX_QUAD_DIMENSION:
                raise DomainError(
                    f"tensor quadrature supports dimension <= "
                    f"{MAX_QUAD_DIMENSION}"
                )
            box = tuple((float(a), float(b)) for a, b in self.box)
            if len(box) != self.dimension or any(b <= a for a, b in box):
                raise DomainError("box must be dimension-many (lo, hi) pairs")
            object.__setattr__(self, "box", box)
            pts, w = self._grid()
            rho = self.density.evaluate(pts)
            if np.any(rho < -1e-12):
                raise DomainError("density must be nonnegative on the box")
            mass = float(w @ rho)
            if abs(mass - 1.0) > _NORMALIZATION_TOL:
                raise DomainError(
                    f"density mass on the box is {mass:.8f}, not 1 within "
                    f"{_NORMALIZATION_TOL}"
                )
        elif self.kind == "sampler":
            if not callable(self.sampler):
                raise DomainError("sampler kind needs a callable sampler")
        elif self.kind == "quadrature":
            nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
            weights = np.asarray(self.weights, dtype=float)
            if nodes.shape[0] != weights.size:
                raise DomainError("quadrature nodes and weights disagree")
            if nodes.shape[1] != self.dimension:
                raise DomainError(
                    f"quadrature nodes must have dimension {self.dimension}"
                )
            if abs(weights.sum() - 1.0) > _NORMALIZATION_TOL:
                raise DomainError("quadrature weights must sum to 1")
            object.__setattr__(self, "nodes", nodes)
            object.__setattr__(self, "weights", weights)
        else:
            raise DomainError(
                f"kind must be density_on_box|sampler|quadrature, got "
                f"{self.kind!r}"
            )

    def _axis_rule(self, lo, hi, order):
        z, w = np.polynomial.legendre.leggauss(order)
        half = 0.5 * (hi - lo)
        return lo + half * (z + 1.0), half * w

    def _grid(self, order=None):
        order = self.quad_order if order is None else order
        axes = [self._axis_rule(lo, hi, order) for lo, hi in self.box]
        mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        w = axes[0][1]
        for a in axes[1:]:
            w = np.multiply.outer(w, a[1])
        return pts, w.ravel()

    def integrate(self, g, seed=None, n_samples=100_000):
        """(integral of g d mu, error estimate)."""
        if self.kind == "quadrature":
            vals = g.evaluate(self.nodes)
            return float(self.weights @ vals), 0.0
        if self.kind == "density_on_box":
            pts, w = self._grid()
            full = float(w @ (g.evaluate(pts) * self.density.evaluate(pts)))
            pts2, w2 = self._grid(order=max(8, self.quad_order // 2))
            half = float(w2 @ (g.evaluate(pts2) * self.density.evaluate(pts2)))
            return full, abs(full - half)
        if seed is None:
            raise DomainError("sampler measures need a seed to integrate")
        gen = stream(seed, TAG_MEASURE, 0)
        pts = np.asarray(self.sampler(gen, n_samples), dtype=float)
        if pts.shape != (n_samples, self.dimension):
            raise DomainError(
                f"sampler returned shape {pts.shape}, expected "
                f"({n_samples}, {self.dimension})"
            )
        vals = g.evaluate(pts)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def density_on_box(density, box, quad_order=DEFAULT_QUAD_ORDER):
    box = tuple(box)
    return MeasureSpec(kind="density_on_box", dimension=len(box),
                       density=density, box=box, quad_order=quad_order)


def lebesgue_box(box, quad_order=DEFAULT_QUAD_ORDER):
    """Normalized Lebesgue measure on a product box."""
    box = tuple((float(a), float(b)) for a, b in box)
    volume = math.prod(b - a for a, b in box)
    return density_on_box(const(1.0 / volume), box, quad_order=quad_order)

def point_mass(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return MeasureSpec(kind="quadrature", dimension=x.size, nodes=x[None, :],
                       weights=np.array([1.0]))


def uniform_circle(radius=1.0, n_nodes=256):
    """Uniform measure on the circle of given radius (trapezoid in angle).

    The trapezoid rule on a periodic smooth integrand is spectrally
    accurate, so smooth test functions integrate to near machine
    precision.
    """
    if radius <= 0.0 or n_nodes < 8:
        raise DomainError("need radius > 0 and at least 8 nodes")
    theta = 2.0 * math.pi * np.arange(n_nodes) / n_nodes
    nodes = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    weights = np.full(n_nodes, 1.0 / n_nodes)
    return MeasureSpec(kind="quadrature", dimension=2, nodes=nodes,
                       weights=weights)


def sampler_measure(sampler, dimension):
    return MeasureSpec(kind="sampler", dimension=dimension, sampler=sampler)


def _hermite_polynomials(x, degree):
    """He_0 .. He_degree in the variable expression x (probabilists')."""
    polys = [const(1.0)]
    if degree >= 1:
        polys.append(x)
    for k in range(1, degree):
        polys.append(sub(mul(x, polys[k]), mul(const(float(k)), polys[k - 1])))
    return polys


def default_test_functions(dimension, degree=4):
    """Products of Hermite polynomials under a Gaussian window.

    f_alpha(x) = prod_i He_{alpha_i}(x_i) * exp(-|x|^2 / 2) for multi-index
    degrees 1 <= |alpha| <= degree.  Smooth, rapidly decaying, and rich
    enough in derivatives to exercise the first two expansion operators.
    """
    if dimension < 1 or degree < 1:
        raise DomainError("need dimension >= 1 and degree >= 1")
    half = const(-0.5)
    sq = None
    for i in range(dimension):
        term = powr(var(i), 2)
        sq = term if sq is None else add(sq, term)
    window = call("exp", mul(half, sq))
    per_axis = [_hermite_polynomials(var(i), degree) for i in range(dimension)]
    out = []
    for alpha in product(range(degree + 1), repeat=dimension):
        if not 1 <= sum(alpha) <= degree:
            continue
        poly = None
        for i, a in enumerate(alpha):
            poly = per_axis[i][a] if poly is None else mul(poly, per_axis[i][a])
        out.append(mul(poly, window))
    return tuple(out)


@dataclass(frozen=True)
class InvariantResiduals:
    """residual[k-1][j] = integral of (Gamma_k f_j) d mu, with errors."""

    values: np.ndarray
    errors: np.ndarray
    k_range: tuple
    functions: tuple


def _check_tails(mu, functions):
    """Boundary check: test functions must be negligible where the box ends."""
    faces = []
    for axis, (lo, hi) in enumerate(mu.box):
        pts, _ = mu._grid(order=16)
        for edge in (lo, hi):
            face = pts.copy()
            face[:, axis] = edge
            faces.append(face)
    boundary = np.vstack(faces)
    rho = mu.density.evaluate(boundary)
    for g in functions:
        worst = float(np.max(np.abs(g.evaluate(boundary) * rho)))
        if worst > _TAIL_TOL:
            raise DomainError(
                f"test function {str(g)[:60]!r} carries mass {worst:.2e} at "
                f"the box boundary (limit {_TAIL_TOL}); enlarge the box"
            )


def invariant_residual(spec, mu, test_functions, k_max, engine="auto", *,
                       seed=None, n_samples=100_000, mesh_level=10,
                       replicates=100_000, threads=1):
    """Matrix of weak-form residuals ∫(Gamma_k f_j) d mu, k = 1 .. k_max.

    A measure invariant for the dynamics annihilates every row in the limit;
    the converse fails (finite dictionary), so this is a falsification tool,
    not a proof.  Gamma_k f_j is built symbolically once per (k, j) and
    integrated by the measure's native rule.
    """
    if k_max < 1:
        raise DomainError(f"k_max must be >= 1, got {k_max}")
    functions = tuple(test_functions)
    if not functions:
        raise DomainError("need at least one test function")
    if mu.dimension != spec.dimension:
        raise DomainError(
            f"measure dimension {mu.dimension} does not match state "
            f"dimension {spec.dimension}"
        )
    if mu.kind == "density_on_box":
        _check_tails(mu, functions)
    values = np.empty((k_max, len(functions)))
    errors = np.empty_like(values)
    for k in range(1, k_max + 1):
        gamma = build_gamma(k, spec.hurst, spec.fields, engine=engine,
                            mesh_level=mesh_level, replicates=replicates,
                            seed=None if seed is None else subseed(seed, k),
                            threads=threads)
        for j, g in enumerate(functions):
            expr = gamma.apply_symbolic(g)
            val, err = mu.integrate(expr, seed=seed, n_samples=n_samples)
            values[k - 1, j] = val
            errors[k - 1, j] = err
    return InvariantResiduals(values=values, errors=errors,
                              k_range=(1, k_max), functions=functions)
