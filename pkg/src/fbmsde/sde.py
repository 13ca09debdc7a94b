"""Pathwise solvers for dX = sum_i V_i(X) dB^i with fBm drivers.

Three routes:

* Wong-Zakai: the ODE driven by the piecewise-linear interpolation B^m,
  integrated cell by cell with classical RK4.  Needs H > 1/3 for the limit
  theory to apply (flagged, not enforced).
* Commutative flow: for commuting fields the solution is the composition
  e^{V_1 B_t^1} o .. o e^{V_d B_t^d} applied to x0, valid for every H; it
  depends on the driver only through its endpoint.
* Commutative semigroup: E f(X_t) = (exp(1/2 t^{2H} sum V_i^2) f)(x0),
  evaluated either as a truncated operator series (with an explicit
  last-term bound) or exactly as a Gaussian expectation over the flow.

Horizons t < 1 are realized by scaling the unit-interval driver by t^H
(exact in law by self-similarity) rather than by sub-sampling the grid, so
mesh resolution is constant in rescaled time.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (CapabilityError, DivergenceError, DomainError,
                     NumericalError, TruncationError)
from .fbm import FbmGrid, Hurst, as_hurst, sample_fbm_batch
from .moments import MomentEstimate
from .operators import VectorField, apply_field
from .rng import TAG_SDE, stream
from .symbolic import DEFAULT_NODE_CAP, Expr

MIN_REPLICATES = 100
MAX_DIVERGENT_FRACTION = 0.01


@dataclass(frozen=True)
class SdeSpec:
    """The equation: state dimension n, d driving coordinates, fields, H, x0."""

    dimension: int
    driver_dimension: int
    fields: tuple
    hurst: Hurst
    initial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "hurst", as_hurst(self.hurst))
        fields = tuple(self.fields)
        if self.dimension < 1 or self.driver_dimension < 1:
            raise DomainError("dimensions must be >= 1")
        if len(fields) != self.driver_dimension:
            raise DomainError(
                f"got {len(fields)} fields for driver dimension "
                f"{self.driver_dimension}"
            )
        for f in fields:
            if not isinstance(f, VectorField) or f.dimension != self.dimension:
                raise DomainError(
                    f"every field must be a VectorField on R^{self.dimension}"
                )
        object.__setattr__(self, "fields", fields)
        x0 = np.asarray(self.initial, dtype=float)
        if x0.shape != (self.dimension,):
            raise DomainError(
                f"initial point must have shape ({self.dimension},), got {x0.shape}"
            )
        object.__setattr__(self, "initial", x0)

    @classmethod
    def from_fields(cls, fields, hurst, initial):
        fields = tuple(fields)
        return cls(dimension=fields[0].dimension, driver_dimension=len(fields),
                   fields=fields, hurst=hurst, initial=initial)

    @property
    def wong_zakai_valid(self):
        """Whether the Wong-Zakai limit theory covers this H (H > 1/3)."""
        return self.hurst.value > 1.0 / 3.0

    @property
    def commutative_valid(self):
        """The composed-flow solution is defined for every H in (0, 1)."""
        return True


@dataclass(frozen=True)
class SolveConfig:
    mesh_level: int
    substeps_per_cell: int = 4
    integrator: str = "rk4"
    horizon: float = 1.0
    blowup_norm: float = 1e8

    def __post_init__(self):
        if self.substeps_per_cell < 1:
            raise DomainError("substeps_per_cell must be >= 1")
        if self.integrator != "rk4":
            raise DomainError(f"integrator must be 'rk4', got {self.integrator!r}")
        if not (0.0 < self.horizon <= 1.0):
            raise DomainError(f"horizon must lie in (0, 1], got {self.horizon}")
        if self.blowup_norm <= 0.0:
            raise DomainError("blowup_norm must be positive")


def _eval_field(field_, x):
    """Field values on a batch of states, shape (npaths, n); no finite check."""
    npaths = x.shape[0]
    memo = {}
    cols = [
        np.broadcast_to(np.asarray(c._eval(x, memo), dtype=float), (npaths,))
        for c in field_.components
    ]
    return np.stack(cols, axis=1)


def _drift(fields, x, slopes):
    out = np.zeros_like(x)
    for i, f_ in enumerate(fields):
        out += slopes[:, i:i + 1] * _eval_field(f_, x)
    return out


def _rk4_batch(fields, x0, increments, dt, substeps, blowup, record=False):
    """Integrate all paths cell by cell; freeze paths that blow up.

    Returns (final states, diverged mask, trajectory or None).  Frozen paths
    keep their last finite state so later field evaluations stay safe.
    """
    x = np.array(x0, dtype=float)
    npaths, _ = x.shape
    cells = increments.shape[1]
    diverged = np.zeros(npaths, dtype=bool)
    traj = None
    if record:
        traj = np.empty((npaths, cells + 1, x.shape[1]))
        traj[:, 0] = x
    h = dt / substeps
    with np.errstate(all="ignore"):
        for c in range(cells):
            slopes = increments[:, c, :] / dt
            for _ in range(substeps):
                k1 = _drift(fields, x, slopes)
                k2 = _drift(fields, x + 0.5 * h * k1, slopes)
                k3 = _drift(fields, x + 0.5 * h * k2, slopes)
                k4 = _drift(fields, x + h * k3, slopes)
                new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                bad = ~np.all(np.isfinite(new), axis=1)
                bad |= np.max(np.abs(new), axis=1) > blowup
                frozen = diverged | bad
                new[frozen] = x[frozen]
                diverged |= bad
                x = new
            if record:
                traj[:, c + 1] = x
    return x, diverged, traj


def solve_wong_zakai(spec, grid, cfg):
    """One pathwise solve against a sampled grid.

    Returns (times, states) with times = horizon * dyadic grid and states of
    shape (2^m + 1, n).  Deterministic given the grid.  Raises a divergence
    error carrying the last finite state if the trajectory blows up.
    """
    if not isinstance(grid, FbmGrid):
        raise DomainError("grid must be an FbmGrid")
    if grid.hurst.value != spec.hurst.value:
        raise DomainError(
            f"grid H={grid.hurst.value} does not match spec H={spec.hurst.value}"
        )
    if grid.dimension != spec.driver_dimension:
        raise DomainError(
            f"grid dimension {grid.dimension} does not match driver dimension "
            f"{spec.driver_dimension}"
        )
    if cfg.mesh_level != grid.mesh_level:
        raise DomainError(
            f"config mesh level {cfg.mesh_level} does not match grid level "
            f"{grid.mesh_level}"
        )
    t = cfg.horizon
    scale = t ** spec.hurst.value
    incr = scale * grid.increments()[None, :, :]
    dt = 2.0 ** (-grid.mesh_level)
    x, diverged, traj = _rk4_batch(spec.fields, spec.initial[None, :], incr, dt,
                                   cfg.substeps_per_cell, cfg.blowup_norm,
                                   record=True)
    if diverged[0]:
        err = DivergenceError(
            f"trajectory exceeded blowup norm {cfg.blowup_norm:g}; "
            f"last finite state {x[0]}"
        )
        err.last_state = x[0].copy()
        raise err
    return grid.times * t, traj[0]


def flow_exp(field_, s, x, ode_tol=1e-10):
    """e^{sV}(x): the field's flow at parameter s from x."""
    x = np.asarray(x, dtype=float)
    if s == 0.0:
        return x.copy()
    sol = solve_ivp(lambda _, y: field_.evaluate(y), (0.0, s), x,
                    rtol=ode_tol, atol=ode_tol, method="RK45")
    if not sol.success:
        raise NumericalError(f"flow integration failed: {sol.message}")
    return sol.y[:, -1]


def solve_commutative(spec, driver_values, ode_tol=1e-10):
    """Composition e^{V_1 b_1} o .. o e^{V_d b_d} applied to x0.

    Exact (up to ODE tolerance) for commuting fields at any H; the caller
    certifies commutativity (see is_commuting).  The rightmost flow acts
    first.
    """
    b = np.asarray(driver_values, dtype=float)
    if b.shape != (spec.driver_dimension,):
        raise DomainError(
            f"driver values must have shape ({spec.driver_dimension},), "
            f"got {b.shape}"
        )
    x = spec.initial
    for i in range(spec.driver_dimension - 1, -1, -1):
        x = flow_exp(spec.fields[i], b[i], x, ode_tol=ode_tol)
    return x


def _flow_values_d1(field_, bs, x0, ode_tol):
    """Flow of one field evaluated at many parameters with two dense solves."""
    rhs = lambda _, y: field_.evaluate(y)
    states = np.empty((bs.size, x0.size))
    order = np.argsort(bs, kind="stable")
    sorted_b = bs[order]
    out_sorted = np.empty_like(states)
    pos = sorted_b > 0.0
    neg = sorted_b < 0.0
    out_sorted[~pos & ~neg] = x0
    for mask, endpoint in ((pos, sorted_b.max() if pos.any() else 0.0),
                           (neg, sorted_b.min() if neg.any() else 0.0)):
        if not mask.any():
            continue
        t_eval = sorted_b[mask]
        if endpoint < 0.0:
            t_eval = t_eval[::-1]
        sol = solve_ivp(rhs, (0.0, endpoint), x0, t_eval=t_eval,
                        rtol=ode_tol, atol=ode_tol, method="RK45")
        if not sol.success:
            raise NumericalError(f"flow integration failed: {sol.message}")
        vals = sol.y.T
        if endpoint < 0.0:
            vals = vals[::-1]
        out_sorted[mask] = vals
    states[order] = out_sorted
    return states


def _ptf_chunk_size(replicates, mesh_level, d, n):
    # fixed function of the problem size only (never the thread count), so
    # chunked runs are bitwise reproducible under any parallel schedule
    cells = 1 << mesh_level
    bytes_per_path = 8.0 * (2.0 * (cells + 1) * d + 12.0 * n)
    size = int(2.4e8 / bytes_per_path)
    return max(256, min(replicates, size))


def estimate_ptf(spec, f, t, cfg, replicates, seed, *, threads=1,
                 solver="wong_zakai", ode_tol=1e-8):
    """Monte-Carlo estimate of P_t f(x0) = E f(X_t^{x0}).

    ``solver`` is "wong_zakai" (general fields; needs a SolveConfig) or
    "commutative" (commuting fields, any H; samples the driver endpoint and
    composes flows — exact in law, no mesh. cfg may be None).  Divergent
    replicates are excluded; more than 1% of them fails the run.  Results
    are independent of ``threads``.
    """
    if replicates < MIN_REPLICATES:
        raise DomainError(f"need at least {MIN_REPLICATES} replicates")
    if not (0.0 < t <= 1.0):
        raise DomainError(f"horizon must lie in (0, 1], got {t}")
    if not isinstance(f, Expr):
        raise DomainError("f must be a symbolic expression")
    if f.max_var > spec.dimension:
        raise DomainError(
            f"f references x{f.max_var} but the state space is R^{spec.dimension}"
        )
    h = spec.hurst
    if solver == "commutative":
        gen = stream(seed, TAG_SDE, 0)
        b = t ** h.value * gen.standard_normal((replicates, spec.driver_dimension))
        if spec.driver_dimension == 1:
            states = _flow_values_d1(spec.fields[0], b[:, 0], spec.initial,
                                     ode_tol)
        else:
            states = np.empty((replicates, spec.dimension))
            for r in range(replicates):
                states[r] = solve_commutative(spec, b[r], ode_tol=ode_tol)
        values = f.evaluate(states)
        n_good = replicates
        total = float(values.sum())
        total_sq = float((values * values).sum())
        method = "commutative_mc"
        mesh_level = None
    elif solver == "wong_zakai":
        if cfg is None:
            raise DomainError("the wong_zakai solver needs a SolveConfig")
        scale = t ** h.value
        dt = 2.0 ** (-cfg.mesh_level)
        chunk = _ptf_chunk_size(replicates, cfg.mesh_level, spec.driver_dimension,
                                spec.dimension)
        starts = list(range(0, replicates, chunk))

        def run_chunk(idx):
            size = min(chunk, replicates - starts[idx])
            paths = sample_fbm_batch(h, cfg.mesh_level, spec.driver_dimension,
                                     size, seed, chunk_index=idx)
            incr = np.diff(paths, axis=1)
            incr *= scale
            x0 = np.broadcast_to(spec.initial, (size, spec.dimension))
            endpoints, diverged, _ = _rk4_batch(spec.fields, x0, incr, dt,
                                                cfg.substeps_per_cell,
                                                cfg.blowup_norm)
            good = ~diverged
            vals = f.evaluate(endpoints[good]) if good.any() else np.empty(0)
            return (int(good.sum()), float(vals.sum()),
                    float((vals * vals).sum()), int(diverged.sum()))

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run_chunk, range(len(starts))))
        else:
            results = [run_chunk(i) for i in range(len(starts))]
        n_good = sum(r[0] for r in results)
        total = math.fsum(r[1] for r in results)
        total_sq = math.fsum(r[2] for r in results)
        n_div = sum(r[3] for r in results)
        if n_div > MAX_DIVERGENT_FRACTION * replicates:
            raise DivergenceError(
                f"{n_div} of {replicates} replicates diverged "
                f"(limit {MAX_DIVERGENT_FRACTION:.0%})"
            )
        method = "wong_zakai_mc"
        mesh_level = cfg.mesh_level
    else:
        raise DomainError(
            f"solver must be 'wong_zakai' or 'commutative', got {solver!r}"
        )
    mean = total / n_good
    var = max(0.0, (total_sq - n_good * mean * mean) / max(1, n_good - 1))
    return MomentEstimate(value=mean, std_error=math.sqrt(var / n_good),
                          method=method, hurst=h.value, mesh_level=mesh_level,
                          replicates=n_good)


# ---------------------------------------------------------------------------
# Commutative semigroup: exp(1/2 t^{2H} L) with L = sum_i V_i^2.


@dataclass(frozen=True)
class SemigroupValue:
    """Truncated series value with its last-term accuracy bound.

    ``last_term`` is the magnitude of the first term beyond the truncation
    point — the standard accuracy heuristic for an asymptotic series, and
    the quantity whose growth signals that summing further would hurt.
    """

    value: float
    last_term: float
    terms_used: int


def _generator_powers(spec, f, kmax, node_cap):
    """[f, Lf, L^2 f, ..] as expressions, L = sum_i V_i(V_i .)."""
    from .symbolic import add, distinct_size

    powers = [f]
    for _ in range(kmax):
        g = powers[-1]
        acc = None
        for field_ in spec.fields:
            term = apply_field(field_, apply_field(field_, g))
            acc = term if acc is None else add(acc, term)
        grown = distinct_size(acc)
        if grown > node_cap:
            raise TruncationError(
                f"L^{len(powers)} f grew to {grown} distinct nodes "
                f"(cap {node_cap}); lower kmax"
            )
        powers.append(acc)
    return powers


def semigroup_series_terms(spec, f, t, x=None, kmax=12,
                           node_cap=DEFAULT_NODE_CAP):
    """Terms (1/2 t^{2H})^k (L^k f)(x) / k! for k = 0 .. kmax."""
    if t < 0.0:
        raise DomainError(f"t must be >= 0, got {t}")
    x = spec.initial if x is None else np.asarray(x, dtype=float)
    powers = _generator_powers(spec, f, kmax, node_cap)
    s = 0.5 * t ** (2.0 * spec.hurst.value)
    terms = np.empty(kmax + 1)
    for k, g in enumerate(powers):
        terms[k] = s**k / math.factorial(k) * g.evaluate(x)
    return terms


def optimal_truncation_k(spec, f, t, x=None, cap=8,
                         node_cap=DEFAULT_NODE_CAP):
    """Largest K <= cap with strictly decreasing term magnitudes.

    The operator series is asymptotic for generic smooth coefficients, so
    the best attainable accuracy is reached by stopping at the smallest
    term; summing further makes things worse.
    """
    terms = semigroup_series_terms(spec, f, t, x, kmax=cap, node_cap=node_cap)
    mags = np.abs(terms)
    k = 1
    while k + 1 <= cap and mags[k + 1] < mags[k]:
        k += 1
    return k


def semigroup_commutative(spec, f, t, x=None, truncation_k=8,
                          node_cap=DEFAULT_NODE_CAP):
    """(exp(1/2 t^{2H} L) f)(x) truncated after k = truncation_k terms.

    Returns the partial sum together with the magnitude of the first
    omitted term as the reported accuracy bound.  Raises a truncation
    error when the included term magnitudes are non-decreasing at the cap,
    i.e. when the series gives no sign of converging at this (t, x); pick
    the cap with :func:`optimal_truncation_k` in that regime.
    """
    K = int(truncation_k)
    if K < 1:
        raise DomainError(f"truncation_k must be >= 1, got {truncation_k}")
    terms = semigroup_series_terms(spec, f, t, x, kmax=K + 1,
                                   node_cap=node_cap)
    if K >= 2 and abs(terms[K]) >= abs(terms[K - 1]) and terms[K] != 0.0:
        raise TruncationError(
            f"series terms non-decreasing at cap K={K}: "
            f"|term[{K - 1}]|={abs(terms[K - 1]):.3e} <= "
            f"|term[{K}]|={abs(terms[K]):.3e}; lower truncation_k "
            f"(see optimal_truncation_k) or shrink t"
        )
    return SemigroupValue(value=float(np.sum(terms[:K + 1])),
                          last_term=float(abs(terms[K + 1])),
                          terms_used=K)


def commutative_expectation(spec, f, t, x=None, quad_order=96, ode_tol=1e-10):
    """E f(X_t^x) for d=1 by Gauss-Hermite quadrature over the flow.

    The commutative solution depends on the driver only through its endpoint
    B_t ~ N(0, t^{2H}), so the expectation is a one-dimensional Gaussian
    integral — evaluated here to quadrature accuracy, with no series
    truncation and no sampling error.
    """
    if spec.driver_dimension != 1:
        raise CapabilityError(
            "the quadrature expectation is implemented for d=1 drivers"
        )
    x = spec.initial if x is None else np.asarray(x, dtype=float)
    if t == 0.0:
        return float(f.evaluate(x))
    nodes, weights = np.polynomial.hermite_e.hermegauss(quad_order)
    weights = weights / math.sqrt(2.0 * math.pi)
    states = _flow_values_d1(spec.fields[0], t ** spec.hurst.value * nodes, x,
                             ode_tol)
    return float(weights @ f.evaluate(states))


def feynman_kac_residual(spec, f, t, x=None, *, include_drift=True,
                         dt_rel=1e-3, dx=1e-3, quad_order=96, ode_tol=1e-11):
    """Finite-difference residual of the commutative Feynman-Kac PDE.

    phi(t, x) = E f(X_t^x) satisfies d phi/dt = H t^{2H-1} (V^2 phi)(x) with
    V = sigma(x) d/dx, i.e. V^2 = sigma^2 d^2/dx^2 + sigma sigma' d/dx.
    ``include_drift=False`` drops the first-order term, leaving the pure
    sigma^2 d^2/dx^2 operator (the two agree wherever sigma'(x) = 0).
    phi is evaluated by Gaussian quadrature over the flow, so the residual
    measures the PDE itself, not series truncation.
    """
    if spec.dimension != 1 or spec.driver_dimension != 1:
        raise CapabilityError("the PDE residual check is for n = d = 1")
    x = spec.initial if x is None else np.asarray(x, dtype=float)
    if t <= 0.0:
        raise DomainError("the PDE holds for t > 0")
    h = spec.hurst.value
    dt = dt_rel * t

    def phi(tt, xx):
        return commutative_expectation(spec, f, tt, np.array([xx]),
                                       quad_order=quad_order, ode_tol=ode_tol)

    x0 = float(x[0])
    dphi_dt = (phi(t + dt, x0) - phi(t - dt, x0)) / (2.0 * dt)
    p_m, p_0, p_p = phi(t, x0 - dx), phi(t, x0), phi(t, x0 + dx)
    d2phi = (p_p - 2.0 * p_0 + p_m) / (dx * dx)
    dphi = (p_p - p_m) / (2.0 * dx)
    sigma_expr = spec.fields[0].components[0]
    sigma = sigma_expr.evaluate(x)
    rhs = sigma * sigma * d2phi
    if include_drift:
        rhs += sigma * sigma_expr.diff(0).evaluate(x) * dphi
    return float(dphi_dt - h * t ** (2.0 * h - 1.0) * rhs)


# ---------------------------------------------------------------------------
# CSV output.


def write_trajectory_csv(times, states, target):
    """Rows ``t, x1, .., xn`` at 17 significant digits."""
    if hasattr(target, "write"):
        _write_trajectory(times, states, target)
        return
    with open(target, "w", newline="") as fh:
        _write_trajectory(times, states, fh)


def _write_trajectory(times, states, fh: io.TextIOBase):
    states = np.asarray(states)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t"] + [f"x{j + 1}" for j in range(states.shape[1])])
    for t, row in zip(times, states):
        writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def write_estimate_csv(rows, target):
    """Rows ``t, f, mean, std_error, method, mesh_level, replicates``.

    ``rows`` is an iterable of (t, f, MomentEstimate) with f an expression
    or string.
    """
    if hasattr(target, "write"):
        _write_estimates(rows, target)
        return
    with open(target, "w", newline="") as fh:
        _write_estimates(rows, fh)


def _write_estimates(rows, fh: io.TextIOBase):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "f", "mean", "std_error", "method", "mesh_level",
                     "replicates"])
    for t, f, est in rows:
        writer.writerow([
            f"{t:.17g}", str(f), f"{est.value:.17g}", f"{est.std_error:.17g}",
            est.method, "" if est.mesh_level is None else est.mesh_level,
            "" if est.replicates is None else est.replicates,
        ])
