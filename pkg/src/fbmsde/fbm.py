"""Exact sampling of fractional Brownian motion on dyadic grids.

The driving noise throughout the package is a d-dimensional fractional
Brownian motion (fBm) with Hurst index H on [0, 1]: independent centered
Gaussian coordinates with covariance

    R(s, t) = (s^{2H} + t^{2H} - |t - s|^{2H}) / 2.

Paths are sampled exactly at the dyadic nodes i * 2^{-m} by factoring the
increment covariance (Cholesky, the reference method) or by circulant
embedding of the stationary increment sequence (the fast method for fine
meshes).  Between nodes the path is the linear interpolation B^m used by
the interpolation-exact moment engine and the Wong-Zakai solver.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import CapabilityError, DomainError, NumericalError
from .rng import TAG_PATH, TAG_REFINE, stream

__all__ = [
    "Hurst",
    "as_hurst",
    "CovarianceKernel",
    "FbmGrid",
    "sample_fbm",
    "sample_fbm_batch",
    "refine_brownian",
    "write_grid_csv",
]

# Mesh levels above this would allocate > ~0.5 GiB per path batch; refuse.
MAX_MESH_LEVEL = 20

# Auto method switches from Cholesky to circulant embedding at this level.
_CIRCULANT_AUTO_LEVEL = 12


@dataclass(frozen=True)
class Hurst:
    """A validated Hurst index H in (0, 1)."""

    value: float

    def __post_init__(self) -> None:
        v = float(self.value)
        if not (0.0 < v < 1.0) or not math.isfinite(v):
            raise DomainError(f"Hurst index must lie in (0, 1), got {self.value!r}")
        object.__setattr__(self, "value", v)

    @property
    def young_regime(self) -> bool:
        """Pathwise Young integration available (H > 1/2)."""
        return self.value > 0.5

    @property
    def rough_regime(self) -> bool:
        """Level-2 rough-path regime (1/3 < H <= 1/2)."""
        return 1.0 / 3.0 < self.value <= 0.5

    @property
    def analytic_gamma2(self) -> bool:
        """Closed-form fourth-order expansion coefficients available (H > 1/4)."""
        return self.value > 0.25

    def __float__(self) -> float:
        return self.value


def as_hurst(h: Hurst | float) -> Hurst:
    return h if isinstance(h, Hurst) else Hurst(float(h))


@dataclass(frozen=True)
class CovarianceKernel:
    """The fBm covariance R and derived increment covariances."""

    hurst: Hurst

    def covariance(self, s, t):
        """R(s, t); accepts scalars or broadcastable arrays on [0, 1]."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(s < 0) or np.any(s > 1) or np.any(t < 0) or np.any(t > 1):
            raise DomainError("covariance arguments must lie in [0, 1]")
        two_h = 2.0 * self.hurst.value
        out = 0.5 * (np.abs(s) ** two_h + np.abs(t) ** two_h - np.abs(t - s) ** two_h)
        return out if out.ndim else float(out)

    def increment_covariance(self, a, b, c, e):
        """E[(B_b - B_a)(B_e - B_c)] via the four-point difference of R."""
        r = self.covariance
        out = (
            np.asarray(r(b, e)) - np.asarray(r(b, c))
            - np.asarray(r(a, e)) + np.asarray(r(a, c))
        )
        return out if out.ndim else float(out)

    def increment_sequence(self, mesh_level: int) -> np.ndarray:
        """kappa[g] = E[(B_{t_{i+1}} - B_{t_i})(B_{t_{i+g+1}} - B_{t_{i+g}})].

        Stationarity of fBm increments makes this depend on the gap g only.
        Returned for g = 0 .. 2^mesh_level - 1.
        """
        n = _cells(mesh_level)
        g = np.arange(n, dtype=float)
        two_h = 2.0 * self.hurst.value
        unit = 0.5 * ((g + 1.0) ** two_h - 2.0 * g**two_h + np.abs(g - 1.0) ** two_h)
        return (2.0 ** (-mesh_level * two_h)) * unit

    def grid_matrix(self, mesh_level: int) -> np.ndarray:
        """Covariance matrix of the 2^m increments (Toeplitz, exact)."""
        kappa = self.increment_sequence(mesh_level)
        idx = np.arange(kappa.size)
        return kappa[np.abs(idx[:, None] - idx[None, :])]


def _cells(mesh_level: int) -> int:
    if not isinstance(mesh_level, (int, np.integer)) or mesh_level < 0:
        raise DomainError(f"mesh_level must be a nonnegative integer, got {mesh_level!r}")
    if mesh_level > MAX_MESH_LEVEL:
        raise DomainError(f"mesh_level {mesh_level} exceeds cap {MAX_MESH_LEVEL}")
    return 1 << int(mesh_level)


@dataclass
class FbmGrid:
    """An fBm draw on the dyadic grid t_i = i * 2^{-m}, i = 0 .. 2^m.

    ``values`` has shape (2^m + 1, d) with values[0] == 0.  The associated
    continuous path is the linear interpolation between nodes.
    """

    hurst: Hurst
    mesh_level: int
    values: np.ndarray
    times: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        n = _cells(self.mesh_level)
        if self.values.ndim != 2 or self.values.shape[0] != n + 1:
            raise DomainError(
                f"values must have shape (2^m + 1, d) = ({n + 1}, d), "
                f"got {self.values.shape}"
            )
        if not np.all(self.values[0] == 0.0):
            raise DomainError("fBm paths start at 0: values[0] must be zero")
        self.times = np.linspace(0.0, 1.0, n + 1)

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def increments(self) -> np.ndarray:
        """Cell increments, shape (2^m, d)."""
        return np.diff(self.values, axis=0)

    def interpolate(self, t) -> np.ndarray:
        """Value of the linear interpolation B^m at t (scalar or array)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise DomainError("interpolation time must lie in [0, 1]")
        out = np.stack(
            [np.interp(t, self.times, self.values[:, j]) for j in range(self.dimension)],
            axis=-1,
        )
        return out


@lru_cache(maxsize=8)
def _circulant_eigenvalues_cached(hurst_value: float, n: int) -> np.ndarray:
    g = np.arange(n + 1, dtype=float)
    two_h = 2.0 * hurst_value
    gamma = 0.5 * ((g + 1.0) ** two_h - 2.0 * g**two_h + np.abs(g - 1.0) ** two_h)
    row = np.concatenate([gamma, gamma[-2:0:-1]])  # length 2n
    lam = np.fft.fft(row).real
    floor = -1e-8 * lam.max()
    if lam.min() < floor:
        raise NumericalError(
            f"circulant embedding is not nonnegative definite for H={hurst_value}, "
            f"n={n} (min eigenvalue {lam.min():.3e}); use method='cholesky'"
        )
    return np.clip(lam, 0.0, None)


def _circulant_eigenvalues(hurst: Hurst, n: int) -> np.ndarray:
    return _circulant_eigenvalues_cached(hurst.value, n)


@lru_cache(maxsize=4)
def _fgn_cholesky_cached(hurst_value: float, n: int) -> np.ndarray:
    """Lower Cholesky factor of the unit-spacing fGn covariance.

    Cached because chunked MC re-enters with the same (H, n) many times and
    the factorization dwarfs the per-chunk matmul.
    """
    g = np.arange(n, dtype=float)
    two_h = 2.0 * hurst_value
    gamma = 0.5 * ((g + 1.0) ** two_h - 2.0 * g**two_h + np.abs(g - 1.0) ** two_h)
    idx = np.arange(n)
    cov = gamma[np.abs(idx[:, None] - idx[None, :])]
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - jitter fallback
        jitter = 1e-12 * np.trace(cov) / n
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"increment covariance factorization failed for "
                f"H={hurst_value}, m at 2^m={n}"
            ) from exc


def _sample_unit_fgn(gen: np.random.Generator, hurst: Hurst, mesh_level: int,
                     count: int, method: str) -> np.ndarray:
    """Unit-spacing fGn draws, shape (n, count), exact in law."""
    n = _cells(mesh_level)
    if method == "cholesky":
        chol = _fgn_cholesky_cached(hurst.value, n)
        z = gen.standard_normal((n, count))
        return chol @ z
    if method == "circulant":
        lam = _circulant_eigenvalues(hurst, n)
        m2 = lam.size  # 2n
        z = gen.standard_normal((count, m2)) + 1j * gen.standard_normal((count, m2))
        spectrum = np.sqrt(lam / m2)[None, :] * z
        draw = np.fft.fft(spectrum, axis=1).real[:, :n]
        return draw.T.copy()
    raise DomainError(f"unknown sampling method {method!r}")


def _resolve_method(method: str, mesh_level: int) -> str:
    if method == "auto":
        return "circulant" if mesh_level >= _CIRCULANT_AUTO_LEVEL else "cholesky"
    if method not in ("cholesky", "circulant"):
        raise DomainError(f"method must be auto|cholesky|circulant, got {method!r}")
    return method


def sample_fbm(hurst: Hurst | float, mesh_level: int, dimension: int, seed: int,
               method: str = "auto") -> FbmGrid:
    """Draw one d-dimensional fBm path on the level-m dyadic grid.

    Repeated calls with the same arguments return bitwise-identical grids.
    Coordinates use independent named substreams of ``seed``.
    """
    hurst = as_hurst(hurst)
    if dimension < 1:
        raise DomainError(f"dimension must be >= 1, got {dimension}")
    method = _resolve_method(method, mesh_level)
    n = _cells(mesh_level)
    scale = 2.0 ** (-mesh_level * hurst.value)
    values = np.zeros((n + 1, dimension))
    for j in range(dimension):
        gen = stream(seed, TAG_PATH, 0, j)
        fgn = _sample_unit_fgn(gen, hurst, mesh_level, 1, method)[:, 0]
        values[1:, j] = scale * np.cumsum(fgn)
    return FbmGrid(hurst=hurst, mesh_level=mesh_level, values=values)


def sample_fbm_batch(hurst: Hurst | float, mesh_level: int, dimension: int,
                     n_paths: int, seed: int, chunk_index: int = 0,
                     method: str = "auto") -> np.ndarray:
    """Draw ``n_paths`` independent paths at once; shape (n_paths, 2^m + 1, d).

    Used by the Monte-Carlo engines.  The draw for a given
    (seed, chunk_index) pair is independent of every other chunk index, so
    chunked runs are reproducible regardless of scheduling.
    """
    hurst = as_hurst(hurst)
    if dimension < 1 or n_paths < 1:
        raise DomainError("dimension and n_paths must be >= 1")
    method = _resolve_method(method, mesh_level)
    n = _cells(mesh_level)
    gen = stream(seed, TAG_PATH, 1 + chunk_index)
    fgn = _sample_unit_fgn(gen, hurst, mesh_level, n_paths * dimension, method)
    scale = 2.0 ** (-mesh_level * hurst.value)
    incr = scale * fgn.reshape(n, n_paths, dimension)
    out = np.zeros((n_paths, n + 1, dimension))
    np.cumsum(incr, axis=0, out=incr)
    out[:, 1:, :] = np.transpose(incr, (1, 0, 2))
    return out


def refine_brownian(grid: FbmGrid, seed: int) -> FbmGrid:
    """One dyadic midpoint refinement of a Brownian (H = 1/2) grid.

    Conditionally on the level-m values, Brownian midpoints are independent
    N(midpoint mean, 2^{-m}/4); this produces a level-(m+1) grid consistent
    with the same underlying Brownian motion.  The midpoint stream is named
    by the target level, so iterated refinement of a given draw is itself
    reproducible.
    """
    if grid.hurst.value != 0.5:
        raise CapabilityError("midpoint refinement is implemented for H = 1/2 only")
    if grid.mesh_level + 1 > MAX_MESH_LEVEL:
        raise DomainError("refinement would exceed the mesh level cap")
    n = _cells(grid.mesh_level)
    gen = stream(seed, TAG_REFINE, grid.mesh_level + 1)
    means = 0.5 * (grid.values[:-1] + grid.values[1:])
    std = math.sqrt(2.0 ** (-grid.mesh_level) / 4.0)
    mids = means + std * gen.standard_normal(means.shape)
    values = np.zeros((2 * n + 1, grid.dimension))
    values[0::2] = grid.values
    values[1::2] = mids
    return FbmGrid(hurst=grid.hurst, mesh_level=grid.mesh_level + 1, values=values)


def write_grid_csv(grid: FbmGrid, target) -> None:
    """Write ``t, b1, .., bd`` rows with 17 significant digits.

    ``target`` is a path or a text file object.  Output bytes depend only
    on the grid contents.
    """
    if hasattr(target, "write"):
        _write_grid_rows(grid, target)
        return
    with open(target, "w", newline="") as fh:
        _write_grid_rows(grid, fh)


def _write_grid_rows(grid: FbmGrid, fh: io.TextIOBase) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t"] + [f"b{j + 1}" for j in range(grid.dimension)])
    for t, row in zip(grid.times, grid.values):
        writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
