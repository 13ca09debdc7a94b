"""Expected iterated integrals of fractional Brownian motion.

Four cross-validating routes compute E[ integral over the ordered simplex
of dB^{i1} ... dB^{iq} ] on [0, 1]:

* closed forms for words of length 2 and 4 (valid for H > 1/4),
* a Wick route for H > 1/2: pair the word by Isserlis, then integrate
  prod |t_b - t_a|^{2H-2} over the simplex by adaptive quadrature,
* an interpolation-exact route: the same expectation for the dyadic
  linear interpolation B^m, evaluated as an exact finite sum (any H),
* plain Monte Carlo over sampled paths and their exact signatures.

Moments over [0, t] follow by scaling: each letter contributes t^H.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import betaln

from .errors import CapabilityError, DomainError, NumericalError, ResourceError
from .fbm import CovarianceKernel, Hurst, as_hurst, sample_fbm_batch
from .rng import TAG_SIMPLEX, stream

__all__ = [
    "MomentEstimate",
    "PairingCoefficients",
    "PAIR_ADJACENT",
    "PAIR_INTERLEAVED",
    "PAIR_NESTED",
    "beta_fn",
    "beta_fn_quadrature",
    "wick_pairings",
    "gaussian_product_moment",
    "gamma2_coefficients",
    "expected_iterated_closed_form",
    "pair_integral_closed_form",
    "simplex_pair_integral",
    "mc_simplex_pair_integral",
    "expected_iterated_wick",
    "interpolated_pair_sum",
    "interpolated_pair_terms",
    "nested_same_cell_term",
    "expected_iterated_interpolated",
    "mc_expected_iterated",
    "mc_expected_iterated_many",
    "mc_weighted_word_sum",
    "scale_moment",
]

ANALYTIC_WORD_CAP = 6
MC_WORD_CAP = 8
PAIRING_CAP = 4  # matchings of up to 8 points: 105 terms

# The three perfect matchings of four ordered points.
PAIR_ADJACENT = ((1, 2), (3, 4))
PAIR_INTERLEAVED = ((1, 3), (2, 4))
PAIR_NESTED = ((1, 4), (2, 3))


@dataclass(frozen=True)
class MomentEstimate:
    """A moment value with provenance.

    ``std_error`` is zero exactly for deterministic methods;
    ``error_bound`` carries the (heuristic) absolute error budget of
    deterministic quadrature routes.
    """

    value: float
    std_error: float
    method: str
    hurst: float
    word: tuple | None = None
    mesh_level: int | None = None
    replicates: int | None = None
    error_bound: float = 0.0


@dataclass(frozen=True)
class PairingCoefficients:
    """Fourth-order expansion coefficients by contraction pattern.

    For a word (i, j, k, l) the expected iterated integral over [0, 1] is

        delta_ij delta_kl * a_leading_diag
      + delta_ik delta_jl * a_interleaved
      + delta_il delta_jk * a_nested,

    i.e. the patterns multiply the operator families sum V_i^2 V_j^2,
    sum (V_i V_j)^2 and sum V_i V_j^2 V_i respectively.  The three always
    sum to 1/8, matching E[B_1^4]/4! in one dimension.
    """

    hurst: float
    a_leading_diag: float
    a_interleaved: float
    a_nested: float

    def as_tuple(self) -> tuple:
        return (self.a_leading_diag, self.a_interleaved, self.a_nested)


def _validate_word(word, cap: int) -> tuple:
    word = tuple(int(c) for c in word)
    if len(word) == 0:
        raise DomainError("word must be non-empty")
    if len(word) > cap:
        raise ResourceError(f"word length {len(word)} exceeds cap {cap}")
    if any(c < 1 for c in word):
        raise DomainError(f"word letters are 1-based coordinates, got {word}")
    return word


def _validate_pairing(pairing) -> tuple:
    pairs = tuple(tuple(sorted((int(a), int(b)))) for a, b in pairing)
    if len(pairs) == 0 or len(pairs) > PAIRING_CAP:
        raise ResourceError(f"pairings cover 1..{2 * PAIRING_CAP} points at most")
    flat = sorted(p for pair in pairs for p in pair)
    if flat != list(range(1, 2 * len(pairs) + 1)):
        raise DomainError(f"not a perfect matching of 1..{2 * len(pairs)}: {pairing}")
    return tuple(sorted(pairs))


def beta_fn(a: float, b: float) -> float:
    """Euler beta via log-gamma; relative accuracy ~1e-15."""
    if a <= 0 or b <= 0:
        raise DomainError(f"beta_fn requires positive arguments, got ({a}, {b})")
    return float(math.exp(betaln(a, b)))


def beta_fn_quadrature(a: float, b: float) -> float:
    """Beta by adaptive quadrature with endpoint substitutions (cross-check)."""
    if a <= 0 or b <= 0:
        raise DomainError(f"beta_fn requires positive arguments, got ({a}, {b})")
    # left half: u = x^a maps x^{a-1} dx -> du / a
    left, _ = integrate.quad(
        lambda u: (1.0 - u ** (1.0 / a)) ** (b - 1.0) / a, 0.0, 0.5**a,
        epsabs=1e-13, epsrel=1e-13, limit=200,
    )
    right, _ = integrate.quad(
        lambda u: (1.0 - u ** (1.0 / b)) ** (a - 1.0) / b, 0.0, 0.5**b,
        epsabs=1e-13, epsrel=1e-13, limit=200,
    )
    return left + right


def wick_pairings(k: int) -> list:
    """All perfect matchings of {1, .., 2k}; (2k-1)!! of them."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if k > PAIRING_CAP:
        raise ResourceError(f"k = {k} exceeds the pairing cap {PAIRING_CAP}")

    def rec(points):
        if not points:
            yield ()
            return
        first, rest = points[0], points[1:]
        for i, other in enumerate(rest):
            for tail in rec(rest[:i] + rest[i + 1:]):
                yield ((first, other),) + tail

    return [m for m in rec(tuple(range(1, 2 * k + 1)))]


def gaussian_product_moment(cov) -> object:
    """E[G_1 ... G_{2k}] for centered jointly Gaussian G with cov[i][j].

    Isserlis: the sum over perfect matchings of products of pair
    covariances.  Exact for exact (e.g. Fraction) inputs; the entries are
    never coerced to float.
    """
    rows = [list(r) for r in cov]
    size = len(rows)
    if any(len(r) != size for r in rows):
        raise DomainError("covariance must be square")
    for i in range(size):
        for j in range(i):
            a, b = rows[i][j], rows[j][i]
            if isinstance(a, float) or isinstance(b, float):
                scale = max(abs(a), abs(b), 1.0)
                if abs(a - b) > 1e-12 * scale:
                    raise DomainError(f"covariance is not symmetric at ({i},{j})")
            elif a != b:
                raise DomainError(f"covariance is not symmetric at ({i},{j})")
    if size % 2 == 1:
        return 0 * rows[0][0]
    if size == 0:
        return 1.0
    k = size // 2
    total = None
    for matching in wick_pairings(k):
        term = None
        for a, b in matching:
            c = rows[a - 1][b - 1]
            term = c if term is None else term * c
        total = term if total is None else total + term
    return total


def gamma2_coefficients(hurst: Hurst | float) -> PairingCoefficients:
    """Closed-form fourth-order coefficients; valid for H > 1/4.

    At H = 1/2 the triple is (1/8, 0, 0); the three entries sum to 1/8
    identically in H.
    """
    h = as_hurst(hurst)
    if not h.analytic_gamma2:
        raise DomainError(
            f"closed-form fourth-order coefficients need H > 1/4, got {h.value}"
        )
    H = h.value
    b = beta_fn(2 * H, 2 * H)
    a1 = 0.25 * H * b
    a2 = H / (4.0 * (4.0 * H - 1.0)) - 0.25 * H * b
    a3 = (2.0 * H - 1.0) / (8.0 * (4.0 * H - 1.0))
    return PairingCoefficients(
        hurst=H, a_leading_diag=a1, a_interleaved=a2, a_nested=a3
    )


def _fourth_order_value(word: tuple, triple: tuple) -> float:
    i, j, k, l = word
    a1, a2, a3 = triple
    return (
        (a1 if i == j and k == l else 0.0)
        + (a2 if i == k and j == l else 0.0)
        + (a3 if i == l and j == k else 0.0)
    )


def expected_iterated_closed_form(hurst: Hurst | float, word) -> MomentEstimate:
    """Closed-form expected iterated integral; |word| in {2, 4}, H > 1/4."""
    h = as_hurst(hurst)
    word = _validate_word(word, ANALYTIC_WORD_CAP)
    if not h.analytic_gamma2:
        raise DomainError(f"closed forms need H > 1/4, got {h.value}")
    if len(word) == 2:
        value = 0.5 if word[0] == word[1] else 0.0
    elif len(word) == 4:
        value = _fourth_order_value(word, gamma2_coefficients(h).as_tuple())
    else:
        raise CapabilityError(
            f"closed forms cover word lengths 2 and 4, got length "
            f"{len(word)}; the mc engine covers longer words"
        )
    return MomentEstimate(value=value, std_error=0.0, method="closed",
                          hurst=h.value, word=word)


# ---------------------------------------------------------------------------
# simplex quadrature over pair-product kernels (H > 1/2)
# ---------------------------------------------------------------------------


def pair_integral_closed_form(hurst: Hurst | float, pairing) -> float:
    """Catalogued closed forms of the simplex pair integrals (H > 1/2).

    Known cases: the single pair on two points and the three matchings of
    four points.  Everything else raises, keeping this route independent
    of the generic quadrature.
    """
    h = as_hurst(hurst)
    if not h.young_regime:
        raise DomainError(f"pair integrals require H > 1/2, got {h.value}")
    pairing = _validate_pairing(pairing)
    H = h.value
    if pairing == ((1, 2),):
        return 1.0 / (2.0 * H * (2.0 * H - 1.0))
    if pairing == PAIR_ADJACENT:
        return beta_fn(2 * H, 2 * H) / (4.0 * H * (2.0 * H - 1.0) ** 2)
    if pairing == PAIR_NESTED:
        return 1.0 / (8.0 * H * H * (2.0 * H - 1.0) * (4.0 * H - 1.0))
    if pairing == PAIR_INTERLEAVED:
        return (
            1.0 / (4.0 * H * (4.0 * H - 1.0) * (2.0 * H - 1.0) ** 2)
            - beta_fn(2 * H, 2 * H) / (4.0 * H * (2.0 * H - 1.0) ** 2)
        )
    raise DomainError(f"no catalogued closed form for pairing {pairing}")


def simplex_pair_integral(hurst: Hurst | float, pairing, tol: float = 1e-8) -> float:
    """integral over 0 < t_1 < .. < t_{2k} < 1 of prod |t_b - t_a|^{2H-2}.

    Nested adaptive quadrature from the outermost variable inwards.  The
    singular factor attached to a level is removed by the substitution
    u = (t_b - t)^{2H-1} whenever its partner is the integration upper
    limit; the innermost level is integrated in closed form.  k <= 3.
    """
    h = as_hurst(hurst)
    if not h.young_regime:
        raise DomainError(f"simplex pair integrals require H > 1/2, got {h.value}")
    pairing = _validate_pairing(pairing)
    k = len(pairing)
    if k > 3:
        raise ResourceError("nested quadrature is limited to k <= 3 (six variables)")
    size = 2 * k
    alpha = 2.0 * h.value - 1.0
    partner_above = {a: b for a, b in pairing}  # lower index -> upper index

    # per-level absolute tolerances, tightening inwards
    level_tol = {}
    t = 0.5 * tol
    for j in range(size, 1, -1):
        level_tol[j] = t
        t *= 0.2

    def level(j: int, upper: float, ts: dict) -> float:
        b = partner_above.get(j)
        if j == 1:
            if b is None:
                return upper
            tb = ts[b]
            return (tb**alpha - (tb - upper) ** alpha) / alpha
        if b is None:
            f = lambda tj: level(j - 1, tj, {**ts, j: tj})
            val, err = integrate.quad(f, 0.0, upper, epsabs=level_tol[j],
                                      epsrel=1e-10, limit=200)
        elif b == j + 1:
            # factor (upper - t)^{alpha - 1}: substitute u = (upper - t)^alpha
            def g(u):
                tj = upper - u ** (1.0 / alpha)
                return level(j - 1, tj, {**ts, j: tj})

            val, err = integrate.quad(g, 0.0, upper**alpha, epsabs=level_tol[j] * alpha,
                                      epsrel=1e-10, limit=200)
            val /= alpha
        else:
            tb = ts[b]

            def f(tj):
                return (tb - tj) ** (alpha - 1.0) * level(j - 1, tj, {**ts, j: tj})

            val, err = integrate.quad(f, 0.0, upper, epsabs=level_tol[j],
                                      epsrel=1e-10, limit=200)
        if not math.isfinite(val):
            raise NumericalError(f"quadrature diverged at level {j} (H={h.value})")
        return val

    return level(size, 1.0, {size + 1: 1.0})


def _mc_simplex_chunk(gen: np.random.Generator, n: int, size: int,
                      partner_above: dict, alpha: float) -> tuple:
    ts = {}
    t_next = np.ones(n)
    weight = np.ones(n)
    for j in range(size, 0, -1):
        b = partner_above.get(j)
        u = gen.random(n)
        if b is None:
            tj = t_next * u
            weight *= t_next
        else:
            tb = ts[b]
            z = (tb**alpha - (tb - t_next) ** alpha) / alpha
            inner = np.clip(tb**alpha - u * alpha * z, 0.0, None)
            tj = tb - inner ** (1.0 / alpha)
            weight *= z
        ts[j] = tj
        t_next = tj
    return float(np.sum(weight)), float(np.sum(weight * weight))


def mc_simplex_pair_integral(hurst: Hurst | float, pairing, n_samples: int,
                             seed: int) -> MomentEstimate:
    """Monte-Carlo estimate of the simplex pair integral (H > 1/2).

    The simplex is sampled top-down; at levels carrying a singular factor
    the point is drawn from the normalized factor density by inverse CDF,
    so the factor cancels and the per-sample weight is bounded by
    (2H-1)^{-k}.  The naive uniform estimator has infinite variance for
    H <= 3/4, this one never does.
    """
    h = as_hurst(hurst)
    if not h.young_regime:
        raise DomainError(f"simplex pair integrals require H > 1/2, got {h.value}")
    pairing = _validate_pairing(pairing)
    if n_samples < 2:
        raise DomainError("need at least 2 samples")
    size = 2 * len(pairing)
    alpha = 2.0 * h.value - 1.0
    partner_above = {a: b for a, b in pairing}
    chunk = 2_000_000
    total = 0.0
    total_sq = 0.0
    done = 0
    index = 0
    while done < n_samples:
        take = min(chunk, n_samples - done)
        gen = stream(seed, TAG_SIMPLEX, index)
        s, s2 = _mc_simplex_chunk(gen, take, size, partner_above, alpha)
        total += s
        total_sq += s2
        done += take
        index += 1
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    se = math.sqrt(var / (n_samples - 1))
    return MomentEstimate(value=mean, std_error=se, method="mc-simplex",
                          hurst=h.value, replicates=n_samples)


def expected_iterated_wick(hurst: Hurst | float, word, tol: float = 1e-8) -> MomentEstimate:
    """Wick route: Isserlis matchings x simplex quadrature; H > 1/2.

    Odd-length words vanish exactly by symmetry of the Gaussian law.
    """
    h = as_hurst(hurst)
    word = _validate_word(word, ANALYTIC_WORD_CAP)
    if len(word) % 2 == 1:
        return MomentEstimate(value=0.0, std_error=0.0, method="wick",
                              hurst=h.value, word=word)
    if not h.young_regime:
        raise DomainError(f"the Wick engine requires H > 1/2, got {h.value}")
    k = len(word) // 2
    H = h.value
    prefactor = (H * (2.0 * H - 1.0)) ** k
    total = 0.0
    matched = 0
    for matching in wick_pairings(k):
        if all(word[a - 1] == word[b - 1] for a, b in matching):
            total += simplex_pair_integral(h, matching, tol=tol)
            matched += 1
    return MomentEstimate(
        value=prefactor * total, std_error=0.0, method="wick", hurst=H,
        word=word, error_bound=k * tol * max(matched, 1) * prefactor,
    )


# ---------------------------------------------------------------------------
# interpolation-exact engine: moments of the dyadic linear interpolation B^m
# ---------------------------------------------------------------------------


def _pattern_sums(kappa: np.ndarray, pairing: tuple) -> dict:
    """Exact cell-combinatorics sums for one 4-point pairing.

    Decomposes sum over c_1 <= c_2 <= c_3 <= c_4 by the pattern of
    equalities among the cells (a composition of 4); each piece reduces to
    cumulative sums of the stationary increment covariance kappa.  Cost is
    O(n^2) overall, n = 2^m.
    """
    n = kappa.size
    k0 = float(kappa[0])
    # S[x] = sum_{g=1..x} kappa(g), T[x] = sum_{g=1..x} g * kappa(g)
    S = np.concatenate([[0.0], np.cumsum(kappa[1:])])
    T = np.concatenate([[0.0], np.cumsum(np.arange(1, n) * kappa[1:])])
    G = np.arange(n, dtype=float)
    nmG = (n - G).astype(float)
    kG = kappa
    out = {}

    if pairing == PAIR_ADJACENT:
        CS = np.concatenate([[0.0], np.cumsum(S[:-1])])  # CS[x] = sum_{y<x} S[y]
        Srev = S[::-1]  # Srev[x] = S[n-1-x]
        out["1.1.1.1"] = float(np.sum(CS * Srev))
        out["2.1.1"] = 0.5 * k0 * float(np.sum(np.arange(n) * Srev))
        out["1.2.1"] = 0.5 * float(np.sum(S * Srev))
        out["1.1.2"] = 0.5 * k0 * float(np.sum(S * (n - 1 - np.arange(n))))
        out["2.2"] = 0.25 * k0 * k0 * n * (n - 1) / 2.0
        out["3.1"] = k0 / 6.0 * float(np.sum(S))
        out["1.3"] = k0 / 6.0 * float(np.sum(S))
        out["4"] = k0 * k0 * n / 24.0
        return out

    if pairing == PAIR_NESTED:
        inner = (G - 1.0) * np.where(G >= 2, S[np.clip(G.astype(int) - 2, 0, n - 1)], 0.0) \
            - np.where(G >= 2, T[np.clip(G.astype(int) - 2, 0, n - 1)], 0.0)
        out["1.1.1.1"] = float(np.sum(kG * nmG * inner))
        SG1 = np.concatenate([[0.0], S[:-1]])  # S(G-1)
        out["2.1.1"] = 0.5 * float(np.sum(kG * nmG * SG1))
        out["1.2.1"] = 0.5 * k0 * float(np.sum(kG * nmG * np.clip(G - 1.0, 0.0, None)))
        out["1.1.2"] = 0.5 * float(np.sum(kG * nmG * SG1))
        out["2.2"] = 0.25 * float(np.sum(kG[1:] ** 2 * nmG[1:]))
        out["3.1"] = k0 / 6.0 * float(np.sum(kG[1:] * nmG[1:]))
        out["1.3"] = k0 / 6.0 * float(np.sum(kG[1:] * nmG[1:]))
        out["4"] = k0 * k0 * n / 24.0
        return out

    if pairing == PAIR_INTERLEAVED:
        # strictly increasing cells: loop over the middle gap D = e3 - e2
        acc = 0.0
        for D in range(1, n - 1):
            e2 = np.arange(1, n - 1 - D)
            if e2.size == 0:
                break
            first = S[e2 + D] - S[D]
            second = S[n - 1 - e2] - S[D]
            acc += float(np.sum(first * second))
        out["1.1.1.1"] = acc
        SG1 = np.concatenate([[0.0], S[:-1]])
        out["2.1.1"] = 0.5 * float(np.sum(kG * nmG * SG1))
        if n > 1:
            conv = np.convolve(kappa[1:], kappa[1:])  # conv[s-2] = sum_g k(g) k(s-g)
            s_vals = np.arange(2, 2 * n - 1)
            weights = np.clip(n - s_vals, 0, None).astype(float)
            out["1.2.1"] = 0.5 * float(np.sum(conv * weights))
        else:
            out["1.2.1"] = 0.0
        out["1.1.2"] = 0.5 * float(np.sum(kG * nmG * SG1))
        out["2.2"] = 0.25 * float(np.sum(kG[1:] ** 2 * nmG[1:]))
        out["3.1"] = k0 / 6.0 * float(np.sum(kG[1:] * nmG[1:]))
        out["1.3"] = k0 / 6.0 * float(np.sum(kG[1:] * nmG[1:]))
        out["4"] = k0 * k0 * n / 24.0
        return out

    raise DomainError(f"pattern sums are defined for the three 4-point pairings, got {pairing}")


def interpolated_pair_terms(hurst: Hurst | float, mesh_level: int, pairing) -> dict:
    """Per-equality-pattern breakdown of the interpolated pairing sum."""
    h = as_hurst(hurst)
    pairing = _validate_pairing(pairing)
    kappa = CovarianceKernel(h).increment_sequence(mesh_level)
    return _pattern_sums(kappa, pairing)


def interpolated_pair_sum(hurst: Hurst | float, mesh_level: int, pairing) -> float:
    """E over the level-m interpolation of one pairing's contribution.

    For the three 4-point pairings these converge (H > 1/4) to the
    closed-form triple; their sum equals 1/8 exactly at every m because
    the interpolated endpoint B^m(1) = B(1) is standard Gaussian.
    """
    return float(sum(interpolated_pair_terms(hurst, mesh_level, pairing).values()))


def nested_same_cell_term(hurst: Hurst | float, mesh_level: int) -> float:
    """The all-four-in-one-cell sub-term of the nested pairing sum.

    In the normalization where the nested sum is half of three sub-terms,
    this equals 2 x (pattern "4") = (1/12) * 2^{m(1-4H)}.
    """
    terms = interpolated_pair_terms(hurst, mesh_level, PAIR_NESTED)
    return 2.0 * terms["4"]


def expected_iterated_interpolated(hurst: Hurst | float, word,
                                   mesh_level: int) -> MomentEstimate:
    """Exact E[iterated integral of the level-m interpolation]; |word| in {2, 4}."""
    h = as_hurst(hurst)
    word = _validate_word(word, ANALYTIC_WORD_CAP)
    if len(word) == 2:
        value = 0.5 if word[0] == word[1] else 0.0
    elif len(word) == 4:
        triple = tuple(
            interpolated_pair_sum(h, mesh_level, p)
            for p in (PAIR_ADJACENT, PAIR_INTERLEAVED, PAIR_NESTED)
        )
        value = _fourth_order_value(word, triple)
    else:
        raise CapabilityError(
            f"the interpolation-exact engine covers word lengths 2 and 4, "
            f"got length {len(word)}; the mc engine covers longer words"
        )
    return MomentEstimate(value=value, std_error=0.0, method="interpolated",
                          hurst=h.value, word=word, mesh_level=mesh_level)


# ---------------------------------------------------------------------------
# Monte-Carlo engine: sampled paths + exact signatures
# ---------------------------------------------------------------------------


def _batch_word_integrals(increments: np.ndarray, words: list) -> np.ndarray:
    """Iterated integrals of piecewise-linear paths for several words.

    increments: (paths, cells, d).  Returns (paths, len(words)).  Uses the
    cumulative Chen recursion: with G_r(c) the prefix-r integral of the
    path up to cell c,

        G_r(c) = G_r(c-1) + sum_{s<r} G_s(c-1) * prod(increments)/(r-s)!

    and every quantity vectorizes over paths and cells.
    """
    paths, cells, d = increments.shape
    out = np.empty((paths, len(words)))
    for w_idx, word in enumerate(words):
        q = len(word)
        letters = [c - 1 for c in word]
        # cumulative products of this word's letters within each cell
        # prod[s][r] = prod_{j=s..r-1} incr[..., letters[j]], 0 <= s < r <= q
        prod = {}
        for s in range(q):
            run = None
            for r in range(s + 1, q + 1):
                col = increments[:, :, letters[r - 1]]
                run = col if run is None else run * col
                prod[(s, r)] = run
        levels = []  # levels[s] = G_s(c-1), shape (paths, cells)
        shifted_one = np.ones((paths, cells))
        for r in range(1, q + 1):
            acc = np.zeros((paths, cells))
            for s in range(r):
                w = 1.0 / math.factorial(r - s)
                G_prev = shifted_one if s == 0 else levels[s - 1]
                acc += w * G_prev * prod[(s, r)]
            np.cumsum(acc, axis=1, out=acc)
            if r < q:
                shifted = np.zeros_like(acc)
                shifted[:, 1:] = acc[:, :-1]
                levels.append(shifted)
            else:
                out[:, w_idx] = acc[:, -1]
    return out


def _mc_chunk_plan(n_paths: int, cells: int, dimension: int, max_word: int) -> int:
    """Chunk size in paths; a fixed function of the problem size only."""
    q = max_word
    arrays = dimension + q * (q + 3) // 2 + 3  # increments + DP buffers
    per_path = 8 * cells * arrays
    budget = 256_000_000
    return max(64, min(n_paths, budget // per_path))


def _mc_words_core(hurst: Hurst, words: list, combos: np.ndarray, mesh_level: int,
                   replicates: int, seed: int, threads: int = 1,
                   method: str = "auto") -> tuple:
    """Means and standard errors of linear combinations of word integrals.

    combos: (n_out, n_words).  Chunks of paths are processed with named
    substreams and combined in chunk order, so results are independent of
    the thread count.
    """
    cells = 1 << mesh_level
    dimension = max(max(w) for w in words)
    max_word = max(len(w) for w in words)
    chunk = _mc_chunk_plan(replicates, cells, dimension, max_word)
    bounds = list(range(0, replicates, chunk))

    def run_chunk(ci: int) -> tuple:
        start = bounds[ci]
        take = min(chunk, replicates - start)
        paths = sample_fbm_batch(hurst, mesh_level, dimension, take, seed,
                                 chunk_index=ci, method=method)
        incr = np.diff(paths, axis=1)
        vals = _batch_word_integrals(incr, words) @ combos.T  # (take, n_out)
        return np.sum(vals, axis=0), np.sum(vals * vals, axis=0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_chunk, range(len(bounds))))
    else:
        results = [run_chunk(ci) for ci in range(len(bounds))]
    total = np.zeros(combos.shape[0])
    total_sq = np.zeros(combos.shape[0])
    for s, s2 in results:  # fixed chunk order
        total += s
        total_sq += s2
    mean = total / replicates
    var = np.clip(total_sq / replicates - mean**2, 0.0, None)
    se = np.sqrt(var / max(replicates - 1, 1))
    return mean, se


def mc_expected_iterated_many(hurst: Hurst | float, words, mesh_level: int,
                              replicates: int, seed: int, threads: int = 1,
                              method: str = "auto") -> list:
    """Monte-Carlo moments for several words sharing one set of paths."""
    h = as_hurst(hurst)
    words = [_validate_word(w, MC_WORD_CAP) for w in words]
    if replicates < 2:
        raise DomainError("need at least 2 replicates")
    combos = np.eye(len(words))
    mean, se = _mc_words_core(h, words, combos, mesh_level, replicates, seed,
                              threads=threads, method=method)
    return [
        MomentEstimate(value=float(mean[i]), std_error=float(se[i]), method="mc",
                       hurst=h.value, word=words[i], mesh_level=mesh_level,
                       replicates=replicates)
        for i in range(len(words))
    ]


def mc_expected_iterated(hurst: Hurst | float, word, mesh_level: int,
                         replicates: int, seed: int, threads: int = 1,
                         method: str = "auto") -> MomentEstimate:
    """Monte-Carlo expected iterated integral for one word (any H)."""
    return mc_expected_iterated_many(hurst, [word], mesh_level, replicates, seed,
                                     threads=threads, method=method)[0]


def mc_weighted_word_sum(hurst: Hurst | float, weights: dict, mesh_level: int,
                         replicates: int, seed: int, threads: int = 1,
                         method: str = "auto") -> MomentEstimate:
    """MC estimate of sum_I w_I E[iterated integral of I].

    The combination is formed per path, so the reported standard error is
    the true standard error of the combined estimator (the word integrals
    are correlated across a shared path).
    """
    h = as_hurst(hurst)
    items = sorted(weights.items())
    words = [_validate_word(w, MC_WORD_CAP) for w, _ in items]
    combo = np.array([[float(w) for _, w in items]])
    mean, se = _mc_words_core(h, words, combo, mesh_level, replicates, seed,
                              threads=threads, method=method)
    return MomentEstimate(value=float(mean[0]), std_error=float(se[0]), method="mc",
                          hurst=h.value, mesh_level=mesh_level, replicates=replicates)


def scale_moment(estimate: MomentEstimate, t: float) -> MomentEstimate:
    """Rescale a unit-horizon moment to horizon t via t^{H |word|}."""
    if estimate.word is None:
        raise DomainError("scale_moment needs an estimate tagged with its word")
    if not (0.0 <= t <= 1.0):
        raise DomainError(f"horizon must lie in [0, 1], got {t}")
    factor = t ** (estimate.hurst * len(estimate.word))
    return MomentEstimate(
        value=estimate.value * factor, std_error=estimate.std_error * factor,
        method=estimate.method, hurst=estimate.hurst, word=estimate.word,
        mesh_level=estimate.mesh_level, replicates=estimate.replicates,
        error_bound=estimate.error_bound * factor,
    )
