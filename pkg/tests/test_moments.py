"""Moment engines: closed forms, Wick quadrature, interpolation sums, MC."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from fbmsde import (
    DomainError,
    CapabilityError,
    ResourceError,
    beta_fn,
    expected_iterated_closed_form,
    expected_iterated_interpolated,
    expected_iterated_wick,
    gamma2_coefficients,
    gaussian_product_moment,
    mc_expected_iterated,
    mc_expected_iterated_many,
    mc_simplex_pair_integral,
    scale_moment,
    simplex_pair_integral,
    wick_pairings,
)
from fbmsde.moments import (
    PAIR_ADJACENT,
    PAIR_INTERLEAVED,
    PAIR_NESTED,
    beta_fn_quadrature,
    interpolated_pair_sum,
    mc_weighted_word_sum,
    nested_same_cell_term,
    pair_integral_closed_form,
)

# Fourth-order coefficient triple at H = 3/4, from the closed formulas:
# a1 = (H/4) beta(2H, 2H), a3 = (2H-1)/(8(4H-1)), a2 by the 1/8-sum.
A1_075 = (3.0 / 16.0) * (math.pi / 8.0)
A2_075 = 3.0 / 32.0 - A1_075
A3_075 = 1.0 / 32.0


def test_beta_values():
    assert beta_fn(1.0, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert beta_fn(0.5, 0.5) == pytest.approx(math.pi, rel=1e-14)
    assert beta_fn(1.5, 1.5) == pytest.approx(math.pi / 8.0, rel=1e-14)
    with pytest.raises(DomainError):
        beta_fn(0.0, 1.0)


def test_beta_quadrature_cross_checks_log_gamma_route():
    gen = np.random.default_rng(8)
    for _ in range(10):
        a, b = gen.uniform(0.3, 4.0, size=2)
        assert beta_fn_quadrature(a, b) == pytest.approx(beta_fn(a, b), rel=1e-10)


@pytest.mark.parametrize("k, count", [(1, 1), (2, 3), (3, 15)])
def test_wick_pairing_counts(k, count):
    pairings = wick_pairings(k)
    assert len(pairings) == count
    for matching in pairings:
        flat = sorted(i for pair in matching for i in pair)
        assert flat == list(range(1, 2 * k + 1))


def test_wick_pairings_cap():
    with pytest.raises(ResourceError):
        wick_pairings(5)


def _permutation_sum_oracle(cov):
    """Brute-force permutation-sum oracle: sum over all orderings divided by k!2^k."""
    n = len(cov)
    k = n // 2
    total = Fraction(0)
    for perm in itertools.permutations(range(n)):
        prod = Fraction(1)
        for i in range(k):
            prod *= cov[perm[2 * i]][perm[2 * i + 1]]
        total += prod
    return total / (Fraction(math.factorial(k)) * 2**k)


def test_gaussian_product_moment_small_cases():
    assert gaussian_product_moment([[1, 1], [1, 1]]) == 1
    ones4 = [[1] * 4 for _ in range(4)]
    assert gaussian_product_moment(ones4) == 3  # E[G^4] for a standard Gaussian
    ones6 = [[1] * 6 for _ in range(6)]
    assert gaussian_product_moment(ones6) == 15


def test_gaussian_product_moment_matches_permutation_sum_exactly():
    gen = np.random.default_rng(5)
    for n in (4, 6):
        raw = gen.integers(-3, 4, size=(n, n))
        cov = [[Fraction(int(raw[i][j] + raw[j][i])) for j in range(n)] for i in range(n)]
        assert gaussian_product_moment(cov) == _permutation_sum_oracle(cov)


def test_gaussian_product_moment_matches_monte_carlo():
    gen = np.random.default_rng(6)
    a = gen.normal(size=(4, 4))
    cov = a @ a.T
    draws = gen.multivariate_normal(np.zeros(4), cov, size=1_000_000)
    prods = draws.prod(axis=1)
    se = prods.std(ddof=1) / math.sqrt(prods.size)
    assert abs(float(gaussian_product_moment(cov.tolist())) - prods.mean()) <= 4 * se


def test_gaussian_product_moment_rejects_asymmetry_and_zeroes_odd_order():
    with pytest.raises(DomainError):
        gaussian_product_moment([[1, 2], [3, 1]])
    assert gaussian_product_moment([[1]]) == 0  # odd moments vanish by symmetry


@pytest.mark.parametrize("hurst", [0.3, 0.5, 0.75])
def test_closed_form_basic_words(hurst):
    assert expected_iterated_closed_form(hurst, (1, 1)).value == pytest.approx(0.5, abs=1e-15)
    assert expected_iterated_closed_form(hurst, (1, 2)).value == 0.0


def test_closed_form_quartic_diagonal_is_sum_of_triple():
    est = expected_iterated_closed_form(0.5, (1, 1, 1, 1))
    assert est.value == pytest.approx(0.125, abs=1e-14)


def test_closed_form_triple_words_at_three_quarters():
    assert expected_iterated_closed_form(0.75, (1, 1, 2, 2)).value == pytest.approx(A1_075, abs=1e-13)
    assert expected_iterated_closed_form(0.75, (1, 2, 1, 2)).value == pytest.approx(A2_075, abs=1e-13)
    assert expected_iterated_closed_form(0.75, (1, 2, 2, 1)).value == pytest.approx(A3_075, abs=1e-13)


def test_closed_form_validity_and_capability_errors():
    with pytest.raises(DomainError):
        expected_iterated_closed_form(0.2, (1, 1))
    with pytest.raises(CapabilityError, match="mc engine"):
        expected_iterated_closed_form(0.6, (1, 1, 1, 1, 1, 1))


def test_gamma2_coefficients_brownian_and_three_quarters():
    triple = gamma2_coefficients(0.5)
    assert triple.as_tuple() == pytest.approx((0.125, 0.0, 0.0), abs=1e-14)
    assert gamma2_coefficients(0.75).a_nested == pytest.approx(A3_075, abs=1e-15)
    with pytest.raises(DomainError):
        gamma2_coefficients(0.25)


def test_coefficient_sum_identity_for_random_hurst():
    gen = np.random.default_rng(12)
    for hurst in gen.uniform(0.2501, 0.999, size=50):
        assert sum(gamma2_coefficients(hurst).as_tuple()) == pytest.approx(0.125, abs=1e-12)


def test_coefficients_are_continuous_across_one_half():
    below = gamma2_coefficients(0.5 - 1e-7).as_tuple()
    at = gamma2_coefficients(0.5).as_tuple()
    above = gamma2_coefficients(0.5 + 1e-7).as_tuple()
    for lo, mid, hi in zip(below, at, above):
        assert abs(lo - mid) <= 1e-6 and abs(hi - mid) <= 1e-6


def test_simplex_pair_integral_closed_values():
    assert pair_integral_closed_form(0.75, ((1, 2),)) == pytest.approx(4.0 / 3.0, rel=1e-14)
    assert pair_integral_closed_form(0.75, PAIR_ADJACENT) == pytest.approx(math.pi / 6.0, rel=1e-13)
    assert pair_integral_closed_form(0.75, PAIR_NESTED) == pytest.approx(2.0 / 9.0, rel=1e-13)


@pytest.mark.parametrize("pairing", [((1, 2),), PAIR_ADJACENT, PAIR_INTERLEAVED, PAIR_NESTED])
def test_simplex_quadrature_agrees_with_closed_forms(pairing):
    closed = pair_integral_closed_form(0.8, pairing)
    assert simplex_pair_integral(0.8, pairing) == pytest.approx(closed, rel=1e-7)


def test_simplex_monte_carlo_oracle():
    target = pair_integral_closed_form(0.75, PAIR_ADJACENT)
    est = mc_simplex_pair_integral(0.75, PAIR_ADJACENT, 200_000, seed=402)
    assert abs(est.value - target) <= 4 * est.std_error
    assert est.std_error > 0


def test_simplex_integrals_need_young_regime():
    with pytest.raises(DomainError):
        simplex_pair_integral(0.5, ((1, 2),))
    with pytest.raises(DomainError):
        mc_simplex_pair_integral(0.45, ((1, 2),), 100, seed=1)


@pytest.mark.parametrize("hurst", [0.6, 0.75, 0.9])
def test_wick_route_pair_word(hurst):
    est = expected_iterated_wick(hurst, (2, 2))
    assert est.value == pytest.approx(0.5, abs=1e-8)


def test_wick_route_odd_word_is_exactly_zero():
    est = expected_iterated_wick(0.75, (1, 2, 1))
    assert est.value == 0.0 and est.std_error == 0.0


def test_wick_route_matches_closed_triple():
    assert expected_iterated_wick(0.75, (1, 1, 2, 2)).value == pytest.approx(A1_075, abs=1e-7)
    assert expected_iterated_wick(0.75, (1, 2, 1, 2)).value == pytest.approx(A2_075, abs=1e-7)
    with pytest.raises(DomainError):
        expected_iterated_wick(0.5, (1, 1))


@pytest.mark.parametrize("hurst", [0.3, 0.75])
@pytest.mark.parametrize("mesh_level", [3, 8])
def test_interpolated_pair_word_is_exactly_half(hurst, mesh_level):
    est = expected_iterated_interpolated(hurst, (1, 1), mesh_level)
    assert est.value == pytest.approx(0.5, abs=1e-13)


@pytest.mark.parametrize("hurst, mesh_level", [(0.3, 5), (0.4, 8), (0.75, 10)])
def test_nested_same_cell_subterm_formula(hurst, mesh_level):
    expected = (1.0 / 12.0) * 2.0 ** (mesh_level * (1.0 - 4.0 * hurst))
    assert nested_same_cell_term(hurst, mesh_level) == pytest.approx(expected, rel=1e-12)


def test_interpolated_triple_sum_is_exactly_one_eighth():
    # the interpolated endpoint is standard Gaussian at every level
    for hurst in (0.3, 0.55, 0.8):
        total = sum(interpolated_pair_sum(hurst, 7, p)
                    for p in (PAIR_ADJACENT, PAIR_INTERLEAVED, PAIR_NESTED))
        assert total == pytest.approx(0.125, abs=1e-12)


def test_interpolated_converges_monotonically_to_closed_form():
    target = A1_075
    defects = [abs(expected_iterated_interpolated(0.75, (1, 1, 2, 2), m).value - target)
               for m in (6, 8, 10)]
    assert defects[0] > defects[1] > defects[2]


@pytest.mark.parametrize("hurst", [0.6, 0.75, 0.9])
def test_engine_triple_agreement_above_one_half(hurst):
    """Closed form vs Wick quadrature (1e-7) vs interpolation at m=12 (1e-3)."""
    for word in ((1, 1, 2, 2), (1, 2, 1, 2), (1, 2, 2, 1)):
        closed = expected_iterated_closed_form(hurst, word).value
        assert expected_iterated_wick(hurst, word).value == pytest.approx(closed, abs=1e-7)
        assert expected_iterated_interpolated(hurst, word, 12).value == pytest.approx(closed, abs=1e-3)


def test_mc_pair_and_odd_words():
    est = mc_expected_iterated(0.35, (1, 1), 8, 20_000, seed=61)
    assert abs(est.value - 0.5) <= 4 * est.std_error
    odd = mc_expected_iterated(0.6, (1, 2, 3), 8, 20_000, seed=62)
    assert abs(odd.value) <= 4 * odd.std_error


def test_mc_quartic_word_matches_coefficient_oracle():
    est = mc_expected_iterated(0.4, (1, 1, 2, 2), 10, 20_000, seed=77)
    target = gamma2_coefficients(0.4).a_leading_diag
    assert abs(est.value - target) <= 4 * est.std_error


def test_mc_shared_paths_and_weighted_combination():
    words = [(1, 1), (2, 2)]
    singles = mc_expected_iterated_many(0.6, words, 6, 5000, seed=33)
    combo = mc_weighted_word_sum(0.6, {(1, 1): 2.0, (2, 2): -1.0}, 6, 5000, seed=33)
    direct = 2.0 * singles[0].value - 1.0 * singles[1].value
    assert combo.value == pytest.approx(direct, rel=1e-12)
    # the combined SE accounts for per-path covariance, not independent errors
    assert combo.std_error > 0


def test_mc_word_cap_is_a_resource_error():
    with pytest.raises(ResourceError):
        mc_expected_iterated(0.5, (1,) * 9, 6, 100, seed=1)


def test_scale_moment_behaviour():
    est = mc_expected_iterated(0.75, (1, 1), 5, 2000, seed=9)
    assert scale_moment(est, 1.0).value == est.value
    assert scale_moment(est, 0.0).value == 0.0
    half = expected_iterated_closed_form(0.75, (1, 1))
    scaled = scale_moment(half, 0.25)
    assert scaled.value == pytest.approx(0.25**1.5 / 2.0, abs=1e-15)
    assert scaled.value == pytest.approx(0.0625, abs=1e-15)
    with pytest.raises(DomainError):
        scale_moment(half, 1.5)


def test_scaled_pair_moment_matches_direct_mc_at_short_horizon():
    """Rescaling the unit-horizon estimate reproduces MC on the rescaled grid."""
    base = mc_expected_iterated(0.6, (1, 1), 6, 40_000, seed=17)
    scaled = scale_moment(base, 0.25)
    # direct estimate: iterated integral of t^H B over [0,1] grid equals the
    # horizon-t integral in law, so compare against the analytic value
    target = 0.5 * 0.25 ** (2 * 0.6)
    assert abs(scaled.value - target) <= 4 * scaled.std_error
