"""Vector fields, word composition, brackets, and the expansion operators."""

import math

import numpy as np
import pytest

from fbmsde import (
    CapabilityError,
    DomainError,
    NumericalError,
    OperatorPoly,
    ResourceError,
    apply_field,
    apply_operator,
    apply_word,
    build_gamma,
    commutative_gamma,
    is_commuting,
    lie_bracket,
    parse_expr,
)
from fbmsde.moments import expected_iterated_interpolated
from fbmsde.operators import load_fields, load_functions

D_DX = load_fields("1")[0]
ROTATION = load_fields("-x2\nx1")[0]
SHEAR_PAIR = load_fields("1\n0\n\n0\nx1")  # V1 = d/dx, V2 = x d/dy
COMMUTING_PAIR = load_fields("x1\n0\n\n0\n1")  # [x d/dx, d/dy] = 0

A1_075 = (3.0 / 16.0) * (math.pi / 8.0)


def _points(seed, dim, count=5):
    return np.random.default_rng(seed).uniform(-1.5, 1.5, size=(count, dim))


def test_apply_field_basic_and_rotation():
    f = parse_expr("x1^2")
    assert apply_field(D_DX, f).evaluate(np.array([3.0])) == pytest.approx(6.0, abs=1e-14)
    radius = parse_expr("x1^2 + x2^2")
    g = apply_field(ROTATION, radius)
    for p in _points(1, 2):
        assert g.evaluate(p) == pytest.approx(0.0, abs=1e-13)


def test_apply_field_checks_dimensions():
    with pytest.raises(DomainError):
        apply_field(D_DX, parse_expr("x2"))


def test_derivation_law_on_random_data():
    """V(fg) = (Vf) g + f (Vg) pointwise."""
    field = load_fields("sin(x2)\nx1*x2")[0]
    f = parse_expr("exp(-x1^2/4) * x2")
    g = parse_expr("x1 + cos(x2)")
    lhs = apply_field(field, parse_expr("(exp(-x1^2/4) * x2) * (x1 + cos(x2))"))
    for p in _points(2, 2):
        rhs = (apply_field(field, f).evaluate(p) * g.evaluate(p)
               + f.evaluate(p) * apply_field(field, g).evaluate(p))
        assert lhs.evaluate(p) == pytest.approx(rhs, abs=1e-10)


def test_apply_word_identity_and_commutation():
    f = parse_expr("x2")
    assert apply_word(SHEAR_PAIR, (), f) is f
    straight = load_fields("1\n0\n\n0\n1")
    for p in _points(3, 2):
        a = apply_word(straight, (1, 2), parse_expr("x1*x2^2")).evaluate(p)
        b = apply_word(straight, (2, 1), parse_expr("x1*x2^2")).evaluate(p)
        assert a == pytest.approx(b, abs=1e-12)


def test_apply_word_detects_noncommutation():
    """(V1 V2 - V2 V1) x2 = 1 for V1 = d/dx, V2 = x d/dy."""
    f = parse_expr("x2")
    forward = apply_word(SHEAR_PAIR, (1, 2), f)
    backward = apply_word(SHEAR_PAIR, (2, 1), f)
    for p in _points(4, 2):
        assert forward.evaluate(p) - backward.evaluate(p) == pytest.approx(1.0, abs=1e-13)


def test_apply_word_respects_node_cap():
    f = parse_expr("exp(x1^2) * sin(x1)")
    with pytest.raises(ResourceError):
        apply_word((load_fields("exp(x1^2)")[0],) * 1, (1, 1, 1, 1), f, node_cap=50)


def test_lie_bracket_cases():
    zero = lie_bracket(ROTATION, ROTATION)
    const_pair = load_fields("2\n-1\n\n1\n3")
    zero2 = lie_bracket(const_pair[0], const_pair[1])
    shear = lie_bracket(SHEAR_PAIR[0], SHEAR_PAIR[1])
    for p in _points(5, 2):
        assert np.allclose([c.evaluate(p) for c in zero.components], 0.0, atol=1e-14)
        assert np.allclose([c.evaluate(p) for c in zero2.components], 0.0, atol=1e-14)
        assert np.allclose([c.evaluate(p) for c in shear.components], [0.0, 1.0], atol=1e-13)


def test_lie_bracket_dimension_mismatch():
    with pytest.raises(DomainError):
        lie_bracket(D_DX, ROTATION)


def test_is_commuting():
    probes = _points(6, 2)
    assert is_commuting([ROTATION], probes)
    assert is_commuting(load_fields("1\n0\n\n0\n1"), probes)
    assert not is_commuting(SHEAR_PAIR, probes)
    assert is_commuting(COMMUTING_PAIR, probes)


def test_commutative_gamma_matches_build_gamma_order_one():
    a = commutative_gamma(1, SHEAR_PAIR)
    b = build_gamma(1, 0.62, SHEAR_PAIR)
    assert a.terms == b.terms == {(1, 1): 0.5, (2, 2): 0.5}


def test_commutative_gamma_scalar_cases():
    assert commutative_gamma(2, (D_DX,)).terms == {(1, 1, 1, 1): 0.125}
    op3 = commutative_gamma(3, (D_DX,))
    assert op3.terms == {(1,) * 6: pytest.approx(1.0 / 48.0)}
    value = apply_operator(op3, parse_expr("x1^6"), np.array([0.7]))
    assert value == pytest.approx(15.0, abs=1e-12)  # 720 / 48


def test_build_gamma_order_one_any_hurst():
    for hurst in (0.3, 0.5, 0.85):
        op = build_gamma(1, hurst, (D_DX, ))
        assert op.terms == {(1, 1): 0.5}


def test_build_gamma_brownian_second_order_words():
    op = build_gamma(2, 0.5, SHEAR_PAIR)
    expected = {}
    for i in (1, 2):
        for j in (1, 2):
            expected[(i, i, j, j)] = 0.125
    nonzero = {w: c for w, c in op.terms.items() if c != 0.0}
    assert nonzero == pytest.approx(expected)


def test_build_gamma_triple_at_three_quarters():
    op = build_gamma(2, 0.75, SHEAR_PAIR)
    assert op.terms[(1, 1, 2, 2)] == pytest.approx(A1_075, abs=1e-13)
    assert op.terms[(1, 2, 1, 2)] == pytest.approx(3.0 / 32.0 - A1_075, abs=1e-13)
    assert op.terms[(1, 2, 2, 1)] == pytest.approx(1.0 / 32.0, abs=1e-14)


def test_build_gamma_scalar_second_order_is_pattern_free():
    """With one field all three patterns share a word, so the 1/8 sum is exact."""
    for hurst in (0.3, 0.6, 0.9):
        op = build_gamma(2, hurst, (D_DX,))
        assert op.terms == {(1, 1, 1, 1): pytest.approx(0.125, abs=1e-12)}
        value = apply_operator(op, parse_expr("x1^4"), np.array([2.2]))
        assert value == pytest.approx(3.0, abs=1e-11)


@pytest.mark.parametrize("hurst", [0.35, 0.6, 0.75])
def test_build_gamma_equals_commutative_gamma_for_commuting_fields(hurst):
    f = parse_expr("x1^2 + x1*x2^2")
    closed = build_gamma(2, hurst, COMMUTING_PAIR)
    comm = commutative_gamma(2, COMMUTING_PAIR)
    for p in _points(7, 2):
        assert apply_operator(closed, f, p) == pytest.approx(apply_operator(comm, f, p), abs=1e-9)


def test_build_gamma_mc_engine_matches_interpolation_oracle():
    op = build_gamma(2, 0.6, SHEAR_PAIR, engine="mc", mesh_level=6,
                     replicates=4000, seed=31)
    assert op.engine == "mc"
    for word, coeff in op.terms.items():
        target = expected_iterated_interpolated(0.6, word, 6).value
        assert abs(coeff - target) <= 4 * op.coefficient_se[word]


def test_build_gamma_unsupported_combinations():
    with pytest.raises(CapabilityError, match="mc"):
        build_gamma(2, 0.2, SHEAR_PAIR, engine="closed")
    with pytest.raises(CapabilityError):
        build_gamma(3, 0.75, SHEAR_PAIR, engine="auto")
    with pytest.raises(DomainError):
        build_gamma(2, 0.6, SHEAR_PAIR, engine="mc")  # mc needs a seed


def test_zero_operator_and_gamma_one_quadratic():
    zero = OperatorPoly(terms={}, fields=(D_DX,), order=0)
    assert apply_operator(zero, parse_expr("x1^3"), np.array([2.0])) == 0.0
    gamma1 = build_gamma(1, 0.5, (D_DX,))
    assert apply_operator(gamma1, parse_expr("x1^2"), np.array([-4.0])) == pytest.approx(1.0)


def test_apply_operator_surfaces_singularities():
    gamma1 = build_gamma(1, 0.5, (D_DX,))
    with pytest.raises(NumericalError, match=r"division by zero in .*x1"):
        apply_operator(gamma1, parse_expr("log(x1)"), np.array([0.0]))


def test_load_functions_and_fields_formats():
    fns = load_functions("x1^2\n# comment\nsin(x1)\n")
    assert len(fns) == 2
    fields = load_fields("-x2\nx1\n\n# a second field\n1\n0\n")
    assert len(fields) == 2
    assert fields[0].dimension == 2
    with pytest.raises(DomainError):
        load_functions("# nothing but comments\n")
    with pytest.raises(DomainError):
        load_fields("")
