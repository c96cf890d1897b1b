import numpy as np
import pytest

from specwave.gll_basis import (
    InvalidDegreeError,
    OutOfReferenceDomainError,
    derivative_matrix,
    gll_rule,
    lagrange_all,
    lagrange_deriv_all,
    lagrange_eval,
)


def monomial_integral(k):
    # exact value of integral of x^k over [-1, 1]
    return 0.0 if k % 2 else 2.0 / (k + 1)


def test_degree_1_endpoints_rule():
    r = gll_rule(1)
    np.testing.assert_array_equal(r.nodes, [-1.0, 1.0])
    np.testing.assert_array_equal(r.weights, [1.0, 1.0])


def test_degree_2_against_moment_oracle():
    # Independent oracle: solve the symmetric 3-point rule {-1, 0, 1} from
    # exactness on x^0 and x^2 (odd monomials vanish by symmetry).
    a = np.array([[2.0, 1.0], [2.0, 0.0]])
    b = np.array([monomial_integral(0), monomial_integral(2)])
    w_end, w_mid = np.linalg.solve(a, b)
    r = gll_rule(2)
    np.testing.assert_array_equal(r.nodes, [-1.0, 0.0, 1.0])
    np.testing.assert_allclose(r.weights, [w_end, w_mid, w_end], rtol=0, atol=1e-15)
    # and the oracle itself: 1/3, 4/3
    assert abs(w_end - 1.0 / 3.0) < 1e-15
    assert abs(w_mid - 4.0 / 3.0) < 1e-15


@pytest.mark.parametrize("degree", range(1, 11))
def test_rule_structure(degree):
    r = gll_rule(degree)
    assert r.nodes[0] == -1.0 and r.nodes[-1] == 1.0
    assert np.all(np.diff(r.nodes) > 0)
    assert np.all(r.weights > 0)
    assert abs(np.sum(r.weights) - 2.0) < 1e-14
    # exact mirror symmetry after symmetrization
    np.testing.assert_array_equal(r.nodes, -r.nodes[::-1])
    np.testing.assert_array_equal(r.weights, r.weights[::-1])


@pytest.mark.parametrize("degree", range(1, 11))
def test_quadrature_exactness_monomials(degree):
    r = gll_rule(degree)
    for k in range(2 * degree):
        got = np.sum(r.weights * r.nodes**k)
        assert abs(got - monomial_integral(k)) < 1e-12


def test_quadrature_exactness_random_polynomials():
    rng = np.random.default_rng(42)
    for degree in (2, 4, 7):
        r = gll_rule(degree)
        for _ in range(20):
            coeffs = rng.uniform(-1, 1, size=2 * degree)
            exact = sum(c * monomial_integral(k) for k, c in enumerate(coeffs))
            vals = sum(c * r.nodes**k for k, c in enumerate(coeffs))
            got = np.sum(r.weights * vals)
            assert abs(got - exact) <= 1e-12 * max(1.0, abs(exact))


def test_invalid_degree():
    with pytest.raises(InvalidDegreeError):
        gll_rule(0)
    with pytest.raises(InvalidDegreeError):
        gll_rule(-3)
    with pytest.raises(InvalidDegreeError):
        gll_rule(11)


def test_lagrange_cardinal_property():
    r = gll_rule(2)
    assert lagrange_eval(r, 1, 0.0) == 1.0
    assert lagrange_eval(r, 0, 0.0) == 0.0
    # direct product formula: l_1(xi) = 1 - xi^2 for degree 2
    assert abs(lagrange_eval(r, 1, 0.5) - 0.75) < 1e-15
    for degree in (3, 6):
        r = gll_rule(degree)
        for i in range(degree + 1):
            for j in range(degree + 1):
                assert abs(lagrange_eval(r, i, r.nodes[j]) - (1.0 if i == j else 0.0)) < 1e-13


def test_lagrange_out_of_domain():
    r = gll_rule(3)
    with pytest.raises(OutOfReferenceDomainError):
        lagrange_eval(r, 0, 1.0001)
    with pytest.raises(OutOfReferenceDomainError):
        lagrange_all(r, -2.0)


def test_partition_of_unity():
    rng = np.random.default_rng(7)
    for degree in (2, 4, 8):
        r = gll_rule(degree)
        for xi in rng.uniform(-1, 1, size=50):
            assert abs(np.sum(lagrange_all(r, xi)) - 1.0) < 1e-13


def test_derivative_matrix_rows_and_exactness():
    r = gll_rule(2)
    t = derivative_matrix(r)
    np.testing.assert_allclose(t.deriv_matrix.sum(axis=1), 0.0, atol=1e-12)
    # linear exactness
    np.testing.assert_allclose(t.deriv_matrix @ r.nodes, np.ones(3), atol=1e-13)
    # cubic: D applied to samples of x^3 gives samples of 3x^2
    r3 = gll_rule(3)
    d3 = derivative_matrix(r3).deriv_matrix
    np.testing.assert_allclose(d3 @ r3.nodes**3, 3 * r3.nodes**2, atol=1e-12)


def test_derivative_matrix_matches_pointwise_derivative():
    for degree in (2, 5):
        r = gll_rule(degree)
        d = derivative_matrix(r).deriv_matrix
        for i in range(degree + 1):
            np.testing.assert_allclose(d[i], lagrange_deriv_all(r, r.nodes[i]), atol=1e-11)


def test_repeated_differentiation_annihilates_polynomials():
    # Repeated derivatives of a degree-N polynomial grow like N!, so the
    # residual is judged against the largest intermediate magnitude.
    for degree in (3, 5, 8):
        r = gll_rule(degree)
        d = derivative_matrix(r).deriv_matrix
        rng = np.random.default_rng(degree)
        coeffs = rng.uniform(-1, 1, size=degree + 1)
        samples = sum(c * r.nodes**k for k, c in enumerate(coeffs))
        scale = np.max(np.abs(samples))
        for _ in range(degree + 1):
            samples = d @ samples
            scale = max(scale, np.max(np.abs(samples)))
        assert np.max(np.abs(samples)) < 1e-9 * max(1.0, scale)


def test_spectral_interpolation_convergence():
    # Interpolating exp(x) at GLL nodes: measured per-degree error ratios are
    # 9.04, 12.6, 15.9, ... so assert >= 8x per step and >= 10x per step on
    # average over N = 2..8 (super-algebraic decay).
    xs = np.linspace(-1, 1, 1000)
    errs = []
    for degree in range(2, 9):
        r = gll_rule(degree)
        vals = np.exp(r.nodes)
        interp = np.array([np.dot(lagrange_all(r, x), vals) for x in xs])
        errs.append(np.max(np.abs(interp - np.exp(xs))))
    for e_lo, e_hi in zip(errs[1:], errs[:-1]):
        assert e_lo < e_hi / 8.0
    assert errs[-1] < errs[0] / 10.0 ** (len(errs) - 1)
