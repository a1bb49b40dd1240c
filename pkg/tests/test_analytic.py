import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from tanglepc.analytic import (
    ModelParams,
    ProbabilityVector,
    g,
    lambda_u,
    p_u,
    p_urw,
    p_urw_star,
    poisson_pmf,
    quadrature_reference,
    tip_count,
)


def test_poisson_small_cases():
    assert poisson_pmf(0, 0) == 1.0
    assert poisson_pmf(1, 1) == pytest.approx(math.exp(-1), rel=1e-15)
    with pytest.raises(ValueError):
        poisson_pmf(-0.1, 1)


def test_poisson_log_space_against_mpmath():
    with mpmath.workdps(40):
        exact = mpmath.exp(-100) * mpmath.mpf(100) ** 150 / mpmath.factorial(150)
    value = poisson_pmf(100, 150)
    assert value > 0
    assert value == pytest.approx(float(exact), rel=1e-12)


@pytest.mark.parametrize("gamma", [0.3, 1.0, 4.5])
def test_poisson_branches_agree(gamma):
    for n in range(21):
        direct = math.exp(-gamma) * gamma**n / math.factorial(n)
        logged = math.exp(n * math.log(gamma) - gamma - math.lgamma(n + 1))
        assert poisson_pmf(gamma, n) == pytest.approx(logged, rel=1e-12)
        assert direct == pytest.approx(logged, rel=1e-12)


def test_lambda_u_values():
    assert lambda_u(100, "mem") == pytest.approx(200 / 201, rel=1e-12)
    assert lambda_u(100, "sem") == pytest.approx(200 / 201 * (1 - 0.5 / 201), rel=1e-12)
    assert lambda_u(100, "mem") == pytest.approx(0.995025, abs=1e-6)
    assert lambda_u(100, "sem") == pytest.approx(0.992550, abs=1e-6)
    assert abs(lambda_u(250, "mem") - lambda_u(250, "sem")) < 1e-3
    assert tip_count(100) == 201


def test_p_u_examples():
    assert p_u(ModelParams(100, "mem"))[1] == pytest.approx(math.exp(-200 / 201), rel=1e-12)
    assert p_u(ModelParams(100, "mem"))[1] == pytest.approx(0.36970, abs=5e-5)
    assert p_u(ModelParams(1e-9, "sem"))[1] == pytest.approx(1.0, abs=1e-8)
    assert p_u(ModelParams(1e6, "sem")).mean == pytest.approx(2.0, abs=1e-5)


def test_g_limit_and_first_term():
    for n in range(6):
        assert g(n, 1e-7, 0.99) == 1.0
    for a, lu in [(0.5, 0.99), (1.3, 0.99255), (2.0, 3.0)]:
        z = 0.5 * a * lu
        assert g(0, a, lu) == pytest.approx(math.sinh(z) / z, rel=1e-13)
        assert g(0, a, lu) >= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 12), st.floats(0.01, 2.0), st.floats(0.05, 3.0))
def test_g_matches_quadrature(n, a, lu):
    def integrand(x):
        f = a * (x - 0.5)
        return math.exp(-f * lu) * (1 + f) ** n

    ref, _ = integrate.quad(integrand, 0, 1, epsabs=1e-14, epsrel=1e-13)
    assert abs(g(n, a, lu) - ref) < 1e-9


@pytest.mark.parametrize("lam", [10, 100])
@pytest.mark.parametrize("a", [0.1, 1.3, 2.0])
def test_quadrature_against_simpson(lam, a):
    params = ModelParams(lam, "sem", a)
    x = np.linspace(0.0, 1.0, 20001)
    e = 1.0 + a * (x - 0.5)
    for n in (1, 2, 5):
        lu = params.lambda_u
        pois = np.array([poisson_pmf(ei * lu, n - 1) for ei in e])
        assert quadrature_reference(params, n) == pytest.approx(integrate.simpson(pois, x=x), abs=1e-10)
        assert quadrature_reference(params, n, weighted=True) == pytest.approx(
            integrate.simpson(pois * e, x=x), abs=1e-10)


def test_quadrature_a_zero_is_poisson():
    params = ModelParams(20, "sem", 0.0)
    for n in range(1, 6):
        assert quadrature_reference(params, n) == pytest.approx(poisson_pmf(params.lambda_u, n - 1), abs=1e-15)


def test_quadrature_weighted_hand_integral():
    # a = 2, n = 1, lambda_U = 1: int_0^1 2x e^{-2x} dx = (1 - 3 e^-2) / 2, b = 1
    value = quadrature_reference(ModelParams(10, "sem", 2.0), 1, weighted=True, lu=1.0)
    assert value == pytest.approx((1 - 3 * math.exp(-2)) / 2, abs=1e-13)


def test_a_zero_reduces_to_p_u():
    params = ModelParams(100, "sem", 0.0)
    assert np.allclose(p_urw(params).probs, p_u(params).probs, atol=1e-15)
    assert np.allclose(p_urw_star(params).probs, p_u(params).probs, atol=1e-15)


def test_shape_at_reference_point():
    params = ModelParams(100, "sem", 1.3)
    pu, pw, ps = p_u(params), p_urw(params), p_urw_star(params)
    assert pw[1] > pu[1]
    for n in range(4, 8):
        assert pw[n] > pu[n]
    assert ps[1] < pw[1]
    assert sum(ps.probs) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 250), st.sampled_from(["sem", "mem"]), st.floats(0.0, 2.0))
def test_vectors_normalised(lam, policy, a):
    params = ModelParams(lam, policy, a)
    for vec in (p_u(params), p_urw(params), p_urw_star(params)):
        assert abs(sum(vec.probs) - 1.0) < 1e-9
        assert vec[0] == 0.0
        assert min(vec.probs) >= 0.0


def test_truncation_is_monotone():
    small = p_urw(ModelParams(100, "sem", 1.3, n_max=20))
    large = p_urw(ModelParams(100, "sem", 1.3, n_max=40))
    for n in range(21):
        assert abs(small[n] - large[n]) < 1e-12


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0.0)
    with pytest.raises(ValueError):
        ModelParams(100, "sem", 2.5)
    with pytest.raises(ValueError):
        ModelParams(100, "sem", 1.0, n_max=3)


def test_probability_vector_basics():
    v = ProbabilityVector.from_counts([1, 2, 2, 3])
    assert v.as_dict() == {1: 0.25, 2: 0.5, 3: 0.25}
    assert v[7] == 0.0
    assert v.mean == pytest.approx(2.0)
    assert list(v.survival(5)) == pytest.approx([1.0, 1.0, 0.75, 0.25, 0.0])
    with pytest.raises(ValueError):
        ProbabilityVector([0.5, 0.6])
    with pytest.raises(ValueError):
        ProbabilityVector([-0.1, 1.1])
