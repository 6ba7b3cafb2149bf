import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc, gamma

from subdiff.errors import InvalidInputError
from subdiff.mittag_leffler import MLParams, ml, ml_array, ml_eval, ml_kernel, taylor_radius

from ml_oracle import ml_negative_real_integral, ml_taylor

# frozen from the multiprecision oracles in ml_oracle.py (60 digits, 200 terms)
FROZEN = [
    (0.75, 1.0, -3.7, 0.09762502662972833),
    (0.5, 1.0, -1.0, 0.427583576155807),
    (0.75, 1.0, -100.0, 0.0027866210194390935),
    (0.25, 1.0, -1e4, 8.159925228902331e-05),
    (0.75, 0.75, -3.7, 0.02400573572953176),
]


def close(a, b, tol=1e-12):
    return abs(a - b) <= max(tol, tol * abs(b))


class TestClosedForms:
    def test_exp(self):
        assert ml_eval(1.0, 1.0, 1.0).real == pytest.approx(math.e, abs=1e-15)

    def test_zero_argument(self):
        assert ml_eval(0.5, 0.5, 0.0).real == pytest.approx(1 / math.sqrt(math.pi), abs=1e-15)

    def test_cosine(self):
        assert ml_eval(2.0, 1.0, -math.pi**2).real == pytest.approx(-1.0, abs=1e-12)

    @pytest.mark.parametrize("x", np.linspace(-10, 10, 41))
    def test_identities_grid(self, x):
        assert close(ml_eval(1.0, 1.0, x).real, math.exp(x))
        assert close(ml_eval(2.0, 1.0, -x * x).real, math.cos(x))

    def test_half_order_erfc(self):
        for x in (0.3, 1.0, 2.5, 6.0):
            ref = math.exp(x * x) * erfc(x)
            assert close(ml_eval(0.5, 1.0, -x).real, ref, 1e-13)

    def test_kernel_examples(self):
        assert ml_kernel(1.0, 2.0, 0.5) == pytest.approx(math.exp(-1.0), abs=1e-15)
        assert close(ml_kernel(0.5, 1.0, 1.0), math.e * erfc(1.0))
        v = ml_kernel(0.75, 100.0, 1.0)
        assert 0 < v <= 1.5 * 2 / gamma(0.25) / 100


@pytest.mark.parametrize("alpha,beta,z,ref", FROZEN)
def test_frozen_values(alpha, beta, z, ref):
    ev = ml(MLParams(alpha, beta), z)
    assert close(ev.value.real, ref)
    assert ev.value.imag == 0.0
    assert close(float(ml_array(alpha, beta, np.array([z]))[0]), ref)


def test_frozen_agree_with_oracle():
    # guard that the frozen table was produced by the oracles
    a, b, z, ref = FROZEN[0]
    assert close(ml_taylor(a, b, z), ref, 1e-14)
    a, b, z, ref = FROZEN[2]
    assert close(ml_negative_real_integral(a, b, -z), ref, 1e-14)


@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 0.9, 0.99])
@pytest.mark.parametrize("beta_is_alpha", [False, True])
def test_against_integral_oracle(alpha, beta_is_alpha):
    beta = alpha if beta_is_alpha else 1.0
    xs = np.array([0.7, 3.0, 12.0, 45.0, 400.0, 1e5])
    got = ml_array(alpha, beta, -xs)
    for x, g in zip(xs, got):
        ref = ml_negative_real_integral(alpha, beta, x)
        assert close(g, ref), (x, g, ref)
        assert close(ml(MLParams(alpha, beta), -x).value.real, ref)


def test_complex_argument_against_taylor():
    for z in (2.0 + 1.5j, -3.0 + 4.0j, 6j, 8.0, 20.0 - 3j):
        ref = ml_taylor(0.75, 1.0, z)
        assert abs(ml_eval(0.75, 1.0, z) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_regime_labels():
    p = MLParams(0.5)
    assert ml(p, -0.5).regime == "taylor"
    assert ml(p, -30.0).regime == "integral"
    assert ml(p, -1e5).regime == "asymptotic"
    assert ml(MLParams(0.5), 8.0).regime == "integral"


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("beta_is_alpha", [False, True])
def test_regime_boundary_continuity(alpha, beta_is_alpha):
    beta = alpha if beta_is_alpha else 1.0
    p = MLParams(alpha, beta)
    r0 = taylor_radius(alpha)
    lo, hi = ml(p, -r0 * (1 - 1e-12)), ml(p, -r0 * (1 + 1e-12))
    assert (lo.regime, hi.regime) == ("taylor", "integral")
    assert abs(lo.value - hi.value) <= 1e-10 * abs(lo.value)
    # locate the integral/asymptotic switch by bisection
    a, b = r0 * 1.01, 1e7
    assert ml(p, -b).regime == "asymptotic"
    for _ in range(60):
        m = math.sqrt(a * b)
        if ml(p, -m).regime == "asymptotic":
            b = m
        else:
            a = m
    va, vb = ml(p, -a).value.real, ml(p, -b).value.real
    assert abs(va - vb) <= 1e-10 * abs(va)


@pytest.mark.parametrize("lam", [1.0, 10.0, 100.0])
@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_monotone_decay(alpha, lam):
    t = np.linspace(1e-3, 10.0, 1000)
    e = ml_kernel(alpha, lam, t)
    assert np.all(e > 0)
    assert np.all(np.diff(e) <= 0)


# empirical constant C in  lam t^a E_{a,1}(-lam t^a) <= C  (regression value)
DECAY_SUP = {0.25: 0.8160, 0.5: 0.5642, 0.75: 0.4107}


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_decay_bound(alpha):
    t = np.geomspace(1e-3, 10.0, 400)
    sup = 0.0
    for lam in (1.0, 10.0, 1e2, 1e3, 1e4):
        sup = max(sup, float(np.max(lam * t**alpha * ml_kernel(alpha, lam, t))))
    assert np.isfinite(sup)
    assert sup <= 1.5 * 2 / gamma(1 - alpha)
    assert sup == pytest.approx(DECAY_SUP[alpha], rel=1e-3)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
def test_derivative_relations(alpha):
    # d/dt E_{a,1}(-lam t^a) = -lam t^(a-1) E_{a,a}(-lam t^a)
    # d/dt [t^a E_{a,a+1}(-lam t^a)] = t^(a-1) E_{a,a}(-lam t^a)
    lam = 3.0
    for t in (0.2, 0.7, 1.9):
        h = 1e-5 * t
        fd = (ml_kernel(alpha, lam, t + h) - ml_kernel(alpha, lam, t - h)) / (2 * h)
        exact = -lam * t ** (alpha - 1) * ml_kernel(alpha, lam, t, beta_is_alpha=True)
        assert fd == pytest.approx(exact, rel=1e-6)

        def g(s):
            return s**alpha * ml_eval(alpha, alpha + 1, -lam * s**alpha).real

        fd2 = (g(t + h) - g(t - h)) / (2 * h)
        exact2 = t ** (alpha - 1) * ml_kernel(alpha, lam, t, beta_is_alpha=True)
        assert fd2 == pytest.approx(exact2, rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(
    alpha=st.floats(0.05, 0.98),
    x=st.floats(0.0, 200.0),
)
def test_recurrence_property(alpha, x):
    # E_{a,b}(z) = 1/Gamma(b) + z E_{a,a+b}(z)
    z = -x
    lhs = ml_eval(alpha, 1.0, z).real
    rhs = 1.0 + z * ml_eval(alpha, alpha + 1.0, z).real
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(z) * abs(ml_eval(alpha, alpha + 1.0, z)))


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(0.05, 0.99), x=st.lists(st.floats(0.0, 1e4), min_size=1, max_size=20))
def test_array_matches_scalar(alpha, x):
    z = -np.asarray(x)
    arr = ml_array(alpha, 1.0, z)
    for zi, ai in zip(z, arr):
        s = ml(MLParams(alpha), zi).value.real
        assert abs(ai - s) <= 1e-13 * max(1.0, abs(s)) or abs(ai - s) <= 1e-12 * abs(s)


class TestErrors:
    @pytest.mark.parametrize("z", [float("nan"), float("inf"), complex(0, float("inf"))])
    def test_nonfinite(self, z):
        with pytest.raises(InvalidInputError):
            ml(MLParams(0.5), z)

    @pytest.mark.parametrize("alpha,beta", [(0.0, 1.0), (2.5, 1.0), (0.5, 0.0), (0.5, -1.0)])
    def test_bad_params(self, alpha, beta):
        with pytest.raises(InvalidInputError):
            MLParams(alpha, beta)

    def test_kernel_domain(self):
        with pytest.raises(InvalidInputError):
            ml_kernel(0.5, -1.0, 1.0)
        with pytest.raises(InvalidInputError):
            ml_kernel(1.5, 1.0, 1.0)
        with pytest.raises(InvalidInputError):
            ml_array(0.5, 1.0, [np.nan])
