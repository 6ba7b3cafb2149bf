import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import gamma

from subdiff.coefficients import CoefficientField
from subdiff.errors import InvalidInputError
from subdiff.forward import (
    assemble,
    cq_weights,
    excitation_samples,
    extract_flux,
    flux_from_nodes,
    forward_flux,
    measurement_steps,
    solve_ibvp,
    weighted_mass,
)
from subdiff.problem import DD, DN, Discretization, Excitation, ProblemSpec
from subdiff.spectral import SeriesControl, flux_series
from subdiff.sturm_liouville import eigenpairs

from fixtures import REFERENCE_DISC, example1, example2

ZERO = CoefficientField.constant(0.0)
ONE = CoefficientField.constant(1.0)


def _plain(alpha=0.5, rho=ONE, q=ZERO, bc=DD, exc=None, T=1.0, ell=1.0):
    return ProblemSpec(alpha, ell, rho, q, bc, exc or Excitation.indicator(0.5), T)


def _dense(tri):
    lo, di, up = tri
    return np.diag(di) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- CQ weights -------------------------------------------------------------


def test_weights_backward_difference():
    np.testing.assert_array_equal(cq_weights(1.0, 4, 1.0), [1.0, -1.0, 0.0, 0.0, 0.0])


def test_weights_half_order():
    np.testing.assert_allclose(cq_weights(0.5, 3, 1.0), [1.0, -0.5, -0.125, -0.0625], rtol=1e-15)


def test_weights_generating_function():
    # sum b_j zeta^j = tau^-a (1 - zeta)^a
    b = cq_weights(0.3, 400, 0.1)
    z = 0.5
    assert np.sum(b * z ** np.arange(401)) == pytest.approx(0.1**-0.3 * (1 - z) ** 0.3, rel=1e-13)


def test_weights_step_derivative():
    # applied to a unit step switched on at t_1, the CQ sum at t = 1 approximates t^-a / Gamma(1-a)
    a, N = 0.75, 1000
    b = cq_weights(a, N, 1.0 / N)
    approx = np.sum(b[:N])
    exact = 1.0 / gamma(1 - a)
    assert abs(approx - exact) <= 0.01 * exact


@pytest.mark.parametrize("a", [0.0, -0.1, 1.5])
def test_weights_reject_order(a):
    with pytest.raises(InvalidInputError):
        cq_weights(a, 4, 1.0)


# -- assembly -----------------------------------------------------------------


def test_textbook_p1_rows():
    M, S = assemble(_plain(), Discretization(10, 10))
    h = 0.1
    i = 4
    assert (M[0][i], M[1][i], M[2][i]) == pytest.approx((h / 6, 2 * h / 3, h / 6), rel=1e-14)
    assert (S[0][i], S[1][i], S[2][i]) == pytest.approx((-1 / h, 2 / h, -1 / h), rel=1e-14)


def test_mass_linear_in_density():
    M1, _ = assemble(_plain(), Discretization(10, 10))
    M2, _ = assemble(_plain(rho=CoefficientField.constant(2.0)), Discretization(10, 10))
    for a, b in zip(M1, M2):
        np.testing.assert_array_equal(2 * a, b)


def test_interface_on_node():
    M, _ = assemble(example1(), REFERENCE_DISC)
    h = 0.01
    i = 50  # x = 0.5, density 1 on the left cell and 1.5 on the right
    assert M[1][i] == pytest.approx(h / 3 * 2.5, rel=1e-13)
    assert M[0][i] == pytest.approx(h / 6, rel=1e-13)
    assert M[2][i] == pytest.approx(1.5 * h / 6, rel=1e-13)


def test_interface_inside_cell_by_quadrature():
    # 7 cells: the jump at 0.5 falls inside cell [3/7, 4/7]
    p = _plain(rho=CoefficientField.piecewise([0.5], [1.0, 1.5]))
    M, _ = assemble(p, Discretization(7, 10))
    x = np.linspace(0, 1, 8)
    h = x[1]

    def hat(i):
        return lambda s: max(0.0, 1 - abs(s - x[i]) / h)

    def rho(s):
        return 1.0 if s < 0.5 else 1.5

    for i, j in ((3, 3), (3, 4), (4, 4)):
        ref = quad(lambda s: rho(s) * hat(i)(s) * hat(j)(s), 0, 1, points=[0.5, x[3], x[4]], epsabs=1e-15)[0]
        got = M[1][i] if i == j else M[2][i]
        assert got == pytest.approx(ref, rel=1e-12)


def test_potential_block_by_quadrature():
    p = example1().with_(q=CoefficientField.from_function(lambda x: 10 * x * (1 - x) ** 2, 8))
    M, S = assemble(p, Discretization(20, 10))
    _, S0 = assemble(p.with_(q=ZERO), Discretization(20, 10))
    x = np.linspace(0, 1, 21)
    h = x[1]
    q = p.q
    for i, j in ((0, 0), (5, 5), (5, 6), (19, 20)):
        f = lambda s: q(s) * max(0, 1 - abs(s - x[i]) / h) * max(0, 1 - abs(s - x[j]) / h)  # noqa: E731
        lo, hi = max(0, x[min(i, j)] - h), min(1, x[max(i, j)] + h)
        kinks = [k for k in np.linspace(0, 1, 8)[1:-1] if lo < k < hi]
        ref = quad(f, lo, hi, points=kinks + [x[i], x[j]], limit=200, epsabs=1e-15)[0]
        got = (S[1][i] - S0[1][i]) if i == j else (S[2][i] - S0[2][i])
        assert got == pytest.approx(ref, rel=1e-10)


def test_weighted_mass_symmetric():
    nodes = np.linspace(0, 2, 13)
    lo, di, up = weighted_mass(nodes, lambda x: 1 + x**2 * 0 + x, kinks=[0.77])
    np.testing.assert_allclose(lo[1:], up[:-1])


# -- time marching ------------------------------------------------------------


def test_zero_excitation_gives_zero():
    p = _plain(exc=Excitation("tabulated", 0.5, times=(0.0, 0.5), values=(0.0, 0.0)))
    traj = solve_ibvp(p, Discretization(20, 50))
    assert np.all(traj.U == 0.0)
    assert np.all(extract_flux(traj, p, Discretization(20, 50)).values == 0.0)


def test_steady_flux_is_minus_one():
    p = _plain()
    disc = Discretization(37, 10)
    M, S = assemble(p, disc)
    x = np.linspace(0, 1, 38)
    U = np.tile(1 - x, (11, 1))
    fl = flux_from_nodes(U, np.zeros(11), M, S)
    np.testing.assert_allclose(fl[1:], -1.0, rtol=1e-13)


def test_unit_order_equals_classical_backward_euler():
    p = example1(1.0)
    disc = Discretization(40, 200)
    tau = disc.tau(p.T)
    M, S = assemble(p, disc)
    Md, Sd = _dense(M), _dense(S)
    A = Md / tau + Sd
    g = excitation_samples(p, disc)
    n = disc.n_space
    U = np.zeros(n + 1)
    ref = np.zeros(disc.n_time + 1)
    for k in range(1, disc.n_time + 1):
        old = U.copy()
        U = np.zeros(n + 1)
        U[0] = g[k]
        rhs = Md[1:n] @ old / tau - A[1:n, 0] * g[k]
        U[1:n] = np.linalg.solve(A[1:n, 1:n], rhs)
        ref[k] = -(A[0] @ U - Md[0] @ old / tau)
    traj = solve_ibvp(p, disc)
    np.testing.assert_allclose(traj.flux[1:], ref[1:], rtol=1e-10, atol=1e-12)


def test_near_unit_order_adds_no_scheme_gap():
    # the exact alpha = 0.999 and alpha = 1 fluxes already differ by ~1.24e-3 on the window;
    # the discrete pair must differ by that model gap and nothing more
    p1, p0 = example1(1.0), example1(0.999)
    e = eigenpairs(p1.q, p1.rho, 1.0, DD, 200)
    t = np.arange(600, 1001) * 1e-3
    ctrl = SeriesControl(K=200)
    gap = _rel(flux_series(e, 0.999, p1.excitation, t, ctrl), flux_series(e, 1.0, p1.excitation, t, ctrl))
    a = forward_flux(p0, REFERENCE_DISC, (0.6, 1.0)).values
    b = forward_flux(p1, REFERENCE_DISC, (0.6, 1.0)).values
    assert abs(_rel(a, b) - gap) <= 1e-4


def test_variational_and_difference_flux_converge():
    errs = []
    for n in (50, 100, 200):
        disc = Discretization(n, 1000)
        p = example1()
        traj = solve_ibvp(p, disc)
        a = extract_flux(traj, p, disc, (0.6, 1.0)).values
        b = extract_flux(traj, p, disc, (0.6, 1.0), method="difference").values
        errs.append(_rel(b, a))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 1.0) < 0.1)


def test_flux_recomputed_from_nodes():
    p = example2()
    traj = solve_ibvp(p, REFERENCE_DISC)
    b = cq_weights(p.alpha, REFERENCE_DISC.n_time, REFERENCE_DISC.tau(p.T))
    M, S = assemble(p, REFERENCE_DISC)
    fl = flux_from_nodes(traj.U, b, M, S)
    np.testing.assert_allclose(fl[1:], traj.flux[1:], rtol=1e-10, atol=1e-13)


def test_temporal_order_against_series():
    p = example1(0.5)
    e = eigenpairs(p.q, p.rho, 1.0, DD, 200)
    errs = []
    for N in (250, 500, 1000):
        disc = Discretization(400, N)
        tr = forward_flux(p, disc, (0.6, 1.0))
        ref = flux_series(e, p.alpha, p.excitation, tr.times, SeriesControl(K=200))
        errs.append(_rel(tr.values, ref))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((rates > 0.85) & (rates < 1.15))


def test_memory_effect_tail():
    # after the excitation stops the flux decays algebraically for alpha < 1, exponentially for alpha = 1
    ratios = {}
    for a in (0.5, 1.0):
        p = example1(a).with_(T=4.0)
        f = solve_ibvp(p, Discretization(100, 4000)).flux
        ratios[a] = abs(f[4000] / f[2000])
    assert ratios[0.5] > 0.2
    assert ratios[1.0] < 1e-6


@settings(max_examples=10, deadline=None)
@given(a=st.floats(0.05, 1.0), c=st.floats(0.2, 5.0))
def test_march_stays_bounded(a, c):
    p = _plain(alpha=a, rho=CoefficientField.constant(c), q=CoefficientField.constant(2.0))
    traj = solve_ibvp(p, Discretization(30, 100))
    assert np.all(np.isfinite(traj.U))
    assert np.max(np.abs(traj.U)) <= 1.5


def test_neumann_end_is_free():
    p = example2()
    traj = solve_ibvp(p, REFERENCE_DISC)
    assert np.any(traj.U[:, -1] != 0.0)
    traj_d = solve_ibvp(p.with_(bc=DD), REFERENCE_DISC)
    assert np.all(traj_d.U[:, -1] == 0.0)


def test_measurement_steps_and_window_validation():
    p = example1()
    steps = measurement_steps(p, REFERENCE_DISC, (0.6, 1.0))
    assert steps[0] == 600 and steps[-1] == 1000
    traj = solve_ibvp(p, Discretization(10, 20))
    with pytest.raises(InvalidInputError):
        extract_flux(traj, p, Discretization(10, 20), (0.5, 1.5))
    with pytest.raises(InvalidInputError):
        extract_flux(traj, p, Discretization(10, 20), method="spline")
