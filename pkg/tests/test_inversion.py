import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subdiff.coefficients import CoefficientField
from subdiff.errors import InvalidInputError
from subdiff.forward import assemble, solve_ibvp
from subdiff.inversion import (
    ForwardModel,
    LMConfig,
    LMHistory,
    LMRecord,
    UnknownVector,
    _direction_matrix,
    jacobian,
    lm_step,
    relative_q_error,
    residual_norm,
    run_lm,
    sensitivity_q,
    svd_diagnostics,
)
from subdiff.problem import Discretization, Excitation

from fixtures import REFERENCE_DISC, example1

SMALL = Discretization(40, 200)
WINDOW = (0.6, 1.0)


def q1(xi):
    return 10 * xi * (1 - xi) ** 2


def _template(alpha=0.75):
    return example1(alpha)


def _start(n_q=101, ell=1.1):
    return UnknownVector(np.zeros(n_q), ell)


def _perturbed_flux(problem, disc, h, eps):
    """Flux with the stiffness shifted by eps * (h u, v); S is linear in q."""
    M, S = assemble(problem, disc)
    Q = _direction_matrix(problem, disc, h)
    Sp = tuple(a + eps * b for a, b in zip(S, Q))
    return solve_ibvp(problem, disc, matrices=(M, Sp)).flux


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- unknowns and config ------------------------------------------------------


def test_projection_boxes():
    u = UnknownVector(np.array([-1.0, 2.0]), 20.0, 0.01).projected()
    np.testing.assert_array_equal(u.q_nodes, [0.0, 2.0])
    assert u.ell == 10.0 and u.rho == 0.1


def test_unknown_round_trip_and_validation():
    u = UnknownVector(np.linspace(0, 1, 5), 1.1, 1.2)
    assert UnknownVector.from_dict(u.to_dict()).to_dict() == u.to_dict()
    with pytest.raises(InvalidInputError):
        UnknownVector(np.array([1.0]), 1.0)
    with pytest.raises(InvalidInputError):
        UnknownVector(np.zeros(3), -1.0)
    with pytest.raises(InvalidInputError):
        UnknownVector.from_dict({"q_nodes": [0, 0], "ell": 1, "sigma": 2})


def test_config_betas_and_validation():
    c = LMConfig(0.1, 1000.0)
    bq, bl, br = c.betas(10)
    assert bq == pytest.approx(0.1 * 0.9**10) and bl == pytest.approx(1000 * 0.9**10)
    assert LMConfig.from_dict(c.to_dict()) == c
    for bad in (dict(beta_q0=0), dict(gamma_q=1.0), dict(norm="sup"), dict(stop="never"), dict(thin=0)):
        kw = dict(beta_q0=0.1, beta_ell0=1.0)
        kw.update(bad)
        with pytest.raises(InvalidInputError):
            LMConfig(**kw)
    with pytest.raises(InvalidInputError):
        LMConfig.from_dict({"beta_q0": 1, "beta_ell0": 1, "lambda": 3})


def test_relative_error_overlap():
    nodes = np.linspace(0, 1, 101)
    exact = UnknownVector(q1(nodes), 1.0)
    assert relative_q_error(exact, q1, 1.0) <= 5e-4  # interpolation: max|q"| h^2 / 8 over ||q|| ~ 0.5
    assert relative_q_error(UnknownVector(np.zeros(101), 1.0), q1, 1.0) == pytest.approx(1.0)
    # a longer iterate is compared on [0, 1] only
    longer = UnknownVector(q1(nodes * 1.2), 1.2)
    assert relative_q_error(longer, q1, 1.0) <= 5e-4


def test_history_selection():
    h = LMHistory()
    for k, (r, e) in enumerate([(3.0, 0.5), (1.0, 0.2), (0.5, 0.4)]):
        h.append(LMRecord(k, r, e, 1.0, math.nan, 1, 1, 1), _start(3, 1.0 + k))
    assert h.best_by_r == 2 and h.best_by_eq == 1
    assert h.best().ell == 2.0 and h.best("r").ell == 3.0


def test_residual_norm_trapezoid():
    t = np.linspace(0, 1, 11)
    w = np.full(11, 0.1)
    w[[0, -1]] = 0.05
    assert residual_norm(np.ones(11), np.zeros(11), w) == pytest.approx(1.0)


# -- forward model ------------------------------------------------------------


def test_model_window_and_thinning():
    m = ForwardModel(_template(), REFERENCE_DISC, WINDOW)
    assert len(m.steps) == 401 and m.times[0] == pytest.approx(0.6)
    assert m.weights.sum() == pytest.approx(0.4)
    mt = ForwardModel(_template(), REFERENCE_DISC, WINDOW, thin=10)
    assert len(mt.steps) == 41
    with pytest.raises(InvalidInputError):
        ForwardModel(_template(), REFERENCE_DISC, (0.3, 1.0))


def test_model_rho_frames():
    m_ref = ForwardModel(_template(), REFERENCE_DISC, WINDOW)
    m_phys = ForwardModel(_template(), REFERENCE_DISC, WINDOW, rho_frame="physical")
    u = _start()
    assert m_ref.problem(u).rho.breakpoints == (0.5,)
    assert m_phys.problem(u).rho.breakpoints[0] == pytest.approx(0.5 / 1.1)
    assert m_ref.problem(UnknownVector(np.zeros(5), 1.0, 2.0)).rho == CoefficientField.constant(2.0)


# -- sensitivities --------------------------------------------------------------


def test_sensitivity_zero_direction():
    p = _template().with_(ell=1.1, q=CoefficientField.nodal(np.zeros(101)))
    traj = solve_ibvp(p, REFERENCE_DISC)
    s = sensitivity_q(p, traj, np.zeros(101), REFERENCE_DISC, WINDOW)
    assert np.all(s.values == 0.0)


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 1000))
def test_sensitivity_superposition(seed):
    rng = np.random.default_rng(seed)
    p = _template().with_(ell=1.1, q=CoefficientField.nodal(np.zeros(11)))
    traj = solve_ibvp(p, SMALL)
    h1, h2 = rng.standard_normal(11), rng.standard_normal(11)
    s1 = sensitivity_q(p, traj, h1, SMALL).values
    s2 = sensitivity_q(p, traj, h2, SMALL).values
    s12 = sensitivity_q(p, traj, h1 + h2, SMALL).values
    assert np.max(np.abs(s12 - s1 - s2)) <= 1e-13 * np.max(np.abs(s12))


def test_sensitivity_hat_against_central_difference():
    p = _template().with_(ell=1.1, q=CoefficientField.nodal(np.zeros(101)))
    traj = solve_ibvp(p, REFERENCE_DISC)
    h = np.zeros(101)
    h[50] = 1.0
    s = sensitivity_q(p, traj, h, REFERENCE_DISC, WINDOW)
    eps = 1e-4
    m = np.arange(600, 1001)
    fd = (_perturbed_flux(p, REFERENCE_DISC, h, eps) - _perturbed_flux(p, REFERENCE_DISC, h, -eps))[m] / (2 * eps)
    assert _rel(s.values, fd) <= 1e-5


def test_zero_excitation_jacobian():
    g0 = Excitation("tabulated", 0.5, times=(0.0, 0.5), values=(0.0, 0.0))
    m = ForwardModel(_template().with_(excitation=g0), SMALL, WINDOW)
    J, F = jacobian(m, _start(11))
    assert np.all(J == 0.0) and np.all(F == 0.0)


@pytest.mark.parametrize("rho", [None, 1.2])
def test_modal_matches_marched_sensitivities(rho):
    m = ForwardModel(_template(), SMALL, WINDOW)
    u = UnknownVector(q1(np.linspace(0, 1, 21)), 1.05, rho)
    Ja, Fa = jacobian(m, u, method="modal")
    Jb, Fb = jacobian(m, u, method="sensitivity")
    np.testing.assert_array_equal(Fa, Fb)
    assert np.max(np.abs(Ja - Jb)) <= 1e-10 * np.max(np.abs(Jb))
    assert Ja.shape == (len(m.steps), 21 + 1 + (rho is not None))


def test_coarse_jacobian_against_central_differences():
    m = ForwardModel(_template(), REFERENCE_DISC, WINDOW)
    u = _start(11)
    J, _ = jacobian(m, u)
    p = m.problem(u)
    eps = 1e-4
    worst = 0.0
    for i in range(11):
        h = np.zeros(11)
        h[i] = 1.0
        fd = (_perturbed_flux(p, REFERENCE_DISC, h, eps) - _perturbed_flux(p, REFERENCE_DISC, h, -eps))[m.steps] / (2 * eps)
        worst = max(worst, _rel(J[:, i], fd))
    assert worst <= 1e-4


def test_length_column_is_forward_difference():
    m = ForwardModel(_template(), SMALL, WINDOW)
    u = _start(11)
    cfg = LMConfig(1, 1, delta_ell=1e-3)
    J, F = jacobian(m, u, cfg)
    ref = (m(UnknownVector(u.q_nodes, u.ell + 1e-3)) - F) / 1e-3
    np.testing.assert_allclose(J[:, -1], ref, rtol=1e-12)


def test_rank_one_svd():
    rng = np.random.default_rng(1)
    A = np.outer(rng.standard_normal(40), rng.standard_normal(12))
    s, sn = svd_diagnostics(A)
    assert sn[1] <= 1e-14 and np.all(np.diff(s) <= 0)


def test_truth_jacobian_decays():
    m = ForwardModel(_template(), REFERENCE_DISC, WINDOW)
    J, _ = jacobian(m, UnknownVector(q1(np.linspace(0, 1, 101)), 1.0))
    _, sn = svd_diagnostics(J[:, :101])
    assert np.all(sn[30:] <= 1e-12)


# -- LM steps -------------------------------------------------------------------


@pytest.mark.parametrize("norm", ["l2", "euclidean"])
def test_step_at_truth_is_stationary(norm):
    m = ForwardModel(_template(), REFERENCE_DISC, WINDOW)
    u = UnknownVector(q1(np.linspace(0, 1, 101)), 1.0)
    data = m(u)
    new, _, _ = lm_step(u, data, 0, LMConfig(0.1, 1000.0, norm=norm), m)
    assert np.linalg.norm(new.q_nodes - u.q_nodes) <= 1e-6
    assert abs(new.ell - u.ell) <= 1e-6


def test_huge_weights_freeze_the_step():
    m = ForwardModel(_template(), SMALL, WINDOW)
    u = _start(11)
    data = m(UnknownVector(q1(np.linspace(0, 1, 11)), 1.0))
    new, _, _ = lm_step(u, data, 0, LMConfig(1e12, 1e12), m)
    assert np.max(np.abs(new.q_nodes - u.q_nodes)) <= 1e-9
    assert abs(new.ell - u.ell) <= 1e-9


def test_step_rejects_wrong_data_length():
    m = ForwardModel(_template(), SMALL, WINDOW)
    with pytest.raises(InvalidInputError):
        lm_step(_start(11), np.zeros(3), 0, LMConfig(1, 1), m)


@pytest.mark.parametrize("norm", ["l2", "euclidean"])
def test_first_step_decreases_residual(norm):
    m = ForwardModel(_template(), REFERENCE_DISC, WINDOW)
    data = m(UnknownVector(q1(np.linspace(0, 1, 101)), 1.0))
    u0 = _start()
    F0 = m(u0)
    u1, _, _ = lm_step(u0, data, 0, LMConfig(0.1, 1000.0, norm=norm), m)
    assert residual_norm(m(u1), data, m.weights) < residual_norm(F0, data, m.weights)


def test_run_is_deterministic_and_recorded():
    m = ForwardModel(_template(), SMALL, WINDOW)
    data = m(UnknownVector(q1(np.linspace(0, 1, 11)), 1.0))
    cfg = LMConfig(0.1, 1000.0, max_iters=3, norm="euclidean")
    seen = []
    h1 = run_lm(_start(11), data, cfg, m, truth=(q1, 1.0), callback=seen.append)
    h2 = run_lm(_start(11), data, cfg, m, truth=(q1, 1.0))
    assert [r.k for r in h1.records] == [0, 1, 2, 3] and len(seen) == 4
    np.testing.assert_array_equal(h1.column("r"), h2.column("r"))
    np.testing.assert_array_equal(h1.iterates[-1].q_nodes, h2.iterates[-1].q_nodes)
    assert h1.records[0].e_q == pytest.approx(1.0)
    assert h1.last_jacobian_q.shape == (len(m.steps), 11)


def test_discrepancy_stop():
    m = ForwardModel(_template(), SMALL, WINDOW)
    data = m(UnknownVector(q1(np.linspace(0, 1, 11)), 1.0))
    cfg = LMConfig(0.1, 1000.0, max_iters=5, stop="discrepancy", tau_d=1.5)
    h = run_lm(_start(11), data, cfg, m, noise_level=1e3)
    assert h.stopped_by == "discrepancy" and len(h.records) == 1


def test_unknown_density_column():
    m = ForwardModel(_template(), SMALL, WINDOW)
    u = UnknownVector(np.zeros(11), 1.1, 1.2)
    data = m(UnknownVector(q1(np.linspace(0, 1, 11)), 1.0, 1.0))
    new, J, _ = lm_step(u, data, 0, LMConfig(0.1, 1000.0, beta_rho0=200.0, norm="euclidean"), m)
    assert J.shape[1] == 13 and new.rho is not None and new.rho != 1.2
