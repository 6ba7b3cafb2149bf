"""P1 finite elements in space, backward-Euler convolution quadrature in time."""
from __future__ import annotations

import math

import numpy as np

from .coefficients import CoefficientField
from .errors import InvalidInputError
from .kernels import GAUSS3_NODES, GAUSS3_WEIGHTS, cq_march
from .problem import DD, Discretization, FluxTrace, ProblemSpec, SolutionTrajectory, window_mask

__all__ = [
    "cq_weights",
    "assemble",
    "weighted_mass",
    "solve_ibvp",
    "extract_flux",
    "flux_from_nodes",
    "free_count",
    "forward_flux",
    "measurement_steps",
    "excitation_samples",
]


def cq_weights(alpha: float, n_time: int, tau: float) -> np.ndarray:
    """Coefficients of tau^-alpha (1 - zeta)^alpha up to zeta^n_time."""
    if not (0.0 < alpha <= 1.0):
        raise InvalidInputError(f"alpha must lie in (0, 1], got {alpha}")
    b = np.empty(n_time + 1)
    b[0] = tau**-alpha
    for j in range(1, n_time + 1):
        b[j] = b[j - 1] * (j - 1 - alpha) / j
    return b


def _subintervals(nodes: np.ndarray, kinks: np.ndarray):
    """Split every cell at interior kinks; returns (cell, a, b) arrays."""
    pts = np.union1d(nodes, kinks[(kinks > nodes[0]) & (kinks < nodes[-1])])
    # drop kinks that coincide with a node up to rounding
    keep = np.ones(len(pts), bool)
    tol = 1e-12 * (nodes[-1] - nodes[0])
    near = np.abs(pts[:, None] - nodes[None, :]).min(axis=1) <= tol
    isnode = np.isin(pts, nodes)
    keep &= isnode | ~near
    pts = pts[keep]
    a, b = pts[:-1], pts[1:]
    cell = np.clip(np.searchsorted(nodes, 0.5 * (a + b)) - 1, 0, len(nodes) - 2)
    return cell, a, b


def weighted_mass(nodes: np.ndarray, coef, kinks=()):
    """Tridiagonal matrix of int coef * phi_i phi_j on a P1 mesh.

    ``coef`` is a callable of the physical coordinate that is polynomial of
    degree <= 1 between consecutive ``kinks`` (integrated exactly).
    """
    cell, a, b = _subintervals(nodes, np.asarray(kinks, dtype=float))
    xl, xr = nodes[cell], nodes[cell + 1]
    h = xr - xl
    w = (b - a)[:, None] * GAUSS3_WEIGHTS[None, :]
    xg = a[:, None] + (b - a)[:, None] * GAUSS3_NODES[None, :]
    c = np.asarray(coef(xg), dtype=float) * np.ones_like(xg)
    L = (xr[:, None] - xg) / h[:, None]
    R = (xg - xl[:, None]) / h[:, None]
    n1 = len(nodes)
    diag = np.zeros(n1)
    off = np.zeros(n1 - 1)
    np.add.at(diag, cell, np.sum(w * c * L * L, axis=1))
    np.add.at(diag, cell + 1, np.sum(w * c * R * R, axis=1))
    np.add.at(off, cell, np.sum(w * c * L * R, axis=1))
    lower = np.concatenate(([0.0], off))
    upper = np.concatenate((off, [0.0]))
    return lower, diag, upper


def _field_kinks(f: CoefficientField, ell: float):
    return ell * f.kinks()


def assemble(problem: ProblemSpec, disc: Discretization):
    """(mass_rho, stiffness_q) as (lower, diag, upper) triplets."""
    ell = problem.ell
    nodes = np.linspace(0.0, ell, disc.n_space + 1)
    rho, q = problem.rho, problem.q
    M = weighted_mass(nodes, lambda x: rho(x / ell), _field_kinks(rho, ell))
    Q = weighted_mass(nodes, lambda x: q(x / ell), _field_kinks(q, ell))
    h = np.diff(nodes)
    d = np.zeros(len(nodes))
    d[:-1] += 1 / h
    d[1:] += 1 / h
    off = -1 / h
    S = (Q[0] + np.concatenate(([0.0], off)), Q[1] + d, Q[2] + np.concatenate((off, [0.0])))
    return M, S


def free_count(problem: ProblemSpec, disc: Discretization) -> int:
    return disc.n_space - 1 if problem.bc == DD else disc.n_space


def excitation_samples(problem: ProblemSpec, disc: Discretization) -> np.ndarray:
    t = np.arange(disc.n_time + 1) * disc.tau(problem.T)
    g = np.asarray(problem.excitation(t), dtype=float)
    g[0] = 0.0
    return g


def solve_ibvp(problem: ProblemSpec, disc: Discretization, source=None, zero_boundary=False,
               matrices=None) -> SolutionTrajectory:
    """March the scheme; ``source`` is an optional (n_time+1, n_nodes) load."""
    tau = disc.tau(problem.T)
    b = cq_weights(problem.alpha, disc.n_time, tau)
    M, S = matrices if matrices is not None else assemble(problem, disc)
    g = np.zeros(disc.n_time + 1) if zero_boundary else excitation_samples(problem, disc)
    U, flux = cq_march(b, M, S, g, free_count(problem, disc), source)
    if not np.all(np.isfinite(U)):
        raise AssertionError("non-finite values in the time march")
    times = np.arange(disc.n_time + 1) * tau
    nodes = np.linspace(0.0, problem.ell, disc.n_space + 1)
    return SolutionTrajectory(U, times, nodes, flux)


def flux_from_nodes(U, b, M, S, source0=None) -> np.ndarray:
    """Variational flux at x = 0 recomputed from the nodal history."""
    N = U.shape[0] - 1
    D0 = np.convolve(b, U[:, 0])[: N + 1]
    D1 = np.convolve(b, U[:, 1])[: N + 1]
    fl = -(M[1][0] * D0 + M[2][0] * D1 + S[1][0] * U[:, 0] + S[2][0] * U[:, 1])
    if source0 is not None:
        fl = fl + source0
    fl[0] = 0.0
    return fl


def extract_flux(traj: SolutionTrajectory, problem: ProblemSpec, disc: Discretization,
                 window=None, method: str = "variational") -> FluxTrace:
    """Boundary flux u_x(0, t_n) for the steps inside ``window``.

    ``variational`` tests the discrete equation with the boundary hat function;
    ``difference`` is the one-sided quotient (U_1 - g) / h kept for diagnostics.
    """
    T = problem.T
    if window is None:
        window = (0.0, T)
    t0, t1 = window
    if not (0.0 <= t0 <= t1 <= T * (1 + 1e-12)):
        raise InvalidInputError(f"window {window} outside [0, {T}]")
    if method == "variational":
        if traj.flux is not None:
            vals = traj.flux
        else:
            b = cq_weights(problem.alpha, disc.n_time, disc.tau(T))
            M, S = assemble(problem, disc)
            vals = flux_from_nodes(traj.U, b, M, S)
    elif method == "difference":
        vals = (traj.U[:, 1] - traj.U[:, 0]) / disc.h(problem.ell)
    else:
        raise InvalidInputError(f"unknown flux method {method!r}")
    mask = window_mask(traj.times, window)
    return FluxTrace(traj.times[mask], np.asarray(vals)[mask], (t0, t1))


def forward_flux(problem: ProblemSpec, disc: Discretization, window) -> FluxTrace:
    return extract_flux(solve_ibvp(problem, disc), problem, disc, window)


def measurement_steps(problem: ProblemSpec, disc: Discretization, window) -> np.ndarray:
    t = np.arange(disc.n_time + 1) * disc.tau(problem.T)
    return np.nonzero(window_mask(t, window))[0]


def _check_finite(x):
    if not math.isfinite(x):
        raise InvalidInputError("non-finite value")
