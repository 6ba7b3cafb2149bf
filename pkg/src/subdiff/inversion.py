"""Levenberg-Marquardt recovery of (q, ell[, rho]) from windowed flux data.

The potential is a nodal field on the reference interval; the physical
potential on [0, ell] is q(x / ell).  The density is either fixed (taken
from the problem template) or an unknown constant.

The q-block of the Jacobian is produced in modal form.  With the generalized
eigenpairs S_II V = M_II V diag(lam), V^T M_II V = I of the discrete
operator on the free nodes, the sensitivity equation

    M dbar^a W + S W = -Q_i U,     W = 0 at x = 0,

decouples into scalar convolution-quadrature recurrences whose solutions are
discrete convolutions with the resolvent kernels K_m of 1/(b(zeta) + lam_m).
The boundary flux of W then needs the modal loads f and K * f only, and the
convolutions are done for all nodal directions at once by FFT.  This is the
same linear algebra as marching the sensitivity equation per direction
(``sensitivity_q``), but costs one eigendecomposition instead of n_q solves.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla

from ._accel import max_workers
from .coefficients import CoefficientField
from .errors import InvalidInputError, SolverFailure
from .forward import assemble, cq_weights, free_count, solve_ibvp, weighted_mass, measurement_steps
from .kernels import resolvent_kernels
from .problem import Discretization, FluxTrace, ProblemSpec, window_mask

__all__ = [
    "UnknownVector",
    "LMConfig",
    "LMRecord",
    "LMHistory",
    "ForwardModel",
    "sensitivity_q",
    "jacobian",
    "lm_step",
    "run_lm",
    "svd_diagnostics",
    "relative_q_error",
    "residual_norm",
]

ELL_BOX = (0.1, 10.0)
RHO_BOX = (0.1, 10.0)
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class UnknownVector:
    q_nodes: np.ndarray
    ell: float
    rho: Optional[float] = None

    def __post_init__(self):
        q = np.array(self.q_nodes, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "q_nodes", q)
        object.__setattr__(self, "ell", float(self.ell))
        if self.rho is not None:
            object.__setattr__(self, "rho", float(self.rho))
        if q.ndim != 1 or len(q) < 2 or not np.all(np.isfinite(q)):
            raise InvalidInputError("q_nodes must be a finite vector with at least two entries")
        if not (self.ell > 0 and math.isfinite(self.ell)):
            raise InvalidInputError("ell must be positive")
        if self.rho is not None and not (self.rho > 0 and math.isfinite(self.rho)):
            raise InvalidInputError("rho must be positive")

    @property
    def n_q(self) -> int:
        return len(self.q_nodes)

    @property
    def q_field(self) -> CoefficientField:
        return CoefficientField.nodal(self.q_nodes)

    def projected(self) -> "UnknownVector":
        rho = None if self.rho is None else float(np.clip(self.rho, *RHO_BOX))
        return UnknownVector(np.maximum(self.q_nodes, 0.0), float(np.clip(self.ell, *ELL_BOX)), rho)

    def to_dict(self) -> dict:
        d = {"q_nodes": [float(v) for v in self.q_nodes], "ell": self.ell}
        if self.rho is not None:
            d["rho"] = self.rho
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UnknownVector":
        extra = set(d) - {"q_nodes", "ell", "rho"}
        if extra:
            raise InvalidInputError(f"unknown keys {sorted(extra)}")
        try:
            return cls(np.asarray(d["q_nodes"], dtype=float), d["ell"], d.get("rho"))
        except KeyError as exc:
            raise InvalidInputError(f"missing {exc}") from None


@dataclass(frozen=True)
class LMConfig:
    beta_q0: float
    beta_ell0: float
    gamma_q: float = 0.9
    gamma_ell: float = 0.9
    mu: float = 1e-9
    beta_rho0: float = 1.0
    gamma_rho: float = 0.9
    max_iters: int = 60
    delta_ell: float = 1e-3
    delta_rho: float = 1e-3
    stop: str = "max_iters"
    tau_d: float = 1.5
    thin: int = 1
    norm: str = "l2"

    def __post_init__(self):
        for name in ("beta_q0", "beta_ell0", "beta_rho0"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("gamma_q", "gamma_ell", "gamma_rho"):
            if not 0 < getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must lie in (0, 1)")
        if self.mu < 0 or self.max_iters < 0 or self.delta_ell <= 0 or self.delta_rho <= 0:
            raise InvalidInputError("mu, max_iters >= 0 and positive difference steps required")
        if self.stop not in ("max_iters", "discrepancy"):
            raise InvalidInputError(f"unknown stop rule {self.stop!r}")
        if self.norm not in ("l2", "euclidean"):
            raise InvalidInputError(f"unknown norm {self.norm!r}")
        if int(self.thin) < 1:
            raise InvalidInputError("thin must be >= 1")

    def betas(self, k: int):
        return (self.beta_q0 * self.gamma_q**k, self.beta_ell0 * self.gamma_ell**k,
                self.beta_rho0 * self.gamma_rho**k)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "LMConfig":
        names = set(cls.__dataclass_fields__)
        extra = set(d) - names
        if extra:
            raise InvalidInputError(f"unknown lm keys {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidInputError(str(exc)) from None


@dataclass
class LMRecord:
    k: int
    r: float
    e_q: float
    ell: float
    rho: float
    beta_q: float
    beta_ell: float
    beta_rho: float


@dataclass
class LMHistory:
    records: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    diverged: bool = False
    stopped_by: str = "max_iters"
    last_jacobian_q: Optional[np.ndarray] = field(default=None, repr=False)

    def append(self, rec: LMRecord, state: UnknownVector):
        self.records.append(rec)
        self.iterates.append(state)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def best_by_r(self) -> int:
        return int(np.nanargmin(self.column("r")))

    @property
    def best_by_eq(self) -> int:
        e = self.column("e_q")
        if np.all(np.isnan(e)):
            return self.best_by_r
        return int(np.nanargmin(e))

    def best(self, by: str = "e_q") -> UnknownVector:
        return self.iterates[self.best_by_eq if by == "e_q" else self.best_by_r]


# ---------------------------------------------------------------------------
# forward model


class ForwardModel:
    """Maps unknown vectors to windowed flux samples on a fixed discretization."""

    def __init__(self, template: ProblemSpec, disc: Discretization, window, thin: int = 1,
                 rho_frame: str = "reference"):
        if rho_frame not in ("reference", "physical"):
            raise InvalidInputError(f"unknown rho frame {rho_frame!r}")
        self.rho_frame = rho_frame
        self.template = template
        self.disc = disc
        self.window = tuple(float(w) for w in window)
        t0, t1 = self.window
        if not (template.excitation.support_end < t0 <= t1 <= template.T * (1 + 1e-12)):
            raise InvalidInputError("window must lie in (support_end, T]")
        steps = measurement_steps(template, disc, self.window)
        self.steps = steps[:: int(thin)]
        tau = disc.tau(template.T)
        self.times = self.steps * tau
        self.weights = _trapezoid_weights(self.times)

    def problem(self, u: UnknownVector) -> ProblemSpec:
        if u.rho is not None:
            rho = CoefficientField.constant(u.rho)
        elif self.rho_frame == "physical":
            rho = _rescale_breakpoints(self.template.rho, self.template.ell / u.ell)
        else:
            rho = self.template.rho
        return self.template.with_(q=u.q_field, ell=u.ell, rho=rho)

    def solve(self, u: UnknownVector):
        return solve_ibvp(self.problem(u), self.disc)

    def __call__(self, u: UnknownVector) -> np.ndarray:
        return self.solve(u).flux[self.steps]

    def trace(self, u: UnknownVector) -> FluxTrace:
        return FluxTrace(self.times, self(u), self.window)


def _rescale_breakpoints(f: CoefficientField, factor: float) -> CoefficientField:
    """Keep the physical position of piecewise-constant jumps when ell changes."""
    if f.kind != "piecewise_constant":
        return f
    bp = np.asarray(f.breakpoints) * factor
    keep = bp < 1.0
    vals = np.asarray(f.values)[: int(keep.sum()) + 1]
    if not keep.any():
        return CoefficientField.constant(vals[0])
    return CoefficientField.piecewise(bp[keep], vals)


def _trapezoid_weights(t: np.ndarray) -> np.ndarray:
    if len(t) < 2:
        return np.ones(len(t))
    w = np.zeros(len(t))
    d = np.diff(t)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def _space_weights(n_q: int, ell: float) -> np.ndarray:
    return ell * _trapezoid_weights(np.linspace(0.0, 1.0, n_q))


def residual_norm(values, data, weights) -> float:
    d = np.asarray(values) - np.asarray(data)
    return float(math.sqrt(np.sum(weights * d * d)))


# ---------------------------------------------------------------------------
# sensitivities


def _hat(n_q: int, i: int):
    nodes = np.linspace(0.0, 1.0, n_q)
    e = np.zeros(n_q)
    e[i] = 1.0
    return lambda xi: np.interp(xi, nodes, e)


def _direction_matrix(problem: ProblemSpec, disc: Discretization, h_nodes) -> tuple:
    """Tridiagonal matrix of int h(x/ell) phi_a phi_b for a nodal direction h."""
    ell = problem.ell
    h_nodes = np.asarray(h_nodes, dtype=float)
    ref = np.linspace(0.0, 1.0, len(h_nodes))
    nodes = np.linspace(0.0, ell, disc.n_space + 1)
    return weighted_mass(nodes, lambda x: np.interp(x / ell, ref, h_nodes), ell * ref[1:-1])


def _tri_apply(T, U):
    """Apply a (lower, diag, upper) matrix to every row of U (rows are time levels)."""
    lo, di, up = T
    out = di[None, :] * U
    out[:, 1:] += lo[1:][None, :] * U[:, :-1]
    out[:, :-1] += up[:-1][None, :] * U[:, 1:]
    return out


def sensitivity_q(problem: ProblemSpec, traj, direction, disc: Discretization, window=None,
                  matrices=None) -> FluxTrace:
    """Flux of w solving the linearized scheme with load -(h u, phi_i) and w(0) = 0."""
    direction = np.asarray(direction, dtype=float)
    Qh = _direction_matrix(problem, disc, direction)
    load = -_tri_apply(Qh, traj.U)
    sol = solve_ibvp(problem, disc, source=load, zero_boundary=True, matrices=matrices)
    mask = window_mask(sol.times, window or (0.0, problem.T))
    return FluxTrace(sol.times[mask], sol.flux[mask], window or (0.0, problem.T))


@dataclass
class _Modal:
    lam: np.ndarray
    V: np.ndarray  # (n_free, n_modes), M-orthonormal
    a: np.ndarray  # M_{0,I} V
    beta: np.ndarray  # S_{0,I} V - lam * a


def _modal(problem: ProblemSpec, disc: Discretization, matrices=None) -> _Modal:
    M, S = matrices if matrices is not None else assemble(problem, disc)
    m = free_count(problem, disc)
    idx = slice(1, m + 1)

    def dense(T):
        lo, di, up = (np.asarray(x)[idx] for x in T)
        A = np.diag(di)
        A += np.diag(lo[1:], -1) + np.diag(up[:-1], 1)
        return A

    lam, V = sla.eigh(dense(S), dense(M))
    a = M[2][0] * V[0]
    s = S[2][0] * V[0]
    return _Modal(lam, V, a, s - lam * a)


def _fft_len(n: int) -> int:
    return 1 << int(math.ceil(math.log2(2 * n)))


def _q_block_modal(problem: ProblemSpec, disc: Discretization, traj, n_q: int, steps,
                   matrices=None, chunk: int = 16) -> np.ndarray:
    M, S = matrices if matrices is not None else assemble(problem, disc)
    mod = _modal(problem, disc, (M, S))
    N = disc.n_time
    b = cq_weights(problem.alpha, N, disc.tau(problem.T))
    K = resolvent_kernels(b, mod.lam)  # (modes, N + 1)
    L = _fft_len(N + 1)
    Hhat = np.fft.rfft(mod.beta[:, None] * K, L, axis=1)
    m = free_count(problem, disc)
    U = traj.U
    J = np.empty((len(steps), n_q))
    dirs = np.eye(n_q)

    def block(cols):
        out = np.empty((len(steps), len(cols)))
        for j, i in enumerate(cols):
            Qi = _direction_matrix(problem, disc, dirs[i])
            QU = _tri_apply(Qi, U)  # (N + 1, n_nodes)
            f = -(QU[:, 1 : m + 1] @ mod.V)  # (N + 1, modes)
            fhat = np.fft.rfft(f, L, axis=0)
            conv = np.fft.irfft((fhat * Hhat.T).sum(axis=1), L)[: N + 1]
            col = -(f @ mod.a) - conv - QU[:, 0]
            out[:, j] = col[steps]
        return out

    groups = [list(range(s, min(s + chunk, n_q))) for s in range(0, n_q, chunk)]
    workers = min(max_workers(), len(groups))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(block, groups))
    else:
        parts = [block(g) for g in groups]
    for g, p in zip(groups, parts):
        J[:, g] = p
    return J


def _q_block_sensitivity(problem, disc, traj, n_q, steps, matrices=None):
    M, S = matrices if matrices is not None else assemble(problem, disc)
    dirs = np.eye(n_q)

    def col(i):
        return sensitivity_q(problem, traj, dirs[i], disc, matrices=(M, S)).values[steps]

    workers = min(max_workers(), n_q)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            cols = list(ex.map(col, range(n_q)))
    else:
        cols = [col(i) for i in range(n_q)]
    return np.column_stack(cols)


def jacobian(model: ForwardModel, u: UnknownVector, config: LMConfig | None = None, method: str = "modal",
             base=None) -> tuple:
    """Jacobian of the windowed flux in the unknowns.

    Returns ``(J, F)`` with F the flux samples at ``u``; columns are the
    q-nodes, then ell, then rho when it is unknown.  ``base`` may pass the
    trajectory at ``u`` when it is already available.
    """
    cfg = config or LMConfig(1.0, 1.0)
    if method not in ("modal", "sensitivity"):
        raise InvalidInputError(f"unknown jacobian method {method!r}")
    problem = model.problem(u)
    matrices = assemble(problem, model.disc)

    scalar = [("ell", replace(u, ell=u.ell + cfg.delta_ell), cfg.delta_ell)]
    if u.rho is not None:
        scalar.append(("rho", replace(u, rho=u.rho + cfg.delta_rho), cfg.delta_rho))

    def shifted(item):
        return model(item[1])

    workers = min(max_workers(), len(scalar) + 1)
    with ThreadPoolExecutor(max(workers, 1)) as ex:
        fut_base = None if base is not None else ex.submit(solve_ibvp, problem, model.disc, None, False, matrices)
        fut_shift = [ex.submit(shifted, s) for s in scalar]
        traj = base if base is not None else fut_base.result()
        shifted_vals = [f.result() for f in fut_shift]
    F = traj.flux[model.steps]
    if method == "modal":
        Jq = _q_block_modal(problem, model.disc, traj, u.n_q, model.steps, matrices)
    else:
        Jq = _q_block_sensitivity(problem, model.disc, traj, u.n_q, model.steps, matrices)
    cols = [Jq] + [((v - F) / s[2])[:, None] for v, s in zip(shifted_vals, scalar)]
    return np.hstack(cols), F


def svd_diagnostics(Jq) -> tuple:
    """Singular values (descending) and the same values divided by the largest."""
    s = sla.svdvals(np.asarray(Jq, dtype=float))
    return s, s / s[0] if s[0] > 0 else s


# ---------------------------------------------------------------------------
# LM


def relative_q_error(u: UnknownVector, q_true, ell_true: float, n: int = 1000) -> float:
    """Relative L2 error on the physical overlap [0, min(ell, ell_true)].

    ``q_true`` is a callable of the reference coordinate.  The denominator is
    the full norm of the true potential on [0, ell_true].
    """
    L = min(u.ell, ell_true)
    x = np.linspace(0.0, L, n)
    qk = u.q_field(x / u.ell)
    qt = np.asarray(q_true(x / ell_true), dtype=float)
    num = np.trapezoid((qk - qt) ** 2, x)
    xt = np.linspace(0.0, ell_true, n)
    den = np.trapezoid(np.asarray(q_true(xt / ell_true), dtype=float) ** 2, xt)
    return float(math.sqrt(num / den)) if den > 0 else float(math.sqrt(num))


def _normal_solve(A, rhs):
    try:
        return sla.cho_solve(sla.cho_factor(A), rhs)
    except (np.linalg.LinAlgError, ValueError):
        pass
    s1 = sla.svdvals(A)[0]
    A2 = A + 1e-12 * s1 * s1 * np.eye(len(A))
    try:
        return sla.cho_solve(sla.cho_factor(A2), rhs)
    except (np.linalg.LinAlgError, ValueError):
        raise SolverFailure("LM normal equations are not positive definite") from None


def lm_step(u: UnknownVector, data, k: int, config: LMConfig, model: ForwardModel,
            J=None, F=None, method: str = "modal") -> tuple:
    """One exact minimization of the linearized Tikhonov functional at iteration k.

    Returns ``(new_state, J, F)``; the new state is projected onto the boxes.
    """
    data = np.asarray(data, dtype=float)
    if data.shape != model.steps.shape:
        raise InvalidInputError("data length does not match the measurement window")
    if J is None or F is None:
        J, F = jacobian(model, u, config, method)
    bq, bl, br = config.betas(k)
    if config.norm == "l2":
        wt, wq = model.weights, _space_weights(u.n_q, u.ell)
    else:
        wt, wq = np.ones(len(model.steps)), np.ones(u.n_q)
    nq = u.n_q
    Jw = J * wt[:, None]
    A = J.T @ Jw
    rhs = -(Jw.T @ (F - data))
    reg = np.concatenate([bq * wq, [bl], [br] if u.rho is not None else []])
    A[np.diag_indices_from(A)] += reg
    A[np.arange(nq), np.arange(nq)] += config.mu * wq
    rhs[:nq] -= config.mu * wq * u.q_nodes
    delta = _normal_solve(A, rhs)
    rho = None if u.rho is None else u.rho + delta[nq + 1]
    return UnknownVector(u.q_nodes + delta[:nq], u.ell + delta[nq], rho).projected(), J, F


def run_lm(initial: UnknownVector, data, config: LMConfig, model: ForwardModel, truth=None,
           method: str = "modal", noise_level: float = 0.0, callback=None) -> LMHistory:
    """Iterate ``lm_step`` with geometric decay of the weights.

    ``truth`` is an optional ``(q_callable, ell_true)`` pair for e_q.  With
    ``config.stop == 'discrepancy'`` the loop ends once r <= tau_d * delta,
    delta being the L2 size of the noise (passed as ``noise_level``).
    """
    data = np.asarray(data, dtype=float)
    hist = LMHistory()
    u = initial.projected()
    wt = model.weights

    def record(k, state, F):
        r = residual_norm(F, data, wt)
        e = relative_q_error(state, truth[0], truth[1]) if truth is not None else math.nan
        bq, bl, br = config.betas(k)
        hist.append(LMRecord(k, r, e, state.ell, state.rho if state.rho is not None else math.nan,
                             bq, bl, br), state)
        if callback is not None:
            callback(hist.records[-1])
        return r

    traj = model.solve(u)
    F = traj.flux[model.steps]
    r0 = record(0, u, F)
    for k in range(config.max_iters):
        if config.stop == "discrepancy" and hist.records[-1].r <= config.tau_d * noise_level:
            hist.stopped_by = "discrepancy"
            break
        J, F = jacobian(model, u, config, method, base=traj)
        u_new, _, _ = lm_step(u, data, k, config, model, J=J, F=F)
        hist.last_jacobian_q = J[:, : u.n_q]
        try:
            traj = model.solve(u_new)
        except (AssertionError, FloatingPointError, InvalidInputError):
            hist.diverged = True
            hist.stopped_by = "divergence"
            break
        F = traj.flux[model.steps]
        u = u_new
        r = record(k + 1, u, F)
        if not math.isfinite(r) or r > DIVERGENCE_FACTOR * max(r0, 1e-300):
            hist.diverged = True
            hist.stopped_by = "divergence"
            break
    return hist
