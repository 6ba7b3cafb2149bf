"""Spectral data of  -phi'' + q phi = lam rho phi  on (0, ell).

Coefficients are frozen at cell midpoints on a grid whose nodes include every
coefficient jump, and each cell is crossed with its exact propagator.  The
k-th eigenvalue is the root of a continuous Pruefer angle (Dirichlet end:
theta = k pi, Neumann end: theta = (k - 1/2) pi), found by Brent's method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .coefficients import CoefficientField, aligned_grid
from .errors import InvalidInputError, SolverFailure
from .kernels import GAUSS3_WEIGHTS, sl_angle, sl_profile
from .problem import BCS, DD, DN

__all__ = [
    "SLGrid",
    "EigenData",
    "SteadyState",
    "make_grid",
    "eigenpairs",
    "steady_state",
    "lemma1_residuals",
]

DEFAULT_CELLS = 2000


@dataclass(frozen=True)
class SLGrid:
    x: np.ndarray  # nodes, x[0] = 0, x[-1] = ell
    q: np.ndarray  # cell values
    rho: np.ndarray

    @property
    def d(self) -> np.ndarray:
        return np.diff(self.x)

    @property
    def ell(self) -> float:
        return float(self.x[-1])

    def integrate(self, gauss_a, gauss_b=None, weight_rho=True) -> np.ndarray:
        """Cellwise 3-point Gauss integral of a*b (times rho) over the grid.

        ``gauss_a`` has shape (..., n_cells, 3); leading axes are kept.
        """
        prod = gauss_a * (gauss_a if gauss_b is None else gauss_b)
        w = self.d * (self.rho if weight_rho else 1.0)
        return np.einsum("...cj,j,c->...", prod, GAUSS3_WEIGHTS, w)


def make_grid(q: CoefficientField, rho: CoefficientField, ell: float, n_cells: int = DEFAULT_CELLS) -> SLGrid:
    if not (ell > 0 and math.isfinite(ell)):
        raise InvalidInputError("ell must be positive")
    q.check_potential()
    rho.check_density()
    x = aligned_grid(ell, n_cells, q, rho)
    mid = 0.5 * (x[1:] + x[:-1]) / ell
    return SLGrid(x, np.asarray(q(mid), dtype=float) * np.ones(len(mid)),
                  np.asarray(rho(mid), dtype=float) * np.ones(len(mid)))


@dataclass
class SteadyState:
    nodes: np.ndarray
    v_values: np.ndarray
    v_prime_0: float
    bc: str = DD
    gauss: np.ndarray = field(default=None, repr=False)
    slopes: np.ndarray = field(default=None, repr=False)
    grid: "SLGrid" = field(default=None, repr=False)

    def evaluate(self, x) -> np.ndarray:
        g = self.grid
        x = np.atleast_1d(np.asarray(x, dtype=float))
        c = np.clip(np.searchsorted(g.x, x, side="right") - 1, 0, len(g.d) - 1)
        C, S = _cs(-g.q[c], x - g.x[c])
        return C * self.v_values[c] + S * self.slopes[c]


@dataclass
class EigenData:
    """First K eigenpairs; ``phi_prime_0`` > 0 by convention.

    ``modes`` holds the normalized eigenfunctions at the grid nodes and
    ``gauss`` their values at the cellwise Gauss points, for quadrature.
    ``v_norm2`` is the rho-weighted squared norm of the steady state, which by
    Parseval equals the full series sum of (phi_k'(0) / lam_k)^2.
    """

    bc: str
    lam: np.ndarray
    phi_prime_0: np.ndarray
    v_prime_0: float
    truncation_K: int
    tail_bound: float
    grid: SLGrid | None = field(default=None, repr=False)
    modes: np.ndarray | None = field(default=None, repr=False)
    gauss: np.ndarray | None = field(default=None, repr=False)
    v_norm2: float = math.nan
    slopes: np.ndarray | None = field(default=None, repr=False)

    @property
    def pairs(self):
        return list(zip(self.lam.tolist(), self.phi_prime_0.tolist()))

    @property
    def weights(self) -> np.ndarray:
        """(phi_k'(0))^2 / lam_k, the flux series coefficients."""
        return self.phi_prime_0**2 / self.lam

    @property
    def moment_c(self) -> float:
        return float(np.sum(self.phi_prime_0**2 / self.lam**2))

    @property
    def parseval_tail(self) -> float:
        """Exact remainder of sum (phi'/lam)^2 beyond K (needs ``v_norm2``)."""
        return max(0.0, self.v_norm2 - self.moment_c)

    @classmethod
    def from_pairs(cls, lam, phi_prime_0, v_prime_0=math.nan, bc=DD) -> "EigenData":
        lam = np.asarray(lam, dtype=float)
        dphi = np.asarray(phi_prime_0, dtype=float)
        if lam.shape != dphi.shape or lam.ndim != 1 or len(lam) == 0:
            raise InvalidInputError("need matching nonempty eigenvalue and slope arrays")
        if np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
            raise InvalidInputError("eigenvalues must be positive and increasing")
        return cls(bc, lam, dphi, float(v_prime_0), len(lam), 0.0)

    def truncated(self, K: int) -> "EigenData":
        def cut(a):
            return None if a is None else a[:K]

        tb = self.tail_bound * self.truncation_K / K
        return EigenData(self.bc, self.lam[:K], self.phi_prime_0[:K], self.v_prime_0, K, tb,
                         self.grid, cut(self.modes), cut(self.gauss), self.v_norm2, cut(self.slopes))

    def evaluate(self, x, k=None) -> np.ndarray:
        """Eigenfunctions at physical points x; shape (K, len(x))."""
        if self.grid is None or self.modes is None:
            raise InvalidInputError("eigenfunctions were not stored")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        g = self.grid
        c = np.clip(np.searchsorted(g.x, x, side="right") - 1, 0, len(g.d) - 1)
        s = x - g.x[c]
        idx = slice(None) if k is None else np.atleast_1d(k)
        lam = self.lam[idx]
        kappa = lam[:, None] * g.rho[c][None, :] - g.q[c][None, :]
        C, S = _cs(kappa, s[None, :])
        Y = self.modes[idx][:, c]
        P = self.slopes[idx][:, c]
        return C * Y + S * P


def _cs(kappa, s):
    s = np.broadcast_to(s, kappa.shape)
    x = kappa * s * s
    C = np.empty_like(x)
    S = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs, ss = x[small], s[small]
    C[small] = 1 - xs / 2 + xs**2 / 24 - xs**3 / 720 + xs**4 / 40320
    S[small] = ss * (1 - xs / 6 + xs**2 / 120 - xs**3 / 5040 + xs**4 / 362880)
    pos = ~small & (kappa > 0)
    w = np.sqrt(kappa[pos])
    C[pos], S[pos] = np.cos(w * s[pos]), np.sin(w * s[pos]) / w
    neg = ~small & ~pos
    w = np.sqrt(-kappa[neg])
    C[neg], S[neg] = np.cosh(w * s[neg]), np.sinh(w * s[neg]) / w
    return C, S


def _weyl_tail(grid: SLGrid, K: int, bc: str) -> float:
    # (phi_k'(0))^2 / lam_k^2 ~ 2 sqrt(rho(0)) L / (k pi)^2 with L = int sqrt(rho)
    L = float(np.sum(np.sqrt(grid.rho) * grid.d))
    shift = 0.5 if bc == DN else 0.0
    return 2.0 * math.sqrt(grid.rho[0]) * L / (math.pi**2 * (K - shift))


def steady_state(q: CoefficientField, ell: float, bc: str = DD, grid: SLGrid | None = None,
                 rho: CoefficientField | None = None, n_cells: int = DEFAULT_CELLS) -> SteadyState:
    """Solve -v'' + q v = 0 with v(0) = 1 and v(ell) = 0 (or v'(ell) = 0)."""
    if bc not in BCS:
        raise InvalidInputError(f"bc must be one of {BCS}")
    if grid is None:
        grid = make_grid(q, rho or CoefficientField.constant(1.0), ell, n_cells)
    d = grid.d
    Y1, P1, G1 = sl_profile(0.0, grid.q, grid.rho, d, 1.0, 0.0)
    Y2, P2, G2 = sl_profile(0.0, grid.q, grid.rho, d, 0.0, 1.0)
    end1, end2 = (Y1[-1], Y2[-1]) if bc == DD else (P1[-1], P2[-1])
    # for q >= 0 the shooting solution from (0, 1) is increasing, so end2 > 0
    assert end2 > 0, "singular steady-state system"
    s = -end1 / end2
    return SteadyState(grid.x, Y1 + s * Y2, float(s), bc, G1 + s * G2, P1 + s * P2, grid)


def _bracket(grid, target, lo, k):
    L = float(np.sum(np.sqrt(grid.rho) * grid.d))
    qmax = float(np.max(grid.q / grid.rho))
    hi = max(lo * 1.5, ((k + 1) * math.pi / L) ** 2 + qmax + 1.0)
    for _ in range(200):
        if sl_angle(hi, grid.q, grid.rho, grid.d)[0] > target:
            return hi
        lo, hi = hi, 2.0 * hi
    raise SolverFailure(f"no bracket for eigenvalue {k}")


def eigenpairs(q: CoefficientField, rho: CoefficientField, ell: float, bc: str, K: int,
               n_cells: int | None = None) -> EigenData:
    """First K eigenpairs with rho-orthonormal eigenfunctions."""
    if bc not in BCS:
        raise InvalidInputError(f"bc must be one of {BCS}")
    if int(K) < 1:
        raise InvalidInputError("K must be at least 1")
    K = int(K)
    if n_cells is None:
        # top-mode phase per cell omega*d <= 0.15 keeps the Gauss rule accurate
        omega_ell = (K + 1) * math.pi * math.sqrt(rho.upper / rho.lower)
        n_cells = DEFAULT_CELLS * max(1, math.ceil(omega_ell / 0.15 / DEFAULT_CELLS))
    grid = make_grid(q, rho, ell, n_cells)
    d = grid.d
    lam = np.empty(K)
    lo = max(0.0, float(np.min(grid.q / grid.rho)))
    for k in range(1, K + 1):
        target = (k - (0.5 if bc == DN else 0.0)) * math.pi
        hi = _bracket(grid, target, lo, k)
        f = lambda x: sl_angle(x, grid.q, grid.rho, d)[0] - target  # noqa: E731
        flo = f(lo)
        if flo >= 0:
            # lo sits on the previous root; nudge it up
            lo = np.nextafter(lo, np.inf) * (1 + 1e-15)
            flo = f(lo)
            if flo >= 0:
                raise SolverFailure(f"eigenvalue {k} bracket lost")
        try:
            lam[k - 1] = brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        except (RuntimeError, ValueError) as exc:
            raise SolverFailure(f"eigenvalue {k} did not converge: {exc}") from None
        lo = lam[k - 1]
    if np.any(np.diff(lam) <= 0):
        raise SolverFailure("eigenvalues not strictly increasing")

    modes = np.empty((K, len(grid.x)))
    slopes = np.empty((K, len(grid.x)))
    gauss = np.empty((K, len(d), 3))
    dphi = np.empty(K)
    for k in range(K):
        Y, P, G = sl_profile(lam[k], grid.q, grid.rho, d, 0.0, 1.0)
        nrm = math.sqrt(float(grid.integrate(G)))
        modes[k], slopes[k], gauss[k] = Y / nrm, P / nrm, G / nrm
        dphi[k] = 1.0 / nrm
    v = steady_state(q, ell, bc, grid=grid)
    return EigenData(bc, lam, dphi, v.v_prime_0, K, _weyl_tail(grid, K, bc), grid, modes, gauss,
                     float(grid.integrate(v.gauss)), slopes)


def lemma1_residuals(eig: EigenData, v: SteadyState | None, q: CoefficientField,
                     rho: CoefficientField, ell: float) -> np.ndarray:
    """|<v, phi_k>_rho| compared with phi_k'(0) / lam_k, up to the sign.

    r_k = min(|<v,phi_k> - phi_k'(0)/lam_k|, |<v,phi_k> + phi_k'(0)/lam_k|).
    """
    if eig.bc != DD:
        raise InvalidInputError("residuals are defined for Dirichlet-Dirichlet data")
    if eig.grid is None or eig.gauss is None:
        raise InvalidInputError("eigen data lacks stored eigenfunctions")
    if abs(eig.grid.ell - ell) > 1e-12 * ell:
        raise InvalidInputError("eigen data were computed for a different ell")
    if v is None or v.gauss is None or len(v.nodes) != len(eig.grid.x):
        v = steady_state(q, ell, DD, grid=eig.grid)
    ip = eig.grid.integrate(eig.gauss, v.gauss[None])
    ratio = eig.phi_prime_0 / eig.lam
    return np.minimum(np.abs(ip - ratio), np.abs(ip + ratio))
