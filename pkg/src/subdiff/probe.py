"""Laplace-domain probes of the flux series.

For the flux of the Dirichlet problem,

    h^(p) = g^(p) [ v'(0) - sum_k w_k p^a / (p^a + lam_k) ],   w_k = phi_k'(0)^2 / lam_k,

which is analytic off the cut (-inf, 0].  Across the cut only the p^a factor
jumps, giving

    h^(R e^{i pi}) - h^(R e^{-i pi})
        = -2i sin(a pi) R^a g^(-R) sum_k phi_k'(0)^2 / (R^2a + 2 R^a cos(a pi) lam_k + lam_k^2).

For small R the sum tends to c = sum phi'^2 / lam^2, so the jump scales as
R^a: the log-log slope identifies the order a.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SolverFailure
from .problem import Excitation
from .sturm_liouville import EigenData

__all__ = [
    "LaplaceProbe",
    "MomentConstants",
    "PoleReport",
    "laplace_flux",
    "jump",
    "jump_by_limit",
    "estimate_order",
    "moment_constants",
    "pole_match_check",
    "expansion_remainder",
]

THETA_EPS = 1e-6


def _tail(eig: EigenData) -> float:
    if math.isfinite(eig.v_norm2):
        return eig.parseval_tail
    return eig.tail_bound


@dataclass
class LaplaceProbe:
    eig: EigenData
    alpha: float
    excitation: Excitation
    mu1: float | None = None
    tail: float = field(default=None)

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidInputError("alpha must lie in (0, 1]")
        lam1 = float(self.eig.lam[0])
        safe = (lam1 / 2.0) ** (1.0 / self.alpha)
        if self.mu1 is None:
            self.mu1 = safe
        if not (0 < self.mu1 <= safe * (1 + 1e-12)):
            raise InvalidInputError("mu1^alpha must not exceed lam_1 / 2")
        if self.tail is None:
            self.tail = _tail(self.eig)


def _ghat(excitation: Excitation, p):
    return excitation.laplace(p)


def laplace_flux(probe: LaplaceProbe, p) -> complex:
    """h^(p) with the principal branch of p^a; p must avoid (-inf, 0]."""
    p = complex(p)
    if p.imag == 0.0 and p.real <= 0.0:
        raise InvalidInputError("p lies on the branch cut; use jump() instead")
    e = probe.eig
    pa = cmath.exp(probe.alpha * cmath.log(p))
    s = np.sum(e.weights * pa / (pa + e.lam)) + pa * probe.tail
    v0 = e.v_prime_0 if math.isfinite(e.v_prime_0) else 0.0
    return complex(_ghat(probe.excitation, p) * (v0 - s))


def _jump_sum(probe: LaplaceProbe, R: float) -> complex:
    e = probe.eig
    a = probe.alpha
    Ra = R**a
    den = Ra * Ra + 2 * Ra * math.cos(a * math.pi) * e.lam + e.lam**2
    s = float(np.sum(e.phi_prime_0**2 / den)) + probe.tail
    return s


def jump_closed(probe: LaplaceProbe, R: float, ghat=None) -> complex:
    a = probe.alpha
    if a == 1.0:
        return 0j  # p^a is single-valued
    g = _ghat(probe.excitation, -R) if ghat is None else ghat
    return -2j * math.sin(a * math.pi) * R**a * g * _jump_sum(probe, R)


def jump_by_limit(probe: LaplaceProbe, R: float, eps: float = THETA_EPS) -> complex:
    """Difference across the cut from evaluations at angle pi - eps.

    Linear extrapolation over eps and 2 eps removes the O(eps) offset.
    """

    def diff(e):
        th = math.pi - e
        return laplace_flux(probe, R * cmath.exp(1j * th)) - laplace_flux(probe, R * cmath.exp(-1j * th))

    return 2 * diff(eps) - diff(2 * eps)


def jump(probe: LaplaceProbe, R: float, verify: bool = True, ghat=None) -> complex:
    """Closed-form cut jump at radius R in (0, mu1)."""
    if not (0.0 < R < probe.mu1):
        raise InvalidInputError(f"R must lie in (0, mu1={probe.mu1:.6g})")
    val = jump_closed(probe, R, ghat)
    if verify and ghat is None:
        lim = jump_by_limit(probe, R)
        if abs(lim - val) > 1e-6 * abs(val) + 1e-12:
            raise SolverFailure(f"cut jump mismatch at R={R}: {lim} vs {val}")
    return complex(val)


def estimate_order(probe: LaplaceProbe, R_grid, corrected: bool = True) -> float:
    """Order estimate from the log-log slope of |jump / (2 g^(-R))|.

    With ``corrected`` the known first correction factor
    1 - 2 cos(a pi) (c'/c) R^a (from the moment constants) is divided out,
    iterating on the estimate; otherwise the plain least-squares slope.
    """
    R = np.asarray(R_grid, dtype=float)
    if len(R) < 2 or np.any(R <= 0) or np.any(R >= probe.mu1):
        raise InvalidInputError("grid must lie in (0, mu1) with at least two points")
    g = np.array([_ghat(probe.excitation, -r) for r in R])
    if np.any(np.abs(g) == 0):
        raise InvalidInputError("g^(-R) vanishes on the grid; perturb the grid points")
    J = np.array([jump(probe, r, verify=False) for r in R])
    y = np.log(np.abs(J / (2 * g)))
    x = np.log(R)
    slope = float(np.polyfit(x, y, 1)[0])
    if corrected:
        mc = moment_constants(probe.eig)
        ratio = mc.c_prime / mc.c
        for _ in range(50):
            fac = 1.0 - 2.0 * math.cos(slope * math.pi) * ratio * R**slope
            new = float(np.polyfit(x, y - np.log(np.abs(fac)), 1)[0])
            if abs(new - slope) < 1e-14:
                slope = new
                break
            slope = new
    return slope


@dataclass(frozen=True)
class MomentConstants:
    c: float
    c_prime: float
    c_tail: float = 0.0
    c_prime_tail: float = 0.0


def moment_constants(eig: EigenData) -> MomentConstants:
    w = eig.phi_prime_0**2
    c = float(np.sum(w / eig.lam**2))
    cp = float(np.sum(w / eig.lam**3))
    assert cp <= c / eig.lam[0] * (1 + 1e-15)
    tail = _tail(eig)
    lamK = float(eig.lam[-1])
    return MomentConstants(c, cp, tail, tail / lamK)


def expansion_remainder(probe: LaplaceProbe, R: float) -> float:
    """|jump - (-2i sin R^a g (c - 2 cos c' R^a))| / (R^3a |g|)."""
    a = probe.alpha
    g = _ghat(probe.excitation, -R)
    mc = moment_constants(probe.eig)
    approx = -2j * math.sin(a * math.pi) * R**a * g * (mc.c + mc.c_tail - 2 * math.cos(a * math.pi) * mc.c_prime * R**a)
    return abs(jump(probe, R, verify=False) - approx) / (R ** (3 * a) * abs(g))


# ---------------------------------------------------------------------------
# pole matching


@dataclass
class PoleReport:
    poles: np.ndarray
    radii: np.ndarray
    residues_a: np.ndarray
    residues_b: np.ndarray

    @property
    def discrepancy(self) -> np.ndarray:
        return np.abs(self.residues_a - self.residues_b)


def _pole_sum(eig: EigenData, alpha: float, z):
    e1 = cmath.exp(1j * alpha * math.pi)
    e2 = cmath.exp(-1j * alpha * math.pi)
    z = np.asarray(z, dtype=complex)[..., None]
    return np.sum(eig.phi_prime_0**2 / ((z * e1 + eig.lam) * (z * e2 + eig.lam)), axis=-1)


def _poles(eig: EigenData, alpha: float):
    rot = cmath.exp(1j * (1 - alpha) * math.pi)
    return np.concatenate([eig.lam * rot, eig.lam * rot.conjugate()])


def pole_match_check(eigA: EigenData, eigB: EigenData, alpha: float, n_poles: int = 5,
                     n_nodes: int = 256) -> PoleReport:
    """Residues of both meromorphic sums around the first poles of eigA.

    Each circle is centred at lam_k e^{i(1-a)pi} with radius half the distance
    to the nearest other pole of eigA; a circle passing too close to any
    pole of either sum is shrunk (up to five times).
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidInputError("alpha must lie in (0, 1)")
    n = min(n_poles, len(eigA.lam))
    rot = cmath.exp(1j * (1 - alpha) * math.pi)
    centres = eigA.lam[:n] * rot
    allA = _poles(eigA, alpha)
    allB = _poles(eigB, alpha)
    theta = 2 * math.pi * np.arange(n_nodes) / n_nodes
    radii, ra, rb = np.empty(n), np.empty(n, complex), np.empty(n, complex)
    for k, c in enumerate(centres):
        others = np.abs(np.delete(allA, k) - c)
        r = 0.5 * float(others.min())
        for attempt in range(6):
            d = np.abs(np.abs(np.concatenate([allA, allB]) - c) - r)
            if d.min() > 1e-3 * r:
                break
            r *= 0.9
        else:
            raise SolverFailure(f"contour around pole {k + 1} keeps hitting poles")
        z = c + r * np.exp(1j * theta)
        dz = 1j * r * np.exp(1j * theta)
        ra[k] = np.mean(_pole_sum(eigA, alpha, z) * dz) / 1j
        rb[k] = np.mean(_pole_sum(eigB, alpha, z) * dz) / 1j
        radii[k] = r
    return PoleReport(centres, radii, ra, rb)
