"""Eigenfunction-series representation of the solution and its boundary flux.

With w_k = (phi_k'(0))^2 / lam_k and the distributional derivative g' of the
boundary datum,

    u_x(0, t) = v'(0) g(t) - sum_k w_k  int_0^t E_{a,1}(-lam_k (t-s)^a) g'(s) ds.

Every excitation here is piecewise linear, so the time integrals are closed
form: a jump J at s contributes J E_{a,1}(-lam (t-s)^a) and a slope k on
[s0, s1] contributes k [F(t-s0) - F(t-s1)] with F(u) = u E_{a,2}(-lam u^a).

Truncation after K modes is compensated with the large-lam limit of the mode
integral, lam * int E g' -> D^a g (the Caputo derivative of g), multiplied by
the exact remainder of sum (phi_k'(0) / lam_k)^2 (a Parseval identity with the
steady state).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma, rgamma, roots_legendre

from .errors import InvalidInputError, TruncationError
from .mittag_leffler import ml_array
from .problem import Excitation
from .sturm_liouville import EigenData, steady_state

__all__ = [
    "SeriesControl",
    "mode_integrals",
    "flux_series",
    "solution_series",
    "analytic_extension_flux",
    "caputo_of_excitation",
    "graded_gauss",
]


@dataclass(frozen=True)
class SeriesControl:
    K: int = 200
    quad_points: int = 64
    tail_tol: float = 1e-8
    tail_correction: bool = True
    method: str = "closed"  # or "quadrature"

    def __post_init__(self):
        if self.K < 1 or self.quad_points < 16 or not self.tail_tol > 0:
            raise InvalidInputError("invalid series control")
        if self.method not in ("closed", "quadrature"):
            raise InvalidInputError(f"unknown method {self.method!r}")


def _F(alpha, lam, u):
    """int_0^u E_{a,1}(-lam r^a) dr for u >= 0 (vectorized over the outer grid)."""
    out = np.zeros(np.broadcast(lam, u).shape)
    lam_b, u_b = np.broadcast_arrays(lam, u)
    pos = u_b > 0
    if pos.any():
        up = u_b[pos]
        out[pos] = up * ml_array(alpha, 2.0, -lam_b[pos] * up**alpha)
    return out


def _E(alpha, lam, u):
    lam_b, u_b = np.broadcast_arrays(lam, u)
    out = np.zeros(lam_b.shape)
    pos = u_b > 0
    if pos.any():
        if alpha == 1.0:
            out[pos] = np.exp(-lam_b[pos] * u_b[pos])
        else:
            out[pos] = ml_array(alpha, 1.0, -lam_b[pos] * u_b[pos] ** alpha)
    return out


def graded_gauss(f, a: float, b: float, n: int, ratio: float = 0.15):
    """Composite Gauss-Legendre on [a, b] with geometric grading toward b.

    Panels shrink by ``ratio`` toward the right end, which resolves an
    integrable endpoint singularity there; ``n`` is the total node budget.
    """
    per = 8
    panels = max(2, n // per)
    L = b - a
    edges = [b - L * ratio**j for j in range(panels - 1)] + [b]
    edges = np.array([a] + edges[1:])
    x0, w0 = roots_legendre(per)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs = lo + (hi - lo) * (x0 + 1) / 2
        total = total + np.sum(w0 * (hi - lo) / 2 * f(xs), axis=-1)
    return total


def mode_integrals(lam, alpha: float, excitation: Excitation, t, ctrl: SeriesControl | None = None):
    """I_k(t) = int_0^t E_{a,1}(-lam_k (t-s)^a) g'(s) ds, shape (K, len(t))."""
    ctrl = ctrl or SeriesControl()
    lam = np.asarray(lam, dtype=float)[:, None]
    t = np.atleast_1d(np.asarray(t, dtype=float))[None, :]
    js, jv, lo, hi, sl = excitation.pieces()
    out = np.zeros((lam.shape[0], t.shape[1]))
    for s, J in zip(js, jv):
        # a jump at s enters once t has passed it (right-continuous samples)
        out += J * np.where(t > s, _E(alpha, lam, t - s), 0.0)
    if ctrl.method == "closed":
        for a, b, k in zip(lo, hi, sl):
            out += k * (_F(alpha, lam, np.maximum(t - a, 0)) - _F(alpha, lam, np.maximum(t - b, 0)))
    else:
        for a, b, k in zip(lo, hi, sl):
            for j in range(t.shape[1]):
                tj = t[0, j]
                top = min(b, tj)
                if top <= a:
                    continue
                val = graded_gauss(lambda s: _E(alpha, lam, tj - s[None, :]), a, top, ctrl.quad_points)
                out[:, j] += k * val
    return out


def caputo_of_excitation(alpha: float, excitation: Excitation, t, order: float | None = None):
    """(1/Gamma(1-b)) int_0^t (t-s)^-b g'(s) ds with b = ``order`` (default alpha)."""
    b = alpha if order is None else order
    t = np.atleast_1d(np.asarray(t, dtype=float))
    js, jv, lo, hi, sl = excitation.pieces()
    out = np.zeros_like(t)
    for s, J in zip(js, jv):
        m = t > s
        out[m] += J * (t[m] - s) ** (-b) * rgamma(1 - b)
    for a, c, k in zip(lo, hi, sl):
        up = np.maximum(t - a, 0.0) ** (1 - b)
        dn = np.maximum(t - c, 0.0) ** (1 - b)
        out += k * (up - dn) * rgamma(2 - b)
    return out


def _tail_sum(eig: EigenData) -> float:
    if math.isfinite(eig.v_norm2):
        return eig.parseval_tail
    return eig.tail_bound


def _series_terms(eig: EigenData, ctrl: SeriesControl):
    K = min(ctrl.K, len(eig.lam))
    return eig.truncated(K) if K < len(eig.lam) else eig


def _check_tail(eig, alpha, excitation, t, ctrl, c_tail, what):
    """Remainder bound of the (corrected) truncated series at times t."""
    if c_tail == 0.0:
        return 0.0
    if ctrl.tail_correction:
        # next asymptotic order: lam^-2 * D^{2a} g, summed against w_k/lam_k
        nxt = np.abs(caputo_of_excitation(alpha, excitation, t, order=min(2 * alpha, 0.999)))
        bound = c_tail / eig.lam[-1] * float(np.max(nxt)) if len(nxt) else 0.0
    else:
        bound = c_tail * float(np.max(np.abs(caputo_of_excitation(alpha, excitation, t))))
    if not bound <= ctrl.tail_tol:
        raise TruncationError(f"{what}: truncation bound {bound:.3e} exceeds tail_tol", bound=bound)
    return bound


def flux_series(eig: EigenData, alpha: float, excitation: Excitation, t, ctrl: SeriesControl | None = None,
                return_bound: bool = False):
    """Truncated flux series at the times t (array in, array out)."""
    ctrl = ctrl or SeriesControl()
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0):
        raise InvalidInputError("times must be positive")
    e = _series_terms(eig, ctrl)
    c_tail = _tail_sum(e)
    bound = _check_tail(e, alpha, excitation, t, ctrl, c_tail, "flux_series")
    I = mode_integrals(e.lam, alpha, excitation, t, ctrl)
    vals = -(e.weights @ I)
    if math.isfinite(e.v_prime_0):
        vals = vals + e.v_prime_0 * np.asarray(excitation(t))
    if ctrl.tail_correction and c_tail > 0:
        vals = vals - c_tail * caputo_of_excitation(alpha, excitation, t)
    return (vals, bound) if return_bound else vals


def analytic_extension_flux(eig: EigenData, alpha: float, excitation: Excitation, t,
                            ctrl: SeriesControl | None = None):
    """Post-support flux continued to every t > support_end."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= excitation.support_end):
        raise InvalidInputError("extension is defined only after the excitation support")
    return flux_series(eig, alpha, excitation, t, ctrl)


def solution_series(eig: EigenData, alpha: float, excitation: Excitation, x, t,
                    ctrl: SeriesControl | None = None, q=None):
    """u(x, t) = g(t) v(x) - sum_k (phi_k'(0)/lam_k) phi_k(x) I_k(t).

    Returns an array of shape (len(x), len(t)).  The steady state v is
    recomputed on the grid carried by ``eig``.
    """
    ctrl = ctrl or SeriesControl()
    if eig.grid is None:
        raise InvalidInputError("solution series needs stored eigenfunctions")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0):
        raise InvalidInputError("times must be positive")
    e = _series_terms(eig, ctrl)
    _check_tail(e, alpha, excitation, t, ctrl, _tail_sum(e), "solution_series")
    grid = eig.grid
    v = steady_state(None, grid.ell, eig.bc, grid=grid)
    I = mode_integrals(e.lam, alpha, excitation, t, ctrl)
    phi = e.evaluate(x)  # (K, nx)
    coef = (e.phi_prime_0 / e.lam)[:, None] * phi
    return np.outer(v.evaluate(x), np.asarray(excitation(t))) - coef.T @ I


def decay_envelope(eig: EigenData, alpha: float, excitation: Excitation, t) -> np.ndarray:
    """Upper envelope of |flux| after the support from lam t^a E <= 1/Gamma(1-a)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    js, jv, lo, hi, sl = excitation.pieces()
    c = float(np.sum(eig.phi_prime_0**2 / eig.lam**2)) + _tail_sum(eig)
    acc = np.zeros_like(t)
    for s, J in zip(js, jv):
        acc += abs(J) * (t - s) ** (-alpha)
    for a, b, k in zip(lo, hi, sl):
        acc += abs(k) * (b - a) * (t - b) ** (-alpha)
    return c * acc / gamma(1 - alpha) * 2.0
