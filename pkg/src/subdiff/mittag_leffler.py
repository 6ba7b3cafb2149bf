"""Two-parameter Mittag-Leffler function E_{alpha,beta}(z).

Three evaluation regimes:

* ``taylor``      -- compensated power series, used for |z| <= 1 + 2*alpha;
* ``asymptotic``  -- algebraic expansion -sum_k z**-k / Gamma(beta - alpha k),
                     used on the negative real axis far from the origin when
                     0 < alpha < 1 and the truncation estimate is negligible;
* ``integral``    -- inversion of the Laplace transform
                     s**(alpha-beta) / (s**alpha - z) by the trapezoidal rule
                     on an optimal parabolic contour, plus the residues of the
                     poles left to the right of the contour (Garrappa 2015).

Reference: R. Garrappa, Numerical evaluation of two and three parameter
Mittag-Leffler functions, SIAM J. Numer. Anal. 53 (2015) 1350-1369.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import rgamma

from .errors import EvaluationFailure, InvalidInputError

__all__ = ["MLParams", "MLEvaluation", "ml", "ml_array", "ml_kernel", "ml_eval"]

_LOG_EPS_MACH = math.log(np.finfo(float).eps)
_TARGET_LOG_EPS = math.log(1e-15)
_N_ASYMPTOTIC = 10


@dataclass(frozen=True)
class MLParams:
    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 2.0) or not math.isfinite(self.alpha):
            raise InvalidInputError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not (self.beta > 0.0) or not math.isfinite(self.beta):
            raise InvalidInputError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class MLEvaluation:
    value: complex
    est_abs_error: float
    regime: str


# ---------------------------------------------------------------------------
# regime thresholds


def taylor_radius(alpha: float) -> float:
    return 1.0 + 2.0 * alpha


def _asymptotic_tail(alpha: float, beta: float, r):
    """Magnitude of the first two omitted asymptotic terms at |z| = r."""
    n = _N_ASYMPTOTIC
    c1 = abs(rgamma(beta - alpha * (n + 1)))
    c2 = abs(rgamma(beta - alpha * (n + 2)))
    return c1 * r ** (-(n + 1)) + c2 * r ** (-(n + 2))


def _asymptotic_ok(alpha: float, beta: float, r, value_scale):
    # Watson remainder: the density peak near unit radius contributes at most
    # about exp(-t/2) / (1 - alpha) with t = r**(1/alpha)
    r = np.asarray(r, dtype=float)
    big = r >= 10.0 * taylor_radius(alpha)
    with np.errstate(over="ignore", under="ignore"):
        peak = np.exp(-0.5 * r ** (1.0 / alpha)) / max(1.0 - alpha, 1e-3)
        est = _asymptotic_tail(alpha, beta, r) + peak
    return big & (est <= 1e-15 * np.abs(value_scale))


# ---------------------------------------------------------------------------
# Taylor


def _taylor(alpha: float, beta: float, z: complex):
    # Kahan-compensated partial sums on real and imaginary parts separately
    sr = si = cr = ci = 0.0
    zn = 1.0 + 0.0j
    peak = 0.0
    for n in range(2000):
        term = zn * rgamma(alpha * n + beta)
        peak = max(peak, abs(term))
        y = term.real - cr
        t = sr + y
        cr = (t - sr) - y
        sr = t
        y = term.imag - ci
        t = si + y
        ci = (t - si) - y
        si = t
        if n > 2 and abs(term) <= 1e-17 * max(abs(complex(sr, si)), 1e-300):
            break
        zn *= z
    err = 4e-16 * peak + 1e-17 * abs(complex(sr, si))
    return complex(sr, si), err


def _taylor_array(alpha, beta, z):
    """Vectorized Taylor sum for an array with |z| <= taylor_radius(alpha)."""
    z = np.asarray(z, dtype=complex)
    s = np.zeros_like(z)
    c = np.zeros_like(z)
    zn = np.ones_like(z)
    for n in range(400):
        term = zn * rgamma(alpha * n + beta)
        y = term - c
        t = s + y
        c = (t - s) - y
        s = t
        if n > 2 and np.all(np.abs(term) <= 1e-17 * np.maximum(np.abs(s), 1e-300)):
            break
        zn = zn * z
    return s


# ---------------------------------------------------------------------------
# asymptotic


def _asymptotic_array(alpha, beta, z):
    z = np.asarray(z, dtype=complex)
    s = np.zeros_like(z)
    zi = 1.0 / z
    zk = np.ones_like(z)
    for k in range(1, _N_ASYMPTOTIC + 1):
        zk = zk * zi
        s = s - zk * rgamma(beta - alpha * k)
    return s


# ---------------------------------------------------------------------------
# contour integral (Garrappa's optimal parabolic contour)


def _param_bounded(phi_j, phi_j1, p, q, log_eps):
    """Contour parameters for a region bounded by two singularities."""
    fac = 1.01
    f_max = math.exp(log_eps - _LOG_EPS_MACH)
    sq_j = math.sqrt(phi_j)
    threshold = 2.0 * math.sqrt((log_eps - _LOG_EPS_MACH))
    sq_j1 = min(math.sqrt(phi_j1), threshold - sq_j)
    f_bar = 1.0
    if p < 1e-14 and q < 1e-14:
        sqb_j, sqb_j1 = sq_j, sq_j1
        ok = True
    elif p < 1e-14:
        sqb_j = sq_j
        f_min = fac * (sq_j / (sq_j1 - sq_j)) ** q if sq_j > 0 else fac
        ok = f_min < f_max
        if ok:
            f_bar = f_min + f_min / f_max * (f_max - f_min)
            fq = f_bar ** (-1.0 / q)
            sqb_j1 = (2.0 * sq_j1 - fq * sq_j) / (2.0 + fq)
    elif q < 1e-14:
        sqb_j1 = sq_j1
        f_min = fac * (sq_j1 / (sq_j1 - sq_j)) ** p
        ok = f_min < f_max
        if ok:
            f_bar = f_min + f_min / f_max * (f_max - f_min)
            fp = f_bar ** (-1.0 / p)
            sqb_j = (2.0 * sq_j + fp * sq_j1) / (2.0 - fp)
    else:
        f_min = fac * (sq_j + sq_j1) / (sq_j1 - sq_j) ** max(p, q)
        ok = f_min < f_max
        if ok:
            f_min = max(f_min, 1.5)
            f_bar = f_min + f_min / f_max * (f_max - f_min)
            fp = f_bar ** (-1.0 / p)
            fq = f_bar ** (-1.0 / q)
            w = -phi_j1 / log_eps
            den = 2.0 + w - (1.0 + w) * fp + fq
            sqb_j = ((2.0 + w + fq) * sq_j + fp * sq_j1) / den
            sqb_j1 = (-(1.0 + w) * fq * sq_j + (2.0 + w - (1.0 + w) * fp) * sq_j1) / den
    if not ok:
        return 0.0, 0.0, math.inf
    log_eps = log_eps - math.log(f_bar)
    w = -sqb_j1**2 / log_eps
    mu = (((1.0 + w) * sqb_j + sqb_j1) / (2.0 + w)) ** 2
    h = -2.0 * math.pi / log_eps * (sqb_j1 - sqb_j) / ((1.0 + w) * sqb_j + sqb_j1)
    if mu <= 0 or h <= 0:
        return 0.0, 0.0, math.inf
    n = math.ceil(math.sqrt(1.0 - log_eps / mu) / h)
    return mu, h, n


def _param_unbounded(phi_j, p, log_eps):
    """Contour parameters for the region right of the last singularity."""
    sq_j = math.sqrt(phi_j)
    phib = phi_j * 1.01 if phi_j > 0 else 0.01
    sqb = math.sqrt(phib)
    f_min, f_max, f_tar = 1.0, 10.0, 5.0
    for _ in range(100):
        log_eps_phi = log_eps / phib
        n = math.ceil(phib / math.pi * (1.0 - 1.5 * log_eps_phi + math.sqrt(1.0 - 2.0 * log_eps_phi)))
        a = math.pi * n / phib
        sq_mu = sqb * abs(4.0 - a) / abs(7.0 - math.sqrt(1.0 + 12.0 * a))
        if p < 1e-14:
            break
        fbar = ((sqb - sq_j) / sq_mu) ** (-p)
        if f_min < fbar < f_max:
            break
        sqb = f_tar ** (-1.0 / p) * sq_mu + sq_j
        phib = sqb * sqb
    mu = sq_mu * sq_mu
    h = (-3.0 * a - 2.0 + 2.0 * math.sqrt(1.0 + 12.0 * a)) / (4.0 - a) / n
    threshold = log_eps - _LOG_EPS_MACH
    if mu > threshold:
        qq = 0.0 if abs(p) < 1e-14 else f_tar ** (-1.0 / p) * math.sqrt(mu)
        phib = (qq + sq_j) ** 2
        if phib < threshold:
            w = math.sqrt(_LOG_EPS_MACH / (_LOG_EPS_MACH - log_eps))
            u = math.sqrt(-phib / _LOG_EPS_MACH)
            mu = threshold
            n = math.ceil(w * log_eps / 2.0 / math.pi / (u * w - 1.0))
            h = w / n
        else:
            return 0.0, 0.0, math.inf
    return mu, h, n


def _contour_plan(alpha, beta, z):
    """Choose (mu, h, N) and the poles whose residues must be added."""
    log_eps = _TARGET_LOG_EPS
    if z == 0:
        poles = np.zeros(0, dtype=complex)
    else:
        theta = cmath.phase(z)
        kmin = math.ceil(-alpha / 2.0 - theta / (2.0 * math.pi))
        kmax = math.floor(alpha / 2.0 - theta / (2.0 * math.pi))
        ks = np.arange(kmin, kmax + 1)
        poles = abs(z) ** (1.0 / alpha) * np.exp(1j * (theta + 2.0 * np.pi * ks) / alpha)
    phi = (poles.real + np.abs(poles)) / 2.0
    order = np.argsort(phi, kind="stable")
    phi = phi[order]
    poles = poles[order]
    keep = phi > 1e-15
    poles = poles[keep]
    phi = phi[keep]
    s_star = np.concatenate([[0.0], poles])
    phi_s = np.concatenate([[0.0], phi, [np.inf]])
    j = len(poles)
    p = [max(0.0, -2.0 * (alpha - beta + 1.0))] + [1.0] * j
    q = [1.0] * j + [np.inf]
    for _ in range(40):
        thr = log_eps - _LOG_EPS_MACH
        regions = [
            i for i in range(j + 1) if phi_s[i] < thr and phi_s[i] < phi_s[i + 1]
        ]
        if not regions:
            raise EvaluationFailure("no admissible contour region", partial=None)
        best = (math.inf, 0.0, 0.0, 0)
        for i in regions:
            if i < j:
                mu, h, n = _param_bounded(phi_s[i], phi_s[i + 1], p[i], q[i], log_eps)
            else:
                mu, h, n = _param_unbounded(phi_s[i], p[i], log_eps)
            if n < best[0]:
                best = (n, mu, h, i)
        if best[0] <= 200:
            break
        log_eps += math.log(10.0)
    n, mu, h, i = best
    if not math.isfinite(n):
        raise EvaluationFailure("contour parameters not found", partial=None)
    residue_poles = s_star[i + 1 :]
    return mu, h, int(n), residue_poles, log_eps


def _contour_sum(alpha, beta, z, mu, h, n):
    """Trapezoidal sum on s(u) = mu (iu + 1)^2 for an array of arguments."""
    u = h * np.arange(-n, n + 1)
    s = mu * (1j * u + 1.0) ** 2
    ds = 2.0 * mu * (1j - u)
    sa = np.exp(alpha * np.log(s))
    w = np.exp(s) * np.exp((alpha - beta) * np.log(s)) * ds
    z = np.asarray(z, dtype=complex)
    vals = (w[None, :] / (sa[None, :] - z.reshape(-1, 1))).sum(axis=1)
    return (h / (2j * np.pi)) * vals


def _integral(alpha, beta, z):
    mu, h, n, poles, log_eps = _contour_plan(alpha, beta, z)
    val = _contour_sum(alpha, beta, np.array([z]), mu, h, n)[0]
    if len(poles):
        with np.errstate(over="ignore", invalid="ignore"):
            val += np.sum(poles ** (1.0 - beta) * np.exp(poles)) / alpha
    if not cmath.isfinite(val):
        raise EvaluationFailure("non-finite contour sum", partial=val)
    err = math.exp(log_eps) * max(1.0, abs(val))
    return complex(val), err


# ---------------------------------------------------------------------------
# public API


def ml(params: MLParams, z) -> MLEvaluation:
    """Evaluate E_{alpha,beta}(z) at a single (complex) argument."""
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise InvalidInputError(f"argument must be finite, got {z}")
    a, b = params.alpha, params.beta
    r = abs(z)
    if r <= taylor_radius(a):
        val, err = _taylor(a, b, z)
        regime = "taylor"
    elif z.imag == 0.0 and z.real < 0.0 and a < 1.0:
        est = _asymptotic_array(a, b, np.array([z]))[0]
        if _asymptotic_ok(a, b, np.array([r]), np.array([abs(est)]))[0]:
            val = complex(est)
            err = float(_asymptotic_tail(a, b, r))
            regime = "asymptotic"
        else:
            val, err = _integral(a, b, z)
            regime = "integral"
    else:
        val, err = _integral(a, b, z)
        regime = "integral"
    if z.imag == 0.0:
        # real parameters and real argument give a real value
        val = complex(val.real, 0.0)
    return MLEvaluation(val, err, regime)


def ml_array(alpha: float, beta: float, z) -> np.ndarray:
    """Vectorized E_{alpha,beta} for real arguments (fast path of the solvers).

    Negative real arguments with 0 < alpha < 1 share one contour, so the
    integral regime is evaluated as a single matrix reduction.  Anything else
    falls back to the scalar evaluator element by element.
    """
    params = MLParams(alpha, beta)
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape, dtype=float)
    flat = z.ravel()
    res = out.reshape(-1)
    if not np.all(np.isfinite(flat)):
        raise InvalidInputError("arguments must be finite")
    r = np.abs(flat)
    tay = r <= taylor_radius(alpha)
    if tay.any():
        res[tay] = _taylor_array(alpha, beta, flat[tay]).real
    rest = ~tay
    if alpha < 1.0:
        neg = rest & (flat < 0)
        if neg.any():
            idx = np.nonzero(neg)[0]
            est = _asymptotic_array(alpha, beta, flat[idx]).real
            ok = _asymptotic_ok(alpha, beta, r[idx], est)
            res[idx[ok]] = est[ok]
            todo = idx[~ok]
            if len(todo):
                mu, h, n, poles, _ = _contour_plan(alpha, beta, complex(flat[todo[0]]))
                # for alpha < 1 the negative axis carries no poles: the plan is
                # independent of z there
                assert len(poles) == 0
                for chunk in np.array_split(todo, max(1, len(todo) // 4096 + 1)):
                    res[chunk] = _contour_sum(alpha, beta, flat[chunk], mu, h, n).real
        rest = rest & ~neg
    for i in np.nonzero(rest)[0]:
        res[i] = ml(params, flat[i]).value.real
    return out


def ml_kernel(alpha: float, lam, t, beta_is_alpha: bool = False):
    """E_{alpha,beta}(-lam * t**alpha) with beta = alpha or beta = 1."""
    if not (0.0 < alpha < 1.0 or alpha == 1.0):
        raise InvalidInputError(f"alpha must lie in (0, 1], got {alpha}")
    lam = np.asarray(lam, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(lam <= 0) or np.any(t <= 0):
        raise InvalidInputError("lam and t must be positive")
    beta = alpha if beta_is_alpha else 1.0
    z = -lam * t**alpha
    if alpha == 1.0:
        # E_{1,1}(z) = exp(z) exactly
        out = np.exp(z)
    else:
        out = ml_array(alpha, beta, z)
    return out[()] if out.ndim == 0 else out


def ml_eval(alpha: float, beta: float, z) -> complex:
    """Convenience wrapper returning only the value."""
    return ml(MLParams(alpha, beta), z).value
