"""Hot loops of the solvers, each in a numba flavour and a numpy flavour.

The public functions dispatch on :func:`subdiff._accel.numba_enabled` at call
time, so ``SUBDIFF_NUMBA=0`` switches a running process to the numpy path.
Tridiagonal matrices are passed as three arrays ``(lower, diag, upper)`` of
equal length with ``lower[i] = A[i, i-1]`` and ``upper[i] = A[i, i+1]``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded

from ._accel import njit, numba_enabled

__all__ = [
    "tridiag_solve",
    "cq_march",
    "resolvent_kernels",
    "sl_angle",
    "sl_profile",
]

_GAUSS3 = np.array([0.5 * (1 - math.sqrt(0.6)), 0.5, 0.5 * (1 + math.sqrt(0.6))])


# ---------------------------------------------------------------------------
# tridiagonal solve


@njit(cache=True, nogil=True)
def _thomas_nb(lo, di, up, rhs):
    n = di.shape[0]
    cp = np.empty(n)
    x = np.empty(n)
    den = di[0]
    cp[0] = up[0] / den
    x[0] = rhs[0] / den
    for i in range(1, n):
        den = di[i] - lo[i] * cp[i - 1]
        cp[i] = up[i] / den
        x[i] = (rhs[i] - lo[i] * x[i - 1]) / den
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x


def _banded(lo, di, up):
    ab = np.zeros((3, len(di)))
    ab[0, 1:] = up[:-1]
    ab[1] = di
    ab[2, :-1] = lo[1:]
    return ab


def _thomas_np(lo, di, up, rhs):
    return solve_banded((1, 1), _banded(lo, di, up), rhs)


def tridiag_solve(lo, di, up, rhs):
    lo, di, up, rhs = (np.ascontiguousarray(a, dtype=float) for a in (lo, di, up, rhs))
    if numba_enabled():
        return _thomas_nb(lo, di, up, rhs)
    return _thomas_np(lo, di, up, rhs)


# ---------------------------------------------------------------------------
# convolution-quadrature time march


@njit(cache=True, nogil=True)
def _cq_march_nb(b, ml, md, mu, sl, sd, su, g, F, has_F, m):
    N = b.shape[0] - 1
    n1 = md.shape[0]
    U = np.zeros((N + 1, n1))
    flux = np.zeros(N + 1)
    b0 = b[0]
    # step matrix restricted to free rows 1..m, Thomas factors reused each step
    cp = np.empty(m + 1)
    den = np.empty(m + 1)
    for i in range(1, m + 1):
        lo = b0 * ml[i] + sl[i]
        d = b0 * md[i] + sd[i]
        if i > 1:
            d -= lo * cp[i - 1]
        den[i] = d
        cp[i] = (b0 * mu[i] + su[i]) / d if i < m else 0.0
    hs = np.zeros(n1)
    hc = np.zeros(n1)
    rhs = np.empty(m + 1)
    for n in range(1, N + 1):
        U[n, 0] = g[n]
        # compensated history sum H_j = sum_{k=1}^n b_k U^{n-k}_j
        for j in range(n1):
            hs[j] = 0.0
            hc[j] = 0.0
        for k in range(1, n + 1):
            bk = b[k]
            row = U[n - k]
            for j in range(n1):
                y = bk * row[j] - hc[j]
                t = hs[j] + y
                hc[j] = (t - hs[j]) - y
                hs[j] = t
        for i in range(1, m + 1):
            r = -(ml[i] * hs[i - 1] + md[i] * hs[i])
            if i + 1 < n1:
                r -= mu[i] * hs[i + 1]
            if has_F:
                r += F[n, i]
            rhs[i] = r
        rhs[1] -= (b0 * ml[1] + sl[1]) * g[n]
        # forward elimination with the stored factors, then back substitution
        for i in range(1, m + 1):
            lo = b0 * ml[i] + sl[i]
            if i > 1:
                rhs[i] = (rhs[i] - lo * rhs[i - 1]) / den[i]
            else:
                rhs[i] = rhs[i] / den[i]
        for i in range(m - 1, 0, -1):
            rhs[i] -= cp[i] * rhs[i + 1]
        for i in range(1, m + 1):
            U[n, i] = rhs[i]
        fl = -(md[0] * (b0 * U[n, 0] + hs[0]) + mu[0] * (b0 * U[n, 1] + hs[1]))
        fl -= sd[0] * U[n, 0] + su[0] * U[n, 1]
        if has_F:
            fl += F[n, 0]
        flux[n] = fl
    return U, flux


def _cq_march_np(b, ml, md, mu, sl, sd, su, g, F, has_F, m):
    N = b.shape[0] - 1
    n1 = md.shape[0]
    U = np.zeros((N + 1, n1))
    flux = np.zeros(N + 1)
    b0 = b[0]
    ab = _banded(b0 * ml[1 : m + 1] + sl[1 : m + 1], b0 * md[1 : m + 1] + sd[1 : m + 1],
                 b0 * mu[1 : m + 1] + su[1 : m + 1])
    for n in range(1, N + 1):
        U[n, 0] = g[n]
        H = b[n:0:-1] @ U[:n]
        MH = md * H
        MH[1:] += ml[1:] * H[:-1]
        MH[:-1] += mu[:-1] * H[1:]
        rhs = -MH[1 : m + 1]
        if has_F:
            rhs = rhs + F[n, 1 : m + 1]
        rhs[0] -= (b0 * ml[1] + sl[1]) * g[n]
        U[n, 1 : m + 1] = solve_banded((1, 1), ab, rhs)
        D0 = b0 * U[n, 0] + H[0]
        D1 = b0 * U[n, 1] + H[1]
        fl = -(md[0] * D0 + mu[0] * D1 + sd[0] * U[n, 0] + su[0] * U[n, 1])
        if has_F:
            fl += F[n, 0]
        flux[n] = fl
    return U, flux


def cq_march(b, mass, stiff, g, m, F=None):
    """March ``b0 M U^n + S U^n = -M sum_{k>=1} b_k U^{n-k} + F^n``.

    Node 0 carries the Dirichlet datum ``g[n]``; nodes ``1..m`` are free and
    any node past ``m`` stays at zero.  Returns the nodal history ``U`` of
    shape (N+1, n_nodes) and the variational boundary flux at node 0.
    """
    b = np.ascontiguousarray(b, dtype=float)
    ml, md, mu = (np.ascontiguousarray(a, dtype=float) for a in mass)
    sl, sd, su = (np.ascontiguousarray(a, dtype=float) for a in stiff)
    g = np.ascontiguousarray(g, dtype=float)
    has_F = F is not None
    F = np.ascontiguousarray(F, dtype=float) if has_F else np.zeros((1, 1))
    fn = _cq_march_nb if numba_enabled() else _cq_march_np
    return fn(b, ml, md, mu, sl, sd, su, g, F, has_F, int(m))


# ---------------------------------------------------------------------------
# scalar resolvent kernels 1 / (b(zeta) + lam)


@njit(cache=True, nogil=True, fastmath=True)
def _resolvent_nb(b, lam):
    # reassociation lets the inner product vectorize, like the BLAS path
    M = lam.shape[0]
    N = b.shape[0] - 1
    K = np.zeros((M, N + 1))
    for m in range(M):
        inv = 1.0 / (b[0] + lam[m])
        K[m, 0] = inv
        for n in range(1, N + 1):
            s = 0.0
            for k in range(1, n + 1):
                s += b[k] * K[m, n - k]
            K[m, n] = -s * inv
    return K


def _resolvent_np(b, lam):
    N = b.shape[0] - 1
    K = np.zeros((lam.shape[0], N + 1))
    inv = 1.0 / (b[0] + lam)
    K[:, 0] = inv
    for n in range(1, N + 1):
        K[:, n] = -(K[:, :n] @ b[n:0:-1]) * inv
    return K


def resolvent_kernels(b, lam):
    """Power-series coefficients of ``1/(b(zeta) + lam_m)`` for every mode."""
    b = np.ascontiguousarray(b, dtype=float)
    lam = np.ascontiguousarray(np.atleast_1d(lam), dtype=float)
    fn = _resolvent_nb if numba_enabled() else _resolvent_np
    return fn(b, lam)


# ---------------------------------------------------------------------------
# Sturm-Liouville propagation on piecewise-constant cells
#
# On a cell with kappa = lam*rho - q the solution of y'' = -kappa y obeys
#   [y, y'](s) = [[C, S], [-kappa S, C]] [y, y'](0)
# with C = cos(sqrt(kappa) s), S = sin(sqrt(kappa) s)/sqrt(kappa) (cosh/sinh
# when kappa < 0, Taylor series when kappa s^2 is tiny).


@njit(cache=True, nogil=True)
def _cs_nb(kappa, s):
    x = kappa * s * s
    if abs(x) < 1e-3:
        C = 1.0 - x / 2 + x * x / 24 - x * x * x / 720 + x * x * x * x / 40320
        S = s * (1.0 - x / 6 + x * x / 120 - x * x * x / 5040 + x * x * x * x / 362880)
    elif kappa > 0:
        w = math.sqrt(kappa)
        C = math.cos(w * s)
        S = math.sin(w * s) / w
    else:
        w = math.sqrt(-kappa)
        C = math.cosh(w * s)
        S = math.sinh(w * s) / w
    return C, S


@njit(cache=True, nogil=True)
def _zeros_in_cell_nb(kappa, d, y0, p0, y1):
    if kappa * d * d >= 1e-3:
        w = math.sqrt(kappa)
        psi = math.atan2(y0 * w, p0)
        return math.floor((psi + w * d) / math.pi) - math.floor(psi / math.pi)
    if y0 == 0.0:
        return 0
    if y1 == 0.0 or (y1 > 0.0) != (y0 > 0.0):
        return 1
    return 0


@njit(cache=True, nogil=True)
def _sl_angle_nb(lam, q, rho, d, y0, p0):
    y = y0
    p = p0
    zeros = 0
    for c in range(q.shape[0]):
        kappa = lam * rho[c] - q[c]
        C, S = _cs_nb(kappa, d[c])
        y1 = C * y + S * p
        p1 = -kappa * S * y + C * p
        zeros += _zeros_in_cell_nb(kappa, d[c], y, p, y1)
        y = y1
        p = p1
        # rescale to keep the state O(1); angles and zeros are scale-free
        nrm = abs(y) + abs(p)
        if nrm > 1e100 or nrm < 1e-100:
            y /= nrm
            p /= nrm
    th = math.atan2(y, p)
    if th < 0.0:
        th += math.pi
    if th >= math.pi:
        th -= math.pi
    return zeros * math.pi + th, y, p


@njit(cache=True, nogil=True)
def _sl_profile_nb(lam, q, rho, d, y0, p0, gx):
    nc = q.shape[0]
    Y = np.empty(nc + 1)
    P = np.empty(nc + 1)
    G = np.empty((nc, 3))
    Y[0] = y0
    P[0] = p0
    for c in range(nc):
        kappa = lam * rho[c] - q[c]
        for j in range(3):
            Cg, Sg = _cs_nb(kappa, gx[j] * d[c])
            G[c, j] = Cg * Y[c] + Sg * P[c]
        C, S = _cs_nb(kappa, d[c])
        Y[c + 1] = C * Y[c] + S * P[c]
        P[c + 1] = -kappa * S * Y[c] + C * P[c]
    return Y, P, G


def _cs_np(kappa, s):
    kappa = np.asarray(kappa, dtype=float)
    s = np.broadcast_to(np.asarray(s, dtype=float), kappa.shape)
    x = kappa * s * s
    C = np.empty_like(x)
    S = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs, ss = x[small], s[small]
    C[small] = 1.0 - xs / 2 + xs**2 / 24 - xs**3 / 720 + xs**4 / 40320
    S[small] = ss * (1.0 - xs / 6 + xs**2 / 120 - xs**3 / 5040 + xs**4 / 362880)
    pos = ~small & (kappa > 0)
    w = np.sqrt(kappa[pos])
    C[pos] = np.cos(w * s[pos])
    S[pos] = np.sin(w * s[pos]) / w
    neg = ~small & ~pos
    w = np.sqrt(-kappa[neg])
    C[neg] = np.cosh(w * s[neg])
    S[neg] = np.sinh(w * s[neg]) / w
    return C, S


def _node_states_np(lam, q, rho, d, y0, p0):
    kappa = lam * rho - q
    C, S = _cs_np(kappa, d)
    T = np.empty((len(q), 2, 2))
    T[:, 0, 0] = C
    T[:, 0, 1] = S
    T[:, 1, 0] = -kappa * S
    T[:, 1, 1] = C
    # inclusive prefix products T_c ... T_0 by recursive doubling
    step = 1
    while step < len(T):
        T[step:] = T[step:] @ T[:-step]
        step *= 2
    X = T @ np.array([y0, p0])
    Y = np.concatenate(([y0], X[:, 0]))
    P = np.concatenate(([p0], X[:, 1]))
    return kappa, Y, P


def _sl_angle_np(lam, q, rho, d, y0, p0):
    kappa, Y, P = _node_states_np(lam, q, rho, d, y0, p0)
    y, p, y1 = Y[:-1], P[:-1], Y[1:]
    osc = kappa * d * d >= 1e-3
    w = np.sqrt(np.where(osc, kappa, 1.0))
    psi = np.arctan2(y * w, p)
    z_osc = np.floor((psi + w * d) / np.pi) - np.floor(psi / np.pi)
    z_mono = (y != 0.0) & ((y1 == 0.0) | ((y1 > 0.0) != (y > 0.0)))
    zeros = int(np.sum(np.where(osc, z_osc, z_mono)))
    th = math.atan2(Y[-1], P[-1])
    if th < 0.0:
        th += math.pi
    if th >= math.pi:
        th -= math.pi
    return zeros * math.pi + th, Y[-1], P[-1]


def _sl_profile_np(lam, q, rho, d, y0, p0, gx):
    kappa, Y, P = _node_states_np(lam, q, rho, d, y0, p0)
    s = gx[None, :] * d[:, None]
    C, S = _cs_np(np.repeat(kappa[:, None], 3, axis=1), s)
    G = C * Y[:-1, None] + S * P[:-1, None]
    return Y, P, G


def sl_angle(lam, q, rho, d, y0=0.0, p0=1.0):
    """Continuous Pruefer angle at the right end for spectral parameter lam.

    Returns ``(theta, y_end, y'_end)``; theta counts zeros of y times pi plus
    the angle of ``(y, y')`` reduced to [0, pi), and is increasing in lam.
    """
    q, rho, d = (np.ascontiguousarray(a, dtype=float) for a in (q, rho, d))
    fn = _sl_angle_nb if numba_enabled() else _sl_angle_np
    return fn(float(lam), q, rho, d, float(y0), float(p0))


def sl_profile(lam, q, rho, d, y0=0.0, p0=1.0):
    """Nodal values, nodal slopes and 3-point Gauss values on every cell."""
    q, rho, d = (np.ascontiguousarray(a, dtype=float) for a in (q, rho, d))
    fn = _sl_profile_nb if numba_enabled() else _sl_profile_np
    return fn(float(lam), q, rho, d, float(y0), float(p0), _GAUSS3)


GAUSS3_NODES = _GAUSS3
GAUSS3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0
