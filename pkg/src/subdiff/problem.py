"""Value types shared by the forward, spectral and inverse modules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import CoefficientField
from .errors import InvalidInputError

DD = "dirichlet_dirichlet"
DN = "dirichlet_neumann"
BCS = (DD, DN)


def _phi(n: int, z):
    """phi_n(z) = sum_j z^j / (j + n)!, i.e. phi_1 = (e^z - 1)/z, phi_2 = (e^z - 1 - z)/z^2."""
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape, dtype=complex)
    small = np.abs(z) < 0.5
    zs = z[small]
    term = np.full(zs.shape, 1.0 / math.factorial(n), dtype=complex)
    acc = term.copy()
    for j in range(1, 25):
        term = term * zs / (j + n)
        acc += term
    out[small] = acc
    zb = z[~small]
    if n == 1:
        out[~small] = np.expm1(zb) / zb
    else:
        out[~small] = (np.expm1(zb) - zb) / (zb * zb)
    return out


@dataclass(frozen=True)
class Excitation:
    """Boundary datum g(t), zero at t = 0 and after ``support_end``.

    ``indicator``: g = 1 on (0, a] (right-continuous sampling puts t = a in
    the support).  ``ramp_indicator``: trapezoid rising on (0, w) and falling
    on (a - w, a).  ``tabulated``: piecewise linear through (times, values).
    """

    kind: str
    support_end: float
    ramp_width: float = 0.0
    times: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        a = self.support_end
        if not (math.isfinite(a) and a > 0):
            raise InvalidInputError("support_end must be positive")
        if self.kind == "indicator":
            pass
        elif self.kind == "ramp_indicator":
            if not (0 < self.ramp_width <= a / 2):
                raise InvalidInputError("ramp width must lie in (0, support_end/2]")
        elif self.kind == "tabulated":
            t, v = np.asarray(self.times), np.asarray(self.values)
            if len(t) < 2 or len(t) != len(v) or np.any(np.diff(t) <= 0):
                raise InvalidInputError("tabulated excitation needs ascending times and matching values")
            if t[0] != 0.0 or v[0] != 0.0:
                raise InvalidInputError("tabulated excitation must start at (0, 0)")
            if t[-1] > a + 1e-15 or v[-1] != 0.0:
                raise InvalidInputError("tabulated excitation must end with value 0 by support_end")
            if not np.all(np.isfinite(v)):
                raise InvalidInputError("tabulated values must be finite")
        else:
            raise InvalidInputError(f"unknown excitation kind {self.kind!r}")

    @classmethod
    def indicator(cls, a: float) -> "Excitation":
        return cls("indicator", a)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        a = self.support_end
        if self.kind == "indicator":
            out = ((t > 0) & (t <= a)).astype(float)
        elif self.kind == "ramp_indicator":
            w = self.ramp_width
            out = np.clip(np.minimum(t, a - t) / w, 0.0, 1.0)
        else:
            out = np.interp(t, self.times, self.values, left=0.0, right=0.0)
        return out[()]

    def pieces(self):
        """Jumps and linear segments of g.

        Returns ``(jump_at, jump_size, seg_lo, seg_hi, slope)``.  Together they
        describe the distributional derivative g' = sum J delta_s + slope.
        """
        a = self.support_end
        if self.kind == "indicator":
            return (np.array([0.0, a]), np.array([1.0, -1.0]),
                    np.empty(0), np.empty(0), np.empty(0))
        if self.kind == "ramp_indicator":
            w = self.ramp_width
            lo = np.array([0.0, a - w])
            hi = np.array([w, a])
            return np.empty(0), np.empty(0), lo, hi, np.array([1.0 / w, -1.0 / w])
        t, v = np.asarray(self.times), np.asarray(self.values)
        return np.empty(0), np.empty(0), t[:-1], t[1:], np.diff(v) / np.diff(t)

    def segments(self):
        """Linear pieces (t0, t1, g(t0+), slope) covering the support."""
        a = self.support_end
        if self.kind == "indicator":
            return [(0.0, a, 1.0, 0.0)]
        if self.kind == "ramp_indicator":
            w = self.ramp_width
            segs = [(0.0, w, 0.0, 1.0 / w), (w, a - w, 1.0, 0.0), (a - w, a, 1.0, -1.0 / w)]
            return [sg for sg in segs if sg[1] > sg[0]]
        t, v = self.times, self.values
        return [(t[i], t[i + 1], v[i], (v[i + 1] - v[i]) / (t[i + 1] - t[i])) for i in range(len(t) - 1)]

    def laplace(self, p):
        """Closed-form Laplace transform, evaluated without cancellation near p = 0."""
        p = np.asarray(p, dtype=complex)
        acc = np.zeros(p.shape, dtype=complex)
        with np.errstate(over="ignore", invalid="ignore"):
            for t0, t1, g0, k in self.segments():
                w = t1 - t0
                z = -p * w
                p1 = _phi(1, z)
                acc += np.exp(-p * t0) * (g0 * w * p1 + k * w * w * (p1 - _phi(2, z)))
        return acc[()]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "support_end": self.support_end}
        if self.kind == "ramp_indicator":
            d["ramp_width"] = self.ramp_width
        if self.kind == "tabulated":
            d["times"] = list(self.times)
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Excitation":
        extra = set(d) - {"kind", "support_end", "ramp_width", "times", "values"}
        if extra:
            raise InvalidInputError(f"unknown excitation keys {sorted(extra)}")
        try:
            return cls(d["kind"], float(d["support_end"]), float(d.get("ramp_width", 0.0)),
                       tuple(d.get("times", ())), tuple(d.get("values", ())))
        except KeyError as exc:
            raise InvalidInputError(f"excitation missing {exc}") from None


@dataclass(frozen=True)
class ProblemSpec:
    alpha: float
    ell: float
    rho: CoefficientField
    q: CoefficientField
    bc: str
    excitation: Excitation
    T: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidInputError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (self.ell > 0 and math.isfinite(self.ell)):
            raise InvalidInputError("ell must be positive")
        if self.bc not in BCS:
            raise InvalidInputError(f"bc must be one of {BCS}")
        if not (self.T > 0) or not (self.excitation.support_end < self.T):
            raise InvalidInputError("excitation support must end before T")
        self.rho.check_density()
        self.q.check_potential()

    def with_(self, **kw) -> "ProblemSpec":
        d = dict(self.__dict__)
        d.update(kw)
        return ProblemSpec(**d)


@dataclass(frozen=True)
class Discretization:
    n_space: int = 100
    n_time: int = 1000

    def __post_init__(self):
        if int(self.n_space) < 4 or int(self.n_time) < 4:
            raise InvalidInputError("need at least 4 cells and 4 time steps")

    def h(self, ell: float) -> float:
        return ell / self.n_space

    def tau(self, T: float) -> float:
        return T / self.n_time

    def refined(self, fs: int = 2, ft: int = 2) -> "Discretization":
        return Discretization(self.n_space * fs, self.n_time * ft)


@dataclass
class FluxTrace:
    times: np.ndarray
    values: np.ndarray
    window: tuple = (0.0, math.inf)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise InvalidInputError("times and values differ in length")

    def __len__(self):
        return len(self.times)


@dataclass
class SolutionTrajectory:
    U: np.ndarray  # (n_time + 1, n_space + 1)
    times: np.ndarray
    nodes: np.ndarray
    flux: Optional[np.ndarray] = field(default=None, repr=False)


def window_mask(times, window) -> np.ndarray:
    t0, t1 = window
    eps = 1e-12 * max(1.0, abs(t1))
    return (times >= t0 - eps) & (times <= t1 + eps)
