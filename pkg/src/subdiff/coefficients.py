"""Spatial coefficient fields on the reference interval [0, 1].

A physical coefficient on [0, ell] is ``c(x) = field(x / ell)``; this keeps
the unknown potential on a fixed grid while ell changes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

KINDS = ("constant", "piecewise_constant", "nodal")


@dataclass(frozen=True)
class CoefficientField:
    """Coefficient on the reference coordinate xi in [0, 1].

    ``piecewise_constant`` takes interior breakpoints ``b_1 < ... < b_m`` and
    ``m + 1`` values; each piece is closed on the left, so the value at a
    breakpoint belongs to the piece on its right.  ``nodal`` takes values at
    ``len(values)`` uniform nodes with linear interpolation between them.
    """

    kind: str
    values: tuple = ()
    breakpoints: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in np.ravel(self.values)))
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in np.ravel(self.breakpoints)))
        v, bp = self.values, self.breakpoints
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown coefficient kind {self.kind!r}")
        if not v or not np.all(np.isfinite(v)):
            raise InvalidInputError("coefficient values must be finite and nonempty")
        if self.kind == "constant" and (len(v) != 1 or bp):
            raise InvalidInputError("constant field takes exactly one value")
        if self.kind == "piecewise_constant":
            if len(v) != len(bp) + 1:
                raise InvalidInputError("piecewise field needs len(values) == len(breakpoints) + 1")
            b = np.asarray(bp)
            if len(b) and (np.any(b <= 0) or np.any(b >= 1) or np.any(np.diff(b) <= 0)):
                raise InvalidInputError("breakpoints must be ascending inside (0, 1)")
        if self.kind == "nodal" and (len(v) < 2 or bp):
            raise InvalidInputError("nodal field needs at least two node values")

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, c: float) -> "CoefficientField":
        return cls("constant", (c,))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], values: Sequence[float]) -> "CoefficientField":
        return cls("piecewise_constant", tuple(values), tuple(breakpoints))

    @classmethod
    def nodal(cls, values) -> "CoefficientField":
        return cls("nodal", tuple(np.asarray(values, dtype=float)))

    @classmethod
    def from_function(cls, f, n_nodes: int) -> "CoefficientField":
        return cls.nodal(f(np.linspace(0.0, 1.0, n_nodes)))

    # -- evaluation ---------------------------------------------------------

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.kind == "constant":
            return np.full(xi.shape, self.values[0])[()]
        if self.kind == "piecewise_constant":
            idx = np.searchsorted(self.breakpoints, xi, side="right")
            return np.asarray(self.values)[idx][()]
        nodes = np.linspace(0.0, 1.0, len(self.values))
        return np.interp(xi, nodes, self.values)[()]

    @property
    def node_values(self) -> np.ndarray:
        return np.asarray(self.values)

    def kinks(self) -> np.ndarray:
        """Interior points where the field is not smooth."""
        if self.kind == "piecewise_constant":
            return np.asarray(self.breakpoints)
        if self.kind == "nodal":
            return np.linspace(0.0, 1.0, len(self.values))[1:-1]
        return np.empty(0)

    def jumps(self) -> np.ndarray:
        """Interior discontinuities (only piecewise fields have any)."""
        return np.asarray(self.breakpoints) if self.kind == "piecewise_constant" else np.empty(0)

    @property
    def lower(self) -> float:
        return float(min(self.values))

    @property
    def upper(self) -> float:
        return float(max(self.values))

    def scaled(self, factor: float) -> "CoefficientField":
        return CoefficientField(self.kind, tuple(factor * np.asarray(self.values)), self.breakpoints)

    # -- validation ---------------------------------------------------------

    def check_density(self, c0: float = 0.0, C0: float = np.inf) -> None:
        if self.lower <= 0 or self.lower < c0 or self.upper > C0:
            raise InvalidInputError(f"density must satisfy 0 < {c0} <= rho <= {C0}")

    def check_potential(self) -> None:
        if self.lower < 0:
            raise InvalidInputError("potential must be nonnegative")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "values": list(self.values)}
        if self.kind == "piecewise_constant":
            d["breakpoints"] = list(self.breakpoints)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientField":
        extra = set(d) - {"kind", "values", "breakpoints"}
        if extra:
            raise InvalidInputError(f"unknown coefficient keys {sorted(extra)}")
        try:
            return cls(d["kind"], tuple(d["values"]), tuple(d.get("breakpoints", ())))
        except KeyError as exc:
            raise InvalidInputError(f"coefficient missing {exc}") from None


def aligned_grid(ell: float, n_cells: int, *fields: CoefficientField) -> np.ndarray:
    """Physical grid on [0, ell] with every coefficient jump on a node.

    Cells are distributed over the jump-delimited segments in proportion to
    their length (at least one per segment).
    """
    cuts = sorted({0.0, 1.0, *[float(b) for f in fields for b in f.jumps()]})
    seg = np.diff(cuts)
    counts = np.maximum(1, np.round(seg * n_cells).astype(int))
    pts = [np.linspace(a, b, c + 1)[:-1] for a, b, c in zip(cuts[:-1], cuts[1:], counts)]
    return ell * np.concatenate(pts + [np.array([1.0])])
