from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case import NetworkCase


@dataclass(frozen=True)
class InputDomain:
    """Box of admissible demand vectors ``D = [P_d..., Q_d...]`` (p.u.)."""

    lower: np.ndarray
    upper: np.ndarray
    nominal: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in shape")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "nominal", np.asarray(self.nominal, dtype=float))

    @classmethod
    def from_case(cls, case: NetworkCase, low: float = 0.6,
                  high: float = 1.0) -> "InputDomain":
        """Each demand between ``low`` and ``high`` times its nominal value."""
        nom = case.nominal_demand()
        a, b = low * nom, high * nom
        return cls(np.minimum(a, b), np.maximum(a, b), nom)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, D, tol: float = 0.0) -> np.ndarray:
        D = np.asarray(D, dtype=float)
        return np.all((D >= self.lower - tol) & (D <= self.upper + tol), axis=-1)

    def clip(self, D) -> np.ndarray:
        return np.clip(D, self.lower, self.upper)

    def from_unit(self, U) -> np.ndarray:
        """Map points of the unit cube onto the box."""
        return self.lower + np.asarray(U, dtype=float) * self.width
