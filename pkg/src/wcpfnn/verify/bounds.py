"""Interval bound propagation through affine and ReLU layers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.mlp import MlpParams

ACTIVE, INACTIVE = 1, -1


@dataclass
class LayerBounds:
    """Pre-activation bounds per hidden layer plus the raw output bounds.

    ``input_lower``/``input_upper`` are in scaled input units ``u``.
    """

    lower: list
    upper: list
    out_lower: np.ndarray
    out_upper: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray

    def stable_active(self, k: int) -> np.ndarray:
        return self.lower[k] >= 0

    def stable_inactive(self, k: int) -> np.ndarray:
        return self.upper[k] <= 0

    def n_unstable(self) -> int:
        return int(sum(np.sum((lo < 0) & (hi > 0)) for lo, hi in zip(self.lower, self.upper)))


def _affine(w, b, lo, hi):
    wp, wn = np.maximum(w, 0.0), np.minimum(w, 0.0)
    return wp @ lo + wn @ hi + b, wp @ hi + wn @ lo + b


def scaled_box(net: MlpParams, lower, upper):
    """Map a demand box to scaled input units (order-preserving for scale >= 0)."""
    lo = (np.asarray(lower, float) - net.in_offset) * net.in_scale
    hi = (np.asarray(upper, float) - net.in_offset) * net.in_scale
    return np.minimum(lo, hi), np.maximum(lo, hi)


def interval_bounds_scaled(net: MlpParams, u_lower, u_upper, fixed=None) -> LayerBounds:
    """IBP from a box in scaled input units.

    ``fixed`` maps ``(layer, neuron)`` to ACTIVE or INACTIVE; a fixed-active
    neuron passes ``[max(lo, 0), max(hi, 0)]`` and a fixed-inactive one
    passes ``[0, 0]``.
    """
    u_lower = np.asarray(u_lower, float)
    u_upper = np.asarray(u_upper, float)
    if np.any(u_lower > u_upper):
        raise ValueError("empty input box")
    fixed = fixed or {}
    lo, hi = u_lower, u_upper
    lowers, uppers = [], []
    for k, (w, b) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
        zl, zu = _affine(w, b, lo, hi)
        lowers.append(zl)
        uppers.append(zu)
        lo, hi = np.maximum(zl, 0.0), np.maximum(zu, 0.0)
        for (layer, i), status in fixed.items():
            if layer == k and status == INACTIVE:
                lo[i] = hi[i] = 0.0
    ol, ou = _affine(net.weights[-1], net.biases[-1], lo, hi)
    return LayerBounds(lowers, uppers, ol, ou, u_lower.copy(), u_upper.copy())


def interval_bounds(net: MlpParams, lower, upper, fixed=None) -> LayerBounds:
    """Sound pre-activation bounds for every demand in ``[lower, upper]``."""
    if np.any(np.asarray(lower, float) > np.asarray(upper, float)):
        raise ValueError("empty input box")
    return interval_bounds_scaled(net, *scaled_box(net, lower, upper), fixed=fixed)


def output_bounds(net: MlpParams, bounds: LayerBounds):
    """Bounds on the scaled network output ``out_offset + out_scale * o``."""
    a = net.out_offset + net.out_scale * bounds.out_lower
    b = net.out_offset + net.out_scale * bounds.out_upper
    return np.minimum(a, b), np.maximum(a, b)
