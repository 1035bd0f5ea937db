"""Fully connected ReLU networks with affine input/output scaling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1


@dataclass
class MlpParams:
    """Weights ``w_k`` of shape ``(n_k, n_{k-1})`` and biases ``b_k``.

    Inputs are mapped ``u = (D - in_offset) * in_scale`` before the first
    layer and outputs ``y = out_offset + out_scale * o`` after the last.
    Hidden layers use ReLU, the output layer is linear.
    """

    weights: list
    biases: list
    in_offset: np.ndarray
    in_scale: np.ndarray
    out_offset: np.ndarray
    out_scale: np.ndarray

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for name in ("in_offset", "in_scale", "out_offset", "out_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        dims = self.layer_sizes
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k + 1], dims[k]) or b.shape != (dims[k + 1],):
                raise ValueError(f"layer {k} shapes do not chain")
        if self.in_offset.shape != (dims[0],) or self.in_scale.shape != (dims[0],):
            raise ValueError("input scaling does not match input size")
        if self.out_offset.shape != (dims[-1],) or self.out_scale.shape != (dims[-1],):
            raise ValueError("output scaling does not match output size")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_hidden_layers(self) -> int:
        return len(self.weights) - 1

    def parameters(self) -> list[np.ndarray]:
        """Flat list ``[w_1, b_1, w_2, b_2, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         self.in_offset.copy(), self.in_scale.copy(),
                         self.out_offset.copy(), self.out_scale.copy())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "layers": [{"n_in": int(w.shape[1]), "n_out": int(w.shape[0]),
                        "weights": w.ravel().tolist(), "biases": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
            "input_scaling": {"offset": self.in_offset.tolist(),
                              "scale": self.in_scale.tolist()},
            "output_scaling": {"offset": self.out_offset.tolist(),
                               "scale": self.out_scale.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format_version')!r}")
        ws = [np.array(l["weights"], dtype=float).reshape(l["n_out"], l["n_in"])
              for l in d["layers"]]
        bs = [np.array(l["biases"], dtype=float) for l in d["layers"]]
        return cls(ws, bs, d["input_scaling"]["offset"], d["input_scaling"]["scale"],
                   d["output_scaling"]["offset"], d["output_scaling"]["scale"])


def init_mlp(sizes, rng: np.random.Generator, in_offset=None, in_scale=None,
             out_offset=None, out_scale=None) -> MlpParams:
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) init for weights and biases."""
    ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(1.0 / n_in)
        ws.append(rng.uniform(-bound, bound, (n_out, n_in)))
        bs.append(rng.uniform(-bound, bound, n_out))
    n0, nK = sizes[0], sizes[-1]
    return MlpParams(
        ws, bs,
        np.zeros(n0) if in_offset is None else in_offset,
        np.ones(n0) if in_scale is None else in_scale,
        np.zeros(nK) if out_offset is None else out_offset,
        np.ones(nK) if out_scale is None else out_scale)


@dataclass
class ForwardTrace:
    output: np.ndarray
    raw_output: np.ndarray      # before output scaling
    inputs: np.ndarray          # scaled inputs u
    pre: list                   # hat Z_k per hidden layer
    post: list                  # Z_k per hidden layer
    patterns: list = field(default_factory=list)  # y_k = 1[hat Z_k > 0]


def _as_batch(net: MlpParams, D):
    D = np.asarray(D, dtype=float)
    single = D.ndim == 1
    D = np.atleast_2d(D)
    if D.shape[1] != net.n_inputs:
        raise ValueError(f"network expects {net.n_inputs} inputs, got {D.shape[1]}")
    return D, single


def forward_with_preactivations(net: MlpParams, D) -> ForwardTrace:
    D, single = _as_batch(net, D)
    Z = (D - net.in_offset) * net.in_scale
    u = Z
    pre, post = [], []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        Zh = Z @ w.T + b
        Z = np.maximum(Zh, 0.0)
        pre.append(Zh)
        post.append(Z)
    o = Z @ net.weights[-1].T + net.biases[-1]
    y = net.out_offset + net.out_scale * o
    pats = [(p > 0).astype(np.int8) for p in pre]
    if single:
        return ForwardTrace(y[0], o[0], u[0], [p[0] for p in pre],
                            [p[0] for p in post], [p[0] for p in pats])
    return ForwardTrace(y, o, u, pre, post, pats)


def forward(net: MlpParams, D) -> np.ndarray:
    return forward_with_preactivations(net, D).output


@dataclass
class PfnnPair:
    """Generation net (``2N_d -> 2N_g``) and voltage net (``2N_d -> 2N_b``).

    The voltage net's slack imaginary output has zero output scale, so it is
    identically zero.
    """

    net_G: MlpParams
    net_v: MlpParams

    def __post_init__(self):
        if self.net_G.n_inputs != self.net_v.n_inputs:
            raise ValueError("both nets must take the same input")
        if not (np.array_equal(self.net_G.in_offset, self.net_v.in_offset)
                and np.array_equal(self.net_G.in_scale, self.net_v.in_scale)):
            raise ValueError("both nets must share input scaling")

    def predict(self, D):
        return forward(self.net_G, D), forward(self.net_v, D)

    def parameters(self) -> list[np.ndarray]:
        return self.net_G.parameters() + self.net_v.parameters()

    def copy(self) -> "PfnnPair":
        return PfnnPair(self.net_G.copy(), self.net_v.copy())

    def to_json(self) -> str:
        return json.dumps({"format_version": FORMAT_VERSION,
                           "net_G": self.net_G.to_dict(),
                           "net_v": self.net_v.to_dict()})

    @classmethod
    def from_json(cls, text: str) -> "PfnnPair":
        d = json.loads(text)
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format_version')!r}")
        return cls(MlpParams.from_dict(d["net_G"]), MlpParams.from_dict(d["net_v"]))


def input_scaling(lower, upper):
    """Affine map of the box ``[lower, upper]`` onto the unit cube."""
    lower = np.asarray(lower, dtype=float)
    width = np.asarray(upper, dtype=float) - lower
    scale = np.divide(1.0, width, out=np.zeros_like(width), where=width > 0)
    return lower, scale


def init_pfnn(n_load: int, n_gen: int, n_bus: int, slack: int, gen_lower, gen_upper,
              domain_lower, domain_upper, hidden=(20, 20, 20), seed: int = 0) -> PfnnPair:
    rng = np.random.default_rng(seed)
    off, scale = input_scaling(domain_lower, domain_upper)
    gen_lower = np.asarray(gen_lower, dtype=float)
    net_G = init_mlp([2 * n_load, *hidden, 2 * n_gen], rng, off, scale,
                     gen_lower, np.asarray(gen_upper, dtype=float) - gen_lower)
    v_scale = np.ones(2 * n_bus)
    v_scale[n_bus + slack] = 0.0
    # real parts centred on a flat 1 p.u. profile
    v_offset = np.r_[np.ones(n_bus), np.zeros(n_bus)]
    net_v = init_mlp([2 * n_load, *hidden, 2 * n_bus], rng, off.copy(), scale.copy(),
                     v_offset, v_scale)
    net_v.weights[-1][n_bus + slack] = 0.0
    net_v.biases[-1][n_bus + slack] = 0.0
    return PfnnPair(net_G, net_v)
