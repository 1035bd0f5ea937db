"""Losses, exact backpropagation, Adam and the full-batch training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..grid import QuadraticFormModel
from .mlp import MlpParams, PfnnPair, forward_with_preactivations

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, msg: str, epoch: int):
        super().__init__(f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 600
    lambda_0: float = 1.0
    lambda_pf: float = 0.1
    batch_size: int | None = None  # None = full batch
    seed: int = 0

    def __post_init__(self):
        if self.lambda_0 < 0 or self.lambda_pf < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_0 == 0 and self.lambda_pf == 0:
            raise ValueError("at least one loss weight must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    l0_G: float
    l0_v: float
    l_pf: float
    total: float


def loss_l0(pred, labels) -> float:
    """Mean over samples of the mean absolute componentwise error."""
    pred = np.atleast_2d(pred)
    labels = np.atleast_2d(labels)
    if len(pred) == 0:
        return 0.0
    return float(np.mean(np.abs(labels - pred)))


def pf_violations(qf: QuadraticFormModel, D, G_hat, v_hat):
    """Per-sample residuals: equality residuals and finite inequality slacks."""
    eq = qf.eq.values(v_hat) - G_hat @ qf.eq_gen.T - D @ qf.eq_demand.T
    rows = np.isfinite(qf.ineq_const)
    ineq = (qf.ineq.values(v_hat)[:, rows] + G_hat @ qf.ineq_gen[rows].T
            - D @ qf.ineq_demand[rows].T - qf.ineq_const[rows])
    return eq, ineq, rows


def loss_lpf(qf: QuadraticFormModel, D, G_hat, v_hat) -> float:
    """Mean of ``sum_l |eq residual_l| + sum_m max(slack_m, 0)`` over samples."""
    D, G_hat, v_hat = (np.atleast_2d(np.asarray(a, dtype=float))
                       for a in (D, G_hat, v_hat))
    if v_hat.shape[1] != 2 * qf.n_bus or G_hat.shape[1] != 2 * qf.n_gen \
            or D.shape[1] != 2 * qf.n_load:
        raise ValueError("batch dimensions do not match the case")
    eq, ineq, _ = pf_violations(qf, D, G_hat, v_hat)
    sigma = np.abs(eq).sum(axis=1) + np.maximum(ineq, 0.0).sum(axis=1)
    return float(sigma.mean())


def _backward(net: MlpParams, trace, d_out: np.ndarray) -> list[np.ndarray]:
    """Gradients ``[dW_1, db_1, ...]`` given ``dL/dy`` at the scaled output."""
    delta = d_out * net.out_scale
    acts = [trace.inputs] + trace.post
    grads = [None] * (2 * len(net.weights))
    for k in range(len(net.weights) - 1, -1, -1):
        grads[2 * k] = delta.T @ acts[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k]) * (trace.pre[k - 1] > 0)
    return grads


def loss_and_gradients(pair: PfnnPair, D, G_lab, v_lab, labeled, qf: QuadraticFormModel,
                       lambda_0: float, lambda_pf: float):
    """Combined PFNN loss and its exact gradient w.r.t. every parameter.

    Unlabeled rows contribute only to the power-flow term; labels are not
    read at all when ``lambda_0`` is zero. The L1 subgradient at zero is 0.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n = len(D)
    if n == 0:
        raise ValueError("empty batch")
    tg = forward_with_preactivations(pair.net_G, D)
    tv = forward_with_preactivations(pair.net_v, D)
    G_hat, v_hat = tg.output, tv.output
    dG = np.zeros_like(G_hat)
    dv = np.zeros_like(v_hat)

    l0_G = l0_v = 0.0
    if lambda_0 > 0:
        labeled = np.asarray(labeled, dtype=bool)
        n_lab = int(labeled.sum())
        if n_lab:
            eG = G_hat[labeled] - G_lab[labeled]
            ev = v_hat[labeled] - v_lab[labeled]
            l0_G = float(np.abs(eG).mean())
            l0_v = float(np.abs(ev).mean())
            dG[labeled] += lambda_0 * np.sign(eG) / eG.size
            dv[labeled] += lambda_0 * np.sign(ev) / ev.size

    l_pf = 0.0
    if lambda_pf > 0:
        eq, ineq, rows = pf_violations(qf, D, G_hat, v_hat)
        l_pf = float((np.abs(eq).sum(axis=1)
                      + np.maximum(ineq, 0.0).sum(axis=1)).mean())
        w_eq = np.sign(eq) * (lambda_pf / n)
        w_in = np.zeros((n, qf.n_ineq))
        w_in[:, rows] = (ineq > 0) * (lambda_pf / n)
        dv += qf.eq.weighted_gradient(v_hat, w_eq)
        dv += qf.ineq.weighted_gradient(v_hat, w_in)
        dG += -w_eq @ qf.eq_gen + w_in @ qf.ineq_gen

    total = lambda_0 * (l0_G + l0_v) + lambda_pf * l_pf
    grads = _backward(pair.net_G, tg, dG) + _backward(pair.net_v, tv, dv)
    return LossBreakdown(l0_G, l0_v, l_pf, total), grads


def gradients(pair: PfnnPair, D, G_lab, v_lab, labeled, qf, cfg: TrainingConfig):
    return loss_and_gradients(pair, D, G_lab, v_lab, labeled, qf,
                              cfg.lambda_0, cfg.lambda_pf)[1]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params])


def adam_step(params: list, grads: list, state: AdamState,
              cfg: TrainingConfig) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)


# callback(epoch, pair, train_data) -> replacement training data or None
Callback = Callable[[int, PfnnPair, object], object]


def train(pair: PfnnPair, dataset, qf: QuadraticFormModel, cfg: TrainingConfig,
          callback: Callback | None = None, callback_epochs: Sequence[int] = (),
          history: TrainHistory | None = None, state: AdamState | None = None):
    """Full-batch Adam training of both nets on the ``train`` rows.

    ``callback`` runs after the update of every epoch in ``callback_epochs``;
    if it returns a dataset, training continues on that dataset. Returns the
    trained pair (updated in place) and the loss history, one
    :class:`LossBreakdown` per epoch measured before that epoch's update.
    """
    from ..dataset import TRAIN

    history = history if history is not None else TrainHistory()
    params = pair.parameters()
    state = state or AdamState.zeros_like(params)
    fire = set(callback_epochs)
    data = dataset
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(1, cfg.epochs + 1):
        tr = data.part(TRAIN) if hasattr(data, "part") else data
        D, G, v, lab = tr.D, tr.G, tr.v, tr.labeled
        if cfg.batch_size:
            idx = rng.permutation(len(D))[:cfg.batch_size]
            D, G, v, lab = D[idx], G[idx], v[idx], lab[idx]
        loss, grads = loss_and_gradients(pair, D, G, v, lab, qf,
                                         cfg.lambda_0, cfg.lambda_pf)
        if not np.isfinite(loss.total) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingError("non-finite loss or gradient", epoch)
        history.losses.append(loss)
        adam_step(params, grads, state, cfg)
        if callback is not None and epoch in fire:
            out = callback(epoch, pair, data)
            if out is not None:
                data = out
    return pair, history
