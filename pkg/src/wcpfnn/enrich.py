"""Worst-case driven dataset enrichment and the fixed-dataset baseline."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import LHS, TEST, TRAIN, Dataset, OPFLabeler, lhs_sample
from .grid import InputDomain, NetworkCase, QuadraticFormModel
from .nn import PfnnPair, TrainingConfig, train
from .nn.training import AdamState, TrainHistory
from .verify import (HypercubeResult, VerifierConfig, WorstCaseResult, find_worst_case,
                     fit_hypercube)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnrichConfig:
    T: int = 600
    T_int: int = 200
    T_enr: int = 200
    points_per_round: int = 1000
    alpha_wc: float = 0.8
    gaussian_sigma: float = 0.5      # sampling std as a fraction of d
    baseline_extra_points: int = 2000
    top_k: int = 1
    seed: int = 0
    verifier: VerifierConfig = VerifierConfig()

    def __post_init__(self):
        if not 0 <= self.T_int <= self.T:
            raise ValueError("need 0 <= T_int <= T")
        if self.T_enr < 1:
            raise ValueError("T_enr must be at least 1")
        if not 0 < self.alpha_wc < 1:
            raise ValueError("alpha_wc must lie in (0, 1)")
        if self.points_per_round < 0 or self.baseline_extra_points < 0:
            raise ValueError("point counts must be nonnegative")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")

    def round_epochs(self) -> list[int]:
        """Verification epochs ``T_int, T_int + T_enr, ... <= T``."""
        if self.T_int == 0:
            return []
        return list(range(self.T_int, self.T + 1, self.T_enr))

    def enrichment_epochs(self) -> list[int]:
        """Rounds that add data (a round at the final epoch only verifies)."""
        return [e for e in self.round_epochs() if e < self.T]


@dataclass
class RunLog:
    method: str
    losses: list = field(default_factory=list)     # LossBreakdown per epoch
    rounds: list = field(default_factory=list)
    test_mae: dict = field(default_factory=dict)
    initial_train_size: int = 0

    def to_dict(self, timing: bool = True) -> dict:
        rounds = [dict(r) for r in self.rounds]
        if not timing:
            for r in rounds:
                r.pop("milp_wall_ms", None)
        return {"method": self.method, "initial_train_size": self.initial_train_size,
                "losses": [asdict(l) for l in self.losses],
                "rounds": rounds, "test_mae": self.test_mae}

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "RunLog":
        from .nn.training import LossBreakdown
        return cls(d["method"], [LossBreakdown(**l) for l in d["losses"]],
                   d["rounds"], d.get("test_mae", {}), d.get("initial_train_size", 0))

    def to_csv(self) -> str:
        """Flat per-epoch table; v_g_max (MVA) and d only on round epochs."""
        by_epoch = {r["epoch"]: r for r in self.rounds}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "l0", "lpf", "total", "v_g_max", "d"])
        for k, l in enumerate(self.losses, start=1):
            r = by_epoch.get(k)
            w.writerow([k, repr(l.l0_G + l.l0_v), repr(l.l_pf), repr(l.total),
                        "" if r is None else repr(r["v_g_max_mva"]),
                        "" if r is None or r["d_normalized"] is None else repr(r["d_normalized"])])
        return buf.getvalue()


def sample_hypercube_gaussian(hc: HypercubeResult, domain: InputDomain, n: int,
                              seed: int, sigma: float = 0.5) -> np.ndarray:
    """``n`` Gaussian draws around the worst-case witness, clipped to the box.

    The standard deviation per coordinate is ``sigma`` times the hypercube
    half-width; samples are clipped to the hypercube intersected with the
    domain.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    centre = np.asarray(hc.center, float)
    half = np.asarray(hc.half_width, float)
    if hc.d_normalized <= 0:
        logger.warning("hypercube has zero width; returning copies of the witness")
        return np.tile(centre, (n, 1))
    rng = np.random.default_rng(seed)
    pts = centre + rng.standard_normal((n, centre.size)) * (sigma * half)
    lo = np.maximum(centre - half, domain.lower)
    hi = np.minimum(centre + half, domain.upper)
    return np.clip(pts, lo, hi)


def _test_mae(pair: PfnnPair, data: Dataset, qf: QuadraticFormModel) -> dict:
    te = data.part(TEST)
    te = te.subset(te.labeled)
    if len(te) == 0:
        return {}
    Gh, vh = pair.predict(te.D)
    rng = qf.gen_upper - qf.gen_lower
    err = np.abs(Gh - te.G)
    ok = rng > 0
    return {"G_pu": float(err.mean()), "v_pu": float(np.abs(vh - te.v).mean()),
            "G_percent_of_range": float(100 * np.mean(err[:, ok] / rng[ok]))}


class _Rounds:
    """Training callback that verifies and (optionally) enriches."""

    def __init__(self, case, qf, domain, cfg: EnrichConfig, enrich: bool, log: RunLog):
        self.case, self.qf, self.domain = case, qf, domain
        self.cfg, self.enrich, self.log = cfg, enrich, log
        self.added = 0

    def verify(self, pair: PfnnPair):
        wc = find_worst_case(pair.net_G, self.domain.lower, self.domain.upper,
                             self.qf.gen_lower, self.qf.gen_upper, self.cfg.verifier,
                             base_mva=self.qf.base_mva)
        hcs = []
        if wc.v_g_max_pu > 0:
            for w in self._top(wc):
                hcs.append(fit_hypercube(pair.net_G, self.domain.lower, self.domain.upper,
                                         w, self.cfg.alpha_wc, self.qf.gen_lower,
                                         self.qf.gen_upper, self.domain.nominal,
                                         self.cfg.verifier))
        return wc, hcs

    def _top(self, wc: WorstCaseResult) -> list:
        if self.cfg.top_k == 1:
            return [wc]
        found = [p for p in wc.per_component
                 if p["objective"] is not None and p["objective"] > 0]
        found.sort(key=lambda p: (-p["objective"], p["component"], p["side"]))
        out = [replace(wc, v_g_max_pu=p["objective"], D_WC=p["witness"],
                       component=p["component"], side=p["side"])
               for p in found[:self.cfg.top_k]]
        return out or [wc]

    def __call__(self, epoch: int, pair: PfnnPair, data: Dataset):
        t0 = time.perf_counter()
        wc, hcs = self.verify(pair)
        wall_ms = 1e3 * (time.perf_counter() - t0)
        new = None
        n_new = 0
        if self.enrich and epoch < self.cfg.T and self.cfg.points_per_round > 0:
            if wc.v_g_max_pu <= 0:
                logger.info("epoch %d: no violation, skipping enrichment", epoch)
            else:
                per = np.array_split(np.arange(self.cfg.points_per_round), len(hcs))
                pts = [sample_hypercube_gaussian(hc, self.domain, len(idx),
                                                 self.cfg.seed * 1_000_003 + epoch * 31 + j,
                                                 self.cfg.gaussian_sigma)
                       for j, (hc, idx) in enumerate(zip(hcs, per)) if len(idx)]
                pts = np.vstack(pts)
                n_new = len(pts)
                new = data.append(Dataset.unlabeled(pts, data.G.shape[1], data.v.shape[1],
                                                    data.domain))
                self.added += n_new
        hc = hcs[0] if hcs else None
        size = int(np.sum((new if new is not None else data).split == TRAIN))
        self.log.rounds.append({
            "epoch": epoch, "v_g_max_pu": wc.v_g_max_pu, "v_g_max_mva": wc.v_g_max_mva,
            "component": wc.component, "side": wc.side, "certified": wc.certified,
            "gap": wc.gap, "nodes": wc.nodes,
            "d_normalized": None if hc is None else hc.d_normalized,
            "d_fraction_nominal": None if hc is None else hc.d_fraction_nominal,
            "points_added": n_new, "train_size": size,
            "milp_wall_ms": wall_ms})
        logger.info("epoch %d: v_g_max %.4f MVA, d %s, train size %d", epoch,
                    wc.v_g_max_mva, None if hc is None else round(hc.d_normalized, 4), size)
        return new


def run_wc_pfnn(case: NetworkCase, qf: QuadraticFormModel, dataset: Dataset,
                pair: PfnnPair, nn_cfg: TrainingConfig, cfg: EnrichConfig):
    """Train with periodic verification and hypercube enrichment.

    ``pair`` is trained in place. Enrichment points are unlabeled training
    rows, so they only enter the power-flow term of the loss.
    """
    domain = dataset.domain or InputDomain.from_case(case)
    log = RunLog("wc-pfnn", initial_train_size=int(np.sum(dataset.split == TRAIN)))
    cb = _Rounds(case, qf, domain, cfg, True, log)
    tcfg = replace(nn_cfg, epochs=cfg.T)
    history = TrainHistory()
    train(pair, dataset, qf, tcfg, cb, cfg.round_epochs(), history, AdamState.zeros_like(pair.parameters()))
    log.losses = history.losses
    log.test_mae = _test_mae(pair, dataset, qf)
    return pair, log


def baseline_dataset(case: NetworkCase, qf: QuadraticFormModel, dataset: Dataset,
                     n_extra: int, seed: int, labeler=None) -> Dataset:
    """Initial dataset plus ``n_extra`` labeled LHS training points."""
    if n_extra == 0:
        return dataset
    domain = dataset.domain or InputDomain.from_case(case)
    labeler = labeler or OPFLabeler(qf, domain)
    rows_D, rows_G, rows_v = [], [], []
    draw = 0
    while len(rows_D) < n_extra and draw < 3:
        need = n_extra - len(rows_D)
        for D in lhs_sample(domain, need, seed + 104_729 * (draw + 1)):
            try:
                G, v = labeler(D)
            except Exception as exc:  # unlabeled points are dropped and redrawn
                logger.info("baseline label failure: %s", exc)
                continue
            rows_D.append(D)
            rows_G.append(G)
            rows_v.append(v)
        draw += 1
    m = len(rows_D)
    extra = Dataset(np.array(rows_D), np.array(rows_G), np.array(rows_v), np.ones(m, bool),
                    np.full(m, LHS, object), np.full(m, TRAIN, object), domain)
    return dataset.append(extra)


def run_pfnn_baseline(case: NetworkCase, qf: QuadraticFormModel, dataset: Dataset,
                      pair: PfnnPair, nn_cfg: TrainingConfig, cfg: EnrichConfig,
                      labeler=None):
    """Train on the dataset grown up front by ``baseline_extra_points`` labels.

    The worst case is evaluated at the same epochs as :func:`run_wc_pfnn`.
    """
    domain = dataset.domain or InputDomain.from_case(case)
    data = baseline_dataset(case, qf, dataset, cfg.baseline_extra_points, cfg.seed, labeler)
    log = RunLog("pfnn", initial_train_size=int(np.sum(data.split == TRAIN)))
    cb = _Rounds(case, qf, domain, cfg, False, log)
    history = TrainHistory()
    train(pair, data, qf, replace(nn_cfg, epochs=cfg.T), cb, cfg.round_epochs(), history,
          AdamState.zeros_like(pair.parameters()))
    log.losses = history.losses
    log.test_mae = _test_mae(pair, dataset, qf)
    return pair, log
