"""Comparison of a PFNN baseline run against a WC-PFNN run."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .enrich import RunLog


def reduction_percent(v_wc: float, v_pfnn: float) -> float:
    """Relative reduction of the worst-case violation, in percent."""
    if v_pfnn <= 0:
        return 0.0 if v_wc <= 0 else -np.inf
    return 100.0 * (1.0 - v_wc / v_pfnn)


def normalized_curve(rounds: list) -> list[tuple[int, float]]:
    """Per-round ``v_g_max`` divided by the first round's value."""
    if not rounds:
        return []
    ref = rounds[0]["v_g_max_mva"]
    return [(r["epoch"], r["v_g_max_mva"] / ref if ref > 0 else float("nan"))
            for r in rounds]


@dataclass
class MethodSummary:
    MAE_percent: float | None
    v_g_mva: float
    d_fraction_nominal: float | None
    d_normalized: float | None


@dataclass
class ComparisonReport:
    pfnn: MethodSummary
    wc_pfnn: MethodSummary
    reduction_percent: float
    curves: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"pfnn": asdict(self.pfnn), "wc_pfnn": asdict(self.wc_pfnn),
                "reduction_percent": self.reduction_percent,
                "curves": {k: [list(p) for p in v] for k, v in self.curves.items()}}

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "epoch", "v_g_max_normalized"])
        for method, pts in self.curves.items():
            for epoch, val in pts:
                w.writerow([method, epoch, repr(val)])
        return buf.getvalue()


def _summary(log: RunLog) -> MethodSummary:
    last = log.rounds[-1] if log.rounds else {}
    return MethodSummary(log.test_mae.get("G_percent_of_range"),
                         float(last.get("v_g_max_mva", 0.0)),
                         last.get("d_fraction_nominal"), last.get("d_normalized"))


def compare_runs(pfnn: RunLog, wc: RunLog) -> ComparisonReport:
    a, b = _summary(pfnn), _summary(wc)
    return ComparisonReport(a, b, reduction_percent(b.v_g_mva, a.v_g_mva),
                            {"pfnn": normalized_curve(pfnn.rounds),
                             "wc-pfnn": normalized_curve(wc.rounds)})
