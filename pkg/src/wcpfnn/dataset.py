"""Latin-hypercube demand datasets, OPF labeling, splits and CSV storage."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .grid import InputDomain, NetworkCase, QuadraticFormModel
from .opf import OPFError, PenaltyConfig, solve_opf_penalty

logger = logging.getLogger(__name__)

TRAIN, VALIDATION, TEST = "train", "validation", "test"
LHS, ENRICHMENT = "lhs", "enrichment"
SPLIT_FRACTIONS = (0.5, 0.2, 0.3)


class LabelingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Sample:
    D: np.ndarray
    G: np.ndarray | None = None
    v: np.ndarray | None = None
    labeled: bool = False
    origin: str = ENRICHMENT
    split: str = TRAIN

    def __post_init__(self):
        if self.labeled and (self.G is None or self.v is None):
            raise ValueError("labeled sample needs G and v")
        if not self.labeled and self.origin != ENRICHMENT:
            raise ValueError("unlabeled samples must come from enrichment")


@dataclass
class Dataset:
    """Row-stacked samples; unlabeled rows carry NaN labels."""

    D: np.ndarray
    G: np.ndarray
    v: np.ndarray
    labeled: np.ndarray
    origin: np.ndarray
    split: np.ndarray
    domain: InputDomain | None = None
    provenance: str = ""

    def __post_init__(self):
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.labeled = np.asarray(self.labeled, dtype=bool)
        self.origin = np.asarray(self.origin, dtype=object)
        self.split = np.asarray(self.split, dtype=object)
        n = len(self.D)
        if not all(len(a) == n for a in (self.G, self.v, self.labeled,
                                          self.origin, self.split)):
            raise ValueError("dataset columns differ in length")
        if np.any(self.split[self.origin == ENRICHMENT] != TRAIN):
            raise ValueError("enrichment samples must be tagged train")

    def __len__(self):
        return len(self.D)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.D.shape[1], self.G.shape[1], self.v.shape[1]

    def samples(self):
        for k in range(len(self)):
            lab = bool(self.labeled[k])
            yield Sample(D=self.D[k], G=self.G[k] if lab else None,
                         v=self.v[k] if lab else None, labeled=lab,
                         origin=self.origin[k], split=self.split[k])

    def subset(self, mask) -> "Dataset":
        return Dataset(self.D[mask], self.G[mask], self.v[mask], self.labeled[mask],
                       self.origin[mask], self.split[mask], self.domain,
                       self.provenance)

    def part(self, split: str) -> "Dataset":
        return self.subset(self.split == split)

    def append(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.D, other.D]), np.vstack([self.G, other.G]),
                       np.vstack([self.v, other.v]),
                       np.concatenate([self.labeled, other.labeled]),
                       np.concatenate([self.origin, other.origin]),
                       np.concatenate([self.split, other.split]),
                       self.domain, self.provenance)

    @classmethod
    def unlabeled(cls, D, n_gen_out: int, n_v_out: int,
                  domain: InputDomain | None = None) -> "Dataset":
        """Training-only enrichment points without labels."""
        D = np.atleast_2d(np.asarray(D, dtype=float))
        n = len(D)
        return cls(D, np.full((n, n_gen_out), np.nan), np.full((n, n_v_out), np.nan),
                   np.zeros(n, bool), np.full(n, ENRICHMENT, object),
                   np.full(n, TRAIN, object), domain)

    def targets(self) -> np.ndarray:
        """``[G, v]`` per row, NaN where unlabeled."""
        return np.hstack([self.G, self.v])


def lhs_sample(domain: InputDomain, n: int, seed: int) -> np.ndarray:
    """Stratified Latin hypercube sample of ``n`` demand vectors.

    Each coordinate's range is cut into ``n`` equal strata holding exactly
    one point, placed uniformly at random inside its stratum. Degenerate
    coordinates (lower = upper) are constant.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    unit = qmc.LatinHypercube(d=domain.dim, scramble=True, seed=seed).random(n)
    return domain.from_unit(unit)


def split_tags(n: int, seed: int, fractions=SPLIT_FRACTIONS) -> np.ndarray:
    """Random partition into train/validation/test with the given fractions."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    tags = np.array([TRAIN] * n_train + [VALIDATION] * n_val
                    + [TEST] * (n - n_train - n_val), dtype=object)
    return tags[np.random.default_rng(seed).permutation(n)]


Labeler = Callable[[np.ndarray], tuple]


class OPFLabeler:
    """Labels demand vectors with :func:`solve_opf_penalty`.

    Each point is first solved from a fixed anchor solution (the OPF at the
    centre of the domain) with a single start; the full multistart only
    runs when that fails. The anchor keeps results independent of the order
    in which points are labeled.
    """

    def __init__(self, qf: QuadraticFormModel, domain: InputDomain,
                 cfg: PenaltyConfig | None = None):
        self.qf = qf
        self.cfg = cfg or PenaltyConfig()
        centre = 0.5 * (domain.lower + domain.upper)
        self.anchor = solve_opf_penalty(qf, centre, self.cfg)
        self._quick = PenaltyConfig(**{**self.cfg.__dict__, "multistart_count": 1})

    def __call__(self, D):
        try:
            sol = solve_opf_penalty(self.qf, D, self._quick, warm_start=self.anchor)
        except OPFError:
            sol = solve_opf_penalty(self.qf, D, self.cfg)
        return sol.G, sol.v


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def generate_labeled_dataset(case: NetworkCase, qf: QuadraticFormModel,
                             domain: InputDomain, n: int, seed: int,
                             labeler: Labeler | None = None,
                             fractions=SPLIT_FRACTIONS,
                             max_failure_rate: float = 0.05,
                             retries: int = 2) -> Dataset:
    """Sample ``n`` demands by LHS, label them and split 50/20/30.

    Points the labeler cannot solve are dropped and replaced by fresh LHS
    draws (at most ``retries`` times). More than ``max_failure_rate`` failures
    among the first ``n`` points aborts.
    """
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    labeler = labeler or OPFLabeler(qf, domain)
    D_all, G_all, v_all = [], [], []
    failures = 0
    todo = lhs_sample(domain, n, seed)
    for attempt in range(retries + 1):
        failed = 0
        for D in todo:
            try:
                G, v = labeler(D)
            except Exception as exc:  # labeler errors of any kind drop the point
                logger.info("label failure at %s: %s", np.round(D, 4), exc)
                failed += 1
                continue
            D_all.append(D)
            G_all.append(np.asarray(G, dtype=float))
            v_all.append(np.asarray(v, dtype=float))
        if attempt == 0:
            failures = failed
            if failures > max_failure_rate * n:
                raise LabelingError(
                    f"{failures} of {n} points failed to label "
                    f"(limit {max_failure_rate:.0%})")
        if failed == 0:
            break
        logger.warning("%d points failed to label, drawing replacements", failed)
        todo = lhs_sample(domain, failed, seed + 7919 * (attempt + 1))
    m = len(D_all)
    if m == 0:
        raise LabelingError("no point could be labeled")
    cfg = {"case": case.name, "n": n, "seed": seed, "fractions": list(fractions),
           "lower": domain.lower.tolist(), "upper": domain.upper.tolist()}
    return Dataset(np.array(D_all), np.array(G_all), np.array(v_all),
                   np.ones(m, bool), np.full(m, LHS, object),
                   split_tags(m, seed, fractions), domain, config_hash(cfg))


# --------------------------------------------------------------------------
# CSV persistence

def csv_header(n_load: int, n_gen: int, n_bus: int) -> list[str]:
    cols = [f"pd_{k}" for k in range(1, n_load + 1)]
    cols += [f"qd_{k}" for k in range(1, n_load + 1)]
    cols += [f"pg_{k}" for k in range(1, n_gen + 1)]
    cols += [f"qg_{k}" for k in range(1, n_gen + 1)]
    cols += [f"vr_{k}" for k in range(1, n_bus + 1)]
    cols += [f"vi_{k}" for k in range(1, n_bus + 1)]
    return cols + ["labeled", "origin", "split"]


def _num(x: float) -> str:
    return format(float(x), ".17g")


def save_csv(ds: Dataset, path) -> None:
    nd2, ng2, nb2 = ds.dims
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(nd2 // 2, ng2 // 2, nb2 // 2))
        for k in range(len(ds)):
            row = [_num(x) for x in ds.D[k]]
            if ds.labeled[k]:
                row += [_num(x) for x in ds.G[k]] + [_num(x) for x in ds.v[k]]
            else:
                row += [""] * (ng2 + nb2)
            row += [int(ds.labeled[k]), ds.origin[k], ds.split[k]]
            w.writerow(row)


def load_csv(path, case: NetworkCase | QuadraticFormModel,
             domain: InputDomain | None = None) -> Dataset:
    """Read a dataset written by :func:`save_csv`, checking case dimensions."""
    if isinstance(case, NetworkCase):
        nd, ng, nb = case.n_load, case.n_gen, case.n_bus
    else:
        nd, ng, nb = case.n_load, case.n_gen, case.n_bus
    expected = csv_header(nd, ng, nb)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    if rows[0] != expected:
        raise ValueError(
            f"{path}: header has {len(rows[0])} columns, case needs "
            f"{len(expected)} (N_d={nd}, N_g={ng}, N_b={nb})")
    body = rows[1:]
    for k, r in enumerate(body, start=2):
        if len(r) != len(expected):
            raise ValueError(f"{path}: line {k} has {len(r)} columns, "
                             f"expected {len(expected)}")
    n = len(body)
    a, b = 2 * nd, 2 * nd + 2 * ng
    c = b + 2 * nb

    def block(lo, hi):
        out = np.full((n, hi - lo), np.nan)
        for k, r in enumerate(body):
            if r[lo] != "":
                out[k] = [float(x) for x in r[lo:hi]]
        return out

    D = block(0, a)
    labeled = np.array([r[c] == "1" for r in body], dtype=bool)
    if np.isnan(D).any():
        raise ValueError(f"{path}: missing demand values")
    return Dataset(D, block(a, b), block(b, c), labeled,
                   np.array([r[c + 1] for r in body], dtype=object),
                   np.array([r[c + 2] for r in body], dtype=object), domain)
