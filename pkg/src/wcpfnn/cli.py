"""Command-line entry points: generate, train, verify, report.

Configuration is an INI-style file with ``[experiment]``, ``[opf]``,
``[nn]``, ``[enrich]`` and ``[verifier]`` sections whose keys mirror the
library config fields. ``--seed`` and ``--out`` override the file.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 verification not certified.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import LabelingError, generate_labeled_dataset, load_csv, save_csv
from .enrich import EnrichConfig, RunLog, run_pfnn_baseline, run_wc_pfnn
from .grid import CaseError, InputDomain, build_quadratic_forms, load_case
from .nn import PfnnPair, TrainingConfig, init_pfnn
from .nn.mlp import MlpParams
from .nn.training import TrainingError
from .opf import OPFError, PenaltyConfig
from .report import compare_runs
from .verify import (LPError, MilpConfig, VerifierConfig, find_worst_case, fit_hypercube,
                     report_dict)

logger = logging.getLogger("wcpfnn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_UNCERTIFIED = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    case: str = ""
    n: int = 1000
    fractions: tuple = (0.5, 0.2, 0.3)
    demand_low: float = 0.6
    demand_high: float = 1.0
    drop_quadratic: bool = True
    dataset: str = ""
    hidden: tuple = (20, 20, 20)
    out: str = "out"
    seed: int = 0
    opf: PenaltyConfig = field(default_factory=PenaltyConfig)
    nn: TrainingConfig = field(default_factory=TrainingConfig)
    enrich: EnrichConfig = field(default_factory=EnrichConfig)
    verifier: VerifierConfig = field(default_factory=VerifierConfig)

    def validate(self, need_case: bool = True):
        if need_case:
            if not self.case:
                raise ConfigError("experiment.case is required")
            if not Path(self.case).is_file():
                raise ConfigError(f"case file not found: {self.case}")
        if self.dataset and not Path(self.dataset).is_file():
            raise ConfigError(f"dataset file not found: {self.dataset}")
        if abs(sum(self.fractions) - 1.0) > 1e-9 or min(self.fractions) < 0:
            raise ConfigError("experiment.fractions must be nonnegative and sum to 1")
        if self.n < 1:
            raise ConfigError("experiment.n must be positive")
        return self


def _convert(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float) or like is None:
        return None if raw.lower() == "none" else float(raw)
    if dataclasses.is_dataclass(like):
        raise ValueError("nested settings have their own section")
    if isinstance(like, tuple):
        kind = type(like[0]) if like else float
        return tuple(kind(x) for x in raw.replace(",", " ").split())
    return raw


def _apply(obj, items: dict, section: str):
    names = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"unknown key [{section}] {key}")
        try:
            changes[key] = _convert(raw, getattr(obj, key))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_config(path: str | None, seed: int | None = None,
                out: str | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys such as T_int are case-sensitive
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        known = {"experiment", "opf", "nn", "enrich", "verifier", "milp"}
        for sec in parser.sections():
            if sec not in known:
                raise ConfigError(f"unknown section [{sec}]")
        sub = {}
        for sec in ("opf", "nn", "enrich", "verifier"):
            if parser.has_section(sec):
                sub[sec] = _apply(getattr(cfg, sec), dict(parser[sec]), sec)
        if parser.has_section("milp"):
            ver = sub.get("verifier", cfg.verifier)
            sub["verifier"] = replace(ver, milp=_apply(ver.milp, dict(parser["milp"]), "milp"))
        exp = {k: v for k, v in parser["experiment"].items()} if parser.has_section(
            "experiment") else {}
        scalar = {f.name for f in dataclasses.fields(cfg)} - {"opf", "nn", "enrich", "verifier"}
        for k in exp:
            if k not in scalar:
                raise ConfigError(f"unknown key [experiment] {k}")
        cfg = _apply(cfg, exp, "experiment")
        cfg = replace(cfg, **sub)
        base = Path(path).parent
        for key in ("case", "dataset"):
            val = getattr(cfg, key)
            if val and not Path(val).is_absolute() and not Path(val).exists():
                cfg = replace(cfg, **{key: str(base / val)})
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, out=out)
    # one experiment seed drives every component
    ver = replace(cfg.verifier, seed=cfg.seed)
    return replace(cfg, nn=replace(cfg.nn, seed=cfg.seed), verifier=ver,
                   enrich=replace(cfg.enrich, seed=cfg.seed, verifier=ver))


def _setup_case(cfg: ExperimentConfig):
    try:
        case = load_case(cfg.case, drop_quadratic=cfg.drop_quadratic)
    except (OSError, CaseError) as exc:
        raise ConfigError(f"cannot load case: {exc}") from None
    qf = build_quadratic_forms(case)
    domain = InputDomain.from_case(case, cfg.demand_low, cfg.demand_high)
    return case, qf, domain


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_generate(cfg: ExperimentConfig) -> int:
    cfg.validate()
    case, qf, domain = _setup_case(cfg)
    from .dataset import OPFLabeler
    ds = generate_labeled_dataset(case, qf, domain, cfg.n, cfg.seed,
                                  OPFLabeler(qf, domain, cfg.opf), cfg.fractions)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out / "dataset.csv")
    prov = {"provenance": ds.provenance, "case": case.name, "n": cfg.n, "seed": cfg.seed,
            "rows": len(ds), "fractions": list(cfg.fractions),
            "split_counts": {s: int(np.sum(ds.split == s))
                             for s in ("train", "validation", "test")}}
    _write(out / "provenance.json", json.dumps(prov, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(ds)} rows to {out / 'dataset.csv'}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, method: str) -> int:
    cfg.validate()
    case, qf, domain = _setup_case(cfg)
    if cfg.dataset:
        ds = load_csv(cfg.dataset, case, domain)
    else:
        from .dataset import OPFLabeler
        ds = generate_labeled_dataset(case, qf, domain, cfg.n, cfg.seed,
                                      OPFLabeler(qf, domain, cfg.opf), cfg.fractions)
    pair = init_pfnn(qf.n_load, qf.n_gen, qf.n_bus, qf.slack, qf.gen_lower, qf.gen_upper,
                     domain.lower, domain.upper, cfg.hidden, cfg.seed)
    if method == "wc-pfnn":
        pair, log = run_wc_pfnn(case, qf, ds, pair, cfg.nn, cfg.enrich)
    else:
        pair, log = run_pfnn_baseline(case, qf, ds, pair, cfg.nn, cfg.enrich)
    out = Path(cfg.out)
    _write(out / f"{method}_model.json", pair.to_json() + "\n")
    _write(out / f"{method}_runlog.json", log.to_json() + "\n")
    _write(out / f"{method}_runlog.csv", log.to_csv())
    print(f"trained {method}; final v_g_max "
          f"{log.rounds[-1]['v_g_max_mva'] if log.rounds else float('nan'):.6g} MVA")
    uncertified = any(not r["certified"] for r in log.rounds)
    return EXIT_UNCERTIFIED if uncertified else EXIT_OK


def _load_gen_net(path: str) -> MlpParams:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model: {exc}") from None
    try:
        if "net_G" in d:
            return PfnnPair.from_json(json.dumps(d)).net_G
        return MlpParams.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid model file: {exc}") from None


def _floats(text: str | None):
    return None if text is None else np.array([float(x) for x in text.split(",")])


def cmd_verify(cfg: ExperimentConfig, model: str, alpha: float, box_lower=None,
               box_upper=None, gen_lower=None, gen_upper=None) -> int:
    net = _load_gen_net(model)
    base = 1.0
    nominal = None
    if gen_lower is None or box_lower is None:
        cfg.validate()
        case, qf, domain = _setup_case(cfg)
        base = case.base_mva
        nominal = domain.nominal
        box_lower = domain.lower if box_lower is None else box_lower
        box_upper = domain.upper if box_upper is None else box_upper
        gen_lower = qf.gen_lower if gen_lower is None else gen_lower
        gen_upper = qf.gen_upper if gen_upper is None else gen_upper
    if box_upper is None or gen_upper is None:
        raise ConfigError("box and generation bounds need both lower and upper values")
    for arr in (box_lower, box_upper):
        if arr.size != net.n_inputs:
            raise ConfigError("box dimension does not match the model input")
    for arr in (gen_lower, gen_upper):
        if arr.size != net.n_outputs:
            raise ConfigError("generation bounds do not match the model output")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if nominal is None:
        nominal = box_upper
    wc = find_worst_case(net, box_lower, box_upper, gen_lower, gen_upper, cfg.verifier,
                         base_mva=base)
    hc = None
    if wc.v_g_max_pu > 0:
        hc = fit_hypercube(net, box_lower, box_upper, wc, alpha, gen_lower, gen_upper,
                           nominal, cfg.verifier)
    rep = report_dict(wc, hc)
    rep["components"] = [{k: (v.tolist() if isinstance(v, np.ndarray) else v)
                          for k, v in p.items()} for p in wc.per_component]
    _write(Path(cfg.out) / "verify_report.json", json.dumps(rep, indent=1) + "\n")
    print(f"v_g_max = {wc.v_g_max_pu:.9g} p.u. ({wc.v_g_max_mva:.6g} MVA), "
          f"component {wc.component} {wc.side}, certified={wc.certified}"
          + ("" if hc is None else f", d = {hc.d_normalized:.9g}"))
    return EXIT_OK if wc.certified else EXIT_UNCERTIFIED


def cmd_report(cfg: ExperimentConfig, pfnn_log: str, wc_log: str) -> int:
    try:
        a = RunLog.from_dict(json.loads(Path(pfnn_log).read_text()))
        b = RunLog.from_dict(json.loads(Path(wc_log).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read run logs: {exc}") from None
    rep = compare_runs(a, b)
    out = Path(cfg.out)
    _write(out / "comparison.json", json.dumps(rep.to_dict(), indent=1) + "\n")
    _write(out / "curves.csv", rep.curves_csv())
    print(f"reduction of worst-case violation: {rep.reduction_percent:.2f}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wcpfnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        return sp

    common(sub.add_parser("generate", help="sample and label a dataset"))
    t = common(sub.add_parser("train", help="train PFNN or WC-PFNN"))
    t.add_argument("--method", choices=("pfnn", "wc-pfnn"), default="wc-pfnn")
    v = common(sub.add_parser("verify", help="worst-case verification of a model"))
    v.add_argument("--model", required=True)
    v.add_argument("--alpha", type=float, default=None)
    v.add_argument("--box-lower")
    v.add_argument("--box-upper")
    v.add_argument("--gen-lower")
    v.add_argument("--gen-upper")
    r = common(sub.add_parser("report", help="compare two run logs"))
    r.add_argument("--pfnn", required=True)
    r.add_argument("--wc", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.method)
        if args.command == "verify":
            alpha = cfg.enrich.alpha_wc if args.alpha is None else args.alpha
            return cmd_verify(cfg, args.model, alpha, _floats(args.box_lower),
                              _floats(args.box_upper), _floats(args.gen_lower),
                              _floats(args.gen_upper))
        return cmd_report(cfg, args.pfnn, args.wc)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, LabelingError, OPFError, LPError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
