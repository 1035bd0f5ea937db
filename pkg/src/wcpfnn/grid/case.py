"""Grid case data and a MATPOWER-subset reader/writer.

All quantities held by :class:`NetworkCase` are per-unit on ``base_mva``;
conversion from MW/MVAr happens only while reading or writing case files.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

SLACK, PV, PQ = "slack", "PV", "PQ"
_BUS_TYPES = {1: PQ, 2: PV, 3: SLACK, 4: PQ}
_TYPE_CODES = {PQ: 1, PV: 2, SLACK: 3}


class CaseError(ValueError):
    """Invalid or unsupported case data."""


class CaseSyntaxError(CaseError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    p_demand: float
    q_demand: float
    v_min: float
    v_max: float
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    v_set: float = 1.0


@dataclass(frozen=True)
class Generator:
    bus_id: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost_linear: float = 0.0
    cost_reactive: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    rating: float = 0.0


@dataclass(frozen=True)
class NetworkCase:
    """Validated grid description in per-unit.

    ``rating`` of a branch is in p.u. of ``base_mva``; ``0`` means unlimited.
    Linear costs are expressed per p.u. of generation.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    name: str = "case"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "branches", tuple(self.branches))
        index = {}
        for k, bus in enumerate(self.buses):
            if bus.id in index:
                raise CaseError(f"duplicate bus id {bus.id}")
            index[bus.id] = k
        object.__setattr__(self, "_index", index)
        self._validate()

    def _validate(self):
        if self.base_mva <= 0:
            raise CaseError("base_mva must be positive")
        n_slack = sum(b.type == SLACK for b in self.buses)
        if n_slack != 1:
            raise CaseError(f"expected exactly one slack bus, found {n_slack}")
        for b in self.buses:
            if b.v_min > b.v_max:
                raise CaseError(f"bus {b.id}: v_min > v_max")
        for g in self.generators:
            if g.bus_id not in self._index:
                raise CaseError(f"generator references unknown bus {g.bus_id}")
            if g.p_min > g.p_max or g.q_min > g.q_max:
                raise CaseError(f"generator at bus {g.bus_id}: inverted limits")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in self._index:
                    raise CaseError(f"branch references unknown bus {end}")
            if br.r * br.r + br.x * br.x <= 0:
                raise CaseError(
                    f"branch {br.from_bus}-{br.to_bus} has zero impedance")

    # sizes and index helpers
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def load_buses(self) -> list[int]:
        """Internal indices of buses with nonzero nominal demand."""
        return [k for k, b in enumerate(self.buses)
                if b.p_demand != 0 or b.q_demand != 0]

    @property
    def n_load(self) -> int:
        return len(self.load_buses)

    @property
    def slack_index(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.type == SLACK)

    def bus_index(self, bus_id: int) -> int:
        return self._index[bus_id]

    def nominal_demand(self) -> np.ndarray:
        """Demand vector ``[P_d..., Q_d...]`` over load buses (p.u.)."""
        loads = [self.buses[k] for k in self.load_buses]
        return np.array([b.p_demand for b in loads] + [b.q_demand for b in loads])

    def generation_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper bounds of ``G = [P_g..., Q_g...]`` (p.u.)."""
        gens = self.generators
        lo = np.array([g.p_min for g in gens] + [g.q_min for g in gens])
        hi = np.array([g.p_max for g in gens] + [g.q_max for g in gens])
        return lo, hi

    def cost_vector(self) -> np.ndarray:
        gens = self.generators
        return np.array([g.cost_linear for g in gens]
                        + [g.cost_reactive for g in gens])


# --------------------------------------------------------------------------
# MATPOWER subset parser

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _strip_comments(text: str) -> str:
    # blank out comments so offsets keep pointing at the original text
    out = []
    for line in text.split("\n"):
        cut = line.find("%")
        if cut >= 0:
            line = line[:cut] + " " * (len(line) - cut)
        out.append(line)
    return "\n".join(out)


def _read_matrix(text: str, start: int, name: str) -> tuple[np.ndarray, int]:
    end = text.find("]", start)
    if end < 0:
        raise CaseSyntaxError(f"unterminated matrix for mpc.{name}",
                              *_line_col(text, start))
    rows, row = [], []
    for m in re.finditer(r"[^\s;,]+|;|\n", text[start + 1:end]):
        tok = m.group()
        if tok in (";", "\n"):
            if row:
                rows.append(row)
                row = []
            continue
        try:
            row.append(float(tok))
        except ValueError:
            raise CaseSyntaxError(
                f"non-numeric token {tok!r} in mpc.{name}",
                *_line_col(text, start + 1 + m.start())) from None
    if row:
        rows.append(row)
    width = {len(r) for r in rows}
    if len(width) > 1:
        raise CaseSyntaxError(f"ragged rows in mpc.{name}",
                              *_line_col(text, start))
    return np.array(rows, dtype=float).reshape(len(rows), -1), end + 1


def _read_blocks(text: str) -> dict:
    clean = _strip_comments(text)
    blocks = {}
    pos = 0
    while True:
        m = _ASSIGN.search(clean, pos)
        if m is None:
            break
        name, pos = m.group(1), m.end()
        if pos >= len(clean):
            raise CaseSyntaxError(f"missing value for mpc.{name}",
                                  *_line_col(clean, m.start()))
        opener = clean[pos]
        if opener == "[":
            blocks[name], pos = _read_matrix(clean, pos, name)
        elif opener == "{":
            close = clean.find("}", pos)
            if close < 0:
                raise CaseSyntaxError(f"unterminated cell array mpc.{name}",
                                      *_line_col(clean, pos))
            pos = close + 1
        else:
            semi = clean.find(";", pos)
            stop = semi if semi >= 0 else clean.find("\n", pos)
            raw = clean[pos:stop].strip()
            if raw.startswith("'"):
                blocks[name] = raw.strip("'")
            else:
                try:
                    blocks[name] = float(raw)
                except ValueError:
                    raise CaseSyntaxError(f"bad scalar {raw!r} for mpc.{name}",
                                          *_line_col(clean, pos)) from None
            pos = stop + 1
    return blocks


def _require(blocks, name, min_cols):
    if name not in blocks:
        raise CaseError(f"missing block mpc.{name}")
    arr = blocks[name]
    if min_cols and (arr.ndim != 2 or arr.shape[1] < min_cols):
        raise CaseError(f"mpc.{name} needs at least {min_cols} columns")
    return arr


def _linear_costs(gencost: np.ndarray, n_rows: int, drop_quadratic: bool):
    costs = []
    for k in range(n_rows):
        row = gencost[k]
        model, n = int(row[0]), int(row[3])
        if model != 2:
            raise CaseError(f"gencost row {k + 1}: only polynomial model 2 is supported")
        coeffs = row[4:4 + n]
        if len(coeffs) < n:
            raise CaseError(f"gencost row {k + 1}: expected {n} coefficients")
        if n > 3:
            raise CaseError(f"gencost row {k + 1}: polynomial of order {n - 1} "
                            "is not supported, costs must be linear")
        if n == 3 and coeffs[0] != 0 and not drop_quadratic:
            raise CaseError(f"gencost row {k + 1}: quadratic cost term "
                            f"{coeffs[0]} is not supported, costs must be linear")
        costs.append(coeffs[-2] if n >= 2 else 0.0)
    return costs


def parse_matpower_case(text: str, name: str = "case",
                        drop_quadratic: bool = False) -> NetworkCase:
    """Read a MATPOWER case file into a per-unit :class:`NetworkCase`.

    Out-of-service generators and branches are dropped. Quadratic cost
    rows are rejected unless ``drop_quadratic`` is set, in which case the
    quadratic coefficient is discarded. Transformer taps and phase shifts
    are ignored.
    """
    blocks = _read_blocks(text)
    if "baseMVA" not in blocks:
        raise CaseError("missing block mpc.baseMVA")
    base = float(blocks["baseMVA"])
    bus = _require(blocks, "bus", 13)
    gen = _require(blocks, "gen", 10)
    branch = _require(blocks, "branch", 11)
    gencost = _require(blocks, "gencost", 4)

    n_gen_all = gen.shape[0]
    if gencost.shape[0] not in (n_gen_all, 2 * n_gen_all):
        raise CaseError("mpc.gencost must have one (or two) rows per generator")
    p_cost = _linear_costs(gencost, n_gen_all, drop_quadratic)
    q_cost = (_linear_costs(gencost[n_gen_all:], n_gen_all, drop_quadratic)
              if gencost.shape[0] == 2 * n_gen_all else [0.0] * n_gen_all)

    v_set = {int(r[0]): r[7] for r in bus}
    gens = []
    for k, r in enumerate(gen):
        if r[7] <= 0:
            continue
        v_set[int(r[0])] = r[5]
        gens.append(Generator(
            bus_id=int(r[0]), p_min=r[9] / base, p_max=r[8] / base,
            q_min=r[4] / base, q_max=r[3] / base,
            cost_linear=p_cost[k] * base, cost_reactive=q_cost[k] * base))

    buses = []
    for r in bus:
        code = int(r[1])
        if code not in _BUS_TYPES:
            raise CaseError(f"bus {int(r[0])}: unknown bus type {code}")
        buses.append(Bus(
            id=int(r[0]), type=_BUS_TYPES[code],
            p_demand=r[2] / base, q_demand=r[3] / base,
            shunt_g=r[4] / base, shunt_b=r[5] / base,
            v_max=r[11], v_min=r[12], v_set=v_set[int(r[0])]))

    branches = []
    n_taps = 0
    for r in branch:
        if r[10] <= 0:
            continue
        if (r[8] not in (0.0, 1.0)) or r[9] != 0:
            n_taps += 1
        branches.append(Branch(
            from_bus=int(r[0]), to_bus=int(r[1]), r=r[2], x=r[3],
            b_charging=r[4], rating=r[5] / base))
    if n_taps:
        logger.warning("%s: ignoring tap ratio/phase shift on %d branches",
                       name, n_taps)
    return NetworkCase(base_mva=base, buses=buses, generators=gens,
                       branches=branches, name=name)


def load_case(path, drop_quadratic: bool = False) -> NetworkCase:
    from pathlib import Path

    path = Path(path)
    return parse_matpower_case(path.read_text(), name=path.stem,
                               drop_quadratic=drop_quadratic)


def _fmt(x: float) -> str:
    return repr(float(x)) if x != int(x) or abs(x) >= 1e16 else str(int(x))


def serialize_case(case: NetworkCase) -> str:
    """Write ``case`` in the same MATPOWER subset that the parser reads."""
    base = case.base_mva
    lines = [f"function mpc = {case.name}", "mpc.version = '2';",
             f"mpc.baseMVA = {_fmt(base)};", "", "mpc.bus = ["]
    for b in case.buses:
        cols = [b.id, _TYPE_CODES[b.type], b.p_demand * base, b.q_demand * base,
                b.shunt_g * base, b.shunt_b * base, 1, b.v_set, 0, 0, 1,
                b.v_max, b.v_min]
        lines.append("\t" + "\t".join(_fmt(c) for c in cols) + ";")
    lines += ["];", "", "mpc.gen = ["]
    for g in case.generators:
        v = case.buses[case.bus_index(g.bus_id)].v_set
        cols = [g.bus_id, 0, 0, g.q_max * base, g.q_min * base, v, base, 1,
                g.p_max * base, g.p_min * base]
        lines.append("\t" + "\t".join(_fmt(c) for c in cols) + ";")
    lines += ["];", "", "mpc.branch = ["]
    for br in case.branches:
        rate = br.rating * base
        cols = [br.from_bus, br.to_bus, br.r, br.x, br.b_charging,
                rate, rate, rate, 0, 0, 1, -360, 360]
        lines.append("\t" + "\t".join(_fmt(c) for c in cols) + ";")
    lines += ["];", "", "mpc.gencost = ["]
    reactive = any(g.cost_reactive for g in case.generators)
    rows = [g.cost_linear for g in case.generators]
    if reactive:
        rows += [g.cost_reactive for g in case.generators]
    for c in rows:
        lines.append(f"\t2\t0\t0\t2\t{_fmt(c / base)}\t0;")
    lines += ["];", ""]
    return "\n".join(lines)
