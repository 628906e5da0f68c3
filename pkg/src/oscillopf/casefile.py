"""MATPOWER case parsing, dynamics sidecar loading and case serialization.

Loads are kept in MW/MVAr exactly as written in the case file; line
parameters are already per unit in MATPOWER. Conversion to per unit happens
when the network and OPF models are built (see :meth:`RawCase.pu`).
"""

from __future__ import annotations

import json
import math
import re
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

BUS_TYPES = {1: "PQ", 2: "PV", 3: "ref", 4: "isolated"}
BUS_TYPE_CODES = {v: k for k, v in BUS_TYPES.items()}

# Uniform linear costs used when nothing else is supplied ($/pu).
DEFAULT_COST_P = 1.0
DEFAULT_COST_Q = 0.1

# Share of the mean generator inertia given to non-generator synchronous buses.
LOAD_INERTIA_SHARE = 0.10


class CaseFormatError(ValueError):
    """Malformed or inconsistent input file."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    p_load: float
    q_load: float
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    rate: float = 0.0
    status: int = 1
    tap: float = 1.0


@dataclass(frozen=True)
class Gen:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    status: int = 1


@dataclass(frozen=True)
class Cost:
    bus: int
    c_p: float
    c_q: float


@dataclass(frozen=True)
class RawCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    gens: tuple[Gen, ...]
    costs: tuple[Cost, ...] = ()

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def ref_bus(self) -> int:
        return next(b.id for b in self.buses if b.type == "ref")

    def in_service_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.status]

    def in_service_gens(self) -> list[Gen]:
        return [g for g in self.gens if g.status]

    def generator_buses(self) -> list[int]:
        hosts = {g.bus for g in self.in_service_gens()}
        return [b.id for b in self.buses if b.id in hosts]

    def synchronous_buses(self) -> list[int]:
        """Buses hosting a generator or a nonzero load, in case order."""
        hosts = set(self.generator_buses())
        return [b.id for b in self.buses
                if b.id in hosts or b.p_load != 0.0 or b.q_load != 0.0]

    def zero_injection_buses(self) -> list[int]:
        sync = set(self.synchronous_buses())
        return [b.id for b in self.buses if b.id not in sync]

    def pu(self, mw: float) -> float:
        return mw / self.base_mva

    def total_load(self) -> tuple[float, float]:
        return (sum(b.p_load for b in self.buses),
                sum(b.q_load for b in self.buses))

    def cost_of(self, bus: int) -> Cost:
        for c in self.costs:
            if c.bus == bus:
                return c
        return Cost(bus, 0.0, 0.0)


@dataclass(frozen=True)
class DynamicParams:
    inertia: dict[int, float]
    damping: dict[int, float]
    internal_reactance: dict[int, float]
    gamma: float
    buses: tuple[int, ...] = field(default=())

    def vectors(self, buses=None):
        """Return (M, D, x) arrays ordered like ``buses`` (default: own order)."""
        order = list(self.buses if buses is None else buses)
        M = np.array([self.inertia[b] for b in order])
        D = np.array([self.damping[b] for b in order])
        x = np.array([self.internal_reactance[b] for b in order])
        return M, D, x


# ---------------------------------------------------------------------------
# MATPOWER parsing

_SCALAR_RE = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^\[;]+?)\s*;?\s*$")
_MATRIX_START_RE = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")


def _strip_comment(line: str) -> str:
    # '%' never appears inside the numeric payload of a MATPOWER case
    return line.split("%", 1)[0]


def _read_sections(text: str) -> tuple[dict, dict]:
    scalars: dict[str, tuple[str, int]] = {}
    matrices: dict[str, tuple[list[list[float]], int]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i]).strip()
        i += 1
        if not line or line.startswith("function"):
            continue
        m = _MATRIX_START_RE.match(line)
        if m:
            name, rest = m.group(1), m.group(2)
            rows: list[list[float]] = []
            buf = rest
            start = lineno
            closed = False
            while True:
                if "]" in buf:
                    buf, _ = buf.split("]", 1)
                    closed = True
                for chunk in buf.split(";"):
                    chunk = chunk.strip()
                    if not chunk:
                        continue
                    try:
                        rows.append([float(t) for t in chunk.replace(",", " ").split()])
                    except ValueError:
                        raise CaseFormatError(f"non-numeric entry in mpc.{name}: {chunk!r}",
                                              i) from None
                if closed:
                    break
                if i >= len(lines):
                    raise CaseFormatError(f"unterminated matrix mpc.{name}", start)
                buf = _strip_comment(lines[i])
                i += 1
            if rows and len({len(r) for r in rows}) != 1:
                raise CaseFormatError(f"ragged rows in mpc.{name}", start)
            matrices[name] = (rows, start)
            continue
        m = _SCALAR_RE.match(line)
        if m:
            scalars[m.group(1)] = (m.group(2).strip().strip("'\""), lineno)
            continue
        raise CaseFormatError(f"unrecognized statement {line!r}", lineno)
    return scalars, matrices


def parse_matpower(text: str) -> RawCase:
    """Parse a MATPOWER version-2 case body into a validated :class:`RawCase`.

    Quadratic ``gencost`` rows are ignored; every in-service generator bus
    gets the uniform linear costs (``DEFAULT_COST_P``, ``DEFAULT_COST_Q``).
    """
    if not text.strip():
        raise CaseFormatError("empty case file", 1)
    scalars, matrices = _read_sections(text)

    if "baseMVA" not in scalars:
        raise CaseFormatError("missing mpc.baseMVA")
    raw_base, base_line = scalars["baseMVA"]
    try:
        base_mva = float(raw_base)
    except ValueError:
        raise CaseFormatError(f"bad baseMVA {raw_base!r}", base_line) from None
    if "version" in scalars and scalars["version"][0] != "2":
        raise CaseFormatError("only MATPOWER case format version 2 is supported",
                              scalars["version"][1])
    for name in ("bus", "gen", "branch"):
        if name not in matrices:
            raise CaseFormatError(f"missing mpc.{name}")

    bus_rows, bus_line = matrices["bus"]
    buses = []
    seen: set[int] = set()
    for k, r in enumerate(bus_rows):
        if len(r) < 13:
            raise CaseFormatError("bus rows need 13 columns", bus_line + k + 1)
        bid = int(r[0])
        if bid in seen:
            raise CaseFormatError(f"duplicate bus id {bid}", bus_line + k + 1)
        seen.add(bid)
        btype = BUS_TYPES.get(int(r[1]))
        if btype is None:
            raise CaseFormatError(f"unknown bus type {r[1]}", bus_line + k + 1)
        buses.append(Bus(bid, btype, r[2], r[3], r[4], r[5], v_min=r[12], v_max=r[11]))

    gen_rows, gen_line = matrices["gen"]
    gens = []
    for k, r in enumerate(gen_rows):
        if len(r) < 10:
            raise CaseFormatError("gen rows need at least 10 columns", gen_line + k + 1)
        gens.append(Gen(int(r[0]), p_min=r[9], p_max=r[8], q_min=r[4], q_max=r[3],
                        status=int(r[7] > 0)))

    br_rows, br_line = matrices["branch"]
    branches = []
    for k, r in enumerate(br_rows):
        if len(r) < 11:
            raise CaseFormatError("branch rows need at least 11 columns", br_line + k + 1)
        if r[9] != 0.0:
            raise CaseFormatError("phase-shifting transformers are not supported",
                                  br_line + k + 1)
        branches.append(Branch(int(r[0]), int(r[1]), r[2], r[3], r[4], rate=r[5],
                               status=int(r[10] > 0), tap=r[8] if r[8] != 0.0 else 1.0))

    costs = tuple(Cost(b, DEFAULT_COST_P, DEFAULT_COST_Q)
                  for b in dict.fromkeys(g.bus for g in gens if g.status))
    case = RawCase(base_mva, tuple(buses), tuple(branches), tuple(gens), costs)
    validate_case(case)
    return case


def validate_case(case: RawCase) -> None:
    ids = case.bus_ids
    if len(set(ids)) != len(ids):
        raise CaseFormatError("duplicate bus id")
    refs = [b.id for b in case.buses if b.type == "ref"]
    if len(refs) != 1:
        raise CaseFormatError(f"expected exactly one reference bus, found {len(refs)}")
    idset = set(ids)
    for br in case.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in idset:
                raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus} references "
                                      f"unknown bus {end}")
    for g in case.gens:
        # inverted limits are a property of the OPF, reported when it is built
        if g.bus not in idset:
            raise CaseFormatError(f"generator at unknown bus {g.bus}")
    # connectivity over in-service branches
    adj: dict[int, set[int]] = {b: set() for b in ids}
    for br in case.in_service_branches():
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    reached = {ids[0]}
    queue = deque([ids[0]])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in reached:
                reached.add(nb)
                queue.append(nb)
    if len(reached) != len(ids):
        missing = sorted(idset - reached)
        raise CaseFormatError(f"network is disconnected; unreachable buses {missing}")


def load_case(path) -> RawCase:
    return parse_matpower(Path(path).read_text())


def _fmt(v: float) -> str:
    return repr(float(v))


def to_matpower(case: RawCase) -> str:
    """Write ``case`` back as MATPOWER text (readable by :func:`parse_matpower`)."""
    lines = ["function mpc = case_export", "mpc.version = '2';",
             f"mpc.baseMVA = {_fmt(case.base_mva)};", "mpc.bus = ["]
    for b in case.buses:
        row = [b.id, BUS_TYPE_CODES[b.type], b.p_load, b.q_load, b.shunt_g, b.shunt_b,
               1, 1.0, 0.0, 0.0, 1, b.v_max, b.v_min]
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines += ["];", "mpc.gen = ["]
    for g in case.gens:
        row = [g.bus, 0, 0, g.q_max, g.q_min, 1.0, case.base_mva, g.status, g.p_max, g.p_min]
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines += ["];", "mpc.branch = ["]
    for br in case.branches:
        tap = 0.0 if br.tap == 1.0 else br.tap
        row = [br.from_bus, br.to_bus, br.r, br.x, br.b_charging, br.rate, br.rate, br.rate,
               tap, 0.0, br.status, -360, 360]
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines.append("];")
    return "\n".join(lines) + "\n"


SCHEMA_VERSION = 1


def to_json(case: RawCase) -> str:
    """Canonical JSON dump of a case (sorted keys, stable float repr)."""
    payload = {"schema_version": SCHEMA_VERSION, **asdict(case)}
    return json.dumps(payload, sort_keys=True, indent=1)


def from_json(text: str) -> RawCase:
    d = json.loads(text)
    if d.get("schema_version") != SCHEMA_VERSION:
        raise CaseFormatError(f"unsupported case schema version {d.get('schema_version')}")
    case = RawCase(float(d["base_mva"]),
                   tuple(Bus(**b) for b in d["buses"]),
                   tuple(Branch(**b) for b in d["branches"]),
                   tuple(Gen(**g) for g in d["gens"]),
                   tuple(Cost(**c) for c in d["costs"]))
    validate_case(case)
    return case


def scale_loads(case: RawCase, factor: float) -> RawCase:
    """Multiply every active and reactive load by ``factor``."""
    if not factor > 0:
        raise ValueError(f"load scale factor must be positive, got {factor}")
    buses = tuple(replace(b, p_load=b.p_load * factor, q_load=b.q_load * factor)
                  for b in case.buses)
    return replace(case, buses=buses)


def with_costs(case: RawCase, c_p: float, c_q: float) -> RawCase:
    """Uniform linear costs on every in-service generator bus."""
    costs = tuple(Cost(b, c_p, c_q) for b in case.generator_buses())
    return replace(case, costs=costs)


# ---------------------------------------------------------------------------
# dynamics sidecar

_SIDECAR_KEYS = {"inertia": 2, "damping": 2, "xint": 2, "gamma": 1}


def load_dynamics(text: str, case: RawCase, strict: bool = False) -> DynamicParams:
    """Read the dynamics sidecar for ``case``.

    Records (one per line, ``#`` starts a comment)::

        inertia <bus> <M>
        damping <bus> <D>
        xint <bus> <x>
        gamma <value>

    Synchronous buses without an inertia entry get ``LOAD_INERTIA_SHARE`` of
    the mean generator inertia. Without a ``gamma`` record the ratio
    mean(D)/mean(M) over the buses with explicit damping is used; buses
    without damping get ``D = gamma * M``. Every synchronous bus needs an
    internal reactance.
    """
    sync = case.synchronous_buses()
    sync_set = set(sync)
    known = set(case.bus_ids)
    tables: dict[str, dict[int, float]] = {"inertia": {}, "damping": {}, "xint": {}}
    gamma = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0].lower()
        if key not in _SIDECAR_KEYS:
            raise CaseFormatError(f"unknown record {parts[0]!r}", lineno)
        if len(parts) != _SIDECAR_KEYS[key] + 1:
            raise CaseFormatError(f"{key} expects {_SIDECAR_KEYS[key]} values", lineno)
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise CaseFormatError(f"non-numeric value in {line!r}", lineno) from None
        if values[-1] <= 0:
            raise CaseFormatError(f"{key} must be positive, got {values[-1]}", lineno)
        if key == "gamma":
            gamma = values[0]
            continue
        bus = int(values[0])
        if bus != values[0] or bus not in known:
            raise CaseFormatError(f"unknown bus {parts[1]}", lineno)
        if bus not in sync_set:
            raise CaseFormatError(f"bus {bus} is a zero-injection bus", lineno)
        if bus in tables[key]:
            raise CaseFormatError(f"duplicate {key} entry for bus {bus}", lineno)
        tables[key][bus] = values[1]

    inertia = tables["inertia"]
    gen_buses = case.generator_buses()
    gen_m = [inertia[b] for b in gen_buses if b in inertia]
    missing = [b for b in sync if b not in inertia]
    if missing:
        if not gen_m:
            raise CaseFormatError("no generator inertias given; cannot fill defaults")
        default_m = LOAD_INERTIA_SHARE * float(np.mean(gen_m))
        for b in missing:
            inertia[b] = default_m

    damping = tables["damping"]
    if gamma is None:
        if not damping:
            raise CaseFormatError("neither gamma nor damping records given")
        gamma = float(np.mean(list(damping.values()))
                      / np.mean([inertia[b] for b in damping]))
    for b in sync:
        damping.setdefault(b, gamma * inertia[b])

    xint = tables["xint"]
    no_x = [b for b in sync if b not in xint]
    if no_x:
        raise CaseFormatError(f"missing internal reactance for buses {no_x}")

    if strict:
        for b in sync:
            if not math.isclose(damping[b], gamma * inertia[b], rel_tol=1e-9):
                raise CaseFormatError(f"bus {b} violates D = gamma*M "
                                      f"({damping[b]} vs {gamma * inertia[b]})")

    order = tuple(sync)
    return DynamicParams({b: inertia[b] for b in order}, {b: damping[b] for b in order},
                         {b: xint[b] for b in order}, float(gamma), order)


def load_dynamics_file(path, case: RawCase, strict: bool = False) -> DynamicParams:
    return load_dynamics(Path(path).read_text(), case, strict=strict)


DATA_DIR = Path(__file__).parent / "data"
