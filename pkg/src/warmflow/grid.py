"""Grid data model and the native JSON case format.

All electrical quantities are per-unit on the system MVA base; angles are in
radians. Case objects are immutable: every transformation in this package
returns a new case instead of mutating in place.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

SLACK = "slack"
PV = "pv"
PQ = "pq"
BUS_KINDS = (SLACK, PV, PQ)


class GridError(Exception):
    """Base class for case-data errors."""


class SchemaError(GridError):
    """Native-format document violates the schema.

    Carries the JSON path of the offending element, e.g. ``$.buses[3].kind``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ValidationError(GridError):
    """Raised by parsers when a parsed case fails validation."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    v_mag_init: float = 1.0
    v_ang_init: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    bus: int
    p_set: float
    v_set: float
    p_max: float
    p_min: float
    participation: float
    in_service: bool = True


@dataclass(frozen=True)
class Load:
    bus: int
    p: float
    q: float
    in_service: bool = True


@dataclass(frozen=True)
class GridCase:
    """A complete network description.

    ``notes`` holds transient diagnostics attached by transformations (for
    example a droop redispatch that ran out of generator headroom). Notes are
    not part of the native serialization format and do not affect equality.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "loads", tuple(self.loads))
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def with_notes(self, *extra: str) -> "GridCase":
        merged = self.notes + tuple(extra)
        return GridCase(self.base_mva, self.buses, self.branches,
                        self.generators, self.loads, merged)


def bus_index(case: GridCase) -> dict[int, int]:
    """Map bus id to position in ``case.buses`` order."""
    return {bus.id: i for i, bus in enumerate(case.buses)}


def slack_position(case: GridCase) -> int:
    for i, bus in enumerate(case.buses):
        if bus.kind == SLACK:
            return i
    raise GridError("case has no slack bus")


def _finite(value: float) -> bool:
    return isinstance(value, (int, float)) and math.isfinite(value)


def validate(case: GridCase) -> list[str]:
    """Check every type invariant plus slack-component connectivity.

    Returns a list of human-readable diagnostics; empty means valid. Never
    raises.
    """
    diags: list[str] = []
    if not _finite(case.base_mva) or case.base_mva <= 0:
        diags.append(f"base_mva must be positive, got {case.base_mva!r}")

    seen: set[int] = set()
    for i, bus in enumerate(case.buses):
        if bus.id in seen:
            diags.append(f"duplicate bus id {bus.id}")
        seen.add(bus.id)
        if bus.kind not in BUS_KINDS:
            diags.append(f"bus {bus.id}: unknown kind {bus.kind!r}")
        if not _finite(bus.v_mag_init) or bus.v_mag_init <= 0:
            diags.append(f"bus {bus.id}: v_mag_init must be positive")
        for name in ("v_ang_init", "shunt_g", "shunt_b"):
            if not _finite(getattr(bus, name)):
                diags.append(f"bus {bus.id}: {name} not finite")

    slack_ids = [b.id for b in case.buses if b.kind == SLACK]
    if len(slack_ids) != 1:
        diags.append(f"expected exactly one slack bus, found {len(slack_ids)}")

    ids = {b.id for b in case.buses}
    for i, br in enumerate(case.branches):
        label = f"branch {i} ({br.from_bus}-{br.to_bus})"
        if br.from_bus not in ids:
            diags.append(f"{label}: from_bus {br.from_bus} does not exist")
        if br.to_bus not in ids:
            diags.append(f"{label}: to_bus {br.to_bus} does not exist")
        if br.from_bus == br.to_bus:
            diags.append(f"{label}: endpoints coincide")
        if not all(_finite(getattr(br, f.name)) for f in fields(Branch)
                   if f.name != "in_service"):
            diags.append(f"{label}: non-finite parameter")
        elif br.r * br.r + br.x * br.x <= 0:
            diags.append(f"{label}: series impedance must be nonzero")
        if br.tap_ratio <= 0:
            diags.append(f"{label}: tap_ratio must be positive")

    for i, gen in enumerate(case.generators):
        label = f"generator {i} at bus {gen.bus}"
        if gen.bus not in ids:
            diags.append(f"{label}: bus does not exist")
        if not all(_finite(getattr(gen, f.name)) for f in fields(Generator)
                   if f.name != "in_service"):
            diags.append(f"{label}: non-finite parameter")
            continue
        if not gen.p_min <= gen.p_set <= gen.p_max:
            diags.append(f"{label}: p_set {gen.p_set} outside "
                         f"[{gen.p_min}, {gen.p_max}]")
        if gen.participation < 0:
            diags.append(f"{label}: participation must be >= 0")

    for i, load in enumerate(case.loads):
        label = f"load {i} at bus {load.bus}"
        if load.bus not in ids:
            diags.append(f"{label}: bus does not exist")
        if not (_finite(load.p) and _finite(load.q)):
            diags.append(f"{label}: non-finite demand")

    if len(slack_ids) == 1 and not diags:
        unreachable = _unreachable_from(case, slack_ids[0])
        if unreachable:
            shown = ", ".join(str(b) for b in sorted(unreachable)[:5])
            diags.append(f"{len(unreachable)} bus(es) not connected to the "
                         f"slack bus over in-service branches: {shown}")
    return diags


def _unreachable_from(case: GridCase, start_id: int) -> set[int]:
    adjacency: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        if br.in_service:
            adjacency[br.from_bus].append(br.to_bus)
            adjacency[br.to_bus].append(br.from_bus)
    seen = {start_id}
    stack = [start_id]
    while stack:
        u = stack.pop()
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return {b.id for b in case.buses} - seen


# --- native JSON format ---------------------------------------------------

_BUS_FIELDS = ("id", "kind", "v_mag_init", "v_ang_init", "shunt_g", "shunt_b")
_BRANCH_FIELDS = ("from_bus", "to_bus", "r", "x", "b_charging", "tap_ratio",
                  "phase_shift", "in_service")
_GEN_FIELDS = ("bus", "p_set", "v_set", "p_max", "p_min", "participation",
               "in_service")
_LOAD_FIELDS = ("bus", "p", "q", "in_service")


def case_to_dict(case: GridCase) -> dict:
    return {
        "base_mva": case.base_mva,
        "buses": [{k: getattr(b, k) for k in _BUS_FIELDS} for b in case.buses],
        "branches": [{k: getattr(b, k) for k in _BRANCH_FIELDS}
                     for b in case.branches],
        "generators": [{k: getattr(g, k) for k in _GEN_FIELDS}
                       for g in case.generators],
        "loads": [{k: getattr(l, k) for k in _LOAD_FIELDS}
                  for l in case.loads],
    }


def serialize_native(case: GridCase) -> str:
    """Serialize to the native JSON format.

    Output is deterministic: sorted keys, stable element order, and float
    repr that round-trips binary64 exactly.
    """
    return json.dumps(case_to_dict(case), indent=1, sort_keys=True)


def _want(obj: dict, key: str, kinds, path: str):
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing required field")
    value = obj[key]
    if kinds is float:
        # bool is an int subclass; reject it explicitly for numeric fields
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{path}.{key}", f"expected number, got "
                              f"{type(value).__name__}")
        return float(value)
    if kinds is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{path}.{key}", f"expected integer, got "
                              f"{type(value).__name__}")
        return value
    if not isinstance(value, kinds):
        raise SchemaError(f"{path}.{key}", f"expected "
                          f"{getattr(kinds, '__name__', kinds)}, got "
                          f"{type(value).__name__}")
    return value


def _want_list(obj: dict, key: str, path: str) -> list:
    value = _want(obj, key, list, path)
    return value


def case_from_dict(doc: dict, path: str = "$") -> GridCase:
    if not isinstance(doc, dict):
        raise SchemaError(path, f"expected object, got {type(doc).__name__}")
    known = {"base_mva", "buses", "branches", "generators", "loads"}
    extra = set(doc) - known
    if extra:
        raise SchemaError(f"{path}.{sorted(extra)[0]}", "unknown field")
    base_mva = _want(doc, "base_mva", float, path)

    buses = []
    for i, rec in enumerate(_want_list(doc, "buses", path)):
        p = f"{path}.buses[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(p, "expected object")
        kind = _want(rec, "kind", str, p)
        if kind not in BUS_KINDS:
            raise SchemaError(f"{p}.kind", f"expected one of {BUS_KINDS}, "
                              f"got {kind!r}")
        buses.append(Bus(
            id=int(_want(rec, "id", int, p)),
            kind=kind,
            v_mag_init=_want(rec, "v_mag_init", float, p),
            v_ang_init=_want(rec, "v_ang_init", float, p),
            shunt_g=_want(rec, "shunt_g", float, p),
            shunt_b=_want(rec, "shunt_b", float, p),
        ))

    branches = []
    for i, rec in enumerate(_want_list(doc, "branches", path)):
        p = f"{path}.branches[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(p, "expected object")
        branches.append(Branch(
            from_bus=int(_want(rec, "from_bus", int, p)),
            to_bus=int(_want(rec, "to_bus", int, p)),
            r=_want(rec, "r", float, p),
            x=_want(rec, "x", float, p),
            b_charging=_want(rec, "b_charging", float, p),
            tap_ratio=_want(rec, "tap_ratio", float, p),
            phase_shift=_want(rec, "phase_shift", float, p),
            in_service=_want(rec, "in_service", bool, p),
        ))

    generators = []
    for i, rec in enumerate(_want_list(doc, "generators", path)):
        p = f"{path}.generators[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(p, "expected object")
        generators.append(Generator(
            bus=int(_want(rec, "bus", int, p)),
            p_set=_want(rec, "p_set", float, p),
            v_set=_want(rec, "v_set", float, p),
            p_max=_want(rec, "p_max", float, p),
            p_min=_want(rec, "p_min", float, p),
            participation=_want(rec, "participation", float, p),
            in_service=_want(rec, "in_service", bool, p),
        ))

    loads = []
    for i, rec in enumerate(_want_list(doc, "loads", path)):
        p = f"{path}.loads[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(p, "expected object")
        loads.append(Load(
            bus=int(_want(rec, "bus", int, p)),
            p=_want(rec, "p", float, p),
            q=_want(rec, "q", float, p),
            in_service=_want(rec, "in_service", bool, p),
        ))

    return GridCase(base_mva, tuple(buses), tuple(branches),
                    tuple(generators), tuple(loads))


def parse_native(text: str) -> GridCase:
    """Parse the native JSON format and validate the result."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from exc
    case = case_from_dict(doc)
    diags = validate(case)
    if diags:
        raise ValidationError(diags)
    return case
