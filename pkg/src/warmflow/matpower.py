"""Parser for the MATPOWER case text format (bus/gen/branch subset).

Only the steady-state AC quantities are read: ``baseMVA`` and the ``bus``,
``gen`` and ``branch`` tables. ``gencost``, ``dcline`` and any other tables
are skipped with a logged warning. MW/MVAr columns are converted to per-unit
on the system base and degree columns to radians, so the returned GridCase
is directly solvable.
"""

from __future__ import annotations

import logging
import re

from .grid import (PQ, PV, SLACK, Branch, Bus, Generator, GridCase, GridError,
                   Load, ValidationError, validate)

log = logging.getLogger(__name__)

_DEG = 3.141592653589793 / 180.0

# MATPOWER column positions (0-based)
_BUS_I, _BUS_TYPE, _PD, _QD, _GS, _BS, _VM, _VA = 0, 1, 2, 3, 4, 5, 7, 8
_GEN_BUS, _PG, _VG, _GEN_STATUS, _PMAX, _PMIN = 0, 1, 5, 7, 8, 9
_F_BUS, _T_BUS, _BR_R, _BR_X, _BR_B = 0, 1, 2, 3, 4
_TAP, _SHIFT, _BR_STATUS = 8, 9, 10

_MIN_COLS = {"bus": 9, "gen": 10, "branch": 11}
_KIND_BY_TYPE = {1: PQ, 2: PV, 3: SLACK}

_BASE_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9eE.+-]+)\s*;")
_TABLE_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")


class MatpowerParseError(GridError):
    """Malformed MATPOWER text; carries the 1-based source line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _strip(line: str) -> str:
    cut = line.find("%")
    if cut >= 0:
        line = line[:cut]
    return line.strip()


def _scan_tables(text: str):
    """Yield (name, [(line_no, row_text), ...]) per mpc.<name> = [ ... ]; block."""
    base_mva = None
    tables: dict[str, list[tuple[int, str]]] = {}
    current: str | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if current is None:
            m = _BASE_RE.search(line)
            if m:
                base_mva = float(m.group(1))
                continue
            m = _TABLE_RE.search(line)
            if m:
                current = m.group(1)
                tables[current] = []
                remainder = line[m.end():].strip()
                if remainder:
                    line = remainder
                else:
                    continue
            else:
                continue
        closing = line.endswith("];")
        body = line[:-2] if closing else line
        body = body.strip().rstrip(";")
        if body:
            tables[current].append((line_no, body))
        if closing:
            current = None
    if current is not None:
        raise MatpowerParseError(len(text.splitlines()),
                                 f"table {current!r} never closed with '];'")
    return base_mva, tables


def _parse_rows(name: str, rows: list[tuple[int, str]]) -> list[list[float]]:
    parsed = []
    for line_no, body in rows:
        try:
            values = [float(tok) for tok in body.split()]
        except ValueError as exc:
            raise MatpowerParseError(line_no,
                                     f"{name} row not numeric: {exc}") from exc
        if len(values) < _MIN_COLS[name]:
            raise MatpowerParseError(
                line_no, f"{name} row has {len(values)} columns, "
                f"need at least {_MIN_COLS[name]}")
        parsed.append((line_no, values))
    return parsed


def parse_matpower(text: str) -> GridCase:
    """Parse MATPOWER case text into a validated GridCase.

    Loads are lifted out of the bus-table PD/QD columns into explicit Load
    records (one per bus with nonzero demand). Generator participation
    defaults to the capacity span max(0, p_max - p_min). PV buses without an
    in-service generator are demoted to PQ.
    """
    base_mva, tables = _scan_tables(text)
    if base_mva is None:
        raise MatpowerParseError(1, "mpc.baseMVA not found")
    if base_mva <= 0:
        raise MatpowerParseError(1, f"baseMVA must be positive, got {base_mva}")
    for required in ("bus", "gen", "branch"):
        if required not in tables:
            raise MatpowerParseError(1, f"mpc.{required} table not found")
    for name in tables:
        if name not in ("bus", "gen", "branch", "version"):
            log.warning("ignoring unsupported table mpc.%s", name)

    buses: list[Bus] = []
    loads: list[Load] = []
    for line_no, row in _parse_rows("bus", tables["bus"]):
        bus_type = int(row[_BUS_TYPE])
        if bus_type == 4:
            raise MatpowerParseError(
                line_no, f"bus {int(row[_BUS_I])} is isolated (type 4); "
                "not supported")
        if bus_type not in _KIND_BY_TYPE:
            raise MatpowerParseError(
                line_no, f"bus {int(row[_BUS_I])} has unknown type {bus_type}")
        bus_id = int(row[_BUS_I])
        buses.append(Bus(
            id=bus_id,
            kind=_KIND_BY_TYPE[bus_type],
            v_mag_init=row[_VM],
            v_ang_init=row[_VA] * _DEG,
            shunt_g=row[_GS] / base_mva,
            shunt_b=row[_BS] / base_mva,
        ))
        if row[_PD] != 0.0 or row[_QD] != 0.0:
            loads.append(Load(bus=bus_id, p=row[_PD] / base_mva,
                              q=row[_QD] / base_mva))

    generators: list[Generator] = []
    for line_no, row in _parse_rows("gen", tables["gen"]):
        p_max = row[_PMAX] / base_mva
        p_min = row[_PMIN] / base_mva
        generators.append(Generator(
            bus=int(row[_GEN_BUS]),
            p_set=row[_PG] / base_mva,
            v_set=row[_VG],
            p_max=p_max,
            p_min=p_min,
            participation=max(0.0, p_max - p_min),
            in_service=row[_GEN_STATUS] > 0,
        ))

    branches: list[Branch] = []
    for line_no, row in _parse_rows("branch", tables["branch"]):
        tap = row[_TAP]
        branches.append(Branch(
            from_bus=int(row[_F_BUS]),
            to_bus=int(row[_T_BUS]),
            r=row[_BR_R],
            x=row[_BR_X],
            b_charging=row[_BR_B],
            tap_ratio=tap if tap != 0.0 else 1.0,
            phase_shift=row[_SHIFT] * _DEG,
            in_service=row[_BR_STATUS] > 0,
        ))

    # MATPOWER treats a PV bus with no active generator as PQ
    live_gen_buses = {g.bus for g in generators if g.in_service}
    demoted = [b.id for b in buses if b.kind == PV and b.id not in live_gen_buses]
    if demoted:
        log.info("demoting %d PV bus(es) without in-service generators to PQ: %s",
                 len(demoted), demoted)
        buses = [
            Bus(b.id, PQ, b.v_mag_init, b.v_ang_init, b.shunt_g, b.shunt_b)
            if b.id in demoted else b
            for b in buses
        ]

    case = GridCase(base_mva, tuple(buses), tuple(branches),
                    tuple(generators), tuple(loads))
    diags = validate(case)
    if diags:
        raise ValidationError(diags)
    return case
