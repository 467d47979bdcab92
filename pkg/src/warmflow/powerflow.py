"""Newton-Raphson AC power flow in rectangular voltage coordinates.

The solver works on the current-injection form of the network equations with
the state ordered bus-major interleaved, x = [vr_0, vi_0, vr_1, vi_1, ...].
Per bus the two residual rows depend on its kind:

* PQ: real and imaginary current mismatch, (Y v)_i - conj(S_i / v_i), where
  S_i is the scheduled injection (generation minus load; shunts live on the
  Y-bus diagonal).
* PV: active-power mismatch P_i(v) - P_i^sched and the squared-magnitude
  constraint |v_i|^2 - v_set^2.
* slack: identity rows pinning v_i to its setpoint magnitude at the case's
  initial angle.

All buses stay in the 2n x 2n system, so the Jacobian keeps one fixed
sparsity structure derived from the Y-bus pattern; only values are refilled
each iteration (see warmflow._kernels). Convergence is declared on the
infinity norm of the active/reactive power mismatch plus the PV magnitude
residual, not on the current-form residual used for the Newton step.

Generators carry no reactive-power data in this model, so a generator at a
PQ bus contributes only its p_set; scheduled reactive power comes from loads
alone. SolveOptions.enforce_q_limits exists for interface compatibility and
is inert (there are no Q limits to enforce); enabling it logs a warning.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _kernels
from .grid import PQ, PV, SLACK, GridCase, GridError, bus_index

log = logging.getLogger(__name__)

_CLAMP_RESIDUAL = 1e-9


@dataclass(frozen=True)
class VoltageState:
    """Rectangular bus voltages, one entry per bus in case order."""

    v_real: np.ndarray
    v_imag: np.ndarray

    def __post_init__(self):
        vr = np.asarray(self.v_real, dtype=np.float64)
        vi = np.asarray(self.v_imag, dtype=np.float64)
        if vr.shape != vi.shape or vr.ndim != 1:
            raise ValueError("v_real and v_imag must be 1-D of equal length")
        object.__setattr__(self, "v_real", vr)
        object.__setattr__(self, "v_imag", vi)

    def __eq__(self, other):
        if not isinstance(other, VoltageState):
            return NotImplemented
        return (np.array_equal(self.v_real, other.v_real)
                and np.array_equal(self.v_imag, other.v_imag))

    @property
    def n(self) -> int:
        return len(self.v_real)

    def interleaved(self) -> np.ndarray:
        """Return [vr_0, vi_0, vr_1, vi_1, ...]."""
        out = np.empty(2 * self.n)
        out[0::2] = self.v_real
        out[1::2] = self.v_imag
        return out

    @classmethod
    def from_interleaved(cls, x: np.ndarray) -> "VoltageState":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[0::2].copy(), x[1::2].copy())

    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.v_real, self.v_imag)

    def angles(self) -> np.ndarray:
        return np.arctan2(self.v_imag, self.v_real)


@dataclass(frozen=True)
class YBus:
    """Sparse complex bus admittance matrix in case bus order.

    Every diagonal entry is structurally present (possibly zero valued) so
    downstream structure derivations can rely on non-empty rows.
    """

    matrix: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-6
    max_iter: int = 100
    enforce_q_limits: bool = False
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    iterations: int
    max_mismatch: float
    wall_time: float
    note: str = ""

    def to_dict(self) -> dict:
        return {"converged": self.converged, "iterations": self.iterations,
                "max_mismatch": self.max_mismatch,
                "wall_time": self.wall_time, "note": self.note}


def build_ybus(case: GridCase) -> YBus:
    """Assemble the pi-model bus admittance matrix.

    In-service branches stamp the standard two-port with off-nominal tap
    ratio on the from side and phase shift; bus shunts go on the diagonal.
    """
    idx = bus_index(case)
    n = case.n_buses
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []

    for br in case.branches:
        if not br.in_service:
            continue
        s = idx[br.from_bus]
        t = idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        half_charge = 0.5j * br.b_charging
        tap = br.tap_ratio * np.exp(1j * br.phase_shift)
        rows += [s, t, s, t]
        cols += [s, t, t, s]
        vals += [(y + half_charge) / (tap * np.conj(tap)),
                 y + half_charge,
                 -y / np.conj(tap),
                 -y / tap]

    for i, bus in enumerate(case.buses):
        rows.append(i)
        cols.append(i)
        vals.append(complex(bus.shunt_g, bus.shunt_b))

    matrix = sp.csr_matrix(
        (np.array(vals, dtype=np.complex128), (rows, cols)), shape=(n, n))
    matrix.sum_duplicates()
    matrix.sort_indices()
    return YBus(matrix)


def _setpoints(case: GridCase) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-bus voltage setpoints: magnitudes, slack vr target, slack vi target.

    A PV or slack bus takes the v_set of its first in-service generator,
    falling back to the bus's initial magnitude when no generator is present.
    Targets for non-slack buses are zero-filled and unused.
    """
    n = case.n_buses
    idx = bus_index(case)
    vset = np.array([b.v_mag_init for b in case.buses])
    assigned = set()
    for gen in case.generators:
        if gen.in_service and gen.bus not in assigned:
            vset[idx[gen.bus]] = gen.v_set
            assigned.add(gen.bus)
    vr_t = np.zeros(n)
    vi_t = np.zeros(n)
    for i, bus in enumerate(case.buses):
        if bus.kind == SLACK:
            vr_t[i] = vset[i] * np.cos(bus.v_ang_init)
            vi_t[i] = vset[i] * np.sin(bus.v_ang_init)
    return vset, vr_t, vi_t


def flat_start(case: GridCase) -> VoltageState:
    """Unit voltage at zero angle; PV and slack buses at setpoint magnitude."""
    vset, _, _ = _setpoints(case)
    vr = np.ones(case.n_buses)
    for i, bus in enumerate(case.buses):
        if bus.kind in (PV, SLACK):
            vr[i] = vset[i]
    return VoltageState(vr, np.zeros(case.n_buses))


def scheduled_injections(case: GridCase) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus scheduled (P, Q): in-service generation minus load."""
    idx = bus_index(case)
    p = np.zeros(case.n_buses)
    q = np.zeros(case.n_buses)
    for gen in case.generators:
        if gen.in_service:
            p[idx[gen.bus]] += gen.p_set
    for load in case.loads:
        if load.in_service:
            p[idx[load.bus]] -= load.p
            q[idx[load.bus]] -= load.q
    return p, q


class _Plan:
    """Precomputed structure shared by all Newton iterations of one case."""

    def __init__(self, case: GridCase):
        ybus = build_ybus(case)
        csr = ybus.matrix
        n = case.n_buses
        nnz = csr.nnz
        self.n = n
        self.ybus = ybus
        self.indptr = csr.indptr.astype(np.int32)
        self.indices = csr.indices.astype(np.int32)
        self.gdat = np.ascontiguousarray(csr.data.real)
        self.bdat = np.ascontiguousarray(csr.data.imag)
        self.rows = np.repeat(np.arange(n, dtype=np.int32),
                              np.diff(self.indptr))

        # Jacobian structure: ybus entry p in row i owns J values at
        # pos_r[p], pos_r[p]+1 (row 2i) and pos_i[p], pos_i[p]+1 (row 2i+1)
        entry = np.arange(nnz, dtype=np.int64)
        self.pos_r = 2 * entry + 2 * self.indptr[self.rows].astype(np.int64)
        self.pos_i = 2 * entry + 2 * self.indptr[self.rows + 1].astype(np.int64)
        j_indptr = np.empty(2 * n + 1, dtype=np.int32)
        j_indptr[0:-1:2] = 4 * self.indptr[:-1]
        j_indptr[1:-1:2] = 2 * (self.indptr[:-1] + self.indptr[1:])
        j_indptr[-1] = 4 * nnz
        j_indices = np.empty(4 * nnz, dtype=np.int32)
        j_indices[self.pos_r] = 2 * self.indices
        j_indices[self.pos_r + 1] = 2 * self.indices + 1
        j_indices[self.pos_i] = 2 * self.indices
        j_indices[self.pos_i + 1] = 2 * self.indices + 1
        self.j_indptr = j_indptr
        self.j_indices = j_indices

        kind_code = {PQ: _kernels.KIND_PQ, PV: _kernels.KIND_PV,
                     SLACK: _kernels.KIND_SLACK}
        self.kind = np.array([kind_code[b.kind] for b in case.buses],
                             dtype=np.int8)
        self.p_sched, self.q_sched = scheduled_injections(case)
        self.vset, self.vr_t, self.vi_t = _setpoints(case)

        self.jdata = np.zeros(4 * nnz)
        self.f = np.zeros(2 * n)
        self.pmis = np.zeros(n)
        self.qmis = np.zeros(n)
        self.vmis = np.zeros(n)

    def fill(self, x: np.ndarray) -> float:
        """Run the kernel at state x; returns the convergence mismatch."""
        _kernels.newton_fill(
            self.indptr, self.indices, self.gdat, self.bdat, self.rows,
            self.pos_r, self.pos_i, self.kind, self.p_sched, self.q_sched,
            self.vset, self.vr_t, self.vi_t, x,
            self.jdata, self.f, self.pmis, self.qmis, self.vmis)
        return max(np.max(np.abs(self.pmis)), np.max(np.abs(self.qmis)),
                   np.max(self.vmis))

    def jacobian(self) -> sp.csc_matrix:
        j = sp.csr_matrix((self.jdata, self.j_indices, self.j_indptr),
                          shape=(2 * self.n, 2 * self.n))
        return j.tocsc()


def solve_nr(case: GridCase, init: VoltageState,
             opts: SolveOptions = SolveOptions()) -> tuple[VoltageState, SolveReport]:
    """Newton-Raphson solve from the given initial state.

    Never raises on numerical failure: non-convergence within max_iter, a
    singular Jacobian, or a diverging iterate all return converged=False
    with the last usable state and a note in the report. ``iterations``
    counts completed Newton updates, so starting at the exact solution
    reports zero.
    """
    if init.n != case.n_buses:
        raise ValueError(f"init has {init.n} buses, case has {case.n_buses}")
    if opts.enforce_q_limits:
        log.warning("enforce_q_limits requested, but generators carry no "
                    "reactive limits in this model; flag ignored")

    started = time.perf_counter()
    plan = _Plan(case)
    x = init.interleaved()
    iterations = 0
    converged = False
    note = ""

    while True:
        mismatch = plan.fill(x)
        if not np.isfinite(mismatch):
            note = "diverged: non-finite mismatch"
            break
        if mismatch <= opts.tol:
            converged = True
            break
        if iterations >= opts.max_iter:
            break
        try:
            lu = splu(plan.jacobian())
            dx = lu.solve(-plan.f)
        except RuntimeError as exc:
            note = f"singular Jacobian: {exc}"
            break
        x_next = x + opts.damping * dx
        if not np.all(np.isfinite(x_next)):
            note = "diverged: non-finite update"
            break
        x = x_next
        iterations += 1

    wall = time.perf_counter() - started
    report = SolveReport(converged=converged, iterations=iterations,
                         max_mismatch=float(mismatch), wall_time=wall,
                         note=note)
    return VoltageState.from_interleaved(x), report


def apply_droop_redispatch(case: GridCase, delta_p_total: float) -> GridCase:
    """Share a system-wide active-power delta among generators by droop.

    Each in-service generator with positive participation receives a share
    proportional to its participation factor, clamped to its limits; clamp
    residuals keep re-distributing among the remaining free generators until
    the residual is negligible or everyone is clamped (which attaches a
    warning note to the returned case). The slack bus absorbs whatever is
    left implicitly during the power-flow solve.
    """
    if abs(delta_p_total) < _CLAMP_RESIDUAL:
        return case
    movable = [i for i, g in enumerate(case.generators)
               if g.in_service and g.participation > 0]
    if not movable:
        raise GridError("droop redispatch needs at least one in-service "
                        "generator with positive participation")

    p_new = {i: case.generators[i].p_set for i in movable}
    free = set(movable)
    remaining = delta_p_total
    while abs(remaining) >= _CLAMP_RESIDUAL and free:
        total_part = sum(case.generators[i].participation for i in free)
        share = {i: remaining * case.generators[i].participation / total_part
                 for i in free}
        remaining = 0.0
        clamped = []
        for i in free:
            gen = case.generators[i]
            target = p_new[i] + share[i]
            if target > gen.p_max:
                remaining += target - gen.p_max
                target = gen.p_max
                clamped.append(i)
            elif target < gen.p_min:
                remaining += target - gen.p_min
                target = gen.p_min
                clamped.append(i)
            p_new[i] = target
        free -= set(clamped)

    gens = tuple(replace(g, p_set=p_new[i]) if i in p_new else g
                 for i, g in enumerate(case.generators))
    out = GridCase(case.base_mva, case.buses, case.branches, gens,
                   case.loads, case.notes)
    if abs(remaining) >= _CLAMP_RESIDUAL:
        out = out.with_notes(
            f"droop redispatch exhausted generator limits; "
            f"{remaining:.6g} p.u. unallocated")
    return out


@dataclass(frozen=True)
class Injections:
    """Per-bus electrical quantities at a given voltage state."""

    p: np.ndarray
    q: np.ndarray
    i_real: np.ndarray
    i_imag: np.ndarray
    q_shunt: np.ndarray


def compute_injections(case: GridCase, v: VoltageState) -> Injections:
    """Network injections I = Y v, S = v conj(I), and shunt reactive power.

    q_shunt is the reactive power injected by the bus shunt, shunt_b |v|^2
    (positive for capacitive shunts).
    """
    if v.n != case.n_buses:
        raise ValueError(f"state has {v.n} buses, case has {case.n_buses}")
    ybus = build_ybus(case)
    vc = v.v_real + 1j * v.v_imag
    current = ybus.matrix @ vc
    power = vc * np.conj(current)
    shunt_b = np.array([b.shunt_b for b in case.buses])
    return Injections(
        p=np.ascontiguousarray(power.real),
        q=np.ascontiguousarray(power.imag),
        i_real=np.ascontiguousarray(current.real),
        i_imag=np.ascontiguousarray(current.imag),
        q_shunt=shunt_b * (v.v_real ** 2 + v.v_imag ** 2),
    )
