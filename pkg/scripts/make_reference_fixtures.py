#!/usr/bin/env python3
"""Generate frozen reference power-flow solutions for the test suite.

This script is deliberately independent of the warmflow package: it contains
its own MATPOWER table reader, its own dense Y-bus construction, and a
classic polar-coordinates power-mismatch Newton-Raphson solver (the package
solver works in rectangular coordinates on current mismatches with a sparse
Jacobian). Agreement between the two is therefore a meaningful check.

Modeling conventions shared with the package, so the fixed points coincide:
bus shunts on the Y-bus diagonal, PV and slack magnitudes from generator
voltage setpoints, slack angle from the bus table, no reactive limits.

Usage: python3 scripts/make_reference_fixtures.py
Writes tests/fixtures/reference_solutions.json; run once and commit.
"""

import json
import math
import pathlib
import re

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
TOL = 1e-10
MAX_ITER = 50


def read_tables(path):
    text = path.read_text()
    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9eE.+-]+)\s*;", text).group(1))
    tables = {}
    for name in ("bus", "gen", "branch"):
        block = re.search(r"mpc\." + name + r"\s*=\s*\[(.*?)\];", text, re.S).group(1)
        rows = []
        for line in block.strip().splitlines():
            line = line.split("%")[0].strip().rstrip(";")
            if line:
                rows.append([float(tok) for tok in line.split()])
        tables[name] = np.array(rows)
    return base, tables


def dense_ybus(n_bus, pos, base, bus, branch):
    y = np.zeros((n_bus, n_bus), dtype=complex)
    for row in branch:
        if row[10] <= 0:
            continue
        s, t = pos[int(row[0])], pos[int(row[1])]
        ys = 1.0 / complex(row[2], row[3])
        bc = 0.5j * row[4]
        tau = row[8] if row[8] != 0 else 1.0
        shift = math.radians(row[9])
        tap = tau * np.exp(1j * shift)
        y[s, s] += (ys + bc) / (tap * np.conj(tap))
        y[t, t] += ys + bc
        y[s, t] += -ys / np.conj(tap)
        y[t, s] += -ys / tap
    for row in bus:
        i = pos[int(row[0])]
        y[i, i] += complex(row[4], row[5]) / base
    return y


def solve_polar(base, tables):
    bus, gen, branch = tables["bus"], tables["gen"], tables["branch"]
    n = len(bus)
    pos = {int(row[0]): i for i, row in enumerate(bus)}
    y = dense_ybus(n, pos, base, bus, branch)

    kinds = bus[:, 1].astype(int)
    live = gen[gen[:, 7] > 0]
    vg = {}
    for row in live:
        vg.setdefault(int(row[0]), row[5])
    # PV buses without an active generator behave as PQ
    pv = np.array([k == 2 and int(b) in vg for k, b in zip(kinds, bus[:, 0])])
    slack = kinds == 3
    pq = ~pv & ~slack

    p_sched = -bus[:, 2] / base
    q_sched = -bus[:, 3] / base
    for row in live:
        p_sched[pos[int(row[0])]] += row[1] / base

    vm = np.where(pq, bus[:, 7], 1.0)
    vm[pq & (bus[:, 7] <= 0)] = 1.0
    for i in range(n):
        if pv[i] or slack[i]:
            vm[i] = vg.get(int(bus[i, 0]), bus[i, 7])
    va = np.full(n, math.radians(bus[np.argmax(slack), 8]))

    pvpq = np.flatnonzero(~slack)
    pq_idx = np.flatnonzero(pq)

    for iteration in range(MAX_ITER + 1):
        v = vm * np.exp(1j * va)
        current = y @ v
        s = v * np.conj(current)
        f = np.concatenate([(s.real - p_sched)[pvpq], (s.imag - q_sched)[pq_idx]])
        if np.max(np.abs(f)) <= TOL:
            return vm, va, iteration
        diag_v = np.diag(v)
        diag_i = np.diag(current)
        diag_vn = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
        ds_dvm = diag_v @ np.conj(y @ diag_vn) + np.conj(diag_i) @ diag_vn
        j = np.block([
            [ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq_idx)]],
            [ds_dva.imag[np.ix_(pq_idx, pvpq)], ds_dvm.imag[np.ix_(pq_idx, pq_idx)]],
        ])
        dx = np.linalg.solve(j, -f)
        va[pvpq] += dx[:len(pvpq)]
        vm[pq_idx] += dx[len(pvpq):]
    raise RuntimeError("polar reference solver did not converge")


def main():
    out = {}
    for name in ("case14", "case118"):
        base, tables = read_tables(ROOT / "data" / f"{name}.m")
        vm, va, iterations = solve_polar(base, tables)
        out[name] = {
            "bus_ids": [int(b) for b in tables["bus"][:, 0]],
            "vm": vm.tolist(),
            "va_rad": va.tolist(),
            "iterations": iterations,
            "tol": TOL,
        }
        print(f"{name}: converged in {iterations} iterations, "
              f"vm range [{vm.min():.4f}, {vm.max():.4f}]")
    target = ROOT / "tests" / "fixtures" / "reference_solutions.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(out, indent=1, sort_keys=True))
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
