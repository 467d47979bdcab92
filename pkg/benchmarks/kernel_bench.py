"""Timing comparison of the pure-numpy and compiled kernel backends.

Exercises the three hot kernels on a real grid workload: the Newton
residual/Jacobian fill, the precision-system scatter, and the gradient
gather. Each kernel runs on identical inputs under both backends, so the
numbers isolate the backend cost from everything around it.

    python3 benchmarks/kernel_bench.py [--case PATH] [--repeats N] [--inner N]
"""

import argparse
import pathlib
import timeit

import numpy as np

from warmflow import flat_start
from warmflow.cgrf import AssemblyPlan
from warmflow.grid import bus_index
from warmflow.matpower import parse_matpower
from warmflow.powerflow import _Plan
from warmflow._kernels import _pure

DEFAULT_CASE = (pathlib.Path(__file__).resolve().parent.parent
                / "data" / "case118.m")


def load_backends():
    backends = {"pure": _pure}
    try:
        from warmflow._kernels import _native
        backends["native"] = _native
    except ImportError:
        print("compiled backend not importable; timing pure only")
    return backends


def build_workloads(case):
    """One argument tuple per kernel, shared across backends."""
    rng = np.random.default_rng(0)
    n = case.n_buses

    plan = _Plan(case)
    x = flat_start(case).interleaved()
    newton_args = (plan.indptr, plan.indices, plan.gdat, plan.bdat,
                   plan.rows, plan.pos_r, plan.pos_i, plan.kind,
                   plan.p_sched, plan.q_sched, plan.vset, plan.vr_t,
                   plan.vi_t, x, plan.jdata, plan.f, plan.pmis,
                   plan.qmis, plan.vmis)

    idx = bus_index(case)
    pairs = np.array([[idx[b.from_bus], idx[b.to_bus]]
                      for b in case.branches if b.in_service])
    m = len(pairs)
    aplan = AssemblyPlan(n, pairs)
    node_out = rng.normal(size=(n, 5))
    edge_out = rng.normal(size=(m, 4))
    zi = np.zeros(n, dtype=np.uint8)
    scatter_args = (node_out, edge_out, aplan.node_pos, aplan.edge_pos_st,
                    aplan.edge_pos_ts, zi, aplan.diag_pos, 1e-6,
                    np.zeros(aplan.nnz), np.zeros(2 * n))

    e_src = np.ascontiguousarray(pairs[:, 0], dtype=np.int32)
    e_dst = np.ascontiguousarray(pairs[:, 1], dtype=np.int32)
    gather_args = (rng.normal(size=2 * n), rng.normal(size=2 * n),
                   e_src, e_dst, zi, np.zeros((n, 5)), np.zeros((m, 4)))

    return {"newton_fill": newton_args, "scatter_system": scatter_args,
            "gather_grads": gather_args}


def best_time(fn, args, repeats, inner):
    fn(*args)  # warmup
    runs = timeit.repeat(lambda: fn(*args), number=inner, repeat=repeats)
    return min(runs) / inner


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default=str(DEFAULT_CASE))
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--inner", type=int, default=200)
    opts = ap.parse_args(argv)

    case = parse_matpower(pathlib.Path(opts.case).read_text())
    backends = load_backends()
    workloads = build_workloads(case)

    print(f"case: {pathlib.Path(opts.case).name}  "
          f"({case.n_buses} buses, {len(case.branches)} branches); "
          f"best of {opts.repeats} x {opts.inner} calls\n")
    header = f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel, args in workloads.items():
        times = [best_time(getattr(mod, kernel), args, opts.repeats,
                           opts.inner) for mod in backends.values()]
        row = f"{kernel:<16}" + "".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
