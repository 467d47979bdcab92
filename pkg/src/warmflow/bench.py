"""Warm-start iteration benchmark.

For every test sample, solve the post-contingency case three ways under
identical solver options: from a flat start, from the pre-contingency
solution, and from each trained model's prediction. The headline metric is
Newton iteration count; wall times are recorded in memory but excluded from
emitted artifacts unless explicitly requested, so benchmark outputs are a
pure function of (dataset, models, options) and re-runs are byte-identical.

Ratios and win rates compare only samples that converged under both methods
being compared; non-convergence is reported per method, never dropped
silently.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass

import numpy as np

from .cgrf import CgrfModel, predict
from .contingency import Sample
from .powerflow import SolveOptions, flat_start, solve_nr

CSV_HEADER = ("sample_id,init_method,iterations,converged,max_mismatch,"
              "prediction_mse,wall_time")
BASELINE_METHODS = ("flat", "vpre")


@dataclass(frozen=True)
class BenchRow:
    sample_id: int
    init_method: str
    iterations: int
    converged: bool
    max_mismatch: float
    prediction_mse: float | None    # None for the non-model baselines
    wall_time: float


@dataclass(frozen=True)
class BenchSummary:
    methods: tuple[str, ...]
    n_samples: int
    stats: dict                     # method -> {median, mean, std, ...}
    speedup: dict                   # method -> median(flat)/median(method)
    win_rate: dict                  # method -> P[iters < flat], pairwise
    mutual_counts: dict             # method -> samples converged with flat

    def to_dict(self) -> dict:
        return {"methods": list(self.methods), "n_samples": self.n_samples,
                "stats": self.stats, "speedup": self.speedup,
                "win_rate": self.win_rate,
                "mutual_counts": self.mutual_counts}


def _bench_sample(sample: Sample, models: dict[str, CgrfModel],
                  opts: SolveOptions) -> list[BenchRow]:
    y = sample.label.interleaved()
    inits = [("flat", flat_start(sample.post_case), None),
             ("vpre", sample.pre_solution, None)]
    for name, model in models.items():
        mu = predict(model, sample)
        mse = float(np.mean((mu.interleaved() - y) ** 2))
        inits.append((name, mu, mse))
    rows = []
    for method, state, mse in inits:
        _, report = solve_nr(sample.post_case, state, opts)
        rows.append(BenchRow(sample_id=sample.meta.seed, init_method=method,
                             iterations=report.iterations,
                             converged=report.converged,
                             max_mismatch=report.max_mismatch,
                             prediction_mse=mse,
                             wall_time=report.wall_time))
    return rows


_POOL: dict = {}


def _pool_init(models, opts):
    _POOL["models"] = models
    _POOL["opts"] = opts


def _pool_bench(sample):
    return _bench_sample(sample, _POOL["models"], _POOL["opts"])


def run_bench(samples: list[Sample], models: dict[str, CgrfModel],
              opts: SolveOptions = SolveOptions(),
              jobs: int = 1) -> list[BenchRow]:
    """One row per (sample, init method), ordered sample-major with methods
    in the fixed order flat, vpre, then the given model names."""
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs, initializer=_pool_init,
                                 initargs=(models, opts)) as pool:
            per_sample = list(pool.map(_pool_bench, samples, chunksize=4))
    else:
        per_sample = [_bench_sample(s, models, opts) for s in samples]
    return [row for rows in per_sample for row in rows]


def summarize(rows: list[BenchRow]) -> BenchSummary:
    if not rows:
        raise ValueError("no benchmark rows to summarize")
    methods = list(BASELINE_METHODS)
    for row in rows:
        if row.init_method not in methods:
            methods.append(row.init_method)
    by_method = {m: [r for r in rows if r.init_method == m] for m in methods}
    sample_ids = sorted({r.sample_id for r in rows})

    stats = {}
    for m in methods:
        rs = by_method[m]
        conv = [r.iterations for r in rs if r.converged]
        stats[m] = {
            "n": len(rs),
            "n_converged": len(conv),
            "convergence_rate": len(conv) / len(rs) if rs else 0.0,
            "median_iterations": float(np.median(conv)) if conv else None,
            "mean_iterations": float(np.mean(conv)) if conv else None,
            "std_iterations": float(np.std(conv)) if conv else None,
        }

    flat = {r.sample_id: r for r in by_method.get("flat", [])}
    speedup, win_rate, mutual_counts = {}, {}, {}
    for m in methods:
        if m == "flat":
            continue
        pairs = [(flat[r.sample_id], r) for r in by_method[m]
                 if r.sample_id in flat and flat[r.sample_id].converged
                 and r.converged]
        mutual_counts[m] = len(pairs)
        if pairs:
            f_iters = np.array([p[0].iterations for p in pairs], dtype=float)
            m_iters = np.array([p[1].iterations for p in pairs], dtype=float)
            med = float(np.median(m_iters))
            speedup[m] = float(np.median(f_iters)) / med if med > 0 else None
            win_rate[m] = float(np.mean(m_iters < f_iters))
        else:
            speedup[m] = None
            win_rate[m] = None
    return BenchSummary(methods=tuple(methods), n_samples=len(sample_ids),
                        stats=stats, speedup=speedup, win_rate=win_rate,
                        mutual_counts=mutual_counts)


# --- artifacts ------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(float(value)) if isinstance(value, float) else str(value)


def emit_csv(rows: list[BenchRow], path,
             include_timings: bool = False) -> None:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            str(r.sample_id), r.init_method, str(r.iterations),
            _fmt(r.converged), _fmt(r.max_mismatch), _fmt(r.prediction_mse),
            _fmt(r.wall_time) if include_timings else ""]))
    try:
        pathlib.Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write benchmark CSV to {path}: {exc}") from exc


def emit_report(summary: BenchSummary, path, extra: dict | None = None) -> None:
    doc = summary.to_dict()
    if extra:
        doc.update(extra)
    try:
        pathlib.Path(path).write_text(json.dumps(doc, indent=1,
                                                 sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write benchmark report to {path}: "
                      f"{exc}") from exc


def emit_svg(rows: list[BenchRow], path) -> None:
    """Box plot of iteration counts per init method, one glyph group each.

    Hand-rolled fixed-layout SVG so the artifact is deterministic; converged
    rows only, whiskers at the furthest points within 1.5 IQR, outliers as
    circles.
    """
    methods = list(BASELINE_METHODS)
    for row in rows:
        if row.init_method not in methods:
            methods.append(row.init_method)
    series = {m: sorted(r.iterations for r in rows
                        if r.init_method == m and r.converged)
              for m in methods}
    methods = [m for m in methods if series[m]]
    if not methods:
        raise ValueError("no converged rows to plot")

    width, height = 120 * len(methods) + 80, 320
    top, bottom, left = 20, 40, 50
    ymax = max(max(series[m]) for m in methods)
    ymax = max(1, ymax)

    def ypix(v: float) -> float:
        return top + (height - top - bottom) * (1.0 - v / ymax)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             '<style>text{font:12px sans-serif}line,rect{stroke:#333;'
             'fill:none}circle{fill:none;stroke:#333}</style>',
             f'<line x1="{left}" y1="{top}" x2="{left}" '
             f'y2="{height - bottom}"/>']
    step = max(1, int(np.ceil(ymax / 8)))
    for tick in range(0, ymax + 1, step):
        y = ypix(tick)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" '
                     f'y2="{y:.1f}"/>')
        parts.append(f'<text x="{left - 8}" y="{y + 4:.1f}" '
                     f'text-anchor="end">{tick}</text>')
    parts.append(f'<text x="12" y="{top - 6}">iterations</text>')

    for k, m in enumerate(methods):
        xs = left + 40 + 120 * k
        data = np.array(series[m], dtype=float)
        q1, med, q3 = np.percentile(data, [25, 50, 75])
        iqr = q3 - q1
        lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = data[(data >= lo_fence) & (data <= hi_fence)]
        lo, hi = inside.min(), inside.max()
        outliers = data[(data < lo_fence) | (data > hi_fence)]
        box_w = 60
        parts.append(f'<g id="box-{m}">')
        parts.append(f'<rect x="{xs}" y="{ypix(q3):.1f}" width="{box_w}" '
                     f'height="{ypix(q1) - ypix(q3):.1f}"/>')
        parts.append(f'<line x1="{xs}" y1="{ypix(med):.1f}" '
                     f'x2="{xs + box_w}" y2="{ypix(med):.1f}"/>')
        cx = xs + box_w / 2
        for v, q in ((lo, q1), (hi, q3)):
            parts.append(f'<line x1="{cx}" y1="{ypix(q):.1f}" x2="{cx}" '
                         f'y2="{ypix(v):.1f}"/>')
            parts.append(f'<line x1="{cx - 15}" y1="{ypix(v):.1f}" '
                         f'x2="{cx + 15}" y2="{ypix(v):.1f}"/>')
        for v in sorted(set(outliers)):
            parts.append(f'<circle cx="{cx}" cy="{ypix(v):.1f}" r="3"/>')
        parts.append(f'<text x="{cx}" y="{height - 16}" '
                     f'text-anchor="middle">{m}</text>')
        parts.append('</g>')
    parts.append('</svg>')
    try:
        pathlib.Path(path).write_text("\n".join(parts) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write benchmark SVG to {path}: {exc}") from exc
