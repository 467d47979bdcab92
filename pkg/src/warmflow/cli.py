"""Command-line entry point.

Subcommands: pf (solve one case), gen (build a contingency dataset), train
(fit a warm-start model), predict (emit voltage predictions), bench (compare
init methods). A JSON config file can supply any option; explicit flags win
over the file, which wins over defaults. Every emitted artifact embeds the
resolved config and the package version.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure
(non-convergence, divergence, unsolvable model). Wall-clock timings are kept
out of artifacts unless --timings is given, so same-seed reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys

import numpy as np

from . import __version__
from .bench import emit_csv, emit_report, emit_svg, run_bench, summarize
from .cgrf import (CgrfError, init_model, load_model, predict, save_model)
from .contingency import (DatasetError, GenSpec, generate_dataset,
                          read_dataset, split_dataset, write_dataset)
from .features import (Standardizer, extract_features, features_record,
                       fit_standardizer)
from .grid import (GridError, SchemaError, ValidationError, parse_native,
                   serialize_native)
from .matpower import MatpowerParseError, parse_matpower
from .powerflow import (SolveOptions, SolveReport, VoltageState, flat_start,
                        solve_nr)
from .training import TrainConfig, TrainDivergence, eval_model, train

log = logging.getLogger("warmflow")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

VARIANTS = {
    "cgrf": {"sharing": "per_element", "zi_enforce": False},
    "cgrf-ps": {"sharing": "shared", "zi_enforce": False},
    "cgrf-ps-zi": {"sharing": "shared", "zi_enforce": True},
}


class UsageError(Exception):
    pass


def _load_case(path: str):
    p = pathlib.Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read case file {path}: {exc}") from exc
    if p.suffix == ".m":
        return parse_matpower(text)
    return parse_native(text)


def _load_config(path: str | None, subcommand: str) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(pathlib.Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a JSON object")
    if subcommand in doc and isinstance(doc[subcommand], dict):
        return doc[subcommand]
    return doc


def _resolve(args: argparse.Namespace, config: dict, defaults: dict) -> dict:
    """defaults < config file < explicit flags; rejects unknown config keys."""
    unknown = set(config) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    resolved = dict(defaults)
    resolved.update(config)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _echo(resolved: dict) -> dict:
    return {"config": resolved, "version": __version__}


def _solve_options(resolved: dict) -> SolveOptions:
    return SolveOptions(tol=resolved["tol"], max_iter=resolved["max_iter"],
                        damping=resolved["damping"])


def _report_dict(report: SolveReport, timings: bool) -> dict:
    doc = report.to_dict()
    if not timings:
        doc.pop("wall_time")
    return doc


# --- pf -------------------------------------------------------------------

_PF_DEFAULTS = {"init": "flat", "tol": 1e-6, "max_iter": 100, "damping": 1.0,
                "timings": False}


def cmd_pf(args) -> int:
    resolved = _resolve(args, _load_config(args.config, "pf"), _PF_DEFAULTS)
    case = _load_case(args.case)
    if resolved["init"] == "flat":
        state = flat_start(case)
    else:
        try:
            doc = json.loads(pathlib.Path(resolved["init"]).read_text())
            state = VoltageState(np.asarray(doc["v_real"]),
                                 np.asarray(doc["v_imag"]))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise UsageError(f"cannot read init state "
                             f"{resolved['init']}: {exc}") from exc
        if state.n != case.n_buses:
            raise UsageError(f"init state has {state.n} buses, case has "
                             f"{case.n_buses}")
    solution, report = solve_nr(case, state, _solve_options(resolved))
    print(f"converged: {report.converged}  iterations: {report.iterations}  "
          f"max_mismatch: {report.max_mismatch:.3e}  "
          f"wall_time: {report.wall_time:.3f}s"
          + (f"  ({report.note})" if report.note else ""))
    if args.out:
        doc = {"v_real": solution.v_real.tolist(),
               "v_imag": solution.v_imag.tolist(),
               "report": _report_dict(report, resolved["timings"]),
               **_echo(resolved)}
        pathlib.Path(args.out).write_text(json.dumps(doc, indent=1,
                                                     sort_keys=True) + "\n")
    return EXIT_OK if report.converged else EXIT_NUMERICAL


# --- gen ------------------------------------------------------------------

_GEN_DEFAULTS = {"case": None, "n_samples": 1000,
                 "load_scale_min": 0.95, "load_scale_max": 1.05,
                 "lines_min": 1, "lines_max": 2,
                 "selection": "random_fraction", "selection_value": 0.5,
                 "parameter": 2.0, "seed": 0,
                 "split": "0.8,0.1,0.1", "with_features": True,
                 "timings": False}


def cmd_gen(args) -> int:
    import time
    resolved = _resolve(args, _load_config(args.config, "gen"), _GEN_DEFAULTS)
    if resolved["case"] is None:
        raise UsageError("gen needs --case")
    case = _load_case(resolved["case"])
    spec = GenSpec(
        n_samples=int(resolved["n_samples"]),
        load_scale_range=(resolved["load_scale_min"],
                          resolved["load_scale_max"]),
        lines_removed_range=(resolved["lines_min"], resolved["lines_max"]),
        selection=resolved["selection"],
        selection_value=resolved["selection_value"],
        parameter=resolved["parameter"],
        seed=int(resolved["seed"]))
    t0 = time.perf_counter()
    samples, manifest = generate_dataset(case, spec, jobs=args.jobs)
    ratios = tuple(float(v) for v in str(resolved["split"]).split(","))
    if len(ratios) != 3:
        raise UsageError(f"split needs three ratios, got {resolved['split']}")
    order = np.random.default_rng(spec.seed).permutation(len(samples))
    n_train = int(len(samples) * ratios[0])
    n_val = int(len(samples) * ratios[1])
    splits = {"train": sorted(int(i) for i in order[:n_train]),
              "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
              "test": sorted(int(i) for i in order[n_train + n_val:])}
    extra = _echo({k: v for k, v in resolved.items()})
    if resolved["timings"]:
        extra["wall_time"] = time.perf_counter() - t0
    out = args.out or "dataset"
    write_dataset(out, samples, manifest, splits=splits, extra_manifest=extra,
                  augment=features_record if resolved["with_features"]
                  else None)
    print(f"wrote {len(samples)} samples to {out} "
          f"(discarded {manifest.discarded})")
    return EXIT_OK


# --- train ----------------------------------------------------------------

_TRAIN_DEFAULTS = {"dataset": None, "variant": "cgrf-ps",
                   "loss": "surrogate", "epochs": 200, "batch_size": 8,
                   "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
                   "schedule_period": 50, "schedule_factor": 0.5,
                   "patience": 20, "seed": 0, "hidden_dim": 64,
                   "n_layers": 3, "activation": "tanh",
                   "standardize": True, "timings": False}


def _read_dataset_or_usage(path):
    """A missing or malformed dataset is an input problem, not a numerical
    one, so it maps to the usage exit code."""
    try:
        return read_dataset(path)
    except (DatasetError, OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read dataset {path}: {exc}") from exc


def _split_samples(samples, splits):
    by_id = {s.meta.seed: i for i, s in enumerate(samples)}
    out = {}
    for name in ("train", "val", "test"):
        out[name] = [samples[by_id[i]] if i in by_id else samples[i]
                     for i in splits[name]]
    return out["train"], out["val"], out["test"]


def cmd_train(args) -> int:
    resolved = _resolve(args, _load_config(args.config, "train"),
                        _TRAIN_DEFAULTS)
    if resolved["dataset"] is None:
        raise UsageError("train needs --dataset")
    if resolved["variant"] not in VARIANTS:
        raise UsageError(f"variant must be one of {sorted(VARIANTS)}")
    samples, manifest, splits = _read_dataset_or_usage(resolved["dataset"])
    if splits is None:
        tr, va, te = split_dataset(samples, (0.8, 0.1, 0.1),
                                   seed=int(resolved["seed"]))
    else:
        tr, va, te = _split_samples(samples, splits)

    if resolved["standardize"]:
        standardizer = fit_standardizer([extract_features(s) for s in tr])
    else:
        standardizer = Standardizer.identity()
    variant = VARIANTS[resolved["variant"]]
    rng = np.random.default_rng(
        np.random.SeedSequence([int(resolved["seed"]), 0]))
    model = init_model(
        variant["sharing"], rng, standardizer,
        zi_enforce=variant["zi_enforce"],
        hidden_dim=int(resolved["hidden_dim"]),
        n_layers=int(resolved["n_layers"]),
        activation=resolved["activation"],
        n_nodes=manifest.base_case.n_buses,
        n_edges=len(manifest.base_case.branches))
    config = TrainConfig(
        loss=resolved["loss"], epochs=int(resolved["epochs"]),
        batch_size=int(resolved["batch_size"]), lr=resolved["lr"],
        beta1=resolved["beta1"], beta2=resolved["beta2"],
        eps=resolved["eps"],
        schedule_period=int(resolved["schedule_period"]),
        schedule_factor=resolved["schedule_factor"],
        patience=int(resolved["patience"]), seed=int(resolved["seed"]))

    out = pathlib.Path(args.out or "model")
    out.mkdir(parents=True, exist_ok=True)
    try:
        trained, report = train(model, tr, va, config, log_fn=print)
    except TrainDivergence as exc:
        doc = {"error": str(exc), "report": exc.report.to_dict(),
               **_echo(resolved)}
        (out / "train_report.json").write_text(
            json.dumps(doc, indent=1, sort_keys=True) + "\n")
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    trained = _with_version(trained)
    (out / "model.bin").write_bytes(save_model(trained))
    report_doc = report.to_dict()
    if not resolved["timings"]:
        report_doc.pop("wall_time")
    doc = {"report": report_doc, **_echo(resolved)}
    if te:
        doc["test_eval"] = eval_model(trained, te)
    (out / "train_report.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"wrote model to {out} (best epoch {report.best_epoch}, "
          f"{report.epochs_run} epochs run)")
    return EXIT_OK


def _with_version(model):
    from dataclasses import replace
    return replace(model, version=__version__)


# --- predict --------------------------------------------------------------

_PREDICT_DEFAULTS = {"model": None, "dataset": None, "sample": None,
                     "split": "test"}


def cmd_predict(args) -> int:
    resolved = _resolve(args, _load_config(args.config, "predict"),
                        _PREDICT_DEFAULTS)
    if resolved["model"] is None or resolved["dataset"] is None:
        raise UsageError("predict needs --model and --dataset")
    try:
        model = load_model(pathlib.Path(resolved["model"]).read_bytes())
    except OSError as exc:
        raise UsageError(f"cannot read model {resolved['model']}: "
                         f"{exc}") from exc
    samples, _, splits = _read_dataset_or_usage(resolved["dataset"])
    if resolved["sample"] is not None:
        wanted = int(resolved["sample"])
        samples = [s for s in samples if s.meta.seed == wanted]
        if not samples:
            raise UsageError(f"sample {wanted} not in dataset")
    elif splits is not None and resolved["split"] != "all":
        if resolved["split"] not in splits:
            raise UsageError(f"split must be one of "
                             f"{sorted(splits) + ['all']}")
        keep = set(splits[resolved["split"]])
        samples = [s for s in samples if s.meta.seed in keep]

    predictions = {}
    for s in samples:
        mu = predict(model, s)
        predictions[str(s.meta.seed)] = {"v_real": mu.v_real.tolist(),
                                         "v_imag": mu.v_imag.tolist()}
    doc = {"predictions": predictions, **_echo(resolved)}
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        pathlib.Path(args.out).write_text(text)
        print(f"wrote {len(predictions)} predictions to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


# --- bench ----------------------------------------------------------------

_BENCH_DEFAULTS = {"dataset": None, "split": "test", "tol": 1e-6,
                   "max_iter": 100, "damping": 1.0, "svg": False,
                   "timings": False}


def cmd_bench(args) -> int:
    resolved = _resolve(args, _load_config(args.config, "bench"),
                        _BENCH_DEFAULTS)
    if resolved["dataset"] is None:
        raise UsageError("bench needs --dataset")
    if not args.model:
        raise UsageError("bench needs at least one --model NAME=PATH")
    models = {}
    for spec in args.model:
        if "=" not in spec:
            raise UsageError(f"--model must be NAME=PATH, got {spec!r}")
        name, path = spec.split("=", 1)
        if name in ("flat", "vpre") or name in models:
            raise UsageError(f"duplicate or reserved model name {name!r}")
        try:
            models[name] = load_model(pathlib.Path(path).read_bytes())
        except OSError as exc:
            raise UsageError(f"cannot read model {path}: {exc}") from exc

    samples, _, splits = _read_dataset_or_usage(resolved["dataset"])
    if splits is not None and resolved["split"] != "all":
        if resolved["split"] not in splits:
            raise UsageError(f"split must be one of "
                             f"{sorted(splits) + ['all']}")
        keep = set(splits[resolved["split"]])
        samples = [s for s in samples if s.meta.seed in keep]
    if not samples:
        raise UsageError("selected split is empty")

    rows = run_bench(samples, models, _solve_options(resolved),
                     jobs=args.jobs)
    summary = summarize(rows)
    out = pathlib.Path(args.out or "bench")
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(rows, out / "bench.csv", include_timings=resolved["timings"])
    emit_report(summary, out / "bench_report.json", extra=_echo(resolved))
    if resolved["svg"]:
        emit_svg(rows, out / "bench.svg")
    for m in summary.methods:
        s = summary.stats[m]
        med = s["median_iterations"]
        print(f"{m:>12s}: median {med if med is not None else '-'} "
              f"iterations, converged {s['n_converged']}/{s['n']}")
    for m, ratio in summary.speedup.items():
        win = summary.win_rate[m]
        print(f"{m:>12s}: speedup {ratio if ratio else '-'}  win rate "
              f"{win if win is not None else '-'}")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warmflow",
        description="Power-flow contingency analysis with learned warm "
                    "starts.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", help="output file or directory")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("pf", help="solve one power-flow case")
    p.add_argument("case", help="case file (.m or native JSON)")
    p.add_argument("--init", help="'flat' or a JSON voltage state file")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--timings", action="store_true", default=None)
    common(p)
    p.set_defaults(fn=cmd_pf)

    p = sub.add_parser("gen", help="generate a contingency dataset")
    p.add_argument("--case")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--load-scale-min", dest="load_scale_min", type=float)
    p.add_argument("--load-scale-max", dest="load_scale_max", type=float)
    p.add_argument("--lines-min", dest="lines_min", type=int)
    p.add_argument("--lines-max", dest="lines_max", type=int)
    p.add_argument("--selection", choices=["random_fraction", "top_k"])
    p.add_argument("--selection-value", dest="selection_value", type=float)
    p.add_argument("--parameter", type=float)
    p.add_argument("--split")
    p.add_argument("--no-features", dest="with_features",
                   action="store_false", default=None)
    p.add_argument("--timings", action="store_true", default=None)
    common(p)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a warm-start model")
    p.add_argument("--dataset")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--loss", choices=["surrogate", "exact_nll"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--schedule-period", dest="schedule_period", type=int)
    p.add_argument("--schedule-factor", dest="schedule_factor", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--activation", choices=["tanh", "relu"])
    p.add_argument("--raw-features", dest="standardize",
                   action="store_false", default=None)
    p.add_argument("--timings", action="store_true", default=None)
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="emit model predictions")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--sample", type=int)
    p.add_argument("--split")
    common(p)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("bench", help="compare warm-start methods")
    p.add_argument("--dataset")
    p.add_argument("--model", action="append",
                   help="NAME=PATH, repeatable")
    p.add_argument("--split")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--svg", action="store_true", default=None)
    p.add_argument("--timings", action="store_true", default=None)
    common(p)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; remap to our convention
        code = exc.code if isinstance(exc.code, int) else 0
        return EXIT_USAGE if code != 0 else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, MatpowerParseError, SchemaError,
            ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GridError as exc:
        # infeasible generation, unsolvable systems, model mismatches
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
