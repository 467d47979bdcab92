"""Synthetic contingency dataset generation.

Follows a three-step recipe per sample: randomize a feasible pre-contingency
case (load levels, line outages, droop-compensated generation), draw a
coordinated load-manipulation contingency, and label the post-contingency
case with a converged power-flow solution. Draws whose pre or post case does
not converge are discarded and redrawn; every emitted sample carries a
converged label.

Reproducibility contract: the dataset is a pure function of (base case,
GenSpec). Each draw j consumes its own generator seeded from
(spec.seed, j, attempt), so serial and parallel generation produce identical
results.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import (GridCase, GridError, bus_index, case_from_dict,
                   case_to_dict, slack_position)
from .powerflow import (SolveOptions, VoltageState, apply_droop_redispatch,
                        flat_start, solve_nr)

log = logging.getLogger(__name__)

SELECTION_MODES = ("random_fraction", "top_k")
_MAX_LINE_REJECTIONS = 100
DATASET_FORMAT = 1


class DatasetError(GridError):
    """Dataset generation or (de)serialization failure."""


@dataclass(frozen=True)
class Contingency:
    kind: str
    locations: tuple[int, ...]
    parameter: float

    def __post_init__(self):
        object.__setattr__(self, "locations", tuple(self.locations))
        if self.kind != "madiot":
            raise ValueError(f"unknown contingency kind {self.kind!r}")
        if not self.locations:
            raise ValueError("contingency needs at least one location")
        if not self.parameter > 0:
            raise ValueError("contingency parameter must be positive")


@dataclass(frozen=True)
class SampleMeta:
    seed: int
    converged: bool
    pre_iterations: int
    label_iterations: int
    attempt: int = 0


@dataclass(frozen=True)
class Sample:
    pre_case: GridCase
    pre_solution: VoltageState
    contingency: Contingency
    post_case: GridCase
    label: VoltageState
    meta: SampleMeta


@dataclass(frozen=True)
class GenSpec:
    """Dataset generation settings.

    ``selection`` picks the attacked load buses: "random_fraction" draws
    ceil(selection_value * n_load_buses) distinct buses uniformly,
    "top_k" takes the selection_value largest loads by active power.
    Defaults reproduce the 118-bus experiment: half the loads scaled to
    200%, base loads jittered in [0.95, 1.05], one or two lines out.
    """

    n_samples: int
    load_scale_range: tuple[float, float] = (0.95, 1.05)
    lines_removed_range: tuple[int, int] = (1, 2)
    selection: str = "random_fraction"
    selection_value: float = 0.5
    parameter: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "load_scale_range",
                           tuple(float(v) for v in self.load_scale_range))
        object.__setattr__(self, "lines_removed_range",
                           tuple(int(v) for v in self.lines_removed_range))
        lo, hi = self.load_scale_range
        if not 0 < lo <= hi:
            raise ValueError("load_scale_range must satisfy 0 < lo <= hi")
        kmin, kmax = self.lines_removed_range
        if kmin < 0 or kmax < kmin:
            raise ValueError("lines_removed_range must satisfy 0 <= min <= max")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}")
        if self.selection == "random_fraction":
            if not 0 < self.selection_value <= 1:
                raise ValueError("random_fraction needs 0 < value <= 1")
        elif self.selection_value < 1:
            raise ValueError("top_k needs value >= 1")
        if not self.parameter > 0:
            raise ValueError("parameter must be positive")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "load_scale_range": list(self.load_scale_range),
            "lines_removed_range": list(self.lines_removed_range),
            "selection": self.selection,
            "selection_value": self.selection_value,
            "parameter": self.parameter,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GenSpec":
        return cls(
            n_samples=int(doc["n_samples"]),
            load_scale_range=tuple(doc["load_scale_range"]),
            lines_removed_range=tuple(doc["lines_removed_range"]),
            selection=doc["selection"],
            selection_value=float(doc["selection_value"]),
            parameter=float(doc["parameter"]),
            seed=int(doc["seed"]),
        )


@dataclass(frozen=True)
class DatasetManifest:
    base_case: GridCase
    spec: GenSpec
    n_samples: int
    discarded: int
    format: int = DATASET_FORMAT


def _keeps_all_connected(case: GridCase, removed: set[int]) -> bool:
    """True if every bus stays reachable from the slack without ``removed``."""
    adjacency: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for i, br in enumerate(case.branches):
        if br.in_service and i not in removed:
            adjacency[br.from_bus].append(br.to_bus)
            adjacency[br.to_bus].append(br.from_bus)
    start = case.buses[slack_position(case)].id
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == case.n_buses


def perturb_pre_case(base: GridCase, rng: np.random.Generator,
                     spec: GenSpec) -> GridCase:
    """Step 1: randomize load level and topology, rebalance generation.

    Every load's p and q are scaled by an independent uniform draw from
    load_scale_range; k lines (k uniform in lines_removed_range) are taken
    out of service, rejection-sampled so no bus is disconnected from the
    slack. If no acceptable combination is found within 100 tries, k is
    reduced and a note is attached to the case. The total load delta is
    covered by droop redispatch.
    """
    lo, hi = spec.load_scale_range
    scales = rng.uniform(lo, hi, size=len(base.loads))
    loads = tuple(replace(ld, p=ld.p * s, q=ld.q * s)
                  for ld, s in zip(base.loads, scales))
    delta_p = sum(ld.p - b.p for ld, b in zip(loads, base.loads)
                  if ld.in_service)

    kmin, kmax = spec.lines_removed_range
    k = int(rng.integers(kmin, kmax + 1))
    candidates = [i for i, br in enumerate(base.branches) if br.in_service]
    k = min(k, len(candidates))
    removed: set[int] = set()
    notes: list[str] = []
    while k > 0:
        found = False
        for _ in range(_MAX_LINE_REJECTIONS):
            pick = rng.choice(len(candidates), size=k, replace=False)
            trial = {candidates[int(i)] for i in pick}
            if _keeps_all_connected(base, trial):
                removed = trial
                found = True
                break
        if found:
            break
        notes.append(f"no connectivity-preserving set of {k} line removals "
                     f"in {_MAX_LINE_REJECTIONS} tries; reduced to {k - 1}")
        k -= 1

    branches = tuple(replace(br, in_service=False) if i in removed else br
                     for i, br in enumerate(base.branches))
    case = GridCase(base.base_mva, base.buses, branches, base.generators,
                    loads, base.notes + tuple(notes))
    if abs(delta_p) > 0:
        case = apply_droop_redispatch(case, delta_p)
    return case


def make_madiot(case: GridCase, rng: np.random.Generator,
                spec: GenSpec) -> Contingency:
    """Step 2: pick the attacked load buses and the scale parameter."""
    per_bus: dict[int, float] = {}
    for ld in case.loads:
        if ld.in_service:
            per_bus[ld.bus] = per_bus.get(ld.bus, 0.0) + ld.p
    if not per_bus:
        raise DatasetError("case has no in-service load to manipulate")
    load_buses = sorted(per_bus)

    if spec.selection == "random_fraction":
        count = math.ceil(spec.selection_value * len(load_buses))
        pick = rng.choice(len(load_buses), size=count, replace=False)
        locations = tuple(sorted(load_buses[int(i)] for i in pick))
    else:
        count = int(spec.selection_value)
        if count > len(load_buses):
            log.warning("top_k %d exceeds load-bus count %d; clamping",
                        count, len(load_buses))
            count = len(load_buses)
        # deterministic tie-break: larger load first, then lower bus id
        ranked = sorted(load_buses, key=lambda b: (-per_bus[b], b))
        locations = tuple(sorted(ranked[:count]))
    return Contingency(kind="madiot", locations=locations,
                       parameter=spec.parameter)


def apply_contingency(case: GridCase, c: Contingency) -> GridCase:
    """Step 3a: scale the attacked loads and rebalance generation by droop.

    Load q scales together with p (constant power factor). Everything else
    is untouched; the returned case differs only in load demand at the
    contingency locations and generator setpoints.
    """
    targets = set(c.locations)
    hit = {ld.bus for ld in case.loads if ld.in_service and ld.bus in targets}
    missing = targets - hit
    if missing:
        raise DatasetError(f"contingency location(s) without in-service load: "
                           f"{sorted(missing)}")
    delta_p = 0.0
    loads = []
    for ld in case.loads:
        if ld.in_service and ld.bus in targets:
            delta_p += (c.parameter - 1.0) * ld.p
            loads.append(replace(ld, p=ld.p * c.parameter,
                                 q=ld.q * c.parameter))
        else:
            loads.append(ld)
    out = GridCase(case.base_mva, case.buses, case.branches, case.generators,
                   tuple(loads), case.notes)
    if abs(delta_p) > 0:
        out = apply_droop_redispatch(out, delta_p)
    return out


def _draw_sample(base: GridCase, spec: GenSpec, j: int, attempt: int,
                 opts: SolveOptions) -> Sample | None:
    """One generation attempt; None if a solve failed to converge."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, j, attempt]))
    pre_case = perturb_pre_case(base, rng, spec)
    pre_solution, pre_report = solve_nr(pre_case, flat_start(pre_case), opts)
    if not pre_report.converged:
        return None
    c = make_madiot(pre_case, rng, spec)
    post_case = apply_contingency(pre_case, c)
    label, label_report = solve_nr(post_case, pre_solution, opts)
    if not label_report.converged:
        return None
    meta = SampleMeta(seed=j, converged=True,
                      pre_iterations=pre_report.iterations,
                      label_iterations=label_report.iterations,
                      attempt=attempt)
    return Sample(pre_case, pre_solution, c, post_case, label, meta)


def generate_sample(base: GridCase, spec: GenSpec, j: int,
                    opts: SolveOptions = SolveOptions(),
                    max_attempts: int = 64) -> tuple[Sample | None, int]:
    """Generate draw j, redrawing on non-convergence.

    Returns (sample, discard count); sample is None when every attempt
    failed.
    """
    for attempt in range(max_attempts):
        sample = _draw_sample(base, spec, j, attempt, opts)
        if sample is not None:
            return sample, attempt
    return None, max_attempts


def generate_dataset(base: GridCase, spec: GenSpec,
                     opts: SolveOptions = SolveOptions(),
                     jobs: int = 1) -> tuple[list[Sample], DatasetManifest]:
    """Generate the full dataset; aborts if over half the draws discard.

    With jobs > 1 samples are drawn in a process pool; outputs are identical
    to a serial run because each draw owns its seed stream.
    """
    if jobs > 1:
        results = _generate_parallel(base, spec, opts, jobs)
    else:
        # lazy so a hopeless spec aborts at the 50% discard check, not after
        # all draws have run
        results = (generate_sample(base, spec, j, opts)
                   for j in range(spec.n_samples))

    samples: list[Sample] = []
    discarded = 0
    for j, (sample, discards) in enumerate(results):
        discarded += discards
        if sample is None:
            raise DatasetError(
                f"draw {j} failed to produce a convergent sample after "
                f"{discards} attempts; spec looks infeasible")
        samples.append(sample)
        if discarded > spec.n_samples:
            raise DatasetError(
                f"discard rate exceeded 50% ({discarded} discards against "
                f"{spec.n_samples} requested samples); spec looks infeasible")
    manifest = DatasetManifest(base_case=base, spec=spec,
                               n_samples=len(samples), discarded=discarded)
    return samples, manifest


_POOL_STATE: dict = {}


def _pool_init(base_doc: dict, spec_doc: dict, opts: SolveOptions):
    _POOL_STATE["base"] = case_from_dict(base_doc)
    _POOL_STATE["spec"] = GenSpec.from_dict(spec_doc)
    _POOL_STATE["opts"] = opts


def _pool_draw(j: int):
    return generate_sample(_POOL_STATE["base"], _POOL_STATE["spec"], j,
                           _POOL_STATE["opts"])


def _generate_parallel(base: GridCase, spec: GenSpec, opts: SolveOptions,
                       jobs: int):
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(
            max_workers=jobs, initializer=_pool_init,
            initargs=(case_to_dict(base), spec.to_dict(), opts)) as pool:
        return list(pool.map(_pool_draw, range(spec.n_samples), chunksize=8))


def split_dataset(samples: list, ratios: tuple[float, float, float],
                  seed: int) -> tuple[list, list, list]:
    """Deterministic shuffled train/val/test partition.

    Sizes are floor(n * ratio) for train and val; test takes the remainder.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(len(samples) * ratios[0])
    n_val = int(len(samples) * ratios[1])
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return train, val, test


# --- persistence ----------------------------------------------------------

def _case_delta(base: GridCase, case: GridCase) -> dict:
    """Delta of ``case`` against ``base``, keyed by list position."""
    delta: dict = {}
    loads = [[i, ld.p, ld.q] for i, (b, ld) in
             enumerate(zip(base.loads, case.loads))
             if (ld.p, ld.q) != (b.p, b.q)]
    if loads:
        delta["loads"] = loads
    disabled = [i for i, (b, br) in enumerate(zip(base.branches, case.branches))
                if b.in_service and not br.in_service]
    if disabled:
        delta["disabled_branches"] = disabled
    gens = [[i, g.p_set] for i, (b, g) in
            enumerate(zip(base.generators, case.generators))
            if g.p_set != b.p_set]
    if gens:
        delta["gen_p_set"] = gens
    return delta


def _apply_delta(base: GridCase, delta: dict) -> GridCase:
    pq = {i: (p, q) for i, p, q in delta.get("loads", [])}
    loads = tuple(replace(ld, p=pq[i][0], q=pq[i][1]) if i in pq else ld
                  for i, ld in enumerate(base.loads))
    disabled = set(delta.get("disabled_branches", []))
    branches = tuple(replace(br, in_service=False) if i in disabled else br
                     for i, br in enumerate(base.branches))
    p_set = {i: p for i, p in delta.get("gen_p_set", [])}
    gens = tuple(replace(g, p_set=p_set[i]) if i in p_set else g
                 for i, g in enumerate(base.generators))
    return GridCase(base.base_mva, base.buses, branches, gens, loads)


def sample_to_record(base: GridCase, sample: Sample) -> dict:
    return {
        "id": sample.meta.seed,
        "attempt": sample.meta.attempt,
        "pre_iterations": sample.meta.pre_iterations,
        "label_iterations": sample.meta.label_iterations,
        "pre_delta": _case_delta(base, sample.pre_case),
        "contingency": {
            "kind": sample.contingency.kind,
            "locations": list(sample.contingency.locations),
            "parameter": sample.contingency.parameter,
        },
        "pre_solution": {"v_real": sample.pre_solution.v_real.tolist(),
                         "v_imag": sample.pre_solution.v_imag.tolist()},
        "label": {"v_real": sample.label.v_real.tolist(),
                  "v_imag": sample.label.v_imag.tolist()},
    }


def sample_from_record(base: GridCase, record: dict) -> Sample:
    pre_case = _apply_delta(base, record["pre_delta"])
    c = Contingency(kind=record["contingency"]["kind"],
                    locations=tuple(record["contingency"]["locations"]),
                    parameter=record["contingency"]["parameter"])
    post_case = apply_contingency(pre_case, c)
    pre_solution = VoltageState(np.array(record["pre_solution"]["v_real"]),
                                np.array(record["pre_solution"]["v_imag"]))
    label = VoltageState(np.array(record["label"]["v_real"]),
                         np.array(record["label"]["v_imag"]))
    meta = SampleMeta(seed=record["id"], converged=True,
                      pre_iterations=record["pre_iterations"],
                      label_iterations=record["label_iterations"],
                      attempt=record["attempt"])
    return Sample(pre_case, pre_solution, c, post_case, label, meta)


def write_dataset(path_dir, samples: list[Sample], manifest: DatasetManifest,
                  splits: dict[str, list[int]] | None = None,
                  extra_manifest: dict | None = None,
                  augment=None) -> None:
    """Write dataset.jsonl, manifest.json and splits.json under a directory.

    ``augment(sample) -> dict`` merges extra keys (e.g. extracted feature
    tensors) into each JSONL record.
    """
    import pathlib

    out = pathlib.Path(path_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = manifest.base_case
    with open(out / "dataset.jsonl", "w") as fh:
        for sample in samples:
            record = sample_to_record(base, sample)
            if augment is not None:
                record.update(augment(sample))
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    doc = {
        "format": manifest.format,
        "base_case": case_to_dict(base),
        "spec": manifest.spec.to_dict(),
        "n_samples": manifest.n_samples,
        "discarded": manifest.discarded,
    }
    if extra_manifest:
        doc.update(extra_manifest)
    (out / "manifest.json").write_text(json.dumps(doc, indent=1,
                                                  sort_keys=True))
    if splits is not None:
        (out / "splits.json").write_text(json.dumps(splits, indent=1,
                                                    sort_keys=True))


def read_dataset(path_dir) -> tuple[list[Sample], DatasetManifest,
                                    dict[str, list[int]] | None]:
    """Load a dataset directory written by :func:`write_dataset`."""
    import pathlib

    src = pathlib.Path(path_dir)
    try:
        doc = json.loads((src / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"manifest.json not found in {src}") from exc
    if doc.get("format") != DATASET_FORMAT:
        raise DatasetError(f"unsupported dataset format {doc.get('format')!r}")
    base = case_from_dict(doc["base_case"])
    spec = GenSpec.from_dict(doc["spec"])
    manifest = DatasetManifest(base_case=base, spec=spec,
                               n_samples=doc["n_samples"],
                               discarded=doc["discarded"])
    samples = []
    with open(src / "dataset.jsonl") as fh:
        for line in fh:
            if line.strip():
                samples.append(sample_from_record(base, json.loads(line)))
    splits_path = src / "splits.json"
    splits = json.loads(splits_path.read_text()) if splits_path.exists() else None
    return samples, manifest, splits
