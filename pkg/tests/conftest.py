"""Shared fixtures: bundled cases, tiny synthetic grids, small datasets."""

from __future__ import annotations

import pathlib

import numpy as np
import pytest

from warmflow import (Branch, Bus, Generator, GenSpec, GridCase, Load,
                      Standardizer, fit_standardizer, generate_dataset,
                      parse_matpower, split_dataset, validate)

DATA_DIR = pathlib.Path(__file__).resolve().parent.parent / "data"
FIXTURE_DIR = pathlib.Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def case14_path() -> pathlib.Path:
    return DATA_DIR / "case14.m"


@pytest.fixture(scope="session")
def case118_path() -> pathlib.Path:
    return DATA_DIR / "case118.m"


@pytest.fixture(scope="session")
def case14(case14_path) -> GridCase:
    return parse_matpower(case14_path.read_text())


@pytest.fixture(scope="session")
def case118(case118_path) -> GridCase:
    return parse_matpower(case118_path.read_text())


def _gen(bus: int, p_set: float, v_set: float,
         participation: float = 1.0) -> Generator:
    return Generator(bus=bus, p_set=p_set, v_set=v_set, p_max=10.0,
                     p_min=-10.0, participation=participation)


def build_two_bus(r: float = 0.0, x: float = 0.1, p_load: float = 0.5,
                  q_load: float = 0.1) -> GridCase:
    """Slack feeding one PQ bus over a single branch."""
    case = GridCase(
        base_mva=100.0,
        buses=(
            Bus(id=1, kind="slack"),
            Bus(id=2, kind="pq"),
        ),
        branches=(
            Branch(from_bus=1, to_bus=2, r=r, x=x),
        ),
        generators=(
            _gen(1, 0.0, 1.0),
        ),
        loads=(
            Load(bus=2, p=p_load, q=q_load),
        ),
    )
    assert not validate(case)
    return case


def build_ring(n: int, p_load: float = 0.2) -> GridCase:
    """n-bus ring: slack gen at bus 1, PQ loads elsewhere.

    Every edge is on a cycle, so any single line removal keeps the
    grid connected; handy for contingency tests.
    """
    buses = [Bus(id=1, kind="slack")]
    loads = []
    for i in range(2, n + 1):
        buses.append(Bus(id=i, kind="pq"))
        loads.append(Load(bus=i, p=p_load, q=p_load / 4.0))
    branches = [Branch(from_bus=i, to_bus=i % n + 1, r=0.01, x=0.05,
                       b_charging=0.02)
                for i in range(1, n + 1)]
    case = GridCase(base_mva=100.0, buses=tuple(buses),
                    branches=tuple(branches),
                    generators=(_gen(1, 0.0, 1.0),),
                    loads=tuple(loads))
    assert not validate(case)
    return case


def build_five_bus() -> GridCase:
    """Meshed 5-bus case with a PV bus and a zero-injection bus (bus 3)."""
    case = GridCase(
        base_mva=100.0,
        buses=(
            Bus(id=1, kind="slack"),
            Bus(id=2, kind="pv"),
            Bus(id=3, kind="pq"),
            Bus(id=4, kind="pq"),
            Bus(id=5, kind="pq"),
        ),
        branches=(
            Branch(from_bus=1, to_bus=2, r=0.02, x=0.06, b_charging=0.06),
            Branch(from_bus=1, to_bus=3, r=0.08, x=0.24, b_charging=0.05),
            Branch(from_bus=2, to_bus=3, r=0.06, x=0.18, b_charging=0.04),
            Branch(from_bus=2, to_bus=4, r=0.06, x=0.18, b_charging=0.04),
            Branch(from_bus=2, to_bus=5, r=0.04, x=0.12, b_charging=0.03),
            Branch(from_bus=3, to_bus=4, r=0.01, x=0.03, b_charging=0.02),
            Branch(from_bus=4, to_bus=5, r=0.08, x=0.24, b_charging=0.05),
        ),
        generators=(
            _gen(1, 0.0, 1.02),
            _gen(2, 0.4, 1.01),
        ),
        loads=(
            Load(bus=4, p=0.6, q=0.1),
            Load(bus=5, p=0.5, q=0.12),
        ),
    )
    assert not validate(case)
    return case


@pytest.fixture(scope="session")
def two_bus() -> GridCase:
    return build_two_bus()


@pytest.fixture(scope="session")
def ring6() -> GridCase:
    return build_ring(6)


@pytest.fixture(scope="session")
def five_bus() -> GridCase:
    return build_five_bus()


@pytest.fixture(scope="session")
def small_dataset(case14):
    """40 case14 samples shared across test modules (read only)."""
    spec = GenSpec(n_samples=40, seed=3)
    samples, manifest = generate_dataset(case14, spec, jobs=1)
    return samples, manifest


@pytest.fixture(scope="session")
def small_splits(small_dataset):
    samples, _ = small_dataset
    return split_dataset(samples, (0.8, 0.1, 0.1), seed=0)


@pytest.fixture(scope="session")
def small_features(small_splits):
    """Per-split extracted features for the case14 dataset."""
    from warmflow import extract_features
    return tuple([extract_features(s) for s in part] for part in small_splits)


@pytest.fixture(scope="session")
def small_standardizer(small_features) -> Standardizer:
    train, _, _ = small_features
    return fit_standardizer(train)


def rng_of(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def permute_sample(sample, perm):
    """Relabel bus positions of a sample: new position j holds old bus perm[j].

    Record lists (loads, generators, branches) reference buses by id and
    are left untouched; only positional data moves.
    """
    import dataclasses

    from warmflow import VoltageState

    perm = np.asarray(perm)

    def permute_case(case):
        return dataclasses.replace(
            case, buses=tuple(case.buses[p] for p in perm))

    def permute_state(v):
        return VoltageState(v_real=v.v_real[perm].copy(),
                            v_imag=v.v_imag[perm].copy())

    return dataclasses.replace(
        sample,
        pre_case=permute_case(sample.pre_case),
        post_case=permute_case(sample.post_case),
        pre_solution=permute_state(sample.pre_solution),
        label=permute_state(sample.label),
    )
