"""Local input features for the warm-start model.

Per bus, ten numbers describing the pre-contingency operating point and the
change the contingency applies there:

    v_real, v_imag, P, Q, I_real, I_imag, Q_shunt,
    dp_gen, dp_load, dq_load

The first seven come from the solved pre-contingency case (net injections,
load positive for demand deltas). dp_gen is the droop redispatch the
contingency triggered, summed over the bus's generators; dp_load/dq_load are
the demand change at the bus, positive for an increase. Per in-service
branch of the post-contingency topology, three numbers:

    g_series, b_series, b_charging        with g + jb = 1/(r + jx).

Tap ratio and phase shift are deliberately not features; the model sees the
series admittance only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contingency import Sample
from .grid import GridCase, bus_index
from .powerflow import compute_injections

NODE_FEATURE_NAMES = ("v_real", "v_imag", "p", "q", "i_real", "i_imag",
                      "q_shunt", "dp_gen", "dp_load", "dq_load")
EDGE_FEATURE_NAMES = ("g_series", "b_series", "b_charging")
N_NODE_FEATURES = len(NODE_FEATURE_NAMES)
N_EDGE_FEATURES = len(EDGE_FEATURE_NAMES)

# std floor: constant feature columns standardize to zero instead of blowing up
STD_FLOOR = 1e-6


@dataclass(frozen=True)
class SampleFeatures:
    """Feature tensors plus topology for one sample.

    edge_pairs holds bus positions (not ids) into the node arrays, one
    (from, to) row per in-service post-contingency branch, in base branch
    order. edge_branch maps each row back to its position in the case's
    branch list so per-element models can look up the right network.
    """

    node_values: np.ndarray     # (n, 10) float64
    edge_values: np.ndarray     # (m, 3) float64
    edge_pairs: np.ndarray      # (m, 2) int32
    edge_branch: np.ndarray     # (m,) int32
    zi_mask: np.ndarray         # (n,) uint8, 1 at zero-injection buses

    @property
    def n(self) -> int:
        return self.node_values.shape[0]


def zero_injection_mask(case: GridCase) -> np.ndarray:
    """1 where a bus has no in-service generator and no in-service demand."""
    idx = bus_index(case)
    mask = np.ones(case.n_buses, dtype=np.uint8)
    for g in case.generators:
        if g.in_service:
            mask[idx[g.bus]] = 0
    for ld in case.loads:
        if ld.in_service and (ld.p != 0 or ld.q != 0):
            mask[idx[ld.bus]] = 0
    return mask


def extract_node_features(sample: Sample) -> np.ndarray:
    """(n, 10) node feature matrix; see module docstring for the ordering."""
    case = sample.pre_case
    idx = bus_index(case)
    inj = compute_injections(case, sample.pre_solution)
    out = np.zeros((case.n_buses, N_NODE_FEATURES))
    out[:, 0] = sample.pre_solution.v_real
    out[:, 1] = sample.pre_solution.v_imag
    out[:, 2] = inj.p
    out[:, 3] = inj.q
    out[:, 4] = inj.i_real
    out[:, 5] = inj.i_imag
    out[:, 6] = inj.q_shunt
    for pre, post in zip(case.generators, sample.post_case.generators):
        if pre.in_service:
            out[idx[pre.bus], 7] += post.p_set - pre.p_set
    for pre, post in zip(case.loads, sample.post_case.loads):
        if pre.in_service:
            out[idx[pre.bus], 8] += post.p - pre.p
            out[idx[pre.bus], 9] += post.q - pre.q
    return out


def extract_edge_features(case: GridCase) -> tuple[np.ndarray, np.ndarray,
                                                   np.ndarray]:
    """Feature rows for in-service branches of the given (post) topology.

    Returns (values (m,3), pairs (m,2) bus positions, branch positions (m,)).
    """
    idx = bus_index(case)
    values, pairs, branch_pos = [], [], []
    for i, br in enumerate(case.branches):
        if not br.in_service:
            continue
        y = 1.0 / complex(br.r, br.x)
        values.append((y.real, y.imag, br.b_charging))
        pairs.append((idx[br.from_bus], idx[br.to_bus]))
        branch_pos.append(i)
    return (np.array(values, dtype=np.float64).reshape(-1, N_EDGE_FEATURES),
            np.array(pairs, dtype=np.int32).reshape(-1, 2),
            np.array(branch_pos, dtype=np.int32))


def extract_features(sample: Sample) -> SampleFeatures:
    node = extract_node_features(sample)
    edge_values, edge_pairs, edge_branch = extract_edge_features(
        sample.post_case)
    return SampleFeatures(node_values=node, edge_values=edge_values,
                          edge_pairs=edge_pairs, edge_branch=edge_branch,
                          zi_mask=zero_injection_mask(sample.post_case))


def features_record(sample: Sample) -> dict:
    """JSON-serializable feature tensors, for embedding in dataset records."""
    f = extract_features(sample)
    return {"features": {
        "node": f.node_values.tolist(),
        "edge": f.edge_values.tolist(),
        "edge_pairs": f.edge_pairs.tolist(),
    }}


@dataclass(frozen=True)
class Standardizer:
    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray

    def to_dict(self) -> dict:
        return {"node_mean": self.node_mean.tolist(),
                "node_std": self.node_std.tolist(),
                "edge_mean": self.edge_mean.tolist(),
                "edge_std": self.edge_std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(*(np.asarray(doc[k], dtype=np.float64) for k in
                     ("node_mean", "node_std", "edge_mean", "edge_std")))

    @classmethod
    def identity(cls) -> "Standardizer":
        """No-op statistics, for the raw-features escape hatch."""
        return cls(np.zeros(N_NODE_FEATURES), np.ones(N_NODE_FEATURES),
                   np.zeros(N_EDGE_FEATURES), np.ones(N_EDGE_FEATURES))


def fit_standardizer(train_features: list[SampleFeatures]) -> Standardizer:
    """Z-score statistics over the training split only."""
    if len(train_features) < 2:
        raise ValueError("need at least 2 training samples to standardize")
    nodes = np.concatenate([f.node_values for f in train_features])
    edges = np.concatenate([f.edge_values for f in train_features])
    return Standardizer(
        node_mean=nodes.mean(axis=0),
        node_std=np.maximum(nodes.std(axis=0), STD_FLOOR),
        edge_mean=edges.mean(axis=0),
        edge_std=np.maximum(edges.std(axis=0), STD_FLOOR),
    )


def apply_standardizer(st: Standardizer,
                       features: SampleFeatures) -> SampleFeatures:
    return SampleFeatures(
        node_values=(features.node_values - st.node_mean) / st.node_std,
        edge_values=(features.edge_values - st.edge_mean) / st.edge_std,
        edge_pairs=features.edge_pairs,
        edge_branch=features.edge_branch,
        zi_mask=features.zi_mask,
    )
