"""Conditional Gaussian random field over post-contingency voltages.

Shallow networks map each bus's local features to a symmetric 2x2 precision
block and a 2-vector potential, and each branch's features to a 2x2 coupling
block placed symmetrically. The assembled sparse system Lambda y = eta is
solved to produce the voltage prediction; its sparsity equals the
post-contingency topology by construction, so topology changes need no
retraining.

Two sharing modes: "shared" uses one node net and one edge net everywhere
(location invariant, grid-size independent parameter count); "per_element"
keeps one net per bus and per branch of a fixed base case. A small diagonal
ridge keeps inference solvable when training has made Lambda indefinite; it
escalates tenfold on factorization failure.

System ordering is bus-major interleaved: entry 2i is the real part, 2i+1
the imaginary part of bus i's voltage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._kernels import scatter_system
from .features import (N_EDGE_FEATURES, N_NODE_FEATURES, SampleFeatures,
                       Standardizer, apply_standardizer, extract_features)
from .grid import GridCase, GridError
from .mlp import Mlp, forward, init_mlp
from .powerflow import VoltageState, YBus

NODE_OUT = 5    # (a, b, c) of the symmetric block plus (eta1, eta2)
EDGE_OUT = 4    # row-major 2x2 coupling block
BASE_RIDGE = 1e-6
_RIDGE_RETRIES = 4
_RESIDUAL_RTOL = 1e-8

# output bias so an untrained model starts at Lambda_i = I, eta_i = 0
IDENTITY_NODE_BIAS = np.array([1.0, 0.0, 1.0, 0.0, 0.0])

SHARING_MODES = ("shared", "per_element")


class CgrfError(GridError):
    """Model assembly, inference or persistence failure."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class CgrfModel:
    nn_node: tuple[Mlp, ...]
    nn_edge: tuple[Mlp, ...]
    sharing: str
    zi_enforce: bool
    standardizer: Standardizer
    version: str = "1"

    def __post_init__(self):
        object.__setattr__(self, "nn_node", tuple(self.nn_node))
        object.__setattr__(self, "nn_edge", tuple(self.nn_edge))
        if self.sharing not in SHARING_MODES:
            raise ValueError(f"sharing must be one of {SHARING_MODES}")
        if self.sharing == "shared":
            if len(self.nn_node) != 1 or len(self.nn_edge) != 1:
                raise ValueError("shared mode takes exactly one net of each "
                                 "kind")
        for net in self.nn_node:
            if net.sizes[-1] != NODE_OUT:
                raise ValueError(f"node net must output {NODE_OUT} values")
        for net in self.nn_edge:
            if net.sizes[-1] != EDGE_OUT:
                raise ValueError(f"edge net must output {EDGE_OUT} values")

    @property
    def n_params(self) -> int:
        return sum(net.n_params for net in self.nn_node + self.nn_edge)


def init_model(sharing: str, rng: np.random.Generator,
               standardizer: Standardizer, zi_enforce: bool = False,
               hidden_dim: int = 64, n_layers: int = 3,
               activation: str = "tanh", n_nodes: int | None = None,
               n_edges: int | None = None, init_scale: float = 1.0,
               final_scale: float = 0.0) -> CgrfModel:
    """Fresh model; n_layers counts affine layers, so 3 means two hidden.

    The output layers start at final_scale times Xavier (zero by default) so
    the initial system is exactly Lambda = I, eta = 0: diagonally dominant,
    trivially solvable, and the early gradient steps reduce to plain
    regression of eta onto the labels. per_element mode needs n_nodes and
    n_edges (one net per bus, one per branch of the base case, indexed by
    list position).
    """
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    hidden = (hidden_dim,) * (n_layers - 1)
    node_sizes = (N_NODE_FEATURES,) + hidden + (NODE_OUT,)
    edge_sizes = (N_EDGE_FEATURES,) + hidden + (EDGE_OUT,)
    if sharing == "shared":
        counts = (1, 1)
    else:
        if n_nodes is None or n_edges is None:
            raise ValueError("per_element mode needs n_nodes and n_edges")
        counts = (n_nodes, n_edges)
    nn_node = tuple(init_mlp(node_sizes, rng, activation,
                             final_bias=IDENTITY_NODE_BIAS,
                             scale=init_scale, final_scale=final_scale)
                    for _ in range(counts[0]))
    nn_edge = tuple(init_mlp(edge_sizes, rng, activation,
                             scale=init_scale, final_scale=final_scale)
                    for _ in range(counts[1]))
    return CgrfModel(nn_node, nn_edge, sharing, zi_enforce, standardizer)


# --- sparse assembly ------------------------------------------------------

class AssemblyPlan:
    """Fixed CSR pattern of the 2n x 2n system for one topology.

    Holds the data positions of every block entry so repeated assemblies
    (training epochs) only scatter values. Parallel branches share slots and
    accumulate.
    """

    def __init__(self, n: int, edge_pairs: np.ndarray):
        self.n = n
        self.edge_pairs = np.asarray(edge_pairs, dtype=np.int64).reshape(-1, 2)
        m = len(self.edge_pairs)
        i = np.arange(n, dtype=np.int64)
        s = self.edge_pairs[:, 0]
        t = self.edge_pairs[:, 1]

        def block_rows_cols(r, c):
            rows = np.repeat(2 * r, 4).reshape(-1, 4)
            cols = np.repeat(2 * c, 4).reshape(-1, 4)
            rows[:, 2:] += 1
            cols[:, (1, 3)] += 1
            return rows.ravel(), cols.ravel()

        nr, nc = block_rows_cols(i, i)
        sr, sc = block_rows_cols(s, t)
        tr, tc = block_rows_cols(t, s)
        rows = np.concatenate([nr, sr, tr])
        cols = np.concatenate([nc, sc, tc])
        pattern = sp.coo_matrix((np.ones(len(rows)), (rows, cols)),
                                shape=(2 * n, 2 * n)).tocsr()
        pattern.sort_indices()
        self.indptr = pattern.indptr.copy()
        self.indices = pattern.indices.copy()
        self.nnz = pattern.nnz

        self.node_pos = self._locate(nr, nc).reshape(n, 4)
        self.edge_pos_st = self._locate(sr, sc).reshape(m, 4)
        self.edge_pos_ts = self._locate(tr, tc).reshape(m, 4)
        self.diag_pos = self._locate(np.arange(2 * n), np.arange(2 * n))

    def _locate(self, rows, cols) -> np.ndarray:
        out = np.empty(len(rows), dtype=np.int64)
        for k in range(len(rows)):
            lo, hi = self.indptr[rows[k]], self.indptr[rows[k] + 1]
            out[k] = lo + np.searchsorted(self.indices[lo:hi], cols[k])
        return out

    def scatter(self, node_out: np.ndarray, edge_out: np.ndarray,
                zi: np.ndarray, ridge: float) -> tuple[np.ndarray, np.ndarray]:
        data = np.zeros(self.nnz)
        eta = np.zeros(2 * self.n)
        scatter_system(node_out, edge_out, self.node_pos, self.edge_pos_st,
                       self.edge_pos_ts, zi, self.diag_pos, ridge, data, eta)
        return data, eta

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(2 * self.n, 2 * self.n))


@dataclass
class PrecisionSystem:
    """Assembled Lambda (as blocks plus shared CSR) and eta.

    node_blocks and edge_blocks are the raw network outputs; the ridge is
    kept separate so inference can escalate it without reassembly. The CSR
    data in _data excludes the ridge.
    """

    node_blocks: np.ndarray         # (n, 2, 2) symmetric diagonal blocks
    edge_blocks: np.ndarray         # (m, 2, 2) coupling block per edge row
    edges: np.ndarray               # (m, 2) node positions
    eta: np.ndarray                 # (2n,)
    ridge: float
    plan: AssemblyPlan
    _data: np.ndarray               # (nnz,) CSR values without ridge

    @property
    def n(self) -> int:
        return self.plan.n

    def matrix(self, ridge: float | None = None) -> sp.csr_matrix:
        data = self._data.copy()
        data[self.plan.diag_pos] += self.ridge if ridge is None else ridge
        return self.plan.matrix(data)


def _net_outputs(model: CgrfModel, f: SampleFeatures
                 ) -> tuple[np.ndarray, np.ndarray]:
    if model.sharing == "shared":
        node_out = forward(model.nn_node[0], f.node_values)
        if len(f.edge_values):
            edge_out = forward(model.nn_edge[0], f.edge_values)
        else:
            edge_out = np.zeros((0, EDGE_OUT))
        return node_out, edge_out
    if len(model.nn_node) != f.n:
        raise CgrfError(f"per-element model has {len(model.nn_node)} node "
                        f"nets but the sample has {f.n} buses")
    if len(f.edge_branch) and f.edge_branch.max() >= len(model.nn_edge):
        raise CgrfError(f"per-element model has {len(model.nn_edge)} edge "
                        f"nets but the sample uses branch position "
                        f"{int(f.edge_branch.max())}")
    node_out = np.stack([forward(net, x) for net, x
                         in zip(model.nn_node, f.node_values)])
    edge_out = np.stack([forward(model.nn_edge[b], x) for b, x
                         in zip(f.edge_branch, f.edge_values)]) \
        if len(f.edge_values) else np.zeros((0, EDGE_OUT))
    return node_out, edge_out


def assemble_system(model: CgrfModel, f: SampleFeatures,
                    plan: AssemblyPlan | None = None) -> PrecisionSystem:
    """Run the nets over already-standardized features and build the system."""
    if f.node_values.shape[1] != model.nn_node[0].sizes[0]:
        raise CgrfError(f"node features have {f.node_values.shape[1]} dims, "
                        f"net expects {model.nn_node[0].sizes[0]}")
    node_out, edge_out = _net_outputs(model, f)
    if plan is None:
        plan = AssemblyPlan(f.n, f.edge_pairs)
    zi = f.zi_mask if model.zi_enforce else np.zeros(f.n, dtype=np.uint8)
    data, eta = plan.scatter(node_out, edge_out, zi, ridge=0.0)

    node_blocks = np.empty((f.n, 2, 2))
    node_blocks[:, 0, 0] = node_out[:, 0]
    node_blocks[:, 0, 1] = node_out[:, 1]
    node_blocks[:, 1, 0] = node_out[:, 1]
    node_blocks[:, 1, 1] = node_out[:, 2]
    edge_blocks = edge_out.reshape(-1, 2, 2).copy()
    return PrecisionSystem(node_blocks=node_blocks, edge_blocks=edge_blocks,
                           edges=f.edge_pairs.copy(), eta=eta,
                           ridge=BASE_RIDGE, plan=plan, _data=data)


@dataclass(frozen=True)
class InferDiagnostics:
    retries: int
    ridge_used: float
    residual_inf: float


def infer(system: PrecisionSystem
          ) -> tuple[VoltageState, InferDiagnostics]:
    """Solve Lambda mu = eta; escalate the ridge tenfold on failure."""
    eta = system.eta
    threshold = _RESIDUAL_RTOL * max(1.0, float(np.abs(eta).max(initial=0.0)))
    ridge = system.ridge
    last_residual = np.inf
    for retry in range(_RIDGE_RETRIES + 1):
        matrix = system.matrix(ridge)
        try:
            mu = splu(matrix.tocsc()).solve(eta)
        except RuntimeError:
            mu = None
        if mu is not None and np.all(np.isfinite(mu)):
            last_residual = float(np.abs(matrix @ mu - eta).max(initial=0.0))
            if last_residual <= threshold:
                diag = InferDiagnostics(retries=retry, ridge_used=ridge,
                                        residual_inf=last_residual)
                return (VoltageState(mu[0::2].copy(), mu[1::2].copy()), diag)
        ridge *= 10.0
    raise CgrfError(
        f"precision system unsolvable after {_RIDGE_RETRIES} ridge "
        f"escalations (last ridge {ridge / 10:g}, residual {last_residual:g})",
        diagnostics=InferDiagnostics(retries=_RIDGE_RETRIES,
                                     ridge_used=ridge / 10,
                                     residual_inf=last_residual))


def predict(model: CgrfModel, sample) -> VoltageState:
    """Full pipeline: extract, standardize, assemble, infer."""
    f = apply_standardizer(model.standardizer, extract_features(sample))
    mu, _ = infer(assemble_system(model, f))
    return mu


def compare_to_linearization(system: PrecisionSystem, ybus: YBus,
                             solution: VoltageState) -> dict:
    """Similarity of the learned system to the physical linearization.

    Reports the Jaccard overlap of the block sparsity patterns, the cosine
    between |Lambda| and the absolute rectangular expansion of the bus
    admittance matrix ([[G, -B], [B, G]] per entry), and the raw cosine
    between eta and the interleaved injection currents Y v. Diagnostic only;
    nothing is asserted here.
    """
    n = system.n
    lam = system.matrix().toarray()
    y = ybus.matrix.tocoo()
    expansion = np.zeros((2 * n, 2 * n))
    for r, c, v in zip(y.row, y.col, y.data):
        expansion[2 * r, 2 * c] = v.real
        expansion[2 * r, 2 * c + 1] = -v.imag
        expansion[2 * r + 1, 2 * c] = v.imag
        expansion[2 * r + 1, 2 * c + 1] = v.real

    lam_pat = {(i, j) for i in range(n) for j in range(n)
               if np.any(lam[2 * i:2 * i + 2, 2 * j:2 * j + 2] != 0)}
    y_pat = {(int(r), int(c)) for r, c in zip(y.row, y.col)}
    overlap = len(lam_pat & y_pat) / max(1, len(lam_pat | y_pat))

    def cosine(a, b):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        return float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0

    currents = ybus.matrix @ (solution.v_real + 1j * solution.v_imag)
    j_vec = np.empty(2 * n)
    j_vec[0::2] = currents.real
    j_vec[1::2] = currents.imag
    return {
        "pattern_overlap": overlap,
        "lambda_cosine": cosine(np.abs(lam).ravel(),
                                np.abs(expansion).ravel()),
        "eta_cosine": cosine(system.eta, j_vec),
    }


# --- persistence ----------------------------------------------------------

_MAGIC = b"WFCGRF\x01"
MODEL_FORMAT = 1


def save_model(model: CgrfModel) -> bytes:
    """Versioned container: magic, JSON header, NUL, raw float64 arrays."""
    def net_meta(net: Mlp) -> dict:
        return {"sizes": list(net.sizes), "activation": net.activation}

    header = {
        "format": MODEL_FORMAT,
        "version": model.version,
        "sharing": model.sharing,
        "zi_enforce": model.zi_enforce,
        "standardizer": model.standardizer.to_dict(),
        "node_nets": [net_meta(net) for net in model.nn_node],
        "edge_nets": [net_meta(net) for net in model.nn_edge],
    }
    blob = bytearray(_MAGIC)
    blob += json.dumps(header, sort_keys=True).encode()
    blob += b"\0"
    for net in model.nn_node + model.nn_edge:
        for w, b in zip(net.weights, net.biases):
            blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
            blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    return bytes(blob)


def load_model(blob: bytes) -> CgrfModel:
    if blob[:len(_MAGIC)] != _MAGIC:
        raise CgrfError("not a model file (bad magic)")
    end = blob.find(b"\0", len(_MAGIC))
    if end < 0:
        raise CgrfError("model file truncated in header")
    try:
        header = json.loads(blob[len(_MAGIC):end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CgrfError(f"model header unreadable: {exc}") from exc
    if header.get("format") != MODEL_FORMAT:
        raise CgrfError(f"unsupported model format {header.get('format')!r}")

    offset = end + 1

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise CgrfError("model file truncated in weight data")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += nbytes
        return arr.reshape(shape).astype(np.float64)

    def read_net(meta: dict) -> Mlp:
        sizes = meta["sizes"]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            weights.append(take((fan_out, fan_in)))
            biases.append(take((fan_out,)))
        return Mlp(tuple(weights), tuple(biases), meta["activation"])

    nn_node = tuple(read_net(meta) for meta in header["node_nets"])
    nn_edge = tuple(read_net(meta) for meta in header["edge_nets"])
    if offset != len(blob):
        raise CgrfError(f"{len(blob) - offset} trailing bytes after weights")
    return CgrfModel(nn_node=nn_node, nn_edge=nn_edge,
                     sharing=header["sharing"],
                     zi_enforce=header["zi_enforce"],
                     standardizer=Standardizer.from_dict(
                         header["standardizer"]),
                     version=header["version"])


def model_with_nets(model: CgrfModel, nn_node, nn_edge) -> CgrfModel:
    return replace(model, nn_node=tuple(nn_node), nn_edge=tuple(nn_edge))
