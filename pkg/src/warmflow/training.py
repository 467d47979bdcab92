"""Training loop and losses for the warm-start model.

Default objective is the surrogate loss: solve the assembled system for the
prediction mu and take half the squared error against the labeled voltages.
Gradients go through the linear solve analytically: one extra adjoint solve
per sample against the already-factorized matrix, then the chain rule through
the block placement into the networks. The exact negative log-likelihood is
kept as a dense, small-instance diagnostic because maintaining positive
definiteness at scale is the problem the surrogate exists to avoid.

Everything is deterministic given the config seed: per-epoch shuffles draw
from SeedSequence([seed, epoch]) and gradient accumulation is sequential.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from ._kernels import gather_grads
from .cgrf import (BASE_RIDGE, _RIDGE_RETRIES, AssemblyPlan, CgrfError,
                   CgrfModel, EDGE_OUT, NODE_OUT, PrecisionSystem,
                   assemble_system, model_with_nets)
from .features import SampleFeatures, apply_standardizer, extract_features
from .mlp import (backward, flatten_grads, flatten_params, forward_cached,
                  with_params)

LOSSES = ("surrogate", "exact_nll")


class TrainDivergence(RuntimeError):
    """Raised when the loss stops being finite; carries the partial report."""

    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "surrogate"
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule_period: int = 50
    schedule_factor: float = 0.5
    patience: int = 20
    seed: int = 0
    weight_init: str = "xavier_uniform"
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.schedule_period < 1:
            raise ValueError("schedule_period must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "loss", "epochs", "batch_size", "lr", "beta1", "beta2", "eps",
            "schedule_period", "schedule_factor", "patience", "seed",
            "weight_init", "weight_init_scale")}


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    n_params: int = 0
    wall_time: float = 0.0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "best_epoch": self.best_epoch, "n_params": self.n_params,
                "epochs_run": self.epochs_run, "wall_time": self.wall_time,
                "stopped_early": self.stopped_early}


def surrogate_loss(mu: np.ndarray, y: np.ndarray) -> float:
    """Half squared error between prediction and label."""
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mu.shape != y.shape:
        raise ValueError(f"shape mismatch {mu.shape} vs {y.shape}")
    d = mu - y
    return 0.5 * float(d @ d)


def nll_value(lam: np.ndarray, eta: np.ndarray, y: np.ndarray) -> float:
    """Exact negative log-likelihood of a dense Gaussian in precision form.

    Dimension-correct partition constant (2 pi)^{d/2}; raises on a
    non-positive-definite precision matrix.
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=np.float64))
    eta = np.asarray(eta, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    d = lam.shape[0]
    try:
        chol = np.linalg.cholesky(lam)
    except np.linalg.LinAlgError as exc:
        raise CgrfError("precision matrix is not positive definite") from exc
    mu = np.linalg.solve(lam, eta)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return (0.5 * float(y @ lam @ y) - float(eta @ y)
            + 0.5 * d * np.log(2.0 * np.pi) - 0.5 * logdet
            + 0.5 * float(eta @ mu))


def nll_loss(system: PrecisionSystem, y: np.ndarray,
             sample_id=None) -> float:
    """Exact NLL of an assembled system (dense; small instances only)."""
    try:
        return nll_value(system.matrix().toarray(), system.eta, y)
    except CgrfError as exc:
        tag = "" if sample_id is None else f" (sample {sample_id})"
        raise CgrfError(f"{exc}{tag}") from exc


def solve_adjoint_gradients(system: PrecisionSystem, mu_flat: np.ndarray,
                            y: np.ndarray
                            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Surrogate-loss gradients wrt the system's free block entries.

    Returns (d_eta (2n,), d_node (n, 3) wrt the symmetric diagonal entries
    (a, b, c), d_edge (m, 2, 2) wrt the coupling block). One adjoint solve
    against the same ridged matrix used for the prediction; the transpose
    placement of edge blocks is already folded in.
    """
    matrix = system.matrix()
    adjoint = splu(matrix.tocsc()).solve(mu_flat - y)
    n, m = system.n, len(system.edges)
    dnode = np.empty((n, NODE_OUT))
    dedge = np.empty((m, EDGE_OUT))
    zi_off = np.zeros(n, dtype=np.uint8)
    e_src = np.ascontiguousarray(system.edges[:, 0], dtype=np.int32)
    e_dst = np.ascontiguousarray(system.edges[:, 1], dtype=np.int32)
    gather_grads(adjoint, mu_flat, e_src, e_dst, zi_off, dnode, dedge)
    return adjoint.copy(), dnode[:, :3].copy(), dedge.reshape(m, 2, 2).copy()


# --- prepared samples -----------------------------------------------------

@dataclass
class PreparedSample:
    """Per-sample immutable training state computed once before the loop."""

    features: SampleFeatures        # standardized
    plan: AssemblyPlan
    zi: np.ndarray                  # effective mask (all-zero when off)
    y: np.ndarray                   # (2n,) interleaved label
    y_pre: np.ndarray               # (2n,) interleaved pre-contingency state
    e_src: np.ndarray               # (m,) int32 contiguous, for the kernels
    e_dst: np.ndarray
    sample_id: int


def prepare_samples(model: CgrfModel, samples: list) -> list[PreparedSample]:
    out = []
    for sample in samples:
        f = apply_standardizer(model.standardizer, extract_features(sample))
        zi = f.zi_mask if model.zi_enforce else np.zeros(f.n, dtype=np.uint8)
        out.append(PreparedSample(
            features=f, plan=AssemblyPlan(f.n, f.edge_pairs), zi=zi,
            y=sample.label.interleaved(),
            y_pre=sample.pre_solution.interleaved(),
            e_src=np.ascontiguousarray(f.edge_pairs[:, 0], dtype=np.int32),
            e_dst=np.ascontiguousarray(f.edge_pairs[:, 1], dtype=np.int32),
            sample_id=sample.meta.seed))
    return out


def _solve_with_ridge(plan: AssemblyPlan, data: np.ndarray, eta: np.ndarray):
    """Factorize with the escalating-ridge policy shared with inference."""
    ridge = 0.0  # data already carries the base ridge
    bump = BASE_RIDGE
    for _ in range(_RIDGE_RETRIES + 1):
        d = data if ridge == 0.0 else _with_extra_ridge(plan, data, ridge)
        try:
            lu = splu(plan.matrix(d).tocsc())
            mu = lu.solve(eta)
        except RuntimeError:
            mu = None
        if mu is not None and np.all(np.isfinite(mu)):
            return mu, lu, d
        ridge += bump * 9.0
        bump *= 10.0
    raise CgrfError("training forward solve failed after ridge escalation")


def _with_extra_ridge(plan: AssemblyPlan, data: np.ndarray, extra: float):
    d = data.copy()
    d[plan.diag_pos] += extra
    return d


def _forward_shared(model: CgrfModel, prep: PreparedSample):
    node_out, node_cache = forward_cached(model.nn_node[0],
                                          prep.features.node_values)
    if len(prep.features.edge_values):
        edge_out, edge_cache = forward_cached(model.nn_edge[0],
                                              prep.features.edge_values)
    else:
        edge_out, edge_cache = np.zeros((0, EDGE_OUT)), None
    return node_out, edge_out, (node_cache, edge_cache)


def _forward_per_element(model: CgrfModel, prep: PreparedSample):
    f = prep.features
    node_rows, node_caches = [], []
    for net, x in zip(model.nn_node, f.node_values):
        out, cache = forward_cached(net, x)
        node_rows.append(out[0])
        node_caches.append(cache)
    edge_rows, edge_caches = [], []
    for b, x in zip(f.edge_branch, f.edge_values):
        out, cache = forward_cached(model.nn_edge[b], x)
        edge_rows.append(out[0])
        edge_caches.append(cache)
    node_out = np.stack(node_rows)
    edge_out = np.stack(edge_rows) if edge_rows else np.zeros((0, EDGE_OUT))
    return node_out, edge_out, (node_caches, edge_caches)


def sample_loss_and_grads(model: CgrfModel, prep: PreparedSample,
                          loss: str = "surrogate",
                          want_grads: bool = True
                          ) -> tuple[float, np.ndarray | None]:
    """Loss and flat parameter gradient for one sample."""
    per_element = model.sharing == "per_element"
    fwd = _forward_per_element if per_element else _forward_shared
    node_out, edge_out, caches = fwd(model, prep)
    data, eta = prep.plan.scatter(node_out, edge_out, prep.zi,
                                  ridge=BASE_RIDGE)

    if loss == "surrogate":
        mu, lu, data_used = _solve_with_ridge(prep.plan, data, eta)
        value = surrogate_loss(mu, prep.y)
        if not want_grads:
            return value, None
        adjoint = lu.solve(mu - prep.y)
        n, m = prep.features.n, len(prep.features.edge_values)
        dnode = np.empty((n, NODE_OUT))
        dedge = np.empty((m, EDGE_OUT))
        gather_grads(adjoint, mu, prep.e_src, prep.e_dst, prep.zi,
                     dnode, dedge)
    else:
        value, dnode, dedge = _nll_terms(prep, data, eta, want_grads)
        if not want_grads:
            return value, None

    flat = _backprop(model, caches, dnode, dedge, prep)
    return value, flat


def _nll_terms(prep: PreparedSample, data: np.ndarray, eta: np.ndarray,
               want_grads: bool):
    """Dense exact-NLL value and block gradients (small instances)."""
    lam = prep.plan.matrix(data).toarray()
    y = prep.y
    value = nll_value(lam, eta, y)
    if not want_grads:
        return value, None, None
    inv = np.linalg.inv(lam)
    mu = inv @ eta
    # dL/dLambda as a full symmetric matrix, then folded per block
    m_full = 0.5 * (np.outer(y, y) - inv - np.outer(mu, mu))
    n = prep.features.n
    dnode = np.empty((n, NODE_OUT))
    i = np.arange(n)
    dnode[:, 0] = m_full[2 * i, 2 * i]
    dnode[:, 1] = m_full[2 * i, 2 * i + 1] + m_full[2 * i + 1, 2 * i]
    dnode[:, 2] = m_full[2 * i + 1, 2 * i + 1]
    deta = mu - y
    dnode[:, 3] = np.where(prep.zi, 0.0, deta[0::2])
    dnode[:, 4] = np.where(prep.zi, 0.0, deta[1::2])
    pairs = prep.features.edge_pairs
    dedge = np.empty((len(pairs), EDGE_OUT))
    for e, (s, t) in enumerate(pairs):
        dedge[e] = 2.0 * m_full[2 * s:2 * s + 2, 2 * t:2 * t + 2].ravel()
    return value, dnode, dedge


def _backprop(model: CgrfModel, caches, dnode, dedge,
              prep: PreparedSample) -> np.ndarray:
    """Chain rule into every net; returns the flat gradient vector."""
    if model.sharing == "shared":
        node_cache, edge_cache = caches
        dw, db = backward(model.nn_node[0], node_cache, dnode)
        parts = [flatten_grads(dw, db)]
        if edge_cache is not None:
            dw, db = backward(model.nn_edge[0], edge_cache, dedge)
            parts.append(flatten_grads(dw, db))
        else:
            parts.append(np.zeros(model.nn_edge[0].n_params))
        return np.concatenate(parts)

    node_caches, edge_caches = caches
    parts = []
    for net, cache, row in zip(model.nn_node, node_caches, dnode):
        dw, db = backward(net, cache, row[None, :])
        parts.append(flatten_grads(dw, db))
    edge_grads = {int(b): (cache, row) for b, cache, row
                  in zip(prep.features.edge_branch, edge_caches, dedge)}
    for b, net in enumerate(model.nn_edge):
        if b in edge_grads:
            cache, row = edge_grads[b]
            dw, db = backward(net, cache, row[None, :])
            parts.append(flatten_grads(dw, db))
        else:
            parts.append(np.zeros(net.n_params))
    return np.concatenate(parts)


# --- flat parameter view across the whole model ---------------------------

def flatten_model(model: CgrfModel) -> np.ndarray:
    return np.concatenate([flatten_params(net)
                           for net in model.nn_node + model.nn_edge])


def model_with_params(model: CgrfModel, flat: np.ndarray) -> CgrfModel:
    nets, k = [], 0
    for net in model.nn_node + model.nn_edge:
        nets.append(with_params(net, flat[k:k + net.n_params]))
        k += net.n_params
    if k != flat.size:
        raise ValueError(f"parameter vector length {flat.size}, "
                         f"model needs {k}")
    n_node = len(model.nn_node)
    return model_with_nets(model, nets[:n_node], nets[n_node:])


# --- optimizer ------------------------------------------------------------

class _Adam:
    def __init__(self, n: int, config: TrainConfig):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.config = config

    def step(self, theta: np.ndarray, grad: np.ndarray,
             lr: float) -> np.ndarray:
        c = self.config
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad * grad
        m_hat = self.m / (1.0 - c.beta1 ** self.t)
        v_hat = self.v / (1.0 - c.beta2 ** self.t)
        return theta - lr * m_hat / (np.sqrt(v_hat) + c.eps)


def _mean_loss(model: CgrfModel, prepared: list[PreparedSample],
               loss: str) -> float:
    total = 0.0
    for prep in prepared:
        value, _ = sample_loss_and_grads(model, prep, loss, want_grads=False)
        total += value
    return total / len(prepared)


def train(model: CgrfModel, train_samples: list, val_samples: list,
          config: TrainConfig = TrainConfig(),
          log_fn=None) -> tuple[CgrfModel, TrainReport]:
    """Mini-batch Adam with step LR decay and early stopping.

    Returns the best-on-validation weights. Raises TrainDivergence (carrying
    the partial report) if any loss stops being finite.
    """
    if not train_samples or not val_samples:
        raise ValueError("train and val splits must be non-empty")
    start = time.perf_counter()
    prep_train = prepare_samples(model, train_samples)
    prep_val = prepare_samples(model, val_samples)

    theta = flatten_model(model)
    adam = _Adam(theta.size, config)
    report = TrainReport(n_params=theta.size)
    best_val = np.inf
    best_theta = theta.copy()
    since_best = 0

    for epoch in range(config.epochs):
        lr = config.lr * config.schedule_factor ** (epoch
                                                    // config.schedule_period)
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, epoch]))
        order = rng.permutation(len(prep_train))

        epoch_total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            grad = np.zeros_like(theta)
            for j in batch:
                value, flat = sample_loss_and_grads(model, prep_train[j],
                                                    config.loss)
                epoch_total += value
                grad += flat
            grad /= len(batch)
            if not np.all(np.isfinite(grad)):
                report.wall_time = time.perf_counter() - start
                raise TrainDivergence(
                    f"non-finite gradient at epoch {epoch}", report)
            theta = adam.step(theta, grad, lr)
            model = model_with_params(model, theta)

        train_loss = epoch_total / len(prep_train)
        val_loss = _mean_loss(model, prep_val, config.loss)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        if log_fn is not None:
            log_fn(f"epoch {epoch:4d}  lr {lr:.2e}  train {train_loss:.6e}  "
                   f"val {val_loss:.6e}")
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            report.wall_time = time.perf_counter() - start
            raise TrainDivergence(f"non-finite loss at epoch {epoch}", report)

        if val_loss < best_val:
            best_val = val_loss
            best_theta = theta.copy()
            report.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                report.stopped_early = True
                break

    report.wall_time = time.perf_counter() - start
    return model_with_params(model, best_theta), report


def eval_model(model: CgrfModel, samples: list) -> dict:
    """Prediction MSE against labels, with the copy-the-pre-state baseline."""
    if not samples:
        raise ValueError("dataset must be non-empty")
    prepared = prepare_samples(model, samples)
    residuals, model_mse, baseline_mse = [], [], []
    for prep in prepared:
        node_out, edge_out, _ = (
            _forward_per_element(model, prep)
            if model.sharing == "per_element" else _forward_shared(model, prep))
        data, eta = prep.plan.scatter(node_out, edge_out, prep.zi,
                                      ridge=BASE_RIDGE)
        mu, _, _ = _solve_with_ridge(prep.plan, data, eta)
        err = mu - prep.y
        residuals.append(float(np.abs(err).max()))
        model_mse.append(float(err @ err) / err.size)
        base_err = prep.y_pre - prep.y
        baseline_mse.append(float(base_err @ base_err) / base_err.size)
    mse = float(np.mean(model_mse))
    base = float(np.mean(baseline_mse))
    return {"mse": mse, "baseline_mse_vpre": base,
            "ratio": mse / base if base > 0 else np.inf,
            "per_sample_max_err": residuals}
