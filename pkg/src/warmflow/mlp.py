"""Small dense networks with hand-rolled forward and backward passes.

Batched numpy only. Weights are stored (fan_out, fan_in) so a layer computes
X @ W.T + b; hidden layers apply tanh or relu, the output layer is identity.
Gradients are exact (verified against central differences in the tests); the
parameter flattening order is the contract the optimizer and the
finite-difference checks both rely on: weights then bias, layer by layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class Mlp:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases length mismatch")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"bias size {b.shape} does not match "
                                 f"weight {w.shape}")
        for wa, wb in zip(self.weights, self.weights[1:]):
            if wb.shape[1] != wa.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0]
                                                   for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_mlp(sizes: tuple[int, ...], rng: np.random.Generator,
             activation: str = "tanh",
             final_bias: np.ndarray | None = None,
             scale: float = 1.0, final_scale: float = 1.0) -> Mlp:
    """Xavier-uniform weights, zero biases.

    ``final_bias`` overrides the output bias so an untrained model can start
    from a chosen constant output (e.g. identity precision blocks);
    ``final_scale`` shrinks the output layer's weights toward that constant.
    ``scale`` multiplies every Xavier bound. The rng is consumed identically
    regardless of the scale arguments.
    """
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    weights[-1] = weights[-1] * final_scale
    if final_bias is not None:
        fb = np.asarray(final_bias, dtype=np.float64)
        if fb.shape != (sizes[-1],):
            raise ValueError(f"final_bias shape {fb.shape} does not match "
                             f"output size {sizes[-1]}")
        biases[-1] = fb.copy()
    return Mlp(tuple(weights), tuple(biases), activation)


def _act(net: Mlp, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if net.activation == "tanh" else np.maximum(z, 0.0)


def _act_deriv_from_output(net: Mlp, a: np.ndarray) -> np.ndarray:
    # relu(x) > 0 iff x > 0, so the post-activation value suffices here too
    return 1.0 - a * a if net.activation == "tanh" else (a > 0).astype(float)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Batched forward pass; x is (batch, d_in) or a single (d_in,) vector."""
    squeeze = x.ndim == 1
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w.T + b
        if i != last:
            a = _act(net, a)
    return a[0] if squeeze else a


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Single-vector forward pass with an explicit dimension check."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.sizes[0],):
        raise ValueError(f"input shape {x.shape} does not match net input "
                         f"size {net.sizes[0]}")
    return forward(net, x)


def forward_cached(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass keeping each layer's input for the backward pass."""
    a = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = [a]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w.T + b
        if i != last:
            a = _act(net, a)
        cache.append(a)
    return a, cache


def backward(net: Mlp, cache: list, d_out: np.ndarray
             ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of sum(d_out * output) w.r.t. every weight and bias."""
    d_weights: list[np.ndarray] = [None] * len(net.weights)
    d_biases: list[np.ndarray] = [None] * len(net.biases)
    dz = np.atleast_2d(np.asarray(d_out, dtype=np.float64))
    for i in range(len(net.weights) - 1, -1, -1):
        d_weights[i] = dz.T @ cache[i]
        d_biases[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ net.weights[i]
            dz = da * _act_deriv_from_output(net, cache[i])
    return d_weights, d_biases


# --- flat parameter vector view (optimizer state, FD checks) --------------

def flatten_params(net: Mlp) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def flatten_grads(d_weights: list[np.ndarray],
                  d_biases: list[np.ndarray]) -> np.ndarray:
    parts = []
    for dw, db in zip(d_weights, d_biases):
        parts.append(dw.ravel())
        parts.append(db.ravel())
    return np.concatenate(parts)


def with_params(net: Mlp, flat: np.ndarray) -> Mlp:
    """New net with parameters taken from a flat vector (flatten order)."""
    if flat.shape != (net.n_params,):
        raise ValueError(f"expected {net.n_params} parameters, "
                         f"got {flat.shape}")
    weights, biases, k = [], [], 0
    for w, b in zip(net.weights, net.biases):
        weights.append(flat[k:k + w.size].reshape(w.shape).copy())
        k += w.size
        biases.append(flat[k:k + b.size].copy())
        k += b.size
    return Mlp(tuple(weights), tuple(biases), net.activation)
