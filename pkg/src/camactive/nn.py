"""Dense feed-forward networks with manual backprop.

Everything runs in float64 numpy so that analytic gradients can be checked
against central finite differences to tight tolerances.
"""

from __future__ import annotations

import numpy as np


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


class DenseNet:
    """Stack of fully-connected layers: ReLU on hidden layers, linear output.

    Weight init is uniform scaled by fan-in, seeded, so training runs are
    bit-reproducible.
    """

    def __init__(self, dims, seed: int = 0, init_scale: float = 1.0):
        dims = [int(d) for d in dims]
        if len(dims) < 2:
            raise ValueError("need at least input and output dimensions")
        if any(d <= 0 for d in dims):
            raise ValueError(f"layer dimensions must be positive, got {dims}")
        self.dims = dims
        self.seed = int(seed)
        self.init_scale = float(init_scale)
        rng = np.random.default_rng(self.seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = self.init_scale / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out, dtype=np.float64))

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def copy(self) -> "DenseNet":
        clone = DenseNet.__new__(DenseNet)
        clone.dims = list(self.dims)
        clone.seed = self.seed
        clone.init_scale = self.init_scale
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(np.asarray(x, dtype=np.float64))
        return out

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping the per-layer inputs and pre-activations.

        Accepts a single vector or a (batch, in_dim) matrix; the cache is
        what `backward` consumes.
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ValueError(
                f"input dimension {x.shape[1]} does not match net input {self.in_dim}"
            )
        inputs = []
        pre_acts = []
        h = x
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            pre_acts.append(z)
            h = relu(z) if i < n_layers - 1 else z
        out = h[0] if squeeze else h
        return out, (inputs, pre_acts, squeeze)

    def backward(self, cache, grad_out: np.ndarray):
        """Backprop an output gradient through the cached forward pass.

        Returns (grad_weights, grad_biases, grad_input) where the weight and
        bias gradients are summed over the batch.
        """
        inputs, pre_acts, squeeze = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        n_layers = len(self.weights)
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1:
                g = g * (pre_acts[i] > 0)
            grad_w[i] = inputs[i].T @ g
            grad_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        grad_in = g[0] if squeeze else g
        return grad_w, grad_b, grad_in

    def apply_gradients(self, grad_w, grad_b, lr: float) -> None:
        for w, gw in zip(self.weights, grad_w):
            w -= lr * gw
        for b, gb in zip(self.biases, grad_b):
            b -= lr * gb

    # -- flat-parameter view, used by the finite-difference gradient checks --

    def get_flat_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].reshape(b.shape).copy()
            pos += b.size
        if pos != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    @staticmethod
    def flatten_grads(grad_w, grad_b) -> np.ndarray:
        parts = []
        for gw, gb in zip(grad_w, grad_b):
            parts.append(gw.ravel())
            parts.append(gb.ravel())
        return np.concatenate(parts)

    def equals(self, other: "DenseNet") -> bool:
        return (
            self.dims == other.dims
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def finite_difference_grad(loss_fn, net: DenseNet, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of loss_fn(net) w.r.t. all net parameters."""
    base = net.get_flat_params()
    grad = np.zeros_like(base)
    for i in range(base.size):
        bump = base.copy()
        bump[i] = base[i] + step
        net.set_flat_params(bump)
        plus = loss_fn(net)
        bump[i] = base[i] - step
        net.set_flat_params(bump)
        minus = loss_fn(net)
        grad[i] = (plus - minus) / (2.0 * step)
    net.set_flat_params(base)
    return grad


def relative_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)
