"""Dense feedforward classifier with hand-written forward and reverse passes.

Conventions
-----------
* Weight matrix ``weights[k]`` has shape ``(layer_sizes[k], layer_sizes[k+1])``
  so a row batch ``H`` is mapped by ``H @ W + b``.
* The activation is applied on every hidden layer; the last layer emits logits.
* Every function accepts a single vector ``(d,)`` or a row batch ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh")
MODEL_HEADER = "CONFSEP-MODEL v1"
DEFAULT_BOX = (0.0, 1.0)


class ShapeError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkParams:
    layer_sizes: tuple
    weights: tuple
    biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ShapeError(f"layer_sizes must hold >= 2 positive ints, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        if len(ws) != len(sizes) - 1 or len(bs) != len(sizes) - 1:
            raise ShapeError("need exactly one weight matrix and bias per layer")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (sizes[k], sizes[k + 1]):
                raise ShapeError(f"layer {k}: weight shape {w.shape}, expected {(sizes[k], sizes[k + 1])}")
            if b.shape != (sizes[k + 1],):
                raise ShapeError(f"layer {k}: bias shape {b.shape}, expected {(sizes[k + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def flat(self) -> np.ndarray:
        """All parameters concatenated, weights then bias per layer."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    def with_flat(self, theta: np.ndarray) -> "NetworkParams":
        theta = np.asarray(theta, dtype=np.float64)
        ws, bs, i = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(theta[i:i + w.size].reshape(w.shape))
            i += w.size
            bs.append(theta[i:i + b.size].copy())
            i += b.size
        if i != theta.size:
            raise ShapeError(f"flat vector has {theta.size} entries, expected {i}")
        return NetworkParams(self.layer_sizes, ws, bs, self.activation)

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return (
            self.layer_sizes == other.layer_sizes
            and self.activation == other.activation
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass(frozen=True)
class GradientBundle:
    """Gradients of a scalar w.r.t. the input(s) and every parameter.

    For a row batch, ``input_grad`` is per row and the parameter gradients are
    summed over rows.
    """

    input_grad: np.ndarray
    weight_grads: tuple
    bias_grads: tuple = field(default=())

    def flat_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weight_grads, self.bias_grads):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)


def init_params(layer_sizes: Sequence[int], activation: str = "tanh", seed: int = 0,
                scale: float = 1.0) -> NetworkParams:
    """Gaussian init with std ``scale / sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [int(s) for s in layer_sizes]
    ws = [rng.normal(0.0, scale / np.sqrt(a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [np.zeros(b) for b in sizes[1:]]
    return NetworkParams(tuple(sizes), ws, bs, activation)


def _act(a, kind):
    if kind == "relu":
        return np.maximum(a, 0.0)
    return np.tanh(a)


def _act_grad(a, h, kind):
    if kind == "relu":
        # subgradient at 0 is 0
        return (a > 0).astype(np.float64)
    return 1.0 - h * h


def _as_rows(params: NetworkParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with input size {params.input_dim}")
    return X, single


def _forward_cache(params: NetworkParams, X):
    hs, pre = [X], []
    h = X
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        if k == last:
            return a, hs, pre
        pre.append(a)
        h = _act(a, params.activation)
        hs.append(h)


def forward_logits(params: NetworkParams, x) -> np.ndarray:
    X, single = _as_rows(params, x)
    z, _, _ = _forward_cache(params, X)
    return z[0] if single else z


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    s = z - np.max(z, axis=-1, keepdims=True)
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def probs(params: NetworkParams, x) -> np.ndarray:
    return softmax(forward_logits(params, x))


def predict(params: NetworkParams, x):
    """Return ``(label, probabilities)``; ``np.argmax`` breaks ties by lowest index."""
    p = probs(params, x)
    label = np.argmax(p, axis=-1)
    if p.ndim == 1:
        return int(label), p
    return label, p


def confidence(p) -> float | np.ndarray:
    m = np.max(np.asarray(p, dtype=np.float64), axis=-1)
    return float(m) if np.ndim(m) == 0 else m


def backward(params: NetworkParams, x, upstream) -> GradientBundle:
    """Gradient of ``<upstream, Z(x)>`` w.r.t. the input and all parameters."""
    X, single = _as_rows(params, x)
    U = np.asarray(upstream, dtype=np.float64)
    U = U[None, :] if U.ndim == 1 else U
    if U.shape != (X.shape[0], params.n_classes):
        raise ShapeError(f"upstream shape {np.shape(upstream)} does not match logits")
    _, hs, pre = _forward_cache(params, X)
    n_layers = len(params.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    g = U
    for k in range(n_layers - 1, -1, -1):
        gw[k] = hs[k].T @ g
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
        if k > 0:
            g = g * _act_grad(pre[k - 1], hs[k], params.activation)
    return GradientBundle(g[0] if single else g, tuple(gw), tuple(gb))


def input_grad(params: NetworkParams, x, upstream) -> np.ndarray:
    """Input-only reverse pass; skips parameter gradient accumulation."""
    X, single = _as_rows(params, x)
    U = np.asarray(upstream, dtype=np.float64)
    U = U[None, :] if U.ndim == 1 else U
    _, hs, pre = _forward_cache(params, X)
    g = U
    for k in range(len(params.weights) - 1, -1, -1):
        g = g @ params.weights[k].T
        if k > 0:
            g = g * _act_grad(pre[k - 1], hs[k], params.activation)
    return g[0] if single else g


def logits_and_input_grad(params: NetworkParams, X, upstream_fn):
    """One forward pass, then an input gradient for ``upstream_fn(logits)``.

    ``upstream_fn`` returns ``(values, dvalues/dlogits)``; used by the attack
    inner loops so logits are not recomputed.
    """
    z, hs, pre = _forward_cache(params, X)
    vals, g = upstream_fn(z)
    for k in range(len(params.weights) - 1, -1, -1):
        g = g @ params.weights[k].T
        if k > 0:
            g = g * _act_grad(pre[k - 1], hs[k], params.activation)
    return z, vals, g


# -- persistence ------------------------------------------------------------

def save_model(params: NetworkParams, path) -> None:
    lines = [
        MODEL_HEADER,
        "layer_sizes " + " ".join(str(s) for s in params.layer_sizes),
        "activation " + params.activation,
    ]
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"weight {k} " + " ".join(float(v).hex() for v in w.ravel()))
        lines.append(f"bias {k} " + " ".join(float(v).hex() for v in b.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> NetworkParams:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MODEL_HEADER:
        raise ModelFormatError(f"{path}: missing header {MODEL_HEADER!r}")
    try:
        sizes = tuple(int(v) for v in text[1].split()[1:])
        activation = text[2].split()[1]
        ws, bs = [], []
        for k in range(len(sizes) - 1):
            wl = text[3 + 2 * k].split()
            bl = text[4 + 2 * k].split()
            if wl[:2] != ["weight", str(k)] or bl[:2] != ["bias", str(k)]:
                raise ModelFormatError(f"{path}: layer {k} records out of order")
            ws.append(np.array([float.fromhex(v) for v in wl[2:]]).reshape(sizes[k], sizes[k + 1]))
            bs.append(np.array([float.fromhex(v) for v in bl[2:]]))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: malformed model file ({exc})") from exc
    return NetworkParams(sizes, ws, bs, activation)
