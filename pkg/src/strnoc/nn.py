"""Small dense-network engine: layers, activations, segment pooling, losses, Adam.

Everything is plain numpy. Parameters are stored as arrays in either float64
(used for gradient checking) or float32 (training); every op follows the dtype
of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")


class NumericalError(FloatingPointError):
    """A non-finite value showed up in a loss or gradient."""


# --------------------------------------------------------------------------
# activations


def relu(z):
    return np.maximum(z, 0)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z, axis=-1):
    z = np.asarray(z)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = np.asarray(z)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_backward(p, dp):
    """Vector-Jacobian product of softmax along the last axis."""
    return p * (dp - np.sum(p * dp, axis=-1, keepdims=True))


def _activate(kind: str, z):
    if kind == "relu":
        return relu(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "softmax":
        return softmax(z)
    if kind == "identity":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _activation_backward(kind: str, z, y, dy):
    if kind == "relu":
        return dy * (z > 0)
    if kind == "sigmoid":
        return dy * y * (1 - y)
    if kind == "softmax":
        return softmax_backward(y, dy)
    return dy


# --------------------------------------------------------------------------
# dense layer


@dataclass
class DenseLayer:
    weights: np.ndarray  # [in, out]
    bias: np.ndarray     # [out]
    activation: str = "identity"

    @property
    def n_in(self) -> int:
        return self.weights.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]

    def astype(self, dtype) -> "DenseLayer":
        return DenseLayer(self.weights.astype(dtype), self.bias.astype(dtype), self.activation)


def init_dense(rng: np.random.Generator, n_in: int, n_out: int, activation: str = "identity",
               dtype=np.float32) -> DenseLayer:
    """Glorot-uniform weights, zero bias."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    a = np.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-a, a, size=(n_in, n_out)).astype(dtype)
    return DenseLayer(w, np.zeros(n_out, dtype=dtype), activation)


def dense_forward(layer: DenseLayer, x):
    """Return ``(y, cache)`` with ``y = act(x @ W + b)``."""
    x = np.asarray(x)
    if x.shape[-1] != layer.n_in:
        raise ValueError(f"dense input width {x.shape[-1]} != {layer.n_in}")
    z = x @ layer.weights + layer.bias
    y = _activate(layer.activation, z)
    return y, (x, z, y)


def dense_backward(layer: DenseLayer, cache, dy):
    """Gradients ``(dx, dW, db)`` of the forward map for upstream gradient ``dy``."""
    x, z, y = cache
    if dy.shape != y.shape:
        raise ValueError(f"upstream gradient shape {dy.shape} != output shape {y.shape}")
    dz = _activation_backward(layer.activation, z, y, dy)
    x2 = x.reshape(-1, x.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    dw = x2.T @ dz2
    db = dz2.sum(axis=0)
    dx = dz @ layer.weights.T
    return dx, dw, db


# --------------------------------------------------------------------------
# losses


def categorical_cross_entropy(p, one_hot):
    """Mean over rows of ``-ln p[target]``; gradient is w.r.t. the softmax logits."""
    p = np.asarray(p)
    one_hot = np.asarray(one_hot)
    if p.shape != one_hot.shape:
        raise ValueError("shape mismatch between probabilities and one-hot targets")
    tiny = np.finfo(p.dtype).tiny if np.issubdtype(p.dtype, np.floating) else 1e-300
    n = 1 if p.ndim == 1 else p.shape[0]
    loss = -np.sum(one_hot * np.log(np.maximum(p, tiny))) / n
    return float(loss), (p - one_hot) / n


def cross_entropy_from_logits(z, target_idx):
    """Mean CE for integer targets, computed via log-softmax; returns (loss, p, dz)."""
    logp = log_softmax(z)
    n = z.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, target_idx].sum() / max(n, 1)
    p = np.exp(logp)
    dz = p.copy()
    dz[rows, target_idx] -= 1
    return float(loss), p, dz / max(n, 1)


def mse_loss(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    n = pred.size
    if n == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - target
    return float(np.sum(diff * diff) / n), 2 * diff / n


# --------------------------------------------------------------------------
# pooling


def masked_pool(x, mask):
    """Concatenate masked mean and masked max over rows; zeros if nothing is active."""
    x = np.asarray(x)
    mask = np.asarray(mask).astype(bool)
    d = x.shape[1]
    if not mask.any():
        return np.zeros(2 * d, dtype=x.dtype)
    act = x[mask]
    return np.concatenate([act.mean(axis=0), act.max(axis=0)])


@dataclass
class SegmentPoolCache:
    x: np.ndarray
    seg: np.ndarray
    starts: np.ndarray
    uniq: np.ndarray
    counts: np.ndarray
    maxv: np.ndarray
    n_segments: int


def segment_pool_forward(x, seg, n_segments: int):
    """Mean+max pooling of rows grouped by ``seg`` (non-decreasing ids).

    Returns ``([n_segments, 2d], cache)``; segments without rows pool to zero.
    """
    x = np.asarray(x)
    d = x.shape[1]
    out = np.zeros((n_segments, 2 * d), dtype=x.dtype)
    if x.shape[0] == 0:
        empty = np.zeros(0, dtype=np.int64)
        return out, SegmentPoolCache(x, seg, empty, empty, empty, np.zeros((0, d), x.dtype), n_segments)
    if np.any(np.diff(seg) < 0):
        raise ValueError("segment ids must be sorted")
    starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
    uniq = seg[starts]
    counts = np.diff(np.r_[starts, x.shape[0]])
    sums = np.add.reduceat(x, starts, axis=0)
    maxv = np.maximum.reduceat(x, starts, axis=0)
    out[uniq, :d] = sums / counts[:, None].astype(x.dtype)
    out[uniq, d:] = maxv
    return out, SegmentPoolCache(x, seg, starts, uniq, counts, maxv, n_segments)


def _segment_local_index(cache: SegmentPoolCache) -> np.ndarray:
    local = np.zeros(cache.x.shape[0], dtype=np.int64)
    local[cache.starts] = 1
    return np.cumsum(local) - 1


def segment_pool_backward(cache: SegmentPoolCache, dout):
    """Route mean gradients evenly and max gradients to the first maximal row."""
    x = cache.x
    n, d = x.shape
    if n == 0:
        return np.zeros_like(x)
    k = _segment_local_index(cache)
    dmean = dout[cache.uniq, :d] / cache.counts[:, None].astype(x.dtype)
    dmax = dout[cache.uniq, d:]
    dx = dmean[k]
    eq = x == cache.maxv[k]
    cs = np.cumsum(eq, axis=0, dtype=np.int32)
    before = np.zeros((len(cache.starts), d), dtype=np.int32)
    before[1:] = cs[cache.starts[1:] - 1]
    first = eq & ((cs - before[k]) == 1)
    dx = dx + first * dmax[k]
    return dx


def segment_argmax_pattern(cache: SegmentPoolCache) -> np.ndarray:
    """Row index of the first maximum per (segment, feature); used to detect kinks."""
    x = cache.x
    if x.shape[0] == 0:
        return np.zeros((0, x.shape[1]), dtype=np.int64)
    k = _segment_local_index(cache)
    eq = x == cache.maxv[k]
    rows = np.where(eq, np.arange(x.shape[0])[:, None], x.shape[0])
    return np.minimum.reduceat(rows, cache.starts, axis=0)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, applied in place; returns ``params``."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if params[name].shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = (state.lr / c1) * m / (np.sqrt(v / c2) + state.epsilon)
        p -= step.astype(p.dtype, copy=False)
    return params


# --------------------------------------------------------------------------
# gradient checking


def relative_error(a, b, floor: float = 1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(model, batch, eps: float = 1e-5, n_coords: int = 200, seed: int = 0,
                   loss_weights=None, return_details: bool = False):
    """Largest relative error between analytic and central-difference gradients.

    ``model`` must provide ``params()``, ``loss_and_grads(batch, loss_weights)``
    and ``activation_pattern(batch)``. Coordinates whose +/- eps perturbation
    changes the piecewise-linear pattern (a ReLU sign or pooling argmax flips)
    sit on a kink where no derivative exists; they are resampled.
    """
    params = model.params()
    if any(p.dtype != np.float64 for p in params.values()):
        raise TypeError("gradient_check needs a float64 model")
    _, grads = model.loss_and_grads(batch, loss_weights)
    rng = np.random.default_rng(seed)
    names = sorted(params)
    sizes = np.array([params[n].size for n in names], dtype=np.float64)
    base_pattern = model.activation_pattern(batch)

    errors, analytic, numeric, picked = [], [], [], []
    tried = 0
    while len(errors) < n_coords:
        tried += 1
        if tried > 20 * n_coords:
            raise RuntimeError("too many coordinates landed on kinks")
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        p = params[name]
        flat = p.reshape(-1)
        i = int(rng.integers(flat.size))
        old = flat[i]
        flat[i] = old + eps
        lp, _ = model.loss_and_grads(batch, loss_weights, need_grads=False)
        pat_p = model.activation_pattern(batch)
        flat[i] = old - eps
        lm, _ = model.loss_and_grads(batch, loss_weights, need_grads=False)
        pat_m = model.activation_pattern(batch)
        flat[i] = old
        if not (_same_pattern(pat_p, base_pattern) and _same_pattern(pat_m, base_pattern)):
            continue
        num = (lp - lm) / (2 * eps)
        ana = float(grads[name].reshape(-1)[i])
        errors.append(float(relative_error(ana, num)))
        analytic.append(ana)
        numeric.append(num)
        picked.append((name, i))
    worst = max(errors)
    if return_details:
        return worst, {"errors": errors, "analytic": analytic, "numeric": numeric,
                       "coords": picked, "skipped": tried - len(errors)}
    return worst


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
