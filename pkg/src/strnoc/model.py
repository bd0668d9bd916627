"""The NoC network: per-peak encoder, locus encoder, profile trunk and six heads.

Main branch (16 layers from input to the NoC head)::

    peak rows -> dense x3 -> [merge with peak heads] -> pool over peaks
              -> dense x3 -> [merge with locus heads] -> pool over loci
              -> dense x5 -> NoC softmax

Peak and locus head outputs are concatenated back onto the branch before the
merge layers. Only active rows (peaks present in the profile) are processed;
padding never enters a matmul, which is what makes the model invariant to
padding and to the order of peaks within a locus.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import (
    MAX_PEAKS,
    N_DONORS,
    N_FEATURES,
    N_LOCI,
    N_LOCUS_COUNTS,
    N_PEAK_COUNTS,
    CompactProfile,
    LabelSet,
)
from .nn import (
    ACTIVATIONS,
    DenseLayer,
    NumericalError,
    dense_backward,
    dense_forward,
    init_dense,
    log_softmax,
    segment_argmax_pattern,
    segment_pool_backward,
    segment_pool_forward,
    sigmoid,
    softmax,
    softmax_backward,
)

PEAK_WIDTH = 128
LOCUS_WIDTHS = (256, 256, 128)
TRUNK_WIDTHS = (256, 256, 128, 64, 32)

OUTPUT_NAMES = (
    "peak_prop_allelic",
    "peak_allele_count",
    "locus_mixture",
    "locus_allele_count",
    "profile_mixture",
    "profile_noc",
)


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    peak_prop: float = 1.0
    peak_count: float = 1.0
    locus_mix: float = 1.0
    locus_count: float = 1.0
    profile_mix: float = 1.0
    noc: float = 1.0

    def __post_init__(self):
        vals = self.as_tuple()
        if any(w < 0 for w in vals):
            raise ValueError("loss weights must be nonnegative")
        if self.noc <= 0:
            raise ValueError("the NoC loss weight must be positive")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.peak_prop, self.peak_count, self.locus_mix,
                self.locus_count, self.profile_mix, self.noc)

    @classmethod
    def from_sequence(cls, w: Sequence[float]) -> "LossWeights":
        return cls(*[float(x) for x in w])

    @classmethod
    def noc_only(cls) -> "LossWeights":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 1.0)


# --------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    """Active peak rows of ``n_profiles`` profiles, sorted by locus slot.

    ``slot = profile * 24 + locus``. Label arrays are optional; integer labels
    use -1 where no target exists.
    """

    x: np.ndarray
    slot: np.ndarray
    pos: np.ndarray
    n_profiles: int
    prop: np.ndarray | None = None
    count: np.ndarray | None = None
    locus_mix: np.ndarray | None = None
    locus_count: np.ndarray | None = None
    profile_mix: np.ndarray | None = None
    noc: np.ndarray | None = None

    @property
    def n_slots(self) -> int:
        return self.n_profiles * N_LOCI

    @property
    def has_labels(self) -> bool:
        return self.noc is not None

    def astype(self, dtype) -> "Batch":
        conv = lambda a: None if a is None else (a.astype(dtype) if a.dtype.kind == "f" else a)
        return Batch(self.x.astype(dtype), self.slot, self.pos, self.n_profiles,
                     conv(self.prop), self.count, conv(self.locus_mix), self.locus_count,
                     conv(self.profile_mix), self.noc)


@dataclass
class EncodedRecord:
    """A compact encoded profile together with its compact labels."""

    inputs: CompactProfile
    prop: np.ndarray | None = None          # [n]
    count: np.ndarray | None = None         # [n] int
    locus_mix: np.ndarray | None = None     # [24, 10]
    locus_count: np.ndarray | None = None   # [24] int (class index, value - 1)
    profile_mix: np.ndarray | None = None   # [10]
    noc: int | None = None

    @classmethod
    def from_arrays(cls, inputs: CompactProfile, labels: LabelSet | None) -> "EncodedRecord":
        if labels is None:
            return cls(inputs)
        li, pi = inputs.locus, inputs.pos
        pc = labels.peak_allele_count[li, pi]
        count = np.where(pc.sum(axis=1) > 0, pc.argmax(axis=1), -1).astype(np.int64)
        return cls(
            inputs=inputs,
            prop=labels.peak_prop_allelic[li, pi, 0].astype(np.float64),
            count=count,
            locus_mix=np.asarray(labels.locus_mixture, dtype=np.float64),
            locus_count=np.asarray(labels.locus_allele_count).argmax(axis=1).astype(np.int64),
            profile_mix=np.asarray(labels.profile_mixture, dtype=np.float64),
            noc=int(np.argmax(labels.profile_noc)) + 1,
        )

    @classmethod
    def from_dense(cls, tensor: np.ndarray, labels: LabelSet | None = None) -> "EncodedRecord":
        return cls.from_arrays(CompactProfile.from_dense(tensor), labels)


def make_batch(records: Sequence[EncodedRecord], dtype=np.float32) -> Batch:
    xs, slots, poss = [], [], []
    for b, r in enumerate(records):
        xs.append(np.asarray(r.inputs.rows, dtype=dtype))
        slots.append(b * N_LOCI + r.inputs.locus.astype(np.int64))
        poss.append(r.inputs.pos.astype(np.int64))
    x = np.concatenate(xs) if xs else np.zeros((0, N_FEATURES), dtype=dtype)
    slot = np.concatenate(slots) if slots else np.zeros(0, dtype=np.int64)
    pos = np.concatenate(poss) if poss else np.zeros(0, dtype=np.int64)
    order = np.lexsort((pos, slot))
    if not np.array_equal(order, np.arange(len(order))):
        x, slot, pos = x[order], slot[order], pos[order]
    batch = Batch(x, slot, pos, len(records))
    if records and all(r.noc is not None for r in records):
        batch.prop = np.concatenate([r.prop for r in records]).astype(dtype)[order]
        batch.count = np.concatenate([r.count for r in records])[order]
        batch.locus_mix = np.concatenate([r.locus_mix for r in records]).astype(dtype)
        batch.locus_count = np.concatenate([r.locus_count for r in records])
        batch.profile_mix = np.stack([r.profile_mix for r in records]).astype(dtype)
        batch.noc = np.array([r.noc for r in records], dtype=np.int64)
    return batch


def batch_from_dense(tensors: np.ndarray, labels: Sequence[LabelSet] | None = None,
                     dtype=np.float32) -> Batch:
    tensors = np.asarray(tensors)
    if tensors.ndim == 3:
        tensors = tensors[None]
    if tensors.shape[1:] != (N_LOCI, MAX_PEAKS, N_FEATURES):
        raise ValueError(f"expected [*, 24, 50, 89] input, got {tensors.shape}")
    recs = [EncodedRecord.from_dense(t, None if labels is None else labels[i])
            for i, t in enumerate(tensors)]
    return make_batch(recs, dtype)


# --------------------------------------------------------------------------
# outputs


@dataclass
class Outputs:
    """Head outputs over active rows (peak level) and all slots (locus level)."""

    prop: np.ndarray          # [n]
    count: np.ndarray         # [n, 21]
    locus_mix: np.ndarray     # [B*24, 10]
    locus_count: np.ndarray   # [B*24, 20]
    profile_mix: np.ndarray   # [B, 10]
    noc: np.ndarray           # [B, 10]
    locus_active: np.ndarray  # [B*24] bool

    def dense(self, batch: Batch) -> list[tuple[np.ndarray, ...]]:
        """Per profile, the six outputs in label layout (padding rows zero)."""
        out = []
        b_of = batch.slot // N_LOCI
        li = batch.slot % N_LOCI
        for b in range(batch.n_profiles):
            sel = b_of == b
            prop = np.zeros((N_LOCI, MAX_PEAKS, 1), dtype=self.prop.dtype)
            cnt = np.zeros((N_LOCI, MAX_PEAKS, N_PEAK_COUNTS), dtype=self.count.dtype)
            prop[li[sel], batch.pos[sel], 0] = self.prop[sel]
            cnt[li[sel], batch.pos[sel]] = self.count[sel]
            s = slice(b * N_LOCI, (b + 1) * N_LOCI)
            out.append((prop, cnt, self.locus_mix[s].copy(), self.locus_count[s].copy(),
                        self.profile_mix[b].copy(), self.noc[b].copy()))
        return out


# --------------------------------------------------------------------------
# the model


def _layer_plan(feedback: bool) -> list[tuple[str, int, int, str]]:
    peak_merge_in = PEAK_WIDTH + (1 + N_PEAK_COUNTS if feedback else 0)
    locus_merge_in = LOCUS_WIDTHS[-1] + (N_DONORS + N_LOCUS_COUNTS if feedback else 0)
    plan = [
        ("peak1", N_FEATURES, PEAK_WIDTH, "relu"),
        ("peak2", PEAK_WIDTH, PEAK_WIDTH, "relu"),
        ("peak3", PEAK_WIDTH, PEAK_WIDTH, "relu"),
        ("peak_prop", PEAK_WIDTH, 1, "sigmoid"),
        ("peak_count", PEAK_WIDTH, N_PEAK_COUNTS, "softmax"),
        ("peak_merge", peak_merge_in, PEAK_WIDTH, "relu"),
    ]
    width = 2 * PEAK_WIDTH
    for i, w in enumerate(LOCUS_WIDTHS, 1):
        plan.append((f"locus{i}", width, w, "relu"))
        width = w
    plan += [
        ("locus_mix", width, N_DONORS, "softmax"),
        ("locus_count", width, N_LOCUS_COUNTS, "softmax"),
        ("locus_merge", locus_merge_in, PEAK_WIDTH, "relu"),
    ]
    width = 2 * PEAK_WIDTH
    for i, w in enumerate(TRUNK_WIDTHS, 1):
        plan.append((f"trunk{i}", width, w, "relu"))
        width = w
    plan += [
        ("profile_mix", width, N_DONORS, "softmax"),
        ("noc", width, N_DONORS, "softmax"),
    ]
    return plan


MAIN_BRANCH = ("peak1", "peak2", "peak3", "peak_merge", "<peak_pool>",
               "locus1", "locus2", "locus3", "locus_merge", "<locus_pool>",
               "trunk1", "trunk2", "trunk3", "trunk4", "trunk5", "noc")


@dataclass
class DeepNoCModel:
    layers: dict[str, DenseLayer]
    seed: int = 0
    feedback: bool = True
    meta: dict = field(default_factory=dict)

    # ---- bookkeeping

    @property
    def dtype(self):
        return self.layers["peak1"].weights.dtype

    @property
    def main_branch_depth(self) -> int:
        return len(MAIN_BRANCH)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers.items():
            out[f"{name}.W"] = layer.weights
            out[f"{name}.b"] = layer.bias
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params().values())

    def astype(self, dtype) -> "DeepNoCModel":
        return DeepNoCModel({k: v.astype(dtype) for k, v in self.layers.items()},
                            self.seed, self.feedback, dict(self.meta))

    def copy(self) -> "DeepNoCModel":
        return self.astype(self.dtype)

    def layer_dims(self) -> list[tuple[str, int, int, str]]:
        return [(n, l.n_in, l.n_out, l.activation) for n, l in self.layers.items()]

    # ---- forward / backward

    def _forward(self, batch: Batch, keep: bool):
        L = self.layers
        dtype = self.dtype
        x = batch.x.astype(dtype, copy=False)
        S, B = batch.n_slots, batch.n_profiles
        caches = {}

        h = x
        for name in ("peak1", "peak2", "peak3"):
            h, caches[name] = dense_forward(L[name], h)
        h3 = h
        prop_z = h3 @ L["peak_prop"].weights + L["peak_prop"].bias
        prop = sigmoid(prop_z)[:, 0]
        cnt_z = h3 @ L["peak_count"].weights + L["peak_count"].bias
        cnt_logp = log_softmax(cnt_z) if len(cnt_z) else cnt_z
        cnt = np.exp(cnt_logp)
        merge_in = np.concatenate([h3, prop[:, None], cnt], axis=1) if self.feedback else h3
        m, caches["peak_merge"] = dense_forward(L["peak_merge"], merge_in)
        pooled, caches["peak_pool"] = segment_pool_forward(m, batch.slot, S)

        g = pooled
        for name in ("locus1", "locus2", "locus3"):
            g, caches[name] = dense_forward(L[name], g)
        g3 = g
        lmix_z = g3 @ L["locus_mix"].weights + L["locus_mix"].bias
        lmix = softmax(lmix_z)
        lcnt_z = g3 @ L["locus_count"].weights + L["locus_count"].bias
        lcnt_logp = log_softmax(lcnt_z)
        lcnt = np.exp(lcnt_logp)
        lmerge_in = np.concatenate([g3, lmix, lcnt], axis=1) if self.feedback else g3
        lm, caches["locus_merge"] = dense_forward(L["locus_merge"], lmerge_in)

        active = np.zeros(S, dtype=bool)
        active[batch.slot] = True
        act_idx = np.flatnonzero(active)
        ppooled, caches["locus_pool"] = segment_pool_forward(lm[act_idx], act_idx // N_LOCI, B)

        t = ppooled
        for i in range(1, len(TRUNK_WIDTHS) + 1):
            t, caches[f"trunk{i}"] = dense_forward(L[f"trunk{i}"], t)
        pmix_z = t @ L["profile_mix"].weights + L["profile_mix"].bias
        pmix = softmax(pmix_z)
        noc_z = t @ L["noc"].weights + L["noc"].bias
        noc_logp = log_softmax(noc_z)
        noc = np.exp(noc_logp)

        out = Outputs(prop, cnt, lmix, lcnt, pmix, noc, active)
        if not keep:
            return out, None
        state = dict(caches=caches, h3=h3, g3=g3, t=t, act_idx=act_idx,
                     cnt_logp=cnt_logp, lcnt_logp=lcnt_logp, noc_logp=noc_logp)
        return out, state

    def forward(self, batch: Batch) -> Outputs:
        return self._forward(batch, keep=False)[0]

    def predict_dense(self, tensor: np.ndarray) -> tuple[np.ndarray, ...]:
        """Six outputs for one dense [24, 50, 89] tensor, in label layout."""
        tensor = np.asarray(tensor)
        if tensor.shape != (N_LOCI, MAX_PEAKS, N_FEATURES):
            raise ValueError(f"expected [24, 50, 89] input, got {tensor.shape}")
        batch = batch_from_dense(tensor[None], dtype=self.dtype)
        return self.forward(batch).dense(batch)[0]

    def activation_pattern(self, batch: Batch) -> list[np.ndarray]:
        """ReLU signs and pooling argmax positions; constant within a linear piece."""
        _, st = self._forward(batch, keep=True)
        pat = []
        for name, cache in st["caches"].items():
            if name.endswith("_pool"):
                pat.append(segment_argmax_pattern(cache))
            elif self.layers[name].activation == "relu":
                pat.append(cache[1] > 0)
        return pat

    def loss_and_grads(self, batch: Batch, loss_weights: LossWeights | None = None,
                       need_grads: bool = True):
        out, st = self._forward(batch, keep=True)
        loss, terms, g = total_loss(out, batch, loss_weights, st)
        if not need_grads:
            return loss, None
        return loss, self._backward(batch, out, st, g)

    def _backward(self, batch: Batch, out: Outputs, st: dict, g: dict) -> dict[str, np.ndarray]:
        L = self.layers
        caches = st["caches"]
        grads: dict[str, np.ndarray] = {}

        def head_grads(name, x, dz):
            grads[f"{name}.W"] = x.T @ dz
            grads[f"{name}.b"] = dz.sum(axis=0)
            return dz @ L[name].weights.T

        # profile level
        t = st["t"]
        dt = head_grads("noc", t, g["noc_z"])
        dt = dt + head_grads("profile_mix", t, softmax_backward(out.profile_mix, g["pmix"]))
        for i in range(len(TRUNK_WIDTHS), 0, -1):
            name = f"trunk{i}"
            dt, grads[f"{name}.W"], grads[f"{name}.b"] = dense_backward(L[name], caches[name], dt)

        # locus level
        act_idx = st["act_idx"]
        d_lm_act = segment_pool_backward(caches["locus_pool"], dt)
        d_lm = np.zeros((batch.n_slots, PEAK_WIDTH), dtype=self.dtype)
        d_lm[act_idx] = d_lm_act
        d_lin, grads["locus_merge.W"], grads["locus_merge.b"] = dense_backward(
            L["locus_merge"], caches["locus_merge"], d_lm)
        g3 = st["g3"]
        w3 = LOCUS_WIDTHS[-1]
        dg3 = d_lin[:, :w3]
        d_lmix = g["lmix"]
        d_lcnt_z = g["lcnt_z"]
        if self.feedback:
            d_lmix = d_lmix + d_lin[:, w3:w3 + N_DONORS]
            d_lcnt_z = d_lcnt_z + softmax_backward(out.locus_count, d_lin[:, w3 + N_DONORS:])
        dg3 = dg3 + head_grads("locus_mix", g3, softmax_backward(out.locus_mix, d_lmix))
        dg3 = dg3 + head_grads("locus_count", g3, d_lcnt_z)
        dg = dg3
        for name in ("locus3", "locus2", "locus1"):
            dg, grads[f"{name}.W"], grads[f"{name}.b"] = dense_backward(L[name], caches[name], dg)

        # peak level
        dm = segment_pool_backward(caches["peak_pool"], dg)
        d_min, grads["peak_merge.W"], grads["peak_merge.b"] = dense_backward(
            L["peak_merge"], caches["peak_merge"], dm)
        h3 = st["h3"]
        dh3 = d_min[:, :PEAK_WIDTH]
        d_prop = g["prop"]
        d_cnt_z = g["cnt_z"]
        if self.feedback:
            d_prop = d_prop + d_min[:, PEAK_WIDTH]
            d_cnt_z = d_cnt_z + softmax_backward(out.count, d_min[:, PEAK_WIDTH + 1:])
        d_prop_z = (d_prop * out.prop * (1 - out.prop))[:, None]
        dh3 = dh3 + head_grads("peak_prop", h3, d_prop_z)
        dh3 = dh3 + head_grads("peak_count", h3, d_cnt_z)
        dh = dh3
        for name in ("peak3", "peak2", "peak1"):
            dh, grads[f"{name}.W"], grads[f"{name}.b"] = dense_backward(L[name], caches[name], dh)
        return grads


def build_model(seed: int = 0, feedback: bool = True, dtype=np.float32) -> DeepNoCModel:
    """Deterministically initialised model (Glorot-uniform weights, zero biases)."""
    rng = np.random.default_rng(seed)
    layers = {}
    for name, n_in, n_out, act in _layer_plan(feedback):
        layers[name] = init_dense(rng, n_in, n_out, act, np.float64).astype(dtype)
    return DeepNoCModel(layers, seed=seed, feedback=feedback)


# --------------------------------------------------------------------------
# loss


def _masked_ce(logp: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Mean CE over rows where ``mask``; returns (loss, grad wrt logits)."""
    dz = np.zeros_like(logp)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return 0.0, dz
    tgt = target[rows]
    loss = -logp[rows, tgt].sum() / rows.size
    p = np.exp(logp[rows])
    p[np.arange(rows.size), tgt] -= 1
    dz[rows] = p / rows.size
    return float(loss), dz


def _masked_mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray):
    grad = np.zeros_like(pred)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return 0.0, grad
    diff = pred[rows] - target[rows]
    n = diff.size
    grad[rows] = 2 * diff / n
    return float(np.sum(diff * diff) / n), grad


def total_loss(out: Outputs, batch: Batch, loss_weights: LossWeights | None = None,
               state: dict | None = None):
    """Weighted sum of the six head losses.

    MSE for the allelic proportion and both mixture outputs, categorical
    cross-entropy for the three count/NoC outputs; every term is averaged over
    active positions only. Returns ``(loss, terms, grads)``; ``grads`` holds
    loss gradients w.r.t. head outputs (MSE heads) or logits (CE heads).
    """
    if not batch.has_labels:
        raise ValueError("batch carries no labels")
    w = (loss_weights or LossWeights()).as_tuple()
    if out.noc.shape != (batch.n_profiles, N_DONORS):
        raise ValueError("output / label shape mismatch")
    if state is None:
        cnt_logp = np.log(np.maximum(out.count, np.finfo(out.count.dtype).tiny))
        lcnt_logp = np.log(np.maximum(out.locus_count, np.finfo(out.locus_count.dtype).tiny))
        noc_logp = np.log(np.maximum(out.noc, np.finfo(out.noc.dtype).tiny))
    else:
        cnt_logp, lcnt_logp, noc_logp = state["cnt_logp"], state["lcnt_logp"], state["noc_logp"]

    peak_mask = np.ones(len(out.prop), dtype=bool)
    count_mask = batch.count >= 0
    l1, g1 = _masked_mse(out.prop, batch.prop, peak_mask)
    l2, g2 = _masked_ce(cnt_logp, np.maximum(batch.count, 0), count_mask)
    l3, g3 = _masked_mse(out.locus_mix, batch.locus_mix, out.locus_active)
    l4, g4 = _masked_ce(lcnt_logp, batch.locus_count, out.locus_active)
    l5, g5 = _masked_mse(out.profile_mix, batch.profile_mix, np.ones(batch.n_profiles, dtype=bool))
    l6, g6 = _masked_ce(noc_logp, batch.noc - 1, np.ones(batch.n_profiles, dtype=bool))
    terms = (l1, l2, l3, l4, l5, l6)
    loss = float(sum(wi * li for wi, li in zip(w, terms)))
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    grads = {
        "prop": w[0] * g1,
        "cnt_z": w[1] * g2,
        "lmix": w[2] * g3,
        "lcnt_z": w[3] * g4,
        "pmix": w[4] * g5,
        "noc_z": w[5] * g6,
    }
    return loss, terms, grads


# --------------------------------------------------------------------------
# persistence


WEIGHTS_MAGIC = b"DNOCW1"
WEIGHTS_VERSION = 1
_ACT_CODES = {a: i for i, a in enumerate(ACTIVATIONS)}


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.off, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ModelFormatError(f"{self.path}: truncated weight file")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def save_weights(model: DeepNoCModel, path: str | Path, optimizer=None, card: dict | None = None) -> Path:
    """Write the binary weight file (float32 little-endian) and a JSON model card."""
    path = Path(path)
    parts = [WEIGHTS_MAGIC, struct.pack("<III", WEIGHTS_VERSION, int(model.feedback), len(model.layers))]
    for name, layer in model.layers.items():
        parts.append(_pack_str(name))
        parts.append(struct.pack("<III", layer.n_in, layer.n_out, _ACT_CODES[layer.activation]))
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    if optimizer is not None and optimizer.m:
        parts.append(struct.pack("<I", 1))
        parts.append(struct.pack("<ffffI", optimizer.lr, optimizer.beta1, optimizer.beta2,
                                 optimizer.epsilon, optimizer.t))
        names = sorted(optimizer.m)
        parts.append(struct.pack("<I", len(names)))
        for n in names:
            parts.append(_pack_str(n))
            parts.append(struct.pack("<I", optimizer.m[n].size))
            parts.append(np.ascontiguousarray(optimizer.m[n], dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(optimizer.v[n], dtype="<f4").tobytes())
    else:
        parts.append(struct.pack("<I", 0))
    path.write_bytes(b"".join(parts))

    info = {
        "seed": model.seed,
        "feedback": model.feedback,
        "main_branch_depth": model.main_branch_depth,
        "n_parameters": model.n_parameters(),
        "layers": [{"name": n, "in": i, "out": o, "activation": a} for n, i, o, a in model.layer_dims()],
    }
    info.update(model.meta)
    if card:
        info.update(card)
    card_path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def card_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_weights(path: str | Path, with_optimizer: bool = False):
    from .nn import AdamState

    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(len(WEIGHTS_MAGIC)) != WEIGHTS_MAGIC:
        raise ModelFormatError(f"{path}: not a weight file (bad magic)")
    version = r.u32()
    if version != WEIGHTS_VERSION:
        raise ModelFormatError(f"{path}: unsupported weight file version {version}")
    feedback = bool(r.u32())
    n_layers = r.u32()
    plan = _layer_plan(feedback)
    if n_layers != len(plan):
        raise ModelFormatError(f"{path}: {n_layers} layers, architecture has {len(plan)}")
    layers = {}
    for name, n_in, n_out, act in plan:
        got = r.string()
        i, o, code = r.u32(), r.u32(), r.u32()
        if got != name or (i, o) != (n_in, n_out) or code != _ACT_CODES[act]:
            raise ModelFormatError(
                f"{path}: layer {got} is {i}x{o}, architecture expects {name} {n_in}x{n_out}")
        w = r.floats(i * o).reshape(i, o)
        b = r.floats(o)
        layers[name] = DenseLayer(w.copy(), b.copy(), act)
    opt = None
    if r.u32() == 1:
        lr, b1, b2, eps, t = struct.unpack("<ffffI", r.take(20))
        opt = AdamState(lr=float(np.float32(lr)), beta1=float(np.float32(b1)),
                        beta2=float(np.float32(b2)), epsilon=float(np.float32(eps)), t=t)
        shapes = {f"{n}.{k}": (l.weights.shape if k == "W" else l.bias.shape)
                  for n, l in layers.items() for k in ("W", "b")}
        for _ in range(r.u32()):
            n = r.string()
            size = r.u32()
            if n not in shapes:
                raise ModelFormatError(f"{path}: optimizer state for unknown block {n}")
            opt.m[n] = r.floats(size).reshape(shapes[n]).copy()
            opt.v[n] = r.floats(size).reshape(shapes[n]).copy()
    seed = 0
    cp = card_path(path)
    meta = {}
    if cp.exists():
        meta = json.loads(cp.read_text(encoding="utf-8"))
        seed = int(meta.get("seed", 0))
    model = DeepNoCModel(layers, seed=seed, feedback=feedback)
    if with_optimizer:
        return model, opt
    return model
