"""Dataset splitting, mini-batch training, fine-tuning and learning curves."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .encoder import build_labels, encode_compact, filter_artefact_peaks
from .kit import KitConfig
from .model import (
    DeepNoCModel,
    EncodedRecord,
    LossWeights,
    make_batch,
    save_weights,
    total_loss,
)
from .nn import AdamState, NumericalError, adam_step
from .simulator import SimParams, SimulatedProfile

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 200
    split: float = 0.9
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    deterministic: bool = False
    checkpoint_every: int = 0
    lr: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.split < 1:
            raise ValueError("split must lie strictly between 0 and 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if isinstance(self.loss_weights, (list, tuple)):
            self.loss_weights = LossWeights.from_sequence(self.loss_weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights.as_tuple())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights.from_sequence(d["loss_weights"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float | None
    wall_time: float | None    # None in deterministic mode so histories are reproducible
    steps: int


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def train_loss(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def train_accuracy(self) -> list[float]:
        return [e.train_accuracy for e in self.epochs]

    @property
    def test_accuracy(self) -> list[float | None]:
        return [e.test_accuracy for e in self.epochs]

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls([EpochRecord(**e) for e in d["epochs"]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# data preparation


def encode_records(profiles: Sequence[SimulatedProfile], kit: KitConfig,
                   sim_params: SimParams | None = None, threshold: float = 0.97,
                   dtype=np.float32) -> list[EncodedRecord]:
    """Artefact-filter, encode and label profiles into compact training records."""
    out = []
    for p in profiles:
        f = filter_artefact_peaks(p, threshold)
        out.append(EncodedRecord.from_arrays(encode_compact(f, kit, sim_params, dtype), build_labels(f)))
    return out


def split_dataset(dataset: Sequence, mode: str = "random_fraction", fraction: float = 0.9,
                  seed: int = 0) -> tuple[list, list]:
    """``random_fraction``: seeded shuffle then cut; ``alternating``: even indices train."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if mode == "alternating":
        return [dataset[i] for i in range(0, n, 2)], [dataset[i] for i in range(1, n, 2)]
    if mode != "random_fraction":
        raise ValueError(f"unknown split mode {mode!r}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    return [dataset[i] for i in perm[:n_train]], [dataset[i] for i in perm[n_train:]]


# --------------------------------------------------------------------------
# training


def predict_proba(model: DeepNoCModel, records: Sequence[EncodedRecord], batch_size: int = 100) -> np.ndarray:
    """NoC probabilities ``[n, 10]`` in inference mode."""
    out = []
    for s in range(0, len(records), batch_size):
        batch = make_batch(records[s:s + batch_size], model.dtype)
        out.append(model.forward(batch).noc)
    if not out:
        return np.zeros((0, 10))
    return np.concatenate(out).astype(np.float64)


def noc_from_proba(probs: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lower NoC
    return np.argmax(probs, axis=1) + 1


def accuracy(model: DeepNoCModel, records: Sequence[EncodedRecord], batch_size: int = 100) -> float:
    if not records:
        return float("nan")
    pred = noc_from_proba(predict_proba(model, records, batch_size))
    truth = np.array([r.noc for r in records])
    return float(np.mean(pred == truth))


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def train(model: DeepNoCModel, train_set: Sequence[EncodedRecord], test_set: Sequence[EncodedRecord],
          cfg: TrainConfig, checkpoint_dir: str | Path | None = None,
          optimizer: AdamState | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None):
    """Mini-batch Adam training; returns ``(history, model, optimizer)``.

    The training set is reshuffled every epoch from ``cfg.seed``; the last
    partial batch is kept. Train metrics are accumulated over the epoch's
    batches; test accuracy is measured after the epoch in inference mode.
    """
    if not train_set:
        raise ValueError("empty training set")
    opt = optimizer or AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    params = model.params()
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best, stale = -1.0, 0
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        loss_sum, correct, steps = 0.0, 0, 0
        for bi, s in enumerate(range(0, n, cfg.batch_size)):
            recs = [train_set[i] for i in perm[s:s + cfg.batch_size]]
            batch = make_batch(recs, model.dtype)
            out, st = model._forward(batch, keep=True)
            try:
                loss, _, g = total_loss(out, batch, cfg.loss_weights, st)
                grads = model._backward(batch, out, st, g)
                adam_step(opt, params, grads)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            loss_sum += loss * len(recs)
            correct += int(np.sum(np.argmax(out.noc, axis=1) + 1 == batch.noc))
            steps += 1
        test_acc = accuracy(model, test_set, cfg.batch_size) if test_set else None
        elapsed = None if cfg.deterministic else time.perf_counter() - t0
        rec = EpochRecord(epoch, loss_sum / n, correct / n, test_acc, elapsed, steps)
        history.epochs.append(rec)
        log.info("epoch %d loss %.5f train_acc %.4f test_acc %s", epoch, rec.train_loss,
                 rec.train_accuracy, "n/a" if test_acc is None else f"{test_acc:.4f}")
        if on_epoch is not None:
            on_epoch(rec)
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            d = Path(checkpoint_dir)
            d.mkdir(parents=True, exist_ok=True)
            save_weights(model, d / f"epoch{epoch:04d}.dnocw", optimizer=opt,
                         card={"train_config": cfg.to_dict(), "epoch": epoch})
            history.save(d / f"epoch{epoch:04d}.history.json")
        if cfg.patience is not None and test_acc is not None:
            if test_acc > best:
                best, stale = test_acc, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop after %d epochs without improvement", stale)
                    break
    return history, model, opt


# --------------------------------------------------------------------------
# fine-tuning


def pseudo_label(model: DeepNoCModel, records: Sequence[EncodedRecord],
                 batch_size: int = 100) -> list[EncodedRecord]:
    """Replace each record's allelic-proportion labels with the model's predictions."""
    out = []
    for s in range(0, len(records), batch_size):
        chunk = list(records[s:s + batch_size])
        batch = make_batch(chunk, model.dtype)
        pred = model.forward(batch).prop
        b_of = batch.slot // 24
        for b, r in enumerate(chunk):
            sel = b_of == b
            # make_batch keeps each record's rows in (locus, pos) order
            out.append(replace(r, prop=pred[sel].astype(np.float64)))
    return out


def fine_tune(model: DeepNoCModel, lab_records: Sequence[EncodedRecord], cfg: TrainConfig | None = None,
              checkpoint_dir: str | Path | None = None, on_epoch=None):
    """Pseudo-label, alternate-split and train on laboratory profiles.

    Returns ``(history, model, (train, test))``.
    """
    cfg = cfg or TrainConfig(epochs=2000)
    labelled = pseudo_label(model, lab_records, cfg.batch_size)
    train_set, test_set = split_dataset(labelled, mode="alternating")
    history, model, _ = train(model, train_set, test_set, cfg, checkpoint_dir, on_epoch=on_epoch)
    return history, model, (train_set, test_set)


# --------------------------------------------------------------------------
# learning curve


def learning_curve(model_builder: Callable[[], DeepNoCModel], train_set: Sequence[EncodedRecord],
                   test_set: Sequence[EncodedRecord], sizes: Sequence[int],
                   cfg: TrainConfig) -> list[tuple[int, float]]:
    """Train a fresh model on each prefix size of the shuffled train set."""
    if any(s > len(train_set) for s in sizes):
        raise ValueError(f"size exceeds available training data ({len(train_set)})")
    perm = np.random.default_rng(cfg.seed).permutation(len(train_set))
    shuffled = [train_set[i] for i in perm]
    table = []
    for size in sizes:
        model = model_builder()
        train(model, shuffled[:size], [], cfg)
        table.append((int(size), accuracy(model, test_set, cfg.batch_size)))
    return table
