"""Full-batch BCE training with Adam, evaluation and rank-tracking snapshots."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from supergnn import geometry
from supergnn.errors import ConfigError, NonFinite
from supergnn.features import class_centroids, one_hot_classes
from supergnn.graphgen import Dataset
from supergnn.model import GraphBatch, Model, forward_nodes
from supergnn.numerics import autodiff as ad


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 400
    seed: int = 0
    # 0 disables periodic snapshots; the final epoch is always snapshotted
    snapshot_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    snapshot_split: str = "test"

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")


def bce_with_logits(logits, targets) -> float:
    """Mean binary cross-entropy, stable for large |logit|."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError("logits and targets differ in shape")
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.value)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


@dataclass
class EvalResult:
    accuracy: float
    exact_match: float
    loss: float
    recall: np.ndarray
    predictions: np.ndarray

    @property
    def empty_classes(self) -> list[int]:
        return [c for c in range(self.recall.shape[0]) if np.isnan(self.recall[c]).all()]


def recall_matrix(labels: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    """Entry (l, j): share of exactly-one-hot class-l graphs predicted positive for j.

    Rows of classes without one-hot exemplars are NaN.
    """
    labels = np.asarray(labels)
    predictions = np.asarray(predictions, dtype=bool)
    k = labels.shape[1]
    cls = one_hot_classes(labels)
    out = np.full((k, k), np.nan)
    for c in range(k):
        members = cls == c
        if members.any():
            out[c] = predictions[members].mean(axis=0)
    return out


def summarize_logits(logits: np.ndarray, labels: np.ndarray) -> EvalResult:
    labels = np.asarray(labels)
    preds = logits > 0.0  # sigmoid(z) > 0.5
    correct = preds == labels.astype(bool)
    return EvalResult(
        accuracy=float(correct.mean()),
        exact_match=float(correct.all(axis=1).mean()),
        loss=bce_with_logits(logits, labels),
        recall=recall_matrix(labels, preds),
        predictions=preds,
    )


def _labels(data: Dataset, split: str) -> np.ndarray:
    return np.array([g.labels for g in data.subset(split)], dtype=np.float64)


def evaluate(model: Model, data: Dataset, split: str = "test",
             batch: GraphBatch | None = None) -> EvalResult:
    """Accuracy (per label), exact-match rate, mean BCE and recall matrix on a split."""
    batch = batch or GraphBatch.from_graphs(data.subset(split))
    _, _, logits = forward_nodes(model, batch)
    return summarize_logits(logits.value, _labels(data, split))


def snapshot_pooled(model: Model, data: Dataset, split: str = "test",
                    batch: GraphBatch | None = None) -> np.ndarray:
    """Pooled graph embeddings h_G (after the final activation), one row per graph."""
    batch = batch or GraphBatch.from_graphs(data.subset(split))
    _, pooled, _ = forward_nodes(model, batch)
    return pooled.value.copy()


@dataclass
class Snapshot:
    epoch: int
    sigma: list[float]
    k_a: int
    effrank: float
    si: float
    wno_i: float
    ai: float
    r_tau: int
    dead_columns: int

    def to_json(self) -> dict:
        return {k: _json_num(v) for k, v in asdict(self).items()}


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, list):
        return [_json_num(x) for x in v]
    return v


def centroid_snapshot(epoch: int, pooled: np.ndarray, labels: np.ndarray,
                      recall: np.ndarray) -> Snapshot:
    profile = geometry.numerical_rank(pooled)
    fm = class_centroids(pooled, labels, recall)
    rep = geometry.geometry_report(fm.raw, "centroid")
    return Snapshot(epoch, [float(s) for s in profile.sigma], fm.k_a, float(rep.effrank),
                    float(rep.si), float(rep.wno_i), float(rep.ai), profile.r_tau,
                    profile.dead_columns)


@dataclass
class RunRecord:
    epochs: list[dict] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)
    failed: bool = False
    failure: str = ""
    model: Model | None = field(default=None, repr=False)

    def final(self) -> dict:
        return self.epochs[-1]

    def lines(self) -> list[dict]:
        out = [{k: _json_num(v) for k, v in e.items()} for e in self.epochs]
        out += [s.to_json() for s in self.snapshots]
        if self.failed:
            out.append({"failed": True, "reason": self.failure})
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(line, sort_keys=True) + "\n" for line in self.lines())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


def _snapshot_due(epoch: int, cfg: TrainConfig) -> bool:
    if epoch == cfg.epochs:
        return True
    return cfg.snapshot_every > 0 and epoch % cfg.snapshot_every == 0


def train(model: Model, data: Dataset, cfg: TrainConfig) -> RunRecord:
    """Full-batch Adam on mean BCE for ``cfg.epochs`` updates.

    Losses and accuracies are recorded before the first update (epoch 0) and
    after every update. A non-finite loss or gradient ends the run and marks
    the record as failed instead of raising.
    """
    cfg.validate()
    if data.feature_dim != model.config.in_dim:
        raise ConfigError(f"dataset feature width {data.feature_dim} != model input "
                          f"{model.config.in_dim}")
    train_batch = GraphBatch.from_graphs(data.subset("train"))
    test_graphs = data.subset("test")
    test_batch = GraphBatch.from_graphs(test_graphs) if test_graphs else None
    y_train = _labels(data, "train")
    y_test = _labels(data, "test") if test_graphs else None
    snap_batch, y_snap = (test_batch, y_test) if cfg.snapshot_split == "test" else (train_batch, y_train)
    if snap_batch is None:
        snap_batch, y_snap = train_batch, y_train

    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    record = RunRecord(model=model)

    def observe(epoch: int, train_logits: np.ndarray):
        tr = summarize_logits(train_logits, y_train)
        row = {"epoch": epoch, "train_loss": tr.loss, "train_acc": tr.accuracy,
               "test_loss": math.nan, "test_acc": math.nan}
        te = None
        if test_batch is not None:
            _, te_pooled, te_logits = forward_nodes(model, test_batch)
            te = summarize_logits(te_logits.value, y_test)
            row["test_loss"], row["test_acc"] = te.loss, te.accuracy
        if not math.isfinite(row["train_loss"]):
            raise NonFinite(f"non-finite training loss at epoch {epoch}")
        record.epochs.append(row)
        if _snapshot_due(epoch, cfg):
            if snap_batch is test_batch and te is not None:
                pooled, recall = te_pooled.value, te.recall
            else:
                pooled, recall = snapshot_pooled(model, data, "train", train_batch), tr.recall
            record.snapshots.append(centroid_snapshot(epoch, pooled, y_snap, recall))

    try:
        for epoch in range(cfg.epochs + 1):
            _, _, logits = forward_nodes(model, train_batch)
            observe(epoch, logits.value)
            if epoch == cfg.epochs:
                break
            loss = ad.bce_with_logits(logits, y_train)
            grads = ad.backward(loss)
            opt.step(grads)
    except (NonFinite, FloatingPointError) as exc:
        record.failed = True
        record.failure = str(exc)
    return record
