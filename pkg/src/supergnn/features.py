"""Feature directions: class centroids and logistic-probe normals."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from supergnn.errors import SingleClass, WrongDataset
from supergnn.graphgen import Dataset, cycle_membership, has_cycle

AUC_THRESHOLD = 0.60
RECALL_IN_CLASS = 0.5
RECALL_OFF_CLASS = 0.5
PROBE_L2 = 1e-4

NODE_FAMILIES = ("Is", "NextTo", "Inside")
GRAPH_FAMILIES = ("Has",)


@dataclass(frozen=True)
class ConceptSpec:
    """``Is``/``NextTo`` take a node type; ``Inside``/``Has`` take a cycle length."""

    family: str
    param: int

    @property
    def level(self) -> str:
        return "graph" if self.family in GRAPH_FAMILIES else "node"

    def validate(self, data: Dataset) -> None:
        if self.family in ("Is", "NextTo"):
            if data.family != "pairwise":
                raise WrongDataset(f"{self.family} concepts need a PAIRWISE dataset")
            k = data.feature_dim
            if not 0 <= self.param < k:
                raise ValueError(f"type {self.param} outside 0..{k - 1}")
        elif self.family in ("Inside", "Has"):
            if data.family != "conjunction":
                raise WrongDataset(f"{self.family} concepts need a CONJUNCTION dataset")
            if not 3 <= self.param <= 6:
                raise ValueError("cycle length must be in 3..6")
        else:
            raise ValueError(f"unknown concept family {self.family!r}")


def concept_targets(data: Dataset, spec: ConceptSpec, split: str = "all") -> np.ndarray:
    """Binary targets: one per node (node concepts, graphs concatenated) or per graph."""
    spec.validate(data)
    graphs = data.subset(split)
    if spec.family == "Has":
        return np.array([int(has_cycle(g, spec.param)) for g in graphs], dtype=np.int64)
    out = []
    for g in graphs:
        if spec.family == "Inside":
            out.append(cycle_membership(g, (spec.param,))[spec.param].astype(np.int64))
            continue
        is_t = np.array([t == spec.param for t in g.node_types], dtype=bool)
        if spec.family == "Is":
            out.append(is_t.astype(np.int64))
        else:
            near = np.zeros(g.num_nodes, dtype=bool)
            for u, v in g.edges:
                near[u] |= is_t[v]
                near[v] |= is_t[u]
            out.append(near.astype(np.int64))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counting one half.

    Computed exactly from mid-ranks (Mann-Whitney U), equivalent to the full
    pairwise comparison.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    # mid-ranks for tied blocks
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [scores.size]])
    mid = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(mid, ends - starts)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class ProbeResult:
    normal: np.ndarray
    intercept: float
    auc: float
    iterations: int = 0

    @property
    def unit_normal(self) -> np.ndarray:
        n = np.linalg.norm(self.normal)
        return self.normal / n if n > 0 else self.normal


def _logistic_newton(x: np.ndarray, y: np.ndarray, l2: float, tol: float = 1e-8,
                     max_iter: int = 100) -> tuple[np.ndarray, float, int]:
    """Minimise mean logistic loss + l2/2 |w|^2 by damped Newton steps."""
    n, d = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0

    def objective(t):
        z = xa @ t
        return np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (t[:-1] @ t[:-1])

    f = objective(theta)
    for it in range(1, max_iter + 1):
        z = xa @ theta
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        grad = xa.T @ (p - y) / n + reg * theta
        if np.linalg.norm(grad) <= tol:
            return theta[:-1], float(theta[-1]), it - 1
        weights = p * (1.0 - p)
        hess = (xa * weights[:, None]).T @ xa / n + np.diag(reg + 1e-12)
        step = np.linalg.solve(hess, grad)
        slope = grad @ step
        t = 1.0
        while True:
            candidate = theta - t * step
            fc = objective(candidate)
            if fc <= f - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if fc > f:
            break
        theta, f = candidate, fc
    return theta[:-1], float(theta[-1]), max_iter


def fit_probe(z, y, train_idx, test_idx, l2: float = PROBE_L2) -> ProbeResult:
    """Logistic probe fitted on ``train_idx`` rows, AUC scored on ``test_idx`` rows.

    Raises:
        SingleClass: either split lacks a class.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    train_idx = np.asarray(train_idx)
    test_idx = np.asarray(test_idx)
    ytr = y[train_idx]
    if ytr.min() == ytr.max():
        raise SingleClass("probe train split has a single class")
    yte = y[test_idx]
    if yte.size == 0 or yte.min() == yte.max():
        raise SingleClass("probe test split has a single class")
    w, b, iters = _logistic_newton(z[train_idx], ytr, l2)
    score = auc(z[test_idx] @ w + b, yte)
    return ProbeResult(w, b, score, iters)


@dataclass
class FeatureMatrix:
    """Stacked feature directions for the active concepts/classes.

    ``raw`` keeps the unnormalised vectors (centroids need them for centring);
    ``rows`` is the unit-normalised view.
    """

    raw: np.ndarray
    kind: str
    level: str
    active_ids: list[int]
    scores: list[float] = field(default_factory=list)
    provenance: str = ""

    @property
    def rows(self) -> np.ndarray:
        norms = np.linalg.norm(self.raw, axis=1, keepdims=True)
        return np.divide(self.raw, norms, out=np.zeros_like(self.raw), where=norms > 0)

    @property
    def k_a(self) -> int:
        return len(self.active_ids)

    @property
    def geometry_kind(self) -> str:
        if self.kind == "centroid":
            return "centroid"
        return "node_probe" if self.level == "node" else "graph_probe"

    def to_csv(self, path: str | Path) -> None:
        d = self.raw.shape[1] if self.raw.ndim == 2 else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "level", "concept_id", "auc_or_recall"]
                            + [f"u{j}" for j in range(d)])
            for i, cid in enumerate(self.active_ids):
                score = self.scores[i] if i < len(self.scores) else math.nan
                writer.writerow([self.kind, self.level, cid, repr(float(score))]
                                + [repr(float(v)) for v in self.rows[i]])


def active_classes(recall: np.ndarray) -> list[int]:
    """Classes with in-class recall >= 0.5 and every off-class recall < 0.5.

    Rows that are NaN (no one-hot exemplars) are never active.
    """
    active = []
    for c in range(recall.shape[0]):
        row = recall[c]
        if np.isnan(row).any():
            continue
        off = np.delete(row, c)
        if row[c] >= RECALL_IN_CLASS and (off < RECALL_OFF_CLASS).all():
            active.append(c)
    return active


def one_hot_classes(labels: np.ndarray) -> np.ndarray:
    """Class index for rows that are exactly one-hot, else -1."""
    labels = np.asarray(labels)
    single = labels.sum(axis=1) == 1
    return np.where(single, labels.argmax(axis=1), -1)


def class_centroids(h, labels, recall: np.ndarray, provenance: str = "") -> FeatureMatrix:
    """Mean embedding over one-hot exemplars of each active class."""
    h = np.asarray(h, dtype=np.float64)
    cls = one_hot_classes(labels)
    rows, ids, scores = [], [], []
    for c in active_classes(recall):
        members = cls == c
        if not members.any():
            continue
        rows.append(h[members].mean(axis=0))
        ids.append(c)
        scores.append(float(recall[c, c]))
    raw = np.vstack(rows) if rows else np.zeros((0, h.shape[1]))
    return FeatureMatrix(raw, "centroid", "graph", ids, scores, provenance)


def probe_feature_matrix(probes: Sequence[ProbeResult | None], threshold: float = AUC_THRESHOLD,
                         level: str = "node", ids: Sequence[int] | None = None,
                         provenance: str = "") -> FeatureMatrix:
    """Unit probe normals with held-out AUC >= threshold; ``None`` entries are inactive."""
    ids = list(range(len(probes))) if ids is None else list(ids)
    keep = [(i, p) for i, p in zip(ids, probes) if p is not None and p.auc >= threshold]
    dim = next((p.normal.size for p in probes if p is not None), 0)
    raw = np.vstack([p.unit_normal for _, p in keep]) if keep else np.zeros((0, dim))
    return FeatureMatrix(raw, "probe", level, [i for i, _ in keep], [p.auc for _, p in keep],
                         provenance)
