"""PAIRWISE and CONJUNCTION synthetic graph datasets.

Randomness: every graph ``i`` of a dataset generated with seed ``s`` draws
from its own PCG64 stream, ``np.random.Generator(np.random.PCG64(
np.random.SeedSequence(s, spawn_key=(i,))))``. Graphs can therefore be
generated independently and in any order. The first
``round(train_fraction * num_graphs)`` graphs form the train split.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from supergnn.errors import ConfigError, GenerationExhausted

MOTIF_LENGTHS = (3, 4, 5, 6)
CONJUNCTIONS = {"A": (3, 6), "B": (4, 5)}
MAX_ATTEMPTS = 100

# motif sets that satisfy neither conjunction (the empty set becomes a small tree)
NEGATIVE_MOTIF_SETS: tuple[tuple[int, ...], ...] = (
    (),
    (3,), (4,), (5,), (6,),
    (3, 4), (3, 5), (4, 6), (5, 6),
)


@dataclass(eq=False)
class Graph:
    """An undirected graph with node features and graph-level multi-hot labels.

    ``edges`` is an ``(E, 2)`` int array with ``u < v`` on every row, sorted.
    ``node_types`` holds a type id per node (``None`` for typeless nodes) and is
    only set for PAIRWISE graphs.
    """

    num_nodes: int
    edges: np.ndarray
    node_features: np.ndarray
    labels: np.ndarray
    node_types: tuple | None = None
    id: int = 0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            adj[u].append(int(v))
            adj[v].append(int(u))
        for row in adj:
            row.sort()
        return adj

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes).astype(np.float64)


def make_graph(num_nodes: int, edge_pairs, features, labels, node_types=None, id: int = 0) -> Graph:
    """Build a Graph, canonicalising edges and rejecting self-loops/duplicates."""
    pairs = set()
    for u, v in edge_pairs:
        u, v = int(u), int(v)
        if u == v:
            raise ValueError(f"self-loop at node {u}")
        key = (min(u, v), max(u, v))
        if key in pairs:
            raise ValueError(f"duplicate edge {key}")
        pairs.add(key)
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return Graph(num_nodes, edges, features, labels, node_types, id)


@dataclass(frozen=True)
class PairwiseConfig:
    num_types: int = 16
    chain_length: int = 12
    activation_prob: float = 0.5
    num_graphs: int = 2000
    train_fraction: float = 0.8

    def validate(self) -> None:
        if not 0 < self.activation_prob <= 1:
            raise ConfigError("activation_prob must lie in (0, 1]")
        if self.chain_length < 2:
            raise ConfigError("chain_length must be >= 2")
        if self.num_types < 1 or self.num_graphs < 1:
            raise ConfigError("num_types and num_graphs must be positive")
        if not 0 <= self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class ConjunctionConfig:
    p_extra: float = 0.2
    num_graphs: int = 2000
    train_fraction: float = 0.8
    # proportions of (A-positive, B-positive, negative) graphs
    label_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    motif_lengths: tuple[int, ...] = MOTIF_LENGTHS

    def validate(self) -> None:
        if tuple(self.motif_lengths) != MOTIF_LENGTHS:
            raise ConfigError("motif lengths are fixed to (3, 4, 5, 6)")
        if not 0 <= self.p_extra < 1:
            raise ConfigError("p_extra must lie in [0, 1)")
        mix = np.asarray(self.label_mix, dtype=float)
        if mix.shape != (3,) or (mix < 0).any() or abs(mix.sum() - 1.0) > 1e-9:
            raise ConfigError("label_mix must be three non-negative proportions summing to 1")
        if self.num_graphs < 1 or not 0 <= self.train_fraction <= 1:
            raise ConfigError("invalid num_graphs or train_fraction")


@dataclass(eq=False)
class Dataset:
    graphs: list[Graph]
    split: list[str]
    seed: int
    family: str
    config: dict = field(default_factory=dict)

    def indices(self, split: str) -> list[int]:
        if split == "all":
            return list(range(len(self.graphs)))
        return [i for i, s in enumerate(self.split) if s == split]

    def subset(self, split: str) -> list[Graph]:
        return [self.graphs[i] for i in self.indices(split)]

    @property
    def num_classes(self) -> int:
        return int(self.graphs[0].labels.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.graphs[0].node_features.shape[1])


def graph_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _split_labels(n: int, train_fraction: float) -> list[str]:
    n_train = int(round(train_fraction * n))
    return ["train"] * n_train + ["test"] * (n - n_train)


# ---------------------------------------------------------------- PAIRWISE

def label_pairwise(node_types: Sequence, k: int) -> np.ndarray:
    """Multi-hot label: entry t is 1 iff two adjacent chain nodes both have type t."""
    y = np.zeros(k, dtype=np.int64)
    for a, b in zip(node_types[:-1], node_types[1:]):
        if a is not None and a == b:
            y[a] = 1
    return y


def _pairwise_graph(cfg: PairwiseConfig, seed: int, index: int) -> Graph:
    rng = graph_rng(seed, index)
    n, k = cfg.chain_length, cfg.num_types
    active = rng.random(n) < cfg.activation_prob
    types = rng.integers(0, k, size=n)
    node_types = tuple(int(t) if a else None for a, t in zip(active, types))
    x = np.zeros((n, k))
    for i, t in enumerate(node_types):
        if t is not None:
            x[i, t] = 1.0
    edges = [(i, i + 1) for i in range(n - 1)]
    return make_graph(n, edges, x, label_pairwise(node_types, k), node_types, index)


def gen_pairwise(cfg: PairwiseConfig, seed: int) -> Dataset:
    cfg.validate()
    graphs = [_pairwise_graph(cfg, seed, i) for i in range(cfg.num_graphs)]
    return Dataset(graphs, _split_labels(cfg.num_graphs, cfg.train_fraction), seed,
                   "pairwise", asdict(cfg))


# ------------------------------------------------------------- cycle oracles

def _cycles_of_length(adj: list[list[int]], length: int, start: int | None = None,
                      first_only: bool = False):
    """Yield simple cycles with exactly ``length`` vertices as vertex tuples.

    Without ``start`` each cycle is reported once, rooted at its smallest
    vertex. With ``start`` only cycles through that vertex are searched.
    """
    n = len(adj)
    roots = range(n) if start is None else (start,)
    for s in roots:
        floor = s if start is None else -1
        path = [s]
        on_path = {s}
        stack = [iter(adj[s])]
        while stack:
            advanced = False
            for v in stack[-1]:
                if v <= floor or v in on_path:
                    continue
                if len(path) == length - 1:
                    if s in adj[v] and (start is not None or path[1] < v):
                        yield tuple(path) + (v,)
                        if first_only:
                            return
                    continue
                path.append(v)
                on_path.add(v)
                stack.append(iter(adj[v]))
                advanced = True
                break
            if not advanced:
                stack.pop()
                on_path.discard(path.pop())


def has_cycle(g: Graph, length: int) -> bool:
    """True iff ``g`` has a simple cycle of exactly ``length`` vertices (3..6)."""
    if not 3 <= length <= 6:
        raise ValueError("cycle length must be in 3..6")
    return next(_cycles_of_length(g.neighbors(), length, first_only=True), None) is not None


def node_in_cycle(g: Graph, node: int, length: int) -> bool:
    if not 3 <= length <= 6:
        raise ValueError("cycle length must be in 3..6")
    adj = g.neighbors()
    return next(_cycles_of_length(adj, length, start=node, first_only=True), None) is not None


def cycle_membership(g: Graph, lengths=MOTIF_LENGTHS) -> dict[int, np.ndarray]:
    """Per length, a boolean mask of nodes lying on some simple cycle of that length."""
    adj = g.neighbors()
    out = {}
    for length in lengths:
        mask = np.zeros(g.num_nodes, dtype=bool)
        for cyc in _cycles_of_length(adj, length):
            mask[list(cyc)] = True
        out[length] = mask
    return out


def conjunction_labels(present: dict[int, bool]) -> np.ndarray:
    return np.array([int(all(present[l] for l in CONJUNCTIONS[name])) for name in ("A", "B")],
                    dtype=np.int64)


# ------------------------------------------------------------ CONJUNCTION

def _assemble(motifs: list[int], rng: np.random.Generator) -> tuple[int, list[tuple[int, int]]]:
    """Disjoint cycles (or a small tree when empty) joined by spanning-tree bridges."""
    components: list[list[int]] = []
    edges: list[tuple[int, int]] = []
    n = 0
    if not motifs:
        size = int(rng.integers(3, 7))
        nodes = list(range(size))
        for v in nodes[1:]:
            edges.append((int(rng.integers(0, v)), v))
        return size, edges
    for length in motifs:
        nodes = list(range(n, n + length))
        edges.extend((nodes[i], nodes[(i + 1) % length]) for i in range(length))
        components.append(nodes)
        n += length
    for c in range(1, len(components)):
        parent = components[int(rng.integers(0, c))]
        child = components[c]
        edges.append((parent[int(rng.integers(0, len(parent)))],
                      child[int(rng.integers(0, len(child)))]))
    return n, edges


def _conjunction_graph(cfg: ConjunctionConfig, seed: int, index: int) -> Graph:
    rng = graph_rng(seed, index)
    cls = int(np.searchsorted(np.cumsum(cfg.label_mix), rng.random(), side="right"))
    cls = min(cls, 2)
    target = np.array([int(cls == 0), int(cls == 1)], dtype=np.int64)
    for _ in range(MAX_ATTEMPTS):
        if cls == 0:
            motifs = list(CONJUNCTIONS["A"])
        elif cls == 1:
            motifs = list(CONJUNCTIONS["B"])
        else:
            motifs = list(NEGATIVE_MOTIF_SETS[int(rng.integers(0, len(NEGATIVE_MOTIF_SETS)))])
        for length in MOTIF_LENGTHS:
            if rng.random() < cfg.p_extra:
                motifs.append(length)
        n, edges = _assemble(motifs, rng)
        perm = rng.permutation(n)
        edges = [(int(perm[u]), int(perm[v])) for u, v in edges]
        probe = make_graph(n, edges, np.zeros((n, 1)), target, None, index)
        present = {l: has_cycle(probe, l) for l in MOTIF_LENGTHS}
        if any(present[l] != (l in motifs) for l in MOTIF_LENGTHS):
            continue
        if not np.array_equal(conjunction_labels(present), target):
            continue
        probe.node_features = probe.degrees().reshape(-1, 1)
        return probe
    raise GenerationExhausted(f"graph {index}: no valid motif set after {MAX_ATTEMPTS} attempts")


def gen_conjunction(cfg: ConjunctionConfig, seed: int) -> Dataset:
    cfg.validate()
    graphs = [_conjunction_graph(cfg, seed, i) for i in range(cfg.num_graphs)]
    config = asdict(cfg)
    return Dataset(graphs, _split_labels(cfg.num_graphs, cfg.train_fraction), seed,
                   "conjunction", config)


# ------------------------------------------------------------ serialization

def graph_to_record(g: Graph, split: str) -> dict:
    rec = {
        "id": g.id,
        "num_nodes": g.num_nodes,
        "edges": g.edges.tolist(),
        "features": {"rows": int(g.node_features.shape[0]), "cols": int(g.node_features.shape[1]),
                     "data": g.node_features.ravel().tolist()},
        "labels": g.labels.tolist(),
        "split": split,
    }
    if g.node_types is not None:
        rec["node_types"] = list(g.node_types)
    return rec


def graph_from_record(rec: dict) -> Graph:
    feats = rec["features"]
    x = np.array(feats["data"], dtype=np.float64).reshape(feats["rows"], feats["cols"])
    types = tuple(rec["node_types"]) if "node_types" in rec else None
    return Graph(rec["num_nodes"], np.array(rec["edges"], dtype=np.int64).reshape(-1, 2), x,
                 np.array(rec["labels"], dtype=np.int64), types, rec["id"])


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write one JSON line per graph plus a ``<stem>.meta.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for g, s in zip(ds.graphs, ds.split):
            fh.write(json.dumps(graph_to_record(g, s)) + "\n")
    meta = {"family": ds.family, "seed": ds.seed, "config": ds.config}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    graphs, split = [], []
    with path.open() as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                graphs.append(graph_from_record(rec))
                split.append(rec["split"])
    meta_path = path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    family = meta.get("family") or ("pairwise" if graphs and graphs[0].node_types is not None
                                    else "conjunction")
    return Dataset(graphs, split, meta.get("seed", 0), family, meta.get("config", {}))
