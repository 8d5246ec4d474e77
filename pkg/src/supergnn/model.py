"""GCN / GIN / GATv2 message passing with a signed power-mean pooling family.

Layer conventions (``L`` = number of message-passing layers):

* GCN:   ``H' = Â (H W) + b`` with ``Â = D̂^-1/2 (A + I) D̂^-1/2``.
* GIN:   ``H' = MLP((A + I) H)``, MLP = Linear, activation, Linear (self weight 1, i.e. eps = 0).
* GATv2: single head, ``e_ij = a · LeakyReLU_0.2(W_s h_j + W_t h_i)`` softmaxed over
  the closed neighbourhood of ``i``; ``H'_i = Σ_j α_ij W_s h_j + b``.

A ReLU follows every layer except the last. The last layer output is pooled
per graph, passed through the final activation, then a linear readout.

With ``scope="local"`` the neighbour aggregation of the last layer is replaced
by the pooling operator over the closed neighbourhood (uniform weights for
GCN/GIN, attention weights for GATv2) and the global readout pool is the mean.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from supergnn.errors import ConfigError, NonFinite, ShapeMismatch
from supergnn.graphgen import Graph
from supergnn.numerics import autodiff as ad
from supergnn.numerics.autodiff import Node

ARCHS = ("GCN", "GIN", "GATV2")
POOL_KINDS = ("mean", "max", "power_mean")


@dataclass(frozen=True)
class PoolingSpec:
    kind: str = "mean"
    p: float = 1.0
    scope: str = "global"
    epsilon: float = 1e-6

    def validate(self) -> None:
        if self.kind not in POOL_KINDS:
            raise ConfigError(f"unknown pooling kind {self.kind!r}")
        if self.scope not in ("global", "local"):
            raise ConfigError(f"unknown pooling scope {self.scope!r}")
        if self.p < 1:
            raise ConfigError("power-mean exponent p must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "GCN"
    in_dim: int = 16
    layer_widths: tuple[int, ...] = (16, 16)
    num_outputs: int = 16
    pooling: PoolingSpec = field(default_factory=PoolingSpec)
    final_activation: str = "relu"
    leaky_slope: float = 0.01
    gin_hidden: int | None = None
    gin_activation: str = "relu"
    attention_slope: float = 0.2

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if not self.layer_widths or any(w < 1 for w in self.layer_widths):
            raise ConfigError("layer_widths must be a non-empty list of positive ints")
        if self.final_activation not in ("relu", "leaky_relu", "identity"):
            raise ConfigError(f"unknown final activation {self.final_activation!r}")
        if self.gin_activation not in ("relu", "leaky_relu"):
            raise ConfigError(f"unknown GIN activation {self.gin_activation!r}")
        self.pooling.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["pooling"] = PoolingSpec(**d.get("pooling", {}))
        d["layer_widths"] = tuple(d["layer_widths"])
        return cls(**d)


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Node]
    seed: int = 0

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self.params[k].value.shape != v.shape:
                raise ShapeMismatch(f"{k}: {self.params[k].value.shape} vs {v.shape}")
            self.params[k].value = np.array(v, dtype=np.float64)

    def with_config(self, **changes) -> "Model":
        """Same parameters under a modified config (shapes must still agree)."""
        cfg = replace(self.config, **changes)
        cfg.validate()
        fresh = init_model(cfg, self.seed)
        fresh.load_state(self.state())
        return fresh

    def readout_directions(self) -> np.ndarray:
        """Unit-normalised classifier rows, one per output."""
        w = self.params["readout.weight"].value.T
        return w / np.linalg.norm(w, axis=1, keepdims=True)


@dataclass
class ForwardTrace:
    layers: list[np.ndarray]
    pooled: np.ndarray
    logits: np.ndarray

    @property
    def h_G(self) -> np.ndarray:
        return self.pooled[0] if self.pooled.shape[0] == 1 else self.pooled


# ------------------------------------------------------------------ batches

@dataclass
class GraphBatch:
    """Disjoint union of graphs with the constant operators every layer needs."""

    x: np.ndarray
    num_graphs: int
    graph_ptr: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    dst_ptr: np.ndarray
    gcn_adj: sp.csr_matrix
    sum_adj: sp.csr_matrix
    mean_adj: sp.csr_matrix
    pool_mean: sp.csr_matrix
    src_scatter: sp.csr_matrix
    dst_scatter: sp.csr_matrix

    @classmethod
    def from_graphs(cls, graphs: Sequence[Graph]) -> "GraphBatch":
        if not graphs:
            raise ValueError("empty batch")
        sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
        if (sizes < 1).any():
            raise ValueError("every graph needs at least one node")
        graph_ptr = np.concatenate([[0], np.cumsum(sizes)])
        n = int(graph_ptr[-1])
        x = np.vstack([g.node_features for g in graphs])
        parts_u, parts_v = [], []
        for off, g in zip(graph_ptr[:-1], graphs):
            if len(g.edges):
                parts_u.append(g.edges[:, 0] + off)
                parts_v.append(g.edges[:, 1] + off)
        u = np.concatenate(parts_u) if parts_u else np.zeros(0, dtype=np.int64)
        v = np.concatenate(parts_v) if parts_v else np.zeros(0, dtype=np.int64)
        loops = np.arange(n)
        src = np.concatenate([u, v, loops])
        dst = np.concatenate([v, u, loops])
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        dst_ptr = np.searchsorted(dst, np.arange(n + 1))
        deg_hat = np.bincount(dst, minlength=n).astype(np.float64)
        ones = np.ones(len(src))
        shape = (n, n)
        sum_adj = sp.csr_matrix((ones, (dst, src)), shape=shape)
        gcn_w = 1.0 / np.sqrt(deg_hat[src] * deg_hat[dst])
        gcn_adj = sp.csr_matrix((gcn_w, (dst, src)), shape=shape)
        mean_adj = sp.csr_matrix((1.0 / deg_hat[dst], (dst, src)), shape=shape)
        node_graph = np.repeat(np.arange(len(graphs)), sizes)
        pool_mean = sp.csr_matrix((1.0 / sizes[node_graph], (node_graph, loops)),
                                  shape=(len(graphs), n))
        return cls(x, len(graphs), graph_ptr, src, dst, dst_ptr, gcn_adj, sum_adj, mean_adj,
                   pool_mean, ad.scatter_matrix(src, n), ad.scatter_matrix(dst, n))


# ------------------------------------------------------------ construction

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def init_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Deterministic fan-in/fan-out uniform initialisation; biases start at zero."""
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params: dict[str, Node] = {}

    def add(name, value):
        params[name] = ad.parameter(value, name)

    width_in = cfg.in_dim
    for l, width in enumerate(cfg.layer_widths):
        pre = f"conv{l}"
        if cfg.arch == "GCN":
            add(f"{pre}.weight", _glorot(rng, width_in, width))
            add(f"{pre}.bias", np.zeros((1, width)))
        elif cfg.arch == "GIN":
            hidden = cfg.gin_hidden or width
            add(f"{pre}.mlp1.weight", _glorot(rng, width_in, hidden))
            add(f"{pre}.mlp1.bias", np.zeros((1, hidden)))
            add(f"{pre}.mlp2.weight", _glorot(rng, hidden, width))
            add(f"{pre}.mlp2.bias", np.zeros((1, width)))
        else:
            add(f"{pre}.lin_src.weight", _glorot(rng, width_in, width))
            add(f"{pre}.lin_dst.weight", _glorot(rng, width_in, width))
            add(f"{pre}.att", _glorot(rng, width, 1))
            add(f"{pre}.bias", np.zeros((1, width)))
        width_in = width
    add("readout.weight", _glorot(rng, width_in, cfg.num_outputs))
    add("readout.bias", np.zeros((1, cfg.num_outputs)))
    return Model(cfg, params, seed)


# ------------------------------------------------------------------ pooling

def _power_mean_dense(operator: sp.csr_matrix, x: Node, p: float, eps: float) -> Node:
    return ad.signed_root(ad.spmm(operator, ad.signed_power(x, p, eps)), p, eps)


def _local_aggregate(batch: GraphBatch, msgs: Node, pool: PoolingSpec,
                     weights: Node | None = None) -> Node:
    """Aggregate ``msgs`` over closed neighbourhoods with the pooling operator."""
    if pool.kind == "max":
        return ad.segment_max(ad.gather_rows(msgs, batch.src, batch.src_scatter), batch.dst_ptr)
    if weights is None:
        if pool.kind == "mean":
            return ad.spmm(batch.mean_adj, msgs)
        return _power_mean_dense(batch.mean_adj, msgs, pool.p, pool.epsilon)
    if pool.kind == "mean":
        return ad.edge_aggregate(weights, msgs, batch.src, batch.dst_ptr, batch.dst)
    transformed = ad.signed_power(msgs, pool.p, pool.epsilon)
    s = ad.edge_aggregate(weights, transformed, batch.src, batch.dst_ptr, batch.dst)
    return ad.signed_root(s, pool.p, pool.epsilon)


def global_pool(batch: GraphBatch, h: Node, pool: PoolingSpec) -> Node:
    if pool.scope == "local" or pool.kind == "mean":
        return ad.spmm(batch.pool_mean, h)
    if pool.kind == "max":
        return ad.segment_max(h, batch.graph_ptr)
    return _power_mean_dense(batch.pool_mean, h, pool.p, pool.epsilon)


def power_mean_pool(x, p: float, epsilon: float = 1e-6) -> np.ndarray:
    """Signed power mean of each column of ``x`` (rows are nodes)."""
    if p < 1 or epsilon <= 0:
        raise ConfigError("need p >= 1 and epsilon > 0")
    x = np.asarray(x, dtype=np.float64)
    g = np.sign(x) * (np.abs(x) + epsilon) ** p
    s = g.mean(axis=0)
    out = np.sign(s) * (np.abs(s) + epsilon) ** (1.0 / p)
    if not np.isfinite(out).all():
        raise NonFinite("power-mean pool overflowed")
    return out


def power_mean_pool_grad(x, p: float, epsilon: float = 1e-6) -> np.ndarray:
    """Closed-form d h_d / d x_id of the stabilised power mean (same shape as ``x``).

    With ``epsilon -> 0`` and positive entries this reduces to
    ``N^(-1/p) |s_d|^(1/p - 1) |x_id|^(p-1)`` where ``s_d`` is the column sum.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    g = np.sign(x) * (np.abs(x) + epsilon) ** p
    sbar = g.mean(axis=0)
    outer = np.where(sbar != 0, (np.abs(sbar) + epsilon) ** (1.0 / p - 1.0), 0.0)
    inner = np.where(x != 0, (np.abs(x) + epsilon) ** (p - 1.0), 0.0)
    return outer * inner / n


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def pool_gradient_check(p: float, x=None, epsilon: float = 1e-6, seed: int = 0,
                        h: float = 1e-5) -> float:
    """Worst relative error among autodiff, closed form and central differences.

    Compares the gradient of ``sum_d w_d h_d`` (random fixed ``w``) so every
    column contributes with a distinct weight.
    """
    rng = np.random.default_rng(seed)
    if x is None:
        x = rng.standard_normal((10, 4))
    x = np.asarray(x, dtype=np.float64)
    w = rng.uniform(0.5, 1.5, size=x.shape[1])
    ptr = np.array([0, x.shape[0]])

    xs = ad.parameter(x)
    pooled = ad.signed_root(ad.scale(ad.segment_sum(ad.signed_power(xs, p, epsilon), ptr),
                                     1.0 / x.shape[0]), p, epsilon)
    loss = ad.total(ad.mul(pooled, w[None, :]))
    auto = ad.backward(loss)[xs]

    closed = power_mean_pool_grad(x, p, epsilon) * w[None, :]

    fd = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd[idx] = (power_mean_pool(xp, p, epsilon) @ w - power_mean_pool(xm, p, epsilon) @ w) / (2 * h)

    return max(_relative_error(auto, closed), _relative_error(auto, fd), _relative_error(closed, fd))


# ------------------------------------------------------------------ forward

def _layer(model: Model, batch: GraphBatch, l: int, h: Node, last: bool) -> Node:
    cfg = model.config
    P = model.params
    pre = f"conv{l}"
    local = last and cfg.pooling.scope == "local"
    pool = cfg.pooling
    if cfg.arch == "GCN":
        msgs = ad.matmul(h, P[f"{pre}.weight"])
        agg = _local_aggregate(batch, msgs, pool) if local else ad.spmm(batch.gcn_adj, msgs)
        return ad.add(agg, P[f"{pre}.bias"])
    if cfg.arch == "GIN":
        agg = _local_aggregate(batch, h, pool) if local else ad.spmm(batch.sum_adj, h)
        z = ad.add(ad.matmul(agg, P[f"{pre}.mlp1.weight"]), P[f"{pre}.mlp1.bias"])
        z = ad.activation(z, cfg.gin_activation, cfg.leaky_slope)
        return ad.add(ad.matmul(z, P[f"{pre}.mlp2.weight"]), P[f"{pre}.mlp2.bias"])
    xs = ad.matmul(h, P[f"{pre}.lin_src.weight"])
    xt = ad.matmul(h, P[f"{pre}.lin_dst.weight"])
    pair = ad.add(ad.gather_rows(xs, batch.src, batch.src_scatter), ad.gather_rows(xt, batch.dst, batch.dst_scatter))
    scores = ad.matmul(ad.leaky_relu(pair, cfg.attention_slope), P[f"{pre}.att"])
    alpha = ad.segment_softmax(scores, batch.dst_ptr)
    if local:
        agg = _local_aggregate(batch, xs, pool, weights=alpha)
    else:
        agg = ad.edge_aggregate(alpha, xs, batch.src, batch.dst_ptr, batch.dst)
    return ad.add(agg, P[f"{pre}.bias"])


def forward_nodes(model: Model, batch: GraphBatch) -> tuple[list[Node], Node, Node]:
    """Forward pass returning graph nodes: (per-layer H, pooled h_G, logits)."""
    cfg = model.config
    if batch.x.shape[1] != cfg.in_dim:
        raise ShapeMismatch(f"features have width {batch.x.shape[1]}, model expects {cfg.in_dim}")
    h: Node = ad.constant(batch.x)
    layers = []
    n_layers = len(cfg.layer_widths)
    for l in range(n_layers):
        last = l == n_layers - 1
        h = _layer(model, batch, l, h, last)
        if not last:
            h = ad.relu(h)
        layers.append(h)
    pooled = ad.activation(global_pool(batch, h, cfg.pooling), cfg.final_activation,
                           cfg.leaky_slope)
    logits = ad.add(ad.matmul(pooled, model.params["readout.weight"]),
                    model.params["readout.bias"])
    if not np.isfinite(logits.value).all():
        raise NonFinite("forward pass produced non-finite logits")
    return layers, pooled, logits


def forward(model: Model, graphs: Graph | Sequence[Graph] | GraphBatch) -> ForwardTrace:
    if isinstance(graphs, Graph):
        graphs = [graphs]
    batch = graphs if isinstance(graphs, GraphBatch) else GraphBatch.from_graphs(graphs)
    layers, pooled, logits = forward_nodes(model, batch)
    return ForwardTrace([n.value for n in layers], pooled.value, logits.value)


# -------------------------------------------------------------- checkpoints

def save_checkpoint(model: Model, path: str | Path) -> None:
    """Write parameters to an ``.npz`` archive.

    Layout: one float64 array per parameter under its dotted name, plus
    ``__config__`` (JSON of the model config, as a 0-d unicode array) and
    ``__seed__`` (0-d int64).
    """
    arrays = {k: v.value for k, v in model.params.items()}
    arrays["__config__"] = np.array(json.dumps(model.config.to_dict(), sort_keys=True))
    arrays["__seed__"] = np.array(model.seed, dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> Model:
    with np.load(path, allow_pickle=False) as data:
        cfg = ModelConfig.from_dict(json.loads(str(data["__config__"])))
        model = init_model(cfg, int(data["__seed__"]))
        model.load_state({k: data[k] for k in data.files if not k.startswith("__")})
    return model
