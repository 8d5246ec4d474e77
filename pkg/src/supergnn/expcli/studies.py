"""One training-and-analysis run per (configuration point, seed) for every study."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from supergnn import geometry
from supergnn.errors import SingleClass
from supergnn.expcli.config import ExperimentConfig, build_dataset
from supergnn.features import (
    ConceptSpec,
    FeatureMatrix,
    class_centroids,
    concept_targets,
    fit_probe,
    probe_feature_matrix,
)
from supergnn.graphgen import MOTIF_LENGTHS, Dataset
from supergnn.model import GraphBatch, ModelConfig, PoolingSpec, forward_nodes, init_model
from supergnn.trainer import RunRecord, evaluate, train

COS_THRESHOLD = 0.9

GEOMETRY_COLUMNS = (
    "run", "study", "arch", "seed", "d", "pooling", "p", "scope", "variant",
    "level", "kind", "family", "k_a", "effrank", "si", "wno_i", "ai", "r", "degenerate",
    "dropped_rows", "cos_any", "cos_all", "r_tau", "r_eta", "dead_columns", "collapsed",
    "train_acc", "test_acc", "exact_match", "perfect",
)

NOISE_COLUMNS = ("run", "study", "seed", "num_nodes", "dim", "trials", "quantity",
                 "angle_deg", "value")

POINT_AXES = ("d", "pooling", "p", "scope", "variant")


@dataclass(frozen=True)
class RunSpec:
    index: int
    arch: str
    seed: int
    point: tuple = ()

    @property
    def values(self) -> dict:
        return dict(self.point)

    @property
    def run_id(self) -> str:
        parts = [self.arch] + [f"{k}{v}" for k, v in self.point] + [f"s{self.seed}"]
        return "-".join(parts)


@dataclass
class RunOutcome:
    spec: RunSpec
    rows: list[dict] = field(default_factory=list)
    record: dict | None = None
    failure: str | None = None


def study_points(cfg: ExperimentConfig) -> list[tuple]:
    sw = cfg.sweep
    if cfg.study == "width_sweep":
        return [(("d", int(d)),) for d in sw["widths"]]
    if cfg.study == "conjunction_study":
        return [(("pooling", kind),) for kind in sw["poolings"]]
    if cfg.study == "pooling_sweep":
        return [(("d", int(d)), ("scope", scope), ("p", float(p)))
                for d in sw["regimes"] for scope in sw["scopes"] for p in sw["p_grid"]]
    if cfg.study == "rank_track":
        return [(("variant", v),) for v in sw["variants"]]
    return [()]


def enumerate_runs(cfg: ExperimentConfig) -> list[RunSpec]:
    """Runs in collector order: architecture, then configuration point, then seed."""
    specs = []
    for arch in cfg.archs:
        for point in study_points(cfg):
            for seed in cfg.seeds:
                specs.append(RunSpec(len(specs), arch, int(seed), point))
    return specs


# per-process cache; datasets are pure functions of their config
_DATASETS: dict[str, Dataset] = {}


def cached_dataset(spec: dict) -> Dataset:
    key = json.dumps(spec, sort_keys=True)
    if key not in _DATASETS:
        _DATASETS[key] = build_dataset(spec)
    return _DATASETS[key]


def model_config(cfg: ExperimentConfig, spec: RunSpec, data: Dataset) -> ModelConfig:
    tmpl = dict(cfg.model)
    pool = dict(tmpl.pop("pooling", {}))
    pt = spec.values
    k = data.num_classes
    if cfg.study in ("width_sweep", "pooling_sweep"):
        widths = (data.feature_dim, pt["d"])
    else:
        widths = tuple(tmpl.pop("layer_widths", (16, 16)))
    tmpl.pop("layer_widths", None)
    if cfg.study == "conjunction_study":
        pool["kind"] = pt["pooling"]
    if cfg.study == "pooling_sweep":
        pool.update(kind="power_mean", p=pt["p"], scope=pt["scope"])
    if cfg.study == "rank_track":
        tmpl["final_activation"] = pt["variant"]
        tmpl["gin_activation"] = pt["variant"]
    mc = ModelConfig(arch=spec.arch, in_dim=data.feature_dim, layer_widths=widths,
                     num_outputs=k, pooling=PoolingSpec(**pool), **tmpl)
    mc.validate()
    return mc


# ----------------------------------------------------------------- analysis

def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating,)):
        return _json_safe(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_json_safe(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    return v


def _node_split(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    owner = np.concatenate([[s] * g.num_nodes for g, s in zip(data.graphs, data.split)])
    return np.flatnonzero(owner == "train"), np.flatnonzero(owner == "test")


def _probes(z: np.ndarray, targets: dict[int, np.ndarray], train_idx, test_idx):
    out = []
    for cid, y in targets.items():
        try:
            out.append(fit_probe(z, y, train_idx, test_idx))
        except SingleClass:
            out.append(None)
    return out


def _geometry_row(fm: FeatureMatrix, family: str) -> tuple[dict, dict]:
    rep = geometry.geometry_report(fm.raw, fm.geometry_kind)
    row = {"level": fm.level, "kind": fm.kind, "family": family, **rep.row()}
    cos_any = cos_all = False
    cos_info = {"ids": list(fm.active_ids), "cos": []}
    if rep.k_a >= 1 and not np.isnan(rep.cosine).any():
        cos_any, cos_all = geometry.offdiag_abs_cos_stats(np.abs(rep.cosine), COS_THRESHOLD)
        cos_info["cos"] = rep.cosine
    row.update(cos_any=cos_any, cos_all=cos_all)
    return row, cos_info


def _rank_fields(pooled: np.ndarray) -> dict:
    prof = geometry.numerical_rank(pooled)
    return {"r_tau": prof.r_tau, "r_eta": prof.r_eta, "dead_columns": prof.dead_columns}


def is_collapsed(r_tau: int, k_a: int) -> bool:
    """A run collapsed when its pooled embeddings span fewer directions than active classes."""
    return bool(r_tau < k_a)


def analyze_run(cfg: ExperimentConfig, spec: RunSpec, data: Dataset, record: RunRecord) -> tuple[list[dict], dict]:
    """Geometry rows for a trained model plus extra per-run payload for runs.jsonl."""
    model = record.model
    test = evaluate(model, data, "test")
    train_eval = evaluate(model, data, "train")
    all_batch = GraphBatch.from_graphs(data.graphs)
    layers, pooled_all, _ = forward_nodes(model, all_batch)
    pooled_all = pooled_all.value
    test_idx = np.array(data.indices("test"))
    pooled_test = pooled_all[test_idx]
    y_test = np.array([data.graphs[i].labels for i in test_idx])

    pt = spec.values
    base = {
        "study": cfg.study, "arch": spec.arch, "seed": spec.seed,
        **{axis: pt.get(axis) for axis in POINT_AXES},
        "train_acc": train_eval.accuracy, "test_acc": test.accuracy,
        "exact_match": test.exact_match, "perfect": bool(test.exact_match == 1.0),
        **_rank_fields(pooled_test),
    }
    rows, extras = [], {"cosine": {}}
    families: list[tuple[FeatureMatrix, str]] = []
    levels = cfg.levels

    if cfg.study in ("width_sweep", "pooling_sweep", "rank_track") and "graph" in levels:
        families.append((class_centroids(pooled_test, y_test, test.recall, spec.run_id), "class"))

    if "node" in levels and cfg.study in ("width_sweep", "pooling_sweep", "conjunction_study"):
        z = layers[-1].value
        tr_nodes, te_nodes = _node_split(data)
        if data.family == "pairwise":
            node_families = ("Is", "NextTo")
            params = range(data.feature_dim)
        else:
            node_families = ("Inside",)
            params = MOTIF_LENGTHS
        for fam in node_families:
            targets = {t: concept_targets(data, ConceptSpec(fam, t)) for t in params}
            probes = _probes(z, targets, tr_nodes, te_nodes)
            fm = probe_feature_matrix(probes, level="node", ids=list(targets),
                                      provenance=f"{spec.run_id}:layer{len(layers) - 1}")
            families.append((fm, fam))

    if cfg.study == "conjunction_study" and "graph" in levels:
        targets = {l: concept_targets(data, ConceptSpec("Has", l)) for l in MOTIF_LENGTHS}
        probes = _probes(pooled_all, targets, np.array(data.indices("train")), test_idx)
        families.append((probe_feature_matrix(probes, level="graph", ids=list(targets),
                                              provenance=f"{spec.run_id}:pooled"), "Has"))

    for fm, fam in families:
        geo, cos_info = _geometry_row(fm, fam)
        row = {"run": spec.run_id, **base, **geo}
        if cfg.study == "rank_track" and fam == "class":
            row["collapsed"] = is_collapsed(base["r_tau"], geo["k_a"])
        rows.append(row)
        extras["cosine"][f"{fm.level}:{fam}"] = cos_info
    if not families:
        rows.append({"run": spec.run_id, **base, "level": "graph", "kind": "embedding",
                     "family": "none"})
    return rows, extras


def train_run(cfg: ExperimentConfig, spec: RunSpec) -> RunOutcome:
    data = cached_dataset(cfg.dataset)
    mc = model_config(cfg, spec, data)
    model = init_model(mc, spec.seed)
    record = train(model, data, cfg.train_config(spec.seed))
    payload = {"run": spec.run_id, "arch": spec.arch, "seed": spec.seed, **spec.values,
               "model": mc.to_dict(), "train": asdict(cfg.train_config(spec.seed)),
               "epochs": record.lines()[:len(record.epochs)],
               "snapshots": [s.to_json() for s in record.snapshots]}
    if record.failed:
        return RunOutcome(spec, failure=f"NonFinite: {record.failure}")
    rows, extras = analyze_run(cfg, spec, data, record)
    payload.update(extras)
    return RunOutcome(spec, rows, _json_safe(payload))


# --------------------------------------------------------------- noise probe

def _retention(rng: np.random.Generator, angle_deg: float, dim: int, num_nodes: int,
               sigma: float, trials: int, floor: np.ndarray) -> float:
    """Mean cosine between a clean max-pooled signal and its noisy max-pooled copy.

    The signal sits on node 0 at ``angle_deg`` from the first axis inside the
    first coordinate plane; every node then receives isotropic Gaussian noise,
    so the corruption energy does not depend on the angle. The expected pooled
    response to noise alone (``floor``) is subtracted before comparing.
    """
    t = math.radians(angle_deg)
    v = np.zeros(dim)
    v[0], v[1] = math.cos(t), math.sin(t)
    clean = np.zeros((num_nodes, dim))
    clean[0] = v
    ref = clean.max(axis=0)
    noisy = (clean[None] + sigma * rng.standard_normal((trials, num_nodes, dim))).max(axis=1) - floor
    cos = (noisy @ ref) / (np.linalg.norm(noisy, axis=1) * np.linalg.norm(ref))
    return float(cos.mean())


def pooled_std_ratio(x: np.ndarray) -> dict:
    """Per-channel std across trials of mean- and max-pooled ``x`` (trials, nodes, dim)."""
    mean_pool, max_pool = x.mean(axis=1), x.max(axis=1)
    # shifting by the first trial keeps constant inputs at exactly zero std
    std_mean = (mean_pool - mean_pool[0]).std(axis=0)
    std_max = (max_pool - max_pool[0]).std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(std_mean > 0, std_max / np.where(std_mean > 0, std_mean, 1.0), math.nan)
    return {"std_mean_pool": float(std_mean.mean()), "std_max_pool": float(std_max.mean()),
            "std_ratio": float(np.mean(ratio)) if np.isfinite(ratio).all() else math.nan}


def noise_run(cfg: ExperimentConfig, spec: RunSpec) -> RunOutcome:
    nz = cfg.noise
    trials, n, dim = int(nz["trials"]), int(nz["num_nodes"]), int(nz["dim"])
    ss = np.random.SeedSequence(spec.seed)
    s_var, s_floor, s_ret = ss.spawn(3)
    x = np.random.Generator(np.random.PCG64(s_var)).standard_normal((trials, n, dim))
    stats = pooled_std_ratio(x)
    base = {"run": spec.run_id, "study": cfg.study, "seed": spec.seed, "num_nodes": n,
            "dim": dim, "trials": trials}
    rows = [{**base, "quantity": q, "angle_deg": None, "value": v} for q, v in stats.items()]

    rdim, sigma = int(nz["retention_dim"]), float(nz["retention_noise_std"])
    floor_rng = np.random.Generator(np.random.PCG64(s_floor))
    floor = (sigma * floor_rng.standard_normal((trials, n, rdim))).max(axis=1).mean(axis=0)
    ret_rng = np.random.Generator(np.random.PCG64(s_ret))
    retention = {}
    for angle in nz["angles_deg"]:
        r = _retention(ret_rng, float(angle), rdim, n, sigma, trials, floor)
        retention[float(angle)] = r
        rows.append({**base, "dim": rdim, "quantity": "retention", "angle_deg": float(angle),
                     "value": r})
    payload = {"run": spec.run_id, "seed": spec.seed, "noise": nz, **stats,
               "retention": [[a, r] for a, r in retention.items()]}
    return RunOutcome(spec, rows, _json_safe(payload))


def run_one(cfg: ExperimentConfig, spec: RunSpec) -> RunOutcome:
    """Execute one run; any exception becomes a recorded failure."""
    try:
        if cfg.study == "noise_probe":
            return noise_run(cfg, spec)
        return train_run(cfg, spec)
    except Exception as exc:  # crash isolation: the sweep must continue
        return RunOutcome(spec, failure=f"{type(exc).__name__}: {exc}")
