"""Experiment configuration: JSON files merged over per-study desk defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from supergnn.errors import ConfigError
from supergnn.graphgen import ConjunctionConfig, Dataset, PairwiseConfig, gen_conjunction, gen_pairwise
from supergnn.model import ARCHS
from supergnn.trainer import TrainConfig

STUDIES = ("width_sweep", "conjunction_study", "pooling_sweep", "rank_track", "noise_probe")

_PAIRWISE_DESK = {"family": "pairwise", "seed": 0, "num_types": 16, "chain_length": 6,
                  "activation_prob": 1.0, "num_graphs": 2000, "train_fraction": 0.8}

DEFAULTS: dict[str, dict] = {
    "width_sweep": {
        "dataset": {**_PAIRWISE_DESK, "num_types": 8, "num_graphs": 1000},
        "model": {"final_activation": "relu"},
        "train": {"lr": 0.03, "epochs": 2000},
        "sweep": {"archs": ["GCN"], "seeds": list(range(10)), "widths": [2, 4, 8, 16, 32],
                  "levels": ["graph", "node"]},
    },
    "conjunction_study": {
        "dataset": {"family": "conjunction", "seed": 0, "num_graphs": 500, "p_extra": 0.2,
                    "train_fraction": 0.8},
        "model": {"layer_widths": [16, 16, 16], "final_activation": "relu"},
        "train": {"lr": 0.01, "epochs": 300},
        "sweep": {"archs": ["GCN", "GIN", "GATV2"], "seeds": list(range(25)),
                  "poolings": ["mean", "max"], "levels": ["graph", "node"]},
    },
    "pooling_sweep": {
        "dataset": dict(_PAIRWISE_DESK),
        "model": {"final_activation": "relu", "pooling": {"epsilon": 1e-6}},
        "train": {"lr": 0.03, "epochs": 400},
        "sweep": {"archs": ["GCN"], "seeds": list(range(5)), "p_grid": [1.0, 1.5, 2.0, 4.0, 8.0],
                  "regimes": [10, 22], "scopes": ["global"], "levels": ["graph", "node"]},
    },
    "rank_track": {
        "dataset": {**_PAIRWISE_DESK, "num_types": 12},
        "model": {"layer_widths": [12, 6], "final_activation": "relu"},
        "train": {"lr": 0.03, "epochs": 400, "snapshot_every": 20},
        "sweep": {"archs": ["GIN"], "seeds": list(range(15)), "variants": ["relu", "leaky_relu"]},
    },
    "noise_probe": {
        "dataset": {},
        "model": {},
        "train": {},
        "sweep": {"archs": ["none"], "seeds": [0]},
        "noise": {"trials": 1000, "num_nodes": 20, "dim": 16, "retention_dim": 2,
                  "retention_noise_std": 0.25, "angles_deg": [0.0, 15.0, 30.0, 45.0]},
    },
}

_SECTIONS = ("dataset", "model", "train", "sweep", "noise")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    study: str
    dataset: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    out_dir: str = "results"

    def validate(self) -> None:
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        seeds = self.sweep.get("seeds", [])
        if not seeds:
            raise ConfigError("sweep.seeds must be non-empty")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("sweep.seeds must be distinct")
        for axis in ("archs", "widths", "p_grid", "regimes", "scopes", "poolings", "variants"):
            if axis in self.sweep and not self.sweep[axis]:
                raise ConfigError(f"sweep.{axis} must be non-empty")
        if self.study != "noise_probe":
            for arch in self.sweep.get("archs", []):
                if arch not in ARCHS:
                    raise ConfigError(f"unknown architecture {arch!r}")
        if any(p < 1 for p in self.sweep.get("p_grid", [])):
            raise ConfigError("pooling exponents must be >= 1")
        self.train_config(0).validate()

    @property
    def seeds(self) -> list[int]:
        return list(self.sweep["seeds"])

    @property
    def archs(self) -> list[str]:
        return list(self.sweep.get("archs", ["GCN"]))

    @property
    def levels(self) -> list[str]:
        return list(self.sweep.get("levels", ["graph", "node"]))

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed})

    def to_dict(self) -> dict:
        return {"study": self.study, "dataset": self.dataset, "model": self.model,
                "train": self.train, "sweep": self.sweep, "noise": self.noise,
                "out_dir": self.out_dir}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(_SECTIONS) - {"study", "out_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        study = d.get("study")
        if study not in STUDIES:
            raise ConfigError(f"unknown study {study!r}; expected one of {STUDIES}")
        merged = _merge(DEFAULTS[study], {k: v for k, v in d.items() if k in _SECTIONS})
        cfg = cls(study=study, out_dir=d.get("out_dir", "results"),
                  **{k: merged.get(k, {}) for k in _SECTIONS})
        cfg.validate()
        return cfg


def default_config(study: str, **overrides) -> ExperimentConfig:
    return ExperimentConfig.from_dict({"study": study, **overrides})


def load_config(path: str | Path, study: str | None = None) -> ExperimentConfig:
    """Read a JSON config; ``study`` fills in (or must match) the file's study."""
    raw = json.loads(Path(path).read_text())
    if study is not None:
        if raw.setdefault("study", study) != study:
            raise ConfigError(f"config is for study {raw['study']!r}, not {study!r}")
    return ExperimentConfig.from_dict(raw)


def parse_seeds(text: str) -> list[int]:
    """``"a..b"`` (inclusive) or a comma list such as ``"0,3,7"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        a, b = int(lo), int(hi)
        if b < a:
            raise ConfigError(f"empty seed range {text!r}")
        return list(range(a, b + 1))
    seeds = [int(s) for s in text.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def build_dataset(spec: dict) -> Dataset:
    spec = dict(spec)
    family = spec.pop("family", "pairwise")
    seed = int(spec.pop("seed", 0))
    if family == "pairwise":
        return gen_pairwise(PairwiseConfig(**spec), seed)
    if family == "conjunction":
        if "label_mix" in spec:
            spec["label_mix"] = tuple(spec["label_mix"])
        return gen_conjunction(ConjunctionConfig(**spec), seed)
    raise ConfigError(f"unknown dataset family {family!r}")
