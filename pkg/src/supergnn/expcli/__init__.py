"""Configuration-driven study runner and command line interface."""

from supergnn.expcli.config import ExperimentConfig, default_config, load_config, parse_seeds
from supergnn.expcli.runner import StudyResult, run_study, write_study
from supergnn.expcli.studies import RunSpec, enumerate_runs, run_one


def _run(study: str, cfg: ExperimentConfig, jobs: int) -> StudyResult:
    if cfg.study != study:
        raise ValueError(f"config is for {cfg.study!r}, expected {study!r}")
    return run_study(cfg, jobs)


def run_width_sweep(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    return _run("width_sweep", cfg, jobs)


def run_conjunction_study(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    return _run("conjunction_study", cfg, jobs)


def run_pooling_sweep(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    return _run("pooling_sweep", cfg, jobs)


def run_rank_track(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    return _run("rank_track", cfg, jobs)


def run_noise_probe(cfg: ExperimentConfig, jobs: int = 1) -> StudyResult:
    return _run("noise_probe", cfg, jobs)


__all__ = [
    "ExperimentConfig", "RunSpec", "StudyResult", "default_config", "enumerate_runs",
    "load_config", "parse_seeds", "run_conjunction_study", "run_noise_probe", "run_one",
    "run_pooling_sweep", "run_rank_track", "run_study", "run_width_sweep", "write_study",
]
