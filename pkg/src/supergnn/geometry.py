"""Basis-invariant diagnostics for stacks of feature directions.

NA results are reported as ``float("nan")``; CSV writers render them as ``NA``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from supergnn.errors import ZeroRow
from supergnn.numerics import as_tensor, svd

# ceil() guard: an EffRank of 2 + 1e-15 must select a 2-D subspace
_CEIL_SLACK = 1e-9
_DROP_NORM = 1e-10
_DEAD_COLUMN = 1e-12

FEATURE_KINDS = ("centroid", "graph_probe", "node_probe")


def com_center(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return c - c.mean(axis=0, keepdims=True)


def normalize_rows(c: np.ndarray, strict: bool = False) -> np.ndarray:
    """Scale rows to unit norm; zero rows stay zero unless ``strict``."""
    c = np.asarray(c, dtype=np.float64)
    norms = np.linalg.norm(c, axis=1, keepdims=True)
    if strict and (norms <= 0).any():
        raise ZeroRow("feature matrix has a zero row")
    return np.divide(c, norms, out=np.zeros_like(c), where=norms > 0)


def _degenerate(sigma: np.ndarray, reference: float) -> bool:
    return sigma.size == 0 or sigma[0] <= 1e-12 * max(reference, 1e-300)


def eff_rank_flagged(c, center: str = "none") -> tuple[float, bool]:
    """EffRank plus a flag that is True when the (centred) matrix is all zero."""
    c = as_tensor(c, "feature matrix")
    reference = float(np.abs(c).max()) if c.size else 0.0
    if center == "com":
        c = com_center(c)
    elif center != "none":
        raise ValueError(f"unknown centering {center!r}")
    return _entropy_rank(svd(c).sigma, reference)


def _entropy_rank(sigma: np.ndarray, reference: float) -> tuple[float, bool]:
    if _degenerate(sigma, reference):
        return 0.0, True
    p = sigma / sigma.sum()
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum())), False


def eff_rank(c, center: str = "none") -> float:
    """exp of the Shannon entropy of the normalised singular values.

    ``center="com"`` subtracts the mean row first. An all-zero matrix gives 0.
    """
    return eff_rank_flagged(c, center)[0]


def superposition_index(k_a: int, effrank: float) -> float:
    """Active features per effective axis; NaN when undefined."""
    if k_a <= 0 or effrank <= 0:
        return math.nan
    return k_a / effrank


def ceil_rank(effrank: float) -> int:
    return int(math.ceil(effrank - _CEIL_SLACK))


def remove_pc1(c: np.ndarray) -> np.ndarray:
    """Deflate the leading right-singular direction from every row."""
    res = svd(c)
    if res.sigma[0] == 0:
        return c.copy()
    v1 = res.v[:, 0]
    return c - np.outer(c @ v1, v1)


def prepare_features(c, kind: str) -> np.ndarray:
    """Centre (centroids only) and unit-normalise rows."""
    if kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {kind!r}")
    c = as_tensor(c, "feature matrix")
    if kind == "centroid":
        c = com_center(c)
    return normalize_rows(c)


@dataclass
class WnoDetail:
    wno: float
    r: int
    mean_cos2: float
    welch: float
    kept_rows: int
    dropped_rows: int


def wno_intrinsic_detail(c, kind: str) -> WnoDetail:
    """Welch-normalised overlap measured in the EffRank-selected subspace.

    Steps: centre centroids, unit-normalise rows, deflate PC1 (centroids and
    graph probes), ``r = ceil(EffRank)``, project onto the top-``r``
    right-singular subspace, drop near-zero rows, renormalise and compare the
    mean squared cosine with the random (1/r) and Welch baselines.
    """
    prepared = prepare_features(c, kind)
    na = WnoDetail(math.nan, 0, math.nan, math.nan, 0, 0)
    k = prepared.shape[0]
    if k <= 1:
        return na
    if kind in ("centroid", "graph_probe"):
        prepared = remove_pc1(prepared)
    res = svd(prepared)
    reference = float(np.abs(prepared).max()) if prepared.size else 0.0
    effrank, flat = _entropy_rank(res.sigma, reference)
    r = 0 if flat else ceil_rank(effrank)
    if r <= 1:
        na.r = r
        return na
    projected = prepared @ res.v[:, :r]
    norms = np.linalg.norm(projected, axis=1)
    keep = norms >= _DROP_NORM
    rows = projected[keep] / norms[keep, None]
    k_kept = rows.shape[0]
    if k_kept <= 1:
        return WnoDetail(math.nan, r, math.nan, math.nan, k_kept, int(k - k_kept))
    gram = rows @ rows.T
    iu = np.triu_indices(k_kept, 1)
    mean_cos2 = float(np.mean(gram[iu] ** 2))
    welch = max(0.0, (k_kept - r) / (r * (k_kept - 1)))
    wno = 1.0 - (1.0 / r - mean_cos2) / (1.0 / r - welch)
    return WnoDetail(wno, r, mean_cos2, welch, k_kept, int(k - k_kept))


def wno_intrinsic(c, kind: str) -> float:
    return wno_intrinsic_detail(c, kind).wno


def alignment_index(c) -> float:
    """Mean over rows of max |coordinate| / row norm (1 = axis aligned)."""
    c = as_tensor(c, "feature matrix")
    norms = np.linalg.norm(c, axis=1)
    if (norms <= 0).any():
        raise ZeroRow("alignment index needs nonzero rows")
    return float(np.mean(np.abs(c).max(axis=1) / norms))


def cosine_matrix(c) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise cosines between rows and their absolute values."""
    c = as_tensor(c, "feature matrix")
    unit = normalize_rows(c, strict=True)
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    cos = 0.5 * (cos + cos.T)
    np.fill_diagonal(cos, 1.0)
    return cos, np.abs(cos)


def offdiag_abs_cos_stats(abs_cos: np.ndarray, threshold: float = 0.9) -> tuple[bool, bool]:
    """(any pair above threshold, every pair above threshold) over off-diagonal entries."""
    k = abs_cos.shape[0]
    if k < 2:
        return False, False
    vals = abs_cos[np.triu_indices(k, 1)]
    return bool((vals > threshold).any()), bool((vals > threshold).all())


@dataclass
class RankProfile:
    sigma: np.ndarray
    r_tau: int
    r_eta: int
    tau: float
    eta: float
    dead_columns: int


def numerical_rank(h, tau: float = 1e-4, eta: float = 0.01) -> RankProfile:
    h = as_tensor(h, "embedding matrix")
    sigma = svd(h).sigma
    dead = int((np.abs(h).max(axis=0) < _DEAD_COLUMN).sum())
    if sigma[0] <= 0:
        return RankProfile(sigma, 0, 0, tau, eta, dead)
    r_tau = int((sigma / sigma[0] >= tau).sum())
    energy = np.cumsum(sigma ** 2)
    r_eta = int(np.searchsorted(energy, (1.0 - eta) * energy[-1]) + 1)
    return RankProfile(sigma, r_tau, min(r_eta, sigma.size), tau, eta, dead)


class Regime(str, enum.Enum):
    UNDER_COMPLETE = "UnderComplete"
    SIMPLEX_THRESHOLD = "SimplexThreshold"
    INTERMEDIATE = "Intermediate"
    OVER_COMPLETE = "OverComplete"


def obtuse_regime(n: int, d: int) -> Regime:
    """Feasibility regime for n mutually obtuse unit vectors in R^d."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if n <= d:
        return Regime.UNDER_COMPLETE
    if n == d + 1:
        return Regime.SIMPLEX_THRESHOLD
    if n <= 2 * d:
        return Regime.INTERMEDIATE
    return Regime.OVER_COMPLETE


@dataclass
class GeometryReport:
    k_a: int
    effrank: float
    si: float
    wno_i: float
    ai: float
    r: int
    cosine: np.ndarray = field(repr=False)
    degenerate: bool = False
    dropped_rows: int = 0

    CSV_COLUMNS = ("k_a", "effrank", "si", "wno_i", "ai", "r", "degenerate", "dropped_rows")

    def row(self) -> dict:
        return {name: getattr(self, name) for name in self.CSV_COLUMNS}


def geometry_report(c, kind: str) -> GeometryReport:
    """All metrics for one feature matrix (raw rows; centring handled per kind)."""
    c = np.asarray(c, dtype=np.float64)
    k_a = c.shape[0] if c.ndim == 2 else 0
    if k_a == 0:
        return GeometryReport(0, math.nan, math.nan, math.nan, math.nan, 0, np.zeros((0, 0)), True)
    prepared = prepare_features(c, kind)
    effrank, flat = eff_rank_flagged(prepared)
    wno = wno_intrinsic_detail(c, kind)
    nonzero = np.linalg.norm(prepared, axis=1) > 0
    ai = alignment_index(prepared[nonzero]) if nonzero.any() else math.nan
    cos = cosine_matrix(prepared)[0] if nonzero.all() else np.full((k_a, k_a), math.nan)
    si = superposition_index(k_a, effrank) if not flat else math.nan
    return GeometryReport(k_a, effrank if not flat else 0.0, si, wno.wno, ai, wno.r, cos, flat,
                          wno.dropped_rows)


RANK_CSV_COLUMNS = ("r_tau", "r_eta", "tau", "eta", "dead_columns")
