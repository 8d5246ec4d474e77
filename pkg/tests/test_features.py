import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from supergnn.errors import SingleClass, WrongDataset
from supergnn.features import (
    ConceptSpec,
    ProbeResult,
    active_classes,
    auc,
    class_centroids,
    concept_targets,
    fit_probe,
    probe_feature_matrix,
)
from supergnn.graphgen import Dataset, make_graph


def chain_dataset(types):
    n = len(types)
    x = np.zeros((n, 3))
    for i, t in enumerate(types):
        if t is not None:
            x[i, t] = 1.0
    g = make_graph(n, [(i, i + 1) for i in range(n - 1)], x, [0, 0, 0], tuple(types))
    return Dataset([g], ["test"], 0, "pairwise")


def triangle_dataset():
    g = make_graph(4, [(0, 1), (1, 2), (0, 2), (2, 3)], np.zeros((4, 1)), [0, 0])
    return Dataset([g], ["test"], 0, "conjunction")


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


# --------------------------------------------------------------- concepts

def test_concept_examples():
    ds = chain_dataset([2, None, 2])
    np.testing.assert_array_equal(concept_targets(ds, ConceptSpec("Is", 2)), [1, 0, 1])
    np.testing.assert_array_equal(concept_targets(ds, ConceptSpec("NextTo", 2)), [0, 1, 0])
    tri = triangle_dataset()
    assert concept_targets(tri, ConceptSpec("Has", 3)).tolist() == [1]
    assert concept_targets(tri, ConceptSpec("Has", 4)).tolist() == [0]
    np.testing.assert_array_equal(concept_targets(tri, ConceptSpec("Inside", 3)), [1, 1, 1, 0])


def test_wrong_dataset():
    with pytest.raises(WrongDataset):
        concept_targets(triangle_dataset(), ConceptSpec("Is", 0))
    with pytest.raises(WrongDataset):
        concept_targets(chain_dataset([0, 1]), ConceptSpec("Has", 3))
    with pytest.raises(ValueError):
        concept_targets(chain_dataset([0, 1]), ConceptSpec("Is", 7))


# -------------------------------------------------------------------- AUC

def test_auc_examples():
    assert auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert auc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5
    assert auc([0.9, 0.4, 0.35, 0.8], [1, 0, 1, 0]) == 0.5
    with pytest.raises(SingleClass):
        auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=30))
def test_auc_matches_pairwise_count(pairs):
    scores = [float(s) for s, _ in pairs]
    labels = [int(l) for _, l in pairs]
    if len(set(labels)) < 2:
        return
    assert auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-12)


# ------------------------------------------------------------------ probes

def test_probe_separable():
    z = np.array([[-1.0]] * 10 + [[1.0]] * 10)
    y = np.array([0] * 10 + [1] * 10)
    idx = np.arange(20)
    res = fit_probe(z, y, idx[::2], idx[1::2])
    assert res.auc == 1.0
    assert res.normal[0] > 0


def test_probe_single_class():
    z = np.ones((6, 2))
    with pytest.raises(SingleClass):
        fit_probe(z, [1, 1, 1, 0, 0, 0], [0, 1, 2], [3, 4, 5])
    with pytest.raises(SingleClass):
        fit_probe(z, [1, 0, 1, 0, 0, 0], [0, 1, 2], [3, 4, 5])


def test_probe_permutation_null():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((400, 4))
    y = (z[:, 0] + 0.3 * rng.standard_normal(400) > 0).astype(int)
    idx = np.arange(400)
    aucs = [fit_probe(z, rng.permutation(y), idx[:300], idx[300:]).auc for _ in range(50)]
    assert abs(np.mean(aucs) - 0.5) <= 0.05


def test_probe_recovers_bayes_direction():
    rng = np.random.default_rng(1)
    mu0, mu1 = np.array([0.0, 0.0]), np.array([1.0, 0.5])
    y = np.repeat([0, 1], 1000)
    z = rng.standard_normal((2000, 2)) + np.where(y[:, None] == 1, mu1, mu0)
    order = rng.permutation(2000)
    res = fit_probe(z, y, order[:1500], order[1500:])
    bayes = (mu1 - mu0) / np.linalg.norm(mu1 - mu0)
    angle = np.degrees(np.arccos(np.clip(res.unit_normal @ bayes, -1, 1)))
    assert angle <= 5.0


def test_probe_scale_invariant_auc():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((300, 3))
    y = (z @ [1.0, -0.5, 0.2] + rng.standard_normal(300) > 0).astype(int)
    idx = np.arange(300)
    a = fit_probe(z, y, idx[:200], idx[200:])
    # a fixed probe ranks scaled embeddings identically
    assert auc(7.5 * z[200:] @ a.normal + a.intercept, y[200:]) == a.auc
    # refitting differs only through the small ridge penalty
    b = fit_probe(7.5 * z, y, idx[:200], idx[200:])
    assert a.auc == pytest.approx(b.auc, abs=5e-3)
    np.testing.assert_allclose(a.unit_normal, b.unit_normal, atol=1e-3)


def test_heldout_auc_ignores_train_rows():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((200, 3))
    y = (z[:, 1] > 0).astype(int)
    res = fit_probe(z, y, np.arange(150), np.arange(150, 200))
    shuffled = z.copy()
    shuffled[:150] = shuffled[rng.permutation(150)]
    again = auc(shuffled[150:] @ res.normal + res.intercept, y[150:])
    assert again == res.auc


def test_probe_matrix_threshold_inclusive():
    probes = [ProbeResult(np.array([1.0, 0.0]), 0.0, a) for a in (0.59, 0.60, 0.95)]
    fm = probe_feature_matrix(probes)
    assert fm.k_a == 2 and fm.active_ids == [1, 2]
    assert fm.geometry_kind == "node_probe"


def test_probe_matrix_empty_and_scaled():
    flat = [ProbeResult(np.array([1.0, 2.0]), 0.0, 0.5) for _ in range(3)]
    assert probe_feature_matrix(flat).k_a == 0
    rng = np.random.default_rng(4)
    normals = rng.standard_normal((3, 5))
    a = probe_feature_matrix([ProbeResult(w, 1.0, 0.9) for w in normals], level="graph")
    b = probe_feature_matrix([ProbeResult(10 * w, -3.0, 0.9) for w in normals], level="graph")
    np.testing.assert_allclose(a.rows, b.rows, rtol=0, atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(a.rows, axis=1), 1.0, atol=1e-10)
    assert a.geometry_kind == "graph_probe"


def test_probe_matrix_skips_missing():
    fm = probe_feature_matrix([None, ProbeResult(np.array([0.0, 3.0]), 0.0, 0.8)], ids=[4, 7])
    assert fm.active_ids == [7]


# --------------------------------------------------------------- centroids

def test_centroid_mean_example():
    h = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = np.array([[1, 0], [1, 0]])
    fm = class_centroids(h, labels, np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(fm.raw, [[0.5, 0.5]])
    assert fm.active_ids == [0]


def test_activeness_rule():
    recall = np.array([[0.4, 0.0, 0.0],
                       [0.0, 0.5, 0.49],
                       [0.0, 0.5, 0.9]])
    assert active_classes(recall) == [1]
    recall[2, 1] = np.nan
    assert active_classes(recall) == [1]


def test_centroids_reordered_summation():
    rng = np.random.default_rng(5)
    h = rng.standard_normal((30, 4))
    labels = np.eye(3, dtype=int)[np.repeat([0, 1, 2], 10)]
    fm = class_centroids(h, labels, np.eye(3))
    for c in range(3):
        members = [i for i in range(30)[::-1] if labels[i, c] == 1]
        acc = np.zeros(4)
        for i in members:
            acc += h[i]
        np.testing.assert_allclose(fm.raw[c], acc / len(members), rtol=1e-13)


def test_centroid_linearity():
    rng = np.random.default_rng(6)
    h = rng.standard_normal((25, 3))
    labels = np.tile([1, 0], (25, 1))
    first, second = np.arange(10), np.arange(10, 25)
    whole = class_centroids(h, labels, np.eye(2)).raw[0]
    a = class_centroids(h[first], labels[first], np.eye(2)).raw[0]
    b = class_centroids(h[second], labels[second], np.eye(2)).raw[0]
    np.testing.assert_allclose(whole, (10 * a + 15 * b) / 25, rtol=0, atol=1e-12)


def test_centroid_scale():
    rng = np.random.default_rng(7)
    h = rng.standard_normal((12, 3))
    labels = np.eye(2, dtype=int)[np.arange(12) % 2]
    a = class_centroids(h, labels, np.eye(2))
    b = class_centroids(3.0 * h, labels, np.eye(2))
    np.testing.assert_allclose(b.raw, 3.0 * a.raw, rtol=1e-14)
    np.testing.assert_allclose(b.rows, a.rows, atol=1e-14)


def test_centroids_ignore_multi_hot_rows():
    h = np.array([[2.0, 0.0], [100.0, 100.0], [0.0, 4.0]])
    labels = np.array([[1, 0], [1, 1], [0, 1]])
    fm = class_centroids(h, labels, np.eye(2))
    np.testing.assert_array_equal(fm.raw, [[2.0, 0.0], [0.0, 4.0]])


def test_feature_matrix_csv(tmp_path):
    fm = class_centroids(np.array([[3.0, 4.0], [0.0, 2.0]]), np.eye(2, dtype=int),
                         np.array([[0.75, 0.0], [0.0, 1.0]]))
    fm.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "kind,level,concept_id,auc_or_recall,u0,u1"
    assert lines[1] == "centroid,graph,0,0.75,0.6,0.8"
