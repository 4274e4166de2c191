import itertools
import math

import numpy as np
import pytest

from fmcsc.errors import ContractError
from fmcsc.evaluation import ari, clustering_accuracy, kmeans, nmi


def brute_force_acc(pred, truth):
    """Best matched fraction over every injective map from predicted to true labels."""
    pred_labels = sorted(set(pred))
    true_labels = sorted(set(truth))
    pad = true_labels + [None] * len(pred_labels)
    best = 0
    for image in itertools.permutations(pad, len(pred_labels)):
        mapping = dict(zip(pred_labels, image))
        best = max(best, sum(mapping[p] == t for p, t in zip(pred, truth)))
    return best / len(pred)


def pair_count_ari(pred, truth):
    n = len(pred)
    pairs = list(itertools.combinations(range(n), 2))
    same_p = [pred[i] == pred[j] for i, j in pairs]
    same_t = [truth[i] == truth[j] for i, j in pairs]
    index = sum(a and b for a, b in zip(same_p, same_t))
    a, b, total = sum(same_p), sum(same_t), len(pairs)
    expected = a * b / total
    return (index - expected) / ((a + b) / 2 - expected)


def entropy_nmi(pred, truth):
    n = len(pred)

    def h(labels):
        return -sum(c / n * math.log(c / n) for c in (labels.count(x) for x in set(labels)))

    mi = 0.0
    for p in set(pred):
        for t in set(truth):
            joint = sum(1 for a, b in zip(pred, truth) if a == p and b == t)
            if joint:
                mi += joint / n * math.log(joint * n / (pred.count(p) * truth.count(t)))
    denom = (h(list(pred)) + h(list(truth))) / 2
    return 0.0 if denom == 0 else mi / denom


def test_acc_examples():
    truth = [0, 1, 2, 2, 1, 0]
    assert clustering_accuracy(truth, truth) == 1.0
    assert clustering_accuracy([2, 0, 1, 1, 0, 2], truth) == 1.0
    assert clustering_accuracy([0, 0, 1, 1, 2], [1, 1, 0, 2, 2]) == pytest.approx(0.8)
    assert brute_force_acc([0, 0, 1, 1, 2], [1, 1, 0, 2, 2]) == pytest.approx(0.8)


def test_acc_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 13))
        k = int(rng.integers(1, 6))
        pred = rng.integers(0, k, size=n).tolist()
        truth = rng.integers(0, int(rng.integers(1, 6)), size=n).tolist()
        assert clustering_accuracy(pred, truth) == pytest.approx(brute_force_acc(pred, truth), abs=1e-12)


def test_nmi_examples():
    assert nmi([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]) == pytest.approx(1.0)
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)


def test_nmi_matches_entropy_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        pred = rng.integers(0, 4, size=15).tolist()
        truth = rng.integers(0, 3, size=15).tolist()
        assert nmi(pred, truth) == pytest.approx(entropy_nmi(pred, truth), abs=1e-12)


def test_ari_examples():
    assert ari([1, 1, 0, 0], [0, 0, 1, 1]) == pytest.approx(1.0)
    assert ari([0, 0, 0, 0], [0, 0, 1, 1]) == pytest.approx(0.0)
    # hand pair count: index 1, pred pairs 2, truth pairs 3, total 6 -> (1 - 1) / (2.5 - 1)
    assert ari([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert pair_count_ari([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(0.0, abs=1e-15)


def test_ari_matches_pair_count_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        pred = rng.integers(0, 3, size=10).tolist()
        truth = rng.integers(0, 3, size=10).tolist()
        assert ari(pred, truth) == pytest.approx(pair_count_ari(pred, truth), abs=1e-12)


def test_metrics_invariant_under_relabeling():
    rng = np.random.default_rng(3)
    for _ in range(100):
        pred = rng.integers(0, 4, size=20)
        truth = rng.integers(0, 4, size=20)
        perm = rng.permutation(4)
        for metric in (clustering_accuracy, nmi, ari):
            base = metric(pred, truth)
            assert metric(perm[pred], truth) == pytest.approx(base, abs=1e-12)
            assert metric(pred, perm[truth]) == pytest.approx(base, abs=1e-12)


def test_length_mismatch_raises():
    for metric in (clustering_accuracy, nmi, ari):
        with pytest.raises(ContractError):
            metric([0, 1], [0, 1, 1])


def test_kmeans_single_cluster_is_mean():
    h = np.random.default_rng(0).normal(size=(30, 4))
    result = kmeans(h, 1, seed=0)
    np.testing.assert_allclose(result.centers[0], h.mean(axis=0), atol=1e-12)
    assert (result.labels == 0).all()


def test_kmeans_k_equals_n_has_zero_inertia():
    h = np.random.default_rng(1).normal(size=(7, 3))
    result = kmeans(h, 7, seed=0)
    assert result.inertia == pytest.approx(0.0, abs=1e-12)
    assert sorted(result.labels.tolist()) == list(range(7))


def test_kmeans_too_many_clusters():
    with pytest.raises(ContractError):
        kmeans(np.zeros((3, 2)), 4)


def six_points():
    return np.array([[0.0, 0.0], [0.5, 0.2], [0.1, 0.6], [9.0, 9.0], [9.4, 8.7], [8.8, 9.5]])


def best_two_partition(x):
    n = len(x)
    best = (math.inf, None)
    for mask in range(1, 2 ** (n - 1)):
        groups = [[i for i in range(n) if (mask >> i & 1) == side] for side in (0, 1)]
        cost = sum(((x[g] - x[g].mean(0)) ** 2).sum() for g in groups)
        best = min(best, (cost, frozenset(map(frozenset, groups))), key=lambda t: t[0])
    return best


def test_kmeans_matches_exhaustive_two_partition():
    x = six_points()
    cost, groups = best_two_partition(x)
    result = kmeans(x, 2, seed=0)
    found = frozenset(frozenset(np.flatnonzero(result.labels == c).tolist()) for c in (0, 1))
    assert found == groups
    assert result.inertia == pytest.approx(cost, rel=1e-12)


def test_lloyd_inertia_never_increases():
    rng = np.random.default_rng(4)
    for run in range(50):
        h = rng.normal(size=(60, 3)) + rng.integers(0, 4, size=(60, 1)) * 3.0
        result = kmeans(h, int(rng.integers(2, 6)), seed=run, restarts=1)
        hist = np.array(result.history)
        assert (np.diff(hist) <= 1e-9 * hist[:-1]).all()
        assert result.inertia <= hist[-1] * (1 + 1e-12)


def test_kmeans_deterministic_in_seed():
    h = np.random.default_rng(5).normal(size=(40, 5))
    a, b = kmeans(h, 3, seed=11), kmeans(h, 3, seed=11)
    assert np.array_equal(a.labels, b.labels) and a.inertia == b.inertia


def test_kmeans_reseeds_empty_clusters():
    # two duplicated points and K=3 forces an empty cluster during Lloyd updates
    h = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]] * 5 + [[10.0, 10.0]])
    result = kmeans(h, 3, seed=0)
    assert len(set(result.labels.tolist())) == 3
    assert result.inertia == pytest.approx(0.0, abs=1e-12)
