import numpy as np
import pytest
from scipy.special import gammaln

from clustering import (
    ClusterIndicator,
    align_clusters,
    evaluate_partition,
    kmeans,
    same_partition,
    silhouette,
    to_vigorous,
)
from errors import EmptyCluster, EmptyInput, InvalidHyper, LengthMismatch, ShapeMismatch, SingleCluster


def contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai.ravel(), bi.ravel()), 1)
    return table


def entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def reference_metrics(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float, float]:
    n = a.size
    table = contingency(a, b)
    rows, cols = table.sum(axis=1), table.sum(axis=0)

    same_a = a[:, None] == a[None, :]
    same_b = b[:, None] == b[None, :]
    upper = np.triu_indices(n, 1)
    ri = float(np.mean(same_a[upper] == same_b[upper]))

    comb = lambda x: x * (x - 1) / 2.0
    index = comb(table).sum()
    expected = comb(rows).sum() * comb(cols).sum() / comb(n)
    maximum = (comb(rows).sum() + comb(cols).sum()) / 2.0
    ari = float((index - expected) / (maximum - expected))

    nz = table > 0
    mi = float(np.sum(table[nz] / n * np.log(n * table[nz] / np.outer(rows, cols)[nz])))
    h_a, h_b = entropy(rows), entropy(cols)
    nmi = mi / ((h_a + h_b) / 2.0)

    emi = 0.0
    for ai in rows:
        for bj in cols:
            for nij in range(int(max(1, ai + bj - n)), int(min(ai, bj)) + 1):
                log_p = (
                    gammaln(ai + 1) + gammaln(bj + 1) + gammaln(n - ai + 1) + gammaln(n - bj + 1)
                    - gammaln(n + 1) - gammaln(nij + 1) - gammaln(ai - nij + 1)
                    - gammaln(bj - nij + 1) - gammaln(n - ai - bj + nij + 1)
                )
                emi += nij / n * np.log(n * nij / (ai * bj)) * np.exp(log_p)
    ami = (mi - emi) / ((h_a + h_b) / 2.0 - emi)
    return ri, ari, nmi, float(ami)


def test_kmeans_trivial_cases():
    points = np.array([[0.0], [5.0], [10.0]])
    every = kmeans(points, 3, seed=0)
    assert sorted(every.assignments.tolist()) == [0, 1, 2]
    assert every.inertia == pytest.approx(0.0)

    single = kmeans(points, 1, seed=0)
    assert single.assignments.tolist() == [0, 0, 0]
    assert single.inertia == pytest.approx(50.0)


def test_kmeans_rejects_bad_input():
    with pytest.raises(InvalidHyper):
        kmeans(np.zeros((3, 2)), 0)
    with pytest.raises(InvalidHyper):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(EmptyInput):
        kmeans(np.zeros((0, 2)), 1)


def test_kmeans_identical_points_are_degenerate():
    ind = kmeans(np.ones((5, 2)), 2, seed=0)
    assert ind.degenerate


def test_kmeans_is_deterministic_per_seed():
    points = np.random.default_rng(0).normal(size=(40, 3))
    a = kmeans(points, 4, seed=9)
    b = kmeans(points, 4, seed=9)
    np.testing.assert_array_equal(a.assignments, b.assignments)


def test_kmeans_reaches_global_optimum_on_separated_blobs():
    rng = np.random.default_rng(1)
    centers = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]])
    points = np.repeat(centers, 4, axis=0) + rng.normal(scale=0.5, size=(12, 2))
    found = kmeans(points, 3, seed=0, restarts=10)

    sq = np.sum(points ** 2, axis=1)
    best = np.inf
    powers = 3 ** np.arange(12)
    for start in range(0, 3 ** 12, 65536):
        codes = np.arange(start, min(start + 65536, 3 ** 12))
        labels = (codes[:, None] // powers[None, :]) % 3
        total = np.zeros(codes.size)
        for c in range(3):
            mask = (labels == c).astype(np.float64)
            count = mask.sum(axis=1)
            sums = mask @ points
            ssq = mask @ sq
            safe = np.where(count > 0, count, 1.0)
            total += ssq - np.sum(sums ** 2, axis=1) / safe
        best = min(best, float(total.min()))
    assert found.inertia == pytest.approx(best, rel=1e-9, abs=1e-9)


def test_to_vigorous_scaling():
    ind = ClusterIndicator.from_assignments([0, 0, 1], 2)
    j = to_vigorous(ind).j
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(j, [[s, 0.0], [s, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(j.T @ j, np.eye(2), atol=1e-12)


def test_to_vigorous_empty_cluster():
    ind = ClusterIndicator.from_assignments([0, 0, 1], 3)
    assert ind.degenerate
    with pytest.raises(EmptyCluster):
        to_vigorous(ind)
    j = to_vigorous(ind, allow_empty=True).j
    np.testing.assert_array_equal(j[:, 2], 0.0)


def test_indicator_rejects_out_of_range_ids():
    with pytest.raises(ShapeMismatch):
        ClusterIndicator.from_assignments([0, 2], 2)


def test_from_labels_renumbers_in_sorted_order():
    ind = ClusterIndicator.from_labels(["b", "a", "b"])
    assert ind.assignments.tolist() == [1, 0, 1]
    assert ind.k == 2


def test_same_partition_ignores_ids():
    a = ClusterIndicator.from_assignments([0, 0, 1, 2], 3)
    b = ClusterIndicator.from_assignments([2, 2, 0, 1], 3)
    c = ClusterIndicator.from_assignments([0, 1, 1, 2], 3)
    assert same_partition(a, b)
    assert not same_partition(a, c)
    assert not same_partition(a, None)


def test_metrics_match_reference_formulas():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(10, 40))
        a = rng.integers(0, int(rng.integers(2, 5)), size=n)
        b = rng.integers(0, int(rng.integers(2, 5)), size=n)
        if np.unique(a).size < 2 or np.unique(b).size < 2:
            continue
        got = evaluate_partition(b, a)
        ri, ari, nmi, ami = reference_metrics(a, b)
        assert got.ri == pytest.approx(ri, abs=1e-10)
        assert got.ari == pytest.approx(ari, abs=1e-10)
        assert got.nmi == pytest.approx(nmi, abs=1e-10)
        assert got.ami == pytest.approx(ami, abs=1e-8)


def test_metrics_of_identical_partitions():
    labels = np.array([0, 0, 1, 1, 2, 2])
    m = evaluate_partition(labels, labels)
    assert m.ri == pytest.approx(1.0)
    assert m.ari == pytest.approx(1.0)
    assert m.nmi == pytest.approx(1.0)
    assert m.ami == pytest.approx(1.0)


def test_adjusted_metrics_have_zero_null_mean():
    rng = np.random.default_rng(3)
    aris, amis = [], []
    for _ in range(200):
        a = rng.integers(0, 3, size=100)
        b = rng.integers(0, 3, size=100)
        m = evaluate_partition(a, b)
        aris.append(m.ari)
        amis.append(m.ami)
    assert abs(np.mean(aris)) <= 0.02
    assert abs(np.mean(amis)) <= 0.02


def test_metrics_symmetry_and_relabel_invariance():
    rng = np.random.default_rng(4)
    a = rng.integers(0, 3, size=30)
    b = rng.integers(0, 4, size=30)
    ab, ba = evaluate_partition(a, b), evaluate_partition(b, a)
    for x, y in zip(ab[:4], ba[:4]):
        assert x == pytest.approx(y, abs=1e-12)
    relabeled = np.array([2, 0, 1])[a]
    again = evaluate_partition(relabeled, b)
    for x, y in zip(ab[:4], again[:4]):
        assert x == pytest.approx(y, abs=1e-12)


def test_metrics_length_mismatch():
    with pytest.raises(LengthMismatch):
        evaluate_partition(np.zeros(3), np.zeros(4))


def test_silhouette_closed_form():
    points = np.array([[0.0], [1.0], [10.0], [11.0]])
    ind = ClusterIndicator.from_assignments([0, 0, 1, 1], 2)
    expected = np.mean([1 - 1 / 10.5, 1 - 1 / 9.5, 1 - 1 / 9.5, 1 - 1 / 10.5])
    assert silhouette(points, ind) == pytest.approx(expected)


def test_silhouette_edge_cases():
    with pytest.raises(SingleCluster):
        silhouette(np.zeros((3, 1)), ClusterIndicator.from_assignments([0, 0, 0], 1))
    singletons = ClusterIndicator.from_assignments([0, 1], 2)
    assert silhouette(np.array([[0.0], [1.0]]), singletons) == 0.0


def test_align_clusters():
    truth = ClusterIndicator.from_assignments([0, 0, 1, 1, 2, 2], 3)
    pred = ClusterIndicator.from_assignments([2, 2, 0, 0, 1, 1], 3)
    mapping = align_clusters(pred, truth)
    assert mapping.tolist() == [1, 2, 0]
    np.testing.assert_array_equal(mapping[pred.assignments], truth.assignments)
    with pytest.raises(ShapeMismatch):
        align_clusters(ClusterIndicator.from_assignments([0, 1, 0, 1, 0, 1], 2), truth)
