import numpy as np
import pytest

from errors import DegenerateScale, InvalidHyper, NotPositiveDefinite
from linalg import (
    Normalization,
    Which,
    cholesky,
    gaussian_similarity,
    laplacian,
    orthogonalize,
    sym_eig,
)


def random_symmetric(n: int, seed: int) -> np.ndarray:
    a = np.random.default_rng(seed).normal(size=(n, n))
    return (a + a.T) / 2.0


def test_sym_eig_diagonal():
    values, vectors = sym_eig(np.diag([2.0, 1.0]), 2, Which.SMALLEST)
    np.testing.assert_allclose(values, [1.0, 2.0])
    np.testing.assert_allclose(vectors, [[0.0, 1.0], [1.0, 0.0]], atol=1e-12)


def test_sym_eig_sign_convention():
    values, vectors = sym_eig(np.eye(3), 1, Which.SMALLEST)
    np.testing.assert_allclose(values, [1.0])
    assert np.linalg.norm(vectors[:, 0]) == pytest.approx(1.0)
    first = vectors[np.flatnonzero(np.abs(vectors[:, 0]) > 1e-12)[0], 0]
    assert first > 0


@pytest.mark.parametrize("which", [Which.SMALLEST, Which.LARGEST])
def test_sym_eig_residual(which):
    a = random_symmetric(6, 11)
    values, vectors = sym_eig(a, 3, which)
    assert np.all(np.diff(values) >= 0)
    norm = np.linalg.norm(a)
    for lam, v in zip(values, vectors.T):
        assert np.linalg.norm(a @ v - lam * v) <= 1e-8 * norm
    np.testing.assert_allclose(vectors.T @ vectors, np.eye(3), atol=1e-12)
    full = np.linalg.eigvalsh(a)
    expected = full[:3] if which is Which.SMALLEST else full[-3:]
    np.testing.assert_allclose(values, expected, atol=1e-10)


def test_sym_eig_rejects_bad_k():
    with pytest.raises(InvalidHyper):
        sym_eig(np.eye(3), 0, Which.SMALLEST)
    with pytest.raises(InvalidHyper):
        sym_eig(np.eye(3), 4, Which.LARGEST)


def test_sym_eig_trace_minimization():
    a = random_symmetric(8, 3)
    values, _ = sym_eig(a, 3, Which.SMALLEST)
    rng = np.random.default_rng(4)
    for _ in range(20):
        q, _ = np.linalg.qr(rng.normal(size=(8, 3)))
        assert np.trace(q.T @ a @ q) >= values.sum() - 1e-8


def test_cholesky_identity_and_round_trip():
    np.testing.assert_array_equal(cholesky(np.eye(3)).factor, np.eye(3))
    g = np.array([[4.0, 2.0], [2.0, 3.0]])
    res = cholesky(g)
    assert res.jitter == 0.0
    np.testing.assert_allclose(res.factor @ res.factor.T, g, atol=1e-12)
    assert np.allclose(res.factor, np.tril(res.factor))
    assert np.all(np.diag(res.factor) > 0)


def test_cholesky_rank_one_needs_jitter():
    res = cholesky(np.ones((2, 2)))
    assert res.jitter > 0
    assert np.all(np.diag(res.factor) > 0)


def test_cholesky_zero_matrix_fails():
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.zeros((2, 2)))


def test_orthogonalize_cases():
    rng = np.random.default_rng(5)
    q, _ = np.linalg.qr(rng.normal(size=(10, 3)))
    np.testing.assert_allclose(orthogonalize(q).c, q, atol=1e-10)
    np.testing.assert_allclose(orthogonalize(2.0 * q).c, q, atol=1e-10)

    c = orthogonalize(rng.normal(size=(10, 3))).c
    assert np.linalg.norm(c.T @ c - np.eye(3)) <= 1e-6
    np.testing.assert_allclose(orthogonalize(c).c, c, atol=1e-10)


def test_orthogonalize_map_reproduces_output():
    c_tilde = np.random.default_rng(6).normal(size=(7, 2))
    ortho = orthogonalize(c_tilde)
    np.testing.assert_allclose(c_tilde @ ortho.h_inv_t, ortho.c)


def test_orthogonalize_ill_conditioned_input():
    rng = np.random.default_rng(11)
    q, _ = np.linalg.qr(rng.normal(size=(400, 4)))
    v, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    c_tilde = q @ np.diag([1.0, 1e-2, 1e-4, 1e-6]) @ v
    ortho = orthogonalize(c_tilde)
    assert ortho.jitter == 0.0
    assert ortho.passes >= 2
    assert np.linalg.norm(ortho.c.T @ ortho.c - np.eye(4)) <= 1e-10
    np.testing.assert_allclose(c_tilde @ ortho.h_inv_t, ortho.c, atol=1e-6)


def test_gaussian_similarity_closed_forms():
    s = gaussian_similarity(np.array([[1.0, 2.0], [1.0, 2.0]]), 1.0)
    np.testing.assert_array_equal(s.s, np.ones((2, 2)))

    p = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert gaussian_similarity(p, 5.0).s[0, 1] == pytest.approx(np.exp(-0.5), abs=1e-12)
    auto = gaussian_similarity(p)
    assert auto.sigma == pytest.approx(5.0)
    assert auto.s[1, 0] == pytest.approx(np.exp(-0.5), abs=1e-12)

    wide = gaussian_similarity(np.random.default_rng(0).normal(size=(5, 3)), 1e12)
    np.testing.assert_allclose(wide.s, 1.0, atol=1e-9)


def test_gaussian_similarity_invariants():
    p = np.random.default_rng(1).normal(size=(9, 4))
    s = gaussian_similarity(p).s
    np.testing.assert_allclose(s, s.T, atol=1e-12)
    np.testing.assert_array_equal(np.diag(s), 1.0)
    assert np.all(s > 0) and np.all(s <= 1)

    perm = np.random.default_rng(2).permutation(9)
    permuted = gaussian_similarity(p[perm]).s
    np.testing.assert_allclose(permuted, s[np.ix_(perm, perm)], atol=1e-12)


def test_gaussian_similarity_degenerate_auto_scale():
    with pytest.raises(DegenerateScale):
        gaussian_similarity(np.ones((4, 2)))


def test_laplacian_closed_forms():
    pair = laplacian(np.ones((2, 2)))
    np.testing.assert_array_equal(pair.l, [[1.0, -1.0], [-1.0, 1.0]])
    np.testing.assert_array_equal(pair.d, [2.0, 2.0])
    np.testing.assert_array_equal(laplacian(np.eye(3)).l, np.zeros((3, 3)))


def test_laplacian_psd_and_row_sums():
    s = gaussian_similarity(np.random.default_rng(3).normal(size=(12, 3)))
    pair = laplacian(s)
    np.testing.assert_allclose(pair.l.sum(axis=1), 0.0, atol=1e-9 * 12)
    rng = np.random.default_rng(4)
    for _ in range(100):
        x = rng.normal(size=12)
        x /= np.linalg.norm(x)
        assert x @ pair.l @ x >= -1e-9


def test_symmetric_normalized_spectrum():
    s = gaussian_similarity(np.random.default_rng(8).normal(size=(10, 2)))
    pair = laplacian(s, Normalization.SYMMETRIC)
    values = np.linalg.eigvalsh(pair.l)
    assert values[0] == pytest.approx(0.0, abs=1e-10)
    assert values[-1] <= 2.0 + 1e-10


def test_trace_of_orthonormal_is_nonnegative():
    pair = laplacian(gaussian_similarity(np.random.default_rng(9).normal(size=(8, 2))))
    q, _ = np.linalg.qr(np.random.default_rng(10).normal(size=(8, 3)))
    assert np.trace(q.T @ pair.l @ q) >= -1e-12
