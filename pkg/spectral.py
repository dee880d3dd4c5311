"""Single-view spectral clustering and RatioCut evaluation."""
import logging
from typing import NamedTuple

import numpy as np

from clustering import DEFAULT_RESTARTS, ClusterIndicator, kmeans
from errors import EmptyCluster, LengthMismatch
from linalg import LaplacianPair, Normalization, SimilarityMatrix, Which, laplacian, sym_eig

logger = logging.getLogger(__name__)


class SpectralResult(NamedTuple):
    embedding: np.ndarray
    eigenvalues: np.ndarray
    indicator: ClusterIndicator


def _similarity_array(s: SimilarityMatrix | np.ndarray) -> np.ndarray:
    return np.asarray(s.s if isinstance(s, SimilarityMatrix) else s, dtype=np.float64)


def ratio_cut(s: SimilarityMatrix | np.ndarray, i: ClusterIndicator) -> float:
    """1/2 * sum over clusters of W(B_u, complement) / |B_u|."""
    arr = _similarity_array(s)
    if arr.shape[0] != i.n:
        raise LengthMismatch(f"similarity has {arr.shape[0]} nodes, partition has {i.n}")
    sizes = i.sizes
    if np.any(sizes == 0):
        raise EmptyCluster("RatioCut is undefined for empty clusters")
    member = i.as_binary
    cuts = np.einsum("iu,ij,ju->u", member, arr, 1.0 - member)
    return float(0.5 * np.sum(cuts / sizes))


def _smallest_pairs(l: LaplacianPair, k: int) -> tuple[np.ndarray, np.ndarray]:
    if l.normalization is Normalization.RANDOM_WALK:
        return sym_eig(l.l, k, Which.SMALLEST, b=np.diag(l.d))
    return sym_eig(l.l, k, Which.SMALLEST)


def spectral_embed(l: LaplacianPair, k: int) -> np.ndarray:
    """Eigenvectors of the k smallest eigenvalues of L (generalized with D for random-walk)."""
    return _smallest_pairs(l, k)[1]


def spectral_fit(
    s: SimilarityMatrix | np.ndarray,
    k: int,
    seed: int = 0,
    normalization: Normalization = Normalization.NONE,
    restarts: int = DEFAULT_RESTARTS,
) -> SpectralResult:
    """Laplacian, k smallest eigenvectors, then k-means on the rows."""
    pair = laplacian(s, normalization)
    values, vectors = _smallest_pairs(pair, k)
    embedding = vectors
    if pair.normalization is Normalization.SYMMETRIC:
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        embedding = vectors / np.where(norms > 0, norms, 1.0)
    indicator = kmeans(embedding, k, seed, restarts)
    logger.debug(f"Spectral clustering: n={embedding.shape[0]}, k={k}, eigenvalues={np.round(values, 6).tolist()}")
    return SpectralResult(embedding, values, indicator)


def spectral_cluster(
    s: SimilarityMatrix | np.ndarray,
    k: int,
    seed: int = 0,
    normalization: Normalization = Normalization.NONE,
    restarts: int = DEFAULT_RESTARTS,
) -> ClusterIndicator:
    return spectral_fit(s, k, seed, normalization, restarts).indicator
