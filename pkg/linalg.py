"""Dense numerical substrate: eigendecomposition, Cholesky, orthogonalization, kernels, Laplacians."""
import logging
from enum import Enum
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.spatial.distance import pdist, squareform

from errors import (
    ConvergenceFailure,
    DegenerateScale,
    InvalidHyper,
    NotPositiveDefinite,
    NumericalDivergence,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

AUTO_SIGMA = "auto"
SIGN_TOL = 1e-12
JITTER_START = 1e-10
JITTER_MAX = 1e-4
ORTHO_REFINE_TOL = 1e-12
ORTHO_PASSES = 3


class Which(str, Enum):
    SMALLEST = "smallest"
    LARGEST = "largest"


class Normalization(str, Enum):
    NONE = "none"
    SYMMETRIC = "symmetric"
    RANDOM_WALK = "random-walk"


class SimilarityMatrix(NamedTuple):
    s: np.ndarray
    sigma: float


class LaplacianPair(NamedTuple):
    l: np.ndarray
    d: np.ndarray
    normalization: Normalization = Normalization.NONE


class CholeskyResult(NamedTuple):
    factor: np.ndarray  # lower triangular
    jitter: float  # 0.0 when no regularization was needed


class Orthogonalized(NamedTuple):
    c: np.ndarray
    h_inv_t: np.ndarray  # frozen map: c = c_tilde @ h_inv_t
    jitter: float
    passes: int = 1


def _square(a: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        nonzero = np.flatnonzero(np.abs(col) > SIGN_TOL)
        if nonzero.size and col[nonzero[0]] < 0:
            vectors[:, j] = -col
    return vectors


def sym_eig(
    a: np.ndarray,
    k: int,
    which: Which,
    b: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """k extreme eigenpairs of a symmetric matrix.

    Args:
        a: Symmetric n x n array; symmetrized as (a + a.T) / 2.
        k: Number of eigenpairs, 1 <= k <= n.
        which: SMALLEST or LARGEST end of the spectrum.
        b: Optional symmetric positive-definite matrix for the generalized problem a v = lambda b v.

    Returns:
        (values, vectors) with values ascending and vectors as columns. The first
        component above 1e-12 in magnitude of every eigenvector is positive.
    """
    arr = _square(a, "a")
    n = arr.shape[0]
    if not 1 <= k <= n:
        raise InvalidHyper(f"k must be in 1..{n}, got {k}")
    sym = (arr + arr.T) / 2.0
    bsym = None
    if b is not None:
        barr = _square(b, "b")
        if barr.shape != arr.shape:
            raise ShapeMismatch(f"b has shape {barr.shape}, expected {arr.shape}")
        bsym = (barr + barr.T) / 2.0
    subset = (0, k - 1) if Which(which) is Which.SMALLEST else (n - k, n - 1)
    try:
        values, vectors = scipy.linalg.eigh(sym, bsym, subset_by_index=subset)
    except scipy.linalg.LinAlgError as e:
        raise ConvergenceFailure(f"eigensolver failed: {e}") from e
    except ValueError as e:
        raise NumericalDivergence(f"eigensolver input is not finite: {e}") from e
    return values, _fix_signs(np.array(vectors))


def cholesky(g: np.ndarray) -> CholeskyResult:
    """Lower Cholesky factor of a symmetric positive-definite Gram matrix.

    A failing factorization is retried with eps * I added, eps growing tenfold from
    1e-10 * trace(g) / k up to 1e-4 * trace(g) / k.
    """
    arr = _square(g, "g")
    sym = (arr + arr.T) / 2.0
    if not np.all(np.isfinite(sym)):
        raise NumericalDivergence("Gram matrix is not finite")
    try:
        return CholeskyResult(scipy.linalg.cholesky(sym, lower=True), 0.0)
    except scipy.linalg.LinAlgError:
        pass

    k = sym.shape[0]
    scale = float(np.trace(sym)) / k
    if scale <= 0:
        raise NotPositiveDefinite(f"Gram matrix has non-positive trace {scale * k:.3e}")
    eye = np.eye(k)
    steps = int(round(np.log10(JITTER_MAX / JITTER_START)))
    for step in range(steps + 1):
        jitter = JITTER_START * 10.0**step * scale
        try:
            factor = scipy.linalg.cholesky(sym + jitter * eye, lower=True)
        except scipy.linalg.LinAlgError:
            continue
        logger.warning(f"Cholesky needed jitter {jitter:.3e} (k={k})")
        return CholeskyResult(factor, jitter)
    raise NotPositiveDefinite(f"Gram matrix is not positive definite even with jitter {JITTER_MAX:.0e} * trace/k")


def orthogonalize(c_tilde: np.ndarray) -> Orthogonalized:
    """Map c_tilde to c = c_tilde @ h_inv_t with c.T @ c = I.

    One Cholesky pass loses orthogonality as kappa(c_tilde)^2 * eps, so the result is
    re-orthogonalized (at most ORTHO_PASSES times) while |c.T c - I|_F > ORTHO_REFINE_TOL.
    h_inv_t is the product of the per-pass inverse factors.
    """
    arr = np.asarray(c_tilde, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"c_tilde must be 2-D, got shape {arr.shape}")
    n, k = arr.shape
    if n < k:
        raise ShapeMismatch(f"orthogonalization needs n >= k, got n={n}, k={k}")
    eye = np.eye(k)
    c = arr
    h_inv_t = eye
    jitter = 0.0
    passes = 0
    while passes < ORTHO_PASSES:
        chol = cholesky(c.T @ c)
        step = scipy.linalg.solve_triangular(chol.factor, eye, lower=True).T
        c = c @ step
        h_inv_t = h_inv_t @ step
        jitter = max(jitter, chol.jitter)
        passes += 1
        if np.linalg.norm(c.T @ c - eye) <= ORTHO_REFINE_TOL:
            break
    if passes > 1:
        logger.debug(f"Orthogonalization took {passes} Cholesky passes (k={k})")
    return Orthogonalized(c, np.ascontiguousarray(h_inv_t), jitter, passes)


def gaussian_similarity(p: np.ndarray, sigma: float | str = AUTO_SIGMA) -> SimilarityMatrix:
    """Gaussian kernel S_ij = exp(-|p_i - p_j|^2 / (2 sigma^2)).

    `sigma="auto"` uses the median of the strictly positive pairwise distances.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ShapeMismatch(f"similarity needs at least 2 rows, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalDivergence("similarity input is not finite")
    dist = pdist(arr)
    if isinstance(sigma, str):
        if sigma.lower() != AUTO_SIGMA:
            raise InvalidHyper(f"sigma must be positive or '{AUTO_SIGMA}', got '{sigma}'")
        positive = dist[dist > 0]
        if positive.size == 0:
            raise DegenerateScale("all rows are identical; automatic sigma is undefined")
        scale = float(np.median(positive))
    else:
        scale = float(sigma)
        if not scale > 0:
            raise InvalidHyper(f"sigma must be positive, got {sigma}")
    s = np.exp(-squareform(dist**2) / (2.0 * scale**2))
    # keep entries in (0, 1] when far pairs underflow
    np.maximum(s, np.finfo(np.float64).tiny, out=s)
    np.fill_diagonal(s, 1.0)
    return SimilarityMatrix(s, scale)


def laplacian(s: SimilarityMatrix | np.ndarray, normalization: Normalization = Normalization.NONE) -> LaplacianPair:
    """Graph Laplacian L = D - S, or I - D^-1/2 S D^-1/2 when symmetric-normalized.

    The random-walk variant keeps L = D - S; consumers solve L v = lambda D v.
    """
    arr = _square(s.s if isinstance(s, SimilarityMatrix) else s, "s")
    normalization = Normalization(normalization)
    d = arr.sum(axis=1)
    if normalization is Normalization.SYMMETRIC:
        if np.any(d <= 0):
            raise DegenerateScale("symmetric normalization needs positive degrees")
        inv_sqrt = 1.0 / np.sqrt(d)
        lap = np.eye(arr.shape[0]) - inv_sqrt[:, None] * arr * inv_sqrt[None, :]
    else:
        lap = np.diag(d) - arr
    return LaplacianPair(lap, d, normalization)
