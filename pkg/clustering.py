"""k-means, cluster indicator conversions and partition quality metrics."""
import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import (
    adjusted_mutual_info_score,
    adjusted_rand_score,
    normalized_mutual_info_score,
    rand_score,
    silhouette_samples,
)

from errors import EmptyCluster, EmptyInput, InvalidHyper, LengthMismatch, NumericalDivergence, ShapeMismatch, SingleCluster

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 300
DEFAULT_RESTARTS = 10


@dataclass(frozen=True)
class ClusterIndicator:
    """Hard assignment of n instances to k clusters (ids 0..k-1)."""
    assignments: np.ndarray
    k: int
    degenerate: bool = False  # some cluster id has no member
    inertia: float | None = None

    @classmethod
    def from_assignments(cls, assignments, k: int | None = None, inertia: float | None = None) -> "ClusterIndicator":
        labels = np.asarray(assignments)
        if labels.ndim != 1:
            raise ShapeMismatch(f"assignments must be 1-D, got shape {labels.shape}")
        labels = labels.astype(np.int64)
        if k is None:
            k = int(labels.max()) + 1 if labels.size else 0
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ShapeMismatch(f"cluster ids must lie in 0..{k - 1}")
        sizes = np.bincount(labels, minlength=k)
        labels.setflags(write=False)
        return cls(labels, int(k), bool(np.any(sizes == 0)), inertia)

    @classmethod
    def from_labels(cls, labels) -> "ClusterIndicator":
        """Indicator from arbitrary class labels, renumbered 0..k-1 in sorted label order."""
        _, inverse = np.unique(np.asarray(labels), return_inverse=True)
        return cls.from_assignments(inverse.ravel())

    @property
    def n(self) -> int:
        return int(self.assignments.shape[0])

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    @property
    def as_binary(self) -> np.ndarray:
        return np.eye(self.k)[self.assignments]


class VigorousIndicator(NamedTuple):
    """Indicator scaled to orthonormal columns: J_iu = 1/sqrt(|B_u|) for members of cluster u."""
    j: np.ndarray

    @property
    def k(self) -> int:
        return int(self.j.shape[1])


class PartitionMetrics(NamedTuple):
    ri: float
    ari: float
    nmi: float
    ami: float
    silhouette: float | None = None


def _as_labels(i: "ClusterIndicator | np.ndarray") -> np.ndarray:
    if isinstance(i, ClusterIndicator):
        return i.assignments
    return np.asarray(i).ravel()


def kmeans(points: np.ndarray, k: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS) -> ClusterIndicator:
    """Lloyd k-means with k-means++ seeding; best of `restarts` runs by inertia.

    Runs stop at an assignment fixpoint or after 300 iterations. Empty clusters are
    reseeded to far points by scikit-learn; an indicator with fewer distinct groups
    than k (too few distinct points) comes back flagged degenerate.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        raise EmptyInput("k-means needs at least one point")
    n = arr.shape[0]
    if not 1 <= k <= n:
        raise InvalidHyper(f"k-means needs 1 <= k <= n (k={k}, n={n})")
    if restarts < 1:
        raise InvalidHyper(f"restarts must be >= 1, got {restarts}")
    if not np.all(np.isfinite(arr)):
        raise NumericalDivergence("k-means input is not finite")

    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=restarts,
        max_iter=KMEANS_MAX_ITER,
        tol=0.0,
        algorithm="lloyd",
        random_state=seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = model.fit_predict(arr)
    indicator = ClusterIndicator.from_assignments(labels, k, inertia=float(model.inertia_))
    if indicator.degenerate:
        logger.warning(f"k-means found {int(np.count_nonzero(indicator.sizes))} non-empty clusters out of {k}")
    return indicator


def to_vigorous(i: ClusterIndicator, allow_empty: bool = False) -> VigorousIndicator:
    """Vigorous form of an indicator; empty clusters become zero columns when allowed."""
    sizes = i.sizes
    if np.any(sizes == 0) and not allow_empty:
        empty = np.flatnonzero(sizes == 0).tolist()
        raise EmptyCluster(f"clusters {empty} have no members")
    scale = np.zeros(i.k)
    nonempty = sizes > 0
    scale[nonempty] = 1.0 / np.sqrt(sizes[nonempty])
    j = i.as_binary * scale[None, :]
    return VigorousIndicator(j)


def same_partition(a: ClusterIndicator | None, b: ClusterIndicator | None) -> bool:
    """True when two indicators group the instances identically, whatever their cluster ids."""
    if a is None or b is None or a.n != b.n:
        return False
    pairs = np.unique(np.stack([a.assignments, b.assignments]), axis=1)
    return len(np.unique(pairs[0])) == pairs.shape[1] == len(np.unique(pairs[1]))


def evaluate_partition(pred: "ClusterIndicator | np.ndarray", truth: "ClusterIndicator | np.ndarray") -> PartitionMetrics:
    """RI, ARI, NMI and AMI of a predicted partition against a reference.

    NMI and AMI normalize by the arithmetic mean of the two entropies.
    """
    p = _as_labels(pred)
    t = _as_labels(truth)
    if p.shape[0] != t.shape[0]:
        raise LengthMismatch(f"prediction has {p.shape[0]} labels, truth has {t.shape[0]}")
    if p.shape[0] == 0:
        raise EmptyInput("cannot evaluate an empty partition")
    return PartitionMetrics(
        ri=float(rand_score(t, p)),
        ari=float(adjusted_rand_score(t, p)),
        nmi=float(normalized_mutual_info_score(t, p, average_method="arithmetic")),
        ami=float(adjusted_mutual_info_score(t, p, average_method="arithmetic")),
    )


def silhouette(points: np.ndarray, i: ClusterIndicator) -> float:
    """Mean silhouette coefficient; singleton clusters and a = b = 0 points score 0."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    labels = _as_labels(i)
    if arr.shape[0] != labels.shape[0]:
        raise LengthMismatch(f"{arr.shape[0]} points but {labels.shape[0]} labels")
    present = np.unique(labels).size
    if i.k < 2 or present < 2:
        raise SingleCluster("silhouette needs at least two non-empty clusters")
    if present == arr.shape[0]:
        return 0.0
    return float(np.mean(silhouette_samples(arr, labels)))


def align_clusters(pred: ClusterIndicator, truth: ClusterIndicator) -> np.ndarray:
    """Map each predicted cluster to the truth cluster it overlaps most, one to one.

    Returns `mapping` with `mapping[predicted id] = truth id`. Both indicators must
    have the same k.
    """
    if pred.k != truth.k:
        raise ShapeMismatch(f"cannot align {pred.k} predicted clusters with {truth.k} true clusters")
    if pred.n != truth.n:
        raise LengthMismatch(f"prediction has {pred.n} labels, truth has {truth.n}")
    overlap = np.zeros((pred.k, truth.k), dtype=np.int64)
    np.add.at(overlap, (pred.assignments, truth.assignments), 1)
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    mapping = np.empty(pred.k, dtype=np.int64)
    mapping[rows] = cols
    return mapping
