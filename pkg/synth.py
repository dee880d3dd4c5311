"""Planted-structure synthetic data with permutation bookkeeping."""
import logging
from dataclasses import dataclass, field

import numpy as np

from clustering import ClusterIndicator, VigorousIndicator, to_vigorous
from core import DataMatrix, DataType
from errors import DanglingEntity, InfeasibleSpec, ShapeMismatch, UnknownEntity, UnknownMatrix

logger = logging.getLogger(__name__)

DEFAULT_STRENGTH = 100.0


@dataclass
class PlantSpec:
    """What to plant.

    `patterns[i]` is a k_r x k_c 0/1 mask for matrix i + 1 on `schema[i]`; planted
    associations are `strength * pattern`. `noise` adds Gaussian noise with standard
    deviation noise * (largest planted entry).
    """
    entity_sizes: list[int]
    ks: list[int]
    schema: list[tuple[int, int]]
    patterns: list[np.ndarray]
    strength: float = DEFAULT_STRENGTH
    seed: int = 0
    noise: float = 0.0
    entity_names: list[str] = field(default_factory=list)

    def names(self) -> list[str]:
        if self.entity_names:
            return list(self.entity_names)
        return [f"e{i}" for i in range(1, len(self.entity_sizes) + 1)]

    def validate(self) -> None:
        n = len(self.entity_sizes)
        if len(self.ks) != n:
            raise ShapeMismatch(f"{n} entity sizes but {len(self.ks)} cluster counts")
        if self.entity_names and len(self.entity_names) != n:
            raise ShapeMismatch(f"{n} entities but {len(self.entity_names)} names")
        for idx, (d, k) in enumerate(zip(self.entity_sizes, self.ks), start=1):
            if k < 1 or d < k:
                raise InfeasibleSpec(f"entity {idx}: cannot plant {k} non-empty clusters in {d} instances")
        if len(self.patterns) != len(self.schema):
            raise ShapeMismatch(f"{len(self.schema)} matrices but {len(self.patterns)} patterns")
        used = set()
        for m, ((r, c), pattern) in enumerate(zip(self.schema, self.patterns), start=1):
            for side in (r, c):
                if not 1 <= side <= n:
                    raise UnknownEntity(f"matrix {m} references unknown entity {side}")
            used.update((r, c))
            if np.shape(pattern) != (self.ks[r - 1], self.ks[c - 1]):
                raise ShapeMismatch(
                    f"pattern of matrix {m} has shape {np.shape(pattern)}, expected {(self.ks[r - 1], self.ks[c - 1])}"
                )
        missing = sorted(set(range(1, n + 1)) - used)
        if missing:
            raise DanglingEntity(f"entities {missing} appear in no matrix")
        if self.noise < 0:
            raise InfeasibleSpec(f"noise must be non-negative, got {self.noise}")


@dataclass
class PlantTruth:
    """Planted factors, stored in the observed (permuted) instance order."""
    indicators: dict[int, ClusterIndicator]
    vigorous: dict[int, VigorousIndicator]
    associations: dict[int, np.ndarray]
    row_perms: dict[int, np.ndarray]
    col_perms: dict[int, np.ndarray]
    entity_perms: dict[int, np.ndarray]
    unpermuted: dict[int, np.ndarray]  # J_r A J_c^T before permutation


def _cluster_sizes(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return 1 + rng.multinomial(d - k, np.full(k, 1.0 / k))


def generate(spec: PlantSpec) -> tuple[list[DataMatrix], PlantTruth]:
    """X^(m) = J_r (strength * pattern) J_c^T, then rows and columns permuted.

    Each entity gets one permutation, shared by every matrix it appears in, so
    instance i of an entity means the same thing across matrices.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = len(spec.entity_sizes)

    blocks_j: dict[int, np.ndarray] = {}
    labels: dict[int, np.ndarray] = {}
    for e in range(1, n + 1):
        d, k = spec.entity_sizes[e - 1], spec.ks[e - 1]
        labels[e] = np.repeat(np.arange(k), _cluster_sizes(d, k, rng))
        blocks_j[e] = to_vigorous(ClusterIndicator.from_assignments(labels[e], k)).j
    perms = {e: rng.permutation(spec.entity_sizes[e - 1]) for e in range(1, n + 1)}

    matrices: list[DataMatrix] = []
    associations, row_perms, col_perms, unpermuted = {}, {}, {}, {}
    for m, ((r, c), pattern) in enumerate(zip(spec.schema, spec.patterns), start=1):
        a = spec.strength * np.asarray(pattern, dtype=np.float64)
        base = blocks_j[r] @ a @ blocks_j[c].T
        observed = base[np.ix_(perms[r], perms[c])]
        if spec.noise > 0:
            scale = spec.noise * float(np.max(np.abs(base))) if base.size else 0.0
            observed = observed + rng.normal(0.0, scale, size=observed.shape)
        matrices.append(DataMatrix(m, r, c, observed, DataType.REAL))
        associations[m] = a
        row_perms[m] = perms[r]
        col_perms[m] = perms[c]
        unpermuted[m] = base

    indicators = {
        e: ClusterIndicator.from_assignments(labels[e][perms[e]], spec.ks[e - 1]) for e in range(1, n + 1)
    }
    truth = PlantTruth(
        indicators=indicators,
        vigorous={e: to_vigorous(ind) for e, ind in indicators.items()},
        associations=associations,
        row_perms=row_perms,
        col_perms=col_perms,
        entity_perms=perms,
        unpermuted=unpermuted,
    )
    logger.info(f"Planted {len(matrices)} matrices over {n} entities (seed={spec.seed}, strength={spec.strength})")
    return matrices, truth


def unpermute(x: DataMatrix, truth: PlantTruth) -> DataMatrix:
    """Undo the recorded row and column permutations of a generated matrix."""
    if x.id not in truth.row_perms:
        raise UnknownMatrix(f"no permutations recorded for matrix {x.id}")
    rp, cp = truth.row_perms[x.id], truth.col_perms[x.id]
    values = np.asarray(x.values)
    if values.shape != (rp.size, cp.size):
        raise ShapeMismatch(f"matrix {x.id} has shape {values.shape}, permutations expect {(rp.size, cp.size)}")
    restored = np.empty_like(values, dtype=np.float64)
    restored[np.ix_(rp, cp)] = values
    return DataMatrix(x.id, x.rows, x.cols, restored, x.datatype)


def four_entity_plant_spec(seed: int = 0, strength: float = DEFAULT_STRENGTH) -> PlantSpec:
    """Four entities of 400/200/240/240 instances, k = 4 each, three matrices.

    Matrices relate (e1, e2), (e1, e3) and (e4, e2). Patterns: identity; clusters
    swapped in pairs (0<->1, 2<->3); cyclic shift u -> u + 1.
    """
    k = 4
    identity = np.eye(k)
    swapped = identity[[1, 0, 3, 2]]
    shifted = np.roll(identity, 1, axis=1)
    return PlantSpec(
        entity_sizes=[400, 200, 240, 240],
        ks=[k] * 4,
        schema=[(1, 2), (1, 3), (4, 2)],
        patterns=[identity, swapped, shifted],
        strength=strength,
        seed=seed,
    )
