"""Spectral relational clustering (CFRM): iterative eigendecomposition, associations and cluster chains."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, NamedTuple

import numpy as np

from clustering import DEFAULT_RESTARTS, ClusterIndicator, VigorousIndicator, kmeans, same_partition, to_vigorous
from core import DataMatrix, EntityMatrixGraph, concatenated_view, neighbors
from errors import BadStart, InvalidHyper, MissingIndicator, ShapeMismatch
from linalg import Which, sym_eig

logger = logging.getLogger(__name__)

DEFAULT_SWEEPS = 30


class CfrmInit(str, Enum):
    RANDOM = "random"
    KMEANS = "kmeans"


class UpdateOrder(str, Enum):
    JACOBI = "jacobi"  # every entity reads the previous sweep's indicators
    GAUSS_SEIDEL = "gauss-seidel"  # entities read indicators refreshed earlier in the same sweep


class AssociationMatrix(NamedTuple):
    matrix_id: int
    a: np.ndarray


class ChainLink(NamedTuple):
    matrix_id: int
    row_cluster: int
    col_cluster: int
    strength: float


@dataclass
class ClusterChain:
    links: list[ChainLink]
    flagged: bool = False  # chain ended on a zero-strength block

    def __len__(self) -> int:
        return len(self.links)


class CfrmStep(NamedTuple):
    """One entity update: Tr(C^T M C) against the sum of the k largest eigenvalues of M."""
    sweep: int
    entity: int
    relaxed_trace: float
    eigenvalue_sum: float


@dataclass
class CfrmResult:
    embeddings: dict[int, np.ndarray]
    indicators: dict[int, ClusterIndicator]
    vigorous: dict[int, VigorousIndicator]
    associations: dict[int, AssociationMatrix]
    trace_history: list[float] = field(default_factory=list)
    steps: list[CfrmStep] = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False


def _matrix_values(g: EntityMatrixGraph, xs: Mapping[int, np.ndarray] | None, m: int) -> np.ndarray:
    mat = g.matrix(m)
    if xs is None:
        return mat.values
    x = np.asarray(xs[m], dtype=np.float64)
    if x.shape != mat.values.shape:
        raise ShapeMismatch(f"matrix {m} has shape {x.shape}, graph declares {mat.values.shape}")
    return x


def _indicator(js: Mapping[int, VigorousIndicator], e: int, g: EntityMatrixGraph) -> np.ndarray:
    if e not in js:
        raise MissingIndicator(f"entity {e} has no current indicator")
    j = js[e].j
    if j.shape[0] != g.entity(e).count:
        raise ShapeMismatch(f"indicator of entity {e} has {j.shape[0]} rows, expected {g.entity(e).count}")
    return j


def build_m(
    g: EntityMatrixGraph,
    xs: Mapping[int, np.ndarray] | None,
    js: Mapping[int, VigorousIndicator],
    e: int,
) -> np.ndarray:
    """M^[e] = sum over matrices containing e of (X J_partner)(X J_partner)^T.

    A self-relation matrix contributes its row orientation once, using e's own indicator.
    """
    d = g.entity(e).count
    m_e = np.zeros((d, d))
    for m in neighbors(g, e):
        mat = g.matrix(m)
        x = _matrix_values(g, xs, m)
        if mat.rows == e:
            t = x @ _indicator(js, mat.cols, g)
        else:
            t = x.T @ _indicator(js, mat.rows, g)
        m_e += t @ t.T
    return (m_e + m_e.T) / 2.0


def association(x: DataMatrix | np.ndarray, j_r: VigorousIndicator | np.ndarray, j_c: VigorousIndicator | np.ndarray) -> AssociationMatrix:
    """A = J_r^T X J_c."""
    values = x.values if isinstance(x, DataMatrix) else np.asarray(x, dtype=np.float64)
    jr = j_r.j if isinstance(j_r, VigorousIndicator) else np.asarray(j_r, dtype=np.float64)
    jc = j_c.j if isinstance(j_c, VigorousIndicator) else np.asarray(j_c, dtype=np.float64)
    if values.ndim != 2 or jr.shape[0] != values.shape[0] or jc.shape[0] != values.shape[1]:
        raise ShapeMismatch(
            f"cannot associate X {values.shape} with indicators {jr.shape} and {jc.shape}"
        )
    matrix_id = x.id if isinstance(x, DataMatrix) else 0
    return AssociationMatrix(matrix_id, jr.T @ values @ jc)


def _balanced_random(d: int, k: int, rng: np.random.Generator) -> ClusterIndicator:
    return ClusterIndicator.from_assignments(rng.permutation(np.arange(d) % k), k)


def _initial_indicators(
    g: EntityMatrixGraph,
    ks: Mapping[int, int],
    init: CfrmInit,
    seed: int,
    restarts: int,
) -> dict[int, ClusterIndicator]:
    rng = np.random.default_rng(seed)
    indicators = {}
    for e in g.entity_ids:
        if init is CfrmInit.KMEANS:
            ind = kmeans(concatenated_view(g, e), ks[e], seed, restarts)
            if ind.degenerate:
                logger.warning(f"CFRM: k-means initialization of entity {e} is degenerate, using a random partition")
                ind = _balanced_random(g.entity(e).count, ks[e], rng)
        else:
            ind = _balanced_random(g.entity(e).count, ks[e], rng)
        indicators[e] = ind
    return indicators


def src_fit(
    g: EntityMatrixGraph,
    ks: Mapping[int, int] | None = None,
    init: CfrmInit = CfrmInit.RANDOM,
    sweeps: int = DEFAULT_SWEEPS,
    seed: int = 0,
    update: UpdateOrder = UpdateOrder.JACOBI,
    restarts: int = DEFAULT_RESTARTS,
    log: Callable[[str], None] | None = None,
) -> CfrmResult:
    """Alternate per-entity trace maximization and k-means until the partitions settle.

    Each sweep visits entities in ascending id order: build M^[e], take the k_e
    largest eigenvectors as C^[e] and cluster them into a new indicator. The run
    stops when a full sweep leaves every partition unchanged or after `sweeps`.
    """
    log = log or (lambda msg: None)
    if sweeps < 1:
        raise InvalidHyper(f"sweeps must be >= 1, got {sweeps}")
    ks = {e: (ks or {}).get(e, g.entity(e).k) for e in g.entity_ids}
    for e, k in ks.items():
        if not 1 <= k <= g.entity(e).count:
            raise InvalidHyper(f"entity {e}: k={k} is outside 1..{g.entity(e).count}")
    init = CfrmInit(init)
    update = UpdateOrder(update)

    indicators = _initial_indicators(g, ks, init, seed, restarts)
    js = {e: to_vigorous(ind) for e, ind in indicators.items()}
    result = CfrmResult(embeddings={}, indicators=indicators, vigorous=js, associations={})
    logger.info(f"CFRM: {len(ks)} entities, init={init.value}, update={update.value}, up to {sweeps} sweeps")

    for sweep in range(1, sweeps + 1):
        snapshot = dict(js)
        changed = False
        objective = 0.0
        for e in g.entity_ids:
            source = js if update is UpdateOrder.GAUSS_SEIDEL else snapshot
            m_e = build_m(g, None, source, e)
            values, c = sym_eig(m_e, ks[e], Which.LARGEST)
            result.steps.append(CfrmStep(sweep, e, float(np.sum(c * (m_e @ c))), float(values.sum())))
            result.embeddings[e] = c

            ind = kmeans(c, ks[e], seed, restarts)
            if ind.degenerate:
                logger.warning(f"CFRM sweep {sweep}: degenerate clustering of entity {e}, keeping previous partition")
                ind = indicators[e]
            elif not same_partition(ind, indicators[e]):
                changed = True
            indicators[e] = ind
            js[e] = to_vigorous(ind)
            objective += float(np.sum(js[e].j * (m_e @ js[e].j)))

        result.trace_history.append(objective)
        result.sweeps = sweep
        logger.debug(f"CFRM sweep {sweep}: objective={objective:.6g}, changed={changed}")
        log(f"sweep {sweep}: objective {objective:.6g}")
        if not changed:
            result.converged = True
            break

    result.associations = {
        m: association(g.matrix(m), js[g.matrix(m).rows], js[g.matrix(m).cols])
        for m in g.matrix_ids
    }
    logger.info(f"CFRM finished after {result.sweeps} sweeps (converged={result.converged})")
    return result


def extract_chains(
    g: EntityMatrixGraph,
    assocs: Mapping[int, AssociationMatrix | np.ndarray],
    start: tuple[int, int, int],
    max_len: int | None = None,
) -> ClusterChain:
    """Follow the strongest associations from a starting block across neighbouring matrices.

    From the last block, every unvisited matrix sharing one of its entities is a
    candidate; the shared entity's cluster is fixed and the partner cluster with the
    largest |A| is taken. Among candidates the strongest wins, ties going to the
    smaller matrix id and then the smaller cluster index.
    """
    def strengths(m: int) -> np.ndarray:
        a = assocs[m]
        return np.asarray(a.a if isinstance(a, AssociationMatrix) else a, dtype=np.float64)

    m0, u0, v0 = start
    if m0 not in assocs or m0 not in g.matrix_ids:
        raise BadStart(f"no association matrix for matrix {m0}")
    a0 = strengths(m0)
    if not (0 <= u0 < a0.shape[0] and 0 <= v0 < a0.shape[1]):
        raise BadStart(f"block ({u0}, {v0}) is outside matrix {m0}'s {a0.shape} associations")
    limit = len(g.matrix_ids) if max_len is None else max_len
    if limit < 1:
        raise BadStart(f"max_len must be >= 1, got {max_len}")

    links = [ChainLink(m0, u0, v0, float(a0[u0, v0]))]
    flagged = a0[u0, v0] == 0
    visited = {m0}
    while len(links) < limit and not flagged:
        last = links[-1]
        mat = g.matrix(last.matrix_id)
        anchors = {(mat.rows, last.row_cluster), (mat.cols, last.col_cluster)}
        candidates = []
        for entity, cluster in sorted(anchors):
            for m in neighbors(g, entity):
                if m in visited or m not in assocs:
                    continue
                a = strengths(m)
                nxt = g.matrix(m)
                if nxt.rows == entity:
                    v = int(np.argmax(np.abs(a[cluster, :])))
                    candidates.append((-abs(a[cluster, v]), m, v, ChainLink(m, cluster, v, float(a[cluster, v]))))
                else:
                    u = int(np.argmax(np.abs(a[:, cluster])))
                    candidates.append((-abs(a[u, cluster]), m, u, ChainLink(m, u, cluster, float(a[u, cluster]))))
        if not candidates:
            break
        best = min(candidates, key=lambda c: c[:3])
        if best[0] == 0:
            flagged = True
            break
        links.append(best[3])
        visited.add(best[1])
    return ClusterChain(links, bool(flagged))
