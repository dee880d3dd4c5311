"""Entity-matrix data model: matrices, entities, the relationship graph and oriented views."""
import logging
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

from errors import (
    BadBinary,
    ConfigError,
    DanglingEntity,
    DimensionMismatch,
    InvalidEntity,
    NoSuchEdge,
    ShapeMismatch,
    UnknownEntity,
    UnknownMatrix,
)

logger = logging.getLogger(__name__)


class DataType(str, Enum):
    REAL = "real"
    BINARY = "binary"


class Entity(NamedTuple):
    """An entity type; its instances index rows or columns of matrices."""
    id: int  # 1-based
    count: int  # d_e, number of instances
    name: str
    k: int  # requested number of clusters


class DataMatrix(NamedTuple):
    """A relational matrix between a row entity and a column entity."""
    id: int  # 1-based
    rows: int  # row entity id
    cols: int  # column entity id
    values: np.ndarray
    datatype: DataType = DataType.REAL

    @property
    def is_self_relation(self) -> bool:
        return self.rows == self.cols


class MatrixView(NamedTuple):
    """A matrix oriented so that the instances of `entity` are its rows."""
    entity: int
    matrix: int
    data: np.ndarray


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


class EntityMatrixGraph:
    """Bipartite graph binding entities to the matrices they appear in.

    Built with `build_graph`, never mutated afterwards. Edges are (entity, matrix)
    pairs; a self-relation matrix contributes a single edge.
    """

    def __init__(self, entities: Iterable[Entity], matrices: Iterable[DataMatrix]) -> None:
        self._entities: dict[int, Entity] = {e.id: e for e in sorted(entities, key=lambda e: e.id)}
        self._matrices: dict[int, DataMatrix] = {m.id: m for m in sorted(matrices, key=lambda m: m.id)}
        edges = set()
        for mat in self._matrices.values():
            edges.add((mat.rows, mat.id))
            edges.add((mat.cols, mat.id))
        self.edges: tuple[tuple[int, int], ...] = tuple(sorted(edges))
        self._neighbors: dict[int, list[int]] = {e: [] for e in self._entities}
        for e, m in self.edges:
            self._neighbors[e].append(m)

    @property
    def entities(self) -> list[Entity]:
        return list(self._entities.values())

    @property
    def matrices(self) -> list[DataMatrix]:
        return list(self._matrices.values())

    @property
    def entity_ids(self) -> list[int]:
        return list(self._entities)

    @property
    def matrix_ids(self) -> list[int]:
        return list(self._matrices)

    def entity(self, e: int) -> Entity:
        try:
            return self._entities[e]
        except KeyError:
            raise UnknownEntity(f"entity {e} does not exist") from None

    def entity_by_name(self, name: str) -> Entity:
        for ent in self._entities.values():
            if ent.name == name:
                return ent
        raise UnknownEntity(f"entity '{name}' does not exist")

    def matrix(self, m: int) -> DataMatrix:
        try:
            return self._matrices[m]
        except KeyError:
            raise UnknownMatrix(f"matrix {m} does not exist") from None

    def has_edge(self, e: int, m: int) -> bool:
        return m in self._neighbors.get(e, ())

    def degree(self, e: int) -> int:
        return len(neighbors(self, e))

    def partner(self, e: int, m: int) -> int:
        """Entity on the other side of matrix m from e (e itself for a self-relation)."""
        mat = self.matrix(m)
        if mat.rows == e:
            return mat.cols
        if mat.cols == e:
            return mat.rows
        raise NoSuchEdge(f"entity {e} is not part of matrix {m}")

    def __repr__(self) -> str:
        return f"EntityMatrixGraph(entities={len(self._entities)}, matrices={len(self._matrices)}, edges={len(self.edges)})"


def build_graph(entities: list[Entity], matrices: list[DataMatrix]) -> EntityMatrixGraph:
    """Validate entities and matrices and bind them into a graph."""
    by_id: dict[int, Entity] = {}
    for ent in entities:
        if ent.id in by_id:
            raise InvalidEntity(f"duplicate entity id {ent.id}")
        if ent.k < 1 or ent.count < ent.k:
            raise InvalidEntity(
                f"entity '{ent.name}' needs d_e >= k_e >= 1 (d_e={ent.count}, k_e={ent.k})"
            )
        by_id[ent.id] = ent

    checked: list[DataMatrix] = []
    seen_ids: set[int] = set()
    for mat in matrices:
        if mat.id in seen_ids:
            raise ConfigError(f"duplicate matrix id {mat.id}")
        seen_ids.add(mat.id)
        for side in (mat.rows, mat.cols):
            if side not in by_id:
                raise UnknownEntity(f"matrix {mat.id} references unknown entity {side}")
        values = np.asarray(mat.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeMismatch(f"matrix {mat.id} must be 2-D, got {values.ndim}-D")
        expected = (by_id[mat.rows].count, by_id[mat.cols].count)
        if values.shape != expected:
            raise DimensionMismatch(
                f"matrix {mat.id} has shape {values.shape}, entities declare {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigError(f"matrix {mat.id} contains non-finite values")
        datatype = DataType(mat.datatype)
        if datatype is DataType.BINARY and not np.all((values == 0) | (values == 1)):
            raise BadBinary(f"matrix {mat.id} is declared binary but has values outside {{0, 1}}")
        checked.append(DataMatrix(mat.id, mat.rows, mat.cols, _frozen(values), datatype))

    used = {mat.rows for mat in checked} | {mat.cols for mat in checked}
    for ent in by_id.values():
        if ent.id not in used:
            raise DanglingEntity(f"entity '{ent.name}' appears in no matrix")

    graph = EntityMatrixGraph(by_id.values(), checked)
    logger.debug(f"Built {graph!r}")
    return graph


def view(g: EntityMatrixGraph, e: int, m: int) -> MatrixView:
    """Matrix m oriented with entity e on the rows."""
    if not g.has_edge(e, m):
        raise NoSuchEdge(f"({e}, {m}) is not an edge of the graph")
    mat = g.matrix(m)
    data = mat.values if mat.rows == e else mat.values.T
    return MatrixView(e, m, data)


def neighbors(g: EntityMatrixGraph, e: int) -> list[int]:
    """Matrices containing entity e, ascending by id."""
    g.entity(e)
    return list(g._neighbors[e])


def concatenated_view(g: EntityMatrixGraph, e: int) -> np.ndarray:
    """Column-wise concatenation of every view of entity e, in neighbor order."""
    return np.hstack([view(g, e, m).data for m in neighbors(g, e)])
