import numpy as np
import pytest

from conftest import four_entities
from core import DataMatrix, DataType, Entity, build_graph, concatenated_view, neighbors, view
from errors import BadBinary, DanglingEntity, DimensionMismatch, InvalidEntity, NoSuchEdge, UnknownEntity


def test_four_entity_graph_has_six_edges(four_entity_graph):
    assert len(four_entity_graph.edges) == 6
    assert four_entity_graph.entity_ids == [1, 2, 3, 4]
    assert four_entity_graph.matrix_ids == [1, 2, 3]


def test_neighbors_ascending(four_entity_graph):
    assert neighbors(four_entity_graph, 1) == [1, 2]
    assert neighbors(four_entity_graph, 2) == [1, 3]
    assert neighbors(four_entity_graph, 3) == [2]
    assert neighbors(four_entity_graph, 4) == [3]


def test_degree_sum_counts_self_relations_once():
    rng = np.random.default_rng(0)
    entities = [Entity(1, 4, "gene", 2), Entity(2, 3, "patient", 2)]
    x = rng.normal(size=(4, 4))
    matrices = [
        DataMatrix(1, 1, 1, x + x.T),
        DataMatrix(2, 1, 2, rng.normal(size=(4, 3))),
    ]
    g = build_graph(entities, matrices)
    self_relations = sum(1 for m in g.matrices if m.is_self_relation)
    assert len(g.edges) == 2 * len(g.matrices) - self_relations
    assert neighbors(g, 1) == [1, 2]
    assert g.partner(1, 1) == 1


def test_single_self_relation():
    x = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 1.0]])
    g = build_graph([Entity(1, 3, "e", 2)], [DataMatrix(1, 1, 1, x)])
    assert neighbors(g, 1) == [1]
    np.testing.assert_array_equal(view(g, 1, 1).data, x)


def test_dimension_mismatch():
    entities = [Entity(1, 5, "a", 2), Entity(2, 3, "b", 2)]
    with pytest.raises(DimensionMismatch):
        build_graph(entities, [DataMatrix(1, 1, 2, np.zeros((4, 3)))])


def test_dangling_entity():
    entities = four_entities()
    with pytest.raises(DanglingEntity):
        build_graph(entities, [DataMatrix(1, 1, 2, np.zeros((6, 5)))])


def test_bad_binary():
    entities = [Entity(1, 2, "a", 1), Entity(2, 2, "b", 1)]
    values = np.array([[0.0, 1.0], [0.5, 1.0]])
    with pytest.raises(BadBinary):
        build_graph(entities, [DataMatrix(1, 1, 2, values, DataType.BINARY)])


def test_unknown_entity_and_invalid_k():
    with pytest.raises(UnknownEntity):
        build_graph([Entity(1, 2, "a", 1)], [DataMatrix(1, 1, 9, np.zeros((2, 2)))])
    with pytest.raises(InvalidEntity):
        build_graph([Entity(1, 2, "a", 3)], [DataMatrix(1, 1, 1, np.zeros((2, 2)))])


def test_view_orientation(four_entity_graph):
    x = four_entity_graph.matrix(1).values
    np.testing.assert_array_equal(view(four_entity_graph, 1, 1).data, x)
    np.testing.assert_array_equal(view(four_entity_graph, 2, 1).data, x.T)
    np.testing.assert_array_equal(view(four_entity_graph, 1, 1).data.T, view(four_entity_graph, 2, 1).data)
    with pytest.raises(NoSuchEdge):
        view(four_entity_graph, 3, 1)


def test_concatenated_view_follows_neighbor_order(four_entity_graph):
    cat = concatenated_view(four_entity_graph, 1)
    assert cat.shape == (6, 5 + 4)
    np.testing.assert_array_equal(cat[:, :5], four_entity_graph.matrix(1).values)
    np.testing.assert_array_equal(cat[:, 5:], four_entity_graph.matrix(2).values)


def test_graph_values_are_read_only(four_entity_graph):
    with pytest.raises(ValueError):
        four_entity_graph.matrix(1).values[0, 0] = 1.0


def test_build_graph_is_deterministic(four_entity_graph):
    again = build_graph(four_entity_graph.entities, four_entity_graph.matrices)
    assert again.edges == four_entity_graph.edges
    for a, b in zip(again.matrices, four_entity_graph.matrices):
        np.testing.assert_array_equal(a.values, b.values)
