from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from core import DataMatrix, Entity, EntityMatrixGraph, build_graph
from synth import PlantSpec, generate

SMALL_PLANT_INI = """
[experiment]
method = dcmtf
seed = 3

[synth]
sizes = 16, 12, 10, 10
ks = 2, 2, 2, 2
schema = 1-2, 1-3, 4-2
pattern.1 = 1 0; 0 1
pattern.2 = 0 1; 1 0
pattern.3 = 1 0; 0 1

[dcmtf]
l = 4
epochs = 3
kmeans_restarts = 2
"""


def four_entities(sizes=(6, 5, 4, 3), k: int = 2) -> list[Entity]:
    return [Entity(i, d, f"e{i}", k) for i, d in enumerate(sizes, start=1)]


@pytest.fixture
def four_entity_graph() -> EntityMatrixGraph:
    """Four entities, three matrices on (e1, e2), (e1, e3), (e4, e2)."""
    rng = np.random.default_rng(7)
    entities = four_entities()
    counts = {e.id: e.count for e in entities}
    schema = [(1, 2), (1, 3), (4, 2)]
    matrices = [
        DataMatrix(m, r, c, rng.normal(size=(counts[r], counts[c])))
        for m, (r, c) in enumerate(schema, start=1)
    ]
    return build_graph(entities, matrices)


def small_plant_spec(seed: int = 0, k: int = 2, sizes=(16, 12, 10, 10)) -> PlantSpec:
    eye = np.eye(k)
    return PlantSpec(
        entity_sizes=list(sizes),
        ks=[k] * 4,
        schema=[(1, 2), (1, 3), (4, 2)],
        patterns=[eye, eye[::-1], np.roll(eye, 1, axis=1)],
        seed=seed,
    )


def plant_graph(spec: PlantSpec):
    matrices, truth = generate(spec)
    entities = [
        Entity(i, d, name, k)
        for i, (d, name, k) in enumerate(zip(spec.entity_sizes, spec.names(), spec.ks), start=1)
    ]
    return build_graph(entities, matrices), truth


@pytest.fixture
def small_plant():
    return plant_graph(small_plant_spec())


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    def _write(text: str = SMALL_PLANT_INI, name: str = "experiment.ini") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
