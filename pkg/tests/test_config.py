from pathlib import Path

import numpy as np
import pytest

from config import ExperimentConfig
from conftest import SMALL_PLANT_INI
from core import DataType
from dcmtf import DcmtfVariant, ParamRange
from errors import ConfigError, InvalidHyper, IoError
from linalg import Normalization
from matrix_io import MatrixFormat
from synth import generate


def test_small_plant_config(write_config):
    cfg = ExperimentConfig(write_config())
    assert cfg.method() == "dcmtf"
    assert cfg.seed() == 3
    assert cfg.variant() is DcmtfVariant.FULL

    spec = cfg.plant_spec()
    assert spec.entity_sizes == [16, 12, 10, 10]
    assert spec.ks == [2, 2, 2, 2]
    assert spec.schema == [(1, 2), (1, 3), (4, 2)]
    np.testing.assert_array_equal(spec.patterns[1], [[0.0, 1.0], [1.0, 0.0]])
    assert spec.seed == 3
    assert spec.noise == 0.0

    hyper = cfg.hyper()
    assert (hyper.l, hyper.epochs, hyper.kmeans_restarts, hyper.seed) == (4, 3, 2, 3)
    assert hyper.sigma == "auto"


def test_missing_file():
    with pytest.raises(IoError):
        ExperimentConfig("/nonexistent/experiment.ini")


def test_typed_options_reject_bad_values():
    cfg = ExperimentConfig.from_string("[experiment]\nseed = three\nmethod = magic\nreconstructions = maybe\n")
    with pytest.raises(ConfigError):
        cfg.seed()
    with pytest.raises(ConfigError):
        cfg.method()
    with pytest.raises(ConfigError):
        cfg.Reconstructions.get()


def test_blank_options_read_as_unset():
    cfg = ExperimentConfig.from_string("[experiment]\nseed =\n")
    assert cfg.Seed.get() is None
    assert cfg.seed() == 0
    assert cfg.method() == "dcmtf"


def test_entity_and_matrix_sections(tmp_path):
    text = """
[entity:genes]
count = 5
k = 2
labels = genes.labels.csv

[entity:patients]
k = 3

[matrix:expr]
rows = genes
cols = patients
path = data/expr.csv
format = csv
datatype = binary
"""
    cfg = ExperimentConfig.from_string(text, base_dir=tmp_path)
    genes, patients = cfg.entities()
    assert (genes.name, genes.count, genes.k) == ("genes", 5, 2)
    assert genes.labels == tmp_path / "genes.labels.csv"
    assert patients.count is None and patients.labels is None

    (expr,) = cfg.matrices()
    assert (expr.rows, expr.cols) == ("genes", "patients")
    assert expr.path == tmp_path / "data" / "expr.csv"
    assert expr.fmt is MatrixFormat.CSV
    assert expr.datatype is DataType.BINARY


def test_incomplete_sections():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[entity:genes]\ncount = 5\n").entities()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[matrix:m]\nrows = a\ncols = b\n").matrices()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[matrix:m]\nrows = a\ncols = b\npath = x\nformat = xls\n").matrices()


def test_four_entity_preset_and_overrides():
    cfg = ExperimentConfig.from_string("[synth]\npreset = four-entity\nstrength = 5\nnoise = 0.1\nseed = 9\nnames = a, b, c, d\n")
    spec = cfg.plant_spec()
    assert spec.entity_sizes == [400, 200, 240, 240]
    assert spec.strength == 5.0
    assert spec.noise == 0.1
    assert spec.seed == 9
    assert spec.names() == ["a", "b", "c", "d"]

    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[synth]\npreset = other\n").plant_spec()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[synth]\nsizes = 4, 4\n").plant_spec()
    assert ExperimentConfig.from_string("[experiment]\nseed = 1\n").plant_spec() is None


def test_zero_strength_and_noise_are_kept():
    cfg = ExperimentConfig.from_string("[synth]\npreset = four-entity\nstrength = 0\nnoise = 0\n")
    spec = cfg.plant_spec()
    assert spec.strength == 0.0
    assert spec.noise == 0.0
    matrices, _ = generate(spec)
    assert all(not np.any(m.values) for m in matrices)


def test_save_and_reload(tmp_path):
    cfg = ExperimentConfig.from_string(SMALL_PLANT_INI)
    cfg.Seed.set(11)
    path = cfg.save(tmp_path / "out" / "experiment.ini")
    loaded = ExperimentConfig(path)
    assert loaded.seed() == 11
    assert loaded.base_dir == path.resolve().parent
    assert loaded.to_dict() == cfg.to_dict()


def test_copy_is_independent():
    cfg = ExperimentConfig.from_string(SMALL_PLANT_INI)
    dup = cfg.copy()
    dup.Seed.set(42)
    assert cfg.seed() == 3
    assert dup.seed() == 42


def test_hyper_options():
    cfg = ExperimentConfig.from_string("[dcmtf]\nsigma = 0.5\nnormalization = Symmetric\nlr = 0.01\n")
    hyper = cfg.hyper()
    assert hyper.sigma == 0.5
    assert hyper.normalization is Normalization.SYMMETRIC
    assert hyper.lr == 0.01
    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[dcmtf]\nnormalization = sideways\n").hyper()
    with pytest.raises(InvalidHyper):
        ExperimentConfig.from_string("[dcmtf]\nl = 0\n").hyper()


def test_search_space():
    cfg = ExperimentConfig.from_string("[search]\nbudget = 3\nseed = 1\nlr = 1e-4..1e-2 log\nl = 4, 8\nepochs = 2..6\nsigma = auto, 0.5\n")
    space = cfg.search_space()
    assert cfg.search_budget() == 3
    assert space["lr"] == ParamRange(1e-4, 1e-2, log=True)
    assert space["l"] == [4, 8]
    assert space["epochs"] == ParamRange(2.0, 6.0, integer=True)
    assert space["sigma"] == ["auto", 0.5]
    assert "budget" not in space and "seed" not in space

    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[search]\nwidth = 3\n").search_space()
    assert ExperimentConfig().search_space() == {}
    assert ExperimentConfig().search_budget() == 0


def test_resolve_path(tmp_path):
    cfg = ExperimentConfig.from_string("", base_dir=tmp_path)
    assert cfg.resolve_path("a.mtx") == tmp_path / "a.mtx"
    absolute = Path(tmp_path / "b.mtx").resolve()
    assert cfg.resolve_path(str(absolute)) == absolute
