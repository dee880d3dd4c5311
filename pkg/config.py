"""Experiment configuration backed by an INI file."""
import configparser
import logging
from pathlib import Path
from typing import NamedTuple

import numpy as np

from core import DataType
from dcmtf import DcmtfHyper, DcmtfVariant, ParamRange
from errors import ConfigError, IoError
from linalg import AUTO_SIGMA, Normalization
from matrix_io import MatrixFormat
from synth import DEFAULT_STRENGTH, PlantSpec, four_entity_plant_spec

logger = logging.getLogger(__name__)

ENTITY_PREFIX = "entity:"
MATRIX_PREFIX = "matrix:"
METHODS = ("dcmtf", "cfrm", "spectral", "kmeans")


class _ConfigOptionBase:
    def __init__(self, config_parent: "ExperimentConfig", section: str, option: str) -> None:
        self.config_parent = config_parent
        self.section = section
        self.option = option

    def _get_raw(self) -> str | None:
        try:
            val = self.config_parent.config.get(self.section, self.option)
        except (configparser.NoSectionError, configparser.NoOptionError):
            return None
        if not val or val.strip() == "":
            return None
        return val.strip()

    def _set_raw(self, value: str) -> None:
        if not self.config_parent.config.has_section(self.section):
            self.config_parent.config.add_section(self.section)
        self.config_parent.config.set(self.section, self.option, value)

    def _invalid(self, val: str, expected: str) -> ConfigError:
        return ConfigError(f"[{self.section}] {self.option} = '{val}' is not {expected}")


class StringConfig(_ConfigOptionBase):
    def get(self) -> str | None:
        return self._get_raw()

    def set(self, value: str) -> str:
        self._set_raw(value)
        return value


class BoolConfig(_ConfigOptionBase):
    def get(self) -> bool | None:
        val = self._get_raw()
        if val is None:
            return None
        val_lower = val.lower()
        if val_lower in ("true", "yes", "1", "on"):
            return True
        if val_lower in ("false", "no", "0", "off"):
            return False
        raise self._invalid(val, "a boolean")

    def set(self, value: bool) -> bool:
        self._set_raw(str(value).lower())
        return value


class IntConfig(_ConfigOptionBase):
    def get(self) -> int | None:
        val = self._get_raw()
        if val is None:
            return None
        try:
            return int(val)
        except ValueError:
            raise self._invalid(val, "an integer") from None

    def set(self, value: int) -> int:
        self._set_raw(str(int(value)))
        return value


class FloatConfig(_ConfigOptionBase):
    def get(self) -> float | None:
        val = self._get_raw()
        if val is None:
            return None
        try:
            return float(val)
        except ValueError:
            raise self._invalid(val, "a number") from None

    def set(self, value: float) -> float:
        self._set_raw(repr(float(value)))
        return value


class ListConfig(_ConfigOptionBase):
    """Comma separated list of strings."""

    def get(self) -> list[str] | None:
        val = self._get_raw()
        if val is None:
            return None
        return [item.strip() for item in val.split(",") if item.strip()]

    def set(self, value: list) -> list:
        self._set_raw(", ".join(str(v) for v in value))
        return value


class SigmaConfig(_ConfigOptionBase):
    """Kernel scale: a positive number or 'auto'."""

    def get(self) -> float | str | None:
        val = self._get_raw()
        if val is None:
            return None
        if val.lower() == AUTO_SIGMA:
            return AUTO_SIGMA
        try:
            return float(val)
        except ValueError:
            raise self._invalid(val, f"a number or '{AUTO_SIGMA}'") from None

    def set(self, value: float | str) -> float | str:
        self._set_raw(value if isinstance(value, str) else repr(float(value)))
        return value


class EntitySection(NamedTuple):
    name: str
    count: int | None
    k: int
    labels: Path | None


class MatrixSection(NamedTuple):
    name: str
    rows: str
    cols: str
    path: Path
    fmt: MatrixFormat
    datatype: DataType


# DcmtfHyper field -> (option in [dcmtf], type)
_HYPER_OPTIONS = {
    "l": int,
    "lr": float,
    "weight_decay": float,
    "epochs": int,
    "hidden_layers": int,
    "sigma": "sigma",
    "j_refresh": int,
    "convergence": float,
    "max_grad_norm": float,
    "kmeans_restarts": int,
    "normalization": str,
}


class ExperimentConfig:
    """Typed view over an experiment INI file.

    Relative paths resolve against the directory holding the file.
    """

    def __init__(self, config_file: str | Path | None = None) -> None:
        self.config = configparser.ConfigParser(interpolation=None)
        self.config_file = Path(config_file).resolve() if config_file else None
        self.base_dir = self.config_file.parent if self.config_file else Path.cwd()
        self._load_config()

        self.Method = StringConfig(self, "experiment", "method")
        self.Variant = StringConfig(self, "experiment", "variant")
        self.Seed = IntConfig(self, "experiment", "seed")
        self.Output = StringConfig(self, "experiment", "output")
        self.Threads = IntConfig(self, "experiment", "threads")
        self.Name = StringConfig(self, "experiment", "name")
        self.Reconstructions = BoolConfig(self, "experiment", "reconstructions")
        self.Checkpoint = BoolConfig(self, "experiment", "checkpoint")

        self.SynthPreset = StringConfig(self, "synth", "preset")
        self.SynthSeed = IntConfig(self, "synth", "seed")
        self.SynthStrength = FloatConfig(self, "synth", "strength")
        self.SynthNoise = FloatConfig(self, "synth", "noise")
        self.SynthSizes = ListConfig(self, "synth", "sizes")
        self.SynthKs = ListConfig(self, "synth", "ks")
        self.SynthSchema = ListConfig(self, "synth", "schema")
        self.SynthNames = ListConfig(self, "synth", "names")

        self.SearchBudget = IntConfig(self, "search", "budget")
        self.SearchSeed = IntConfig(self, "search", "seed")

        self.CfrmInit = StringConfig(self, "cfrm", "init")
        self.CfrmSweeps = IntConfig(self, "cfrm", "sweeps")
        self.CfrmUpdate = StringConfig(self, "cfrm", "update")
        self.CfrmRestarts = IntConfig(self, "cfrm", "restarts")

        self.SpectralEntities = ListConfig(self, "spectral", "entities")
        self.SpectralSigma = SigmaConfig(self, "spectral", "sigma")
        self.SpectralNormalization = StringConfig(self, "spectral", "normalization")
        self.SpectralRestarts = IntConfig(self, "spectral", "restarts")

        self.KMeansRestarts = IntConfig(self, "kmeans", "restarts")

        self.SweepParameter = StringConfig(self, "sweep", "parameter")
        self.SweepValues = ListConfig(self, "sweep", "values")

        self.EvaluateEntities = ListConfig(self, "evaluate", "entities")

    @classmethod
    def from_string(cls, text: str, base_dir: str | Path | None = None) -> "ExperimentConfig":
        cfg = cls()
        cfg.config.read_string(text)
        if base_dir is not None:
            cfg.base_dir = Path(base_dir)
        return cfg

    @classmethod
    def from_dict(cls, data: dict[str, dict[str, str]], base_dir: str | Path | None = None) -> "ExperimentConfig":
        cfg = cls()
        cfg.config.read_dict(data)
        if base_dir is not None:
            cfg.base_dir = Path(base_dir)
        return cfg

    def to_dict(self) -> dict[str, dict[str, str]]:
        """Section -> option -> raw string; enough to rebuild the configuration."""
        return {section: dict(self.config.items(section)) for section in self.config.sections()}

    def copy(self) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(self.to_dict(), self.base_dir)

    def _load_config(self) -> None:
        if self.config_file is None:
            return
        if not self.config_file.is_file():
            raise IoError(str(self.config_file), "config file not found")
        try:
            self.config.read(self.config_file, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"{self.config_file}: {e}") from e

    def save(self, path: str | Path | None = None) -> Path:
        target = Path(path) if path else self.config_file
        if target is None:
            raise ConfigError("no path to save the configuration to")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "w", encoding="utf-8") as configfile:
                self.config.write(configfile)
        except OSError as e:
            raise IoError(str(target), str(e)) from e
        return target

    def resolve_path(self, value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else (self.base_dir / path)

    # typed accessors

    def method(self) -> str:
        method = (self.Method.get() or "dcmtf").lower()
        if method not in METHODS:
            raise ConfigError(f"[experiment] method must be one of {', '.join(METHODS)}, got '{method}'")
        return method

    def variant(self) -> DcmtfVariant:
        raw = self.Variant.get() or DcmtfVariant.FULL.value
        try:
            return DcmtfVariant(raw.lower())
        except ValueError:
            raise ConfigError(f"[experiment] variant '{raw}' is unknown") from None

    def seed(self) -> int:
        return self.Seed.get() or 0

    def entities(self) -> list[EntitySection]:
        sections = []
        for section in self.config.sections():
            if not section.startswith(ENTITY_PREFIX):
                continue
            name = section[len(ENTITY_PREFIX):].strip()
            count = IntConfig(self, section, "count").get()
            k = IntConfig(self, section, "k").get()
            if k is None:
                raise ConfigError(f"[{section}] needs k")
            labels = StringConfig(self, section, "labels").get()
            sections.append(EntitySection(name, count, k, self.resolve_path(labels) if labels else None))
        return sections

    def matrices(self) -> list[MatrixSection]:
        sections = []
        for section in self.config.sections():
            if not section.startswith(MATRIX_PREFIX):
                continue
            name = section[len(MATRIX_PREFIX):].strip()
            rows = StringConfig(self, section, "rows").get()
            cols = StringConfig(self, section, "cols").get()
            path = StringConfig(self, section, "path").get()
            if not (rows and cols and path):
                raise ConfigError(f"[{section}] needs rows, cols and path")
            try:
                fmt = MatrixFormat((StringConfig(self, section, "format").get() or "mtx").lower())
                datatype = DataType((StringConfig(self, section, "datatype").get() or "real").lower())
            except ValueError as e:
                raise ConfigError(f"[{section}] {e}") from None
            sections.append(MatrixSection(name, rows, cols, self.resolve_path(path), fmt, datatype))
        return sections

    def has_synth(self) -> bool:
        return self.config.has_section("synth")

    def plant_spec(self) -> PlantSpec | None:
        """The synthetic data source, if the configuration declares one."""
        if not self.has_synth():
            return None
        seed = self.SynthSeed.get()
        seed = self.seed() if seed is None else seed
        strength = self.SynthStrength.get()
        if strength is None:
            strength = DEFAULT_STRENGTH
        preset = (self.SynthPreset.get() or "").lower()
        if preset == "four-entity":
            spec = four_entity_plant_spec(seed, strength)
        elif preset:
            raise ConfigError(f"[synth] preset '{preset}' is unknown")
        else:
            spec = self._custom_plant(seed, strength)
        noise = self.SynthNoise.get()
        spec.noise = 0.0 if noise is None else noise
        names = self.SynthNames.get()
        if names:
            spec.entity_names = names
        return spec

    def _custom_plant(self, seed: int, strength: float) -> PlantSpec:
        sizes, ks, schema = self.SynthSizes.get(), self.SynthKs.get(), self.SynthSchema.get()
        if not (sizes and ks and schema):
            raise ConfigError("[synth] needs preset = four-entity or sizes, ks and schema")
        try:
            pairs = [tuple(int(v) for v in item.split("-")) for item in schema]
            spec_sizes = [int(v) for v in sizes]
            spec_ks = [int(v) for v in ks]
        except ValueError as e:
            raise ConfigError(f"[synth] {e}") from None
        patterns = []
        for m, pair in enumerate(pairs, start=1):
            if len(pair) != 2:
                raise ConfigError(f"[synth] schema entry '{schema[m - 1]}' must look like r-c")
            raw = StringConfig(self, "synth", f"pattern.{m}").get()
            if raw is None:
                raise ConfigError(f"[synth] pattern.{m} is missing")
            try:
                patterns.append(np.array([[float(v) for v in row.split()] for row in raw.split(";")]))
            except ValueError as e:
                raise ConfigError(f"[synth] pattern.{m}: {e}") from None
        return PlantSpec(spec_sizes, spec_ks, pairs, patterns, strength, seed)

    def hyper(self) -> DcmtfHyper:
        values = {"seed": self.seed()}
        for name, kind in _HYPER_OPTIONS.items():
            if kind == "sigma":
                val = SigmaConfig(self, "dcmtf", name).get()
            elif kind is int:
                val = IntConfig(self, "dcmtf", name).get()
            elif kind is float:
                val = FloatConfig(self, "dcmtf", name).get()
            else:
                val = StringConfig(self, "dcmtf", name).get()
            if val is not None:
                values[name] = val
        if "normalization" in values:
            try:
                values["normalization"] = Normalization(values["normalization"].lower())
            except ValueError:
                raise ConfigError(f"[dcmtf] normalization '{values['normalization']}' is unknown") from None
        return DcmtfHyper(**values).validate()

    def search_space(self) -> dict[str, ParamRange | list]:
        """[search] options other than budget/seed: `low..high` ranges (suffix `log`) or comma choices."""
        if not self.config.has_section("search"):
            return {}
        space: dict[str, ParamRange | list] = {}
        for key, raw in self.config.items("search"):
            if key in ("budget", "seed"):
                continue
            kind = _HYPER_OPTIONS.get(key)
            if kind is None:
                raise ConfigError(f"[search] '{key}' is not a searchable hyperparameter")
            text = raw.strip()
            try:
                if ".." in text:
                    bounds, _, flag = text.partition(" ")
                    low, high = (float(v) for v in bounds.split(".."))
                    space[key] = ParamRange(low, high, log=flag.strip() == "log", integer=kind is int)
                else:
                    choices = [v.strip() for v in text.split(",") if v.strip()]
                    if kind is int:
                        space[key] = [int(v) for v in choices]
                    elif kind is float:
                        space[key] = [float(v) for v in choices]
                    elif kind == "sigma":
                        space[key] = [v if v.lower() == AUTO_SIGMA else float(v) for v in choices]
                    else:
                        space[key] = choices
            except ValueError as e:
                raise ConfigError(f"[search] {key}: {e}") from None
        return space

    def search_budget(self) -> int:
        return self.SearchBudget.get() or 0
