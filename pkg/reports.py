"""Machine-readable run reports."""
import json
import logging
import math
from pathlib import Path
from typing import Any, NotRequired, TypedDict

import numpy as np

from errors import IoError, ParseError

logger = logging.getLogger(__name__)

SIDECAR_THRESHOLD = 1_000_000  # arrays with more entries go to .npy files next to the report
TIMING_KEYS = ("timings",)


class EntityReport(TypedDict):
    id: int
    k: int
    assignments: list[int]
    silhouette: float | None


class RunReport(TypedDict):
    version: str
    method: str
    seed: int
    config: dict[str, dict[str, str]]
    name: str | None
    entities: dict[str, EntityReport]
    metrics: dict[str, dict[str, float]]
    associations: dict[str, Any]
    loss_history: list[dict[str, Any]]
    timings: dict[str, float]
    config_dir: NotRequired[str]
    schema: NotRequired[dict[str, Any]]
    sweeps: NotRequired[int]
    variant: NotRequired[str]
    converged: NotRequired[bool]
    epochs_run: NotRequired[int]
    trace_history: NotRequired[list[float]]
    cfrm_steps: NotRequired[list[dict[str, Any]]]
    search_trials: NotRequired[list[dict[str, Any]]]
    hyper: NotRequired[dict[str, Any]]
    plant_check: NotRequired[dict[str, bool]]
    reconstructions: NotRequired[dict[str, Any]]
    checkpoint: NotRequired[list[dict[str, Any]]]


def to_jsonable(value: Any, sidecars: dict[str, np.ndarray] | None = None, key: str = "report") -> Any:
    """Plain JSON types: arrays to nested lists, non-finite floats to None.

    When `sidecars` is given, arrays above SIDECAR_THRESHOLD entries are moved into it
    and replaced by a reference naming the sidecar file.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v, sidecars, f"{key}.{k}") for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v, sidecars, f"{key}.{i}") for i, v in enumerate(value)]
    if isinstance(value, np.ndarray):
        if sidecars is not None and value.size > SIDECAR_THRESHOLD:
            name = f"{key}.npy"
            sidecars[name] = value
            return {"sidecar": name, "shape": list(value.shape)}
        return to_jsonable(value.tolist(), sidecars, key)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__} at {key}")


def dumps_report(
    report: RunReport | dict,
    sidecars: dict[str, np.ndarray] | None = None,
    stem: str = "report",
) -> str:
    """Stable text: sorted keys, row-major arrays, repr-precision floats."""
    return json.dumps(to_jsonable(report, sidecars, stem), sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit_report(report: RunReport | dict, path: str | Path) -> Path:
    path = Path(path)
    sidecars: dict[str, np.ndarray] = {}
    text = dumps_report(report, sidecars, path.stem)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        for name, arr in sidecars.items():
            np.save(path.parent / name, arr)
    except OSError as e:
        raise IoError(str(path), str(e)) from e
    logger.info(f"Report written to {path}" + (f" with {len(sidecars)} sidecar file(s)" if sidecars else ""))
    return path


def _load_sidecars(value: Any, base: Path) -> Any:
    if isinstance(value, dict):
        if set(value) == {"sidecar", "shape"} and isinstance(value["sidecar"], str):
            sidecar = base / value["sidecar"]
            try:
                return np.load(sidecar)
            except (OSError, ValueError) as e:
                raise IoError(str(sidecar), f"cannot read sidecar: {e}") from e
        return {k: _load_sidecars(v, base) for k, v in value.items()}
    if isinstance(value, list):
        return [_load_sidecars(v, base) for v in value]
    return value


def read_report(path: str | Path) -> dict[str, Any]:
    """Parse a report; sidecar references are replaced by the arrays they name."""
    path = Path(path)
    if not path.is_file():
        raise IoError(str(path), "report not found")
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid report JSON: {e.msg}", str(path), e.lineno) from e
    return _load_sidecars(report, path.parent)


def strip_timings(report: dict[str, Any]) -> dict[str, Any]:
    """Copy of a report without wall-clock fields, for rerun comparisons."""
    return {k: v for k, v in report.items() if k not in TIMING_KEYS}
