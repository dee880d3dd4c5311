"""Reading and writing matrices and label files."""
import logging
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from core import DataMatrix, DataType
from errors import BadBinary, IndexOutOfBounds, IoError, LengthMismatch, ParseError

logger = logging.getLogger(__name__)


class MatrixFormat(str, Enum):
    MTX = "mtx"  # MatrixMarket, coordinate or array
    CSV = "csv"  # dense, comma separated


def _diagnose_mtx(path: Path, rows: int, cols: int, fmt: str) -> None:
    """Check every body line, raising ParseError or IndexOutOfBounds with its line number."""
    with open(path, "r", encoding="utf-8") as f:
        size_seen = False
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("%"):
                continue
            if not size_seen:
                size_seen = True
                continue
            parts = text.split()
            if fmt != "coordinate":
                try:
                    [float(p) for p in parts]
                except ValueError:
                    raise ParseError(f"cannot parse value '{text}'", str(path), lineno) from None
                continue
            try:
                i, j = int(parts[0]), int(parts[1])
                [float(p) for p in parts[2:]]
            except (ValueError, IndexError):
                raise ParseError(f"malformed entry '{text}'", str(path), lineno) from None
            if not (1 <= i <= rows and 1 <= j <= cols):
                raise IndexOutOfBounds(f"{path}:{lineno}: entry ({i}, {j}) outside a {rows}x{cols} matrix")


def _read_mtx(path: Path) -> np.ndarray:
    try:
        rows, cols, _, fmt, _, _ = scipy.io.mminfo(str(path))
    except Exception as e:
        raise ParseError(f"bad MatrixMarket header: {e}", str(path), 1) from e
    # line-numbered diagnostics first; scipy does not report where a body goes wrong
    _diagnose_mtx(path, rows, cols, fmt)
    try:
        data = scipy.io.mmread(str(path))
    except Exception as e:
        raise ParseError(str(e), str(path)) from e
    if scipy.sparse.issparse(data):
        data = data.toarray()
    return np.asarray(data, dtype=np.float64)


def _read_csv(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    [float(p) for p in line.split(",")]
                except ValueError:
                    raise ParseError(f"cannot parse row '{line.strip()}'", str(path), lineno) from e
        raise ParseError(str(e), str(path)) from e


def load_matrix(
    path: str | Path,
    fmt: MatrixFormat = MatrixFormat.MTX,
    *,
    matrix_id: int = 0,
    rows: int = 0,
    cols: int = 0,
    datatype: DataType = DataType.REAL,
) -> DataMatrix:
    """Read a dense matrix. MatrixMarket coordinates are 1-based; absent entries are 0."""
    path = Path(path)
    if not path.is_file():
        raise IoError(str(path), "file not found")
    fmt = MatrixFormat(fmt)
    values = _read_mtx(path) if fmt is MatrixFormat.MTX else _read_csv(path)
    datatype = DataType(datatype)
    if datatype is DataType.BINARY and not np.all((values == 0) | (values == 1)):
        raise BadBinary(f"{path} is declared binary but has values outside {{0, 1}}")
    logger.debug(f"Loaded {path} as {values.shape} {datatype.value} matrix")
    return DataMatrix(matrix_id, rows, cols, values, datatype)


def write_matrix(path: str | Path, matrix: DataMatrix | np.ndarray, fmt: MatrixFormat = MatrixFormat.MTX) -> Path:
    path = Path(path)
    values = matrix.values if isinstance(matrix, DataMatrix) else np.asarray(matrix, dtype=np.float64)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if MatrixFormat(fmt) is MatrixFormat.MTX:
            scipy.io.mmwrite(str(path), scipy.sparse.coo_matrix(values), precision=17)
        else:
            np.savetxt(path, values, delimiter=",", fmt="%.17g")
    except OSError as e:
        raise IoError(str(path), str(e)) from e
    return path


def load_labels(path: str | Path, n: int | None = None) -> np.ndarray:
    """Single-column CSV of integer class ids, one per entity instance."""
    path = Path(path)
    if not path.is_file():
        raise IoError(str(path), "file not found")
    try:
        raw = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise ParseError(f"labels must be integers: {e}", str(path)) from e
    if raw.shape[1] != 1:
        raise ParseError(f"expected one column, found {raw.shape[1]}", str(path))
    labels = raw[:, 0]
    if not np.all(labels == np.round(labels)):
        raise ParseError("labels must be integers", str(path))
    if n is not None and labels.shape[0] != n:
        raise LengthMismatch(f"{path} has {labels.shape[0]} labels, entity has {n} instances")
    return labels.astype(np.int64)


def write_labels(path: str | Path, labels: np.ndarray) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.asarray(labels, dtype=np.int64), fmt="%d")
    except OSError as e:
        raise IoError(str(path), str(e)) from e
    return path
