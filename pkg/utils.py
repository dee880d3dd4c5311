"""Path and version helpers."""
import tomllib
from pathlib import Path

FALLBACK_VERSION = "0.0.0"


def get_resource_path(path: str) -> Path:
    """
    Get the absolute path to a file shipped with the source code.

    Args:
        path: Relative path to the resource (e.g., "pyproject.toml")

    Returns:
        Absolute Path object
    """
    return Path(__file__).parent / path


def get_version() -> str:
    """Library version from pyproject.toml, or a fallback when it cannot be read."""
    pyproject_path = get_resource_path("pyproject.toml")
    try:
        with open(pyproject_path, "rb") as f:
            return tomllib.load(f)["project"]["version"]
    except (OSError, tomllib.TOMLDecodeError, KeyError):
        return FALLBACK_VERSION
