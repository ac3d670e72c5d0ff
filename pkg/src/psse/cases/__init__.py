"""Bundled benchmark case files."""

from importlib import resources
from pathlib import Path

BUNDLED = ("case14", "case118")


def case_path(name: str) -> Path:
    """Filesystem path of a bundled case (name without extension)."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled case {name!r}; available: {', '.join(BUNDLED)}")
    return Path(str(resources.files(__package__) / f"{name}.m"))


def case_text(name: str) -> str:
    return case_path(name).read_text()
