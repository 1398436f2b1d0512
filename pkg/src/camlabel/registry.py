"""Registry of defect classes known to the toolkit.

The stock registry covers the three structural-defect classes the datasets
use (crack, spalling, rust); deployments can register additional classes
before ingesting labels.
"""

from __future__ import annotations

DEFAULT_CLASSES = ("crack", "spalling", "rust")


class ClassRegistry:
    """Mutable set of valid defect class names."""

    def __init__(self, classes=DEFAULT_CLASSES):
        self._classes = list(dict.fromkeys(classes))
        if not self._classes:
            raise ValueError("registry needs at least one class")

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self._classes)

    def register(self, name: str) -> None:
        if not name or not isinstance(name, str):
            raise ValueError(f"invalid class name: {name!r}")
        if name not in self._classes:
            self._classes.append(name)

    def __contains__(self, name: str) -> bool:
        return name in self._classes

    def __iter__(self):
        return iter(self._classes)

    def validate(self, name: str) -> str:
        if name not in self._classes:
            raise KeyError(
                f"unknown defect class {name!r}; registered: {self._classes}"
            )
        return name


DEFAULT_REGISTRY = ClassRegistry()
