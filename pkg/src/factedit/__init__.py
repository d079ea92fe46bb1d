"""Fact-based text editing: data synthesis, a Keep/Drop/Gen editor and evaluation."""

__version__ = "0.1.0"

from .core import Action, ActionKind, EntityMap, Instance, Triple  # noqa: E402
from .engine import execute  # noqa: E402
from .oracle import derive_actions  # noqa: E402

__all__ = ["Action", "ActionKind", "EntityMap", "Instance", "Triple", "derive_actions", "execute", "__version__"]
