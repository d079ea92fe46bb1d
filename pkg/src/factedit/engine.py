"""Symbolic transition system: buffer, stream and memory.

The buffer is an index over the immutable draft; ``Keep`` copies the buffer
top into the stream and advances, ``Drop`` only advances, ``Gen(w)`` appends
``w`` without advancing.  Execution ends when the buffer is exhausted.
A learned controller can drive the system through :func:`run`.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from typing import Any, Optional

from .core import Action, ActionKind, Triple


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class EditorState:
    buffer: tuple[str, ...]
    index: int = 0
    stream: tuple[str, ...] = ()
    memory: tuple[Triple, ...] = ()
    step: int = 1
    hidden: Any = None

    @property
    def terminal(self) -> bool:
        return self.index >= len(self.buffer)

    @property
    def top(self) -> Optional[str]:
        return None if self.terminal else self.buffer[self.index]

    @property
    def remaining(self) -> tuple[str, ...]:
        return self.buffer[self.index:]


def init_state(draft: Sequence[str], triples: Sequence[Triple] = ()) -> EditorState:
    return EditorState(buffer=tuple(draft), memory=tuple(triples))


def apply_action(state: EditorState, action: Action) -> EditorState:
    if state.terminal:
        raise EngineError(f"{action} applied to a terminal state (step {state.step})")
    kind = action.kind
    if kind is ActionKind.KEEP:
        return replace(state, index=state.index + 1, stream=state.stream + (state.top,), step=state.step + 1)
    if kind is ActionKind.DROP:
        return replace(state, index=state.index + 1, step=state.step + 1)
    if not action.word:
        raise EngineError("Gen with an empty word")
    return replace(state, stream=state.stream + (action.word,), step=state.step + 1)


def execute(
    draft: Sequence[str], actions: Sequence[Action], triples: Sequence[Triple] = ()
) -> tuple[str, ...]:
    state = init_state(draft, triples)
    for k, action in enumerate(actions):
        if state.terminal:
            raise EngineError(f"buffer empty with {len(actions) - k} actions left")
        state = apply_action(state, action)
    if not state.terminal:
        raise EngineError(f"actions exhausted with {len(state.remaining)} buffer tokens unconsumed")
    return state.stream


Controller = Callable[[EditorState], Action]


def run(
    draft: Sequence[str],
    triples: Sequence[Triple],
    controller: Controller,
    max_steps: Optional[int] = None,
) -> tuple[tuple[Action, ...], EditorState]:
    """Let ``controller`` pick actions until the buffer is empty."""
    state = init_state(draft, triples)
    taken = []
    while not state.terminal:
        if max_steps is not None and len(taken) >= max_steps:
            raise EngineError(f"controller exceeded {max_steps} steps")
        action = controller(state)
        state = apply_action(state, action)
        taken.append(action)
    return tuple(taken), state
