"""Supervision actions from (draft, revised) pairs.

Tokens of the draft on the longest common subsequence are kept, revised
tokens off it are generated and the remaining draft tokens dropped.  Within a
gap between two common tokens every ``Gen`` precedes every ``Drop``.
"""

from __future__ import annotations

from collections.abc import Sequence

from .core import DROP, KEEP, Action, ActionKind, gen
from .datagen import lcs
from .engine import EngineError, execute


def executable_alignment(x: Sequence[str], y: Sequence[str]) -> list[tuple[int, int]]:
    """The LCS alignment, re-anchored so that the engine can replay it.

    Words can only be generated while the buffer is non-empty, so keeping the
    last draft token is impossible when revised tokens still follow it.  In
    that case the final pair moves to the last revised token when the words
    agree, otherwise the last draft token leaves the alignment (to be dropped).
    """
    pairs = lcs(x, y)
    if pairs and pairs[-1][0] == len(x) - 1 and pairs[-1][1] < len(y) - 1:
        if x[-1] == y[-1]:
            pairs[-1] = (len(x) - 1, len(y) - 1)
        else:
            pairs = lcs(x[:-1], y)
    return pairs


def derive_actions(x: Sequence[str], y: Sequence[str]) -> tuple[Action, ...]:
    if not x and y:
        raise EngineError("an empty draft cannot be edited into a non-empty text")
    actions: list[Action] = []
    pi, pj = 0, 0
    for i, j in executable_alignment(x, y) + [(len(x), len(y))]:
        actions.extend(gen(w) for w in y[pj:j])
        actions.extend(DROP for _ in range(pi, i))
        if i < len(x):
            actions.append(KEEP)
        pi, pj = i + 1, j + 1
    return tuple(actions)


def counts(actions: Sequence[Action]) -> dict[ActionKind, int]:
    out = {kind: 0 for kind in ActionKind}
    for a in actions:
        out[a.kind] += 1
    return out


def validate(actions: Sequence[Action], x: Sequence[str], y: Sequence[str]) -> bool:
    try:
        return execute(x, actions) == tuple(y)
    except EngineError:
        return False
