"""Domain types and line-delimited JSON serialization.

Instances, triples and actions are immutable value objects.  Token sequences
are plain tuples of strings; corpora are pre-tokenized, so tokenization is a
whitespace split and detokenization a single-space join.
"""

from __future__ import annotations

import enum
import json
import re
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

TokenSeq = tuple  # tuple[str, ...]
PathLike = Union[str, Path]


class FormatError(ValueError):
    """Raised when a data file or record violates its schema."""


def tokenize(raw: str) -> tuple[str, ...]:
    return tuple(raw.split())


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


def _check_tokens(tokens: Sequence[str], what: str) -> tuple[str, ...]:
    out = tuple(tokens)
    for tok in out:
        if not isinstance(tok, str) or not tok or any(ch.isspace() for ch in tok):
            raise FormatError(f"{what}: invalid token {tok!r}")
    return out


@dataclass(frozen=True)
class Triple:
    subj: str
    pred: str
    obj: str

    def __post_init__(self) -> None:
        for name in ("subj", "pred", "obj"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise FormatError(f"triple {name} must be a non-empty string, got {value!r}")
        for name in ("subj", "obj"):
            if any(ch.isspace() for ch in getattr(self, name)):
                raise FormatError(f"entity {getattr(self, name)!r} contains whitespace")

    def entities(self) -> tuple[str, str]:
        return (self.subj, self.obj)


def triple_set(triples: Iterable[Triple]) -> tuple[Triple, ...]:
    """Validate an ordered triple collection; duplicates are rejected."""
    out = tuple(triples)
    seen = set()
    for t in out:
        if t in seen:
            raise FormatError(f"duplicate triple {t}")
        seen.add(t)
    return out


class Role(str, enum.Enum):
    AGENT = "AGENT"
    PATIENT = "PATIENT"
    BRIDGE = "BRIDGE"


_PLACEHOLDER_RE = re.compile(r"^(AGENT|PATIENT|BRIDGE)-([1-9][0-9]*)$")


@dataclass(frozen=True)
class Placeholder:
    role: Role
    index: int

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"placeholder index must be positive, got {self.index}")

    def render(self) -> str:
        return f"{self.role.value}-{self.index}"

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, token: str) -> "Placeholder":
        m = _PLACEHOLDER_RE.match(token)
        if m is None:
            raise ValueError(f"not a placeholder: {token!r}")
        return cls(Role(m.group(1)), int(m.group(2)))


def is_placeholder(token: str) -> bool:
    return _PLACEHOLDER_RE.match(token) is not None


class EntityMap(Mapping):
    """Injective placeholder -> entity association.

    Keys are rendered placeholders ("AGENT-1"), values entity strings.
    """

    __slots__ = ("_forward", "_inverse")

    def __init__(self, items: Union[Mapping[str, str], Iterable[tuple[str, str]], None] = None):
        pairs = list(items.items()) if isinstance(items, Mapping) else list(items or ())
        forward: dict[str, str] = {}
        inverse: dict[str, str] = {}
        for ph, ent in pairs:
            if not is_placeholder(ph):
                raise FormatError(f"entity map key {ph!r} is not a placeholder")
            if not isinstance(ent, str) or not ent:
                raise FormatError(f"entity map value for {ph} must be a non-empty string")
            if ph in forward and forward[ph] != ent:
                raise FormatError(f"placeholder {ph} mapped twice")
            if ent in inverse and inverse[ent] != ph:
                raise FormatError(f"entity {ent!r} mapped by both {inverse[ent]} and {ph}")
            forward[ph] = ent
            inverse[ent] = ph
        self._forward = forward
        self._inverse = inverse

    def __getitem__(self, placeholder: str) -> str:
        return self._forward[placeholder]

    def __iter__(self) -> Iterator[str]:
        return iter(self._forward)

    def __len__(self) -> int:
        return len(self._forward)

    def placeholder_of(self, entity: str) -> Optional[str]:
        return self._inverse.get(entity)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, EntityMap):
            return list(self._forward.items()) == list(other._forward.items())
        return NotImplemented

    def __hash__(self) -> int:
        return hash(tuple(self._forward.items()))

    def __repr__(self) -> str:
        return f"EntityMap({self._forward!r})"


@dataclass(frozen=True)
class Instance:
    triples: tuple[Triple, ...]
    draft: tuple[str, ...]
    revised: tuple[str, ...]
    entities: EntityMap = field(default_factory=EntityMap)

    def __post_init__(self) -> None:
        object.__setattr__(self, "triples", triple_set(self.triples))
        object.__setattr__(self, "draft", _check_tokens(self.draft, "draft"))
        object.__setattr__(self, "revised", _check_tokens(self.revised, "revised"))
        if not isinstance(self.entities, EntityMap):
            object.__setattr__(self, "entities", EntityMap(self.entities))


class ActionKind(str, enum.Enum):
    KEEP = "keep"
    DROP = "drop"
    GEN = "gen"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    word: Optional[str] = None

    def __post_init__(self) -> None:
        kind = ActionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ActionKind.GEN:
            if not isinstance(self.word, str) or not self.word:
                raise ValueError("Gen requires exactly one non-empty word")
        elif self.word is not None:
            raise ValueError(f"{kind.value} carries no word")

    def __str__(self) -> str:
        if self.kind is ActionKind.GEN:
            return f"Gen({self.word})"
        return self.kind.value.capitalize()


KEEP = Action(ActionKind.KEEP)
DROP = Action(ActionKind.DROP)


def gen(word: str) -> Action:
    return Action(ActionKind.GEN, word)


# -- serialization ----------------------------------------------------------


def triple_to_record(t: Triple) -> dict:
    return {"subj": t.subj, "pred": t.pred, "obj": t.obj}


def triple_from_record(rec: Any) -> Triple:
    if not isinstance(rec, Mapping):
        raise FormatError("triple must be an object with subj/pred/obj")
    try:
        return Triple(rec["subj"], rec["pred"], rec["obj"])
    except KeyError as exc:
        raise FormatError(f"triple missing field {exc.args[0]!r}") from None


def instance_to_record(inst: Instance) -> dict:
    return {
        "triples": [triple_to_record(t) for t in inst.triples],
        "draft": list(inst.draft),
        "revised": list(inst.revised),
        "entities": dict(inst.entities.items()),
    }


def _token_field(rec: Mapping, name: str) -> tuple[str, ...]:
    if name not in rec:
        raise FormatError(f"missing field {name!r}")
    value = rec[name]
    if isinstance(value, str):
        return tokenize(value)
    if not isinstance(value, list):
        raise FormatError(f"field {name!r} must be a token list")
    return tuple(value)


def instance_from_record(rec: Any) -> Instance:
    if not isinstance(rec, Mapping):
        raise FormatError("record must be a JSON object")
    if "triples" not in rec:
        raise FormatError("missing field 'triples'")
    if not isinstance(rec["triples"], list):
        raise FormatError("field 'triples' must be a list")
    triples = tuple(triple_from_record(t) for t in rec["triples"])
    entities = rec.get("entities", {})
    if not isinstance(entities, Mapping):
        raise FormatError("field 'entities' must be an object")
    return Instance(
        triples=triples,
        draft=_token_field(rec, "draft"),
        revised=_token_field(rec, "revised"),
        entities=EntityMap(entities),
    )


def action_to_record(a: Action) -> dict:
    rec = {"kind": a.kind.value}
    if a.word is not None:
        rec["word"] = a.word
    return rec


def action_from_record(rec: Any) -> Action:
    if not isinstance(rec, Mapping) or "kind" not in rec:
        raise FormatError("action must be an object with a 'kind'")
    try:
        return Action(ActionKind(rec["kind"]), rec.get("word"))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def dumps(rec: Mapping) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(", ", ": "))


def _read_records(path: PathLike, parse) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            except (FormatError, ValueError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
    return out


def _write_records(path: PathLike, records: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")


def read_instances(path: PathLike) -> list[Instance]:
    return _read_records(path, instance_from_record)


def write_instances(instances: Iterable[Instance], path: PathLike) -> None:
    _write_records(path, (instance_to_record(i) for i in instances))


def read_actions(path: PathLike) -> list[tuple[Action, ...]]:
    def parse(rec):
        if not isinstance(rec, Mapping) or not isinstance(rec.get("actions"), list):
            raise FormatError("missing field 'actions'")
        return tuple(action_from_record(a) for a in rec["actions"])

    return _read_records(path, parse)


def write_actions(sequences: Iterable[Sequence[Action]], path: PathLike) -> None:
    _write_records(path, ({"actions": [action_to_record(a) for a in seq]} for seq in sequences))


def read_corpus(path: PathLike) -> list[tuple[tuple[Triple, ...], tuple[str, ...]]]:
    """Read a (triples, text) corpus; ``text`` may be a string or a token list."""

    def parse(rec):
        if not isinstance(rec, Mapping) or not isinstance(rec.get("triples"), list):
            raise FormatError("missing field 'triples'")
        triples = triple_set(triple_from_record(t) for t in rec["triples"])
        return triples, _check_tokens(_token_field(rec, "text"), "text")

    return _read_records(path, parse)


def write_corpus(corpus: Iterable[tuple[Sequence[Triple], Sequence[str]]], path: PathLike) -> None:
    _write_records(
        path,
        ({"triples": [triple_to_record(t) for t in ts], "text": list(text)} for ts, text in corpus),
    )


def read_predictions(path: PathLike) -> list[tuple[str, ...]]:
    def parse(rec):
        if isinstance(rec, Mapping) and "tokens" in rec:
            return _check_tokens(_token_field(rec, "tokens"), "tokens")
        raise FormatError("missing field 'tokens'")

    return _read_records(path, parse)


def write_predictions(predictions: Iterable[Sequence[str]], path: PathLike) -> None:
    _write_records(path, ({"tokens": list(p)} for p in predictions))
