"""Automatic construction of fact-based editing data.

Starting from (triples, revised text) pairs, every pair is delexicalized into
templates, the templates are put in a store keyed by the revised template, and
each pair then borrows material from the stored template whose triple set is
a strict subset (insertion) or strict superset (deletion) of its own and whose
text shares the longest common subsequence with it.  The synthesized draft
template is lexicalized back into a draft text.
"""

from __future__ import annotations

import bisect
import enum
import logging
from collections.abc import Hashable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .core import EntityMap, FormatError, Instance, Placeholder, Role, Triple, is_placeholder

log = logging.getLogger(__name__)

ROOT = "ROOT"
IS_OF = "IsOf"


class DataGenError(ValueError):
    pass


# -- longest common subsequence ---------------------------------------------


def _suffix_table(a: Sequence[Hashable], b: Sequence[Hashable]) -> list[list[int]]:
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = table[i], table[i + 1]
        ai = a[i]
        for j in range(m - 1, -1, -1):
            if ai == b[j]:
                row[j] = below[j + 1] + 1
            else:
                r, d = row[j + 1], below[j]
                row[j] = r if r > d else d
    return table


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def lcs(a: Sequence[Hashable], b: Sequence[Hashable]) -> list[tuple[int, int]]:
    """One maximum-length alignment as 0-based ``(i, j)`` pairs.

    Among all maximum alignments the lexicographically smallest list of
    indices is returned: earliest positions in ``a`` first, then in ``b``.
    """
    if not a or not b:
        return []
    table = _suffix_table(a, b)
    positions: dict[Hashable, list[int]] = {}
    for j, tok in enumerate(b):
        positions.setdefault(tok, []).append(j)

    pairs = []
    i, j = 0, 0
    remaining = table[0][0]
    n = len(a)
    while remaining:
        for ii in range(i, n):
            occ = positions.get(a[ii])
            if not occ:
                continue
            k = bisect.bisect_left(occ, j)
            if k == len(occ):
                continue
            jj = occ[k]
            # smallest jj maximizes the suffix table, so it is the only candidate
            if table[ii + 1][jj + 1] == remaining - 1:
                pairs.append((ii, jj))
                i, j = ii + 1, jj + 1
                remaining -= 1
                break
        else:  # pragma: no cover - the table guarantees a hit
            raise AssertionError("inconsistent LCS table")
    return pairs


# -- delexicalization --------------------------------------------------------


def assign_placeholders(triples: Sequence[Triple]) -> EntityMap:
    """Role rule: subj-only -> AGENT, obj-only -> PATIENT, both -> BRIDGE.

    Indices count per role in order of first occurrence in the triple list.
    """
    as_subj = {t.subj for t in triples}
    as_obj = {t.obj for t in triples}
    order = list(dict.fromkeys(e for t in triples for e in (t.subj, t.obj)))
    counters = {role: 0 for role in Role}
    pairs = []
    for ent in order:
        if ent in as_subj and ent in as_obj:
            role = Role.BRIDGE
        elif ent in as_subj:
            role = Role.AGENT
        else:
            role = Role.PATIENT
        counters[role] += 1
        pairs.append((Placeholder(role, counters[role]).render(), ent))
    return EntityMap(pairs)


def delexicalize(
    triples: Sequence[Triple], text: Sequence[str]
) -> tuple[tuple[Triple, ...], tuple[str, ...], EntityMap]:
    entities = assign_placeholders(triples)
    to_ph = {ent: ph for ph, ent in entities.items()}
    templates = tuple(Triple(to_ph[t.subj], t.pred, to_ph[t.obj]) for t in triples)
    template_text = tuple(to_ph.get(tok, tok) for tok in text)
    return templates, template_text, entities


def augment_root(triples: Sequence[Triple]) -> tuple[Triple, ...]:
    """Append ``(ROOT, IsOf, e)`` for every entity that never occurs as an object."""
    objs = {t.obj for t in triples}
    out = list(triples)
    added = set()
    for t in triples:
        if t.subj != ROOT and t.subj not in objs and t.subj not in added:
            out.append(Triple(ROOT, IS_OF, t.subj))
            added.add(t.subj)
    return tuple(out)


# -- template store and retrieval -------------------------------------------


@dataclass(frozen=True)
class StoreEntry:
    template: tuple[str, ...]
    triples: tuple[Triple, ...]
    entities: EntityMap
    order: int


class TemplateStore:
    """Revised template -> (triple templates, entity map); first insertion wins."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, ...], StoreEntry] = {}

    def add(self, template: Sequence[str], triples: Sequence[Triple], entities: EntityMap) -> bool:
        key = tuple(template)
        if key in self._entries:
            return False
        self._entries[key] = StoreEntry(key, tuple(triples), entities, len(self._entries))
        return True

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, template) -> bool:
        return tuple(template) in self._entries

    def __getitem__(self, template) -> StoreEntry:
        return self._entries[tuple(template)]

    def entries(self) -> Iterable[StoreEntry]:
        return self._entries.values()


def build_store(corpus: Iterable[tuple[Sequence[Triple], Sequence[str]]]) -> TemplateStore:
    store = TemplateStore()
    for triples, text in corpus:
        t_tmpl, y_tmpl, entities = delexicalize(triples, text)
        store.add(y_tmpl, t_tmpl, entities)
    return store


class Mode(str, enum.Enum):
    INSERTION = "insertion"
    DELETION = "deletion"


@dataclass(frozen=True)
class ReferenceMatch:
    ref_template: tuple[str, ...]
    ref_triples: tuple[Triple, ...]
    ref_entities: EntityMap
    lcs_length: int
    mode: Mode


def retrieve_reference(
    triples: Sequence[Triple], template: Sequence[str], store: TemplateStore
) -> Optional[ReferenceMatch]:
    own = frozenset(triples)
    best_key = None
    best = None
    for entry in store.entries():
        other = frozenset(entry.triples)
        if other < own:
            mode = Mode.INSERTION
        elif other > own:
            mode = Mode.DELETION
        else:
            continue
        length = lcs_length(template, entry.template)
        key = (-length, len(own ^ other), entry.order)
        if best_key is None or key < best_key:
            best_key = key
            best = ReferenceMatch(entry.template, entry.triples, entry.entities, length, mode)
    return best


# -- draft synthesis ---------------------------------------------------------


def _placeholders(triples: Iterable[Triple]) -> set[str]:
    return {e for t in triples for e in (t.subj, t.obj) if is_placeholder(e)}


def _segments(length: int, matched: set[int]) -> list[tuple[int, int]]:
    """Maximal runs ``[start, end)`` of indices not in ``matched``."""
    runs = []
    start = None
    for k in range(length):
        if k in matched:
            if start is not None:
                runs.append((start, k))
                start = None
        elif start is None:
            start = k
    if start is not None:
        runs.append((start, length))
    return runs


def exclusive_placeholders(extra: Iterable[Triple], shared: Iterable[Triple]) -> set[str]:
    return _placeholders(extra) - _placeholders(shared)


def synthesize_draft_template(
    template: Sequence[str], match: ReferenceMatch, triples: Sequence[Triple]
) -> tuple[str, ...]:
    """Turn the revised template into a draft template using the reference."""
    y = tuple(template)
    ref = match.ref_template
    own, other = frozenset(triples), frozenset(match.ref_triples)
    alignment = lcs(y, ref)

    if match.mode is Mode.INSERTION:
        if not other < own:
            raise DataGenError("insertion match requires the reference triples to be a strict subset")
        extra = exclusive_placeholders(own - other, other)
        matched = {i for i, _ in alignment}
        clash = sorted({y[i] for i in matched} & extra)
        if clash:
            raise DataGenError(f"placeholder {clash[0]} to be removed lies on the common subsequence")
        drop = set()
        for start, end in _segments(len(y), matched):
            if extra.intersection(y[start:end]):
                drop.update(range(start, end))
        return tuple(tok for k, tok in enumerate(y) if k not in drop)

    if not other > own:
        raise DataGenError("deletion match requires the reference triples to be a strict superset")
    extra = exclusive_placeholders(other - own, own)
    matched_ref = {j: i for i, j in alignment}
    clash = sorted({ref[j] for j in matched_ref} & extra)
    if clash:
        raise DataGenError(f"placeholder {clash[0]} to be copied lies on the common subsequence")
    # splice position in y: after the y token aligned with the preceding common token
    inserts: dict[int, tuple[str, ...]] = {}
    for start, end in _segments(len(ref), set(matched_ref)):
        segment = ref[start:end]
        if not extra.intersection(segment):
            continue
        anchor = matched_ref[start - 1] if start > 0 else -1
        inserts[anchor] = segment
    out = list(inserts.get(-1, ()))
    for i, tok in enumerate(y):
        out.append(tok)
        out.extend(inserts.get(i, ()))
    return tuple(out)


def lexicalize(template: Sequence[str], own: EntityMap, ref: Optional[EntityMap] = None) -> tuple[str, ...]:
    out = []
    for tok in template:
        if not is_placeholder(tok):
            out.append(tok)
        elif tok in own:
            out.append(own[tok])
        elif ref is not None and tok in ref:
            out.append(ref[tok])
        else:
            raise DataGenError(f"unresolved placeholder {tok}")
    return tuple(out)


# -- whole pipeline ------------------------------------------------------------


def _synthesize_one(args) -> Optional[Instance]:
    (triples, text), store, augment = args
    t_tmpl, y_tmpl, own = delexicalize(triples, text)
    match = retrieve_reference(t_tmpl, y_tmpl, store)
    if match is None:
        return None
    x_tmpl = synthesize_draft_template(y_tmpl, match, t_tmpl)
    if x_tmpl == y_tmpl:
        return None
    draft = lexicalize(x_tmpl, own, match.ref_entities)
    pairs = list(own.items())
    for tok in dict.fromkeys(x_tmpl):
        if is_placeholder(tok) and tok not in own:
            pairs.append((tok, match.ref_entities[tok]))
    try:
        entities = EntityMap(pairs)
    except FormatError:
        # a borrowed entity collides with one of the instance's own entities
        return None
    out_triples = augment_root(triples) if augment else tuple(triples)
    return Instance(triples=out_triples, draft=draft, revised=tuple(text), entities=entities)


def make_dataset(
    corpus: Sequence[tuple[Sequence[Triple], Sequence[str]]],
    augment_root_triples: bool = False,
    threads: int = 1,
) -> list[Instance]:
    """Build editing instances; pairs without a usable reference are skipped."""
    corpus = [(tuple(ts), tuple(text)) for ts, text in corpus]
    store = build_store(corpus)
    jobs = [(pair, store, augment_root_triples) for pair in corpus]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_synthesize_one, jobs))
    else:
        results = [_synthesize_one(job) for job in jobs]
    dataset = [inst for inst in results if inst is not None]
    log.info("make_dataset: %d of %d pairs produced instances", len(dataset), len(corpus))
    return dataset
