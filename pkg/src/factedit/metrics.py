"""Fluency and fidelity metrics for revised texts.

All functions take corpora of token sequences and return scores scaled to
[0, 100].
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass

Corpus = Sequence[Sequence[str]]


class MetricError(ValueError):
    pass


def _same_length(*corpora: Corpus) -> int:
    sizes = [len(c) for c in corpora]
    if len(set(sizes)) != 1:
        raise MetricError("corpus size mismatch: " + " vs ".join(str(s) for s in sizes))
    return sizes[0]


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu(preds: Corpus, refs: Corpus, max_n: int = 4) -> float:
    """Corpus BLEU with uniform weights, brevity penalty and no smoothing."""
    if _same_length(preds, refs) == 0:
        raise MetricError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    pred_len = ref_len = 0
    for p, r in zip(preds, refs):
        pred_len += len(p)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            pc = Counter(ngrams(p, n))
            rc = Counter(ngrams(r, n))
            matches[n - 1] += sum(min(c, rc[g]) for g, c in pc.items())
            totals[n - 1] += max(len(p) - n + 1, 0)
    if pred_len == 0 or min(matches) == 0:
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if pred_len > ref_len else math.exp(1.0 - ref_len / pred_len)
    return 100.0 * bp * math.exp(log_prec)


# -- SARI ---------------------------------------------------------------------
# n-gram *sets* per sentence, single reference, F1 for all three operations


def _f1(tp: int, selected: int, relevant: int) -> float:
    precision = tp / selected if selected else 1.0
    recall = tp / relevant if relevant else 1.0
    if precision > 0 and recall > 0:
        return 2 * precision * recall / (precision + recall)
    return 0.0


def sari_sentence(source: Sequence[str], pred: Sequence[str], ref: Sequence[str], max_n: int = 4):
    """Returns ``(overall, keep, add, delete)`` in [0, 1] for one sentence."""
    keep = add = delete = 0.0
    for n in range(1, max_n + 1):
        s, p, r = set(ngrams(source, n)), set(ngrams(pred, n)), set(ngrams(ref, n))
        sp, sr = s & p, s & r
        keep += _f1(len(sp & sr), len(sp), len(sr))
        p_add, r_add = p - s, r - s
        add += _f1(len(p_add & r_add), len(p_add), len(r_add))
        p_del, r_del = s - p, s - r
        delete += _f1(len(p_del & r_del), len(p_del), len(r_del))
    keep, add, delete = keep / max_n, add / max_n, delete / max_n
    return (keep + add + delete) / 3.0, keep, add, delete


def sari(sources: Corpus, preds: Corpus, refs: Corpus) -> tuple[float, float, float, float]:
    """Sentence-averaged SARI: ``(overall, keep, add, delete)`` times 100."""
    size = _same_length(sources, preds, refs)
    if size == 0:
        raise MetricError("empty corpus")
    sums = [0.0] * 4
    for s, p, r in zip(sources, preds, refs):
        for k, v in enumerate(sari_sentence(s, p, r)):
            sums[k] += v
    keep, add, delete = (100.0 * v / size for v in sums[1:])
    return (keep + add + delete) / 3.0, keep, add, delete


def exact_match(preds: Corpus, refs: Corpus) -> float:
    size = _same_length(preds, refs)
    if size == 0:
        raise MetricError("empty corpus")
    return 100.0 * sum(tuple(p) == tuple(r) for p, r in zip(preds, refs)) / size


def entity_set(tokens: Iterable[str], inventory: set) -> set:
    return {t for t in tokens if t in inventory}


def fidelity(preds: Corpus, refs: Corpus, inventory: Iterable[str]) -> tuple[float, float, float]:
    """Micro-averaged entity precision, recall and F1.

    Entities are the distinct tokens of a text found in ``inventory``.  With no
    predicted entities precision is 0 (100 if the references have none either);
    recall follows the same rule.
    """
    _same_length(preds, refs)
    inv = set(inventory)
    hit = n_pred = n_ref = 0
    for p, r in zip(preds, refs):
        pe, re_ = entity_set(p, inv), entity_set(r, inv)
        hit += len(pe & re_)
        n_pred += len(pe)
        n_ref += len(re_)
    if n_pred == 0 and n_ref == 0:
        return 100.0, 100.0, 100.0
    precision = 100.0 * hit / n_pred if n_pred else 0.0
    recall = 100.0 * hit / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class EvalReport:
    bleu: float
    sari: float
    sari_keep: float
    sari_add: float
    sari_delete: float
    em: float
    precision: float
    recall: float
    f1: float
    instances: int
    words: int

    def to_record(self) -> dict:
        return {k: (round(v, 4) if isinstance(v, float) else v) for k, v in asdict(self).items()}


def evaluate(sources: Corpus, preds: Corpus, refs: Corpus, inventory: Iterable[str]) -> EvalReport:
    overall, keep, add, delete = sari(sources, preds, refs)
    p, r, f = fidelity(preds, refs, inventory)
    return EvalReport(
        bleu=bleu(preds, refs),
        sari=overall,
        sari_keep=keep,
        sari_add=add,
        sari_delete=delete,
        em=exact_match(preds, refs),
        precision=p,
        recall=r,
        f1=f,
        instances=len(preds),
        words=sum(len(p) for p in preds),
    )


def inventory_of(instances) -> set:
    """Subject/object strings of the triples plus every entity in the entity maps.

    Entity maps also record entities borrowed from reference instances, which
    occur in drafts without being part of the instance's own triples.
    """
    inv = {e for inst in instances for t in inst.triples for e in (t.subj, t.obj)}
    inv.update(e for inst in instances for e in inst.entities.values())
    return inv
