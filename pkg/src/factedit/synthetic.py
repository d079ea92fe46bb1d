"""Small synthetic triple/text corpora for tests and benchmarks.

Each family lists predicates in a fixed order and every text mentions a
prefix of them, so template sets nest and the dataset builder can always find
references.  Texts read ``S p1 O1 , p2 O2 , p3 O3 .``.
"""

from __future__ import annotations

import numpy as np

from .core import Instance, Triple
from .datagen import make_dataset

FAMILIES = {
    "person": [
        ("birthPlace", ("was", "born", "in")),
        ("occupation", ("works", "as", "a")),
        ("spouse", ("is", "married", "to")),
    ],
    "athlete": [
        ("club", ("plays", "for")),
        ("award", ("won", "the")),
        ("nationality", ("is", "from")),
    ],
    "food": [
        ("country", ("comes", "from")),
        ("ingredient", ("contains",)),
        ("course", ("is", "served", "as")),
    ],
}

POOLS = {
    "subject": ["Alan_Bean", "Ada_Lovelace", "Bo_Jackson", "Carla_Diaz", "Dan_Moe", "Eva_Lind", "Femi_Ade",
                "Gina_Roth", "Hugo_Sand", "Iris_Vale", "Bakewell_pudding", "Ajoblanco", "Bionico", "Arem_arem"],
    "birthPlace": ["Wheeler_Texas", "Lyon", "Osaka", "Cork", "Porto", "Tartu"],
    "occupation": ["Test_pilot", "Chemist", "Architect", "Teacher", "Sculptor"],
    "spouse": ["Sue_Bean", "Tom_Reed", "Ana_Cruz", "Lee_Park", "Max_Holt"],
    "club": ["FC_Porto", "Ajax", "Celtic_FC", "AC_Milan", "Boca_Juniors"],
    "award": ["Golden_Boot", "Ballon_d'Or", "Eagle_Award", "Silver_Ball"],
    "nationality": ["Brazil", "Ghana", "Norway", "Chile", "Japan"],
    "country": ["Spain", "Indonesia", "Mexico", "England", "Peru"],
    "ingredient": ["Almond", "Rice", "Banana", "Garlic", "Cream"],
    "course": ["Dessert", "Main_course", "Starter", "Snack"],
}


def render(subject: str, facts) -> tuple[str, ...]:
    tokens = [subject]
    for k, (_, phrase, obj) in enumerate(facts):
        if k:
            tokens.append(",")
        tokens.extend(phrase)
        tokens.append(obj)
    tokens.append(".")
    return tuple(tokens)


def synthetic_corpus(size: int, seed: int = 0):
    """``size`` (triples, text) pairs drawn deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    names = sorted(FAMILIES)
    corpus = []
    for _ in range(size):
        family = FAMILIES[names[rng.integers(len(names))]]
        k = int(rng.integers(1, len(family) + 1))
        subject = POOLS["subject"][rng.integers(len(POOLS["subject"]))]
        facts = []
        for pred, phrase in family[:k]:
            pool = POOLS[pred]
            facts.append((pred, phrase, pool[rng.integers(len(pool))]))
        triples = tuple(Triple(subject, pred, obj) for pred, _, obj in facts)
        corpus.append((triples, render(subject, facts)))
    return corpus


def synthetic_dataset(size: int = 64, seed: int = 0, max_corpus: int = 100_000) -> list[Instance]:
    """Exactly ``size`` editing instances built by the dataset builder."""
    n = size
    while True:
        data = make_dataset(synthetic_corpus(n, seed))
        if len(data) >= size:
            return data[:size]
        if n >= max_corpus:
            raise ValueError(f"could not build {size} instances from {n} corpus pairs")
        n = min(2 * n, max_corpus)


def bench_items(count: int, length: int, n_triples: int = 4, seed: int = 0, vocab_size: int = 200):
    """Random drafts of exactly ``length`` tokens, each with ``n_triples`` triples.

    Returns ``(instances, tokens)`` where ``tokens`` lists every surface form
    used, for building a vocabulary that covers the workload.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{k}" for k in range(vocab_size)]
    ents = [f"E{k}" for k in range(2 * n_triples + 8)]
    preds = [f"p{k}" for k in range(n_triples)]
    out = []
    for _ in range(count):
        subj = ents[rng.integers(8)]
        triples = tuple(Triple(subj, preds[k], ents[8 + k]) for k in range(n_triples))
        draft = tuple(words[k] for k in rng.integers(0, vocab_size, length))
        out.append(Instance(triples, draft, draft))
    return out, words + ents + preds
