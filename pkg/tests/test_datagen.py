import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BAYMAX_TRIPLES
from factedit.core import EntityMap, Triple, is_placeholder, tokenize
from factedit.datagen import (
    DataGenError,
    Mode,
    ReferenceMatch,
    TemplateStore,
    assign_placeholders,
    augment_root,
    build_store,
    delexicalize,
    lcs,
    lcs_length,
    lexicalize,
    make_dataset,
    retrieve_reference,
    synthesize_draft_template,
)

T = Triple

# -- worked insertion/deletion examples (template level) -------------------------

INSERT_Y = tokenize("AGENT-1 performed as PATIENT-3 on BRIDGE-1 mission that was operated by PATIENT-2 .")
INSERT_REF = tokenize("AGENT-1 served as PATIENT-3 was a crew member of the BRIDGE-1 mission .")
INSERT_OWN = (
    T("AGENT-1", "mission", "BRIDGE-1"),
    T("BRIDGE-1", "backup_pilot", "PATIENT-1"),
    T("BRIDGE-1", "operator", "PATIENT-2"),
    T("AGENT-1", "occupation", "PATIENT-3"),
)
INSERT_REF_TRIPLES = tuple(t for t in INSERT_OWN if t.pred != "operator")

DELETE_Y = tokenize("AGENT-1 was created by BRIDGE-1 and PATIENT-2 .")
DELETE_REF = tokenize("The character of AGENT-1 , whose full name is PATIENT-1 , was created by BRIDGE-1 and PATIENT-2 .")
DELETE_OWN = (
    T("AGENT-1", "creator", "BRIDGE-1"),
    T("BRIDGE-1", "nationality", "PATIENT-2"),
)
DELETE_REF_TRIPLES = DELETE_OWN + (T("AGENT-1", "fullName", "PATIENT-1"),)


def _match(ref, ref_triples, y, mode):
    return ReferenceMatch(ref, ref_triples, EntityMap(), lcs_length(y, ref), mode)


def test_insertion_golden():
    match = _match(INSERT_REF, INSERT_REF_TRIPLES, INSERT_Y, Mode.INSERTION)
    out = synthesize_draft_template(INSERT_Y, match, INSERT_OWN)
    assert out == tokenize("AGENT-1 performed as PATIENT-3 on BRIDGE-1 mission .")
    removed = [tok for tok in INSERT_Y if tok not in out]
    assert removed == ["that", "was", "operated", "by", "PATIENT-2"]


def test_deletion_golden():
    match = _match(DELETE_REF, DELETE_REF_TRIPLES, DELETE_Y, Mode.DELETION)
    out = synthesize_draft_template(DELETE_Y, match, DELETE_OWN)
    assert out == tokenize("AGENT-1 , whose full name is PATIENT-1 , was created by BRIDGE-1 and PATIENT-2 .")
    assert "character" not in out


def test_insertion_nothing_to_remove():
    own = INSERT_OWN
    ref = tuple(t for t in own if t.pred != "backup_pilot")
    # PATIENT-1 never occurs in the text, so the template stays as it is
    match = _match(INSERT_REF, ref, INSERT_Y, Mode.INSERTION)
    assert synthesize_draft_template(INSERT_Y, match, own) == INSERT_Y


def test_ill_formed_match_rejected():
    y = tokenize("AGENT-1 likes PATIENT-1 .")
    own = (T("AGENT-1", "likes", "PATIENT-1"), T("AGENT-1", "knows", "PATIENT-2"))
    ref_text = tokenize("AGENT-1 likes PATIENT-1 .")
    # PATIENT-1 exclusive to the extra triple but on the common subsequence
    ref = (T("AGENT-1", "knows", "PATIENT-2"),)
    own2 = (T("AGENT-1", "knows", "PATIENT-2"), T("AGENT-1", "likes", "PATIENT-1"))
    with pytest.raises(DataGenError, match="PATIENT-1"):
        synthesize_draft_template(y, _match(ref_text, ref, y, Mode.INSERTION), own2)
    with pytest.raises(DataGenError):
        synthesize_draft_template(y, _match(ref_text, own, y, Mode.INSERTION), own)


def test_insertion_dataset_end_to_end():
    """The same insertion example through the full pipeline with real entities."""
    own = (
        T("Alan_Bean", "mission", "Apollo_12"),
        T("Apollo_12", "backup_pilot", "Alfred_Worden"),
        T("Alan_Bean", "occupation", "Test_pilot"),
        T("Apollo_12", "operator", "NASA"),
    )
    ref = own[:3]
    corpus = [
        (own, tokenize("Alan_Bean performed as Test_pilot on Apollo_12 mission that was operated by NASA .")),
        (ref, tokenize("Alan_Bean served as Test_pilot was a crew member of the Apollo_12 mission .")),
    ]
    data = make_dataset(corpus)
    assert len(data) == 2
    assert data[0].draft == tokenize("Alan_Bean performed as Test_pilot on Apollo_12 mission .")
    # the reference pair becomes a deletion instance
    assert len(data[1].draft) > len(data[1].revised)


# -- delexicalization -------------------------------------------------------------


def test_delexicalize_voice_example():
    templates, text, entities = delexicalize(
        [T("Baymax", "voice", "Scott_Adsit")], tokenize("Scott_Adsit does the voice for Baymax")
    )
    assert templates == (T("AGENT-1", "voice", "PATIENT-1"),)
    assert text == tokenize("PATIENT-1 does the voice for AGENT-1")
    assert dict(entities) == {"AGENT-1": "Baymax", "PATIENT-1": "Scott_Adsit"}


def test_delexicalize_no_entities():
    assert delexicalize([], tokenize("hello world")) == ((), ("hello", "world"), EntityMap())


def test_delexicalize_bridge():
    templates, text, _ = delexicalize([T("A", "p", "B"), T("B", "q", "C")], tokenize("A B C"))
    assert templates == (T("AGENT-1", "p", "BRIDGE-1"), T("BRIDGE-1", "q", "PATIENT-1"))
    assert text == ("AGENT-1", "BRIDGE-1", "PATIENT-1")


def test_role_rule_on_baymax():
    m = assign_placeholders(BAYMAX_TRIPLES)
    assert dict(m) == {
        "AGENT-1": "Baymax",
        "BRIDGE-1": "Duncan_Rouleau",
        "PATIENT-1": "American",
        "BRIDGE-2": "Steven_T._Seagle",
        "BRIDGE-3": "Big_Hero_6",
        "PATIENT-2": "Scott_Adsit",
    }


def test_augment_root():
    assert augment_root([T("A", "p", "B")]) == (T("A", "p", "B"), T("ROOT", "IsOf", "A"))
    assert augment_root([T("A", "p", "B"), T("C", "q", "A")]) == (
        T("A", "p", "B"), T("C", "q", "A"), T("ROOT", "IsOf", "C"),
    )
    assert augment_root([]) == ()
    once = augment_root([T("A", "p", "B")])
    assert augment_root(once) == once


# -- store and retrieval ---------------------------------------------------------


def test_store_keeps_first_duplicate():
    a = ((T("X", "p", "Y"),), ("X", "p", "Y"))
    b = ((T("U", "p", "V"),), ("U", "p", "V"))
    store = build_store([a, b])
    assert len(store) == 1
    assert dict(next(iter(store.entries())).entities) == {"AGENT-1": "X", "PATIENT-1": "Y"}
    assert len(build_store([])) == 0


def _store(*pairs):
    store = TemplateStore()
    for triples, text in pairs:
        store.add(text, triples, EntityMap())
    return store


def test_retrieve_prefers_longer_lcs():
    own = (T("AGENT-1", "p", "PATIENT-1"), T("AGENT-1", "q", "PATIENT-2"))
    y = tokenize("AGENT-1 p PATIENT-1 and q PATIENT-2 .")
    short = ((T("AGENT-1", "p", "PATIENT-1"),), tokenize("AGENT-1 x y"))
    long_ = ((T("AGENT-1", "q", "PATIENT-2"),), tokenize("AGENT-1 p PATIENT-1 ."))
    m = retrieve_reference(own, y, _store(short, long_))
    assert m.ref_template == long_[1] and m.lcs_length == 4 and m.mode is Mode.INSERTION


def test_retrieve_ignores_identical_and_unrelated():
    own = (T("AGENT-1", "p", "PATIENT-1"),)
    y = tokenize("AGENT-1 p PATIENT-1")
    same = (own, tokenize("AGENT-1 p PATIENT-1 ."))
    other = ((T("AGENT-1", "r", "PATIENT-1"),), y)
    assert retrieve_reference(own, y, _store(same, other)) is None


def test_retrieve_superset_is_deletion():
    own = (T("AGENT-1", "p", "PATIENT-1"),)
    sup = ((T("AGENT-1", "p", "PATIENT-1"), T("AGENT-1", "q", "PATIENT-2")), tokenize("a b"))
    assert retrieve_reference(own, tokenize("a"), _store(sup)).mode is Mode.DELETION


def test_retrieve_tie_breaks_on_symmetric_difference_then_order():
    own = (T("AGENT-1", "p", "PATIENT-1"),)
    y = tokenize("AGENT-1 p")
    big = (own + (T("AGENT-1", "q", "PATIENT-2"), T("AGENT-1", "r", "PATIENT-3")), tokenize("AGENT-1 p x"))
    small_a = (own + (T("AGENT-1", "q", "PATIENT-2"),), tokenize("AGENT-1 p y"))
    small_b = (own + (T("AGENT-1", "r", "PATIENT-3"),), tokenize("AGENT-1 p z"))
    m = retrieve_reference(own, y, _store(big, small_a, small_b))
    assert m.ref_template == small_a[1]


# -- lexicalize ------------------------------------------------------------------------


def test_lexicalize():
    own = EntityMap({"AGENT-1": "Baymax", "PATIENT-1": "Dessert"})
    assert lexicalize(tokenize("AGENT-1 is PATIENT-1"), own) == ("Baymax", "is", "Dessert")
    assert lexicalize(("no", "placeholders"), own) == ("no", "placeholders")
    with pytest.raises(DataGenError, match="PATIENT-9"):
        lexicalize(("PATIENT-9",), own)
    ref = EntityMap({"PATIENT-2": "Eagle_Award"})
    assert lexicalize(("AGENT-1", "PATIENT-2"), own, ref) == ("Baymax", "Eagle_Award")


# -- LCS ---------------------------------------------------------------------------------


def test_lcs_examples():
    assert lcs("abc", "abc") == [(0, 0), (1, 1), (2, 2)]
    assert lcs("abc", "xyz") == []
    assert lcs("axbyc", "abc") == [(0, 0), (2, 1), (4, 2)]
    assert lcs("", "abc") == []


def _brute_lcs_length(a, b):
    for k in range(min(len(a), len(b)), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            sub = [a[i] for i in idx]
            it = iter(b)
            if all(any(c == d for d in it) for c in sub):
                return k
    return 0


def _all_alignments(a, b, i=0, j=0):
    yield []
    for i2 in range(i, len(a)):
        for j2 in range(j, len(b)):
            if a[i2] == b[j2]:
                for rest in _all_alignments(a, b, i2 + 1, j2 + 1):
                    yield [(i2, j2)] + rest


short_seq = st.lists(st.sampled_from("abc"), max_size=12)


@settings(max_examples=150, deadline=None)
@given(short_seq, short_seq)
def test_lcs_length_matches_brute_force(a, b):
    pairs = lcs(a, b)
    assert len(pairs) == lcs_length(a, b) == _brute_lcs_length(a, b)
    assert all(a[i] == b[j] for i, j in pairs)
    assert all(p[0] < q[0] and p[1] < q[1] for p, q in zip(pairs, pairs[1:]))


tiny_seq = st.lists(st.sampled_from("ab"), max_size=6)


@settings(max_examples=150, deadline=None)
@given(tiny_seq, tiny_seq)
def test_lcs_is_lexicographically_earliest(a, b):
    aligns = list(_all_alignments(a, b))
    best = max(len(x) for x in aligns)
    assert lcs(a, b) == min(x for x in aligns if len(x) == best)


# -- pipeline properties ------------------------------------------------------------------


def test_two_instance_corpus():
    small = ((T("Ann", "p", "Bob"),), tokenize("Ann p Bob ."))
    big = ((T("Ann", "p", "Bob"), T("Ann", "q", "Cat")), tokenize("Ann p Bob and q Cat ."))
    data = make_dataset([small, big])
    assert len(data) == 2
    assert data[0].draft == tokenize("Ann p Bob and q Cat .")  # deletion: copies the extra fact
    assert data[1].draft == tokenize("Ann p Bob .")  # insertion: drops it
    assert all(d.draft != d.revised for d in data)


def test_single_instance_corpus_is_empty():
    assert make_dataset([((T("Ann", "p", "Bob"),), tokenize("Ann p Bob ."))]) == []


def _is_subsequence(small, big):
    it = iter(big)
    return all(any(s == b for b in it) for s in small)


def test_synthetic_pipeline_properties():
    from factedit.synthetic import synthetic_corpus

    corpus = synthetic_corpus(200, seed=3)
    data = make_dataset(corpus)
    assert data
    assert make_dataset(corpus) == data
    assert make_dataset(corpus, threads=4) == data
    store = build_store(corpus)
    for inst in data:
        t_tmpl, y_tmpl, own = delexicalize(inst.triples, inst.revised)
        match = retrieve_reference(t_tmpl, y_tmpl, store)
        x_tmpl = synthesize_draft_template(y_tmpl, match, t_tmpl)
        if match.mode is Mode.INSERTION:
            assert _is_subsequence(x_tmpl, y_tmpl)
            extra = {e for t in set(t_tmpl) - set(match.ref_triples) for e in (t.subj, t.obj)}
            extra -= {e for t in match.ref_triples for e in (t.subj, t.obj)}
            assert not extra & set(x_tmpl)
        else:
            assert _is_subsequence(y_tmpl, x_tmpl)
        # re-delexicalizing the draft with the instance map gives the draft template back
        inverse = {v: k for k, v in inst.entities.items()}
        assert tuple(inverse.get(tok, tok) for tok in inst.draft) == x_tmpl
        assert all(not is_placeholder(tok) for tok in inst.draft)


def test_augment_root_flag_applies_to_output():
    small = ((T("Ann", "p", "Bob"),), tokenize("Ann p Bob ."))
    big = ((T("Ann", "p", "Bob"), T("Ann", "q", "Cat")), tokenize("Ann p Bob and q Cat ."))
    data = make_dataset([small, big], augment_root_triples=True)
    assert T("ROOT", "IsOf", "Ann") in data[0].triples
