import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grounder.embeddings import cosine
from grounder.errors import ConfigurationError, EmptyQueryError
from grounder.parser import STOP_WORDS, Lexicon, parse_query, resolve_token, tokenize


def test_older_man_in_blue(table, lexicon):
    q = parse_query("older man in blue", lexicon, table)
    assert q.entity == "person"
    assert q.attributes == ["older", "man"]
    assert q.colors == ["blue"]
    assert q.residual == []


def test_woman_in_blue_shirt(table, lexicon):
    q = parse_query("the woman in blue shirt", lexicon, table)
    assert (q.entity, q.attributes, q.colors, q.residual) == ("person", ["woman"], ["blue"], ["shirt"])


@pytest.mark.parametrize("text", ["", "   ", "\t\n"])
def test_empty_query(table, lexicon, text):
    with pytest.raises(EmptyQueryError):
        parse_query(text, lexicon, table)


def test_punctuation_and_case(table, lexicon):
    q = parse_query("The WOMAN, in Blue!", lexicon, table)
    assert (q.entity, q.attributes, q.colors) == ("person", ["woman"], ["blue"])


def test_explicit_entity_synonym(table, lexicon):
    q = parse_query("a puppy in red", lexicon, table)
    assert q.entity == "dog" and q.entity_tokens == ["puppy"]


def test_two_entities_keeps_first_and_flags_other(table, lexicon):
    q = parse_query("the person and the dog", lexicon, table)
    assert q.entity == "person"
    assert q.residual == ["dog"] and q.extra_entities == ["dog"]


def test_bad_threshold(table, lexicon):
    with pytest.raises(ConfigurationError):
        parse_query("man", lexicon, table, sim_threshold=0.0)


def test_resolve_member(table):
    assert resolve_token("red", ["red", "green"], table) == ("red", 1.0)


def test_resolve_unknown_token(table):
    assert resolve_token("zebra", ["red", "green"], table) is None


def test_resolve_navy_brute_force(table):
    colors = ["red", "green", "blue"]
    sims = {c: cosine(table.lookup("navy"), table.lookup(c)) for c in colors}
    best = max(colors, key=sims.get)
    assert resolve_token("navy", colors, table, 0.4) == (best, pytest.approx(sims[best]))
    assert best == "blue"


def test_lexicon_overlap_rejected():
    with pytest.raises(ConfigurationError):
        Lexicon({"person": ["man"]}, ("man",), ("red",))


def test_lexicon_json_round_trip(tmp_path, lexicon):
    p = tmp_path / "lex.json"
    p.write_text(json.dumps(lexicon.to_dict()), encoding="utf-8")
    assert Lexicon.load(p) == lexicon


def test_lexicon_unknown_key():
    with pytest.raises(ConfigurationError):
        Lexicon.from_dict({"entity_classes": {}, "attribute_corpus": [], "color_names": [],
                           "extra": 1})


VOCAB = ["man", "woman", "older", "navy", "crimson", "shirt", "dog", "puppy", "people",
         "young", "girl", "blue", "red", "car", "tree", "zebra", "the", "in"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=6),
       st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_partition_determinism_and_monotone_rejection(table, lexicon, words, t1, t2):
    text = " ".join(words)
    lo, hi = sorted((t1, t2))
    a = parse_query(text, lexicon, table, lo)
    assert a == parse_query(text, lexicon, table, lo)
    kept = [w for w in tokenize(text) if w not in STOP_WORDS]
    parts = a.entity_tokens + a.attributes + a.colors + a.residual
    assert sorted(parts) == sorted(kept)
    b = parse_query(text, lexicon, table, hi)
    assert set(a.residual) <= set(b.residual)
