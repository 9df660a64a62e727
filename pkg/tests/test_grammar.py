import json
from collections import Counter

import pytest

from spanrel.grammar import GrammarError, GrammarSpec, RelationSchema, Template, default_grammar, generate_corpus, load_grammar


def test_default_grammar_shape():
    g = default_grammar()
    assert len(g.entity_types) == 5
    assert len(g.relation_labels) == 4
    assert set(g.paraphrases()) == set(g.relation_labels)


def test_paraphrases_share_a_word_with_their_label():
    for label, para in default_grammar().paraphrases().items():
        assert para != label
        assert set(label.split()) & set(para.split())


def test_template_semantics():
    g = GrammarSpec({"person": ["Ann"], "organization": ["Acme"]},
                    [RelationSchema("works for", ["person"], ["organization"])],
                    [Template("{person} works for {organization}", [("person", "works for", "organization")])])
    (ex,) = generate_corpus(g, 1, seed=0)
    assert ex.tokens == ["Ann", "works", "for", "Acme"]
    assert ex.gold_entities == [(0, 0, "person"), (3, 3, "organization")]
    assert ex.gold_relations == [(0, 1, "works for")]


def test_determinism():
    g = default_grammar()
    assert generate_corpus(g, 100, seed=7) == generate_corpus(g, 100, seed=7)
    assert generate_corpus(g, 100, seed=7) != generate_corpus(g, 100, seed=8)


def test_emitted_spans_index_real_words():
    for ex in generate_corpus(default_grammar(), 300, seed=1):
        ex.validate()
        for s, e, label in ex.gold_entities:
            assert " ".join(ex.tokens[s:e + 1]) in default_grammar().lexicon[label]


def test_label_frequencies_follow_template_weights():
    g = default_grammar()
    corpus = generate_corpus(g, 1000, seed=11)
    total = sum(t.weight for t in g.templates)
    for label in g.relation_labels:
        expected = sum(t.weight for t in g.templates if any(r[1] == label for r in t.relations)) / total
        observed = sum(any(lab == label for _, _, lab in ex.gold_relations) for ex in corpus) / len(corpus)
        assert abs(observed - expected) <= 0.05, label
    for etype in g.entity_types:
        expected = sum(t.weight for t in g.templates if any(s.split("#")[0] == etype for s in t.slots())) / total
        observed = sum(any(lab == etype for _, _, lab in ex.gold_entities) for ex in corpus) / len(corpus)
        assert abs(observed - expected) <= 0.05, etype


@pytest.mark.parametrize("mutate", [
    lambda d: d["templates"].append({"text": "{planet} is big", "relations": []}),
    lambda d: d["templates"].append({"text": "{person} x {city}", "relations": [["person", "orbits", "city"]]}),
    lambda d: d["templates"].append({"text": "{person} x {city}", "relations": [["person", "works for", "city"]]}),
    lambda d: d.pop("lexicon"),
    lambda d: d.__setitem__("templates", []),
])
def test_unresolvable_grammars_rejected(tmp_path, mutate):
    data = default_grammar().to_dict()
    mutate(data)
    path = tmp_path / "g.json"
    path.write_text(json.dumps(data))
    with pytest.raises(GrammarError):
        load_grammar(path)


def test_grammar_file_round_trip(tmp_path):
    g = default_grammar(seed=4)
    path = tmp_path / "g.json"
    path.write_text(json.dumps(g.to_dict()))
    assert generate_corpus(load_grammar(path), 20) == generate_corpus(g, 20)


def test_size_must_be_positive():
    with pytest.raises(ValueError):
        generate_corpus(default_grammar(), 0)


def test_generate_counts_are_consistent():
    corpus = generate_corpus(default_grammar(), 50, seed=2)
    assert Counter(len(ex.gold_entities) >= 2 for ex in corpus)[True] == 50
