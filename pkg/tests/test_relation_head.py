import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from spanrel.encoder import ContractViolation
from spanrel.prompt import ConfigurationError
from spanrel.relation_head import (
    SCORER_KINDS,
    PairRepLayer,
    RelationScorer,
    batched_triple_scores,
    decode_relations,
    pair_represent,
    score_relations,
    triple_score,
)
from spanrel.span_head import Entity, Span


def test_pair_representation():
    layer = PairRepLayer(4)
    for p in layer.parameters():
        torch.nn.init.zeros_(p)
    assert torch.equal(pair_represent(layer, torch.randn(4), torch.randn(4)), torch.zeros(4))
    torch.manual_seed(0)
    layer = PairRepLayer(4).eval()
    h, t = torch.randn(4), torch.randn(4)
    assert not torch.allclose(pair_represent(layer, h, t), pair_represent(layer, t, h))
    assert torch.equal(pair_represent(layer, h, t), pair_represent(layer, h, t))
    with pytest.raises(ContractViolation):
        pair_represent(layer, h, torch.randn(3))


def test_relation_scoring():
    assert float(score_relations(torch.tensor([[1.0, 0.0]]), torch.tensor([[0.0, 2.0]]))) == 0.0
    torch.manual_seed(0)
    p, r = torch.randn(5, 6), torch.randn(3, 6)
    full = score_relations(p, r)
    for i in range(5):
        for m in range(3):
            assert math.isclose(float(full[i, m]), sum(float(p[i, d] * r[m, d]) for d in range(6)),
                                rel_tol=1e-5, abs_tol=1e-6)
    empty = score_relations(p, torch.zeros(0, 6))
    assert empty.shape == (5, 0)
    ents = [Entity(Span(0, 0), 0, 0.9), Entity(Span(2, 2), 0, 0.9)]
    assert decode_relations(torch.zeros(2, 0), [(0, 1), (1, 0)], ents) == []


def test_triple_score_examples():
    h, r = torch.randn(8), torch.randn(8)
    assert float(triple_score(h, r, h + r, "translational")) == pytest.approx(0.0, abs=1e-6)
    ones = torch.ones(8)
    assert float(triple_score(ones, ones, ones, "multiplicative")) == 8.0
    with pytest.raises(ConfigurationError):
        triple_score(torch.ones(3), torch.ones(3), torch.ones(3), "complex_bilinear")
    with pytest.raises(ConfigurationError):
        triple_score(h, r, h, "rotational")
    with pytest.raises(ConfigurationError):
        RelationScorer(7, "complex_bilinear")


def test_complex_bilinear_matches_complex_arithmetic():
    torch.manual_seed(0)
    h, r, t = (torch.randn(6, dtype=torch.float64) for _ in range(3))
    to_c = lambda x: torch.complex(x[:3], x[3:])  # noqa: E731
    expected = float(torch.real((to_c(h) * to_c(r) * torch.conj(to_c(t))).sum()))
    assert float(triple_score(h, r, t, "complex_bilinear")) == pytest.approx(expected, rel=1e-12)


vectors = st.lists(st.floats(-3, 3), min_size=6, max_size=6)


@given(vectors, vectors, vectors)
def test_multiplicative_is_head_tail_symmetric(h, r, t):
    h, r, t = (torch.tensor(v, dtype=torch.float64) for v in (h, r, t))
    assert float(triple_score(h, r, t, "multiplicative")) == pytest.approx(float(triple_score(t, r, h, "multiplicative")))


@given(vectors, vectors, vectors, vectors)
def test_translational_is_shift_invariant(h, r, t, c):
    h, r, t, c = (torch.tensor(v, dtype=torch.float64) for v in (h, r, t, c))
    a = float(triple_score(h, r, t, "translational"))
    b = float(triple_score(h + c, r, t + c, "translational"))
    assert a == pytest.approx(b, abs=1e-9)


@pytest.mark.parametrize("kind", ["translational", "multiplicative", "complex_bilinear"])
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 10_000))
def test_batched_triple_scoring_equals_looped(kind, n_pairs, n_rel, seed):
    g = torch.Generator().manual_seed(seed)
    heads, tails = torch.randn(n_pairs, 8, generator=g), torch.randn(n_pairs, 8, generator=g)
    rels = torch.randn(n_rel, 8, generator=g)
    batched = batched_triple_scores(heads, rels, tails, kind)
    for p in range(n_pairs):
        for m in range(n_rel):
            single = float(triple_score(heads[p], rels[m], tails[p], kind))
            assert math.isclose(float(batched[p, m]), single, rel_tol=1e-6, abs_tol=1e-6)


@pytest.mark.parametrize("kind", SCORER_KINDS)
def test_scorer_shapes(kind):
    torch.manual_seed(0)
    scorer = RelationScorer(8, kind).eval()
    assert scorer(torch.randn(5, 8), torch.randn(5, 8), torch.randn(3, 8)).shape == (5, 3)


def _entities(n):
    return [Entity(Span(2 * i, 2 * i), 0, 0.9, "x") for i in range(n)]


def test_decode_relation_examples():
    ents = _entities(2)
    pairs = [(0, 1), (1, 0)]
    assert decode_relations(torch.full((2, 2), -1.0), pairs, ents) == []
    logits = torch.tensor([[2.0, 3.0], [-2.0, -1.0]])
    out = decode_relations(logits, pairs, ents, labels=["a", "b"])
    assert [(t.head_index, t.tail_index, t.label) for t in out] == [(0, 1, "a"), (0, 1, "b")]


@given(st.integers(2, 5), st.integers(1, 4), st.data())
def test_decode_relations_matches_oracle_and_is_monotone(n, m, data):
    ents = _entities(n)
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b]
    probs = [[data.draw(st.floats(0.01, 0.99)) for _ in range(m)] for _ in pairs]
    logits = torch.logit(torch.tensor(probs, dtype=torch.float64))
    probs = torch.sigmoid(logits).tolist()  # the values the decoder thresholds
    lo, hi = sorted(data.draw(st.floats(0.05, 0.95)) for _ in range(2))
    got = decode_relations(logits, pairs, ents, lo)
    expected = sorted(((ents[a].start, ents[b].start, k), (a, b)) for (a, b), row in zip(pairs, probs)
                      for k in range(m) if row[k] > lo)
    assert [(t.head.start, t.tail.start, t.relation_index) for t in got] == [key for key, _ in expected]
    assert all(t.head in ents and t.tail in ents and t.head is not t.tail for t in got)
    high = {(t.head_index, t.tail_index, t.relation_index) for t in decode_relations(logits, pairs, ents, hi)}
    assert high <= {(t.head_index, t.tail_index, t.relation_index) for t in got}
