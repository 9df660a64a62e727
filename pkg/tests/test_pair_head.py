import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from spanrel.pair_head import (
    DECODER_KINDS,
    AdjacencyDecoder,
    AdjacencyDecoderKind,
    adjacency_scores,
    apply_pair_mask,
    enumerate_all_pairs,
    gcn_normalize,
    select_pairs,
)
from spanrel.prompt import ConfigurationError


def test_all_pairs_examples():
    assert len(enumerate_all_pairs(4)) == 12
    assert len(enumerate_all_pairs(1)) == 0
    assert enumerate_all_pairs(["a", "b", "c"]).pairs == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]


@given(st.integers(0, 12))
def test_all_pairs_count_and_no_self_pairs(n):
    pairs = enumerate_all_pairs(n).pairs
    assert len(pairs) == n * (n - 1)
    assert all(a != b for a, b in pairs)
    assert pairs == sorted(pairs)


def test_decoder_kind_validation():
    with pytest.raises(ConfigurationError):
        AdjacencyDecoderKind("laplacian").validate()
    with pytest.raises(ConfigurationError):
        AdjacencyDecoderKind("bilinear", projection_dim=None).validate()
    with pytest.raises(ConfigurationError):
        AdjacencyDecoderKind("attention", num_heads=None).validate()


@pytest.mark.parametrize("kind", DECODER_KINDS)
def test_every_decoder_emits_probabilities(kind):
    torch.manual_seed(0)
    dec = AdjacencyDecoder(8, AdjacencyDecoderKind(kind, projection_dim=4, num_heads=2)).eval()
    adj = adjacency_scores(dec, torch.randn(5, 8))
    assert adj.shape == (5, 5)
    assert bool(((adj >= 0) & (adj <= 1)).all())


def test_dot_decoder_examples():
    dec = AdjacencyDecoder(4, AdjacencyDecoderKind("dot"))
    assert torch.equal(dec(torch.zeros(3, 4)), torch.full((3, 3), 0.5))
    norm = AdjacencyDecoder(4, AdjacencyDecoderKind("dot", normalize=True))
    s = torch.tensor([1.0, 2.0, -1.0, 0.5])
    adj = norm(torch.stack([s, 3.0 * s]))
    assert math.isclose(float(adj[0, 1]), 1 / (1 + math.exp(-1)), rel_tol=1e-6)


@pytest.mark.parametrize("kind", ["dot", "bilinear"])
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_dot_and_bilinear_are_symmetric(kind, n, seed):
    torch.manual_seed(seed)
    dec = AdjacencyDecoder(6, AdjacencyDecoderKind(kind, projection_dim=3))
    adj = dec(torch.randn(n, 6))
    torch.testing.assert_close(adj, adj.T)


def test_mlp_decoder_is_asymmetric_in_general():
    torch.manual_seed(3)
    dec = AdjacencyDecoder(6, AdjacencyDecoderKind("mlp"))
    adj = dec(torch.randn(4, 6))
    assert not torch.allclose(adj, adj.T)


def test_attention_decoder_diagonal_is_zero():
    torch.manual_seed(0)
    dec = AdjacencyDecoder(8, AdjacencyDecoderKind("attention", num_heads=2)).eval()
    adj = dec(torch.randn(4, 8))
    assert torch.equal(torch.diagonal(adj), torch.zeros(4))


def test_mask_examples():
    torch.manual_seed(0)
    adj = torch.rand(4, 4)
    assert torch.equal(apply_pair_mask(adj, torch.ones(4, dtype=torch.bool)), adj)
    out = apply_pair_mask(adj, torch.tensor([True, False, True, True]))
    assert torch.equal(out[1], torch.zeros(4)) and torch.equal(out[:, 1], torch.zeros(4))
    with pytest.raises(ValueError):
        apply_pair_mask(adj, torch.ones(3, dtype=torch.bool))


@given(st.integers(1, 6), st.data())
def test_mask_matches_loop_oracle(n, data):
    values = [[data.draw(st.floats(0, 1)) for _ in range(n)] for _ in range(n)]
    mask = [data.draw(st.booleans()) for _ in range(n)]
    out = apply_pair_mask(torch.tensor(values, dtype=torch.float64), torch.tensor(mask))
    for a in range(n):
        for b in range(n):
            assert float(out[a, b]) == (values[a][b] if mask[a] and mask[b] else 0.0)


@pytest.mark.parametrize("kind", ["dot", "mlp", "gcn", "gat"])
def test_decoder_mask_zeros_padded_entities(kind):
    torch.manual_seed(0)
    dec = AdjacencyDecoder(8, AdjacencyDecoderKind(kind, projection_dim=4, num_heads=2)).eval()
    adj = dec(torch.randn(4, 8), torch.tensor([True, True, False, True]))
    assert torch.equal(adj[2], torch.zeros(4)) and torch.equal(adj[:, 2], torch.zeros(4))


def test_select_pairs_examples():
    adj = torch.tensor([[0.0, 0.9, 0.2], [0.6, 0.0, 0.5], [0.51, 0.1, 0.0]])
    assert select_pairs(adj, 0.5).pairs == [(0, 1), (1, 0), (2, 0)]
    assert select_pairs(adj, 1.0).pairs == []
    positive = torch.full((3, 3), 0.3)
    assert select_pairs(positive, 0.0).pairs == enumerate_all_pairs(3).pairs


@given(st.integers(1, 6), st.data())
def test_select_pairs_matches_scan_and_is_monotone(n, data):
    values = [[data.draw(st.floats(0, 1)) for _ in range(n)] for _ in range(n)]
    lo, hi = sorted(data.draw(st.floats(0, 1)) for _ in range(2))
    adj = torch.tensor(values, dtype=torch.float64)
    expected = [(a, b) for a in range(n) for b in range(n) if a != b and values[a][b] > lo]
    assert select_pairs(adj, lo).pairs == expected
    assert set(select_pairs(adj, hi).pairs) <= set(select_pairs(adj, lo).pairs)


@given(st.floats(0, 0.999))
def test_select_over_all_ones_reproduces_enumeration(tau):
    assert select_pairs(torch.ones(5, 5), tau).pairs == enumerate_all_pairs(5).pairs


@given(st.integers(1, 5), st.data())
def test_gcn_normalisation_matches_entrywise_oracle(n, data):
    values = [[data.draw(st.floats(0, 1)) for _ in range(n)] for _ in range(n)]
    out = gcn_normalize(torch.tensor(values, dtype=torch.float64))
    tilde = [[values[a][b] + (1.0 if a == b else 0.0) for b in range(n)] for a in range(n)]
    degree = [sum(row) for row in tilde]
    for a in range(n):
        for b in range(n):
            expected = tilde[a][b] / math.sqrt(degree[a] * degree[b])
            assert math.isclose(float(out[a, b]), expected, rel_tol=1e-12, abs_tol=1e-15)
            assert 0.0 <= float(out[a, b]) <= 1.0 + 1e-12


def test_attention_decoder_with_everything_masked_is_zero():
    dec = AdjacencyDecoder(8, AdjacencyDecoderKind("attention", num_heads=2))
    adj = dec(torch.randn(3, 8), torch.zeros(3, dtype=torch.bool))
    assert torch.equal(adj, torch.zeros(3, 3))
