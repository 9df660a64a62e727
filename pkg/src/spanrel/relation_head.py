"""Relation scoring of entity pairs against relation label embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from .encoder import ContractViolation
from .prompt import ConfigurationError
from .span_head import Entity

SCORER_KINDS = ("pair_mlp", "translational", "multiplicative", "complex_bilinear")


@dataclass(frozen=True)
class RelationTriplet:
    head: Entity
    tail: Entity
    relation_index: int
    score: float
    label: Optional[str] = None
    head_index: int = -1
    tail_index: int = -1


class PairRepLayer(nn.Module):
    """Linear map of the concatenated head/tail vectors back to the model width."""

    def __init__(self, hidden_size: int, dropout: float = 0.1, activation: bool = False):
        super().__init__()
        self.dropout = nn.Dropout(dropout)
        self.linear = nn.Linear(2 * hidden_size, hidden_size)
        self.activation = nn.GELU() if activation else nn.Identity()

    def forward(self, head_reps: torch.Tensor, tail_reps: torch.Tensor) -> torch.Tensor:
        return self.activation(self.linear(self.dropout(torch.cat([head_reps, tail_reps], dim=-1))))


def pair_represent(layer: PairRepLayer, head_rep: torch.Tensor, tail_rep: torch.Tensor) -> torch.Tensor:
    if head_rep.shape[-1] != tail_rep.shape[-1]:
        raise ContractViolation("head and tail representations differ in width")
    return layer(head_rep, tail_rep)


def score_relations(pair_reps: torch.Tensor, relation_type_reps: torch.Tensor) -> torch.Tensor:
    if pair_reps.shape[-1] != relation_type_reps.shape[-1]:
        raise ContractViolation("pair and relation representations differ in width")
    return pair_reps @ relation_type_reps.T


def _split_complex(x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    half = x.shape[-1] // 2
    return x[..., :half], x[..., half:]


def triple_score(head: torch.Tensor, relation: torch.Tensor, tail: torch.Tensor, kind: str) -> torch.Tensor:
    """Score triples with broadcasting over leading dimensions.

    translational: -||h + r - t||_2
    multiplicative: sum_i h_i r_i t_i
    complex_bilinear: Re(sum_i h_i r_i conj(t_i)), halves of the vector as real/imaginary parts
    """
    if kind == "translational":
        return -torch.linalg.vector_norm(head + relation - tail, dim=-1)
    if kind == "multiplicative":
        return (head * relation * tail).sum(-1)
    if kind == "complex_bilinear":
        if head.shape[-1] % 2:
            raise ConfigurationError("complex_bilinear scoring needs an even dimension")
        h_re, h_im = _split_complex(head)
        r_re, r_im = _split_complex(relation)
        t_re, t_im = _split_complex(tail)
        return (h_re * r_re * t_re + h_im * r_re * t_im + h_re * r_im * t_im - h_im * r_im * t_re).sum(-1)
    raise ConfigurationError(f"unknown triple scorer {kind!r}; expected one of {SCORER_KINDS}")


def batched_triple_scores(head: torch.Tensor, relations: torch.Tensor, tail: torch.Tensor, kind: str) -> torch.Tensor:
    """(P, D) heads/tails against (M, D) relations -> (P, M) scores in one call."""
    return triple_score(head[:, None, :], relations[None, :, :], tail[:, None, :], kind)


class RelationScorer(nn.Module):
    """Relation logits for a set of (head, tail) span-representation pairs."""

    def __init__(self, hidden_size: int, kind: str = "pair_mlp", dropout: float = 0.1, activation: bool = False):
        super().__init__()
        if kind not in SCORER_KINDS:
            raise ConfigurationError(f"unknown triple scorer {kind!r}; expected one of {SCORER_KINDS}")
        if kind == "complex_bilinear" and hidden_size % 2:
            raise ConfigurationError("complex_bilinear scoring needs an even dimension")
        self.kind = kind
        if kind == "pair_mlp":
            self.pair_rep = PairRepLayer(hidden_size, dropout=dropout, activation=activation)
        if kind == "translational":
            # distances are nonpositive; a learned margin lets probabilities exceed 0.5
            self.margin = nn.Parameter(torch.tensor(4.0))

    def forward(self, head_reps: torch.Tensor, tail_reps: torch.Tensor, relation_reps: torch.Tensor) -> torch.Tensor:
        if self.kind == "pair_mlp":
            return score_relations(self.pair_rep(head_reps, tail_reps), relation_reps)
        scores = batched_triple_scores(head_reps, relation_reps, tail_reps, self.kind)
        if self.kind == "translational":
            scores = scores + self.margin
        return scores


def decode_relations(
    logits: torch.Tensor,
    pairs: Sequence[Tuple[int, int]],
    entities: Sequence[Entity],
    threshold: float = 0.5,
    labels: Optional[Sequence[str]] = None,
) -> List[RelationTriplet]:
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    if logits.numel() == 0:
        return []
    pair_list = list(getattr(pairs, "pairs", pairs))
    probs = torch.sigmoid(logits.detach().double()).cpu()
    out = []
    for p, m in torch.nonzero(probs > threshold).tolist():
        a, b = pair_list[p]
        out.append(RelationTriplet(
            head=entities[a], tail=entities[b], relation_index=m, score=float(probs[p, m]),
            label=labels[m] if labels is not None else None, head_index=a, tail_index=b,
        ))
    out.sort(key=lambda t: (t.head.start, t.tail.start, t.relation_index, t.head.end, t.tail.end))
    return out
