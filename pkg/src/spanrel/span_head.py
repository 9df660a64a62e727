"""Span enumeration, span/type representations, scoring and greedy decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch
from torch import nn

from .encoder import ContractViolation


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int

    @property
    def width(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Entity:
    span: Span
    type_index: int
    score: float
    label: Optional[str] = None

    @property
    def start(self) -> int:
        return self.span.start

    @property
    def end(self) -> int:
        return self.span.end


def enumerate_spans(word_count: int, max_width: int) -> List[Span]:
    if max_width < 1:
        raise ValueError("max_width must be >= 1")
    return [
        Span(i, j)
        for i in range(word_count)
        for j in range(i, min(i + max_width, word_count))
    ]


def span_count(word_count: int, max_width: int) -> int:
    n, w = word_count, max_width
    if n >= w:
        return n * w - w * (w - 1) // 2
    return n * (n + 1) // 2


class SpanRepLayer(nn.Module):
    """Projects ``[h_start; h_end; width_embedding]`` back to the model width."""

    def __init__(self, hidden_size: int, max_width: int, width_dim: Optional[int] = None, dropout: float = 0.0):
        super().__init__()
        width_dim = width_dim or hidden_size // 4
        self.max_width = max_width
        self.width_embedding = nn.Embedding(max_width, width_dim)
        self.proj = nn.Sequential(
            nn.Linear(2 * hidden_size + width_dim, 2 * hidden_size),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(2 * hidden_size, hidden_size),
        )

    def forward(self, word_reps: torch.Tensor, spans: Sequence[Span]) -> torch.Tensor:
        n = word_reps.shape[0]
        if not spans:
            return word_reps.new_zeros(0, self.proj[-1].out_features)
        starts = torch.tensor([s.start for s in spans], device=word_reps.device)
        ends = torch.tensor([s.end for s in spans], device=word_reps.device)
        if int(starts.min()) < 0 or int(ends.max()) >= n or bool((ends < starts).any()):
            raise ContractViolation(f"span out of range for {n} words")
        widths = ends - starts
        if int(widths.max()) >= self.max_width:
            raise ContractViolation(f"span wider than max width {self.max_width}")
        features = torch.cat([word_reps[starts], word_reps[ends], self.width_embedding(widths)], dim=-1)
        return self.proj(features)


def span_represent(layer: SpanRepLayer, word_reps: torch.Tensor, spans: Sequence[Span]) -> torch.Tensor:
    return layer(word_reps, spans)


class TypeProjection(nn.Module):
    """Affine map plus optional nonlinearity applied to label embeddings."""

    def __init__(self, hidden_size: int, activation: Optional[str] = "gelu", dropout: float = 0.0):
        super().__init__()
        self.linear = nn.Linear(hidden_size, hidden_size)
        self.activation = nn.GELU() if activation == "gelu" else nn.Identity()
        self.out = nn.Linear(hidden_size, hidden_size) if activation else None
        self.dropout = nn.Dropout(dropout)

    def forward(self, type_reps: torch.Tensor) -> torch.Tensor:
        x = self.activation(self.linear(type_reps))
        if self.out is not None:
            x = self.out(self.dropout(x))
        return x


def project_entity_types(layer: TypeProjection, entity_type_reps: torch.Tensor) -> torch.Tensor:
    return layer(entity_type_reps)


def score_entities(span_reps: torch.Tensor, projected_types: torch.Tensor) -> torch.Tensor:
    if span_reps.shape[-1] != projected_types.shape[-1]:
        raise ContractViolation("span and type representations differ in width")
    return span_reps @ projected_types.T


def _partially_overlap(a: Span, b: Span) -> bool:
    return (a.start < b.start <= a.end < b.end) or (b.start < a.start <= b.end < a.end)


def _overlap(a: Span, b: Span) -> bool:
    return a.start <= b.end and b.start <= a.end


def conflicts(a: Span, b: Span, flat: bool) -> bool:
    return _overlap(a, b) if flat else _partially_overlap(a, b)


def decode_entities(
    logits: torch.Tensor,
    spans: Sequence[Span],
    threshold: float = 0.3,
    flat: bool = True,
    labels: Optional[Sequence[str]] = None,
) -> List[Entity]:
    """Greedy span selection.

    Each span keeps only its best type among those whose probability clears
    ``threshold``. Candidates are visited by descending score (ties broken by
    start, end, type index) and accepted unless they conflict with an
    already accepted span. Flat mode forbids any overlap; nested mode
    forbids only partial overlap.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    if logits.numel() == 0:
        return []
    probs = torch.sigmoid(logits.detach().double()).cpu()
    candidates = []
    for idx in torch.nonzero(probs > threshold).tolist():
        s, k = idx
        candidates.append((float(probs[s, k]), spans[s], k))
    best = {}
    for score, span, k in candidates:
        cur = best.get(span)
        if cur is None or (score, -k) > (cur[0], -cur[2]):
            best[span] = (score, span, k)
    ordered = sorted(best.values(), key=lambda c: (-c[0], c[1].start, c[1].end, c[2]))

    accepted: List[Entity] = []
    for score, span, k in ordered:
        if any(conflicts(span, e.span, flat) for e in accepted):
            continue
        accepted.append(Entity(span, k, score, labels[k] if labels is not None else None))
    return accepted
