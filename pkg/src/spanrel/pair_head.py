"""Entity pair construction: all-pairs enumeration or adjacency-guided selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .prompt import ConfigurationError

DECODER_KINDS = ("dot", "bilinear", "mlp", "attention", "gcn", "gat")


@dataclass
class PairCandidateSet:
    pairs: List[Tuple[int, int]]
    adjacency: Optional[torch.Tensor] = None
    mask: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class AdjacencyDecoderKind:
    kind: str
    projection_dim: Optional[int] = 32
    num_heads: Optional[int] = 2
    normalize: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in DECODER_KINDS:
            raise ConfigurationError(f"unknown adjacency decoder {self.kind!r}; expected one of {DECODER_KINDS}")
        if self.kind in ("bilinear", "gat") and not self.projection_dim:
            raise ConfigurationError(f"{self.kind} decoder needs projection_dim")
        if self.kind in ("attention", "gat") and not self.num_heads:
            raise ConfigurationError(f"{self.kind} decoder needs num_heads")


def enumerate_all_pairs(entities) -> PairCandidateSet:
    """All ordered non-self pairs in lexicographic order; accepts a list or a count."""
    num_entities = entities if isinstance(entities, int) else len(entities)
    pairs = [(a, b) for a in range(num_entities) for b in range(num_entities) if a != b]
    return PairCandidateSet(pairs=pairs)


def apply_pair_mask(adjacency: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if adjacency.shape != (mask.shape[0], mask.shape[0]):
        raise ValueError(f"adjacency {tuple(adjacency.shape)} does not match mask of length {mask.shape[0]}")
    m = mask.to(adjacency.dtype)
    return adjacency * m[:, None] * m[None, :]


def select_pairs(adjacency: torch.Tensor, threshold: float = 0.5) -> PairCandidateSet:
    n = adjacency.shape[0]
    keep = adjacency.detach() > threshold
    keep = keep & ~torch.eye(n, dtype=torch.bool, device=adjacency.device)
    pairs = [tuple(p) for p in torch.nonzero(keep).tolist()]
    return PairCandidateSet(pairs=pairs, adjacency=adjacency)


def gcn_normalize(adjacency: torch.Tensor) -> torch.Tensor:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    a_tilde = adjacency + torch.eye(adjacency.shape[0], dtype=adjacency.dtype, device=adjacency.device)
    d_inv_sqrt = a_tilde.sum(-1).rsqrt()
    # Exact values never exceed 1; the clamp removes a one-ulp overshoot of rsqrt near row sums of 1.
    return (d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]).clamp(max=1.0)


class AdjacencyDecoder(nn.Module):
    """Predicts a soft adjacency matrix in [0, 1] over entity span representations."""

    def __init__(self, hidden_size: int, config: AdjacencyDecoderKind):
        super().__init__()
        config.validate()
        self.config = config
        kind = config.kind
        d = hidden_size
        if kind == "bilinear":
            self.proj = nn.Linear(d, config.projection_dim, bias=False)
        elif kind == "mlp":
            self.mlp = nn.Sequential(nn.Linear(2 * d, d), nn.GELU(), nn.Linear(d, 1))
        elif kind == "attention":
            if d % config.num_heads:
                raise ConfigurationError("attention decoder needs hidden size divisible by num_heads")
            self.query = nn.Linear(d, d)
            self.key = nn.Linear(d, d)
        elif kind == "gcn":
            self.gcn = nn.Linear(d, d)
        elif kind == "gat":
            self.attn = nn.MultiheadAttention(d, config.num_heads, batch_first=True)
            self.proj = nn.Linear(d, config.projection_dim, bias=False)
            self.bilinear = nn.Parameter(torch.eye(config.projection_dim))

    def _dot(self, s: torch.Tensor) -> torch.Tensor:
        if self.config.normalize:
            s = F.normalize(s, dim=-1)
        return torch.sigmoid(s @ s.T)

    def _attention_weights(self, s: torch.Tensor, key_padding: Optional[torch.Tensor]) -> torch.Tensor:
        """Softmax attention rows averaged over heads, diagonal zeroed afterwards."""
        n, d = s.shape
        h = self.config.num_heads
        q = self.query(s).view(n, h, d // h).transpose(0, 1)
        k = self.key(s).view(n, h, d // h).transpose(0, 1)
        logits = q @ k.transpose(1, 2) / (d // h) ** 0.5
        if key_padding is not None:
            logits = logits.masked_fill(key_padding[None, None, :], float("-inf"))
        adj = torch.nan_to_num(torch.softmax(logits, dim=-1), nan=0.0).mean(0)  # all-padded rows -> 0
        return adj * (1 - torch.eye(n, dtype=adj.dtype, device=adj.device))

    def forward(self, span_reps: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        kind = self.config.kind
        s = span_reps
        key_padding = None if mask is None else ~mask.bool()
        if kind == "dot":
            adj = self._dot(s)
        elif kind == "bilinear":
            z = self.proj(s)
            adj = torch.sigmoid(z @ z.T)
        elif kind == "mlp":
            n = s.shape[0]
            pairs = torch.cat([s[:, None, :].expand(n, n, -1), s[None, :, :].expand(n, n, -1)], dim=-1)
            adj = torch.sigmoid(self.mlp(pairs).squeeze(-1))
        elif kind == "attention":
            adj = self._attention_weights(s, key_padding)
        elif kind == "gcn":
            initial = self._dot(s)
            if mask is not None:
                initial = apply_pair_mask(initial, mask)
            refined = F.gelu(gcn_normalize(initial) @ self.gcn(s))
            adj = torch.sigmoid(refined @ refined.T)
        else:
            updated, _ = self.attn(s[None], s[None], s[None], key_padding_mask=_batch(key_padding),
                                   need_weights=False)
            z = self.proj(updated[0] + s)
            adj = torch.sigmoid(z @ self.bilinear @ z.T)
        if mask is not None:
            adj = apply_pair_mask(adj, mask)
        return adj


def _batch(mask: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
    return None if mask is None else mask[None]


def adjacency_scores(decoder: AdjacencyDecoder, span_reps_of_entities: torch.Tensor,
                     mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    if span_reps_of_entities.shape[0] < 1:
        raise ValueError("adjacency needs at least one entity")
    return decoder(span_reps_of_entities, mask)


def build_adjacency_decoder(hidden_size: int, kind: Optional[str], **params) -> Optional[AdjacencyDecoder]:
    if kind in (None, "", "none"):
        return None
    return AdjacencyDecoder(hidden_size, AdjacencyDecoderKind(kind=kind, **params))
