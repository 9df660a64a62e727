"""Shared bidirectional encoder and the word/label views taken from it.

Two backends implement the same small contract (``segment``, ``forward``,
``hidden_size``): a trainable toy transformer used for desk-scale work, and
an adapter around a Hugging Face encoder for real checkpoints.
"""

from __future__ import annotations

import math
import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import torch
from torch import nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence, pad_sequence

from .prompt import ENT_TOKEN, REL_TOKEN, SEP_TOKEN, PromptLayout

PAD_TOKEN = "[PAD]"
AGGREGATION_MODES = ("first", "mean")


class EncoderError(RuntimeError):
    """Raised when a backend fails to encode a prompt."""


class ContractViolation(ValueError):
    """Raised when tensors handed between stages have inconsistent shapes."""


@dataclass
class EncodedViews:
    word_reps: torch.Tensor
    entity_type_reps: torch.Tensor
    relation_type_reps: torch.Tensor


class ToySegmenter:
    """Whitespace segmenter with a closed word vocabulary.

    Words seen at least ``min_count`` times get a single id. Every other word
    is cut into ``piece_len``-character pieces, each hashed into one of
    ``num_buckets`` shared piece ids, so unseen words still get a
    deterministic multi-subword encoding.
    """

    def __init__(self, words: Sequence[str], num_buckets: int = 256, piece_len: int = 3):
        self.specials = [PAD_TOKEN, ENT_TOKEN, REL_TOKEN, SEP_TOKEN]
        self.words = list(words)
        self.num_buckets = num_buckets
        self.piece_len = piece_len
        self._index = {w: i for i, w in enumerate(self.specials + self.words)}
        self._piece_offset = len(self._index)

    @classmethod
    def from_corpus(
        cls,
        sentences: Iterable[Sequence[str]],
        min_count: int = 2,
        num_buckets: int = 256,
        piece_len: int = 3,
    ) -> "ToySegmenter":
        counts = Counter(w for sent in sentences for w in sent)
        words = sorted(w for w, c in counts.items() if c >= min_count)
        return cls(words, num_buckets=num_buckets, piece_len=piece_len)

    @property
    def vocab_size(self) -> int:
        return self._piece_offset + self.num_buckets

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def first_piece_id(self) -> int:
        """Ids at or above this are hashed pieces rather than whole words."""
        return self._piece_offset

    def _piece_id(self, piece: str) -> int:
        return self._piece_offset + zlib.crc32(piece.encode("utf-8")) % self.num_buckets

    def segment(self, token: str) -> List[int]:
        if token in self._index:
            return [self._index[token]]
        n = self.piece_len
        pieces = [token[i:i + n] for i in range(0, len(token), n)] or [""]
        return [self._piece_id(pieces[0])] + [self._piece_id("##" + p) for p in pieces[1:]]

    def state(self) -> dict:
        return {"words": self.words, "num_buckets": self.num_buckets, "piece_len": self.piece_len}

    @classmethod
    def from_state(cls, state: dict) -> "ToySegmenter":
        return cls(state["words"], num_buckets=state["num_buckets"], piece_len=state["piece_len"])


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : dim // 2]
    return table.to(dtype)


def distance_bias(length: int, num_heads: int, dtype=torch.float32) -> torch.Tensor:
    """Per-head additive attention bias ``-slope_h * |i - j|`` with geometric slopes."""
    slopes = torch.tensor([2.0 ** -(h + 1) for h in range(num_heads)], dtype=torch.float64)
    pos = torch.arange(length, dtype=torch.float64)
    dist = (pos[None, :] - pos[:, None]).abs()
    return (-slopes[:, None, None] * dist).to(dtype)


class AttentionBlock(nn.Module):
    """Pre-norm multi-head self-attention plus GELU feed-forward, both residual."""

    def __init__(self, hidden_size: int, num_heads: int, dropout: float = 0.0):
        super().__init__()
        if hidden_size % num_heads:
            raise ValueError("hidden_size must be divisible by num_heads")
        self.num_heads = num_heads
        self.norm1 = nn.LayerNorm(hidden_size)
        self.qkv = nn.Linear(hidden_size, 3 * hidden_size)
        self.out = nn.Linear(hidden_size, hidden_size)
        self.norm2 = nn.LayerNorm(hidden_size)
        self.ff = nn.Sequential(
            nn.Linear(hidden_size, 2 * hidden_size), nn.GELU(), nn.Linear(2 * hidden_size, hidden_size)
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q, k, v = self.qkv(self.norm1(x)).view(b, n, 3, self.num_heads, d // self.num_heads).permute(2, 0, 3, 1, 4)
        attn = F.scaled_dot_product_attention(q, k, v, attn_mask=bias)
        x = x + self.dropout(self.out(attn.transpose(1, 2).reshape(b, n, d)))
        return x + self.dropout(self.ff(self.norm2(x)))


class ToyEncoder(nn.Module):
    """Token embeddings, sinusoidal positions, pre-norm self-attention.

    Attention logits carry a distance penalty so every delimiter starts out
    looking mostly at the label words right next to it.
    """

    def __init__(
        self,
        segmenter: ToySegmenter,
        hidden_size: int = 64,
        num_layers: int = 2,
        num_heads: int = 4,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.segmenter = segmenter
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.embed = nn.Embedding(segmenter.vocab_size, hidden_size, padding_idx=segmenter.pad_id)
        nn.init.normal_(self.embed.weight, std=0.5)
        with torch.no_grad():
            self.embed.weight[segmenter.pad_id].zero_()
        self.layers = nn.ModuleList(
            [AttentionBlock(hidden_size, num_heads, dropout) for _ in range(num_layers)]
        )
        self.norm = nn.LayerNorm(hidden_size)

    def segment(self, token: str) -> List[int]:
        return self.segmenter.segment(token)

    @property
    def vocab_size(self) -> int:
        return self.segmenter.vocab_size

    @property
    def num_special_ids(self) -> int:
        return len(self.segmenter.specials)

    @property
    def first_piece_id(self) -> int:
        return self.segmenter.first_piece_id

    def forward(self, ids: torch.Tensor, padding_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """``ids`` is (batch, length); ``padding_mask`` is True on padding."""
        batch, length = ids.shape
        x = self.embed(ids)
        x = x + sinusoidal_positions(length, self.hidden_size, x.dtype)
        bias = distance_bias(length, self.num_heads, x.dtype).unsqueeze(0).expand(batch, -1, -1, -1)
        if padding_mask is not None:
            bias = bias.masked_fill(padding_mask[:, None, None, :], float("-inf"))
        for layer in self.layers:
            x = layer(x, bias)
        return self.norm(x)

    def manifest(self) -> dict:
        return {
            "backend": "toy",
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "segmenter": self.segmenter.state(),
        }


class HFEncoder(nn.Module):
    """Adapter for a pretrained Hugging Face encoder (e.g. a DeBERTa-v3 model).

    The delimiter markers are registered as added tokens so each stays a
    single subword. Loading needs the weights to be available locally or
    through the hub cache.
    """

    def __init__(self, name_or_path: str):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise EncoderError("the transformers package is required for pretrained backbones") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(name_or_path)
            self.model = AutoModel.from_pretrained(name_or_path)
        except Exception as exc:
            raise EncoderError(f"could not load pretrained backbone {name_or_path!r}: {exc}") from exc
        self.tokenizer.add_tokens([ENT_TOKEN, REL_TOKEN, SEP_TOKEN], special_tokens=True)
        self.model.resize_token_embeddings(len(self.tokenizer))
        self.name_or_path = name_or_path
        self.hidden_size = self.model.config.hidden_size
        self.num_layers = self.model.config.num_hidden_layers

    def segment(self, token: str) -> List[int]:
        ids = self.tokenizer.encode(token, add_special_tokens=False)
        return ids or [self.tokenizer.unk_token_id]

    def forward(self, ids: torch.Tensor, padding_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        attention_mask = None if padding_mask is None else (~padding_mask).long()
        return self.model(input_ids=ids, attention_mask=attention_mask).last_hidden_state

    def manifest(self) -> dict:
        return {"backend": "hf", "name_or_path": self.name_or_path,
                "hidden_size": self.hidden_size, "num_layers": self.num_layers}


def segment_layout(backend, layout: PromptLayout) -> Tuple[List[int], List[Tuple[int, int]]]:
    """Subword ids for a layout plus the [start, stop) subword range of each token unit."""
    ids: List[int] = []
    offsets: List[Tuple[int, int]] = []
    for token in layout.tokens:
        pieces = backend.segment(token)
        offsets.append((len(ids), len(ids) + len(pieces)))
        ids.extend(pieces)
    return ids, offsets


def encode(backend, layout: PromptLayout) -> torch.Tensor:
    """Run the backend over one layout; returns a (subword_count, D) matrix."""
    ids, _ = segment_layout(backend, layout)
    return encode_ids(backend, [ids])[0]


def encode_ids(backend, batch_ids: Sequence[Sequence[int]]) -> List[torch.Tensor]:
    """Batched forward; returns one unpadded hidden matrix per sequence."""
    lengths = [len(ids) for ids in batch_ids]
    device = next(backend.parameters()).device
    padded = pad_sequence(
        [torch.tensor(ids, dtype=torch.long) for ids in batch_ids], batch_first=True, padding_value=0
    ).to(device)
    padding_mask = torch.arange(padded.shape[1], device=device)[None, :] >= torch.tensor(lengths, device=device)[:, None]
    try:
        hidden = backend(padded, padding_mask if len(batch_ids) > 1 else None)
    except Exception as exc:
        raise EncoderError(f"encoder forward failed: {exc}") from exc
    out = [hidden[i, :n] for i, n in enumerate(lengths)]
    if not all(torch.isfinite(h).all() for h in out):
        raise EncoderError("encoder produced non-finite hidden states")
    return out


def aggregate_subwords(
    hidden: torch.Tensor,
    layout: PromptLayout,
    offsets: Sequence[Tuple[int, int]],
    mode: str = "first",
) -> EncodedViews:
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if len(offsets) != len(layout.tokens) or hidden.shape[0] != offsets[-1][1]:
        raise ContractViolation(
            f"hidden has {hidden.shape[0]} rows but layout segments to {offsets[-1][1] if offsets else 0}"
        )
    word_offsets = offsets[layout.text_start:]
    if mode == "first" or not word_offsets:
        word_reps = hidden[[start for start, _ in word_offsets]]
    else:
        word_reps = torch.stack([hidden[start:stop].mean(0) for start, stop in word_offsets])
    ent_index = [offsets[p][0] for p in layout.ent_delimiter_positions]
    rel_index = [offsets[p][0] for p in layout.rel_delimiter_positions]
    return EncodedViews(
        word_reps=word_reps.reshape(len(word_offsets), hidden.shape[1]),
        entity_type_reps=hidden[ent_index].reshape(len(ent_index), hidden.shape[1]),
        relation_type_reps=hidden[rel_index].reshape(len(rel_index), hidden.shape[1]),
    )


class BiLSTMRefiner(nn.Module):
    """Bidirectional LSTM over word vectors; per-direction size is half the output size."""

    def __init__(self, input_size: int, output_size: Optional[int] = None):
        super().__init__()
        output_size = output_size or input_size
        if output_size % 2:
            raise ValueError("BiLSTM output size must be even")
        self.lstm = nn.LSTM(input_size, output_size // 2, batch_first=True, bidirectional=True)
        self.proj = nn.Linear(output_size, input_size) if output_size != input_size else None

    def forward(self, word_reps: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        lengths = [w.shape[0] for w in word_reps]
        nonempty = [i for i, n in enumerate(lengths) if n > 0]
        out = [w for w in word_reps]
        if not nonempty:
            return out
        padded = pad_sequence([word_reps[i] for i in nonempty], batch_first=True)
        packed = pack_padded_sequence(padded, [lengths[i] for i in nonempty], batch_first=True, enforce_sorted=False)
        result, _ = self.lstm(packed)
        result, _ = pad_packed_sequence(result, batch_first=True, total_length=padded.shape[1])
        if self.proj is not None:
            result = self.proj(result)
        for row, i in enumerate(nonempty):
            out[i] = result[row, : lengths[i]]
        return out


def bilstm_refine(word_reps: torch.Tensor, refiner: Optional[BiLSTMRefiner], enabled: bool = True) -> torch.Tensor:
    if not enabled or refiner is None:
        return word_reps
    return refiner([word_reps])[0]
