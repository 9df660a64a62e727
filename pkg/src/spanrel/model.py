"""Joint entity and relation extractor built from the encoder and the three heads."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from . import loss as L
from .config import ModelConfig
from .encoder import (
    BiLSTMRefiner,
    EncodedViews,
    HFEncoder,
    ToyEncoder,
    ToySegmenter,
    aggregate_subwords,
    encode_ids,
    segment_layout,
)
from .evaluation import AnnotatedExample
from .pair_head import build_adjacency_decoder, enumerate_all_pairs, select_pairs
from .prompt import PromptLayout, build_prompt, truncate_words
from .relation_head import RelationScorer, RelationTriplet, decode_relations
from .span_head import Entity, Span, SpanRepLayer, TypeProjection, decode_entities, enumerate_spans, score_entities

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    layout: PromptLayout
    ids: List[int]
    offsets: List[Tuple[int, int]]


@dataclass
class LossBreakdown:
    entity: torch.Tensor
    adjacency: torch.Tensor
    relation: torch.Tensor
    total: torch.Tensor
    pruned_gold_pairs: int = 0

    def as_floats(self) -> Dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("entity", "adjacency", "relation", "total")}


def build_backend(config: ModelConfig, segmenter: Optional[ToySegmenter] = None):
    if config.encoder.backbone == "toy":
        if segmenter is None:
            raise ValueError("the toy backbone needs a segmenter")
        t = config.toy_encoder
        return ToyEncoder(segmenter, hidden_size=t.hidden_size, num_layers=t.num_layers, num_heads=t.num_heads)
    return HFEncoder(config.encoder.backbone)


class JointExtractor(nn.Module):
    def __init__(self, config: ModelConfig, backend: nn.Module):
        super().__init__()
        self.config = config.validate()
        d = backend.hidden_size
        self.encoder = backend
        self.bilstm = BiLSTMRefiner(d, config.encoder.bilstm_hidden_size) if config.encoder.use_bilstm else None
        self.span_rep = SpanRepLayer(d, config.span_encoder.max_span_width)
        self.type_proj = TypeProjection(d)
        pc = config.pair_construction
        self.adjacency = (
            build_adjacency_decoder(d, pc.adjacency_decoder, projection_dim=pc.projection_dim,
                                    num_heads=pc.num_heads, normalize=pc.normalize)
            if pc.adjacency_decoder != "none" else None
        )
        rs = config.relation_scoring
        self.relation_scorer = RelationScorer(d, rs.scorer, dropout=rs.dropout, activation=rs.activation)

    @property
    def hidden_size(self) -> int:
        return self.encoder.hidden_size

    def parameter_groups(self) -> Dict[str, List[Tuple[str, nn.Parameter]]]:
        """Encoder parameters versus every task-specific layer (BiLSTM included)."""
        groups: Dict[str, List[Tuple[str, nn.Parameter]]] = {"encoder": [], "heads": []}
        for name, p in self.named_parameters():
            groups["encoder" if name.startswith("encoder.") else "heads"].append((name, p))
        return groups

    # -- encoding -------------------------------------------------------------

    def prepare(self, words: Sequence[str], entity_labels: Sequence[str], relation_labels: Sequence[str]) -> Prepared:
        words = truncate_words(words, self.config.encoder.max_sequence_length_words) if words else []
        layout = build_prompt(entity_labels, relation_labels, words)
        ids, offsets = segment_layout(self.encoder, layout)
        return Prepared(layout, ids, offsets)

    def encode(self, prepared: Sequence[Prepared]) -> List[EncodedViews]:
        hidden = encode_ids(self.encoder, [p.ids for p in prepared])
        views = [aggregate_subwords(h, p.layout, p.offsets, self.config.encoder.aggregation)
                 for h, p in zip(hidden, prepared)]
        if self.bilstm is not None:
            refined = self.bilstm([v.word_reps for v in views])
            for v, r in zip(views, refined):
                v.word_reps = r
        return views

    # -- per-example heads ----------------------------------------------------

    def entity_logits(self, views: EncodedViews) -> Tuple[List[Span], torch.Tensor, torch.Tensor]:
        spans = enumerate_spans(views.word_reps.shape[0], self.config.span_encoder.max_span_width)
        span_reps = self.span_rep(views.word_reps, spans)
        logits = score_entities(span_reps, self.type_proj(views.entity_type_reps))
        return spans, span_reps, logits

    def candidate_pairs(self, entity_reps: torch.Tensor) -> Tuple[List[Tuple[int, int]], Optional[torch.Tensor]]:
        n = entity_reps.shape[0]
        adjacency = self.adjacency(entity_reps) if self.adjacency is not None and n > 0 else None
        if self.config.uses_adjacency and adjacency is not None:
            return select_pairs(adjacency, self.config.pair_construction.adjacency_threshold).pairs, adjacency
        return enumerate_all_pairs(n).pairs, adjacency

    def relation_logits(self, entity_reps: torch.Tensor, pairs: Sequence[Tuple[int, int]],
                        relation_type_reps: torch.Tensor) -> torch.Tensor:
        if not pairs or relation_type_reps.shape[0] == 0:
            return entity_reps.new_zeros(len(pairs), relation_type_reps.shape[0])
        heads = entity_reps[[a for a, _ in pairs]]
        tails = entity_reps[[b for _, b in pairs]]
        return self.relation_scorer(heads, tails, relation_type_reps)

    # -- training objective ---------------------------------------------------

    def compute_loss(
        self,
        examples: Sequence[AnnotatedExample],
        entity_labels: Sequence[Sequence[str]],
        relation_labels: Sequence[Sequence[str]],
        rng: Optional[np.random.Generator] = None,
    ) -> LossBreakdown:
        """Pooled focal losses for a batch; ``*_labels[i]`` is the label order used for example ``i``.

        Relation candidates are built over gold entities so the relation head
        is supervised independently of entity decoding quality.
        """
        cfg = self.config.loss
        prepared = [self.prepare(ex.tokens, el, rl) for ex, el, rl in zip(examples, entity_labels, relation_labels)]
        noise = self.config.training.label_token_noise
        if self.training and rng is not None and noise > 0:
            prepared = [self._noisy_labels(p, noise, rng) for p in prepared]
        views = self.encode(prepared)
        width = self.config.span_encoder.max_span_width
        ent_p, ent_y, adj_p, adj_y, rel_p, rel_y = [], [], [], [], [], []
        pruned = 0
        for ex, el, rl, v, prep in zip(examples, entity_labels, relation_labels, views, prepared):
            n_words = prep.layout.word_count
            spans, span_reps, logits = self.entity_logits(v)
            span_index = {s: i for i, s in enumerate(spans)}
            type_index = {lab: k for k, lab in enumerate(el)}
            targets = torch.zeros_like(logits)
            kept = {}
            for g, (s, e, lab) in enumerate(ex.gold_entities):
                span = Span(s, e)
                if span in span_index and e < n_words:
                    kept[g] = len(kept)
                    if lab in type_index:
                        targets[span_index[span], type_index[lab]] = 1.0
            ent_p.append(torch.sigmoid(logits).reshape(-1))
            ent_y.append(targets.reshape(-1))

            gold_ids = list(kept)
            if not gold_ids:
                continue
            entity_reps = span_reps[[span_index[Span(*ex.gold_entities[g][:2])] for g in gold_ids]]
            pairs, adjacency = self.candidate_pairs(entity_reps)
            gold_rel = {}
            for h, t, lab in ex.gold_relations:
                if h in kept and t in kept:
                    gold_rel.setdefault((kept[h], kept[t]), set()).add(lab)
            if adjacency is not None:
                n = adjacency.shape[0]
                adj_t = torch.zeros_like(adjacency)
                for a, b in gold_rel:
                    adj_t[a, b] = adj_t[b, a] = 1.0
                off = ~torch.eye(n, dtype=torch.bool)
                adj_p.append(adjacency[off])
                adj_y.append(adj_t[off])
            pruned += len(set(gold_rel) - set(pairs))
            r_logits = self.relation_logits(entity_reps, pairs, v.relation_type_reps)
            rel_index = {lab: m for m, lab in enumerate(rl)}
            r_targets = torch.zeros_like(r_logits)
            for p, pair in enumerate(pairs):
                for lab in gold_rel.get(pair, ()):
                    if lab in rel_index:
                        r_targets[p, rel_index[lab]] = 1.0
            rel_p.append(torch.sigmoid(r_logits).reshape(-1))
            rel_y.append(r_targets.reshape(-1))
        if pruned:
            log.debug("%d gold relation pairs pruned by adjacency selection", pruned)

        zero = views[0].word_reps.new_zeros(())
        l_ent = self._pooled(ent_p, ent_y, cfg, rng, zero)
        l_adj = self._pooled(adj_p, adj_y, cfg, None, zero)
        l_rel = self._pooled(rel_p, rel_y, cfg, rng, zero)
        return LossBreakdown(l_ent, l_adj, l_rel, L.total_loss(l_ent, l_adj, l_rel, cfg), pruned)

    def _noisy_labels(self, prep: Prepared, rate: float, rng: np.random.Generator) -> Prepared:
        """Perturb label-word subwords (toy backbone only).

        Each label word is, with probability ``rate``, replaced by random
        vocabulary ids, and independently, with probability ``rate``, gets one
        random hashed-piece id inserted. Hashed pieces never coincide with a
        whole-word id, so the noise cannot spell out an unseen label.
        """
        vocab = getattr(self.encoder, "vocab_size", None)
        first = getattr(self.encoder, "num_special_ids", None)
        first_piece = getattr(self.encoder, "first_piece_id", None)
        if vocab is None or first is None or first_piece is None or vocab <= first_piece:
            return prep
        delimiters = set(prep.layout.ent_delimiter_positions) | set(prep.layout.rel_delimiter_positions)
        label_units = prep.layout.text_start - 1
        ids: List[int] = []
        offsets: List[Tuple[int, int]] = []
        for unit, (start, stop) in enumerate(prep.offsets):
            pieces = list(prep.ids[start:stop])
            if unit < label_units and unit not in delimiters:
                if rng.random() < rate:
                    pieces = rng.integers(first, vocab, size=len(pieces)).tolist()
                if rng.random() < rate:
                    pieces.insert(int(rng.integers(0, len(pieces) + 1)), int(rng.integers(first_piece, vocab)))
            offsets.append((len(ids), len(ids) + len(pieces)))
            ids.extend(pieces)
        return Prepared(prep.layout, ids, offsets)

    @staticmethod
    def _pooled(probs, targets, cfg, rng, zero):
        if not probs:
            return zero
        p = torch.cat(probs)
        y = torch.cat(targets)
        mask = None
        if rng is not None and cfg.negative_sample_rate < 1.0:
            mask = L.negative_sample(y, cfg.negative_sample_rate, generator=rng)
        return L.mean_focal_loss(p, y, mask, cfg)

    # -- inference ------------------------------------------------------------

    @torch.no_grad()
    def predict(
        self,
        texts: Sequence[Sequence[str]],
        entity_labels: Sequence[str],
        relation_labels: Sequence[str] = (),
        threshold: Optional[float] = None,
        relation_threshold: Optional[float] = None,
        flat_ner: Optional[bool] = None,
        batch_size: int = 8,
    ) -> Tuple[List[List[Entity]], List[List[RelationTriplet]]]:
        """Joint extraction over pre-tokenized texts, results in input order."""
        inf = self.config.inference
        threshold = inf.entity_threshold if threshold is None else threshold
        relation_threshold = inf.relation_threshold if relation_threshold is None else relation_threshold
        flat_ner = inf.flat_ner if flat_ner is None else flat_ner
        was_training = self.training
        self.eval()
        all_entities: List[List[Entity]] = []
        all_relations: List[List[RelationTriplet]] = []
        try:
            for start in range(0, len(texts), batch_size):
                chunk = texts[start:start + batch_size]
                prepared = [self.prepare(words, entity_labels, relation_labels) for words in chunk]
                for v in self.encode(prepared):
                    spans, span_reps, logits = self.entity_logits(v)
                    entities = decode_entities(logits, spans, threshold, flat_ner, labels=list(entity_labels))
                    entities.sort(key=lambda e: (e.start, e.end, e.type_index))
                    relations: List[RelationTriplet] = []
                    if entities and relation_labels:
                        index = {s: i for i, s in enumerate(spans)}
                        reps = span_reps[[index[e.span] for e in entities]]
                        pairs, _ = self.candidate_pairs(reps)
                        r_logits = self.relation_logits(reps, pairs, v.relation_type_reps)
                        relations = decode_relations(r_logits, pairs, entities, relation_threshold,
                                                     labels=list(relation_labels))
                    all_entities.append(entities)
                    all_relations.append(relations)
        finally:
            self.train(was_training)
        return all_entities, all_relations

    def inference(self, texts: Sequence[str], labels: Sequence[str], relations: Sequence[str] = (),
                  threshold: float = 0.3, relation_threshold: float = 0.5, return_relations: bool = True,
                  flat_ner: bool = True):
        """String-level convenience API: whitespace-tokenizes ``texts``."""
        tokenized = [t.split() for t in texts]
        ents, rels = self.predict(tokenized, labels, relations if return_relations else (),
                                  threshold, relation_threshold, flat_ner)
        entities = [[entity_to_dict(e, words) for e in es] for es, words in zip(ents, tokenized)]
        if not return_relations:
            return entities
        relations_out = [[relation_to_dict(r, words) for r in rs] for rs, words in zip(rels, tokenized)]
        return entities, relations_out


def entity_to_dict(entity: Entity, words: Sequence[str]) -> dict:
    return {
        "text": " ".join(words[entity.start:entity.end + 1]),
        "start": entity.start,
        "end": entity.end,
        "label": entity.label,
        "score": round(entity.score, 6),
    }


def relation_to_dict(rel: RelationTriplet, words: Sequence[str]) -> dict:
    return {
        "head": entity_to_dict(rel.head, words),
        "tail": entity_to_dict(rel.tail, words),
        "relation": rel.label,
        "score": round(rel.score, 6),
    }
