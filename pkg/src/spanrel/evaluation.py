"""Dataset IO and strict-match micro precision/recall/F1.

Datasets are JSON lines, one example per line::

    {"tokenized_text": ["Alice", "works", "for", "Acme"],
     "ner": [[0, 0, "person"], [3, 3, "organization"]],
     "relations": [[0, 1, "works for"]]}

Spans are inclusive word indices; relation endpoints index ``ner``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .encoder import ContractViolation


class DatasetError(ValueError):
    """A dataset record failed to parse or validate."""


@dataclass
class AnnotatedExample:
    tokens: List[str]
    gold_entities: List[Tuple[int, int, str]] = field(default_factory=list)
    gold_relations: List[Tuple[int, int, str]] = field(default_factory=list)

    def validate(self) -> None:
        n = len(self.tokens)
        for start, end, label in self.gold_entities:
            if not (0 <= start <= end < n):
                raise DatasetError(f"entity span [{start}, {end}] out of bounds for {n} tokens")
            if not isinstance(label, str) or not label:
                raise DatasetError(f"entity label must be a nonempty string, got {label!r}")
        k = len(self.gold_entities)
        for head, tail, label in self.gold_relations:
            if not (0 <= head < k and 0 <= tail < k):
                raise DatasetError(f"relation endpoint ({head}, {tail}) dangles: only {k} entities")
            if not isinstance(label, str) or not label:
                raise DatasetError(f"relation label must be a nonempty string, got {label!r}")

    def to_record(self) -> dict:
        return {
            "tokenized_text": list(self.tokens),
            "ner": [list(e) for e in self.gold_entities],
            "relations": [list(r) for r in self.gold_relations],
        }

    @classmethod
    def from_record(cls, record: dict) -> "AnnotatedExample":
        if not isinstance(record, dict):
            raise DatasetError("record must be an object")
        try:
            tokens = record["tokenized_text"]
        except KeyError:
            raise DatasetError("record is missing 'tokenized_text'") from None
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DatasetError("'tokenized_text' must be a list of strings")
        try:
            ents = [(int(s), int(e), lab) for s, e, lab in record.get("ner", [])]
            rels = [(int(h), int(t), lab) for h, t, lab in record.get("relations", [])]
        except (TypeError, ValueError):
            raise DatasetError("'ner' and 'relations' entries must be [int, int, label] triples") from None
        example = cls(list(tokens), ents, rels)
        example.validate()
        return example

    def entity_labels(self) -> List[str]:
        return [label for _, _, label in self.gold_entities]

    def relation_set(self, typed: bool = False) -> Counter:
        out = Counter()
        for h, t, label in self.gold_relations:
            hs, he, hl = self.gold_entities[h]
            ts, te, tl = self.gold_entities[t]
            out[_relation_key((hs, he, hl), (ts, te, tl), label, typed)] += 1
        return out


def _relation_key(head, tail, label, typed):
    if typed:
        return (head[0], head[1], head[2], tail[0], tail[1], tail[2], label)
    return (head[0], head[1], tail[0], tail[1], label)


def load_dataset(path) -> List[AnnotatedExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                examples.append(AnnotatedExample.from_record(record))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return examples


def save_dataset(examples: Iterable[AnnotatedExample], path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), ensure_ascii=False) + "\n")
            count += 1
    return count


@dataclass
class PRF:
    precision: float
    recall: float
    micro_f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, fp, fn)


@dataclass
class MetricsReport:
    relations: Optional[PRF] = None
    entities: Optional[PRF] = None
    relation_support: Dict[str, int] = field(default_factory=dict)
    entity_support: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for name in ("relations", "entities"):
            prf = getattr(self, name)
            if prf is not None:
                out[name] = dict(vars(prf))
        out["relation_support"] = dict(sorted(self.relation_support.items()))
        out["entity_support"] = dict(sorted(self.entity_support.items()))
        return out

    def table(self) -> str:
        lines = [f"{'task':<10} {'P':>7} {'R':>7} {'F1':>7} {'TP':>6} {'FP':>6} {'FN':>6}"]
        for name in ("entities", "relations"):
            prf = getattr(self, name)
            if prf is None:
                continue
            lines.append(
                f"{name:<10} {prf.precision:7.4f} {prf.recall:7.4f} {prf.micro_f1:7.4f} "
                f"{prf.tp:6d} {prf.fp:6d} {prf.fn:6d}"
            )
        return "\n".join(lines)


def _check_aligned(predicted, gold) -> None:
    if len(predicted) != len(gold):
        raise ContractViolation(f"{len(predicted)} prediction lists for {len(gold)} gold examples")


def _count(pred: Counter, gold: Counter) -> Tuple[int, int, int]:
    tp = sum((pred & gold).values())
    return tp, sum(pred.values()) - tp, sum(gold.values()) - tp


def _entity_key(entity, labels: Optional[Sequence[str]] = None):
    if isinstance(entity, tuple):
        return entity
    label = entity.label if entity.label is not None else labels[entity.type_index]
    return (entity.start, entity.end, label)


def micro_f1_relations(
    predicted: Sequence[Sequence],
    gold: Sequence[AnnotatedExample],
    typed: bool = False,
    relation_labels: Optional[Sequence[str]] = None,
    entity_labels: Optional[Sequence[str]] = None,
) -> MetricsReport:
    """Strict relation micro-F1.

    A prediction matches when head span, tail span and relation label agree
    with a gold triplet; each gold triplet absorbs at most one prediction.
    With ``typed=True`` the head and tail entity labels must agree as well.
    """
    _check_aligned(predicted, gold)
    tp = fp = fn = 0
    support: Counter = Counter()
    for preds, ex in zip(predicted, gold):
        pred_keys = Counter()
        for t in preds:
            label = t.label if t.label is not None else relation_labels[t.relation_index]
            pred_keys[_relation_key(_entity_key(t.head, entity_labels), _entity_key(t.tail, entity_labels), label, typed)] += 1
        gold_keys = ex.relation_set(typed)
        a, b, c = _count(pred_keys, gold_keys)
        tp, fp, fn = tp + a, fp + b, fn + c
        support.update(label for _, _, label in ex.gold_relations)
    return MetricsReport(relations=PRF.from_counts(tp, fp, fn), relation_support=dict(support))


def entity_f1(
    predicted: Sequence[Sequence],
    gold: Sequence[AnnotatedExample],
    entity_labels: Optional[Sequence[str]] = None,
) -> MetricsReport:
    """Strict (start, end, label) micro-F1 over entities."""
    _check_aligned(predicted, gold)
    tp = fp = fn = 0
    support: Counter = Counter()
    for preds, ex in zip(predicted, gold):
        pred_keys = Counter(_entity_key(e, entity_labels) for e in preds)
        gold_keys = Counter(ex.gold_entities)
        a, b, c = _count(pred_keys, gold_keys)
        tp, fp, fn = tp + a, fp + b, fn + c
        support.update(ex.entity_labels())
    return MetricsReport(entities=PRF.from_counts(tp, fp, fn), entity_support=dict(support))


def evaluate(predicted_entities, predicted_relations, gold, typed: bool = False) -> MetricsReport:
    ents = entity_f1(predicted_entities, gold)
    rels = micro_f1_relations(predicted_relations, gold, typed=typed)
    return MetricsReport(
        relations=rels.relations, entities=ents.entities,
        relation_support=rels.relation_support, entity_support=ents.entity_support,
    )


def write_report(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
