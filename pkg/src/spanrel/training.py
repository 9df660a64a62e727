"""Two-stage training loop with differential learning rates, plus gradient checks."""

from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .config import ModelConfig, StageConfig
from .encoder import ToySegmenter
from .evaluation import AnnotatedExample, entity_f1, micro_f1_relations
from .model import JointExtractor, build_backend

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass
class TraceRecord:
    stage: int
    step: int
    epoch: int
    entity: float
    adjacency: float
    relation: float
    total: float
    lr_encoder: float
    lr_heads: float


TRACE_FIELDS = [f for f in TraceRecord.__dataclass_fields__]


def write_trace(trace: Sequence[TraceRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for rec in trace:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(rec).items()})


def read_trace(path) -> List[TraceRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            TraceRecord(**{k: (int(v) if k in ("stage", "step", "epoch") else float(v)) for k, v in row.items()})
            for row in csv.DictReader(fh)
        ]


def label_inventory(corpus: Sequence[AnnotatedExample]):
    ents = sorted({lab for ex in corpus for _, _, lab in ex.gold_entities})
    rels = sorted({lab for ex in corpus for _, _, lab in ex.gold_relations})
    return ents, rels


def build_segmenter(corpus: Sequence[AnnotatedExample], config: ModelConfig,
                    extra_labels: Sequence[str] = ()) -> ToySegmenter:
    t = config.toy_encoder
    sentences = [ex.tokens for ex in corpus] + [lab.split() for lab in extra_labels]
    return ToySegmenter.from_corpus(sentences, min_count=t.min_count, num_buckets=t.num_buckets, piece_len=t.piece_len)


def build_model(config: ModelConfig, corpus: Sequence[AnnotatedExample], seed: int = 0,
                extra_labels: Sequence[str] = ()) -> JointExtractor:
    """Fresh model; the toy vocabulary is built from ``corpus`` and its labels."""
    ents, rels = label_inventory(corpus)
    segmenter = None
    if config.encoder.backbone == "toy":
        segmenter = build_segmenter(corpus, config, list(ents) + list(rels) + list(extra_labels))
    torch.manual_seed(seed)
    return JointExtractor(config, build_backend(config, segmenter))


def warmup_factor(step: int, warmup_steps: int) -> float:
    """Linear ramp to 1 over ``warmup_steps`` optimizer steps, then flat."""
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, (step + 1) / warmup_steps)


def make_optimizer(model: JointExtractor, stage: StageConfig) -> torch.optim.AdamW:
    groups = model.parameter_groups()
    return torch.optim.AdamW(
        [
            {"params": [p for _, p in groups["encoder"]], "lr": stage.encoder_learning_rate, "name": "encoder"},
            {"params": [p for _, p in groups["heads"]], "lr": stage.task_layers_learning_rate, "name": "heads"},
        ],
        weight_decay=stage.weight_decay,
    )


def train_stage(
    model: JointExtractor,
    corpus: Sequence[AnnotatedExample],
    stage: StageConfig,
    seed: int = 0,
    entity_labels: Optional[Sequence[str]] = None,
    relation_labels: Optional[Sequence[str]] = None,
    shuffle_labels: bool = True,
    stage_index: int = 1,
    on_epoch_end: Optional[Callable[[int, JointExtractor], bool]] = None,
) -> List[TraceRecord]:
    """Run one stage in place and return its per-step loss trace.

    The optimizer is created fresh for the stage. ``on_epoch_end`` may return
    True to stop early.
    """
    if not corpus:
        raise TrainingError("training corpus is empty")
    stage.validate()
    inv_e, inv_r = label_inventory(corpus)
    entity_labels = list(entity_labels or inv_e)
    relation_labels = list(relation_labels if relation_labels is not None else inv_r)
    py_rng = random.Random(seed)
    np_rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    optimizer = make_optimizer(model, stage)
    steps_per_epoch = math.ceil(len(corpus) / stage.batch_size)
    total_steps = steps_per_epoch * stage.epochs
    warmup = math.ceil(stage.warmup_ratio * total_steps)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda s: warmup_factor(s, warmup))

    trace: List[TraceRecord] = []
    step = 0
    model.train()
    order = list(range(len(corpus)))
    for epoch in range(stage.epochs):
        py_rng.shuffle(order)
        for b in range(steps_per_epoch):
            batch = [corpus[i] for i in order[b * stage.batch_size:(b + 1) * stage.batch_size]]
            ents, rels = [], []
            for _ in batch:
                e, r = list(entity_labels), list(relation_labels)
                if shuffle_labels:
                    py_rng.shuffle(e)
                    py_rng.shuffle(r)
                ents.append(e)
                rels.append(r)
            losses = model.compute_loss(batch, ents, rels, rng=np_rng)
            if not torch.isfinite(losses.total):
                raise TrainingError(f"non-finite loss {losses.total.item()}", step)
            lrs = [g["lr"] for g in optimizer.param_groups]
            optimizer.zero_grad(set_to_none=True)
            losses.total.backward()
            optimizer.step()
            scheduler.step()
            values = losses.as_floats()
            trace.append(TraceRecord(stage_index, step, epoch, values["entity"], values["adjacency"],
                                     values["relation"], values["total"], lrs[0], lrs[1]))
            step += 1
        if log.isEnabledFor(logging.INFO):
            epoch_loss = np.mean([r.total for r in trace if r.epoch == epoch])
            log.info("stage %d epoch %d mean loss %.5f", stage_index, epoch, epoch_loss)
        if on_epoch_end is not None and on_epoch_end(epoch, model):
            break
    model.eval()
    return trace


def train(model: JointExtractor, corpora: Sequence[Sequence[AnnotatedExample]], config: ModelConfig,
          seed: Optional[int] = None, **kwargs) -> List[TraceRecord]:
    """Stage 1 then (if two corpora are given) stage 2."""
    seed = config.training.seed if seed is None else seed
    stages = [config.stage1, config.stage2][: len(corpora)]
    trace: List[TraceRecord] = []
    for i, (corpus, stage) in enumerate(zip(corpora, stages), 1):
        trace += train_stage(model, corpus, stage, seed=seed + i - 1, stage_index=i,
                             shuffle_labels=config.training.shuffle_labels, **kwargs)
    return trace


@torch.no_grad()
def dataset_loss(model: JointExtractor, corpus: Sequence[AnnotatedExample],
                 entity_labels: Sequence[str], relation_labels: Sequence[str], batch_size: int = 16) -> float:
    """Example-weighted mean of batch losses with dropout off and fixed label order."""
    model.eval()
    total = 0.0
    for start in range(0, len(corpus), batch_size):
        batch = corpus[start:start + batch_size]
        out = model.compute_loss(batch, [entity_labels] * len(batch), [relation_labels] * len(batch))
        total += float(out.total) * len(batch)
    return total / len(corpus)


def evaluate_model(model: JointExtractor, corpus: Sequence[AnnotatedExample], entity_labels: Sequence[str],
                   relation_labels: Sequence[str], **predict_kwargs):
    ents, rels = model.predict([ex.tokens for ex in corpus], entity_labels, relation_labels, **predict_kwargs)
    return entity_f1(ents, corpus).entities, micro_f1_relations(rels, corpus).relations


# -- gradient verification -----------------------------------------------------


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_group: Dict[str, float] = field(default_factory=dict)
    coordinates: List[tuple] = field(default_factory=list)
    errors: List[float] = field(default_factory=list)


def _head_of(name: str) -> str:
    return name.split(".", 1)[0]


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from dividing by noise."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    model: JointExtractor,
    examples: Sequence[AnnotatedExample],
    entity_labels: Sequence[str],
    relation_labels: Sequence[str],
    epsilon: float = 1e-6,
    per_group: int = 50,
    seed: int = 0,
    exclude: Sequence[str] = (),
    floor: float = 1e-5,
) -> GradCheckResult:
    """Compare autograd gradients of the total loss with central differences.

    Runs in float64 with dropout off. ``per_group`` coordinates are sampled
    from each top-level module (encoder, bilstm, span_rep, ...); embedding
    rows are restricted to ids that occur in the prompts.
    """
    model.double().eval()
    batch = list(examples)
    ents = [list(entity_labels)] * len(batch)
    rels = [list(relation_labels)] * len(batch)

    @torch.no_grad()
    def loss_value() -> float:
        return float(model.compute_loss(batch, ents, rels).total)

    model.zero_grad(set_to_none=True)
    model.compute_loss(batch, ents, rels).total.backward()

    used_ids = sorted({i for ex in batch for i in model.prepare(ex.tokens, entity_labels, relation_labels).ids})
    rng = np.random.default_rng(seed)
    grouped: Dict[str, List[tuple]] = {}
    for name, p in model.named_parameters():
        head = _head_of(name)
        if head in exclude or not p.requires_grad:
            continue
        if name.endswith("embed.weight"):
            coords = [(name, (r, c)) for r in used_ids for c in range(p.shape[1])]
        else:
            coords = [(name, idx) for idx in np.ndindex(*p.shape)]
        grouped.setdefault(head, []).extend(coords)

    params = dict(model.named_parameters())
    result = GradCheckResult(0.0)
    for head in sorted(grouped):
        pool = grouped[head]
        picks = rng.choice(len(pool), size=min(per_group, len(pool)), replace=False)
        worst = 0.0
        for i in sorted(picks):
            name, idx = pool[i]
            p = params[name]
            analytic = 0.0 if p.grad is None else float(p.grad[idx])
            with torch.no_grad():
                orig = float(p[idx])
                p[idx] = orig + epsilon
            plus = loss_value()
            with torch.no_grad():
                p[idx] = orig - epsilon
            minus = loss_value()
            with torch.no_grad():
                p[idx] = orig
            numeric = (plus - minus) / (2 * epsilon)
            err = relative_error(analytic, numeric, floor)
            result.coordinates.append((name, tuple(int(j) for j in idx)))
            result.errors.append(err)
            worst = max(worst, err)
        result.per_group[head] = worst
    result.max_relative_error = max(result.per_group.values(), default=0.0)
    return result
