"""Model/training configuration and its INI serialization.

``default_config()`` holds the hyperparameters of the released large
checkpoint; ``desk_config()`` swaps in the toy backbone and learning rates
that make sense when training from scratch on a laptop.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from typing import Dict

from .loss import LossConfig
from .prompt import ConfigurationError

ALL_PAIRS = "all-pairs enumeration"
ADJACENCY = "adjacency-guided selection"


@dataclass
class EncoderSection:
    backbone: str = "DeBERTa-v3-large"
    max_sequence_length_words: int = 2048
    bilstm_hidden_size: int = 1024
    use_bilstm: bool = True
    aggregation: str = "first"


@dataclass
class SpanEncoderSection:
    max_span_width: int = 12


@dataclass
class PairConstructionSection:
    strategy: str = ALL_PAIRS
    adjacency_decoder: str = "none"
    adjacency_threshold: float = 0.5
    projection_dim: int = 32
    num_heads: int = 2
    normalize: bool = False


@dataclass
class StageConfig:
    optimizer: str = "AdamW"
    encoder_learning_rate: float = 1e-5
    task_layers_learning_rate: float = 5e-5
    warmup_ratio: float = 0.05
    batch_size: int = 8
    epochs: int = 1
    weight_decay: float = 0.01

    def validate(self) -> None:
        if self.optimizer != "AdamW":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if self.encoder_learning_rate < 0 or self.task_layers_learning_rate < 0:
            raise ConfigurationError("learning rates must be nonnegative")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigurationError("warmup_ratio must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class InferenceSection:
    entity_threshold: float = 0.3
    relation_threshold: float = 0.5
    flat_ner: bool = True


@dataclass
class ToyEncoderSection:
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    min_count: int = 1
    num_buckets: int = 256
    piece_len: int = 3


@dataclass
class RelationScoringSection:
    scorer: str = "pair_mlp"
    dropout: float = 0.1
    activation: bool = False


@dataclass
class TrainingSection:
    seed: int = 0
    stages: int = 2
    shuffle_labels: bool = True
    stage1_corpus_size: int = 2000
    stage2_corpus_size: int = 200
    # Probability that a label word in the prompt is replaced by a random
    # vocabulary id during training; discourages memorising label surfaces.
    label_token_noise: float = 0.0


@dataclass
class ModelConfig:
    encoder: EncoderSection = field(default_factory=EncoderSection)
    span_encoder: SpanEncoderSection = field(default_factory=SpanEncoderSection)
    pair_construction: PairConstructionSection = field(default_factory=PairConstructionSection)
    loss: LossConfig = field(default_factory=LossConfig)
    stage1: StageConfig = field(default_factory=StageConfig)
    stage2: StageConfig = field(
        default_factory=lambda: StageConfig(encoder_learning_rate=3e-6, task_layers_learning_rate=5e-6, epochs=5)
    )
    inference: InferenceSection = field(default_factory=InferenceSection)
    toy_encoder: ToyEncoderSection = field(default_factory=ToyEncoderSection)
    relation_scoring: RelationScoringSection = field(default_factory=RelationScoringSection)
    training: TrainingSection = field(default_factory=TrainingSection)

    @property
    def uses_adjacency(self) -> bool:
        return self.pair_construction.strategy == ADJACENCY

    def validate(self) -> "ModelConfig":
        if self.pair_construction.strategy not in (ALL_PAIRS, ADJACENCY):
            raise ConfigurationError(f"unknown pair strategy {self.pair_construction.strategy!r}")
        if self.uses_adjacency and self.pair_construction.adjacency_decoder == "none":
            raise ConfigurationError("adjacency-guided selection needs an adjacency_decoder")
        if self.encoder.aggregation not in ("first", "mean"):
            raise ConfigurationError(f"unknown aggregation {self.encoder.aggregation!r}")
        if self.encoder.max_sequence_length_words < 1 or self.span_encoder.max_span_width < 1:
            raise ConfigurationError("length limits must be positive")
        for name in ("entity_threshold", "relation_threshold"):
            value = getattr(self.inference, name)
            if not 0.0 < value <= 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1]")
        if not 0.0 <= self.training.label_token_noise < 1.0:
            raise ConfigurationError("label_token_noise must lie in [0, 1)")
        self.stage1.validate()
        self.stage2.validate()
        return self


def default_config() -> ModelConfig:
    return ModelConfig()


def desk_config(hidden_size: int = 64) -> ModelConfig:
    """Toy backbone at width ``hidden_size``, learning rates scaled for training from scratch."""
    cfg = ModelConfig()
    cfg.encoder.backbone = "toy"
    cfg.encoder.bilstm_hidden_size = hidden_size
    cfg.toy_encoder.hidden_size = hidden_size
    for stage in (cfg.stage1, cfg.stage2):
        stage.encoder_learning_rate = 1e-4
        stage.task_layers_learning_rate = 1e-3
    cfg.training.label_token_noise = 0.15
    return cfg


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, like):
    if isinstance(like, bool):
        lowered = raw.strip().lower()
        if lowered not in ("true", "false"):
            raise ConfigurationError(f"expected true/false, got {raw!r}")
        return lowered == "true"
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw.strip()


def to_ini(config: ModelConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section in dataclasses.fields(config):
        values = getattr(config, section.name)
        parser[section.name] = {f.name: _format(getattr(values, f.name)) for f in dataclasses.fields(values)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def from_ini(text: str) -> ModelConfig:
    """Parse an INI document; missing sections or keys keep their defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"could not parse config: {exc}") from exc
    config = ModelConfig()
    known = {f.name for f in dataclasses.fields(config)}
    for name in parser.sections():
        if name not in known:
            raise ConfigurationError(f"unknown config section [{name}]")
        current = getattr(config, name)
        kwargs: Dict[str, object] = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
        for key, raw in parser[name].items():
            if key not in kwargs:
                raise ConfigurationError(f"unknown key {key!r} in [{name}]")
            try:
                kwargs[key] = _parse(raw, kwargs[key])
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {name}.{key}: {raw!r}") from exc
        try:
            setattr(config, name, type(current)(**kwargs))
        except ValueError as exc:
            raise ConfigurationError(f"invalid [{name}] section: {exc}") from exc
    return config.validate()


def load_config(path) -> ModelConfig:
    with open(path, encoding="utf-8") as fh:
        return from_ini(fh.read())


def save_config(config: ModelConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_ini(config))
