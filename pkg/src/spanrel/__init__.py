"""Joint zero-shot entity and relation extraction with span and pair heads."""

from .config import ModelConfig, default_config, desk_config, from_ini, to_ini
from .evaluation import AnnotatedExample, MetricsReport, entity_f1, load_dataset, micro_f1_relations
from .grammar import GrammarSpec, default_grammar, generate_corpus
from .model import JointExtractor
from .prompt import PromptLayout, build_prompt, truncate_words

__all__ = [
    "AnnotatedExample",
    "GrammarSpec",
    "JointExtractor",
    "MetricsReport",
    "ModelConfig",
    "PromptLayout",
    "build_prompt",
    "default_config",
    "default_grammar",
    "desk_config",
    "entity_f1",
    "from_ini",
    "generate_corpus",
    "load_dataset",
    "micro_f1_relations",
    "to_ini",
    "truncate_words",
]

__version__ = "0.1.0"
