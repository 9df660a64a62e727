import pytest
import torch
from hypothesis import settings

from spanrel.config import desk_config
from spanrel.evaluation import AnnotatedExample
from spanrel.grammar import default_grammar, generate_corpus
from spanrel.training import build_model

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def tiny_corpus():
    return generate_corpus(default_grammar(seed=5), 12, seed=5)


@pytest.fixture
def tiny_config():
    cfg = desk_config(hidden_size=16)
    cfg.toy_encoder.num_layers = 1
    cfg.toy_encoder.num_heads = 2
    cfg.span_encoder.max_span_width = 4
    return cfg


@pytest.fixture
def tiny_model(tiny_config, tiny_corpus):
    model = build_model(tiny_config, tiny_corpus, seed=0)
    model.eval()
    return model


@pytest.fixture
def handmade_example():
    return AnnotatedExample(
        tokens=["Alice", "Moreau", "works", "for", "Acme", "Corp", "in", "Paris"],
        gold_entities=[(0, 1, "person"), (4, 5, "organization"), (7, 7, "city")],
        gold_relations=[(0, 1, "works for"), (1, 2, "located in")],
    )


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
