"""Deterministic template grammar producing annotated joint NER/RE examples."""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .evaluation import AnnotatedExample

SLOT = re.compile(r"^\{([a-z_]+)(?:#(\d+))?\}$")


class GrammarError(ValueError):
    """The grammar is malformed or a template cannot be resolved."""


@dataclass
class RelationSchema:
    label: str
    head_types: List[str]
    tail_types: List[str]
    paraphrase: Optional[str] = None


@dataclass
class Template:
    text: str
    relations: List[Tuple[str, str, str]] = field(default_factory=list)
    weight: float = 1.0

    def slots(self) -> List[str]:
        return [tok[1:-1] for tok in self.text.split() if SLOT.match(tok)]


@dataclass
class GrammarSpec:
    lexicon: Dict[str, List[str]]
    relations: List[RelationSchema]
    templates: List[Template]
    seed: int = 0

    @property
    def entity_types(self) -> List[str]:
        return list(self.lexicon)

    @property
    def relation_labels(self) -> List[str]:
        return [r.label for r in self.relations]

    def paraphrases(self) -> Dict[str, str]:
        return {r.label: r.paraphrase for r in self.relations if r.paraphrase}

    def validate(self) -> "GrammarSpec":
        schema = {r.label: r for r in self.relations}
        if not self.templates:
            raise GrammarError("grammar has no templates")
        for t in self.templates:
            if t.weight <= 0:
                raise GrammarError(f"template {t.text!r} has nonpositive weight")
            slots = t.slots()
            for slot in slots:
                etype = slot.split("#")[0]
                if etype not in self.lexicon or not self.lexicon[etype]:
                    raise GrammarError(f"template {t.text!r}: no lexicon for slot {{{slot}}}")
            for head, label, tail in t.relations:
                if head not in slots or tail not in slots:
                    raise GrammarError(f"template {t.text!r}: relation {label!r} uses an unknown slot")
                if label not in schema:
                    raise GrammarError(f"template {t.text!r}: relation {label!r} is not in the schema")
                rel = schema[label]
                if head.split("#")[0] not in rel.head_types or tail.split("#")[0] not in rel.tail_types:
                    raise GrammarError(f"template {t.text!r}: {label!r} has illegal argument types")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "GrammarSpec":
        try:
            return cls(
                lexicon={k: list(v) for k, v in data["lexicon"].items()},
                relations=[RelationSchema(**r) for r in data["relations"]],
                templates=[Template(t["text"], [tuple(r) for r in t.get("relations", [])], t.get("weight", 1.0))
                           for t in data["templates"]],
                seed=data.get("seed", 0),
            ).validate()
        except (KeyError, TypeError) as exc:
            raise GrammarError(f"malformed grammar: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "lexicon": self.lexicon,
            "relations": [vars(r) for r in self.relations],
            "templates": [{"text": t.text, "relations": [list(r) for r in t.relations], "weight": t.weight}
                          for t in self.templates],
        }


def load_grammar(path) -> GrammarSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            return GrammarSpec.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise GrammarError(f"{path}: invalid JSON ({exc.msg})") from None


def render(template: Template, rng: random.Random, lexicon: Dict[str, List[str]]) -> AnnotatedExample:
    tokens: List[str] = []
    entities: List[Tuple[int, int, str]] = []
    slot_entity: Dict[str, int] = {}
    used: Dict[str, set] = {}
    for tok in template.text.split():
        m = SLOT.match(tok)
        if not m:
            tokens.append(tok)
            continue
        etype = m.group(1)
        if etype not in lexicon:
            raise GrammarError(f"template {template.text!r}: no lexicon for {etype!r}")
        taken = used.setdefault(etype, set())
        choices = [w for w in lexicon[etype] if w not in taken] or lexicon[etype]
        surface = rng.choice(choices)
        taken.add(surface)
        words = surface.split()
        slot_entity[tok[1:-1]] = len(entities)
        entities.append((len(tokens), len(tokens) + len(words) - 1, etype))
        tokens.extend(words)
    relations = [(slot_entity[h], slot_entity[t], label) for h, label, t in template.relations]
    return AnnotatedExample(tokens, entities, relations)


def generate_corpus(spec: GrammarSpec, size: int, seed: Optional[int] = None) -> List[AnnotatedExample]:
    """Sample ``size`` examples; identical (spec, size, seed) gives identical output."""
    if size < 1:
        raise ValueError("corpus size must be >= 1")
    spec.validate()
    rng = random.Random(spec.seed if seed is None else seed)
    weights = [t.weight for t in spec.templates]
    out = []
    for _ in range(size):
        template = rng.choices(spec.templates, weights=weights, k=1)[0]
        example = render(template, rng, spec.lexicon)
        example.validate()
        out.append(example)
    return out


def default_grammar(seed: int = 0) -> GrammarSpec:
    """Five entity types, four relation types, news-style sentences."""
    lexicon = {
        "person": ["Alice Moreau", "Bob Tanaka", "Carla Diaz", "Dmitri Volkov", "Emma Stone", "Farid Haddad",
                   "Grace Liu", "Hector Ruiz", "Ingrid Berg", "Jamal Okafor", "Kenji Sato", "Lena Fischer",
                   "Marco Rossi", "Nadia Petrova", "Oscar Wilde", "Priya Nair"],
        "organization": ["Acme Corp", "Globex", "Initech", "Umbrella Labs", "Stark Industries", "Wayne Foundation",
                         "Hooli", "Vandelay Imports", "Soylent Group", "Cyberdyne Systems", "Tyrell Company",
                         "Wonka Factory"],
        "city": ["Paris", "Lyon", "Osaka", "Lagos", "Toronto", "Madrid", "Seville", "Hamburg", "Nairobi",
                 "Rio de Janeiro", "Kyoto", "Porto", "Denver", "Mumbai"],
        "country": ["France", "Japan", "Nigeria", "Canada", "Spain", "Germany", "Kenya", "Brazil", "Portugal",
                    "United States", "India", "Italy"],
        "year": ["1889", "1902", "1925", "1948", "1967", "1971", "1984", "1990", "1999", "2003", "2011", "2020"],
    }
    relations = [
        RelationSchema("works for", ["person"], ["organization"], paraphrase="works at"),
        RelationSchema("born in", ["person"], ["city", "country"], paraphrase="was born in"),
        RelationSchema("located in", ["city", "organization"], ["country", "city"], paraphrase="is located in"),
        RelationSchema("founded in", ["organization"], ["year"], paraphrase="was founded in"),
    ]
    templates = [
        Template("{person} works for {organization} .", [("person", "works for", "organization")], 2.0),
        Template("{person} was born in {city} .", [("person", "born in", "city")], 2.0),
        Template("{city} is located in {country} .", [("city", "located in", "country")], 1.5),
        Template("{organization} was founded in {year} .", [("organization", "founded in", "year")], 1.5),
        Template("{person} , who was born in {city} , works for {organization} .",
                 [("person", "born in", "city"), ("person", "works for", "organization")], 1.0),
        Template("{organization} , based in {city} , was founded in {year} .",
                 [("organization", "located in", "city"), ("organization", "founded in", "year")], 1.0),
        Template("In {year} , {person} joined {organization} in {city} , {country} .",
                 [("person", "works for", "organization"), ("city", "located in", "country")], 1.0),
        Template("{person} visited {city} and met {person#2} in {year} .", [], 1.0),
        Template("{person#2} and {person} both work for {organization} .",
                 [("person#2", "works for", "organization"), ("person", "works for", "organization")], 0.5),
        Template("{person} was born in {country} but now works for {organization} in {city} .",
                 [("person", "born in", "country"), ("person", "works for", "organization"),
                  ("organization", "located in", "city")], 0.5),
    ]
    return GrammarSpec(lexicon, relations, templates, seed=seed).validate()
