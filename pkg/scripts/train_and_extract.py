"""Walkthrough: train a toy extractor on a synthetic corpus, then query it.

Generates a small news-style corpus, trains the toy encoder for a few dozen
epochs, prints entity/relation micro-F1 on the training set, extracts from a
fresh sentence, and finally swaps the relation labels for paraphrases that
never appeared in training.

Usage:
    python3 scripts/train_and_extract.py --epochs 200
"""

import argparse
import dataclasses
import logging
import time

from spanrel import default_grammar, desk_config, entity_f1, generate_corpus, micro_f1_relations
from spanrel.training import build_model, label_inventory, train_stage


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=100, help="training examples")
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--verbose", action="store_true", help="log the mean loss of every epoch")
    return parser.parse_args()


def main():
    args = parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    grammar = default_grammar(seed=args.seed)
    corpus = generate_corpus(grammar, args.size, seed=args.seed)
    entity_labels, relation_labels = label_inventory(corpus)
    print(f"corpus: {len(corpus)} examples, entity types {entity_labels}, relation types {relation_labels}")
    print("sample:", " ".join(corpus[0].tokens))

    config = desk_config()
    model = build_model(config, corpus, seed=0)
    stage = dataclasses.replace(config.stage2, epochs=args.epochs)
    start = time.perf_counter()
    trace = train_stage(model, corpus, stage, seed=0)
    print(f"trained {args.epochs} epochs ({len(trace)} steps) in {time.perf_counter() - start:.0f}s, "
          f"last step loss {trace[-1].total:.4f}")

    texts = [ex.tokens for ex in corpus]
    entities, relations = model.predict(texts, entity_labels, relation_labels)
    print(f"training-set entity F1 {entity_f1(entities, corpus).entities.micro_f1:.3f}, "
          f"relation F1 {micro_f1_relations(relations, corpus).relations.micro_f1:.3f}")

    sentence = "Grace Liu works for Hooli , which is located in Denver ."
    found, links = model.inference([sentence], entity_labels, relation_labels)
    print(f"\n{sentence}")
    for entity in found[0]:
        print(f"  {entity['label']:<13} {entity['text']!r} ({entity['score']:.2f})")
    for link in links[0]:
        print(f"  {link['head']['text']!r} --{link['relation']}--> {link['tail']['text']!r} ({link['score']:.2f})")

    paraphrases = [grammar.paraphrases()[label] for label in relation_labels]
    _, swapped = model.predict(texts, entity_labels, paraphrases)
    swapped = [[dataclasses.replace(t, label=relation_labels[t.relation_index]) for t in ts] for ts in swapped]
    print(f"\nwith unseen relation labels {paraphrases}: "
          f"relation F1 {micro_f1_relations(swapped, corpus).relations.micro_f1:.3f}")


if __name__ == "__main__":
    main()
