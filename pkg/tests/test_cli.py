import json

import pytest

from spanrel import cli
from spanrel.checkpoint import load_model
from spanrel.config import save_config
from spanrel.evaluation import evaluate, load_dataset
from spanrel.training import dataset_loss, label_inventory


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data(tmp_path, capsys):
    path = tmp_path / "train.jsonl"
    assert run(capsys, "generate", "--size", 12, "--seed", 2, "--out", path)[0] == 0
    return path


@pytest.fixture
def checkpoint(tmp_path, data, tiny_config, capsys):
    tiny_config.stage1.epochs = tiny_config.stage2.epochs = 2
    cfg = tmp_path / "tiny.ini"
    save_config(tiny_config, cfg)
    ckpt = tmp_path / "model.npz"
    code, out, _ = run(capsys, "train", "--config", cfg, "--data", data, "--out", ckpt)
    assert code == 0
    return ckpt, json.loads(out)


def test_generate_is_reproducible_and_counts_match(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    code, out, err = run(capsys, "generate", "--size", 100, "--seed", 3, "--out", a)
    assert code == 0 and "# resolved configuration" in err
    run(capsys, "generate", "--size", 100, "--seed", 3, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    summary = json.loads(out)
    lines = a.read_text().splitlines()
    assert summary["records"] == len(lines) == 100
    records = [json.loads(line) for line in lines]
    assert summary["entities"] == sum(len(r["ner"]) for r in records)
    assert summary["relations"] == sum(len(r["relations"]) for r in records)


def test_train_header_echoes_released_defaults(data, tmp_path, capsys):
    code, out, err = run(capsys, "train", "--preset", "pretrained", "--data", data, "--out", tmp_path / "x.npz",
                         "--dry-run")
    assert code == 0 and json.loads(out)["dry_run"] is True
    assert not (tmp_path / "x.npz").exists()
    header = err.split("# end configuration")[0]
    for line in ["backbone = DeBERTa-v3-large", "max_sequence_length_words = 2048", "bilstm_hidden_size = 1024",
                 "max_span_width = 12", "strategy = all-pairs enumeration", "adjacency_decoder = none",
                 "alpha = 0.75", "gamma = 0.0", "lambda_entity = 1.0", "lambda_adjacency = 0.0",
                 "lambda_relation = 1.0", "optimizer = AdamW", "encoder_learning_rate = 1e-05",
                 "task_layers_learning_rate = 5e-05", "encoder_learning_rate = 3e-06",
                 "task_layers_learning_rate = 5e-06", "warmup_ratio = 0.05", "batch_size = 8", "epochs = 5",
                 "entity_threshold = 0.3", "relation_threshold = 0.5"]:
        assert line in header, line


def test_train_writes_checkpoint_and_trace_and_reload_reproduces_loss(checkpoint, data):
    ckpt, summary = checkpoint
    assert ckpt.exists() and ckpt.with_suffix(".trace.csv").exists()
    header = ckpt.with_suffix(".trace.csv").read_text().splitlines()[0]
    assert header.startswith("stage,step,epoch,entity,adjacency,relation,total")
    model, manifest = load_model(ckpt)
    recorded = manifest["extra"]["final_training_loss"]
    assert recorded == summary["final_training_loss"]
    corpus = load_dataset(data)
    assert abs(dataset_loss(model, corpus, manifest["entity_labels"], manifest["relation_labels"]) - recorded) <= 1e-6


def test_extract_streams_one_object_per_text(checkpoint, capsys):
    ckpt, _ = checkpoint
    texts = ["Alice Moreau works for Acme Corp .", "Paris is located in France .", "Globex was founded in 1990 ."]
    argv = ["extract", "--checkpoint", ckpt, "--threshold", 0.01, "--relation-threshold", 0.01]
    for t in texts:
        argv += ["--text", t]
    code, out, err = run(capsys, *argv)
    assert code == 0 and "# resolved configuration" in err
    records = [json.loads(line) for line in out.splitlines()]
    assert [r["index"] for r in records] == [0, 1, 2]
    assert [r["text"] for r in records] == texts
    for r in records:
        spans = {(e["start"], e["end"]) for e in r["entities"]}
        for rel in r["relations"]:
            assert (rel["head"]["start"], rel["head"]["end"]) in spans
            assert (rel["tail"]["start"], rel["tail"]["end"]) in spans


def test_extract_relation_threshold_one_and_label_files(checkpoint, tmp_path, capsys):
    ckpt, _ = checkpoint
    labels = tmp_path / "labels.txt"
    labels.write_text("# entity types\nperson\norganization\n\n")
    code, out, _ = run(capsys, "extract", "--checkpoint", ckpt, "--text", "Alice works for Globex .",
                       "--entity-labels-file", labels, "--relation-label", "works for", "--threshold", 0.01,
                       "--relation-threshold", 1.0, "--nested")
    assert code == 0
    record = json.loads(out)
    assert record["relations"] == []
    assert {e["label"] for e in record["entities"]} <= {"person", "organization"}
    code, out, _ = run(capsys, "extract", "--checkpoint", ckpt, "--text", "Alice works for Globex .",
                       "--no-relations", "--threshold", 0.01, "--relation-threshold", 0.01, "--pretty")
    assert code == 0 and out.startswith("[0] Alice works for Globex .")


def test_eval_matches_direct_metric_calls(checkpoint, data, capsys):
    ckpt, _ = checkpoint
    code, out, err = run(capsys, "eval", "--checkpoint", ckpt, "--data", data)
    assert code == 0 and "relations" in err
    reported = json.loads(out)
    model, manifest = load_model(ckpt)
    corpus = load_dataset(data)
    ents, rels = model.predict([ex.tokens for ex in corpus], manifest["entity_labels"], manifest["relation_labels"])
    assert reported == json.loads(json.dumps(evaluate(ents, rels, corpus).to_dict(), sort_keys=True))


def test_user_errors_exit_one(checkpoint, tmp_path, capsys):
    ckpt, _ = checkpoint
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run(capsys, "eval", "--checkpoint", ckpt, "--data", empty)[0] == 1
    assert run(capsys, "eval", "--checkpoint", tmp_path / "nope.npz", "--data", empty)[0] == 1
    assert run(capsys, "extract", "--checkpoint", ckpt)[0] == 1
    assert run(capsys, "extract", "--checkpoint", ckpt, "--text", "x", "--threshold", 0)[0] == 1
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "generate", "--size", "many", "--out", tmp_path / "g.jsonl")[0] == 1
    bad_cfg = tmp_path / "bad.ini"
    bad_cfg.write_text("[inference]\nentity_threshold = 2\n")
    assert run(capsys, "train", "--config", bad_cfg, "--data", empty, "--out", tmp_path / "m.npz")[0] == 1
    bad_data = tmp_path / "bad.jsonl"
    bad_data.write_text('{"tokenized_text": ["a"], "ner": [[0, 4, "x"]]}\n')
    code, _, err = run(capsys, "train", "--data", bad_data, "--out", tmp_path / "m.npz", "--dry-run")
    assert code == 1 and "bad.jsonl:1" in err


def test_internal_errors_exit_two(data, tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "train", broken)
    code, _, err = run(capsys, "train", "--data", data, "--out", tmp_path / "m.npz", "--epochs", 1)
    assert code == 2 and "internal error" in err
