import json
import os

import pytest

from streamattn.analysis import load_csv
from streamattn.cli import DEFAULT_CONFIG, main, merge_config
from streamattn.corpus import load_jsonl
from streamattn.model import load_checkpoint

TINY_CONFIG = {
    "model": {"layers": 1, "heads": 2, "d_model": 16, "vocab_size": 16,
              "max_positions": 128},
    "paradigm": "group",
    "k": 2,
    "phi": 0.0,
    "task": {"kind": "copy", "vocab_size": 16, "len_min": 3, "len_max": 5,
             "seed": 7},
    "train": {"steps": 6, "batch_size": 4, "train_size": 24, "eval_size": 8},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Config, corpus, and a six-step checkpoint shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(TINY_CONFIG))
    assert main(["gen-data", "--kind", "copy", "--vocab-size", "16",
                 "--len-min", "3", "--len-max", "5", "--seed", "7",
                 "--count", "12", "--file", str(root / "data.jsonl")]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(root)]) == 0
    return root


def test_missing_command_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(["gen-data", "--bogus"]) == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "streamattn" in capsys.readouterr().out


def test_gen_data_writes_expected_count(tmp_path):
    path = tmp_path / "pairs.jsonl"
    assert main(["gen-data", "--kind", "mapped", "--vocab-size", "16",
                 "--len-min", "3", "--len-max", "4", "--count", "9",
                 "--file", str(path)]) == 0
    pairs = load_jsonl(path, vocab_size=16)
    assert len(pairs) == 9


def test_out_env_is_fallback_directory(tmp_path, monkeypatch):
    monkeypatch.setenv("STREAMATTN_OUT", str(tmp_path / "envout"))
    assert main(["gen-data", "--count", "4", "--vocab-size", "16",
                 "--len-min", "3", "--len-max", "4"]) == 0
    assert (tmp_path / "envout" / "data.jsonl").exists()


def test_train_outputs(workdir):
    cfg, params, meta = load_checkpoint(workdir / "checkpoint.bin")
    assert cfg.vocab_size == 16
    assert meta["paradigm"] == "group" and meta["k"] == 2
    assert 0.0 <= meta["eval_accuracy"] <= 1.0
    curve = (workdir / "loss_curve.csv").read_text().splitlines()
    assert curve[0] == "step,loss"
    assert len(curve) == 1 + TINY_CONFIG["train"]["steps"]
    run_cfg = json.loads((workdir / "run_config.json").read_text())
    assert run_cfg["train"]["steps"] == 6
    assert run_cfg["model"]["d_model"] == 16


def test_unknown_config_key_names_the_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"modle": {"layers": 1}}))
    assert main(["train", "--config", str(bad)]) == 2
    assert "modle" in capsys.readouterr().err


def test_missing_checkpoint_is_runtime_error(tmp_path, capsys):
    assert main(["decode", "--checkpoint", str(tmp_path / "nope.bin"),
                 "--input", str(tmp_path / "nope.jsonl")]) == 2
    assert "error" in capsys.readouterr().err


def test_decode_records_and_determinism(workdir, tmp_path):
    out_a = tmp_path / "a.jsonl"
    out_b = tmp_path / "b.jsonl"
    for out in (out_a, out_b):
        assert main(["decode", "--checkpoint", str(workdir / "checkpoint.bin"),
                     "--input", str(workdir / "data.jsonl"),
                     "--max-tokens", "6", "--file", str(out)]) == 0
    recs_a = [json.loads(x) for x in out_a.read_text().splitlines()]
    recs_b = [json.loads(x) for x in out_b.read_text().splitlines()]
    assert len(recs_a) == 12
    for a, b in zip(recs_a, recs_b):
        assert set(a) == {"tokens", "g", "seconds", "finish"}
        assert len(a["tokens"]) == len(a["g"]) == len(a["seconds"])
        # timings vary run to run; everything else must not
        assert a["tokens"] == b["tokens"]
        assert a["g"] == b["g"]
        assert a["finish"] == b["finish"]


def test_eval_metrics_file(workdir, tmp_path):
    dec = tmp_path / "dec.jsonl"
    assert main(["decode", "--checkpoint", str(workdir / "checkpoint.bin"),
                 "--input", str(workdir / "data.jsonl"),
                 "--max-tokens", "6", "--file", str(dec)]) == 0
    out = tmp_path / "metrics.json"
    assert main(["eval", "--hyp", str(dec), "--ref", str(workdir / "data.jsonl"),
                 "--file", str(out)]) == 0
    result = json.loads(out.read_text())
    assert set(result) == {"bleu", "accuracy", "al", "laal", "sentences",
                           "skipped_lagging"}
    assert 0.0 <= result["bleu"] <= 100.0
    assert result["sentences"] == 12


def test_eval_count_mismatch(workdir, tmp_path):
    short = tmp_path / "short.jsonl"
    short.write_text('{"tokens": [3], "g": [1]}\n')
    assert main(["eval", "--hyp", str(short),
                 "--ref", str(workdir / "data.jsonl")]) == 2


def test_masks_stdout_shape(capsys):
    assert main(["masks", "--paradigm", "batch-no-re", "--k", "2",
                 "--src-len", "3", "--tgt-len", "2"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert len(rows) == 5  # 3 source rows + 2 target rows
    values = {v for row in rows for v in row.split(",")}
    assert values <= {"0", "1"}


def test_masks_out_files(tmp_path, capsys):
    assert main(["masks", "--paradigm", "group", "--k", "2", "--phi", "0.5",
                 "--src-len", "4", "--tgt-len", "3",
                 "--out", str(tmp_path)]) == 0
    grid = [r.split(",") for r in
            (tmp_path / "mask.csv").read_text().strip().splitlines()]
    assert len(grid) == 7 and all(len(r) == 7 for r in grid)
    layout = (tmp_path / "layout.csv").read_text().strip().splitlines()
    assert layout[0] == "token,role,arrival,position,loss"
    assert len(layout) == 8
    # group target positions start at phi
    assert layout[5].split(",")[3] == "0.5"
    report = json.loads((tmp_path / "mask_report.json").read_text())
    assert report["source_to_target_edges"] == 0
    assert len(report["positions"]) == 7


def test_attn_export(workdir, tmp_path):
    out = tmp_path / "map.csv"
    assert main(["attn", "--checkpoint", str(workdir / "checkpoint.bin"),
                 "--input", "3,4,5", "--layer", "0", "--head", "0",
                 "--strip-sink", "--normalize", "--gamma", "0.5",
                 "--file", str(out)]) == 0
    matrix = load_csv(out)
    assert matrix.shape[0] >= 3
    assert matrix.min() >= 0.0 and matrix.max() <= 1.0


def test_attn_svg_export(workdir, tmp_path):
    out = tmp_path / "map.svg"
    assert main(["attn", "--checkpoint", str(workdir / "checkpoint.bin"),
                 "--input", "3 4 5", "--format", "svg",
                 "--file", str(out)]) == 0
    assert out.read_text().startswith("<svg")


def test_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--paradigms", "group,batch-all-re", "--k", "2",
                 "--lengths", "8", "--reps", "3", "--layers", "1",
                 "--heads", "2", "--d-model", "16", "--vocab-size", "16",
                 "--max-positions", "64", "--file", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("backend,paradigm,k")
    assert len(lines) == 3


def test_bench_rejects_short_positions(capsys):
    assert main(["bench", "--lengths", "64", "--max-positions", "32",
                 "--reps", "3"]) == 2
    assert "max_positions" in capsys.readouterr().err


def test_merge_config_nested_override():
    merged = merge_config(DEFAULT_CONFIG, {"train": {"lr": 0.5}, "k": 9})
    assert merged["train"]["lr"] == 0.5
    assert merged["k"] == 9
    assert merged["train"]["steps"] == DEFAULT_CONFIG["train"]["steps"]
    assert DEFAULT_CONFIG["train"]["lr"] != 0.5  # input untouched
    with pytest.raises(ValueError, match="train.typo"):
        merge_config(DEFAULT_CONFIG, {"train": {"typo": 1}})
