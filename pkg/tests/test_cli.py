import json

import numpy as np
import pytest

from vitarc.cli import COMMANDS, dispatch
from vitarc.posenc import ope


def run(capsys, *argv):
    code = dispatch([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_unknown_subcommand(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 2 and "usage:" in err


def test_gen_data_writes_n_lines(capsys, tmp_path):
    out = tmp_path / "d.jsonl"
    code, _, _ = run(capsys, "gen-data", "--task", "identity", "--n", 10, "--seed", 1, "--out", out)
    assert code == 0
    assert len(out.read_text().splitlines()) == 10


def test_missing_required_flag_is_named(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--out", tmp_path / "m.ck", "--seed", 0)
    assert code == 2 and "--data" in err


def test_seed_is_mandatory(capsys, tmp_path):
    code, _, err = run(capsys, "gen-data", "--task", "identity", "--n", 3, "--out", tmp_path / "d.jsonl")
    assert code == 2 and "--seed" in err


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help_lists_every_flag(capsys, command):
    code, out, _ = run(capsys, command, "--help")
    assert code == 0
    for opt in COMMANDS[command][1]:
        assert opt.flag in out
    assert "--config" in out


def test_config_file_merges_under_flags(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"task": "hflip", "n": 2, "seed": 5, "out": str(tmp_path / "file.jsonl")}))
    code, _, _ = run(capsys, "gen-data", "--config", cfg, "--n", 4)
    assert code == 0
    assert len((tmp_path / "file.jsonl").read_text().splitlines()) == 4


def test_unknown_config_key(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"task": "hflip", "colour": 3}))
    code, _, err = run(capsys, "gen-data", "--config", cfg)
    assert code == 2 and "colour" in err


def test_bad_config_value(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"task": "spin", "n": 1, "seed": 0, "out": "x"}))
    assert run(capsys, "gen-data", "--config", cfg)[0] == 2


def test_runtime_error_exit_code(capsys, tmp_path):
    data = tmp_path / "d.jsonl"
    run(capsys, "gen-data", "--task", "identity", "--n", 2, "--seed", 0, "--out", data)
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "missing.ck", "--data", data)
    assert code == 1 and "error" in err


def test_encode_dump(capsys):
    code, out, _ = run(capsys, "encode-dump", "--grid", "[[3]]", "--h-max", 2, "--w-max", 2)
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 13
    assert lines[1].split("\t") == ["0", "3", "0", "0", "0"]


def test_segment_dump(capsys):
    code, out, _ = run(capsys, "segment-dump", "--grid", "[[1,1,0],[0,1,0],[0,0,2]]", "--connectivity", 4)
    assert code == 0
    assert out.splitlines()[1:] == ["1 1 0   1 1 0", "0 1 0   1 1 0", "0 0 2   0 0 2"]


def test_posenc_dump(capsys):
    code, out, _ = run(capsys, "posenc-dump", "--scheme", "ope_ape2d", "--x", 3, "--y", 5, "--o", 1, "--d", 12)
    assert code == 0
    assert np.allclose([float(v) for v in out.split()], ope(1, 3, 5, 12), atol=1e-6)


def test_rpe_dump(capsys):
    code, out, _ = run(capsys, "rpe-dump", "--variant", "two_dir", "--h-max", 2, "--w-max", 2, "--heads", 4)
    rows = [[float(v) for v in line.split(",")] for line in out.strip().splitlines()]
    assert code == 0 and len(rows) == 12 and all(len(r) == 12 for r in rows)
    assert all(rows[i][i] == 0 for i in range(12))
    assert rows[1][0] == -0.5  # one step back along x, first head's "before" slope


def test_grad_check_command(capsys):
    code, out, _ = run(capsys, "grad-check", "--seed", 0, "--coords", 50)
    assert code == 0 and out.startswith("max_rel_error=")


def test_pipeline_is_reproducible(capsys, tmp_path):
    outputs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        assert run(capsys, "gen-data", "--task", "color_map", "--n", 12, "--n-test", 4, "--seed", 3,
                   "--max-size", 3, "--out", d / "data.jsonl")[0] == 0
        assert run(capsys, "train", "--data", d / "data.jsonl", "--out", d / "m.ck", "--seed", 1,
                   "--steps", 6, "--log-every", 2, "--log", d / "loss.csv", "--layers", 1, "--heads", 2,
                   "--d-model", 16)[0] == 0
        assert run(capsys, "eval", "--checkpoint", d / "m.ck", "--data", d / "data.jsonl",
                   "--out", d / "eval.csv")[0] == 0
        outputs.append([(d / f).read_bytes() for f in ("data.jsonl", "loss.csv", "eval.csv", "m.ck")])
    assert outputs[0] == outputs[1]


def test_ablate_command(capsys, tmp_path):
    out = tmp_path / "ab.csv"
    code, _, _ = run(capsys, "ablate", "--tasks", "identity", "--configs", "vitarc-vt,vit-vanilla", "--seeds", "0",
                     "--out", out, "--max-size", 3, "--n-train", 4, "--n-test", 2, "--steps", 2,
                     "--layers", 1, "--heads", 2, "--d-model", 16)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("task,config,seed") and [l.split(",")[1] for l in lines[1:]] == ["vit-vanilla", "vitarc-vt"]
