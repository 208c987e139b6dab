import json

import numpy as np
import pytest

from glsanet.cli import main
from glsanet.io.checkpoint import load_checkpoint
from glsanet.io.ppm import read_pgm
from glsanet.io.report import RECORD_KEYS, read_records

TINY = """
image_size = 16
N = 4
S_n = 2
proximity = 4
embed_dim = 8
heads = 2
head_dim = 4
conv_depth = 1
widths = 4, 8
class_counts = 6, 6
test_counts = 2, 2
epochs = 2
glsa_epochs = 2
batch_size = 4
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY, encoding="utf-8")
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def full_pipeline(config, out):
    base = ["--config", config, "--out", out]
    assert run("gen-data", *base, "--planted", 3) == 0
    assert run("train-base", *base) == 0
    assert run("build-glsa-data", *base) == 0
    assert run("train-glsa", *base) == 0
    for v in ("single", "dbn", "dbn-glsa"):
        assert run("train-classifier", *base, "--variant", v) == 0
    assert run("eval", *base) == 0


class TestPipeline:
    def test_end_to_end_and_determinism(self, config, tmp_path, capsys):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        full_pipeline(config, str(out_a))
        table = capsys.readouterr().out
        assert "Top-1" in table and "dbn-glsa" in table
        recs = read_records(out_a / "metrics.jsonl")
        assert [r["model"] for r in recs] == ["single", "dbn", "dbn-glsa"]
        assert all(tuple(r) == RECORD_KEYS and len(r["per_class_top1"]) == 2 for r in recs)
        targets = load_checkpoint(out_a / "glsa_targets.ckpt")
        assert sum(n.startswith("targets/") for n in targets.names()) == 12
        assert all(t.data.shape == (16,) for n, t in targets.items())
        assert (out_a / "data" / "planted.tsv").exists()
        full_pipeline(config, str(out_b))
        assert (out_a / "metrics.jsonl").read_bytes() == (out_b / "metrics.jsonl").read_bytes()

    def test_extract_saliency_naming(self, config, tmp_path):
        out = str(tmp_path)
        assert run("gen-data", "--config", config, "--out", out) == 0
        assert run("train-base", "--config", config, "--out", out) == 0
        assert run("extract-saliency", "--config", config, "--out", out) == 0
        maps = sorted(p.name for p in (tmp_path / "saliency").rglob("*.pgm"))
        assert (tmp_path / "saliency" / "class1" / "00001.saliency.pgm").exists()
        assert len(maps) == 4 and all(m.endswith(".saliency.pgm") for m in maps)
        one = tmp_path / "data" / "test" / "class0" / "00000.ppm"
        assert run("extract-saliency", "--config", config, "--out", out, one) == 0
        m = read_pgm(tmp_path / "saliency" / "00000.saliency.pgm")
        assert m.shape == (16, 16) and m.max() == 255

    def test_memorization_run(self, tmp_path):
        cfg = tmp_path / "mem.cfg"
        cfg.write_text(TINY.replace("epochs = 2", "epochs = 40").replace("class_counts = 6, 6", "class_counts = 4, 4")
                       + "lr = 0.05\n", encoding="utf-8")
        base = ["--config", cfg, "--out", tmp_path]
        assert run("gen-data", *base) == 0
        assert run("train-classifier", *base, "--variant", "single") == 0
        assert run("eval", *base, "--data", tmp_path / "data" / "train", "--variant", "single") == 0
        (rec,) = read_records(tmp_path / "metrics.jsonl")
        assert rec["top1"] == 100.0

    def test_flops_matches_closed_form(self, tmp_path, capsys):
        assert run("flops", "--out", tmp_path) == 0
        rec = json.loads((tmp_path / "flops.json").read_text())
        assert rec["mul_add"] == rec["closed_form"]
        assert rec["model"] == "dbn-glsa"
        assert sum(rec["breakdown"].values()) == rec["mul_add"]
        assert str(rec["mul_add"]) in capsys.readouterr().out


class TestErrors:
    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as e:
            run("frobnicate")
        assert e.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("heads = 3\n")
        assert run("flops", "--config", bad, "--out", tmp_path) == 3
        err = capsys.readouterr().err.strip()
        assert "heads*head_dim" in err and len(err.splitlines()) == 1

    def test_missing_inputs(self, tmp_path, capsys):
        assert run("train-base", "--out", tmp_path) == 1
        assert len(capsys.readouterr().err.strip().splitlines()) == 1
        assert run("train-classifier", "--out", tmp_path, "--variant", "dbn-glsa", "--data", tmp_path) != 0

    def test_missing_config_file(self, tmp_path):
        assert run("flops", "--config", tmp_path / "nope.cfg", "--out", tmp_path) == 1

    def test_seed_flag_overrides(self, config, tmp_path):
        assert run("flops", "--config", config, "--seed", 7, "--out", tmp_path) == 0
        a = json.loads((tmp_path / "flops.json").read_text())["config_hash"]
        assert run("flops", "--config", config, "--seed", 8, "--out", tmp_path) == 0
        assert json.loads((tmp_path / "flops.json").read_text())["config_hash"] != a
