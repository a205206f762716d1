import json
import os
import subprocess
import sys

import numpy as np
import pytest

from binagg import io
from binagg.cli import EXIT_NUMERIC, EXIT_OK, EXIT_PARSE, EXIT_USAGE, main
from binagg.config import PipelineConfig
from binagg.encoders import GlobalVector
from binagg.mixtures import BernoulliMixture
from manifests import write_manifest


@pytest.fixture
def corpus(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "--classes", "3", "--per-class", "5", "--per-image", "30", "--dim", "32",
                 "--gt", "gt.txt", "--cnn", "cnn.gvec", "-o", "db.dsc"]) == EXIT_OK
    return tmp_path


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_train_encode_evaluate(corpus, capsys):
    assert main(["train", "bmm", "--k", "4", "--sample", "db.dsc", "-o", "m.bmm"]) == EXIT_OK
    assert main(["encode", "--method", "fv-bmm", "--model", "m.bmm", "--input", "db.dsc",
                 "--include-weights", "-o", "fv.gvec"]) == EXIT_OK
    vs = io.read_vectors("fv.gvec")
    assert len(vs) == 15 and vs[0].dim == 4 * 33 and vs[0].kind == "fv-bmm"
    assert main(["postproc", "-i", "fv.gvec", "-o", "pp.gvec"]) == EXIT_OK
    capsys.readouterr()
    code, out = run(["evaluate", "--db", "pp.gvec", "--queries", "pp.gvec", "--gt", "gt.txt",
                     "--exclude-query", "--kv", "--ranking", "r.txt"], capsys)
    assert code == EXIT_OK
    lines = out.out.splitlines()
    assert lines[0].split() == ["query", "AP"]
    assert lines[16].startswith("mAP")
    kv = dict(line.split("=") for line in lines if "=" in line)
    assert len(kv) == 16 and 0.0 <= float(kv["map"]) <= 1.0
    rows = open("r.txt").read().splitlines()
    assert len(rows) == 15 * 15
    q, rank, image, _ = rows[0].split("\t")
    assert rank == "1"


def test_stats_form_flag_gives_same_vectors(corpus):
    main(["train", "gmm", "--k", "3", "--sample", "db.dsc", "-o", "m.gmm"])
    for extra, out in (([], "a.gvec"), (["--stats-form"], "b.gvec")):
        assert main(["encode", "--method", "fv-gmm", "--model", "m.gmm", "--input", "db.dsc",
                     "--include-variances", *extra, "-o", out]) == EXIT_OK
    for a, b in zip(io.read_vectors("a.gvec"), io.read_vectors("b.gvec")):
        np.testing.assert_allclose(a.values, b.values, rtol=1e-6, atol=1e-7)


def test_usage_errors(corpus, capsys):
    assert run(["frobnicate"], capsys)[0] == EXIT_USAGE
    assert run(["train", "vocab", "--method", "kmodes", "--k", "2", "--sample", "db.dsc", "-o", "x"],
               capsys)[0] == EXIT_USAGE
    assert run(["train", "bmm", "--k", "2", "--sample", "missing.dsc", "-o", "x"], capsys)[0] == EXIT_USAGE
    main(["train", "bmm", "--k", "2", "--sample", "db.dsc", "-o", "m.bmm"])
    code, out = run(["encode", "--method", "bow", "--model", "m.bmm", "--input", "db.dsc", "-o", "x"], capsys)
    assert code == EXIT_USAGE and "VOC1" in out.err
    code, _ = run(["evaluate", "--db", "cnn.gvec", "--queries", "cnn.gvec", "--gt", "gt.txt",
                   "--fuse", "cnn.gvec"], capsys)
    assert code == EXIT_USAGE
    assert run(["synth", "--model", "m.bmm", "--per-image", "3", "--gt", "g", "-o", "x"], capsys)[0] == EXIT_USAGE


def test_parse_errors(corpus, capsys):
    open("bad.dsc", "wb").write(b"NOPE")
    code, out = run(["train", "bmm", "--k", "2", "--sample", "bad.dsc", "-o", "x"], capsys)
    assert code == EXIT_PARSE and "bad.dsc: at byte 0" in out.err
    open("bad.gt", "w").write("positive a\n")
    code, _ = run(["evaluate", "--db", "cnn.gvec", "--queries", "cnn.gvec", "--gt", "bad.gt"], capsys)
    assert code == EXIT_PARSE


def test_numeric_degeneracy(corpus, capsys):
    vs = io.read_vectors("cnn.gvec")
    io.write_vectors("raw.gvec", [GlobalVector("fv-bmm", 3 * v.values, v.image_id) for v in vs])
    code, out = run(["evaluate", "--db", "raw.gvec", "--queries", "raw.gvec", "--gt", "gt.txt",
                     "--fuse", "cnn.gvec,cnn.gvec", "--alpha", "0.5"], capsys)
    assert code == EXIT_NUMERIC and "normalized" in out.err
    code, _ = run(["evaluate", "--db", "raw.gvec", "--queries", "raw.gvec", "--gt", "gt.txt",
                   "--fuse", "cnn.gvec,cnn.gvec", "--alpha", "0.5", "--rescale", "max"], capsys)
    assert code == EXIT_OK


def test_empty_image_encodes_to_zero_vector(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    from binagg.descriptors import PackedDescriptorSet

    io.write_model("m.bmm", BernoulliMixture([0.5, 0.5], np.full((2, 8), 0.5)))
    io.write_descriptors("d.dsc", [PackedDescriptorSet.empty(8, "e"),
                                   PackedDescriptorSet.from_bits(np.ones((2, 8), np.uint8), "f")])
    with pytest.warns(UserWarning):
        assert main(["encode", "--method", "fv-bmm", "--model", "m.bmm", "--input", "d.dsc",
                     "-o", "v.gvec"]) == EXIT_OK
    v = io.read_vectors("v.gvec")
    assert not v[0].values.any() and v[1].values.any()


def test_fuse_table(corpus, capsys):
    code, out = run(["fuse", "--alpha", "1", "--left", "cnn.gvec", "--right", "cnn.gvec"], capsys)
    assert code == EXIT_OK
    rows = [line.split("\t") for line in out.out.splitlines()]
    assert len(rows) == 16 and rows[0][0] == "id"
    d = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    np.testing.assert_allclose(d, d.T, atol=1e-7)
    assert np.all(np.diag(d) == 0)


def test_match_command(corpus, capsys):
    code, out = run(["match", "--db", "db.dsc", "--queries", "db.dsc", "--gt", "gt.txt",
                     "--exclude-query", "--kv"], capsys)
    assert code == EXIT_OK and "map=" in out.out


def test_pipeline_manifest_and_lock(tmp_path, capsys):
    manifest = write_manifest(tmp_path)
    assert main(["pipeline", str(manifest)]) == EXIT_OK
    lock = json.loads((tmp_path / "pipeline.json.lock.json").read_text())
    assert len(lock["steps"]) == len(json.loads(manifest.read_text())["steps"])
    assert "db.dsc" in lock["steps"][0]["files"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"steps": [["train", "bmm", "--k", "2", "--sample", "nope", "-o", "x"]]}))
    assert main(["pipeline", str(bad)]) == EXIT_USAGE
    bad.write_text("{not json")
    assert main(["pipeline", str(bad)]) == EXIT_PARSE
    bad.write_text(json.dumps({"inputs": {"db.dsc": "0" * 64}, "steps": []}))
    assert main(["pipeline", str(bad)]) == EXIT_USAGE


def test_console_script_and_module(tmp_path):
    for cmd in (["binagg", "--help"], [sys.executable, "-m", "binagg", "--help"]):
        res = subprocess.run(cmd, capture_output=True, text=True, cwd=tmp_path)
        assert res.returncode == 0 and "evaluate" in res.stdout
    res = subprocess.run(["binagg", "evaluate"], capture_output=True, text=True)
    assert res.returncode == EXIT_USAGE


def test_pipeline_config_compatibility():
    PipelineConfig("bow", "kmajority", k=10)
    PipelineConfig("fv-bmm", "em")
    PipelineConfig("direct", None)
    for method, learning in (("fv-bmm", "kmeans"), ("bow", "em"), ("direct", "kmeans"), ("sift", None)):
        with pytest.raises(ValueError):
            PipelineConfig(method, learning)
    with pytest.raises(ValueError):
        PipelineConfig("bow", "kmeans", beta=0.0)
    with pytest.raises(FileNotFoundError):
        PipelineConfig("bow", "kmeans", paths={"x": "/nonexistent"}).check_paths()
