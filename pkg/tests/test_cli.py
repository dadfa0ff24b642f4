import csv
import json
import math

import pytest

from gpnlearn.cli import main
from gpnlearn.config import PRESETS, ConfigError, ExperimentConfig, load_config, load_preset, parse_config

FIXTURE = "n_nodes = 4\nedge_prob = 0.5\nmax_parents = 3\nn_obs = 60\nlambda = 1\n"
CHEAP_BRIDGE = "bridge_n1 = 100\nbridge_n2 = 100\nbridge_draws = 200\nbridge_thin = 1\n"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, (json.loads(cap.out) if code == 0 else None), cap.err


def write_cfg(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- configuration --------------------------------------------------------------


def test_defaults_and_presets():
    d = ExperimentConfig()
    assert (d.n_nodes, d.edge_prob, d.n_obs, d.sampler, d.max_parents) == (10, 0.2, 100, "partition", 3)
    for name in PRESETS:
        assert isinstance(load_preset(name), ExperimentConfig)
    assert load_preset("fixture-n4").n_nodes == 4


@pytest.mark.parametrize("text", [
    "lambda = -1", "n_obs = 1", "sampler = gibbs", "max_parents = 12", "M = 0",
    "score = exact", "unknown_key = 3", "n_nodes = x", "bridge_draws = 100\nbridge_n2 = 300",
])
def test_config_validation(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_round_trip_and_comments():
    cfg = parse_config("# comment\nM = 42  # inline\nlambda = 0.25\nlambdas = 0, 1\nmethods = gp bge\nrescore = no\n")
    assert cfg.n_samples == 42 and cfg.lam == 0.25 and cfg.lambdas == (0.0, 1.0) and not cfg.rescore
    assert parse_config(cfg.to_text()) == cfg
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        load_config("no-such-preset-or-file")


# -- generate ---------------------------------------------------------------------


def test_generate_default_shape_and_determinism(tmp_path, capsys):
    code, res, _ = run(capsys, "generate", "--out", tmp_path / "a", "--seed", 5)
    assert code == 0 and (res["n_obs"], res["n_nodes"]) == (100, 10)
    run(capsys, "generate", "--out", tmp_path / "b", "--seed", 5)
    for f in ("data.csv", "truth.dag", "truth.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = list(csv.reader(open(tmp_path / "a" / "data.csv")))
    assert len(rows) == 101 and len(rows[0]) == 10
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["command"] == "generate" and man["shape"] == [100, 10] and not man["linear"]


def test_generate_linear_manifest(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "lambda = 0\nn_nodes = 3\nmax_parents = 2\n")
    run(capsys, "generate", "--config", cfg, "--out", tmp_path / "o")
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["linear"] is True


# -- sample / evaluate / enumerate --------------------------------------------------


@pytest.fixture
def n4_data(tmp_path, capsys):
    cfg = write_cfg(tmp_path, FIXTURE, "gen.cfg")
    run(capsys, "generate", "--config", cfg, "--out", tmp_path / "gen", "--seed", 1)
    return tmp_path / "gen" / "data.csv", tmp_path / "gen" / "truth.dag"


def test_sample_bge(tmp_path, capsys, n4_data):
    data, truth = n4_data
    cfg = write_cfg(tmp_path, FIXTURE + "score = bge\nM = 100\n")
    code, diag, _ = run(capsys, "sample", "--config", cfg, "--data", data, "--out", tmp_path / "s")
    assert code == 0 and diag["n_samples"] == 100 and diag["n_unique_dags"] <= 100
    lines = (tmp_path / "s" / "samples.jsonl").read_text().splitlines()
    assert len(lines) == 100
    for line in lines:
        rec = json.loads(line)
        assert rec["log_p"] == rec["log_q"]
    code, rep, _ = run(capsys, "evaluate", "--samples", tmp_path / "s" / "samples.jsonl", "--truth", truth,
                       "--out", tmp_path / "e")
    assert code == 0 and rep["e_shd"] >= 0
    header, row = (tmp_path / "e" / "report.csv").read_text().splitlines()
    assert len(header.split(",")) == len(row.split(",")) == 8
    feats = json.loads((tmp_path / "e" / "features.json").read_text())
    assert len(feats) == 12 and all(0 <= f["posterior"] <= 1 for f in feats)


def test_sample_rescored_warm_cache(tmp_path, capsys, n4_data):
    data, _ = n4_data
    cfg = write_cfg(tmp_path, FIXTURE.replace("max_parents = 3", "max_parents = 1") + CHEAP_BRIDGE + "M = 100\n")
    cache = tmp_path / "scores.bin"
    code, d1, err = run(capsys, "sample", "--config", cfg, "--data", data, "--out", tmp_path / "s1", "--cache", cache)
    assert code == 0, err
    assert d1["rescored"] and d1["n_bridge_computed"] > 0
    code, d2, _ = run(capsys, "sample", "--config", cfg, "--data", data, "--out", tmp_path / "s2", "--cache", cache)
    assert d2["n_bridge_computed"] == 0
    assert (tmp_path / "s1" / "samples.jsonl").read_bytes() == (tmp_path / "s2" / "samples.jsonl").read_bytes()
    # rerun from the manifest reproduces the samples
    code, _, _ = run(capsys, "rerun", tmp_path / "s1" / "manifest.json", "--out", tmp_path / "s3")
    assert code == 0
    assert (tmp_path / "s3" / "samples.jsonl").read_bytes() == (tmp_path / "s1" / "samples.jsonl").read_bytes()


def test_evaluate_point_mass_and_self_exact(tmp_path, capsys):
    from gpnlearn.dag import Dag
    from gpnlearn.inference import WeightedDagSample, write_weighted

    g = Dag.from_edges(3, [(0, 1), (1, 2)])
    write_weighted([WeightedDagSample(g, -1.0, -1.0)] * 5, tmp_path / "s.jsonl")
    (tmp_path / "t.dag").write_text(g.to_text())
    (tmp_path / "x.json").write_text(json.dumps({"posterior": {g.key().hex(): 1.0}}))
    code, rep, _ = run(capsys, "evaluate", "--samples", tmp_path / "s.jsonl", "--truth", tmp_path / "t.dag",
                       "--exact", tmp_path / "x.json", "--out", tmp_path / "e")
    assert code == 0 and rep["e_shd"] == 0 and rep["reverse_kl"] == 0


def test_enumerate(tmp_path, capsys):
    cfg3 = write_cfg(tmp_path, "n_nodes = 3\nmax_parents = 2\n", "n3.cfg")
    code, res, _ = run(capsys, "enumerate", "--config", cfg3, "--out", tmp_path / "e3")
    assert res["n_dags"] == 25
    assert len((tmp_path / "e3" / "dags.txt").read_text().split()) == 25
    cfg4 = write_cfg(tmp_path, "n_nodes = 4\n", "n4.cfg")
    assert run(capsys, "enumerate", "--config", cfg4, "--out", tmp_path / "e4")[1]["n_dags"] == 543
    gen = write_cfg(tmp_path, "n_nodes = 3\nmax_parents = 2\nn_obs = 40\n", "g.cfg")
    run(capsys, "generate", "--config", gen, "--out", tmp_path / "g")
    bge = write_cfg(tmp_path, "n_nodes = 3\nmax_parents = 2\nscore = bge\n", "b.cfg")
    code, res, _ = run(capsys, "enumerate", "--config", bge, "--data", tmp_path / "g" / "data.csv", "--out", tmp_path / "x")
    post = json.loads((tmp_path / "x" / "exact.json").read_text())["posterior"]
    assert len(post) == 25 and math.fsum(post.values()) == pytest.approx(1, abs=1e-12)
    run(capsys, "rerun", tmp_path / "x" / "manifest.json", "--out", tmp_path / "x2")
    assert (tmp_path / "x2" / "exact.json").read_bytes() == (tmp_path / "x" / "exact.json").read_bytes()


def test_enumerate_refuses_large(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "n_nodes = 6\n")
    code, _, err = run(capsys, "enumerate", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and json.loads(err)["error"] == "UsageError"


# -- experiments, errors -------------------------------------------------------------


def test_experiment_eshd_sweep_bge(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "n_nodes = 3\nmax_parents = 2\nM = 200\nlambdas = 0, 1\nreplicates = 2\nmethods = bge\n")
    code, res, err = run(capsys, "experiment", "eshd-sweep", "--config", cfg, "--out", tmp_path / "x")
    assert code == 0, err
    rows = list(csv.DictReader(open(res["csv"])))
    assert len(rows) == 4 and {r["method"] for r in rows} == {"bge"}
    assert all(r["status"] == "ok" for r in rows)


def test_experiment_equivalence_bge(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "n_nodes = 5\nlambdas = 0, 1\nreplicates = 3\nequivalence_score = bge\n")
    code, res, _ = run(capsys, "experiment", "equivalence", "--config", cfg, "--out", tmp_path / "x")
    rows = list(csv.DictReader(open(res["csv"])))
    assert len(rows) == 6
    assert all(abs(float(r["gap"])) < 1e-8 for r in rows)
    code, res2, _ = run(capsys, "rerun", tmp_path / "x" / "manifest.json", "--out", tmp_path / "y")
    assert open(res2["csv"]).read() == open(res["csv"]).read()


def test_errors_are_json(tmp_path, capsys):
    code, _, err = run(capsys, "sample", "--out", tmp_path / "o", "--data", tmp_path / "missing.csv")
    assert code == 2 and set(json.loads(err)) == {"error", "message"}
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3\n")
    code, _, err = run(capsys, "sample", "--out", tmp_path / "o", "--data", bad)
    assert code == 2 and json.loads(err)["error"] == "RaggedCsvError"
    code, _, err = run(capsys, "generate", "--config", write_cfg(tmp_path, "lambda = -2"), "--out", tmp_path / "o")
    assert code == 2 and "lambda" in json.loads(err)["message"]
    code, _, _ = run(capsys, "generate", "--out", tmp_path / "o", "--threads", 0)
    assert code == 2
