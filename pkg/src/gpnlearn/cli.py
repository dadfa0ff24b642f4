"""Command-line entry point: ``gpnlearn <command> [options]``.

Commands write plain CSV, JSON and JSON-lines files plus a ``manifest.json``
holding everything needed to run them again (``gpnlearn rerun``). Failures
print a JSON object ``{"error": ..., "message": ...}`` on stderr and exit
nonzero (2 for bad input or configuration, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import __version__
from .cache import ScoreCache
from .config import ConfigError, ExperimentConfig, load_config
from .dag import Dag, enumerate_dags
from .experiments import EXPERIMENTS, cached, method_of, run_pipeline, run_study
from .inference import FeatureQuery, feature_posterior, estimated_dag_posterior, read_weighted, write_weighted
from .metrics import REPORT_COLUMNS, evaluate
from .scores import LocalScorer
from .synth import CsvFormatError, generate, load_csv, write_truth

log = logging.getLogger("gpnlearn")


class UsageError(ValueError):
    pass


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig | None, inputs: dict, outputs: list[str], extra=None) -> None:
    man = {
        "tool": "gpnlearn",
        "version": __version__,
        "command": command,
        "config": cfg.to_dict() if cfg is not None else None,
        "inputs": {k: str(Path(v).resolve()) if v is not None else None for k, v in inputs.items()},
        "outputs": sorted(outputs),
    }
    if extra:
        man.update(extra)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from None
    return out


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _cache(args):
    return ScoreCache(args.cache) if getattr(args, "cache", None) else ScoreCache(None)


# -- commands ---------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out: Path) -> dict:
    truth, ds = generate(cfg.synth())
    ds.to_csv(out / "data.csv")
    write_truth(truth, out / "truth.dag", out / "truth.json")
    outputs = ["data.csv", "truth.dag", "truth.json"]
    _write_manifest(out, "generate", cfg, {}, outputs, {"seed": cfg.seed, "linear": cfg.synth().linear,
                                                      "shape": list(ds.values.shape)})
    return {"data": str(out / "data.csv"), "n_obs": ds.n_obs, "n_nodes": ds.n_nodes}


def cmd_sample(cfg: ExperimentConfig, data_path, out: Path, cache: ScoreCache, threads: int = 1) -> dict:
    ds = load_csv(data_path, standardize=True)
    if ds.n_nodes != cfg.n_nodes:
        cfg = replace(cfg, n_nodes=ds.n_nodes, max_parents=min(cfg.max_parents, ds.n_nodes - 1))
    res = run_pipeline(ds, cfg, cache, threads)
    write_weighted(res.weighted, out / "samples.jsonl")
    diag = {
        "method": res.method,
        "sampler": cfg.sampler,
        "n_samples": len(res.weighted),
        "n_unique_dags": res.n_unique,
        "acceptance_rate": res.acceptance_rate,
        "ess": res.ess,
        "n_bridge_computed": res.n_bridge_computed if res.method == "gp" else 0,
        "rescored": res.method == "gp",
        "labels": list(ds.labels),
    }
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2) + "\n")
    _write_manifest(out, "sample", cfg, {"data": data_path, "cache": cache.path}, ["samples.jsonl", "diagnostics.json"])
    return diag


def _load_exact(path) -> dict[bytes, float]:
    obj = json.loads(Path(path).read_text())
    post = obj["posterior"] if "posterior" in obj else obj
    return {bytes.fromhex(k): float(v) for k, v in post.items()}


def cmd_evaluate(samples_path, out: Path, truth_path=None, exact_path=None, reversal_cost: int = 1,
                 feature: str = "no_path") -> dict:
    weighted = read_weighted(samples_path)
    if not weighted:
        raise UsageError(f"{samples_path} holds no samples")
    n = weighted[0].dag.n
    post = estimated_dag_posterior(weighted)
    exact = _load_exact(exact_path) if exact_path else None
    if exact is not None and Dag.from_key(next(iter(exact))).n != n:
        raise UsageError("exact posterior and samples have different node counts")
    if truth_path:
        truth = Dag.from_text(Path(truth_path).read_text())
        if truth.n != n:
            raise UsageError(f"truth has {truth.n} nodes, samples have {n}")
    else:
        truth = Dag.empty(n)
    report = evaluate(post, truth, exact, reversal_cost, len(weighted))
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.csv_header() + "\n" + report.csv_row() + "\n")
    # pairwise feature table: no_path (default) or no_edge per ordered pair
    feats = []
    for i in range(n):
        for j in range(n):
            if i != j:
                feats.append({"i": i, "j": j, "kind": feature,
                              "posterior": feature_posterior(weighted, FeatureQuery(feature, i, j))})
    (out / "features.json").write_text(json.dumps(feats, indent=2) + "\n")
    _write_manifest(out, "evaluate", None, {"samples": samples_path, "truth": truth_path, "exact": exact_path},
                    ["report.json", "report.csv", "features.json"], {"reversal_cost": reversal_cost, "feature": feature})
    return {"e_shd": report.e_shd, "reverse_kl": report.reverse_kl, "columns": list(REPORT_COLUMNS)}


def enumeration_limit(kind: str) -> int:
    return 4 if kind == "bridge" else 5


def cmd_enumerate(cfg: ExperimentConfig, out: Path, data_path=None, cache: ScoreCache | None = None) -> dict:
    kind = cfg.score
    if data_path is None:
        n = cfg.n_nodes
        if not 1 <= n <= 5:
            raise UsageError(f"enumeration supports at most 5 nodes, got {n}")
        dags = enumerate_dags(n)
        (out / "dags.txt").write_text("".join(g.key().hex() + "\n" for g in dags))
        _write_manifest(out, "enumerate", cfg, {}, ["dags.txt"])
        return {"n_nodes": n, "n_dags": len(dags)}
    ds = load_csv(data_path, standardize=True)
    n = ds.n_nodes
    if n > enumeration_limit(kind):
        raise UsageError(f"exact enumeration with {kind} scores supports at most {enumeration_limit(kind)} nodes, got {n}")
    scorer = LocalScorer(ds, kind, cfg.gp_settings(), cfg.bge_params())
    fn = cached(scorer, cache)
    prior = cfg.graph_prior()
    dags = enumerate_dags(n, ds.labels)
    scores = np.array([sum(fn(i, m) + prior.local_term(m) for i, m in enumerate(g.parents)) for g in dags])
    log_z = float(logsumexp(scores))
    probs = np.exp(scores - log_z)
    probs /= math.fsum(probs)
    doc = {
        "nodes": list(ds.labels),
        "kind": kind,
        "log_normalizer": log_z,
        "n_dags": len(dags),
        "posterior": {g.key().hex(): float(p) for g, p in zip(dags, probs)},
    }
    (out / "exact.json").write_text(json.dumps(doc, indent=2) + "\n")
    _write_manifest(out, "enumerate", cfg, {"data": data_path, "cache": cache.path if cache else None}, ["exact.json"])
    return {"n_nodes": n, "n_dags": len(dags), "log_normalizer": log_z}


def cmd_experiment(name: str, cfg: ExperimentConfig, out: Path, cache: ScoreCache, threads: int = 1) -> dict:
    path = run_study(name, cfg, out, cache if cache.path is not None else None, threads)
    _write_manifest(out, "experiment", cfg, {"cache": cache.path}, [path.name], {"experiment": name})
    return {"csv": str(path)}


def cmd_rerun(manifest_path, out: Path | None, threads: int = 1) -> dict:
    man = json.loads(Path(manifest_path).read_text())
    cfg = ExperimentConfig.from_dict(man["config"]) if man.get("config") else None
    out = _out_dir(out or Path(manifest_path).parent)
    inp = man.get("inputs", {})
    cache = ScoreCache(inp.get("cache")) if inp.get("cache") else ScoreCache(None)
    cmd = man["command"]
    if cmd == "generate":
        return cmd_generate(cfg, out)
    if cmd == "sample":
        return cmd_sample(cfg, inp["data"], out, cache, threads)
    if cmd == "evaluate":
        return cmd_evaluate(inp["samples"], out, inp.get("truth"), inp.get("exact"), man.get("reversal_cost", 1),
                            man.get("feature", "no_path"))
    if cmd == "enumerate":
        return cmd_enumerate(cfg, out, inp.get("data"), cache)
    if cmd == "experiment":
        return cmd_experiment(man["experiment"], cfg, out, cache, threads)
    raise UsageError(f"manifest names unknown command {cmd!r}")


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpnlearn", description="Bayesian structure learning for Gaussian process networks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--config", help="preset name or path to a key = value file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
        sp.add_argument("--cache", help="score cache file shared across runs")
        if data:
            sp.add_argument("--data", help="dataset CSV (header row of node labels)")

    common(sub.add_parser("generate", help="simulate a ground-truth network and dataset"))
    sp = sub.add_parser("sample", help="sample DAGs and importance-reweight them")
    common(sp, data=True)
    sp = sub.add_parser("enumerate", help="list all DAGs, or the exact posterior given --data")
    common(sp, data=True)
    sp = sub.add_parser("evaluate", help="E-SHD, reverse KL and feature posteriors of weighted samples")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--truth", help="ground-truth DAG text file")
    sp.add_argument("--exact", help="exact posterior JSON from 'enumerate'")
    sp.add_argument("--out", required=True)
    sp.add_argument("--reversal-cost", type=int, default=1, choices=(1, 2))
    sp.add_argument("--feature", default="no_path", choices=("no_path", "no_edge"))
    sp = sub.add_parser("experiment", help="run a batch study and write a tidy CSV")
    sp.add_argument("name", choices=EXPERIMENTS)
    common(sp)
    sp = sub.add_parser("rerun", help="repeat a command from its manifest.json")
    sp.add_argument("manifest")
    sp.add_argument("--out")
    sp.add_argument("--threads", type=int, default=1)
    return p


def dispatch(args) -> dict:
    if getattr(args, "threads", 1) < 1:
        raise UsageError("--threads must be >= 1")
    if args.command == "rerun":
        return cmd_rerun(args.manifest, Path(args.out) if args.out else None, args.threads)
    out = _out_dir(args.out)
    if args.command == "evaluate":
        return cmd_evaluate(args.samples, out, args.truth, args.exact, args.reversal_cost, args.feature)
    cfg = _config(args)
    if args.command == "generate":
        return cmd_generate(cfg, out)
    cache = _cache(args)
    if args.command == "sample":
        if not args.data:
            raise UsageError("sample needs --data")
        return cmd_sample(cfg, args.data, out, cache, args.threads)
    if args.command == "enumerate":
        return cmd_enumerate(cfg, out, args.data, cache)
    return cmd_experiment(args.name, cfg, out, cache, args.threads)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = dispatch(args)
    except (UsageError, ConfigError, CsvFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except Exception as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    sys.stdout.write(json.dumps(result) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
