"""End-to-end pipeline and the batch studies behind ``gpnlearn experiment``."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .cache import ScoreCache
from .config import ExperimentConfig
from .dag import Dag
from .inference import (
    WeightDegeneracyWarning,
    WeightedSamples,
    effective_sample_size,
    estimated_dag_posterior,
    exact_posterior,
    rescore_unique,
    unweighted,
)
from .metrics import equivalence_gap, evaluate, reverse_kl
from .samplers import sample_dags
from .scores import LocalScorer
from .synth import Dataset, generate, gen_observations, sample_ground_truth
from .tables import ScoreTable, build_score_table

log = logging.getLogger(__name__)

EXPERIMENTS = ("eshd-sweep", "kl-convergence", "equivalence", "roc-sweep")
METHODS = ("gp", "laplace", "bge", "bridge")


def method_of(cfg: ExperimentConfig) -> str:
    if cfg.score == "bge":
        return "bge"
    if cfg.score == "bridge":
        return "bridge"
    return "gp" if cfg.rescore else "laplace"


def stream(*words: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(w) for w in words]))


def derived_seed(*words: int) -> int:
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1)[0])


def open_cache(cache) -> ScoreCache:
    return cache if isinstance(cache, ScoreCache) else ScoreCache(cache)


def cached(scorer: LocalScorer, cache: ScoreCache | None) -> Callable[[int, int], float]:
    """``scorer`` memoised through ``cache``; keeps the scorer's ``kind``."""
    if cache is None:
        return scorer

    def fn(node: int, mask: int) -> float:
        return cache.get_or_compute(node, mask, scorer.kind, scorer.fingerprint(node, mask), lambda: scorer(node, mask)).log_score

    fn.kind = scorer.kind
    return fn


@dataclass
class PipelineResult:
    method: str
    weighted: WeightedSamples
    table: ScoreTable
    acceptance_rate: float
    n_unique: int
    ess: float
    n_bridge_computed: int


def score_table(dataset: Dataset, cfg: ExperimentConfig, kind: str, cache: ScoreCache | None = None,
                threads: int = 1) -> ScoreTable:
    scorer = LocalScorer(dataset, kind, cfg.gp_settings(), cfg.bge_params())
    return build_score_table(scorer, cfg.max_parents, cfg.graph_prior(), threads, cache)


def run_pipeline(dataset: Dataset, cfg: ExperimentConfig, cache: ScoreCache | None = None, threads: int = 1,
                 method: str | None = None) -> PipelineResult:
    """Phase 1 (table + MCMC) and, for the ``gp`` method, phase 2 (bridge rescoring)."""
    method = method or method_of(cfg)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    kind = {"gp": "laplace", "laplace": "laplace", "bge": "bge", "bridge": "bridge"}[method]
    table = score_table(dataset, cfg, kind, cache, threads)
    chain = sample_dags(table, cfg.sampler, cfg.n_samples, stream(cfg.seed, 101))
    before = cache.n_computed if cache is not None else 0
    if method == "gp":
        weighted = rescore_unique(chain, table, dataset, cfg.gp_settings(), cache, threads)
    else:
        weighted = unweighted(chain, table)
    n_bridge = (cache.n_computed - before) if cache is not None else weighted.n_local_scores
    with warnings.catch_warnings():
        warnings.simplefilter("always", WeightDegeneracyWarning)
        ess = effective_sample_size(weighted)
    return PipelineResult(method, weighted, table, chain.acceptance_rate, weighted.n_unique_dags, ess, n_bridge)


# -- tidy CSV -----------------------------------------------------------------


def write_rows(rows: list[dict], path, columns: tuple[str, ...]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c, "")) for c in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _failed(row: dict, exc: Exception) -> dict:
    log.warning("row %s failed: %s", row, exc)
    return {**row, "status": f"failed: {type(exc).__name__}: {exc}"}


# -- studies --------------------------------------------------------------------

ESHD_COLUMNS = ("lambda", "replicate", "method", "e_shd", "e_tp", "e_fp", "tpr", "fprp", "n_true_edges",
                "n_unique", "ess", "acceptance_rate", "status")


def _eshd_job(cfg: ExperimentConfig, li: int, lam: float, rep: int, cache, threads: int) -> list[dict]:
    cache = open_cache(cache)
    seed = derived_seed(cfg.seed, li, rep)
    truth, raw = generate(cfg.synth(seed, lam))
    rcfg = replace(cfg, seed=seed, lam=lam)
    rows = []
    for method in cfg.methods:
        row = {"lambda": lam, "replicate": rep, "method": method, "n_true_edges": truth.dag.n_edges}
        try:
            res = run_pipeline(raw, rcfg, cache, threads, method)
            rep_ = evaluate(estimated_dag_posterior(res.weighted), truth.dag)
            row.update(e_shd=rep_.e_shd, e_tp=rep_.e_tp, e_fp=rep_.e_fp, tpr=rep_.tpr, fprp=rep_.fprp,
                       n_unique=res.n_unique, ess=res.ess, acceptance_rate=res.acceptance_rate, status="ok")
        except Exception as exc:  # one failed row must not stop the sweep
            row = _failed(row, exc)
        rows.append(row)
    return rows


def eshd_sweep(cfg: ExperimentConfig, cache=None, threads: int = 1) -> list[dict]:
    jobs = [(_eshd_job, (cfg, li, lam, rep)) for li, lam in enumerate(cfg.lambdas) for rep in range(cfg.replicates)]
    return _run_jobs(jobs, cache, threads)


KL_COLUMNS = ("replicate", "M", "method", "reverse_kl", "n_unique", "status")


def exact_bridge_posterior(dataset: Dataset, cfg: ExperimentConfig, cache: ScoreCache | None) -> dict[bytes, float]:
    scorer = LocalScorer(dataset, "bridge", cfg.gp_settings())
    return exact_posterior(scorer.dataset, dataset.n_nodes, cached(scorer, cache), cfg.graph_prior(), "bridge")


def _kl_job(cfg: ExperimentConfig, rep: int, cache, threads: int) -> list[dict]:
    cache = open_cache(cache)
    seed = derived_seed(cfg.seed, rep)
    _, raw = generate(cfg.synth(seed))
    rcfg = replace(cfg, seed=seed, n_samples=max(cfg.sample_sizes))
    rows = []
    try:
        exact = exact_bridge_posterior(raw, rcfg, cache)
        res = run_pipeline(raw, rcfg, cache, threads, "gp")
    except Exception as exc:
        return [_failed({"replicate": rep, "M": m, "method": meth}, exc) for m in cfg.sample_sizes for meth in ("laplace", "weighted")]
    for m in sorted(cfg.sample_sizes):
        head = WeightedSamples(res.weighted[:m])
        for meth, ws in (("laplace", unweighted([(s.dag, s.log_q) for s in head], res.table)), ("weighted", head)):
            post = estimated_dag_posterior(ws)
            rows.append({"replicate": rep, "M": m, "method": meth, "reverse_kl": reverse_kl(post, exact),
                         "n_unique": len(post), "status": "ok"})
    return rows


def kl_convergence(cfg: ExperimentConfig, cache=None, threads: int = 1) -> list[dict]:
    if cfg.n_nodes > 4:
        raise ValueError("kl-convergence needs the exact bridge posterior; use n_nodes <= 4")
    return _run_jobs([(_kl_job, (cfg, rep)) for rep in range(cfg.replicates)], cache, threads)


EQUIV_COLUMNS = ("lambda", "replicate", "score", "gap", "status")


def chain_dag(n: int, labels=()) -> Dag:
    return Dag.from_edges(n, [(i, i + 1) for i in range(n - 1)], labels)


def chain_dataset(cfg: ExperimentConfig, seed: int, lam: float) -> Dataset:
    """Observations from the forward chain ``0 -> 1 -> ... -> n-1``."""
    scfg = cfg.synth(seed, lam)
    rng = np.random.default_rng(seed)
    truth = sample_ground_truth(scfg, rng, dag=chain_dag(cfg.n_nodes))
    return gen_observations(truth, scfg, rng)


def equivalence_row(cfg: ExperimentConfig, lam: float, rep: int, li: int, cache: ScoreCache | None) -> dict:
    seed = derived_seed(cfg.seed, li, rep)
    ds = chain_dataset(cfg, seed, lam)
    scorer = LocalScorer(ds, cfg.equivalence_score, replace(cfg, seed=seed).gp_settings(), cfg.bge_params())
    gap = equivalence_gap(chain_dag(cfg.n_nodes), cached(scorer, cache))
    return {"lambda": lam, "replicate": rep, "score": cfg.equivalence_score, "gap": gap, "status": "ok"}


def _equiv_job(cfg: ExperimentConfig, li: int, lam: float, rep: int, cache, threads: int) -> list[dict]:
    try:
        return [equivalence_row(cfg, lam, rep, li, open_cache(cache))]
    except Exception as exc:
        return [_failed({"lambda": lam, "replicate": rep, "score": cfg.equivalence_score}, exc)]


def equivalence(cfg: ExperimentConfig, cache=None, threads: int = 1) -> list[dict]:
    if cfg.n_nodes < 2:
        raise ValueError("equivalence needs a chain of at least 2 nodes")
    jobs = [(_equiv_job, (cfg, li, lam, rep)) for li, lam in enumerate(cfg.lambdas) for rep in range(cfg.replicates)]
    return _run_jobs(jobs, cache, threads)


ROC_COLUMNS = ("replicate", "method", "parameter", "value", "tpr", "fprp", "e_shd", "n_unique", "status")


def _roc_job(cfg: ExperimentConfig, rep: int, cache, threads: int) -> list[dict]:
    cache = open_cache(cache)
    seed = derived_seed(cfg.seed, rep)
    truth, raw = generate(cfg.synth(seed))
    rows = []
    grid = [("gp", "gamma", g, replace(cfg, seed=seed, gamma=g)) for g in cfg.gammas]
    grid += [("bge", "t_scale", t, replace(cfg, seed=seed, bge_t_scale=t)) for t in cfg.t_scales]
    for method, pname, val, rcfg in grid:
        row = {"replicate": rep, "method": method, "parameter": pname, "value": val}
        try:
            res = run_pipeline(raw, rcfg, cache, threads, method)
            ev = evaluate(estimated_dag_posterior(res.weighted), truth.dag)
            row.update(tpr=ev.tpr, fprp=ev.fprp, e_shd=ev.e_shd, n_unique=res.n_unique, status="ok")
        except Exception as exc:
            row = _failed(row, exc)
        rows.append(row)
    return rows


def roc_sweep(cfg: ExperimentConfig, cache=None, threads: int = 1) -> list[dict]:
    return _run_jobs([(_roc_job, (cfg, rep)) for rep in range(cfg.replicates)], cache, threads)


STUDIES = {
    "eshd-sweep": (eshd_sweep, ESHD_COLUMNS),
    "kl-convergence": (kl_convergence, KL_COLUMNS),
    "equivalence": (equivalence, EQUIV_COLUMNS),
    "roc-sweep": (roc_sweep, ROC_COLUMNS),
}


def _call(job):
    fn, args, cache = job
    return fn(*args, cache, 1)


def _run_jobs(jobs, cache, threads: int) -> list[dict]:
    """Run study jobs in order, or across worker processes when ``threads > 1``.

    Workers reopen the on-disk cache; an in-memory cache is not shared.
    """
    if threads <= 1 or len(jobs) < 2:
        shared = open_cache(cache)
        out = []
        for fn, args in jobs:
            out.extend(fn(*args, shared, 1))
        return out
    from concurrent.futures import ProcessPoolExecutor

    path = cache.path if isinstance(cache, ScoreCache) else cache
    with ProcessPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(_call, [(fn, args, path) for fn, args in jobs]))
    return [r for rows in results for r in rows]


def run_study(name: str, cfg: ExperimentConfig, out_dir, cache=None, threads: int = 1) -> Path:
    if name not in STUDIES:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    fn, cols = STUDIES[name]
    rows = fn(cfg, cache, threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    write_rows(rows, path, cols)
    return path


def median(xs) -> float:
    xs = [x for x in xs if isinstance(x, (int, float)) and math.isfinite(x)]
    return float(np.median(xs)) if xs else float("nan")
