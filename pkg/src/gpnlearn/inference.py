"""Rescoring sampled DAGs, importance weights and posterior feature estimates."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .cache import ScoreCache
from .dag import Dag, enumerate_dags, to_cpdag
from .scores import GPSettings, LocalScorer, ScoreError, compute_many
from .synth import Dataset
from .tables import GraphPrior, ScoreTable, dag_log_posterior

log = logging.getLogger(__name__)


class WeightDegeneracyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WeightedDagSample:
    dag: Dag
    log_q: float
    log_p: float

    def __post_init__(self):
        if not (math.isfinite(self.log_q) and math.isfinite(self.log_p)):
            raise ValueError("log_q and log_p must be finite")

    @property
    def log_w(self) -> float:
        return self.log_p - self.log_q


class WeightedSamples(list):
    """List of :class:`WeightedDagSample` with rescoring statistics."""

    def __init__(self, items=(), n_unique_dags: int = 0, n_local_scores: int = 0):
        super().__init__(items)
        self.n_unique_dags = n_unique_dags
        self.n_local_scores = n_local_scores


FEATURE_KINDS = ("edge", "directed_path", "dag_equals", "cpdag_edge", "no_edge", "no_path")


@dataclass(frozen=True)
class FeatureQuery:
    """Indicator feature of a DAG.

    ``cpdag_edge`` is 1 when the equivalence class contains ``i -> j`` either
    directed or as an undirected edge. ``no_edge`` and ``no_path`` are the
    complements of ``edge`` and ``directed_path``.
    """

    kind: str
    i: int = -1
    j: int = -1
    key: bytes = b""

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.kind == "dag_equals":
            if not self.key:
                raise ValueError("dag_equals needs a DAG key")
        elif self.i < 0 or self.j < 0 or self.i == self.j:
            raise ValueError("feature needs two distinct node indices")

    def __call__(self, dag: Dag) -> float:
        k = self.kind
        if k == "edge":
            return float(dag.has_edge(self.i, self.j))
        if k == "no_edge":
            return float(not dag.has_edge(self.i, self.j))
        if k == "directed_path":
            return float(dag.has_path(self.i, self.j))
        if k == "no_path":
            return float(not dag.has_path(self.i, self.j))
        if k == "dag_equals":
            return float(dag.key() == self.key)
        c = to_cpdag(dag)
        return float((self.i, self.j) in c.directed or (min(self.i, self.j), max(self.i, self.j)) in c.undirected)


def _as_pairs(samples) -> list[tuple[Dag, float | None]]:
    out = []
    for s in samples:
        if isinstance(s, Dag):
            out.append((s, None))
        else:
            out.append((s[0], s[1]))
    return out


def rescore_unique(samples: Sequence, laplace_table: ScoreTable, dataset: Dataset | None = None,
                   settings: GPSettings | None = None, cache: ScoreCache | None = None, parallelism: int = 1,
                   scorer: Callable[[int, int], float] | None = None) -> WeightedSamples:
    """Attach bridge log posteriors to sampled DAGs.

    Each distinct (node, parent set) pair across the distinct DAGs is scored
    once; ``scorer`` overrides the default bridge scorer built from
    ``dataset`` and ``settings``. The table's graph prior is applied to both
    ``log_q`` and ``log_p``.
    """
    pairs_in = _as_pairs(samples)
    if not pairs_in:
        raise ValueError("no samples to rescore")
    if scorer is None:
        if dataset is None:
            raise ValueError("need a dataset or a scorer")
        scorer = LocalScorer(dataset, "bridge", settings)
    unique: dict[bytes, Dag] = {}
    for g, _ in pairs_in:
        unique.setdefault(g.key(), g)
    needed: dict[tuple[int, int], bytes] = {}
    for key, g in unique.items():
        for i, m in enumerate(g.parents):
            needed.setdefault((i, m), key)
    kind = getattr(scorer, "kind", "bridge")
    fp = getattr(scorer, "fingerprint", None)
    local: dict[tuple[int, int], float] = {}
    todo = []
    for node, mask in needed:
        hit = cache.get(node, mask, kind, fp(node, mask)) if cache is not None and fp else None
        if hit is None:
            todo.append((node, mask))
        else:
            local[(node, mask)] = hit
    log.info("rescoring %d unique DAGs: %d local scores (%d cached)", len(unique), len(todo), len(needed) - len(todo))
    try:
        if isinstance(scorer, LocalScorer):
            vals = compute_many(scorer, todo, parallelism)
        else:
            vals = [float(scorer(node, mask)) for node, mask in todo]
    except ScoreError as exc:
        raise ScoreError(f"{exc} (while rescoring sampled DAGs)") from exc
    for (node, mask), v in zip(todo, vals):
        if not math.isfinite(v):
            g = unique[needed[(node, mask)]]
            raise ScoreError(f"non-finite score for node {node}, parents {g.parent_set(node)} in DAG {g.edges()}")
        local[(node, mask)] = v
        if cache is not None and fp:
            cache.put(node, mask, kind, fp(node, mask), v)
            cache.n_computed += 1
    prior = laplace_table.prior
    log_p = {key: sum(local[(i, m)] + prior.local_term(m) for i, m in enumerate(g.parents)) for key, g in unique.items()}
    log_q: dict[bytes, float] = {}
    out = WeightedSamples(n_unique_dags=len(unique), n_local_scores=len(todo))
    for g, lq in pairs_in:
        k = g.key()
        if lq is None:
            lq = log_q.get(k)
            if lq is None:
                lq = log_q[k] = dag_log_posterior(g, laplace_table)
        out.append(WeightedDagSample(g, float(lq), float(log_p[k])))
    return out


def unweighted(samples: Sequence, table: ScoreTable) -> WeightedSamples:
    """Samples with ``log_p = log_q`` (no rescoring; all weights equal)."""
    out = WeightedSamples()
    for g, lq in _as_pairs(samples):
        lq = dag_log_posterior(g, table) if lq is None else lq
        out.append(WeightedDagSample(g, lq, lq))
    out.n_unique_dags = len({s.dag.key() for s in out})
    return out


def log_weights(weighted: Sequence[WeightedDagSample]) -> np.ndarray:
    return np.array([s.log_w for s in weighted], dtype=float)


def normalized_weights(weighted: Sequence[WeightedDagSample]) -> np.ndarray:
    lw = log_weights(weighted)
    return np.exp(lw - logsumexp(lw))


def effective_sample_size(weighted: Sequence[WeightedDagSample], warn: bool = True) -> float:
    """Kish ESS, (sum w)^2 / sum w^2; warns when below M / 100."""
    lw = log_weights(weighted)
    if len(lw) == 0:
        raise ValueError("no samples")
    ess = float(np.exp(2 * logsumexp(lw) - logsumexp(2 * lw)))
    if warn and ess < len(lw) / 100:
        warnings.warn(f"importance weights degenerate: ESS {ess:.1f} of {len(lw)} samples", WeightDegeneracyWarning)
    return ess


def feature_posterior(weighted: Sequence[WeightedDagSample], query: Callable[[Dag], float]) -> float:
    """Self-normalized importance estimate of the posterior probability of a feature."""
    if not weighted:
        raise ValueError("no samples")
    lw = log_weights(weighted)
    vals = np.array([query(s.dag) for s in weighted], dtype=float)
    if np.any((vals < 0) | (vals > 1)):
        raise ValueError("feature values must lie in [0, 1]")
    on = vals > 0
    if not on.any():
        return 0.0
    est = float(np.exp(logsumexp(lw[on], b=vals[on]) - logsumexp(lw)))
    return min(1.0, est)


def estimated_dag_posterior(weighted: Sequence[WeightedDagSample]) -> dict[bytes, float]:
    """Normalized weight mass per sampled DAG key (multiplicity times weight)."""
    if not weighted:
        raise ValueError("no samples")
    keys = [s.dag.key() for s in weighted]
    lw = log_weights(weighted)
    total = logsumexp(lw)
    groups: dict[bytes, list[float]] = {}
    for k, w in zip(keys, lw):
        groups.setdefault(k, []).append(w)
    probs = {k: float(np.exp(logsumexp(v) - total)) for k, v in groups.items()}
    s = math.fsum(probs.values())
    return {k: p / s for k, p in probs.items()}


def exact_posterior(dataset: Dataset | None, n: int, score_fn: Callable[[int, int], float],
                    prior: GraphPrior | None = None, kind: str | None = None) -> dict[bytes, float]:
    """Normalized posterior over every DAG on ``n`` nodes by enumeration.

    ``score_fn(node, mask)`` is evaluated once per distinct pair. Limited to
    n <= 4 for bridge scores and n <= 5 otherwise.
    """
    kind = kind or getattr(score_fn, "kind", None)
    limit = 4 if kind == "bridge" else 5
    if not 1 <= n <= limit:
        raise ValueError(f"exact enumeration supports 1 <= n <= {limit} for {kind or 'these'} scores, got {n}")
    if dataset is not None and dataset.n_nodes != n:
        raise ValueError(f"dataset has {dataset.n_nodes} nodes, asked for {n}")
    prior = prior or GraphPrior()
    memo: dict[tuple[int, int], float] = {}

    def local(i, m):
        v = memo.get((i, m))
        if v is None:
            v = memo[(i, m)] = float(score_fn(i, m)) + prior.local_term(m)
        return v

    labels = dataset.labels if dataset is not None else ()
    dags = enumerate_dags(n, labels)
    scores = np.array([sum(local(i, m) for i, m in enumerate(g.parents)) for g in dags])
    probs = np.exp(scores - logsumexp(scores))
    probs /= math.fsum(probs)
    return {g.key(): float(p) for g, p in zip(dags, probs)}


def exact_feature_posterior(posterior: dict[bytes, float], query: Callable[[Dag], float]) -> float:
    return float(math.fsum(p * query(Dag.from_key(k)) for k, p in posterior.items()))


def write_weighted(weighted: Iterable[WeightedDagSample], path) -> None:
    with open(path, "w") as fh:
        for s in weighted:
            rec = {"dag_key": s.dag.key().hex(), "edges": [list(e) for e in s.dag.edges()], "log_q": s.log_q, "log_p": s.log_p}
            fh.write(json.dumps(rec) + "\n")


def read_weighted(path, labels: Sequence[str] = ()) -> list[WeightedDagSample]:
    out = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            g = Dag.from_key(bytes.fromhex(rec["dag_key"]), labels)
            out.append(WeightedDagSample(g, float(rec["log_q"]), float(rec["log_p"])))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{line_no}: bad weighted-sample record: {exc}") from None
    return out
