"""Precomputed parent-set score tables and decomposable DAG scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .cache import ScoreCache
from .dag import Dag, bits, popcount, to_mask
from .scores import LocalScorer, compute_many

log = logging.getLogger(__name__)


class CoverageError(KeyError):
    pass


@dataclass(frozen=True)
class GraphPrior:
    kind: str = "uniform"
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "edge_penalty"):
            raise ValueError(f"unknown graph prior {self.kind!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    def local_term(self, mask: int) -> float:
        if self.kind == "uniform":
            return 0.0
        return -self.gamma * popcount(mask)


def parent_masks(n: int, node: int, max_parents: int, candidates: Sequence[int] | None = None) -> list[int]:
    pool = [j for j in (range(n) if candidates is None else candidates) if j != node]
    out = []
    for size in range(min(max_parents, len(pool)) + 1):
        out.extend(to_mask(c) for c in combinations(pool, size))
    return out


@dataclass
class ScoreTable:
    """Per-node map from allowed parent masks to log local score (graph prior folded in)."""

    n: int
    max_parents: int
    scores: list[dict[int, float]]
    kind: str = "custom"
    prior: GraphPrior = field(default_factory=GraphPrior)
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.scores) != self.n:
            raise ValueError("one score map per node required")
        self.masks = [np.fromiter(s.keys(), dtype=np.int64, count=len(s)) for s in self.scores]
        self.values = [np.fromiter(s.values(), dtype=float, count=len(s)) for s in self.scores]
        for i, v in enumerate(self.values):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite local score for node {i}")

    @classmethod
    def from_function(cls, n: int, max_parents: int, fn: Callable[[int, int], float], prior: GraphPrior | None = None,
                      kind: str = "custom", labels: Sequence[str] = ()) -> "ScoreTable":
        prior = prior or GraphPrior()
        scores = [
            {m: float(fn(i, m)) + prior.local_term(m) for m in parent_masks(n, i, max_parents)}
            for i in range(n)
        ]
        return cls(n, max_parents, scores, kind, prior, tuple(labels))

    def __len__(self) -> int:
        return sum(len(s) for s in self.scores)

    def local(self, node: int, mask: int) -> float:
        try:
            return self.scores[node][mask]
        except KeyError:
            raise CoverageError(f"parent set {bits(mask)} of node {node} is not in the score table") from None

    def covers(self, dag: Dag) -> bool:
        return all(dag.parents[i] in self.scores[i] for i in range(self.n))


def dag_log_posterior(dag: Dag, table: ScoreTable) -> float:
    """Sum of local log scores; the table already holds the graph prior term."""
    if dag.n != table.n:
        raise ValueError(f"DAG has {dag.n} nodes, table {table.n}")
    return float(sum(table.local(i, dag.parents[i]) for i in range(dag.n)))


def build_score_table(scorer: LocalScorer, max_parents: int, prior: GraphPrior | None = None, parallelism: int = 1,
                      cache: ScoreCache | None = None) -> ScoreTable:
    """Score every (node, parent set) with at most ``max_parents`` parents.

    Bridge tables are expensive (every entry runs an MCMC chain); prefer
    Laplace or BGe tables for sampling and bridge only for rescoring.
    """
    n = scorer.n
    if not 0 <= max_parents <= n - 1:
        raise ValueError(f"max_parents must lie in [0, {n - 1}]")
    prior = prior or GraphPrior()
    pairs = [(i, m) for i in range(n) for m in parent_masks(n, i, max_parents)]
    raw: dict[tuple[int, int], float] = {}
    todo = []
    for node, mask in pairs:
        hit = cache.get(node, mask, scorer.kind, scorer.fingerprint(node, mask)) if cache else None
        if hit is None:
            todo.append((node, mask))
        else:
            raw[(node, mask)] = hit
    if todo:
        log.info("computing %d %s local scores (%d cached)", len(todo), scorer.kind, len(pairs) - len(todo))
        vals = compute_many(scorer, todo, parallelism)
        for (node, mask), v in zip(todo, vals):
            raw[(node, mask)] = v
            if cache is not None:
                cache.put(node, mask, scorer.kind, scorer.fingerprint(node, mask), v)
                cache.n_computed += 1
    scores = [dict() for _ in range(n)]
    for node, mask in pairs:
        scores[node][mask] = raw[(node, mask)] + prior.local_term(mask)
    return ScoreTable(n, max_parents, scores, scorer.kind, prior, scorer.dataset.labels)
