"""Structural distances, posterior-expected statistics and divergences."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

from .dag import Cpdag, Dag

# fixed column order of the CSV form of an EvalReport
REPORT_COLUMNS = ("e_shd", "e_tp", "e_fp", "tpr", "fprp", "reverse_kl", "n_unique", "n_samples")


def _dag_relations(g: Dag) -> dict[tuple[int, int], str]:
    rel = {}
    for i, j in g.edges():
        rel[(min(i, j), max(i, j))] = "fwd" if i < j else "back"
    return rel


def _cpdag_relations(c: Cpdag) -> dict[tuple[int, int], str]:
    rel = {}
    for i, j in c.directed:
        rel[(min(i, j), max(i, j))] = "fwd" if i < j else "back"
    for e in c.undirected:
        rel[e] = "und"
    return rel


def shd(g1: Dag | Cpdag, g2: Dag | Cpdag, reversal_cost: int = 1) -> int:
    """Structural Hamming distance.

    An insertion or deletion costs 1; an edge present in both graphs with a
    different orientation (or directed vs undirected) costs ``reversal_cost``.
    """
    if type(g1) is not type(g2):
        raise TypeError(f"cannot compare {type(g1).__name__} with {type(g2).__name__}")
    if g1.n != g2.n:
        raise ValueError(f"node counts differ: {g1.n} vs {g2.n}")
    if reversal_cost not in (1, 2):
        raise ValueError("reversal_cost must be 1 or 2")
    rel = _dag_relations if isinstance(g1, Dag) else _cpdag_relations
    r1, r2 = rel(g1), rel(g2)
    d = 0
    for e in set(r1) | set(r2):
        a, b = r1.get(e), r2.get(e)
        if a == b:
            continue
        d += reversal_cost if (a and b) else 1
    return d


def true_positives(g_est: Dag, g_true: Dag) -> int:
    return sum(1 for i, j in g_est.edges() if g_true.has_edge(i, j))


def false_positives(g_est: Dag, g_true: Dag) -> int:
    """Estimated edges absent from the truth in both directions (reversals excluded)."""
    return sum(1 for i, j in g_est.edges() if not g_true.has_edge(i, j) and not g_true.has_edge(j, i))


def tpr_fprp(g_est: Dag, g_true: Dag) -> tuple[float, float]:
    if g_est.n != g_true.n:
        raise ValueError(f"node counts differ: {g_est.n} vs {g_true.n}")
    p = g_true.n_edges
    if p == 0:
        raise ValueError("true graph has no edges; TPR and FPRp are undefined")
    return true_positives(g_est, g_true) / p, false_positives(g_est, g_true) / p


def _normalized(posterior: Mapping[bytes, float]) -> dict[bytes, float]:
    if not posterior:
        raise ValueError("empty posterior")
    total = math.fsum(posterior.values())
    if not total > 0:
        raise ValueError("posterior has no mass")
    return {k: v / total for k, v in posterior.items()}


def expected_stat(posterior: Mapping[bytes, float], g_true: Dag, stat: Callable[[Dag, Dag], float]) -> float:
    """Posterior mean of ``stat(G, g_true)`` over a map from DAG key to probability."""
    post = _normalized(posterior)
    return math.fsum(p * stat(Dag.from_key(k), g_true) for k, p in post.items())


def expected_shd(posterior: Mapping[bytes, float], g_true: Dag, reversal_cost: int = 1) -> float:
    return expected_stat(posterior, g_true, lambda g, t: shd(g, t, reversal_cost))


def expected_tp(posterior: Mapping[bytes, float], g_true: Dag) -> float:
    return expected_stat(posterior, g_true, true_positives)


def expected_fp(posterior: Mapping[bytes, float], g_true: Dag) -> float:
    return expected_stat(posterior, g_true, false_positives)


def reverse_kl(estimated: Mapping[bytes, float], exact: Mapping[bytes, float]) -> float:
    """Sum over the estimated support of q (ln q - ln p), with 0 ln 0 taken as 0."""
    total = []
    for k, q in estimated.items():
        if q == 0:
            continue
        if q < 0:
            raise ValueError("negative probability in estimate")
        p = exact.get(k, 0.0)
        if p <= 0:
            raise ValueError(f"estimated DAG {k.hex()} has zero exact posterior probability")
        total.append(q * (math.log(q) - math.log(p)))
    return math.fsum(total)


def equivalence_gap(forward: Dag, score_fn: Callable[[int, int], float]) -> float:
    """Total score of ``forward`` minus that of the DAG with every edge reversed."""
    back = forward.reversed()
    fwd = math.fsum(score_fn(i, m) for i, m in enumerate(forward.parents))
    bwd = math.fsum(score_fn(i, m) for i, m in enumerate(back.parents))
    return fwd - bwd


@dataclass
class EvalReport:
    e_shd: float
    e_tp: float
    e_fp: float
    tpr: float
    fprp: float
    reverse_kl: float | None = None
    n_unique: int = 0
    n_samples: int = 0
    per_sample: list[dict] = field(default_factory=list)

    def __post_init__(self):
        # tpr and fprp are NaN when the true graph has no edges
        if self.e_shd < 0 or self.fprp < 0 or self.tpr < 0 or self.tpr > 1 + 1e-12:
            raise ValueError("report values out of range")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def csv_header(self) -> str:
        return ",".join(REPORT_COLUMNS)

    def csv_row(self) -> str:
        buf = io.StringIO()
        vals = [getattr(self, c) for c in REPORT_COLUMNS]
        csv.writer(buf, lineterminator="").writerow(["" if v is None else v for v in vals])
        return buf.getvalue()


def evaluate(posterior: Mapping[bytes, float], g_true: Dag, exact: Mapping[bytes, float] | None = None,
             reversal_cost: int = 1, n_samples: int = 0) -> EvalReport:
    """E-SHD, E-TP, E-FP and the scaled rates of a DAG posterior against the truth.

    ``tpr`` and ``fprp`` are E-TP and E-FP divided by the number of true
    edges (NaN when the truth is empty).
    """
    post = _normalized(posterior)
    rows = []
    e_shd = e_tp = e_fp = 0.0
    for k, p in sorted(post.items(), key=lambda kv: -kv[1]):
        g = Dag.from_key(k)
        if g.n != g_true.n:
            raise ValueError(f"sampled DAG has {g.n} nodes, truth has {g_true.n}")
        s, tp, fp = shd(g, g_true, reversal_cost), true_positives(g, g_true), false_positives(g, g_true)
        e_shd += p * s
        e_tp += p * tp
        e_fp += p * fp
        rows.append({"dag_key": k.hex(), "prob": p, "shd": s, "tp": tp, "fp": fp})
    n_true = g_true.n_edges
    tpr = e_tp / n_true if n_true else float("nan")
    fprp = e_fp / n_true if n_true else float("nan")
    rk = reverse_kl(post, exact) if exact is not None else None
    return EvalReport(e_shd, e_tp, e_fp, tpr, fprp, rk, len(post), n_samples, rows)


def mean_shd(dags: Sequence[Dag], g_true: Dag) -> float:
    return math.fsum(shd(g, g_true) for g in dags) / len(dags)
