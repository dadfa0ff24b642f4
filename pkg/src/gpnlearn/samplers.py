"""MCMC samplers over DAGs, node orders and ordered node partitions.

All samplers read a precomputed :class:`ScoreTable` and work in log space.
Each returns a :class:`Chain`, a list of ``(state, log_score)`` tuples with
acceptance statistics attached.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .dag import Dag, bits, dag_layers, popcount
from .tables import ScoreTable, dag_log_posterior


class Chain(list):
    """Recorded samples plus chain diagnostics."""

    def __init__(self, items=(), acceptance_rate: float = float("nan"), n_iterations: int = 0, states=None):
        super().__init__(items)
        self.acceptance_rate = acceptance_rate
        self.n_iterations = n_iterations
        self.states = states if states is not None else []


@dataclass(frozen=True)
class OrderMoves:
    adjacent: float = 0.4
    transpose: float = 0.4
    relocate: float = 0.2


@dataclass(frozen=True)
class PartitionMoves:
    split_join: float = 0.4
    swap: float = 0.2
    relocate: float = 0.4


class _ParentSetSums:
    """Memoised log-sum-exp of local scores over restricted parent-set families.

    ``allowed`` bounds the parents; ``required`` (if nonzero) must intersect
    every member of the family.
    """

    def __init__(self, table: ScoreTable):
        self.table = table
        self._memo: dict[tuple[int, int, int], tuple[float, list[int], list[float]]] = {}

    def get(self, node: int, allowed: int, required: int = 0):
        key = (node, allowed, required)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        m = self.table.masks[node]
        sel = (m & ~allowed) == 0
        if required:
            sel &= (m & required) != 0
        vals = self.table.values[node][sel]
        if len(vals) == 0:
            hit = (-math.inf, [], [])
        else:
            lse = float(logsumexp(vals))
            cum = np.cumsum(np.exp(vals - lse))
            cum /= cum[-1]
            hit = (lse, [int(x) for x in m[sel]], cum.tolist())
        self._memo[key] = hit
        return hit

    def draw(self, node: int, allowed: int, required: int, rng: np.random.Generator) -> int:
        _, masks, cum = self.get(node, allowed, required)
        k = bisect_right(cum, rng.random())
        return masks[min(k, len(masks) - 1)]


def _defaults(n_samples, thin, burn_in):
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    if burn_in is None:
        burn_in = (n_samples * thin) // 4
    return burn_in


# -- structure MCMC ----------------------------------------------------------


def _descendants(parents: Sequence[int]) -> list[int]:
    return Dag._trusted(parents).descendants()


def structure_neighbours(parents: Sequence[int], table: ScoreTable) -> list[tuple[int, int]]:
    """Single-edge additions and deletions that stay acyclic and inside the table.

    Each neighbour is ``(node, new_parent_mask)``.
    """
    n = len(parents)
    desc = _descendants(parents)
    out = []
    for j in range(n):
        pj = parents[j]
        room = popcount(pj) < table.max_parents
        for i in range(n):
            if i == j:
                continue
            if pj >> i & 1:
                new = pj & ~(1 << i)
            elif room and not desc[j] >> i & 1:
                new = pj | (1 << i)
            else:
                continue
            if new in table.scores[j]:
                out.append((j, new))
    return out


def structure_mcmc(table: ScoreTable, n_samples: int, rng: np.random.Generator, init: Dag | None = None,
                   thin: int | None = None, burn_in: int | None = None) -> Chain:
    """Edge addition/deletion Metropolis-Hastings chain.

    The proposal is uniform over the neighbours plus the current DAG; the
    Hastings ratio corrects for neighbourhoods of different size. Records
    every ``thin`` iterations (default ``10 n``) after ``burn_in``.
    """
    n = table.n
    thin = 10 * n if thin is None else thin
    burn_in = _defaults(n_samples, thin, burn_in)
    parents = list(init.parents if init is not None else (0,) * n)
    if init is not None and not table.covers(init):
        raise ValueError("initial DAG is not covered by the score table")
    cur = sum(table.local(i, parents[i]) for i in range(n))
    nbrs = structure_neighbours(parents, table)
    out = Chain()
    accepted = 0
    total = burn_in + n_samples * thin
    for t in range(total):
        k = int(rng.integers(len(nbrs) + 1))
        if k < len(nbrs):
            node, new = nbrs[k]
            delta = table.scores[node][new] - table.scores[node][parents[node]]
            old = parents[node]
            parents[node] = new
            new_nbrs = structure_neighbours(parents, table)
            log_a = delta + math.log(len(nbrs) + 1) - math.log(len(new_nbrs) + 1)
            if log_a >= 0 or rng.random() < math.exp(log_a):
                cur += delta
                nbrs = new_nbrs
                accepted += 1
            else:
                parents[node] = old
        if t >= burn_in and (t - burn_in) % thin == thin - 1:
            out.append((Dag._trusted(parents, table.labels), cur))
    out.acceptance_rate = accepted / total
    out.n_iterations = total
    return out


# -- order MCMC --------------------------------------------------------------


def order_log_score(order: Sequence[int], table: ScoreTable, sums: _ParentSetSums | None = None) -> float:
    sums = sums or _ParentSetSums(table)
    total = 0.0
    pred = 0
    for v in order:
        total += sums.get(v, pred)[0]
        pred |= 1 << v
    return total


def sample_dag_given_order(order: Sequence[int], table: ScoreTable, rng: np.random.Generator,
                           sums: _ParentSetSums | None = None) -> Dag:
    """Per node, a parent set among the order-consistent ones with probability proportional to exp(score)."""
    sums = sums or _ParentSetSums(table)
    if sorted(order) != list(range(table.n)):
        raise ValueError("order must be a permutation of all nodes")
    parents = [0] * table.n
    pred = 0
    for v in order:
        parents[v] = sums.draw(v, pred, 0, rng)
        pred |= 1 << v
    return Dag._trusted(parents, table.labels)


def order_mcmc(table: ScoreTable, n_samples: int, rng: np.random.Generator, moves: OrderMoves | None = None,
               burn_in: int | None = None, init: Sequence[int] | None = None, check_every: int = 1000) -> Chain:
    """Metropolis-Hastings over node permutations; records every iteration after burn-in.

    All three moves are symmetric, so acceptance uses the score ratio only.
    Per-node scores are updated incrementally and the running total is
    checked against a full recomputation every ``check_every`` iterations.
    """
    n = table.n
    moves = moves or OrderMoves()
    burn_in = _defaults(n_samples, 1, burn_in)
    sums = _ParentSetSums(table)
    order = list(init) if init is not None else list(rng.permutation(n))
    order = [int(v) for v in order]

    def node_scores(o):
        out = [0.0] * n
        pred = 0
        for v in o:
            out[v] = sums.get(v, pred)[0]
            pred |= 1 << v
        return out

    ns = node_scores(order)
    cur = sum(ns)
    probs = np.array([moves.adjacent, moves.transpose, moves.relocate], dtype=float)
    probs /= probs.sum()
    out = Chain()
    accepted = 0
    total = burn_in + n_samples
    for t in range(total):
        if n > 1:
            kind = rng.choice(3, p=probs)
            new = order[:]
            if kind == 0:
                i = int(rng.integers(n - 1))
                lo, hi = i, i + 1
                new[i], new[i + 1] = new[i + 1], new[i]
            elif kind == 1:
                i, j = sorted(int(x) for x in rng.choice(n, size=2, replace=False))
                lo, hi = i, j
                new[i], new[j] = new[j], new[i]
            else:
                i, j = (int(x) for x in rng.choice(n, size=2, replace=False))
                v = new.pop(i)
                new.insert(j, v)
                lo, hi = min(i, j), max(i, j)
            pred = 0
            for v in new[:lo]:
                pred |= 1 << v
            changed = {}
            for v in new[lo : hi + 1]:
                changed[v] = sums.get(v, pred)[0]
                pred |= 1 << v
            delta = sum(changed[v] - ns[v] for v in changed)
            if delta >= 0 or rng.random() < math.exp(delta):
                order = new
                for v, s in changed.items():
                    ns[v] = s
                cur += delta
                accepted += 1
        if check_every and t % check_every == check_every - 1:
            fresh = order_log_score(order, table, sums)
            if abs(fresh - cur) > 1e-9 * max(1.0, abs(fresh)):
                raise RuntimeError(f"incremental order score drifted: {cur} vs {fresh}")
            cur = fresh
        if t >= burn_in:
            out.append((tuple(order), cur))
    out.acceptance_rate = accepted / total
    out.n_iterations = total
    out.sums = sums
    return out


def order_chain_dags(chain: Chain, table: ScoreTable, rng: np.random.Generator) -> list[tuple[Dag, float]]:
    """One DAG drawn per recorded order, paired with its log posterior."""
    sums = getattr(chain, "sums", None) or _ParentSetSums(table)
    out = []
    for order, _ in chain:
        g = sample_dag_given_order(order, table, rng, sums)
        out.append((g, dag_log_posterior(g, table)))
    return out


# -- partition MCMC ----------------------------------------------------------


def _nonempty_proper_count(size: int) -> int:
    return (1 << size) - 2


def partition_log_score(elements: Sequence[int], table: ScoreTable, sums: _ParentSetSums | None = None) -> float:
    """Sum over nodes of log-sum-exp over the parent sets the ordered partition permits."""
    sums = sums or _ParentSetSums(table)
    total = 0.0
    earlier = 0
    prev = 0
    for k, el in enumerate(elements):
        for v in bits(el):
            total += sums.get(v, prev | earlier, prev)[0] if k else sums.get(v, 0, 0)[0]
        earlier |= prev
        prev = el
    return total


def partition_allows(elements: Sequence[int], dag: Dag) -> bool:
    """True iff every parent set of ``dag`` satisfies the constraint of the ordered partition."""
    earlier = 0
    prev = 0
    for k, el in enumerate(elements):
        for v in bits(el):
            pa = dag.parents[v]
            if k == 0:
                if pa:
                    return False
            elif pa & ~(prev | earlier) or not pa & prev:
                return False
        earlier |= prev
        prev = el
    return True


def _split_join(elements: list[int], rng: np.random.Generator):
    sizes = [popcount(e) for e in elements]
    splits = [_nonempty_proper_count(s) for s in sizes]
    n_split = sum(splits)
    n_total = n_split + len(elements) - 1
    if n_total == 0:
        return None
    u = int(rng.integers(n_total))
    if u < n_split:
        k = 0
        while u >= splits[k]:
            u -= splits[k]
            k += 1
        members = bits(elements[k])
        # u indexes the nonempty proper subsets of element k
        code = u + 1
        first = 0
        for b, v in enumerate(members):
            if code >> b & 1:
                first |= 1 << v
        new = elements[:k] + [first, elements[k] & ~first] + elements[k + 1 :]
    else:
        k = u - n_split
        new = elements[:k] + [elements[k] | elements[k + 1]] + elements[k + 2 :]
    new_sizes = [popcount(e) for e in new]
    n_new = sum(_nonempty_proper_count(s) for s in new_sizes) + len(new) - 1
    return new, math.log(n_total) - math.log(n_new)


def _swap(elements: list[int], n: int, rng: np.random.Generator):
    if len(elements) < 2:
        return None
    where = {}
    for k, el in enumerate(elements):
        for v in bits(el):
            where[v] = k
    while True:
        a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
        if where[a] != where[b]:
            break
    new = elements[:]
    ka, kb = where[a], where[b]
    new[ka] = (new[ka] & ~(1 << a)) | (1 << b)
    new[kb] = (new[kb] & ~(1 << b)) | (1 << a)
    return new, 0.0


def _relocate(elements: list[int], n: int, rng: np.random.Generator):
    if n < 2:
        return None
    a = int(rng.integers(n))
    bit = 1 << a
    k = next(i for i, el in enumerate(elements) if el & bit)
    rest = elements[k] & ~bit
    if rest:
        base = elements[:k] + [rest] + elements[k + 1 :]
        identity = k  # "into element k"
    else:
        base = elements[:k] + elements[k + 1 :]
        identity = len(base) + k  # "new singleton at gap k"
    m = len(base)
    u = int(rng.integers(2 * m))
    if u >= identity:
        u += 1
    if u < m:
        new = base[:]
        new[u] |= bit
    else:
        g = u - m
        new = base[:g] + [bit] + base[g:]
    return new, 0.0


def partition_mcmc(table: ScoreTable, n_samples: int, rng: np.random.Generator, moves: PartitionMoves | None = None,
                   burn_in: int | None = None, init: Dag | Sequence[int] | None = None,
                   keep_states: bool = False) -> Chain:
    """Metropolis-Hastings over ordered node partitions, one DAG drawn per recorded state.

    Nodes in the first element are roots; a node in element ``k > 0`` takes
    at least one parent from element ``k - 1`` and any others from earlier
    elements. Each DAG belongs to exactly one ordered partition, so the
    recorded DAGs target the DAG posterior without order bias. Moves: split
    an element in two or join two adjacent ones, swap two nodes in different
    elements, or relocate one node into another element or a new singleton.
    """
    n = table.n
    moves = moves or PartitionMoves()
    burn_in = _defaults(n_samples, 1, burn_in)
    sums = _ParentSetSums(table)
    if init is None:
        elements = [(1 << n) - 1]
    elif isinstance(init, Dag):
        elements = dag_layers(init)
    else:
        elements = [int(e) for e in init]
    cover = 0
    for e in elements:
        cover |= e
    if sum(popcount(e) for e in elements) != n or cover != (1 << n) - 1 or 0 in elements:
        raise ValueError("initial partition must cover every node exactly once")
    cur = partition_log_score(elements, table, sums)
    if not math.isfinite(cur):
        raise ValueError("initial partition has zero posterior mass under the table")
    probs = np.array([moves.split_join, moves.swap, moves.relocate], dtype=float)
    probs /= probs.sum()
    out = Chain()
    states = []
    accepted = 0
    total = burn_in + n_samples
    for t in range(total):
        kind = rng.choice(3, p=probs)
        if kind == 0:
            prop = _split_join(elements, rng)
        elif kind == 1:
            prop = _swap(elements, n, rng)
        else:
            prop = _relocate(elements, n, rng)
        if prop is not None:
            new, log_q = prop
            new_score = partition_log_score(new, table, sums)
            log_a = new_score - cur + log_q
            if log_a >= 0 or rng.random() < math.exp(log_a):
                elements, cur = new, new_score
                accepted += 1
        if t >= burn_in:
            g = _draw_partition_dag(elements, table, sums, rng)
            out.append((g, dag_log_posterior(g, table)))
            if keep_states:
                states.append(tuple(elements))
    out.acceptance_rate = accepted / total
    out.n_iterations = total
    out.states = states
    return out


def _draw_partition_dag(elements, table, sums, rng) -> Dag:
    parents = [0] * table.n
    earlier = 0
    prev = 0
    for k, el in enumerate(elements):
        for v in bits(el):
            parents[v] = sums.draw(v, prev | earlier, prev, rng) if k else 0
        earlier |= prev
        prev = el
    return Dag._trusted(parents, table.labels)


SAMPLERS = ("structure", "order", "partition")


def sample_dags(table: ScoreTable, sampler: str, n_samples: int, rng: np.random.Generator) -> Chain:
    """Uniform entry point returning ``(Dag, log_posterior)`` pairs for any sampler."""
    if sampler == "partition":
        return partition_mcmc(table, n_samples, rng)
    if sampler == "structure":
        return structure_mcmc(table, n_samples, rng)
    if sampler == "order":
        chain = order_mcmc(table, n_samples, rng)
        return Chain(order_chain_dags(chain, table, rng), chain.acceptance_rate, chain.n_iterations)
    raise ValueError(f"unknown sampler {sampler!r}; choose from {SAMPLERS}")
