"""Labeled DAGs, CPDAGs, enumeration and random generation.

Parent sets are stored as integer bitmasks: bit ``j`` of ``parents[i]`` is set
iff ``j -> i``. This keeps edge tests O(1) and makes parent sets directly
usable as score-table keys.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, Sequence

import numpy as np

MAX_ENUMERATE = 5


class DagError(ValueError):
    pass


def bits(mask: int) -> list[int]:
    """Indices of the set bits of ``mask`` in increasing order."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def to_mask(indices: Iterable[int]) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << i
    return mask


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def _topological_order(parents: Sequence[int]) -> list[int] | None:
    n = len(parents)
    remaining = (1 << n) - 1
    placed = 0
    order = []
    while remaining:
        ready = [i for i in bits(remaining) if parents[i] & ~placed == 0]
        if not ready:
            return None
        for i in ready:
            order.append(i)
            placed |= 1 << i
            remaining &= ~(1 << i)
    return order


def is_acyclic(adjacency) -> bool:
    """True iff the directed graph has a topological order.

    ``adjacency`` is an ``n x n`` 0/1 array-like with ``adjacency[i][j] = 1``
    meaning ``i -> j``. Self-loops are rejected as malformed input.
    """
    adj = np.asarray(adjacency, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
        raise DagError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
    if np.any(np.diag(adj)):
        raise DagError("self-loops are not allowed")
    n = adj.shape[0]
    parents = [to_mask(np.flatnonzero(adj[:, i])) for i in range(n)]
    return _topological_order(parents) is not None


def default_labels(n: int) -> tuple[str, ...]:
    return tuple(f"X{i + 1}" for i in range(n))


@dataclass(frozen=True)
class Dag:
    """Immutable labeled DAG.

    Build from parent bitmasks, an edge list (:meth:`from_edges`) or an
    adjacency matrix (:meth:`from_adjacency`). Construction validates
    acyclicity.
    """

    parents: tuple[int, ...]
    labels: tuple[str, ...] = ()
    _check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.parents)
        if n < 1:
            raise DagError("a DAG needs at least one node")
        if not self.labels:
            object.__setattr__(self, "labels", default_labels(n))
        elif len(self.labels) != n:
            raise DagError(f"{len(self.labels)} labels for {n} nodes")
        if self._check:
            full = (1 << n) - 1
            for i, pa in enumerate(self.parents):
                if pa & ~full or pa < 0:
                    raise DagError(f"parent mask of node {i} references unknown nodes")
                if pa >> i & 1:
                    raise DagError(f"self-loop on node {i}")
            if _topological_order(self.parents) is None:
                raise DagError("graph contains a directed cycle")

    @classmethod
    def _trusted(cls, parents, labels=()) -> "Dag":
        return cls(tuple(parents), tuple(labels), _check=False)

    @classmethod
    def empty(cls, n: int, labels: Sequence[str] = ()) -> "Dag":
        return cls((0,) * n, tuple(labels))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], labels: Sequence[str] = ()) -> "Dag":
        parents = [0] * n
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise DagError(f"edge ({i}, {j}) out of range for {n} nodes")
            if i == j:
                raise DagError(f"self-loop on node {i}")
            if parents[j] >> i & 1:
                raise DagError(f"duplicate edge {i} -> {j}")
            parents[j] |= 1 << i
        return cls(tuple(parents), tuple(labels))

    @classmethod
    def from_adjacency(cls, adjacency, labels: Sequence[str] = ()) -> "Dag":
        adj = np.asarray(adjacency, dtype=bool)
        if np.any(np.diag(adj)):
            raise DagError("self-loops are not allowed")
        n = adj.shape[0]
        return cls(tuple(to_mask(np.flatnonzero(adj[:, i])) for i in range(n)), tuple(labels))

    @property
    def n(self) -> int:
        return len(self.parents)

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.parents[j] >> i & 1)

    def parent_set(self, i: int) -> list[int]:
        return bits(self.parents[i])

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for j in range(self.n) for i in bits(self.parents[j])]

    @property
    def n_edges(self) -> int:
        return sum(popcount(p) for p in self.parents)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=np.int8)
        for i, j in self.edges():
            adj[i, j] = 1
        return adj

    def topological_order(self) -> list[int]:
        return _topological_order(self.parents)

    def descendants(self) -> list[int]:
        """Bitmask of strict descendants for every node."""
        desc = [0] * self.n
        for v in reversed(self.topological_order()):
            for p in bits(self.parents[v]):
                desc[p] |= desc[v] | (1 << v)
        return desc

    def has_path(self, i: int, j: int) -> bool:
        """True iff there is a directed path of length >= 1 from i to j."""
        return bool(self.descendants()[i] >> j & 1)

    def key(self) -> bytes:
        """Canonical byte encoding: node count then the packed row-major adjacency."""
        return bytes([self.n]) + np.packbits(self.adjacency().astype(bool).ravel()).tobytes()

    @classmethod
    def from_key(cls, key: bytes, labels: Sequence[str] = ()) -> "Dag":
        n = key[0]
        flat = np.unpackbits(np.frombuffer(key[1:], dtype=np.uint8))[: n * n]
        return cls.from_adjacency(flat.reshape(n, n), labels)

    def with_labels(self, labels: Sequence[str]) -> "Dag":
        return Dag(self.parents, tuple(labels))

    def reversed(self) -> "Dag":
        return Dag.from_edges(self.n, [(j, i) for i, j in self.edges()], self.labels)

    def to_text(self) -> str:
        lines = ["nodes: " + ",".join(self.labels)]
        lines += [f"{self.labels[i]} -> {self.labels[j]}" for i, j in sorted(self.edges())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Dag":
        labels = None
        edges = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("nodes:"):
                labels = [s.strip() for s in line[len("nodes:"):].split(",") if s.strip()]
                continue
            if "->" not in line:
                raise DagError(f"cannot parse DAG line {raw!r}")
            a, b = (s.strip() for s in line.split("->", 1))
            edges.append((a, b))
        if labels is None:
            raise DagError("missing 'nodes:' header")
        index = {lab: i for i, lab in enumerate(labels)}
        try:
            idx_edges = [(index[a], index[b]) for a, b in edges]
        except KeyError as exc:
            raise DagError(f"edge references unknown node {exc.args[0]!r}") from None
        return cls.from_edges(len(labels), idx_edges, labels)

    def to_json(self) -> dict:
        children = [[] for _ in range(self.n)]
        for i, j in sorted(self.edges()):
            children[i].append(j)
        return {"nodes": list(self.labels), "adjacency": children}

    @classmethod
    def from_json(cls, obj: dict | str) -> "Dag":
        if isinstance(obj, str):
            obj = json.loads(obj)
        labels = obj["nodes"]
        edges = [(i, j) for i, ch in enumerate(obj["adjacency"]) for j in ch]
        return cls.from_edges(len(labels), edges, labels)


@dataclass(frozen=True)
class Cpdag:
    n: int
    directed: frozenset[tuple[int, int]]
    undirected: frozenset[tuple[int, int]]

    def __post_init__(self):
        und = {(min(e), max(e)) for e in self.undirected}
        object.__setattr__(self, "undirected", frozenset(und))
        for i, j in self.directed | self.undirected:
            if i == j:
                raise DagError(f"self-loop on node {i}")
        skel_d = {(min(e), max(e)) for e in self.directed}
        if skel_d & und:
            raise DagError("directed and undirected edge sets overlap")

    def skeleton(self) -> set[tuple[int, int]]:
        return {(min(e), max(e)) for e in self.directed} | set(self.undirected)


def to_cpdag(dag: Dag) -> Cpdag:
    """Completed partially directed graph of the Markov equivalence class.

    Orients v-structures, then closes under Meek rules R1-R3 (R4 is never
    triggered when starting from a DAG's pattern).
    """
    n = dag.n
    adj = [set() for _ in range(n)]
    for i, j in dag.edges():
        adj[i].add(j)
        adj[j].add(i)
    directed: set[tuple[int, int]] = set()
    for c in range(n):
        pa = dag.parent_set(c)
        for a, b in combinations(pa, 2):
            if b not in adj[a]:
                directed.add((a, c))
                directed.add((b, c))
    undirected = {(min(e), max(e)) for e in dag.edges()} - {(min(e), max(e)) for e in directed}

    def is_und(a, b):
        return (min(a, b), max(a, b)) in undirected

    def orient(a, b):
        undirected.discard((min(a, b), max(a, b)))
        directed.add((a, b))

    changed = True
    while changed:
        changed = False
        for a, b in sorted(undirected):
            for x, y in ((a, b), (b, a)):
                # R1: z -> x - y, z and y nonadjacent
                if any((z, x) in directed and y not in adj[z] for z in range(n)):
                    orient(x, y)
                    changed = True
                    break
                # R2: x -> z -> y with x - y
                if any((x, z) in directed and (z, y) in directed for z in range(n)):
                    orient(x, y)
                    changed = True
                    break
                # R3: x - z1 -> y, x - z2 -> y, z1 and z2 nonadjacent
                zs = [z for z in range(n) if is_und(x, z) and (z, y) in directed]
                if any(z2 not in adj[z1] for z1, z2 in combinations(zs, 2)):
                    orient(x, y)
                    changed = True
                    break
            if changed:
                break
    return Cpdag(n, frozenset(directed), frozenset(undirected))


def v_structures(dag: Dag) -> frozenset[tuple[int, int, int]]:
    out = set()
    for c in range(dag.n):
        for a, b in combinations(dag.parent_set(c), 2):
            if not (dag.has_edge(a, b) or dag.has_edge(b, a)):
                out.add((a, c, b))
    return frozenset(out)


def _ordered_partitions(mask: int) -> Iterator[list[int]]:
    if mask == 0:
        yield []
        return
    sub = mask
    while sub:
        for rest in _ordered_partitions(mask & ~sub):
            yield [sub] + rest
        sub = (sub - 1) & mask


def _submasks(mask: int) -> Iterator[int]:
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def partition_parent_options(node_layer: int, layers: Sequence[int]) -> Iterator[int]:
    """Parent masks allowed for a node in ``layers[node_layer]``.

    A node in the first layer has no parents; otherwise it needs at least one
    parent in the immediately preceding layer and may take any subset of the
    earlier ones.
    """
    if node_layer == 0:
        yield 0
        return
    prev = layers[node_layer - 1]
    earlier = 0
    for lay in layers[: node_layer - 1]:
        earlier |= lay
    for a in _submasks(prev):
        if a == 0:
            continue
        for b in _submasks(earlier):
            yield a | b


def enumerate_dags(n: int, labels: Sequence[str] = ()) -> list[Dag]:
    """Every labeled DAG on ``n`` nodes, each exactly once (1 <= n <= 5).

    Each DAG has a unique layering by repeatedly stripping its source nodes,
    so iterating over ordered partitions and the parent sets they permit
    visits every DAG once.
    """
    if not 1 <= n <= MAX_ENUMERATE:
        raise DagError(f"enumeration supports 1 <= n <= {MAX_ENUMERATE}, got {n}")
    out = []
    for layers in _ordered_partitions((1 << n) - 1):
        node_layer = {}
        for k, lay in enumerate(layers):
            for v in bits(lay):
                node_layer[v] = k
        options = [list(partition_parent_options(node_layer[v], layers)) for v in range(n)]
        _product_dags(options, 0, [0] * n, out, tuple(labels))
    return out


def _product_dags(options, v, current, out, labels):
    if v == len(options):
        out.append(Dag._trusted(current, labels))
        return
    for pa in options[v]:
        current[v] = pa
        _product_dags(options, v + 1, current, out, labels)


def dag_layers(dag: Dag) -> list[int]:
    """The unique ordered partition obtained by repeatedly removing source nodes."""
    remaining = (1 << dag.n) - 1
    placed = 0
    layers = []
    while remaining:
        lay = to_mask(i for i in bits(remaining) if dag.parents[i] & ~placed == 0)
        layers.append(lay)
        placed |= lay
        remaining &= ~lay
    return layers


def sample_erdos_renyi(n: int, p_edge: float, rng: np.random.Generator, labels: Sequence[str] = ()) -> Dag:
    """Random DAG: uniform node order, each forward pair joined with probability p_edge."""
    if not 0.0 <= p_edge <= 1.0:
        raise DagError(f"p_edge must lie in [0, 1], got {p_edge}")
    if n < 1:
        raise DagError("n must be >= 1")
    order = rng.permutation(n)
    draws = rng.random((n, n)) < p_edge
    parents = [0] * n
    for a in range(n):
        for b in range(a + 1, n):
            if draws[a, b]:
                parents[order[b]] |= 1 << int(order[a])
    return Dag._trusted(parents, tuple(labels))
