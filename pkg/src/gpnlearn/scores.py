"""Local score providers (Laplace, bridge, BGe) behind one callable interface."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bge import BgeParams, BgeScorer
from .bridge import BridgeConfig, SamplerError, bridge_local_score
from .dag import bits, to_mask
from .gp import GPFactorizationError, OptConfig, PriorSpec, laplace_log_score, local_gp
from .synth import Dataset

SCORE_KINDS = ("laplace", "bridge", "bge")
KIND_CODES = {"laplace": 1, "bridge": 2, "bge": 3}


class ScoreError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoreEntry:
    node: int
    parent_set: tuple[int, ...]
    kind: str
    log_score: float
    seed_fingerprint: int = 0

    def __post_init__(self):
        if self.node in self.parent_set:
            raise ValueError("parent set must exclude the node")
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        object.__setattr__(self, "parent_set", tuple(sorted(self.parent_set)))

    @property
    def mask(self) -> int:
        return to_mask(self.parent_set)


@dataclass(frozen=True)
class GPSettings:
    kernel: str = "additive"
    priors: PriorSpec = field(default_factory=PriorSpec)
    opt: OptConfig = field(default_factory=OptConfig)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    seed: int = 0


def pair_rng(seed: int, node: int, mask: int, kind: str) -> np.random.Generator:
    """Independent stream per (seed, node, parent set, score kind)."""
    return np.random.default_rng(np.random.SeedSequence([seed, node, mask, KIND_CODES[kind]]))


def _fingerprint(*parts) -> int:
    h = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


class LocalScorer:
    """Callable ``(node, parent_mask) -> log local score`` for one dataset.

    Data are standardized on construction. ``fingerprint`` identifies the
    full computation (dataset, kind, settings and, for stochastic kinds, the
    seed) so cached scores are only reused when they would be reproduced.
    """

    def __init__(self, dataset: Dataset, kind: str, settings: GPSettings | None = None, bge_params: BgeParams | None = None):
        if kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {kind!r}")
        self.dataset = dataset.standardize()
        self.kind = kind
        self.settings = settings or GPSettings()
        self.bge_params = bge_params or BgeParams()
        self._bge = BgeScorer(self.dataset.values, self.bge_params) if kind == "bge" else None
        self._data_fp = self.dataset.fingerprint()

    @property
    def n(self) -> int:
        return self.dataset.n_nodes

    def fingerprint(self, node: int, mask: int) -> int:
        s = self.settings
        if self.kind == "bge":
            return _fingerprint(self._data_fp, "bge", self.bge_params)
        if self.kind == "laplace":
            return _fingerprint(self._data_fp, "laplace", s.kernel, s.priors, s.opt, s.seed)
        return _fingerprint(self._data_fp, "bridge", s.kernel, s.priors, s.opt, s.bridge, s.seed)

    def __call__(self, node: int, mask: int) -> float:
        return compute_local_score(self.dataset.values, node, mask, self.kind, self.settings, self._bge)

    def entry(self, node: int, mask: int, value: float | None = None) -> ScoreEntry:
        v = self(node, mask) if value is None else value
        return ScoreEntry(node, tuple(bits(mask)), self.kind, float(v), self.fingerprint(node, mask))


def compute_local_score(values: np.ndarray, node: int, mask: int, kind: str, settings: GPSettings, bge: BgeScorer | None = None) -> float:
    parents = bits(mask)
    try:
        if kind == "bge":
            return (bge or BgeScorer(values)).local_score(node, mask)
        gp = local_gp(values, node, parents, settings.priors, settings.kernel)
        rng = pair_rng(settings.seed, node, mask, kind)
        if kind == "laplace":
            return laplace_log_score(gp, settings.opt, rng).log_score
        return bridge_local_score(gp, settings.bridge, rng, settings.opt).log_ml
    except (SamplerError, GPFactorizationError, ValueError) as exc:
        raise ScoreError(f"{kind} score failed for node {node} with parents {parents}: {exc}") from exc


def _worker(args):
    values, node, mask, kind, settings, bge_params = args
    bge = BgeScorer(values, bge_params) if kind == "bge" else None
    return compute_local_score(values, node, mask, kind, settings, bge)


def compute_many(scorer: LocalScorer, pairs: Sequence[tuple[int, int]], parallelism: int = 1) -> list[float]:
    """Scores for many (node, mask) pairs, optionally across worker processes."""
    if parallelism <= 1 or len(pairs) < 2:
        return [scorer(node, mask) for node, mask in pairs]
    from concurrent.futures import ProcessPoolExecutor

    args = [(scorer.dataset.values, node, mask, scorer.kind, scorer.settings, scorer.bge_params) for node, mask in pairs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_worker, args, chunksize=max(1, len(args) // (4 * parallelism))))


def exact_local_score(node: int, parent_set: Sequence[int], dataset: Dataset, priors: PriorSpec | None = None,
                      cfg: BridgeConfig | None = None, seed: int = 0, kernel: str = "additive",
                      opt: OptConfig | None = None) -> ScoreEntry:
    """Bridge-sampling estimate of one local score; deterministic in ``seed``."""
    settings = GPSettings(kernel, priors or PriorSpec(), opt or OptConfig(), cfg or BridgeConfig(), seed)
    scorer = LocalScorer(dataset, "bridge", settings)
    return scorer.entry(node, to_mask(parent_set))


def laplace_local_score(node: int, parent_set: Sequence[int], dataset: Dataset, priors: PriorSpec | None = None,
                        seed: int = 0, kernel: str = "additive", opt: OptConfig | None = None) -> ScoreEntry:
    settings = GPSettings(kernel, priors or PriorSpec(), opt or OptConfig(), BridgeConfig(), seed)
    return LocalScorer(dataset, "laplace", settings).entry(node, to_mask(parent_set))
