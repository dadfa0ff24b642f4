"""Closed-form BGe local score for linear-Gaussian networks.

Normal-Wishart prior with mean vector ``nu``, mean precision scale
``alpha_mu``, ``alpha_w`` degrees of freedom and prior scale matrix
``t_scale * I``. The local score of node ``i`` with parents ``Pa`` is
``log p(d^{Pa+i}) - log p(d^{Pa})`` where each factor is the marginal
likelihood of the corresponding column subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import multigammaln

from .dag import bits


class BgeError(ValueError):
    pass


@dataclass(frozen=True)
class BgeParams:
    alpha_mu: float = 1.0
    alpha_w: float | None = None
    t_scale: float | None = None

    def resolve(self, n: int) -> tuple[float, float, float]:
        am = self.alpha_mu
        if not am > 0:
            raise BgeError("alpha_mu must be positive")
        aw = self.alpha_w if self.alpha_w is not None else n + am + 1.0
        if not aw > n + 1:
            raise BgeError(f"alpha_w must exceed n + 1 = {n + 1}, got {aw}")
        t = self.t_scale if self.t_scale is not None else am * (aw - n - 1.0) / (am + 1.0)
        if not t > 0:
            raise BgeError("t_scale must be positive")
        return am, aw, t


class BgeScorer:
    """Posterior scatter matrix computed once per dataset; local scores are lookups into it."""

    def __init__(self, data, params: BgeParams | None = None, nu: Sequence[float] | None = None):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1:
            raise BgeError("data must be a non-empty N x n matrix")
        N, n = data.shape
        self.N, self.n = N, n
        self.params = params or BgeParams()
        am, aw, t = self.params.resolve(n)
        self.alpha_mu, self.alpha_w, self.t = am, aw, t
        nu = np.zeros(n) if nu is None else np.asarray(nu, dtype=float)
        xbar = data.mean(axis=0)
        centered = data - xbar
        S = centered.T @ centered
        diff = (nu - xbar)[:, None]
        self.R = t * np.eye(n) + S + (N * am / (N + am)) * (diff @ diff.T)
        self._cache: dict[int, float] = {}

    def _log_marginal(self, mask: int) -> float:
        """log p(d^Y) for the column subset ``Y`` (empty set -> 0)."""
        if mask == 0:
            return 0.0
        if mask in self._cache:
            return self._cache[mask]
        idx = bits(mask)
        l = len(idx)
        N, n, am, aw, t = self.N, self.n, self.alpha_mu, self.alpha_w, self.t
        RY = self.R[np.ix_(idx, idx)]
        sign, logdet_R = np.linalg.slogdet(RY)
        if sign <= 0 or not math.isfinite(logdet_R):
            raise BgeError(f"posterior scatter matrix singular for columns {idx}")
        a = (aw - n + l) / 2.0
        val = (
            0.5 * l * math.log(am / (N + am))
            - 0.5 * l * N * math.log(math.pi)
            + multigammaln((N + aw - n + l) / 2.0, l)
            - multigammaln(a, l)
            + a * l * math.log(t)
            - 0.5 * (N + aw - n + l) * logdet_R
        )
        self._cache[mask] = val
        return val

    def local_score(self, node: int, parents) -> float:
        pa = parents if isinstance(parents, int) else sum(1 << p for p in parents)
        if pa >> node & 1:
            raise BgeError(f"node {node} cannot be its own parent")
        return self._log_marginal(pa | (1 << node)) - self._log_marginal(pa)

    __call__ = local_score


def bge_local_score(node: int, parent_set, dataset, params: BgeParams | None = None) -> float:
    return BgeScorer(dataset, params).local_score(node, parent_set)
