"""Hyperparameter posterior sampling and bridge-sampling evidence estimates."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .gp import LocalGP, OptConfig, laplace_log_score

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class BridgeConfig:
    n1: int = 300
    n2: int = 300
    max_iterations: int = 1000
    tolerance: float = 1e-10
    n_draws: int = 1000
    thin: int = 3

    def __post_init__(self):
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("n1 and n2 must both be >= 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.n_draws < 2 * self.n2:
            raise ValueError("n_draws must be at least 2 * n2 so both halves are populated")


@dataclass
class HyperPosteriorSample:
    """Post burn-in draws in unconstrained coordinates."""

    draws: np.ndarray
    log_density: np.ndarray
    acceptance_rate: float
    rhat: np.ndarray

    def __len__(self):
        return len(self.draws)


@dataclass
class BridgeResult:
    log_ml: float
    iterations_used: int
    relative_change_at_stop: float
    converged: bool = True
    n_dropped: int = 0


def split_rhat(x: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction per coordinate of a single chain."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    half = len(x) // 2
    chains = np.stack([x[:half], x[half : 2 * half]])
    n = half
    means = chains.mean(axis=1)
    W = chains.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_hat = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(var_hat / W)
    return np.where(W > 0, out, 1.0)


def rwm_sample(
    log_density: Callable[[np.ndarray], float],
    x0,
    n_draws: int,
    rng: np.random.Generator,
    thin: int = 1,
    scale=None,
    target: float = 0.3,
) -> HyperPosteriorSample:
    """Adaptive random-walk Metropolis with a diagonal Gaussian proposal.

    Runs ``2 * n_draws * thin`` iterations; the first half adapts the
    per-coordinate scales (running variance) and a global step multiplier
    (Robbins-Monro towards ``target`` acceptance) and is discarded.
    """
    x = np.array(x0, dtype=float)
    d = len(x)
    lp = log_density(x)
    if not math.isfinite(lp):
        raise SamplerError("log density is not finite at the initial point")
    sd = np.full(d, 0.1) if scale is None else np.maximum(np.asarray(scale, dtype=float), 1e-6)
    log_lam = math.log(2.38 / math.sqrt(d))
    n_burn = n_draws * thin
    mean = x.copy()
    m2 = np.zeros(d)
    draws = np.empty((n_draws, d))
    lps = np.empty(n_draws)
    accepted = 0
    k = 0
    for t in range(2 * n_burn):
        prop = x + math.exp(log_lam) * sd * rng.standard_normal(d)
        lq = log_density(prop)
        log_a = lq - lp if math.isfinite(lq) else -math.inf
        acc = log_a >= 0 or rng.random() < math.exp(log_a)
        if acc:
            x, lp = prop, lq
        if t < n_burn:
            a_prob = 1.0 if log_a >= 0 else math.exp(log_a)
            log_lam += (a_prob - target) / (t + 1) ** 0.6
            delta = x - mean
            mean += delta / (t + 2)
            m2 += delta * (x - mean)
            if t >= 100 and t % 20 == 0:
                sd = np.sqrt(m2 / (t + 1) + 1e-10)
        else:
            accepted += acc
            if (t - n_burn) % thin == thin - 1:
                draws[k] = x
                lps[k] = lp
                k += 1
    rate = accepted / n_burn
    if rate < 0.05:
        raise SamplerError(f"acceptance rate {rate:.3f} after adaptation; chain diverged")
    return HyperPosteriorSample(draws, lps, rate, split_rhat(draws))


def sample_hyper_posterior(
    gp: LocalGP,
    n_draws: int,
    rng: np.random.Generator,
    thin: int = 3,
    opt_cfg: OptConfig | None = None,
) -> HyperPosteriorSample:
    """Draws from p(Theta | x, Pa) in unconstrained coordinates.

    The chain starts at the MAP with per-coordinate scales from the Laplace
    curvature.
    """
    if n_draws < 100:
        raise ValueError("n_draws must be >= 100")
    lap = laplace_log_score(gp, opt_cfg, rng)
    try:
        scale = np.sqrt(np.diag(np.linalg.inv(lap.hessian)))
    except np.linalg.LinAlgError:
        scale = None
    return rwm_sample(gp.safe_log_density, lap.phi_map, n_draws, rng, thin=thin, scale=scale)


def fit_gaussian_proposal(samples) -> tuple[np.ndarray, np.ndarray]:
    """Moment-matched Gaussian with a positive-definite covariance."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < d + 2:
        raise ValueError(f"need at least {d + 2} samples to fit a {d}-dimensional proposal, got {n}")
    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    diag = np.diag(cov).copy()
    cov[np.diag_indices(d)] = np.where(diag <= 0, diag + 1e-6, diag)
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if np.any(w < 1e-10):
        cov = (V * np.maximum(w, 1e-10)) @ V.T
        cov = 0.5 * (cov + cov.T)
    return mean, cov


def _mvn_logpdf(X, mean, chol):
    d = len(mean)
    z = np.linalg.solve(chol, (X - mean).T)
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(chol))) - 0.5 * d * math.log(2 * math.pi)


def bridge_iterate(l_post, l_prop, log_r0: float, max_iterations: int = 1000, tolerance: float = 1e-10):
    """Iterative optimal-bridge update of the log evidence.

    ``l_post`` and ``l_prop`` are ``log q - log g`` at posterior and proposal
    draws. Returns ``(log_r, iterations, relative_change, converged)``.
    """
    l1 = np.asarray(l_post, dtype=float)
    l2 = np.asarray(l_prop, dtype=float)
    n_post, n_prop = len(l1), len(l2)
    log_s1 = math.log(n_post / (n_post + n_prop))
    log_s2 = math.log(n_prop / (n_post + n_prop))
    lstar = float(np.median(l1))
    a1 = l1 - lstar
    a2 = l2 - lstar
    log_r = log_r0 - lstar
    change = math.inf
    it = 0
    while it < max_iterations:
        it += 1
        num = logsumexp(a2 - np.logaddexp(log_s1 + a2, log_s2 + log_r)) - math.log(n_prop)
        den = logsumexp(-np.logaddexp(log_s1 + a1, log_s2 + log_r)) - math.log(n_post)
        new = num - den
        change = abs(math.expm1(new - log_r))
        log_r = new
        if change <= tolerance:
            return log_r + lstar, it, change, True
    return log_r + lstar, it, change, False


def bridge_log_ml(
    log_joint_fn: Callable[[np.ndarray], float],
    posterior_samples,
    cfg: BridgeConfig | None = None,
    rng: np.random.Generator | None = None,
    proposal: tuple[np.ndarray, np.ndarray] | None = None,
) -> BridgeResult:
    """Bridge-sampling estimate of ``log \\int exp(log_joint_fn)``.

    Posterior samples are sorted lexicographically and dealt alternately
    into a proposal-fitting half and an estimator half, which makes the
    result independent of the order the draws arrive in. At most ``cfg.n2``
    draws of the estimator half (evenly spaced) enter the estimate;
    ``cfg.n1`` draws come from the Gaussian proposal. A fixed ``proposal``
    (mean, cov) skips the fitting step and uses every sample in the estimator.
    """
    cfg = cfg or BridgeConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    X = np.asarray(posterior_samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise ValueError("posterior_samples is empty")
    X = X[np.lexsort(X.T[::-1])]
    if proposal is None:
        fit, est = X[0::2], X[1::2]
        mean, cov = fit_gaussian_proposal(fit)
    else:
        mean, cov = (np.atleast_1d(np.asarray(a, dtype=float)) for a in proposal)
        cov = np.atleast_2d(cov)
        est = X
    if len(est) > cfg.n2:
        est = est[np.linspace(0, len(est) - 1, cfg.n2).round().astype(int)]
    chol = np.linalg.cholesky(cov)
    prop = mean + rng.standard_normal((cfg.n1, len(mean))) @ chol.T

    q_prop = np.array([log_joint_fn(x) for x in prop], dtype=float)
    q_post = np.array([log_joint_fn(x) for x in est], dtype=float)
    keep = np.isfinite(q_prop)
    n_dropped = int(np.sum(~keep))
    if n_dropped > 0.1 * cfg.n1:
        warnings.warn(f"bridge sampling dropped {n_dropped}/{cfg.n1} proposal draws with non-finite density")
    keep_post = np.isfinite(q_post)
    if not np.all(keep_post):
        n_dropped += int(np.sum(~keep_post))
        warnings.warn("non-finite log density at posterior draws; dropping them")
    if not keep.any() or not keep_post.any():
        raise SamplerError("no finite log densities left for the bridge estimator")
    l_prop = q_prop[keep] - _mvn_logpdf(prop[keep], mean, chol)
    l_post = q_post[keep_post] - _mvn_logpdf(est[keep_post], mean, chol)

    log_r0 = float(logsumexp(l_prop) - math.log(len(l_prop)))
    log_r, it, change, ok = bridge_iterate(l_post, l_prop, log_r0, cfg.max_iterations, cfg.tolerance)
    if not ok:
        log.warning("bridge iteration stopped after %d steps (relative change %.2e)", it, change)
    return BridgeResult(float(log_r), it, float(change), ok, n_dropped)


def bridge_local_score(gp: LocalGP, cfg: BridgeConfig | None, rng: np.random.Generator, opt_cfg: OptConfig | None = None) -> BridgeResult:
    """Hyperparameter posterior draws followed by the bridge estimator."""
    cfg = cfg or BridgeConfig()
    sample = sample_hyper_posterior(gp, cfg.n_draws, rng, thin=cfg.thin, opt_cfg=opt_cfg)
    return bridge_log_ml(gp.safe_log_density, sample.draws, cfg, rng)
