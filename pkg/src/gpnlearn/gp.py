"""Gaussian-process local score for one node given a parent set.

The hyperparameters ``{mu, sigma, theta_1..theta_p[, tau1, tau2]}`` are
handled in unconstrained coordinates ``phi = (mu, log sigma, log theta...,
log tau...)``. The density in those coordinates carries the log-Jacobian of
the transform, so integrals over ``phi`` equal integrals over the original
parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.special import gammaln

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
KERNEL_KINDS = ("additive", "interactions")


class GPFactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    kind: str
    lengthscales: tuple[float, ...]
    tau1: float | None = None
    tau2: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if any(not t > 0 for t in self.lengthscales):
            raise ValueError("lengthscales must be strictly positive")
        if self.kind == "interactions" and self.lengthscales:
            if self.tau1 is None or self.tau2 is None or not (self.tau1 > 0 and self.tau2 > 0):
                raise ValueError("interactions kernel needs positive tau1 and tau2")

    @property
    def n_parents(self) -> int:
        return len(self.lengthscales)


@dataclass(frozen=True)
class HyperParams:
    mu: float
    sigma: float
    kernel: KernelConfig

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be strictly positive")

    @property
    def dim(self) -> int:
        return n_hyper(self.kernel.n_parents, self.kernel.kind)


@dataclass(frozen=True)
class PriorSpec:
    """Independent hyperparameter priors (inverse-gamma shape/scale, normal mean/sd)."""

    lengthscale_shape: float = 2.0
    lengthscale_scale: float = 2.0
    mu_mean: float = 0.0
    mu_sd: float = 1.0
    sigma_shape: float = 1.0
    sigma_scale: float = 1.0
    tau_shape: float = 1.0
    tau_scale: float = 1.0


@dataclass(frozen=True)
class OptConfig:
    restarts: int = 5
    max_iter: int = 500
    gtol: float = 1e-5
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class MapResult:
    phi: np.ndarray
    hyper: HyperParams
    log_density: float
    grad_norm: float
    converged: bool


@dataclass
class LaplaceResult:
    theta_map: HyperParams
    phi_map: np.ndarray
    log_score: float
    hessian: np.ndarray
    log_det_hessian: float
    converged: bool
    log_density_map: float = field(default=float("nan"))

    @property
    def dim(self) -> int:
        return len(self.phi_map)


def n_hyper(n_parents: int, kind: str = "additive") -> int:
    if n_parents == 0:
        return 2
    return 2 + n_parents + (2 if kind == "interactions" else 0)


def log_inv_gamma(x, shape: float, scale: float):
    """Inverse-gamma log density ``b^a / Gamma(a) x^(-a-1) exp(-b/x)``."""
    x = np.asarray(x, dtype=float)
    return shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def log_normal(x, mean: float, sd: float):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * LOG_2PI


def _se(sqdist, theta):
    return np.exp(-0.5 * sqdist / (theta * theta))


def kernel_eval(cfg: KernelConfig, z, z2) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    if z.shape != z2.shape or z.shape[0] != cfg.n_parents or cfg.n_parents < 1:
        raise ValueError(
            f"kernel expects vectors of length {cfg.n_parents}, got {z.shape} and {z2.shape}"
        )
    comps = [math.exp(-0.5 * (a - b) ** 2 / t**2) for a, b, t in zip(z, z2, cfg.lengthscales)]
    if cfg.kind == "additive":
        return float(sum(comps))
    inter = sum(comps[i] * comps[j] for i in range(len(comps)) for j in range(i + 1, len(comps)))
    return float(cfg.tau1 * sum(comps) + cfg.tau2 * inter)


def _sqdists(parent_data: np.ndarray) -> np.ndarray:
    z = np.asarray(parent_data, dtype=float)
    return (z.T[:, :, None] - z.T[:, None, :]) ** 2


def _components(sqd: np.ndarray, lengthscales) -> np.ndarray:
    return np.stack([_se(sqd[i], t) for i, t in enumerate(lengthscales)])


def _combine(comps: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    if cfg.kind == "additive":
        return comps.sum(axis=0)
    s = comps.sum(axis=0)
    pair = 0.5 * (s * s - (comps * comps).sum(axis=0))
    return cfg.tau1 * s + cfg.tau2 * pair


def gram_matrix(cfg: KernelConfig, parent_data) -> np.ndarray:
    z = np.asarray(parent_data, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] < 1 or z.shape[1] < 1:
        raise ValueError("parent data must have at least one row and one column")
    if z.shape[1] != cfg.n_parents:
        raise ValueError(f"kernel has {cfg.n_parents} lengthscales, data has {z.shape[1]} columns")
    if not np.all(np.isfinite(z)):
        raise ValueError("parent data contains non-finite values")
    K = _combine(_components(_sqdists(z), cfg.lengthscales), cfg)
    return 0.5 * (K + K.T)


def _cholesky(A: np.ndarray):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        jitter = 1e-8 * float(np.mean(np.diag(A)))
        try:
            return linalg.cho_factor(A + jitter * np.eye(len(A)), lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise GPFactorizationError("K + sigma^2 I is not positive definite") from exc


def log_marginal_likelihood(y, K, mu: float, sigma: float) -> float:
    """Gaussian evidence ``log N(y | mu, K + sigma^2 I)`` via Cholesky."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n == 0:
        return 0.0
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    A = np.asarray(K, dtype=float) + sigma * sigma * np.eye(n)
    cf = _cholesky(A)
    r = y - mu
    alpha = linalg.cho_solve(cf, r, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return float(-0.5 * n * LOG_2PI - 0.5 * logdet - 0.5 * r @ alpha)


class LocalGP:
    """Node data, parent data and priors bundled for repeated evaluation.

    Pairwise squared distances are computed once; every density call only
    rebuilds the kernel from them.
    """

    def __init__(self, node_data, parent_data=None, priors: PriorSpec | None = None, kind: str = "additive"):
        self.y = np.asarray(node_data, dtype=float).ravel()
        self.N = self.y.shape[0]
        if parent_data is None:
            z = np.zeros((self.N, 0))
        else:
            z = np.asarray(parent_data, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
        if z.shape[0] != self.N:
            raise ValueError(f"parent data has {z.shape[0]} rows, node data {self.N}")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(z))):
            raise ValueError("data contains non-finite values")
        if kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {kind!r}")
        self.p = z.shape[1]
        self.kind = kind
        self.priors = priors or PriorSpec()
        self.sqd = _sqdists(z) if self.p else None
        self.dim = n_hyper(self.p, kind)
        self._has_tau = self.p > 0 and kind == "interactions"

    # -- parameter transforms -------------------------------------------------

    def unpack(self, phi) -> HyperParams:
        phi = np.asarray(phi, dtype=float)
        p = self.p
        ls = tuple(float(v) for v in np.exp(phi[2 : 2 + p]))
        if self._has_tau:
            cfg = KernelConfig("interactions", ls, float(np.exp(phi[2 + p])), float(np.exp(phi[3 + p])))
        else:
            cfg = KernelConfig(self.kind if p else "additive", ls)
        return HyperParams(float(phi[0]), float(np.exp(phi[1])), cfg)

    def pack(self, hp: HyperParams) -> np.ndarray:
        vals = [hp.mu, math.log(hp.sigma)] + [math.log(t) for t in hp.kernel.lengthscales]
        if self._has_tau:
            vals += [math.log(hp.kernel.tau1), math.log(hp.kernel.tau2)]
        return np.array(vals, dtype=float)

    def prior_mode(self) -> np.ndarray:
        """Mode of the prior in unconstrained coordinates (inverse-gamma in log space peaks at b/a)."""
        pr = self.priors
        vals = [pr.mu_mean, math.log(pr.sigma_scale / pr.sigma_shape)]
        vals += [math.log(pr.lengthscale_scale / pr.lengthscale_shape)] * self.p
        if self._has_tau:
            vals += [math.log(pr.tau_scale / pr.tau_shape)] * 2
        return np.array(vals)

    def sample_prior(self, rng: np.random.Generator) -> np.ndarray:
        pr = self.priors

        def ig(shape, scale, size=None):
            return scale / rng.gamma(shape, 1.0, size=size)

        vals = [rng.normal(pr.mu_mean, pr.mu_sd), math.log(ig(pr.sigma_shape, pr.sigma_scale))]
        vals += list(np.log(ig(pr.lengthscale_shape, pr.lengthscale_scale, size=self.p)))
        if self._has_tau:
            vals += list(np.log(ig(pr.tau_shape, pr.tau_scale, size=2)))
        return np.array(vals, dtype=float)

    # -- densities ------------------------------------------------------------

    def _log_prior_phi(self, phi):
        """Prior log density in phi (includes the log-Jacobian) and its gradient."""
        pr = self.priors
        mu = phi[0]
        lp = float(log_normal(mu, pr.mu_mean, pr.mu_sd))
        g = np.zeros_like(phi)
        g[0] = -(mu - pr.mu_mean) / pr.mu_sd**2
        shapes = [pr.sigma_shape] + [pr.lengthscale_shape] * self.p
        scales = [pr.sigma_scale] + [pr.lengthscale_scale] * self.p
        if self._has_tau:
            shapes += [pr.tau_shape] * 2
            scales += [pr.tau_scale] * 2
        for k, (a, b) in enumerate(zip(shapes, scales), start=1):
            u = phi[k]
            x = math.exp(u)
            lp += float(log_inv_gamma(x, a, b)) + u
            g[k] = -a + b / x
        return lp, g

    def log_prior(self, hp: HyperParams) -> float:
        """Prior log density in the original parameters (no Jacobian)."""
        pr = self.priors
        lp = float(log_normal(hp.mu, pr.mu_mean, pr.mu_sd))
        lp += float(log_inv_gamma(hp.sigma, pr.sigma_shape, pr.sigma_scale))
        for t in hp.kernel.lengthscales:
            lp += float(log_inv_gamma(t, pr.lengthscale_shape, pr.lengthscale_scale))
        if self._has_tau:
            lp += float(log_inv_gamma(hp.kernel.tau1, pr.tau_shape, pr.tau_scale))
            lp += float(log_inv_gamma(hp.kernel.tau2, pr.tau_shape, pr.tau_scale))
        return lp

    def _kernel_parts(self, phi):
        p = self.p
        ls = np.exp(phi[2 : 2 + p])
        comps = _components(self.sqd, ls)
        if self._has_tau:
            cfg = KernelConfig("interactions", tuple(ls), math.exp(phi[2 + p]), math.exp(phi[3 + p]))
        else:
            cfg = KernelConfig("additive", tuple(ls))
        return comps, cfg, _combine(comps, cfg)

    def log_likelihood(self, phi, with_grad: bool = False):
        phi = np.asarray(phi, dtype=float)
        N = self.N
        if N == 0:
            return (0.0, np.zeros(self.dim)) if with_grad else 0.0
        mu, sigma = phi[0], math.exp(phi[1])
        r = self.y - mu
        if self.p == 0:
            s2 = sigma * sigma
            ll = -0.5 * N * LOG_2PI - N * phi[1] - 0.5 * float(r @ r) / s2
            if not with_grad:
                return ll
            g = np.zeros(self.dim)
            g[0] = r.sum() / s2
            g[1] = -N + float(r @ r) / s2
            return ll, g
        comps, cfg, K = self._kernel_parts(phi)
        A = K + sigma * sigma * np.eye(N)
        cf = _cholesky(A)
        alpha = linalg.cho_solve(cf, r, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        ll = float(-0.5 * N * LOG_2PI - 0.5 * logdet - 0.5 * r @ alpha)
        if not with_grad:
            return ll
        Ainv = linalg.cho_solve(cf, np.eye(N), check_finite=False)
        W = np.outer(alpha, alpha) - Ainv
        g = np.zeros(self.dim)
        g[0] = alpha.sum()
        g[1] = sigma * sigma * np.trace(W)
        # dK_i / dlog theta_i = K_i * d_i / theta_i^2
        ls = np.asarray(cfg.lengthscales)
        dcomp = comps * self.sqd / (ls * ls)[:, None, None]
        if self._has_tau:
            s = comps.sum(axis=0)
            for i in range(self.p):
                others = s - comps[i]
                g[2 + i] = 0.5 * np.sum(W * (cfg.tau1 + cfg.tau2 * others) * dcomp[i])
            pair = 0.5 * (s * s - (comps * comps).sum(axis=0))
            g[2 + self.p] = 0.5 * cfg.tau1 * np.sum(W * s)
            g[3 + self.p] = 0.5 * cfg.tau2 * np.sum(W * pair)
        else:
            for i in range(self.p):
                g[2 + i] = 0.5 * np.sum(W * dcomp[i])
        return ll, g

    def log_joint(self, hp: HyperParams) -> float:
        """``log p(x | Pa, Theta) + log pi(Theta)`` in the original parameters."""
        return self.log_likelihood(self.pack(hp)) + self.log_prior(hp)

    def log_density(self, phi) -> float:
        """Unnormalised log posterior in unconstrained coordinates."""
        phi = np.asarray(phi, dtype=float)
        return self.log_likelihood(phi) + self._log_prior_phi(phi)[0]

    def log_density_and_grad(self, phi):
        phi = np.asarray(phi, dtype=float)
        ll, gl = self.log_likelihood(phi, with_grad=True)
        lp, gp = self._log_prior_phi(phi)
        return ll + lp, gl + gp

    def safe_log_density(self, phi) -> float:
        try:
            v = self.log_density(phi)
        except (GPFactorizationError, OverflowError, FloatingPointError):
            return -math.inf
        return v if math.isfinite(v) else -math.inf


def log_joint(node_data, parent_data, theta: HyperParams, priors: PriorSpec | None = None) -> float:
    kind = theta.kernel.kind
    gp = LocalGP(node_data, parent_data, priors, kind)
    if gp.p != theta.kernel.n_parents:
        raise ValueError(f"theta has {theta.kernel.n_parents} lengthscales but data has {gp.p} parents")
    return gp.log_joint(theta)


# -- optimisation and Laplace ------------------------------------------------


def _minimize(gp: LocalGP, x0, cfg: OptConfig):
    def fun(phi):
        try:
            v, g = gp.log_density_and_grad(phi)
        except (GPFactorizationError, OverflowError, FloatingPointError):
            return 1e300, np.zeros_like(phi)
        if not math.isfinite(v) or not np.all(np.isfinite(g)):
            return 1e300, np.zeros_like(phi)
        return -v, -g

    with np.errstate(over="ignore", under="ignore"):
        res = optimize.minimize(
            fun, x0, jac=True, method="BFGS", options={"gtol": cfg.gtol, "maxiter": cfg.max_iter}
        )
    return res


def map_estimate(gp: LocalGP, opt_cfg: OptConfig | None = None, rng: np.random.Generator | None = None) -> MapResult:
    """Best local maximiser of the unconstrained log posterior over several restarts.

    The first restart starts from the prior mode; the rest from prior draws
    clipped to a moderate box. ``converged`` is False if no restart reaches
    ``gtol`` (max-norm of the gradient), in which case the best iterate is
    still returned.
    """
    cfg = opt_cfg or OptConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    starts = [gp.prior_mode()]
    for _ in range(cfg.restarts - 1):
        x = gp.sample_prior(rng)
        x[1:] = np.clip(x[1:], -2.5, 2.5)
        starts.append(x)
    best = None
    for x0 in starts:
        res = _minimize(gp, x0, cfg)
        val = -float(res.fun)
        if best is None or val > best[0]:
            best = (val, np.asarray(res.x, dtype=float))
    val, phi = best
    _, g = gp.log_density_and_grad(phi)
    gnorm = float(np.max(np.abs(g)))
    if gnorm > cfg.gtol:
        # one Newton polish on the finite-difference Hessian usually closes the gap
        H = -fd_jacobian(lambda x: gp.log_density_and_grad(x)[1], phi, cfg.fd_step)
        H = 0.5 * (H + H.T)
        try:
            if np.all(np.linalg.eigvalsh(H) > 0):
                cand = phi + np.linalg.solve(H, g)
                cval, cg = gp.log_density_and_grad(cand)
                if cval >= val and np.max(np.abs(cg)) < gnorm:
                    phi, val, gnorm = cand, cval, float(np.max(np.abs(cg)))
        except (np.linalg.LinAlgError, GPFactorizationError):
            pass
    converged = gnorm <= cfg.gtol
    if not converged:
        log.debug("MAP search stopped with gradient max-norm %.3g", gnorm)
    return MapResult(phi, gp.unpack(phi), val, gnorm, converged)


def fd_jacobian(grad_fn: Callable, x, h: float = 1e-4) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (np.asarray(grad_fn(x + e)) - np.asarray(grad_fn(x - e))) / (2.0 * h)
    return J


def fd_hessian(fn: Callable, x, h: float = 1e-3) -> np.ndarray:
    """Central-difference Hessian from function values only."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    H = np.empty((d, d))
    f0 = fn(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        H[i, i] = (fn(x + ei) - 2.0 * f0 + fn(x - ei)) / (h * h)
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            v = (fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)) / (4.0 * h * h)
            H[i, j] = H[j, i] = v
    return H


def _floor_pd(H: np.ndarray, floor: float = 1e-8):
    w, V = np.linalg.eigh(H)
    if np.all(w > floor):
        return H, float(np.sum(np.log(w))), True
    w = np.maximum(w, floor)
    return (V * w) @ V.T, float(np.sum(np.log(w))), False


def laplace_log_integral(log_f: Callable, mode, grad_fn: Callable | None = None, h: float | None = None):
    """Laplace approximation of ``log \\int exp(log_f(x)) dx`` around ``mode``.

    The Hessian of ``-log_f`` is taken by central differences, of ``grad_fn``
    if given or else of ``log_f`` itself. Returns ``(log_integral, H,
    log_det_H, is_pd)``.
    """
    mode = np.asarray(mode, dtype=float)
    d = len(mode)
    if grad_fn is not None:
        H = -fd_jacobian(grad_fn, mode, h or 1e-4)
    else:
        H = -fd_hessian(log_f, mode, h or 1e-3)
    H = 0.5 * (H + H.T)
    H, logdet, pd = _floor_pd(H)
    value = float(log_f(mode)) + 0.5 * d * LOG_2PI - 0.5 * logdet
    return value, H, logdet, pd


def laplace_log_score(gp: LocalGP, opt_cfg: OptConfig | None = None, rng: np.random.Generator | None = None) -> LaplaceResult:
    """Laplace-approximate log local score around the unconstrained MAP."""
    cfg = opt_cfg or OptConfig()
    m = map_estimate(gp, cfg, rng)
    value, H, logdet, pd = laplace_log_integral(
        gp.log_density, m.phi, grad_fn=lambda x: gp.log_density_and_grad(x)[1], h=cfg.fd_step
    )
    return LaplaceResult(
        theta_map=m.hyper,
        phi_map=m.phi,
        log_score=value,
        hessian=H,
        log_det_hessian=logdet,
        converged=bool(pd and m.converged),
        log_density_map=m.log_density,
    )


def local_gp(data: np.ndarray, node: int, parents: Sequence[int], priors: PriorSpec | None = None, kind: str = "additive") -> LocalGP:
    data = np.asarray(data, dtype=float)
    z = data[:, list(parents)] if len(parents) else None
    return LocalGP(data[:, node], z, priors, kind)
