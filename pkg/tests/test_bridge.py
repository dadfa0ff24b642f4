import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import digamma, polygamma

from gpnlearn.bridge import (
    BridgeConfig,
    bridge_iterate,
    bridge_log_ml,
    bridge_local_score,
    fit_gaussian_proposal,
    rwm_sample,
    sample_hyper_posterior,
    split_rhat,
    SamplerError,
    _mvn_logpdf,
)
from gpnlearn.gp import LocalGP, laplace_log_score
from gpnlearn.scores import ScoreError, compute_local_score, exact_local_score, GPSettings, laplace_local_score

from conftest import make_dataset


class Conjugate:
    """y_i ~ N(theta, 1), theta ~ N(0, 1): closed-form evidence and posterior."""

    def __init__(self, seed, n=10):
        rng = np.random.default_rng(seed)
        self.y = rng.normal(0.7, 1.0, size=n)
        self.n = n
        C = np.eye(n) + np.ones((n, n))
        self.log_evidence = float(-0.5 * n * math.log(2 * math.pi) - 0.5 * np.linalg.slogdet(C)[1]
                                  - 0.5 * self.y @ np.linalg.solve(C, self.y))
        self.post_mean = self.y.sum() / (n + 1)
        self.post_sd = math.sqrt(1 / (n + 1))

    def log_joint(self, x):
        t = float(np.atleast_1d(x)[0])
        return float(-0.5 * (self.n + 1) * math.log(2 * math.pi) - 0.5 * np.sum((self.y - t) ** 2) - 0.5 * t * t)

    def posterior_draws(self, rng, m):
        return rng.normal(self.post_mean, self.post_sd, size=(m, 1))


def conjugate_estimates(n_per_half, seeds):
    cfg = BridgeConfig(n1=n_per_half, n2=n_per_half, n_draws=2 * n_per_half)
    out = []
    for s in seeds:
        task = Conjugate(s)
        rng = np.random.default_rng(1000 + s)
        res = bridge_log_ml(task.log_joint, task.posterior_draws(rng, 2 * n_per_half), cfg, rng)
        out.append((res.log_ml, task.log_evidence))
    return np.array(out)


def test_conjugate_evidence_relative_error():
    est = conjugate_estimates(300, range(20))
    rel = np.abs(est[:, 0] - est[:, 1]) / np.abs(est[:, 1])
    assert rel.mean() <= 0.02


def test_doubling_draws_reduces_spread():
    small = conjugate_estimates(300, range(20))
    big = conjugate_estimates(600, range(20))
    assert np.std(big[:, 0] - big[:, 1]) < np.std(small[:, 0] - small[:, 1])


def test_constant_ratio_integrand_is_exact():
    # integrand c times the standard normal density, proposal equal to that density
    log_c = 2.5
    log_f = lambda x: log_c - 0.5 * float(x @ x) - math.log(2 * math.pi)
    rng = np.random.default_rng(0)
    draws = rng.standard_normal((600, 2))
    res = bridge_log_ml(log_f, draws, BridgeConfig(), rng, proposal=(np.zeros(2), np.eye(2)))
    assert res.log_ml == pytest.approx(log_c, abs=1e-12)


def test_permutation_invariance():
    task = Conjugate(3)
    rng = np.random.default_rng(5)
    draws = task.posterior_draws(rng, 700)
    perm = rng.permutation(len(draws))
    a = bridge_log_ml(task.log_joint, draws, BridgeConfig(), np.random.default_rng(9)).log_ml
    b = bridge_log_ml(task.log_joint, draws[perm], BridgeConfig(), np.random.default_rng(9)).log_ml
    assert abs(a - b) <= 1e-9


def test_bridge_fixed_point():
    rng = np.random.default_rng(1)
    l_post = rng.normal(0.2, 0.5, 300)
    l_prop = rng.normal(-0.1, 0.8, 300)
    log_r, it, change, ok = bridge_iterate(l_post, l_prop, 0.0, 1000, 1e-10)
    assert ok and it <= 1000
    _, it2, change2, ok2 = bridge_iterate(l_post, l_prop, log_r, 1000, 1e-10)
    assert ok2 and change2 <= 1e-10 and it2 <= 2


def test_bridge_non_convergence_is_flagged():
    rng = np.random.default_rng(2)
    _, it, change, ok = bridge_iterate(rng.normal(size=50), rng.normal(size=50) - 5, 10.0, max_iterations=2, tolerance=1e-14)
    assert not ok and it == 2


def test_bridge_two_dim_empty_parent_set_vs_quadrature():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(5)
    gp = LocalGP((y - y.mean()) / y.std())
    f = lambda u, m: math.exp(gp.log_density(np.array([m, u])))
    ref = math.log(integrate.dblquad(f, -6, 6, -5, 4, epsabs=1e-12)[0])
    res = bridge_local_score(gp, BridgeConfig(), np.random.default_rng(4))
    assert abs(res.log_ml - ref) < 0.05


def test_bridge_drops_non_finite_draws_with_warning():
    task = Conjugate(0)
    rng = np.random.default_rng(0)
    draws = task.posterior_draws(rng, 600)
    # the density is -inf on a half-line the proposal puts mass on
    cut = task.post_mean - 0.5 * task.post_sd
    log_f = lambda x: task.log_joint(x) if x[0] > cut else -math.inf
    with pytest.warns(UserWarning):
        res = bridge_log_ml(log_f, draws, BridgeConfig(), rng)
    assert res.n_dropped > 30 and math.isfinite(res.log_ml)


def test_fit_gaussian_proposal_recovers_moments():
    rng = np.random.default_rng(7)
    mean = np.array([1.0, -2.0])
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    X = rng.multivariate_normal(mean, cov, size=4000)
    m, c = fit_gaussian_proposal(X)
    se = np.sqrt(np.diag(cov) / len(X))
    assert np.all(np.abs(m - mean) < 3 * se)
    # variance of a sample covariance entry is (s_ii s_jj + s_ij^2) / n
    se_c = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / len(X))
    assert np.all(np.abs(c - cov) < 3 * se_c)


def test_fit_gaussian_proposal_degenerate_and_finite():
    m, c = fit_gaussian_proposal(np.tile([0.5, 1.5], (10, 1)))
    assert np.all(np.linalg.eigvalsh(c) > 0)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 3))
    m, c = fit_gaussian_proposal(X)
    assert np.all(np.isfinite(_mvn_logpdf(X, m, np.linalg.cholesky(c))))
    with pytest.raises(ValueError):
        fit_gaussian_proposal(np.zeros((3, 3)))


def batch_se(x, n_batches=40):
    b = np.array_split(np.asarray(x), n_batches)
    means = np.array([v.mean() for v in b])
    return means.std(ddof=1) / math.sqrt(n_batches)


def test_hyper_sampler_recovers_prior_under_constant_likelihood():
    gp = LocalGP(np.zeros(0), np.zeros((0, 1)))
    s = sample_hyper_posterior(gp, 20_000, np.random.default_rng(3), thin=2)
    mu, log_theta = s.draws[:, 0], s.draws[:, 2]
    assert abs(mu.mean()) < 3 * batch_se(mu)
    assert abs(mu.var() - 1.0) < 3 * batch_se((mu - mu.mean()) ** 2)
    # IG(2, 2): log theta = log 2 - log G with G ~ Gamma(2, 1)
    assert abs(log_theta.mean() - (math.log(2) - digamma(2))) < 3 * batch_se(log_theta)
    assert abs(log_theta.var() - polygamma(1, 2)) < 3 * batch_se((log_theta - log_theta.mean()) ** 2)
    theta = np.exp(log_theta)
    assert abs(theta.mean() - 2.0) < 3 * batch_se(theta)
    assert 0 <= s.acceptance_rate <= 1


def test_hyper_sampler_diagnostics():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((50, 1))
    y = np.sin(2 * Z[:, 0]) + 0.3 * rng.standard_normal(50)
    s = sample_hyper_posterior(LocalGP((y - y.mean()) / y.std(), Z), 1000, np.random.default_rng(1))
    assert np.all(s.rhat <= 1.1)
    assert 0.1 < s.acceptance_rate < 0.6
    assert s.draws.shape == (1000, 3)
    assert np.all(np.isfinite(s.log_density))


def test_hyper_sampler_guards():
    gp = LocalGP(np.zeros(3))
    with pytest.raises(ValueError):
        sample_hyper_posterior(gp, 50, np.random.default_rng(0))
    with pytest.raises(SamplerError):
        rwm_sample(lambda x: -math.inf if abs(x[0] - 0.0) > 1e-12 else 0.0, [0.0], 200, np.random.default_rng(0))


def test_split_rhat_detects_drift():
    rng = np.random.default_rng(0)
    assert split_rhat(rng.standard_normal(2000))[0] < 1.05
    assert split_rhat(np.linspace(0, 10, 2000))[0] > 1.5


def test_exact_local_score_deterministic():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((30, 2))
    X[:, 1] += X[:, 0]
    ds = make_dataset(X)
    cfg = BridgeConfig(n_draws=600, thin=1)
    a = exact_local_score(1, [0], ds, cfg=cfg, seed=7)
    b = exact_local_score(1, [0], ds, cfg=cfg, seed=7)
    assert a.log_score == b.log_score and a.kind == "bridge"
    c = exact_local_score(1, [0], ds, cfg=cfg, seed=8)
    assert c.log_score != a.log_score


def test_laplace_and_bridge_agree_when_concentrated():
    rng = np.random.default_rng(21)
    z = rng.standard_normal(200)
    X = np.column_stack([z, np.sin(z) + 0.5 * rng.standard_normal(200)])
    ds = make_dataset(X)
    lap = laplace_local_score(1, [0], ds)
    br = exact_local_score(1, [0], ds, seed=0)
    assert abs(lap.log_score - br.log_score) < 0.5


def test_score_errors_carry_context():
    X = np.array([[0.0, 1.0], [1.0, np.nan], [2.0, 0.5]])
    with pytest.raises(ScoreError, match="node 1"):
        compute_local_score(X, 1, 0b1, "laplace", GPSettings())
