import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gammaln

from gpnlearn.bge import BgeError, BgeParams, BgeScorer, bge_local_score
from gpnlearn.dag import Dag, enumerate_dags, to_cpdag


def total(scorer, g):
    return sum(scorer.local_score(i, m) for i, m in enumerate(g.parents))


def normal_gamma_evidence(x, n_total, am=1.0):
    """Univariate normal-gamma marginal likelihood with the default BGe hyperparameters."""
    aw = n_total + am + 1.0
    t = am * (aw - n_total - 1.0) / (am + 1.0)
    alpha = aw - n_total + 1.0
    N = len(x)
    a0, b0, k0 = alpha / 2, t / 2, am
    kn = k0 + N
    an = a0 + N / 2
    xbar = x.mean()
    bn = b0 + 0.5 * np.sum((x - xbar) ** 2) + k0 * N * xbar**2 / (2 * kn)
    return (gammaln(an) - gammaln(a0) + a0 * math.log(b0) - an * math.log(bn)
            + 0.5 * math.log(k0 / kn) - 0.5 * N * math.log(2 * math.pi))


def test_two_node_equivalence():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 2))
    X[:, 1] += 0.5 * X[:, 0]
    s = BgeScorer(X)
    fwd = s.local_score(0, 0) + s.local_score(1, [0])
    bwd = s.local_score(1, 0) + s.local_score(0, [1])
    assert fwd == pytest.approx(bwd, abs=1e-9)


@pytest.mark.parametrize("n_total", [1, 3, 5])
def test_empty_parent_set_matches_normal_gamma(n_total):
    rng = np.random.default_rng(n_total)
    X = rng.standard_normal((25, n_total)) * 1.3 + 0.2
    s = BgeScorer(X)
    for i in range(n_total):
        assert s.local_score(i, ()) == pytest.approx(normal_gamma_evidence(X[:, i], n_total), abs=1e-9)


def test_collider_beats_every_other_dag():
    rng = np.random.default_rng(4)
    N = 500
    a, b = rng.standard_normal(N), rng.standard_normal(N)
    c = a + b + 0.5 * rng.standard_normal(N)
    s = BgeScorer(np.column_stack([a, b, c]))
    collider = Dag.from_edges(3, [(0, 2), (1, 2)])
    chain = Dag.from_edges(3, [(0, 2), (2, 1)])
    best = max(enumerate_dags(3), key=lambda g: total(s, g))
    assert best == collider
    assert total(s, collider) > total(s, chain)


def test_score_equivalence_all_543(linear_data_n4):
    s = BgeScorer(linear_data_n4)
    classes = defaultdict(list)
    for g in enumerate_dags(4):
        classes[to_cpdag(g)].append(total(s, g))
    spreads = [max(v) - min(v) for v in classes.values()]
    assert max(spreads) <= 1e-8


def test_decomposability():
    rng = np.random.default_rng(1)
    s = BgeScorer(rng.standard_normal((30, 3)))
    g = Dag.from_edges(3, [(0, 1)])
    h = Dag.from_edges(3, [(0, 1), (2, 1)])
    diff = [s.local_score(i, g.parents[i]) - s.local_score(i, h.parents[i]) for i in range(3)]
    assert sum(1 for d in diff if d != 0) == 1


def test_params_and_errors():
    with pytest.raises(BgeError):
        BgeParams(alpha_w=3.0).resolve(3)
    with pytest.raises(BgeError):
        BgeParams(alpha_mu=-1).resolve(2)
    s = BgeScorer(np.random.default_rng(0).standard_normal((5, 2)))
    with pytest.raises(BgeError):
        s.local_score(0, [0])
    am, aw, t = BgeParams().resolve(4)
    assert (am, aw, t) == (1.0, 6.0, 0.5)


def test_functional_form():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((20, 3))
    assert bge_local_score(2, [0, 1], X) == BgeScorer(X).local_score(2, 0b011)


@given(st.integers(0, 10**6), st.floats(0.1, 5.0))
@settings(max_examples=25, deadline=None)
def test_equivalence_any_data_any_scale(seed, t_scale):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((15, 3)) @ rng.standard_normal((3, 3))
    s = BgeScorer(X, BgeParams(t_scale=t_scale))
    a = total(s, Dag.from_edges(3, [(0, 1), (1, 2)]))
    b = total(s, Dag.from_edges(3, [(2, 1), (1, 0)]))
    assert a == pytest.approx(b, abs=1e-8)
