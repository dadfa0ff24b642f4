import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpnlearn.bge import BgeScorer
from gpnlearn.dag import Dag, enumerate_dags, to_cpdag
from gpnlearn.metrics import (
    REPORT_COLUMNS,
    EvalReport,
    equivalence_gap,
    evaluate,
    expected_fp,
    expected_shd,
    expected_tp,
    false_positives,
    mean_shd,
    reverse_kl,
    shd,
    tpr_fprp,
    true_positives,
)

DAGS3 = enumerate_dags(3)


def test_shd_examples():
    e = Dag.empty(3)
    chain = Dag.from_edges(3, [(0, 1), (1, 2)])
    assert shd(e, e) == 0
    assert shd(e, chain) == 2
    assert shd(chain, Dag.from_edges(3, [(1, 0), (1, 2)])) == 1
    assert shd(chain, Dag.from_edges(3, [(1, 0), (1, 2)]), reversal_cost=2) == 2
    assert shd(chain, Dag.from_edges(3, [(0, 1), (1, 2), (0, 2)])) == 1


def test_shd_two_node_edit_search():
    # minimum number of single edits (add, delete, reverse) between every pair
    dags = enumerate_dags(2)

    def moves(g):
        out = []
        for i, j in itertools.permutations(range(2), 2):
            if g.has_edge(i, j):
                out.append(Dag.from_edges(2, [e for e in g.edges() if e != (i, j)]))
                out.append(Dag.from_edges(2, [(j, i)]))
            elif not g.has_edge(j, i):
                out.append(Dag.from_edges(2, g.edges() + [(i, j)]))
        return out

    for a in dags:
        dist = {a.key(): 0}
        frontier = [a]
        while frontier:
            nxt = []
            for g in frontier:
                for h in moves(g):
                    if h.key() not in dist:
                        dist[h.key()] = dist[g.key()] + 1
                        nxt.append(h)
            frontier = nxt
        for b in dags:
            assert shd(a, b) == dist[b.key()]


def test_shd_metric_axioms():
    for a, b in itertools.product(DAGS3, repeat=2):
        d = shd(a, b)
        assert (d == 0) == (a == b)
        assert d == shd(b, a)
    for a, b, c in itertools.islice(itertools.product(DAGS3, repeat=3), 0, None, 7):
        assert shd(a, c) <= shd(a, b) + shd(b, c)


def test_shd_cpdag_and_errors():
    chain = Dag.from_edges(3, [(0, 1), (1, 2)])
    rev = Dag.from_edges(3, [(2, 1), (1, 0)])
    collider = Dag.from_edges(3, [(0, 1), (2, 1)])
    assert shd(to_cpdag(chain), to_cpdag(rev)) == 0
    assert shd(to_cpdag(chain), to_cpdag(collider)) == 2
    with pytest.raises(TypeError):
        shd(chain, to_cpdag(chain))
    with pytest.raises(ValueError):
        shd(chain, Dag.empty(4))
    with pytest.raises(ValueError):
        shd(chain, rev, reversal_cost=3)


def test_expected_shd_examples():
    truth = Dag.from_edges(3, [(0, 1)])
    post = {truth.key(): 1.0}
    assert expected_shd(post, truth) == 0
    mix = {truth.key(): 0.5, Dag.empty(3).key(): 0.25, Dag.from_edges(3, [(0, 1), (1, 2)]).key(): 0.25}
    assert expected_shd(mix, truth) == pytest.approx(0.5)
    assert expected_tp(mix, truth) == pytest.approx(0.75)
    assert expected_fp(mix, truth) == pytest.approx(0.25)
    assert mean_shd([truth, Dag.empty(3)], truth) == 0.5
    with pytest.raises(ValueError):
        expected_shd({}, truth)


def test_expected_shd_uniform_is_mean_shd():
    post = {g.key(): 1.0 for g in DAGS3}
    for truth in DAGS3:
        assert expected_shd(post, truth) == pytest.approx(mean_shd(DAGS3, truth), abs=1e-12)


def test_reverse_kl_examples():
    a, b = DAGS3[0].key(), DAGS3[1].key()
    assert reverse_kl({a: 1.0}, {a: 0.5, b: 0.5}) == pytest.approx(math.log(2))
    assert reverse_kl({a: 0.5, b: 0.5}, {a: 0.5, b: 0.5}) == 0
    assert reverse_kl({a: 1.0, b: 0.0}, {a: 1.0}) == 0
    with pytest.raises(ValueError):
        reverse_kl({a: 0.5, b: 0.5}, {a: 1.0})


@given(st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_reverse_kl_random_oracle(seed):
    rng = np.random.default_rng(seed)
    keys = [g.key() for g in DAGS3]
    p = rng.dirichlet(np.ones(25))
    q = rng.dirichlet(np.ones(25) * 0.3)
    sel = q > 1e-300
    oracle = float(np.sum(q[sel] * (np.log(q[sel]) - np.log(p[sel]))))
    got = reverse_kl(dict(zip(keys, q)), dict(zip(keys, p)))
    assert got >= -1e-12
    assert got == pytest.approx(oracle, abs=1e-12)


def test_tp_fp_and_rates():
    truth = Dag.from_edges(3, [(0, 1), (1, 2)])
    est = Dag.from_edges(3, [(0, 1), (2, 1), (0, 2)])
    assert true_positives(est, truth) == 1
    # the reversal 2 -> 1 is neither a true nor a false positive
    assert false_positives(est, truth) == 1
    assert tpr_fprp(est, truth) == (0.5, 0.5)
    assert tpr_fprp(truth, truth) == (1.0, 0.0)
    assert tpr_fprp(Dag.empty(3), truth) == (0.0, 0.0)
    assert tpr_fprp(Dag.from_edges(3, [(0, 1), (2, 0)]), truth) == (0.5, 0.5)
    with pytest.raises(ValueError):
        tpr_fprp(truth, Dag.empty(3))


def test_evaluate_report():
    truth = Dag.from_edges(3, [(0, 1)])
    rep = evaluate({truth.key(): 3.0, Dag.empty(3).key(): 1.0}, truth, n_samples=4)
    assert rep.e_shd == pytest.approx(0.25)
    assert rep.tpr == pytest.approx(0.75) and rep.fprp == 0
    assert rep.n_unique == 2 and rep.reverse_kl is None
    row = rep.csv_row().split(",")
    assert len(row) == len(REPORT_COLUMNS) == len(rep.csv_header().split(","))
    empty_truth = evaluate({truth.key(): 1.0}, Dag.empty(3))
    assert math.isnan(empty_truth.tpr)
    with pytest.raises(ValueError):
        EvalReport(-1, 0, 0, 0, 0)


def test_bge_equivalence_gap_zero(linear_data_n4):
    s = BgeScorer(linear_data_n4)
    chain = Dag.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert abs(equivalence_gap(chain, s.local_score)) < 1e-9
