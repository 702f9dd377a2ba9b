import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdeicl.metrics import (MetricReport, RuntimeReport, amd, error_histogram, mad, mae, rmse, runtime_report,
                            write_histogram_csv, write_metric_csv)


# loop-based references, written directly from the definitions

def _norm(v):
    return math.sqrt(sum(x * x for x in v))


def bf_amd(p, r):
    N, M, J, D = p.shape
    tot = 0.0
    for i in range(N):
        for w in range(M):
            tot += max(_norm([p[i, w, j, d] - r[i, w, j, d] for d in range(D)]) for j in range(J))
    return tot / (N * M)


def bf_mad(p, r):
    N, M, J, D = p.shape
    best = 0.0
    for j in range(J):
        s = 0.0
        for i in range(N):
            s += _norm([sum(p[i, w, j, d] for w in range(M)) / M - sum(r[i, w, j, d] for w in range(M)) / M
                        for d in range(D)])
        best = max(best, s / N)
    return best


def bf_traj(p, r):
    N, M, J, D = p.shape
    return [[_norm([p[i, w, j, d] - r[i, w, j, d] for j in range(J) for d in range(D)]) for w in range(M)]
            for i in range(N)]


def bf_mae(p, r):
    t = bf_traj(p, r)
    return sum(sum(row) for row in t) / (len(t) * len(t[0]))


def bf_rmse(p, r):
    t = bf_traj(p, r)
    return math.sqrt(sum(x * x for row in t for x in row) / (len(t) * len(t[0])))


def random_batch(seed, shape=(3, 4, 5, 2)):
    r = np.random.default_rng(seed)
    return r.normal(size=shape), r.normal(size=shape)


@pytest.mark.parametrize("seed", range(50))
def test_brute_force_equivalence(seed):
    p, r = random_batch(seed)
    for fast, slow in ((amd, bf_amd), (mad, bf_mad), (mae, bf_mae), (rmse, bf_rmse)):
        assert fast(p, r) == pytest.approx(slow(p, r), rel=1e-12, abs=1e-12)


def test_hand_examples():
    p = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 3)
    r = np.ones((1, 1, 3))
    assert amd(p, r) == 2.0 and mad(p, r) == 2.0
    assert amd(r, r) == mad(r, r) == mae(r, r) == rmse(r, r) == 0.0
    eps = 0.3
    p2 = np.array([[[eps], [-eps]]])
    assert mad(p2, np.zeros_like(p2)) == 0.0
    assert amd(p2, np.zeros_like(p2)) == pytest.approx(eps)
    d = np.zeros((1, 1, 4, 2))
    d[0, 0, 1] = [3.0, 4.0]
    assert mae(d, np.zeros_like(d)) == 5.0 and rmse(d, np.zeros_like(d)) == 5.0


def test_single_trajectory_amd_equals_mad():
    r = np.random.default_rng(3)
    p, q = r.normal(size=(1, 1, 9)), r.normal(size=(1, 1, 9))
    assert amd(p, q) == mad(p, q) == np.abs(p - q).max()


def test_per_dim_max_flag():
    p = np.zeros((1, 1, 2, 2))
    p[0, 0, 1] = [3.0, 4.0]
    assert amd(p, np.zeros_like(p)) == 5.0
    assert amd(p, np.zeros_like(p), per_dim_max=True) == 4.0
    assert mad(p, np.zeros_like(p), per_dim_max=True) == 4.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rmse_at_least_mae(seed):
    p, r = random_batch(seed)
    assert rmse(p, r) >= mae(p, r) - 1e-15


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_linear_scaling(seed, c):
    p, r = random_batch(seed)
    for f in (amd, mad, mae, rmse):
        assert f(r + c * (p - r), r) == pytest.approx(c * f(p, r), rel=1e-10)


def test_shape_errors():
    with pytest.raises(ValueError, match="shape mismatch"):
        amd(np.zeros((1, 2, 3)), np.zeros((1, 2, 4)))
    with pytest.raises(ValueError):
        mae(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        rmse(np.zeros((0, 2, 3)), np.zeros((0, 2, 3)))


def test_report_and_csv(tmp_path):
    p, r = random_batch(1)
    rep = MetricReport.compute("ou", "coarse", p, r)
    assert (rep.n_eq, rep.m, rep.timestamps) == (3, 4, 5)
    assert rep.amd == amd(p, r)
    write_metric_csv(tmp_path / "m.csv", [rep])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "system,method,MAE,RMSE,AMD,MAD"
    assert float(lines[1].split(",")[4]) == rep.amd


def test_histogram(tmp_path):
    p, r = random_batch(2)
    edges, counts = error_histogram(p, r, bins=7)
    assert len(edges) == 8 and counts.sum() == p.size
    edges, counts = error_histogram(p, r, bins=4, range_=(-0.1, 0.1))
    assert edges[0] == -0.1 and edges[-1] == 0.1
    write_histogram_csv(tmp_path / "h.csv", edges, counts)
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "bin_lo,bin_hi,count" and len(rows) == 5


def test_runtime_normalisation(tmp_path):
    rep = RuntimeReport("x", 4.0, 2.0, 3.0, 1, 1)
    assert rep.normalized == (2.0, 1.0, 1.5)
    rep.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[2].endswith(",1.0")


def test_runtime_report_lorenz_fine_slower():
    rep = runtime_report("stochastic_lorenz", None, n_eq=2, m=10, K=1, seed=0, repeats=2)
    f, c, k = rep.normalized
    assert c == 1.0 and f > 10
