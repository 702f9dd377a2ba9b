import csv

import numpy as np
import pytest

from sdeicl.correct import (CorrectionResult, ModelCorrector, OracleCorrector, RolloutError, ZeroCorrector,
                            correct_block, rollout)
from sdeicl.dataset import Normalizer, make_eval_set
from sdeicl.systems import get_system

from helpers import toy_model
from test_systems import IDS


@pytest.fixture(scope="module")
def ou_eval():
    return make_eval_set("ou", 2, 3, 4, seed=5, n_coarse=3 * get_system("ou").horizon_steps_coarse)


@pytest.fixture(scope="module")
def ou_block():
    return make_eval_set("ou", 2, 3, 4, seed=6)


def test_oracle_block_recovers_fine(ou_block):
    ev = ou_block
    for e in range(ev.n_eq):
        res = correct_block(OracleCorrector(), ev.demos[e], ev.queries[e])
        np.testing.assert_allclose(res.corrected, ev.fine[e], rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(res.corrected[:, 0], ev.coarse[e][:, 0])


def test_zero_corrector_returns_coarse(ou_block):
    res = correct_block(ZeroCorrector(), ou_block.demos[0], ou_block.queries[0])
    np.testing.assert_array_equal(res.corrected, ou_block.coarse[0])
    np.testing.assert_array_equal(res.err_hat, 0.0)


def test_first_error_is_pinned(ou_block):
    class Const:
        def __call__(self, demos, queries):
            return np.full((len(queries), queries[0].n_columns, 3), 0.25)
    res = correct_block(Const(), ou_block.demos[0], ou_block.queries[0])
    assert (res.err_hat[:, 0] == 0).all() and (res.err_hat[:, 1:] == 0.25).all()


def test_block_rejects_mixed_sources(ou_block):
    with pytest.raises(ValueError, match="share"):
        correct_block(ZeroCorrector(), ou_block.demos[0], ou_block.queries[1])


def test_bad_corrector_shape(ou_block):
    with pytest.raises(ValueError, match="shape"):
        correct_block(lambda d, q: np.zeros((1, 2, 3)), ou_block.demos[0], ou_block.queries[0])


def test_model_corrector_needs_normalizer():
    with pytest.raises(ValueError, match="normalisation"):
        ModelCorrector(toy_model(0), None)


def test_model_corrector_runs_and_masks(ou_block):
    m = toy_model(0, max_examples=5)
    corr = ModelCorrector(m, Normalizer.identity())
    out = corr(ou_block.demos[0], ou_block.queries[0])
    assert out.shape == (3, ou_block.queries[0][0].n_columns, 3)
    assert np.isfinite(out).all() and (out[..., 1:] == 0).all()


@pytest.mark.parametrize("sid", IDS)
def test_oracle_rollout_matches_fine(sid):
    N = get_system(sid).horizon_steps_coarse
    ev = make_eval_set(sid, 1, 10, 4, seed=11, n_coarse=3 * N)
    res = rollout(OracleCorrector(), ev.times, ev.coarse[0], ev.agg_noise[0], ev.demos[0], N, ev.fine[0])
    scale = np.abs(ev.fine[0]).max()
    assert np.abs(res.corrected - ev.fine[0]).max() <= 1e-9 * max(scale, 1.0)


def test_rollout_boundary_continuity(ou_eval):
    ev = ou_eval
    N = get_system("ou").horizon_steps_coarse

    class Noisy:
        def __call__(self, demos, queries):
            r = np.random.default_rng(len(queries))
            return r.normal(size=(len(queries), queries[0].n_columns, 3))
    res = rollout(Noisy(), ev.times, ev.coarse[0], ev.agg_noise[0], ev.demos[0], N)
    assert len(res.shifts) == 3
    for b in (1, 2):
        j = b * N
        # the shift applied to block b equals the corrected minus coarse value at its first index
        np.testing.assert_array_equal(res.corrected[:, j], res.coarse[:, j])
        np.testing.assert_allclose(res.shifts[b], res.corrected[:, j] - ev.coarse[0][:, j], atol=1e-12)


def test_rollout_zero_and_single_block(ou_eval, ou_block):
    ev = ou_eval
    N = get_system("ou").horizon_steps_coarse
    res = rollout(ZeroCorrector(), ev.times, ev.coarse[0], ev.agg_noise[0], ev.demos[0], N)
    np.testing.assert_array_equal(res.corrected, ev.coarse[0])
    eb = ou_block
    one = rollout(OracleCorrector(), eb.times, eb.coarse[0], eb.agg_noise[0], eb.demos[0], N, eb.fine[0])
    blk = correct_block(OracleCorrector(), eb.demos[0], eb.queries[0])
    np.testing.assert_allclose(one.corrected, blk.corrected, rtol=0, atol=1e-12)


def test_rollout_short_last_block(ou_eval):
    ev = ou_eval
    L = ev.coarse.shape[2] - 1
    res = rollout(OracleCorrector(), ev.times, ev.coarse[0], ev.agg_noise[0], ev.demos[0], 7, ev.fine[0])
    assert len(res.shifts) == -(-L // 7)
    np.testing.assert_allclose(res.corrected, ev.fine[0], atol=1e-10)


def test_rollout_failure_names_block(ou_eval):
    ev = ou_eval
    N = get_system("ou").horizon_steps_coarse
    calls = []

    def flaky(demos, queries):
        calls.append(1)
        if len(calls) == 2:
            raise RuntimeError("boom")
        return np.zeros((len(queries), queries[0].n_columns, 3))
    with pytest.raises(RolloutError, match="block 1"):
        rollout(flaky, ev.times, ev.coarse[0], ev.agg_noise[0], ev.demos[0], N)


def test_rollout_validation(ou_eval):
    ev = ou_eval
    with pytest.raises(ValueError):
        rollout(ZeroCorrector(), ev.times, ev.coarse[0], ev.agg_noise[0], ev.demos[0], 0)
    with pytest.raises(ValueError, match="noise shape"):
        rollout(ZeroCorrector(), ev.times, ev.coarse[0], ev.agg_noise[0][:, :-1], ev.demos[0], 5)


def test_csv_export(ou_block, tmp_path):
    res = correct_block(OracleCorrector(), ou_block.demos[0], ou_block.queries[0], reference=ou_block.fine[0])
    p = tmp_path / "c.csv"
    res.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["n", "t", "coarse1", "predicted_err1", "corrected1", "fine1"]
    assert len(rows) == 1 + res.times.shape[1]
    assert float(rows[3][4]) == res.corrected[0, 2, 0]
    np.testing.assert_allclose(res.residual, 0.0, atol=1e-12)
    assert CorrectionResult(res.times, res.coarse, res.err_hat, res.corrected).residual is None
