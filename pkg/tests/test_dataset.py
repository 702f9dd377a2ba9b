import io
import itertools
import json
import os
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdeicl import dataset as ds
from sdeicl.dataset import (CAT_COND, CAT_ERR, CAT_PROMPT, Normalizer, ShardError, apply_timestamp_dropout,
                            assemble_icl_sample, build_demo, embed_prompt_stub, generate_dataset,
                            generate_shard, read_shard, token_count, write_shard)
from sdeicl.rng import RngStream
from sdeicl.systems import REGISTRY, get_system


def _pair(d=1, N=2, sid="ou", params=None, seed=0):
    r = np.random.default_rng(seed)
    s = get_system(sid)
    coarse = r.normal(size=(N + 1, d))
    err = r.normal(size=(N + 1, d)) * 1e-2
    err[0] = 0.0
    return SimpleNamespace(system_id=sid, params=params or s.defaults(), coarse=coarse, err=err,
                           agg_noise=r.normal(size=(N, s.noise_dim)), k=s.stride_k, dt=s.dt_fine)


def test_build_demo_1d_layout():
    p = _pair()
    d = build_demo(p)
    h = 100 * 1e-3
    np.testing.assert_allclose(d.times, [0, h, 2 * h])
    np.testing.assert_array_equal(d.noise[:2, 0], p.agg_noise[:, 0])
    np.testing.assert_array_equal(d.noise[2], 0.0)
    np.testing.assert_array_equal(d.coarse[:, 0], p.coarse[:, 0])
    np.testing.assert_array_equal(d.coarse[:, 1:], 0.0)
    np.testing.assert_array_equal(d.err[0], 0.0)
    np.testing.assert_array_equal(d.dim_mask, [1, 0, 0])


def test_build_demo_2d_masks_third_dim():
    d = build_demo(_pair(d=2, sid="double_well"))
    np.testing.assert_array_equal(d.dim_mask, [1, 1, 0])
    assert np.all(d.coarse[:, 2] == 0) and np.all(d.noise[:, 2] == 0)


def test_build_demo_rejects_four_dims():
    with pytest.raises(ValueError):
        build_demo(_pair(d=4))


def test_demo_csv_columns():
    buf = io.StringIO()
    build_demo(_pair(N=3)).to_csv(buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "n,t,dW1,dW2,dW3,X1,err1" and len(rows) == 5


def _demos(K, N=3, d=1, sid="ou", seed=0):
    p = get_system(sid).defaults()
    return [build_demo(_pair(d, N, sid, p, seed + j)) for j in range(K + 1)]


def test_token_count_example():
    assert token_count(4, 50) == 510
    ex = _demos(4, N=50)
    assert assemble_icl_sample(ex[:-1], ex[-1]).n_tokens == 510


@given(st.integers(0, 5), st.integers(1, 8), st.integers(0, 4))
@settings(max_examples=40, deadline=None)
def test_token_layout_properties(K, N, P):
    ex = _demos(K, N)
    prompt = np.ones((P, 16)) if P else None
    s = assemble_icl_sample(ex[:-1], ex[-1], prompt)
    assert s.n_tokens == token_count(K, N, P)
    assert np.all(s.category[:P] == CAT_PROMPT) and np.all(s.example[:P] == -1)
    body_cat = s.category[P:].reshape(K + 1, 2, N + 1)
    assert np.all(body_cat[:, 0] == CAT_COND) and np.all(body_cat[:, 1] == CAT_ERR)
    body_ex = s.example[P:].reshape(K + 1, 2 * (N + 1))
    assert np.all(body_ex == np.arange(K + 1)[:, None])
    first = 0 if P else 1
    expect = (s.category == CAT_COND) & (s.example >= first)
    assert np.array_equal(s.loss_mask, expect)


def test_zero_shot_with_and_without_prompt():
    ex = _demos(0)
    no = assemble_icl_sample([], ex[0])
    assert not no.loss_mask.any()
    yes = assemble_icl_sample([], ex[0], embed_prompt_stub("a b c", 16))
    assert yes.loss_mask.sum() == ex[0].n_columns


def test_query_err_only_in_err_tokens():
    ex = _demos(2)
    s = assemble_icl_sample(ex[:-1], ex[-1])
    q_err = (s.example == 2) & (s.category == CAT_ERR)
    np.testing.assert_allclose(s.features[q_err, 4], ex[-1].err[:, 0])
    q_cond = (s.example == 2) & (s.category == CAT_COND)
    np.testing.assert_allclose(s.target[q_cond, 0], ex[-1].err[:, 0])


def test_mixed_params_rejected():
    a = build_demo(_pair(params={"theta": 0.2, "mu": 2.0, "sigma": 0.3}))
    b = build_demo(_pair(params={"theta": 0.3, "mu": 2.0, "sigma": 0.3}))
    with pytest.raises(ValueError):
        assemble_icl_sample([a], b)


def test_normalizer_roundtrip_and_scaling():
    r = np.random.default_rng(0)
    coarse, err = r.normal(5, 2, size=(10, 7, 2)), r.normal(0, 0.01, size=(10, 7, 2))
    n = Normalizer.fit(coarse, err, 0.1, 6)
    back = Normalizer.from_json(json.loads(json.dumps(n.to_json())))
    np.testing.assert_array_equal(back.value_std, n.value_std)
    assert n.time_scale == pytest.approx(0.6)
    np.testing.assert_allclose(n.value_mean[:2], coarse.reshape(-1, 2).mean(0))
    np.testing.assert_allclose(n.value_std[2], 1.0)
    z = n.err_to_model(err[0, 0].tolist() + [0.0])
    np.testing.assert_allclose(n.err_from_model(z)[:2], err[0, 0])


def test_dropout_count_and_determinism():
    ex = _demos(4, N=50)
    s = assemble_icl_sample(ex[:-1], ex[-1])
    assert apply_timestamp_dropout(s, 0.0, RngStream(1)) is s
    a = apply_timestamp_dropout(s, 0.05, RngStream(1))
    b = apply_timestamp_dropout(s, 0.05, RngStream(1))
    flagged = a.features[:, 10] == 1
    assert flagged.sum() == 13
    assert np.array_equal(flagged, b.features[:, 10] == 1)
    assert np.all(a.category[flagged] == CAT_COND)
    assert not np.any(flagged & (a.example == 4) & (a.col == 0))
    assert np.all(a.features[flagged, 1:7] == 0)
    assert not np.any(a.loss_mask & flagged)
    with pytest.raises(ValueError):
        apply_timestamp_dropout(s, 1.0, RngStream(1))


def test_dropout_never_hits_query_start():
    ex = _demos(0, N=2)
    s = assemble_icl_sample([], ex[0], embed_prompt_stub("x", 8))
    for seed in range(50):
        f = apply_timestamp_dropout(s, 0.5, RngStream(seed)).features
        assert f[s.n_prompt, 10] == 0


def test_prompt_stub():
    assert np.all(embed_prompt_stub("", 32) == 0)
    a, b = embed_prompt_stub("drift toward a level", 32), embed_prompt_stub("drift toward a level", 32)
    assert a.shape == (8, 32) and np.array_equal(a, b)
    texts = [t for sid in REGISTRY for t in ds.system_prompts(sid)]
    assert len(texts) >= 2 * len(REGISTRY)
    flat = [embed_prompt_stub(t, 64).ravel() for t in texts]
    for u, v in itertools.combinations(flat, 2):
        assert u @ v / (np.linalg.norm(u) * np.linalg.norm(v)) < 0.99


# -- shards --------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_data():
    return generate_dataset("stochastic_lorenz", 3, 2, 3, seed=4, n_coarse=6)


def _write(path, data, system="stochastic_lorenz", **kw):
    return write_shard(path, system, data["params"], data["coarse"], data["err"], data["agg_noise"],
                       data["index"], base_seed=4, rejected=data["rejected"], **kw)


def test_generate_counts_and_order(small_data):
    assert small_data["coarse"].shape == (18, 7, 3)
    idx = [tuple(map(int, r)) for r in small_data["index"]]
    assert idx == list(itertools.product(range(3), range(2), range(3)))


def test_parallel_generation_equals_serial(small_data):
    par = generate_dataset("stochastic_lorenz", 3, 2, 3, seed=4, n_coarse=6, workers=3)
    for k in ("params", "coarse", "err", "agg_noise", "index"):
        assert np.array_equal(par[k], small_data[k])


def test_shard_roundtrip(tmp_path, small_data):
    path = str(tmp_path / "s.fmsd")
    man = _write(path, small_data)
    sh = read_shard(path)
    assert len(sh) == 18 and man["records"] == 18
    np.testing.assert_array_equal(sh.coarse, small_data["coarse"].astype(np.float32))
    np.testing.assert_array_equal(sh.err, small_data["err"].astype(np.float32))
    offs = sh.manifest["offsets"]
    assert all(b > a for a, b in zip(offs, offs[1:]))
    rec = sh.record(5)
    np.testing.assert_array_equal(rec.coarse, sh.coarse[5])
    assert len(list(sh)) == 18
    assert set(sh.records_for_param(1).tolist()) == set(range(6, 12))


def test_shard_checksum_and_truncation(tmp_path, small_data):
    path = str(tmp_path / "s.fmsd")
    _write(path, small_data)
    raw = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(raw[:-8])
    with pytest.raises(ShardError):
        read_shard(path)
    flipped = bytearray(raw)
    flipped[-3] ^= 0xFF
    with open(path, "wb") as fh:
        fh.write(bytes(flipped))
    with pytest.raises(ShardError, match="checksum"):
        read_shard(path)


def test_shard_version_and_magic(tmp_path, small_data):
    path = str(tmp_path / "s.fmsd")
    _write(path, small_data)
    man = json.load(open(path + ".json"))
    man["format_version"] = 99
    json.dump(man, open(path + ".json", "w"))
    with pytest.raises(ShardError, match="version"):
        read_shard(path)
    _write(path, small_data)
    raw = bytearray(open(path, "rb").read())
    raw[:4] = b"XXXX"
    open(path, "wb").write(bytes(raw))
    with pytest.raises(ShardError):
        read_shard(path)


def test_empty_shard(tmp_path):
    path = str(tmp_path / "e.fmsd")
    man = write_shard(path, "ou", np.zeros((0, 3)), np.zeros((0, 51, 1)), np.zeros((0, 51, 1)),
                      np.zeros((0, 50, 1)), np.zeros((0, 3), dtype=int), stats=None)
    sh = read_shard(path)
    assert man["records"] == 0 and len(sh) == 0 and list(sh) == []


def test_generate_shard_is_byte_reproducible(tmp_path):
    a, b = str(tmp_path / "a.fmsd"), str(tmp_path / "b.fmsd")
    generate_shard(a, "duffing", 2, 2, 2, seed=3, n_coarse=5)
    generate_shard(b, "duffing", 2, 2, 2, seed=3, n_coarse=5, workers=2)
    assert open(a, "rb").read() == open(b, "rb").read()
    ma, mb = json.load(open(a + ".json")), json.load(open(b + ".json"))
    assert ma == mb


def test_blow_ups_are_resampled():
    data = generate_dataset("gbm", 2, 2, 4, seed=0, n_coarse=50, bound=200.0,
                            fixed_params={"mu": 0.15, "sigma": 0.5})
    assert data["rejected"] > 0
    assert np.all(np.abs(data["coarse"]) <= 200.0)


def test_eval_set_structure():
    ev = ds.make_eval_set("ou", 2, 3, K=2, seed=5)
    assert ev.coarse.shape == (2, 3, 51, 1) and ev.agg_noise.shape == (2, 3, 50, 1)
    assert len(ev.demos[0]) == 2 and len(ev.queries[1]) == 3
    q = ev.queries[0][1]
    np.testing.assert_allclose(q.err[:, 0], ev.fine[0, 1, :, 0] - ev.coarse[0, 1, :, 0])
    # queries share their initial state; demos use other states
    assert np.all(ev.coarse[0, :, 0] == ev.coarse[0, 0, 0])
    assert ev.demos[0][0].coarse[0, 0] != ev.coarse[0, 0, 0, 0]


@pytest.mark.parametrize("sid", ["ou", "gbm"])
def test_parallel_generation_for_systems_with_derivatives(sid):
    a = generate_dataset(sid, 2, 1, 2, seed=1, n_coarse=4, workers=2)
    b = generate_dataset(sid, 2, 1, 2, seed=1, n_coarse=4)
    for k in ("coarse", "err", "agg_noise"):
        assert np.array_equal(a[k], b[k])
