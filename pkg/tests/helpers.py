"""Shared builders for synthetic samples and the mask-flow property checks."""

from dataclasses import replace
from types import SimpleNamespace

import numpy as np

from sdeicl.dataset import CAT_COND, CAT_ERR, Normalizer, assemble_icl_sample, build_demo, embed_prompt_stub
from sdeicl.model import ModelConfig, Transformer, collate
from sdeicl.systems import get_system

SYSTEM_BY_DIM = {1: "ou", 2: "double_well", 3: "stochastic_lorenz"}


def random_demos(K, N, d=1, seed=0, scale=1.0):
    """K+1 synthetic demos sharing one system and parameter set."""
    r = np.random.default_rng(seed)
    s = get_system(SYSTEM_BY_DIM[d])
    params = s.defaults()
    out = []
    for _ in range(K + 1):
        coarse = r.normal(size=(N + 1, d)) * scale
        err = r.normal(size=(N + 1, d)) * 0.3
        err[0] = 0
        pair = SimpleNamespace(system_id=s.id, params=params, coarse=coarse, err=err,
                               agg_noise=r.normal(size=(N, s.noise_dim)), k=s.stride_k, dt=s.dt_fine)
        out.append(build_demo(pair))
    return out


def random_sample(K=2, N=3, d=1, seed=0, prompt=False, d_model=16, n_prompt=3):
    ex = random_demos(K, N, d, seed)
    pr = embed_prompt_stub(f"system number {seed} with drift", d_model, n_prompt) if prompt else None
    norm = Normalizer(ex[0].times[-1] or 1.0, 0.1, np.zeros(3), np.ones(3), np.ones(3))
    return assemble_icl_sample(ex[:-1], ex[-1], pr, norm)


def toy_model(seed=0, dtype="float64", d_model=16, n_layers=2, n_heads=2, d_ff=32, max_examples=5, n_prompt=3):
    cfg = ModelConfig(n_layers=n_layers, n_heads=n_heads, d_model=d_model, d_ff=d_ff,
                      max_examples=max_examples, max_prompt_tokens=n_prompt, dtype=dtype)
    return Transformer(cfg, seed=seed)


def cond_outputs(model, sample):
    """Outputs at condition positions, plus each row's example index."""
    out = model.predict(sample)
    return out, sample.example[sample.category == CAT_COND]


def _perturb(sample, sel, rng):
    """Copy of ``sample`` with time, noise and value features of ``sel`` rows scrambled."""
    f = sample.features.copy()
    f[sel, 0:4] += rng.normal(size=(int(sel.sum()), 4))
    f[sel, 4:7] += rng.normal(size=(int(sel.sum()), 3)) * 5
    return replace(sample, features=f)


def query_err_invisible(model, sample, rng) -> float:
    """Largest output change when the query's err tokens are rewritten (should be 0)."""
    q = sample.n_examples - 1
    sel = (sample.example == q) & (sample.category == CAT_ERR)
    base, _ = cond_outputs(model, sample)
    moved, _ = cond_outputs(model, _perturb(sample, sel, rng))
    return float(np.abs(moved - base).max())


def demo_err_causal(model, sample, e, rng):
    """(max change at examples <= e, max change at examples > e) after rewriting demo e's err block."""
    sel = (sample.example == e) & (sample.category == CAT_ERR)
    base, ex = cond_outputs(model, sample)
    moved, _ = cond_outputs(model, _perturb(sample, sel, rng))
    diff = np.abs(moved - base).max(axis=-1)
    before = float(diff[ex <= e].max())
    after = float(diff[ex > e].max()) if (ex > e).any() else float("nan")
    return before, after


def query_permutation_gap(model, sample, rng) -> float:
    """Largest |out(perm(query cond)) - perm(out)| at the query's cond positions."""
    q = sample.n_examples - 1
    pos = np.flatnonzero((sample.example == q) & (sample.category == CAT_COND))
    perm = rng.permutation(pos.size)
    f = sample.features.copy()
    f[pos] = sample.features[pos[perm]]
    base, ex = cond_outputs(model, sample)
    moved, _ = cond_outputs(model, replace(sample, features=f))
    qb, qm = base[ex == q], moved[ex == q]
    return float(np.abs(qm - qb[perm]).max())


def batch_of(samples):
    return collate(samples)
