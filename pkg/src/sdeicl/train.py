"""AdamW with warmup-cosine decay and the in-context training loop."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import rng as _rng
from .dataset import (Shard, apply_timestamp_dropout, assemble_icl_sample, build_demo,
                      embed_prompt_stub, system_prompts)
from .model import ModelConfig, Transformer, collate, load_checkpoint, save_checkpoint

_TRAIN_STREAM = 0x7472


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    steps_per_epoch: int = 100
    batch_size: int = 8
    K: int = 4
    prompt_probability: float = 0.0
    seed: int = 0
    dropout: float = 0.05
    peak_lr: float = 1e-4
    warmup_fraction: float = 0.05
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "steps_per_epoch", "batch_size", "K"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.prompt_probability <= 1.0:
            raise ValueError("prompt_probability must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_fraction * self.total_steps))


def lr_at(step: int, peak: float, warmup: int, total: int) -> float:
    """Linear warmup to ``peak`` then cosine decay to zero at ``total``."""
    step = min(max(step, 0), total)
    if step < warmup:
        return peak * step / warmup
    if total == warmup:
        return peak
    progress = (step - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: dict) -> "OptimState":
        return cls({n: np.zeros_like(p.data) for n, p in params.items()},
                   {n: np.zeros_like(p.data) for n, p in params.items()})

    def tensors(self) -> dict:
        out = {f"opt.m.{n}": a for n, a in self.m.items()}
        out.update({f"opt.v.{n}": a for n, a in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, params: dict, extra: dict, step: int) -> "OptimState":
        dt = {n: p.data.dtype for n, p in params.items()}
        return cls({n: extra[f"opt.m.{n}"].astype(dt[n]) for n in params},
                   {n: extra[f"opt.v.{n}"].astype(dt[n]) for n in params}, step)


def adamw_step(params: dict, grads: dict, opt: OptimState, lr: float, beta1=0.9, beta2=0.999,
               eps=1e-8, weight_decay=1e-4) -> None:
    """In-place AdamW update with bias-corrected moments and decoupled decay."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
    opt.step += 1
    t = opt.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        w = p.data
        if g is None:
            g = np.zeros_like(w)
        m, v = opt.m[name], opt.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        upd = (m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * w
        w -= (lr * upd).astype(w.dtype)


def clip_grads(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        f = max_norm / norm
        for g in grads.values():
            g *= f
    return norm


# -- sampling ------------------------------------------------------------------

class SampleSource:
    """Draws batches of in-context samples from shards; each step has its own substream."""

    def __init__(self, shards: list[Shard], K: int, d_model: int, n_prompt: int):
        if not shards or all(len(s) == 0 for s in shards):
            raise ValueError("training needs at least one non-empty shard")
        self.shards = [s for s in shards if len(s)]
        self.K = K
        self.d_model = d_model
        self.n_prompt = n_prompt
        self.groups = []
        for s in self.shards:
            g = {}
            for r, p in enumerate(s.index[:, 0]):
                g.setdefault(int(p), []).append(r)
            keep = {p: np.array(v) for p, v in g.items() if len(v) >= K + 1}
            if not keep:
                raise ValueError(f"shard for {s.manifest['system_id']} has no parameter set "
                                 f"with {K + 1} trajectories")
            self.groups.append((sorted(keep), keep))
        self._demo_cache: dict = {}

    def _demo(self, si: int, r: int):
        key = (si, r)
        if key not in self._demo_cache:
            self._demo_cache[key] = build_demo(self.shards[si].record(r))
        return self._demo_cache[key]

    def batch(self, step: int, batch_size: int, prompt_probability: float, dropout: float, seed: int):
        rs = _rng.RngStream.from_fields(seed, _rng.TAG_MISC, _TRAIN_STREAM, step)
        si = rs.integers(len(self.shards))
        shard = self.shards[si]
        keys, groups = self.groups[si]
        norm = shard.normalizer
        with_prompt = rs.uniform() < prompt_probability
        texts = system_prompts(shard.manifest["system_id"]) or [shard.manifest["system_id"]]
        samples = []
        for _ in range(batch_size):
            rows = groups[keys[rs.integers(len(keys))]]
            pick = rows[rs.choice(len(rows), self.K + 1)]
            demos = [self._demo(si, int(r)) for r in pick]
            prompt = None
            if with_prompt:
                prompt = embed_prompt_stub(texts[rs.integers(len(texts))], self.d_model, self.n_prompt)
            s = assemble_icl_sample(demos[:-1], demos[-1], prompt, norm)
            samples.append(apply_timestamp_dropout(s, dropout, rs))
        return collate(samples)


# -- loop ----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Transformer
    opt: OptimState
    curve: list = field(default_factory=list)   # (step, lr, msd)
    evals: list = field(default_factory=list)   # (step, value)
    checkpoints: list = field(default_factory=list)

    def write_curve(self, path) -> None:
        write_curve(path, self.curve)


def write_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "msd"])
        for step, lr, msd in curve:
            w.writerow([step, repr(float(lr)), repr(float(msd))])


def _normalizers(shards) -> dict:
    return {s.manifest["system_id"]: s.manifest["stats"] for s in shards if len(s)}


def train_loop(model: Transformer, shards: list[Shard], cfg: TrainConfig, out_dir=None,
               opt: OptimState | None = None, start_step: int = 0, stop_step: int | None = None,
               eval_every: int = 0, eval_fn=None, log=None) -> TrainResult:
    """Run optimizer steps ``start_step .. stop_step`` (default: the whole schedule).

    Step ``s`` draws its batch from a substream keyed by ``(seed, s)``, so a run
    resumed from a checkpoint sees exactly the batches of an uninterrupted one.
    """
    mc = model.config
    if mc.max_examples < cfg.K + 1:
        raise ValueError(f"model supports {mc.max_examples} examples; K={cfg.K} needs {cfg.K + 1}")
    source = SampleSource(shards, cfg.K, mc.d_model, mc.max_prompt_tokens)
    opt = opt or OptimState.zeros(model.params)
    total = cfg.total_steps
    stop = total if stop_step is None else min(stop_step, total)
    res = TrainResult(model, opt)
    meta_base = {"train": asdict(cfg), "normalizers": _normalizers(shards)}
    for step in range(start_step, stop):
        batch = source.batch(step, cfg.batch_size, cfg.prompt_probability, cfg.dropout, cfg.seed)
        for p in model.params.values():
            p.grad = None
        with ad.Tape() as tape:
            loss = model.loss(batch)
        tape.backward(loss)
        grads = {n: p.grad for n, p in model.params.items() if p.grad is not None}
        clip_grads(grads, cfg.clip_norm)
        lr = lr_at(step + 1, cfg.peak_lr, cfg.warmup_steps, total)
        adamw_step(model.params, grads, opt, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
        res.curve.append((step + 1, lr, loss.item()))
        if log is not None:
            log(step + 1, lr, loss.item())
        if eval_fn is not None and eval_every and (step + 1) % eval_every == 0:
            res.evals.append((step + 1, eval_fn(model)))
        if out_dir is not None and (step + 1) % cfg.steps_per_epoch == 0:
            epoch = (step + 1) // cfg.steps_per_epoch
            path = os.path.join(out_dir, f"epoch{epoch:04d}.fmck")
            save_checkpoint(path, model, opt.tensors(), {**meta_base, "step": step + 1})
            res.checkpoints.append(path)
    return res


def resume(path, shards, cfg: TrainConfig | None = None, **kw) -> TrainResult:
    model, extra, meta = load_checkpoint(path)
    cfg = cfg or TrainConfig(**meta["train"])
    step = int(meta["step"])
    opt = OptimState.from_tensors(model.params, extra, step)
    return train_loop(model, shards, cfg, opt=opt, start_step=step, **kw)


def finetune(checkpoint, shards: list[Shard], iters: int, out_path=None, cfg: TrainConfig | None = None,
             eval_every: int = 100, eval_fn=None, log=None) -> TrainResult:
    """Continue training a checkpoint for exactly ``iters`` optimizer steps."""
    if isinstance(checkpoint, Transformer):
        model, meta = checkpoint, {}
    else:
        model, _, meta = load_checkpoint(checkpoint)
    base = cfg or (TrainConfig(**meta["train"]) if "train" in meta else TrainConfig())
    if iters < 0:
        raise ValueError("iters must be non-negative")
    if iters == 0:
        res = TrainResult(model, OptimState.zeros(model.params))
    else:
        cfg = replace(base, epochs=1, steps_per_epoch=iters)
        res = train_loop(model, shards, cfg, eval_every=eval_every, eval_fn=eval_fn, log=log)
    if out_path is not None:
        norms = {**meta.get("normalizers", {}), **_normalizers(shards)}
        save_checkpoint(out_path, model, meta={**meta, "normalizers": norms, "finetune_iters": iters})
    return res
