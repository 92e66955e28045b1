"""Synthetic tasks, losses, AdamW, and a deterministic training loop.

Tasks produce TaskBatch objects; the loop is single-threaded in control,
seeded end to end, clips gradients at global norm 1.0, and emits
step/loss/accuracy/grad_norm/wall_ms metric rows.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from chela import autodiff as ad
from chela.layer import ModelConfig, init_chela_params, model_forward
from chela.rng import Rng


@dataclass
class TaskBatch:
    inputs: np.ndarray                 # int tokens [B,L] or float features [B,L,F]
    targets: np.ndarray                # ids [B,L] / [B], or float values [B]
    loss_mask: np.ndarray | None = None  # bool [B,L]; None for per-item targets


def gen_copy_task(rng: Rng, L: int, vocab: int, B: int) -> TaskBatch:
    """Emit-the-prefix task: random tokens, a delimiter, then the model must
    reproduce the prefix. Loss only on the second half.

    Token 0 is the delimiter; payload tokens are 1..vocab-1. Position t in the
    second half targets the token seen at t - L/2.
    """
    if L % 2 != 0:
        raise ValueError(f"copy task needs even L, got {L}")
    if vocab < 3:
        raise ValueError(f"copy task needs vocab >= 3, got {vocab}")
    half = L // 2
    prefix = rng.integers((B, half), 1, vocab)
    inputs = np.zeros((B, L), dtype=np.int64)
    inputs[:, :half] = prefix
    targets = np.zeros((B, L), dtype=np.int64)
    targets[:, half:] = prefix
    mask = np.zeros((B, L), dtype=bool)
    mask[:, half:] = True
    return TaskBatch(inputs=inputs, targets=targets, loss_mask=mask)


def gen_assoc_recall(rng: Rng, n_pairs: int, vocab: int, B: int) -> TaskBatch:
    """Key-value recall: n distinct keys with random values, then one query
    key; the target is its value, scored at the final position only.

    Keys come from the lower half of the vocabulary, values from the upper
    half, so a query can never collide with a value token.
    """
    if vocab < 2 * n_pairs:
        raise ValueError(f"vocab {vocab} too small for {n_pairs} pairs")
    half = vocab // 2
    L = 2 * n_pairs + 1
    inputs = np.zeros((B, L), dtype=np.int64)
    targets = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    mask[:, -1] = True
    for b in range(B):
        keys = _distinct_ints(rng, n_pairs, 0, half)
        values = rng.integers(n_pairs, half, vocab)
        inputs[b, 0:2 * n_pairs:2] = keys
        inputs[b, 1:2 * n_pairs:2] = values
        q = int(rng.integers((), 0, n_pairs)[()])
        inputs[b, -1] = keys[q]
        targets[b, -1] = values[q]
    return TaskBatch(inputs=inputs, targets=targets, loss_mask=mask)


def _distinct_ints(rng: Rng, n: int, low: int, high: int) -> np.ndarray:
    """n distinct integers in [low, high) by seeded partial shuffle."""
    pool = np.arange(low, high)
    for i in range(n):
        j = i + int(rng.integers((), 0, len(pool) - i)[()])
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n]


def gen_adding_problem(rng: Rng, L: int, B: int) -> TaskBatch:
    """Two-channel regression probe: uniform(0,1) values plus a two-hot marker
    channel; the target is the sum of the two marked values."""
    if L < 2:
        raise ValueError(f"adding problem needs L >= 2, got {L}")
    values = rng.uniform((B, L))
    markers = np.zeros((B, L))
    targets = np.empty(B)
    for b in range(B):
        ij = _distinct_ints(rng, 2, 0, L)
        markers[b, ij] = 1.0
        targets[b] = values[b, ij].sum()
    inputs = np.stack([values, markers], axis=-1)
    return TaskBatch(inputs=inputs, targets=targets)


def byte_lm_batches(path: str, L: int, B: int, rng: Rng):
    """Infinite stream of next-byte prediction windows from a file (vocab 256).

    Windows start at seeded uniform offsets; targets are the inputs shifted
    by one byte.
    """
    with open(path, "rb") as fh:
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if len(data) < B * (L + 1):
        raise ValueError(f"file {path} too small: {len(data)} bytes < {B * (L + 1)}")
    while True:
        offsets = rng.integers((B,), 0, len(data) - L)
        inputs = np.stack([data[o:o + L] for o in offsets]).astype(np.int64)
        targets = np.stack([data[o + 1:o + L + 1] for o in offsets]).astype(np.int64)
        yield TaskBatch(inputs=inputs, targets=targets,
                        loss_mask=np.ones((B, L), dtype=bool))


def cross_entropy(logits: ad.Var, targets: np.ndarray,
                  mask: np.ndarray | None = None) -> ad.Var:
    """Mean negative log-likelihood over unmasked positions, stabilized by a
    detached per-row max before the log-sum-exp."""
    targets = np.asarray(targets)
    flat = ad.reshape(logits, (-1, logits.value.shape[-1]))
    tflat = targets.reshape(-1)
    if mask is not None:
        rows = np.nonzero(np.asarray(mask).reshape(-1))[0]
        if rows.size == 0:
            raise ValueError("cross_entropy: empty loss mask")
        flat = flat[rows]
        tflat = tflat[rows]
    m = flat.value.max(axis=-1, keepdims=True)  # detached constant
    z = flat - m
    lse = ad.log(ad.vsum(ad.exp(z), axis=-1))
    picked = ad.gather_last(z, tflat)
    return ad.vmean(lse - picked)


def mse_loss(pred: ad.Var, targets: np.ndarray) -> ad.Var:
    diff = pred - np.asarray(targets, dtype=float)
    return ad.vmean(ad.mul(diff, diff))


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class AdamWHyper:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.1


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimState, hyper: AdamWHyper) -> None:
    """Bias-corrected AdamW with decoupled weight decay; updates in place."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; step aborted")
    state.step += 1
    t = state.step
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        state.m[k] = hyper.beta1 * state.m[k] + (1.0 - hyper.beta1) * g
        state.v[k] = hyper.beta2 * state.v[k] + (1.0 - hyper.beta2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        p -= hyper.lr * (m_hat / (np.sqrt(v_hat) + hyper.eps) + hyper.weight_decay * p)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float = 1.0) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


@dataclass
class TrainSpec:
    task: str                       # copy | assoc | adding | bytelm
    steps: int
    batch_size: int = 16
    task_len: int = 64              # L for copy/adding/bytelm
    vocab: int = 8                  # copy/assoc vocab
    n_pairs: int = 8                # assoc recall pairs
    data_path: str | None = None    # bytelm corpus
    eval_interval: int = 50
    warmup_steps: int = 100
    clip_norm: float = 1.0
    stop_at_accuracy: float | None = None
    checkpoint_path: str | None = None
    checkpoint_interval: int = 0
    hyper: AdamWHyper = field(default_factory=AdamWHyper)


@dataclass
class TrainResult:
    metrics: list[dict]             # step, loss, accuracy, grad_norm, wall_ms
    params: dict[str, np.ndarray]
    opt_state: OptimState
    final_loss: float
    final_accuracy: float
    diverged_at: int | None = None


def _make_batch(spec: TrainSpec, rng: Rng, stream) -> TaskBatch:
    if spec.task == "copy":
        return gen_copy_task(rng, spec.task_len, spec.vocab, spec.batch_size)
    if spec.task == "assoc":
        return gen_assoc_recall(rng, spec.n_pairs, spec.vocab, spec.batch_size)
    if spec.task == "adding":
        return gen_adding_problem(rng, spec.task_len, spec.batch_size)
    if spec.task == "bytelm":
        return next(stream)
    raise ValueError(f"unknown task {spec.task!r}")


def batch_loss(cfg: ModelConfig, params: dict, batch: TaskBatch):
    """Forward + loss; returns (loss Var, accuracy float)."""
    out = model_forward(cfg, params, batch.inputs)
    if cfg.task_head == "regression":
        loss = mse_loss(out, batch.targets)
        return loss, float("nan")
    loss = cross_entropy(out, batch.targets, batch.loss_mask)
    pred = np.argmax(out.value, axis=-1)
    if batch.loss_mask is not None:
        m = batch.loss_mask
        acc = float(np.mean(pred[m] == batch.targets[m]))
    else:
        acc = float(np.mean(pred == batch.targets))
    return loss, acc


def train_loop(cfg: ModelConfig, spec: TrainSpec) -> TrainResult:
    """Deterministic training run: identical seed, identical trace."""
    from chela.checkpoint import save_checkpoint

    init_rng = Rng(cfg.seed)
    data_rng = init_rng.split()
    params = init_chela_params(cfg, init_rng)
    state = OptimState.zeros_like(params)
    names = sorted(params)
    stream = (byte_lm_batches(spec.data_path, spec.task_len, spec.batch_size, data_rng)
              if spec.task == "bytelm" else None)

    metrics: list[dict] = []
    final_loss, final_acc = float("nan"), float("nan")
    diverged_at = None

    # step-0 eval
    batch0 = _make_batch(spec, Rng(cfg.seed ^ 0x5EED), stream) if spec.task != "bytelm" \
        else _make_batch(spec, data_rng, stream)
    loss0, acc0 = batch_loss(cfg, params, batch0)
    final_loss, final_acc = float(loss0.value), acc0
    metrics.append({"step": 0, "loss": final_loss, "accuracy": acc0,
                    "grad_norm": 0.0, "wall_ms": 0.0})

    for step in range(1, spec.steps + 1):
        t0 = time.perf_counter()
        batch = _make_batch(spec, data_rng, stream)
        leaves = {k: ad.Var(v) for k, v in params.items()}
        loss, acc = batch_loss(cfg, leaves, batch)
        lval = float(loss.value)
        if not math.isfinite(lval):
            diverged_at = step
            break
        glist = ad.grad(loss, [leaves[n] for n in names])
        grads = {n: g for n, g in zip(names, glist)}
        gnorm = clip_grads(grads, spec.clip_norm)
        lr_scale = min(1.0, step / max(1, spec.warmup_steps))
        hyper = AdamWHyper(lr=spec.hyper.lr * lr_scale, beta1=spec.hyper.beta1,
                           beta2=spec.hyper.beta2, eps=spec.hyper.eps,
                           weight_decay=spec.hyper.weight_decay)
        try:
            adamw_step(params, grads, state, hyper)
        except FloatingPointError:
            diverged_at = step
            break
        wall_ms = (time.perf_counter() - t0) * 1e3
        final_loss, final_acc = lval, acc
        if step % spec.eval_interval == 0 or step == spec.steps:
            metrics.append({"step": step, "loss": lval, "accuracy": acc,
                            "grad_norm": gnorm, "wall_ms": wall_ms})
        if spec.checkpoint_path and spec.checkpoint_interval \
                and step % spec.checkpoint_interval == 0:
            save_checkpoint(spec.checkpoint_path, params, state, cfg,
                            rng_state=data_rng.state, step=step)
        if spec.stop_at_accuracy is not None and acc >= spec.stop_at_accuracy:
            metrics.append({"step": step, "loss": lval, "accuracy": acc,
                            "grad_norm": gnorm, "wall_ms": wall_ms})
            break

    if spec.checkpoint_path:
        save_checkpoint(spec.checkpoint_path, params, state, cfg,
                        rng_state=data_rng.state, step=state.step)
    return TrainResult(metrics=metrics, params=params, opt_state=state,
                       final_loss=final_loss, final_accuracy=final_acc,
                       diverged_at=diverged_at)


def write_metrics_csv(metrics: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,accuracy,grad_norm,wall_ms\n")
        for row in metrics:
            fh.write(f"{row['step']},{row['loss']:.6g},{row['accuracy']:.6g},"
                     f"{row['grad_norm']:.6g},{row['wall_ms']:.6g}\n")
