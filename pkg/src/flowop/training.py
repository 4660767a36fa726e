"""Weighted empirical-risk training, Adam, metrics, and solver diagnostics."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import operator
from .nnops import Tensor
from .operator import DsnoConfig, DsnoParams, forward, forward_loss, init_params
from .schedule import NoiseSchedule, loss_weight
from .trajectories import TimeGrid, TrajectoryDataset, solve_trajectory


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    total_steps: int = 20000
    base_lr: float = 2e-4
    warmup_steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weighting: str = "snr_sqrt"  # "uniform" | "snr_sqrt"
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.total_steps, self.warmup_steps) < 1:
            raise ValueError("batch size, steps and warmup must be positive")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup exceeds total steps")
        if self.weighting not in ("uniform", "snr_sqrt"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


def grid_weights(sched: NoiseSchedule, grid: TimeGrid, weighting: str) -> np.ndarray:
    if weighting == "uniform":
        return np.ones(grid.M)
    return np.array([loss_weight(sched, t) for t in grid.times])


def weighted_loss(pred: np.ndarray, target: np.ndarray, grid: TimeGrid,
                  weighting: str, sched: NoiseSchedule | None = None) -> float:
    """(1/M) sum_m lambda(t_m) * l1(pred_m - target_m), batch-averaged."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.shape[-2] != grid.M:
        raise ValueError("prediction/target shape mismatch")
    if weighting == "uniform":
        w = np.ones(grid.M)
    else:
        if sched is None:
            raise ValueError("snr_sqrt weighting needs a schedule")
        w = grid_weights(sched, grid, weighting)
    per_time = np.sum(np.abs(pred - target), axis=-1)        # (..., M)
    nbatch = int(np.prod(pred.shape[:-2], dtype=int))
    return float(np.sum(w * per_time) / (grid.M * max(nbatch, 1)))


def lr_at(config: TrainConfig, step: int) -> float:
    """Linear warmup to the base rate, constant afterwards."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return config.base_lr * min(1.0, step / config.warmup_steps)


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params: list[Tensor]) -> "OptimizerState":
        return cls(m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params])


def adam_step(params: list[Tensor], grads: list[np.ndarray],
              state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> list[Tensor]:
    """Standard bias-corrected Adam; complex parameters update real and
    imaginary parts independently (second moments use |g|^2 per part)."""
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {i}")
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        if np.iscomplexobj(g):
            m_hat = state.m[i] / (1 - beta1 ** t)
            state.v[i] = (beta2 * state.v[i]
                          + (1 - beta2) * (g.real ** 2 + 1j * g.imag ** 2))
            v_hat = state.v[i] / (1 - beta2 ** t)
            upd = (m_hat.real / (np.sqrt(v_hat.real) + eps)
                   + 1j * m_hat.imag / (np.sqrt(v_hat.imag) + eps))
        else:
            state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
            m_hat = state.m[i] / (1 - beta1 ** t)
            v_hat = state.v[i] / (1 - beta2 ** t)
            upd = m_hat / (np.sqrt(v_hat) + eps)
        p.value = p.value - lr * upd
    return params


def _batch_indices(N: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Deterministic epoch-shuffled batch for a given global step."""
    per_epoch = max(N // batch_size, 1)
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng(1_000_003 * seed + epoch).permutation(N)
    lo = pos * batch_size
    return perm[lo:lo + batch_size]


@dataclass
class TrainResult:
    params: DsnoParams
    loss_curve: list[tuple[int, float, float]]  # (step, lr, loss)


def save_train_checkpoint(path, params: DsnoParams, state: OptimizerState,
                          tc: TrainConfig) -> None:
    extra = {"step": state.step, "train": dict(vars(tc))}
    header = {"config": json.loads(params.config.to_json()), "extra": extra}
    import struct
    tensors = [t.value for t in params.tensors()] + state.m + state.v
    payload = operator._payload_bytes(tensors)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(operator._CKPT_MAGIC)
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        f.write(payload)
        f.write(struct.pack("<Q", operator._checksum(payload)))


def load_train_checkpoint(path) -> tuple[DsnoParams, OptimizerState, dict]:
    import struct
    with open(path, "rb") as f:
        if f.read(4) != operator._CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        rest = f.read()
    payload, tail = rest[:-8], rest[-8:]
    if struct.unpack("<Q", tail)[0] != operator._checksum(payload):
        raise ValueError("checkpoint payload checksum mismatch")
    config = DsnoConfig.from_dict(header["config"])
    params = init_params(config, seed=0)
    tensors = params.tensors()
    state = OptimizerState.fresh(tensors)
    state.step = header["extra"]["step"]
    offset = 0

    def take(ref):
        nonlocal offset
        if np.iscomplexobj(ref):
            n = ref.size * 16
            arr = np.frombuffer(payload[offset:offset + n], dtype="<c16")
        else:
            n = ref.size * 8
            arr = np.frombuffer(payload[offset:offset + n], dtype="<f8")
        offset += n
        return arr.reshape(ref.shape).copy()

    for t in tensors:
        t.value = take(t.value)
    state.m = [take(m) for m in state.m]
    state.v = [take(v) for v in state.v]
    return params, state, header["extra"]


def train(dataset: TrajectoryDataset, tc: TrainConfig, mc: DsnoConfig,
          out_dir=None, checkpoint_every: int = 0,
          resume_from=None) -> TrainResult:
    """Deterministic training loop over a persisted trajectory dataset.

    Emits loss.tsv under out_dir when given; optional periodic train
    checkpoints carry optimizer state so resuming reproduces the
    uninterrupted trace exactly.
    """
    if dataset.grid.M != mc.M:
        raise ValueError(f"dataset grid M={dataset.grid.M} != model M={mc.M}")
    if dataset.d != mc.d:
        raise ValueError("dataset/model dimension mismatch")
    if resume_from is not None:
        params, state, _ = load_train_checkpoint(resume_from)
        start = state.step
    else:
        params = init_params(mc, seed=tc.seed)
        state = OptimizerState.fresh(params.tensors())
        start = 0
    grid = dataset.grid
    w = grid_weights(dataset.sched, grid, tc.weighting)
    x_all = dataset.x_T.astype(float)
    y_all = dataset.values.astype(float)
    curve: list[tuple[int, float, float]] = []
    tensors = params.tensors()
    for step in range(start, tc.total_steps):
        idx = _batch_indices(dataset.N, tc.batch_size, tc.seed, step)
        loss = forward_loss(params, x_all[idx], grid, y_all[idx], w)
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"non-finite loss at step {step}")
        loss.backward()
        grads = [np.zeros_like(t.value) if t.grad is None else t.grad for t in tensors]
        lr = lr_at(tc, step + 1)
        adam_step(tensors, grads, state, lr, tc.beta1, tc.beta2, tc.eps)
        curve.append((step, lr, float(loss.value)))
        if checkpoint_every and out_dir and (step + 1) % checkpoint_every == 0:
            save_train_checkpoint(os.path.join(out_dir, f"ckpt_{step + 1:07d}.bin"),
                                  params, state, tc)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "loss.tsv"), "w") as f:
            f.write("step\tlr\tloss\n")
            for s, lr, lo in curve:
                f.write(f"{s}\t{lr:.8g}\t{lo:.10g}\n")
    return TrainResult(params=params, loss_curve=curve)


def eval_trajectory_rmse(params: DsnoParams, dataset: TrajectoryDataset,
                         batch: int = 2048) -> tuple[np.ndarray, float]:
    """Per-grid-time and pooled RMSE of one-call predictions on held-out data."""
    if dataset.grid.M != params.config.M:
        raise ValueError("grid length mismatch")
    sq_sum = np.zeros(dataset.grid.M)
    count = 0
    for lo in range(0, dataset.N, batch):
        x = dataset.x_T[lo:lo + batch].astype(float)
        y = dataset.values[lo:lo + batch].astype(float)
        pred = forward(params, x, dataset.grid)
        sq_sum += np.sum((pred - y) ** 2, axis=(0, 2))
        count += x.shape[0]
    per_time = np.sqrt(sq_sum / (count * dataset.d))
    pooled = float(np.sqrt(sq_sum.sum() / (count * dataset.d * dataset.grid.M)))
    return per_time, pooled


def sliced_wasserstein(A: np.ndarray, B: np.ndarray, n_proj: int = 128,
                       seed: int = 0) -> float:
    """Average 1-D Wasserstein-1 over seeded random unit projections."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("empty sample set")
    if A.shape[1] != B.shape[1]:
        raise ValueError("dimension mismatch")
    rng = np.random.default_rng(seed)
    d = A.shape[1]
    total = 0.0
    for _ in range(n_proj):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        a = np.sort(A @ v)
        b = np.sort(B @ v)
        if a.size != b.size:
            q = np.linspace(0, 1, 512)
            a = np.quantile(a, q)
            b = np.quantile(b, q)
        total += np.mean(np.abs(a - b))
    return total / n_proj


def convergence_order(solver: str, gm, sched: NoiseSchedule, grid: TimeGrid,
                      step_counts=(8, 16, 32, 64, 128), n_init: int = 16,
                      seed: int = 0, analytic_fn=None) -> tuple[float, str]:
    """Least-squares slope of log2(endpoint error) vs log2(substeps) on a
    problem with a known solution; returns (slope, status)."""
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((n_init, gm.d))
    if analytic_fn is None:
        raise ValueError("need an analytic reference solution")
    ref = analytic_fn(x0, grid.times[-1])
    errs = []
    for n in step_counts:
        traj = solve_trajectory(gm, sched, x0, grid, solver=solver, substeps=n)
        errs.append(np.max(np.abs(traj.values[:, -1, :] - ref)))
    errs = np.array(errs)
    if np.all(errs < 1e-13):
        return 0.0, "exact"
    logn = np.log2(np.array(step_counts, dtype=float))
    loge = np.log2(errs)
    slope = -np.polyfit(logn, loge, 1)[0]
    return float(slope), "fitted"
