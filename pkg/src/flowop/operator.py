"""The trajectory operator network.

Maps one initial noise vector to all M supervised trajectory points in a
single forward pass: a lifting affine, L residual blocks (time-embedding
injection, two pointwise affines, then a Fourier temporal convolution
with an identity shortcut), and a projection back to data space. The
temporal axis is handled in mode space, so the same parameters evaluate
at arbitrary query times.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nnops
from .nnops import Tensor
from .trajectories import TimeGrid


@dataclass(frozen=True)
class DsnoConfig:
    d: int = 2
    C: int = 64
    L: int = 4
    J: int = 3
    M: int = 4
    E: int = 32
    slope: float = 0.01

    def __post_init__(self):
        if min(self.d, self.C, self.L, self.J, self.M, self.E) < 1:
            raise ValueError("all config sizes must be positive")
        if self.J > self.M // 2 + 1:
            raise ValueError(f"J={self.J} exceeds M//2+1={self.M // 2 + 1}")

    def to_json(self) -> str:
        return json.dumps(
            {"d": self.d, "C": self.C, "L": self.L, "J": self.J,
             "M": self.M, "E": self.E, "slope": self.slope},
            sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: dict) -> "DsnoConfig":
        return cls(**obj)


@dataclass
class Block:
    emb_W: Tensor
    emb_b: Tensor
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    kernel: Tensor  # (J, C, C) complex


@dataclass
class DsnoParams:
    config: DsnoConfig
    lift_W: Tensor
    lift_b: Tensor
    blocks: list[Block]
    proj_W: Tensor
    proj_b: Tensor

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """All parameter tensors in declaration order."""
        out = [("lift_W", self.lift_W), ("lift_b", self.lift_b)]
        for i, blk in enumerate(self.blocks):
            for name in ("emb_W", "emb_b", "W1", "b1", "W2", "b2", "kernel"):
                out.append((f"block{i}.{name}", getattr(blk, name)))
        out += [("proj_W", self.proj_W), ("proj_b", self.proj_b)]
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: DsnoConfig, seed: int) -> DsnoParams:
    """Seeded initialization: affines uniform +-1/sqrt(fan_in), spectral
    kernels with real and imaginary parts uniform +-1/C."""
    rng = np.random.default_rng(seed)
    d, C, E, J = config.d, config.C, config.E, config.J

    def affine(out_dim, in_dim):
        bound = 1.0 / np.sqrt(in_dim)
        return (nnops.param(_uniform(rng, (out_dim, in_dim), bound)),
                nnops.param(_uniform(rng, (out_dim,), bound)))

    lift_W, lift_b = affine(C, d)
    blocks = []
    for _ in range(config.L):
        emb_W, emb_b = affine(C, E)
        W1, b1 = affine(C, C)
        W2, b2 = affine(C, C)
        R = _uniform(rng, (J, C, C), 1.0 / C) + 1j * _uniform(rng, (J, C, C), 1.0 / C)
        blocks.append(Block(emb_W, emb_b, W1, b1, W2, b2, nnops.param(R)))
    proj_W, proj_b = affine(d, C)
    return DsnoParams(config, lift_W, lift_b, blocks, proj_W, proj_b)


def param_count(config: DsnoConfig) -> int:
    """Closed-form count of real degrees of freedom (complex = 2 reals)."""
    d, C, L, J, E = config.d, config.C, config.L, config.J, config.E
    return d * C + C + L * (E * C + C + 2 * (C * C + C) + 2 * J * C * C) + C * d + d


def count_parameters(params: DsnoParams) -> int:
    """Enumerating walker over the actual tensors."""
    total = 0
    for _, t in params.named_tensors():
        n = int(np.prod(t.value.shape, dtype=int)) if t.value.shape else 1
        total += 2 * n if np.iscomplexobj(t.value) else n
    return total


def spectral_fraction(config: DsnoConfig) -> float:
    """Share of parameters living in the temporal spectral kernels."""
    spectral = config.L * 2 * config.J * config.C * config.C
    return spectral / param_count(config)


def temporal_conv(kernel: Tensor, u: Tensor, M: int, positions=None,
                  slope: float = 0.01, collector: list | None = None) -> Tensor:
    """u + leaky_relu(K u), K the truncated Fourier kernel operator.

    The shortcut is the identity and no bias enters the spectral branch.
    `positions` are fractional index coordinates for resolution-free
    evaluation; default is the integer grid.
    """
    if positions is None:
        positions = np.arange(M, dtype=float)
    J = kernel.value.shape[0]
    u_hat = nnops.dft_at_positions(u, J, positions, M)
    v_hat = nnops.mode_multiply(kernel, u_hat)
    if collector is not None:
        collector.append(v_hat.value)
    k_branch = nnops.idft_at(v_hat, M, positions)
    return nnops.add(u, nnops.leaky_relu(k_branch, slope))


def temporal_conv_k_branch(kernel: Tensor, u: Tensor, M: int) -> np.ndarray:
    """The spectral branch K u before activation (for equivalence checks)."""
    J = kernel.value.shape[0]
    positions = np.arange(M, dtype=float)
    u_hat = nnops.dft_at_positions(u, J, positions, M)
    v_hat = nnops.mode_multiply(kernel, u_hat)
    return nnops.idft_at(v_hat, M, positions).value


def _embed_matrix(times: np.ndarray, E: int) -> np.ndarray:
    return np.stack([nnops.time_embedding(t, E) for t in times])


def _forward_graph(params: DsnoParams, x_T: np.ndarray, times: np.ndarray,
                   positions: np.ndarray, collector: list | None = None) -> Tensor:
    cfg = params.config
    x_T = np.asarray(x_T, dtype=float)
    squeeze = x_T.ndim == 1
    if squeeze:
        x_T = x_T[None, :]
    Q = times.size
    rows = np.repeat(x_T[:, None, :], Q, axis=1)          # (B, Q, d)
    u = nnops.affine_pointwise(params.lift_W, params.lift_b, nnops.param(rows))
    emb = _embed_matrix(times, cfg.E)                     # (Q, E)
    emb_t = nnops.param(emb)
    for blk in params.blocks:
        e = nnops.affine_pointwise(blk.emb_W, blk.emb_b, emb_t)   # (Q, C)
        u = nnops.add(u, e)
        t1 = nnops.leaky_relu(nnops.affine_pointwise(blk.W1, blk.b1, u), cfg.slope)
        t2 = nnops.affine_pointwise(blk.W2, blk.b2, t1)
        u = nnops.add(u, t2)
        u = temporal_conv(blk.kernel, u, cfg.M, positions, cfg.slope, collector)
    y = nnops.affine_pointwise(params.proj_W, params.proj_b, u)
    return y, squeeze


def forward(params: DsnoParams, x_T, grid: TimeGrid) -> np.ndarray:
    """One-call prediction of the whole trajectory: (M, d) or (B, M, d)."""
    y, squeeze = _forward_graph(params, x_T, grid.times,
                                np.arange(params.config.M, dtype=float))
    return y.value[0] if squeeze else y.value


def forward_loss(params: DsnoParams, x_T, grid: TimeGrid, target, weights) -> Tensor:
    """Differentiable weighted l1 training loss for a batch."""
    y, _ = _forward_graph(params, x_T, grid.times,
                          np.arange(params.config.M, dtype=float))
    return nnops.weighted_l1(y, target, weights)


def query_positions(grid: TimeGrid, query_times) -> np.ndarray:
    """Monotone map of query times into the training grid's index coordinate."""
    q = np.asarray(query_times, dtype=float)
    times = grid.times
    if np.any(q > times[0]) or np.any(q < times[-1]):
        raise ValueError("query time outside the training grid's span")
    asc_t = times[::-1]
    asc_idx = np.arange(times.size - 1, -1, -1, dtype=float)
    return np.interp(q, asc_t, asc_idx)


def query_at(params: DsnoParams, x_T, grid: TimeGrid, query_times,
             collector: list | None = None) -> np.ndarray:
    """Evaluate the trained operator at arbitrary times within the grid span.

    Querying exactly the training grid reproduces `forward` bit-for-bit
    (identical positions, identical code path).
    """
    q = np.asarray(query_times, dtype=float)
    positions = query_positions(grid, q)
    y, squeeze = _forward_graph(params, x_T, q, positions, collector)
    return y.value[0] if squeeze else y.value


_CKPT_MAGIC = b"FOP1"


def _payload_bytes(tensors: list[np.ndarray]) -> bytes:
    chunks = []
    for v in tensors:
        if np.iscomplexobj(v):
            chunks.append(np.ascontiguousarray(v, dtype="<c16").tobytes())
        else:
            chunks.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(chunks)


def _checksum(payload: bytes) -> int:
    return struct.unpack("<Q", hashlib.sha256(payload).digest()[:8])[0]


def save_checkpoint(path, params: DsnoParams, extra: dict | None = None) -> None:
    """Header = canonical JSON (config + any extra scalars), then every
    parameter tensor in declaration order as f64 little-endian (complex
    interleaved), then a trailing u64 checksum of the payload."""
    header = {"config": json.loads(params.config.to_json())}
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = _payload_bytes([t.value for t in params.tensors()])
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        f.write(payload)
        f.write(struct.pack("<Q", _checksum(payload)))


def load_checkpoint(path) -> tuple[DsnoParams, dict]:
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        rest = f.read()
    payload, tail = rest[:-8], rest[-8:]
    if struct.unpack("<Q", tail)[0] != _checksum(payload):
        raise ValueError("checkpoint payload checksum mismatch")
    config = DsnoConfig.from_dict(header["config"])
    params = init_params(config, seed=0)
    offset = 0
    for _, t in params.named_tensors():
        if np.iscomplexobj(t.value):
            n = t.value.size * 16
            arr = np.frombuffer(payload[offset:offset + n], dtype="<c16")
        else:
            n = t.value.size * 8
            arr = np.frombuffer(payload[offset:offset + n], dtype="<f8")
        t.value = arr.reshape(t.value.shape).copy()
        offset += n
    if offset != len(payload):
        raise ValueError("checkpoint payload size mismatch")
    return params, header.get("extra", {})
