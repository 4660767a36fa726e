"""Minimal differentiable compute core for the trajectory operator.

A small reverse-mode tape over numpy arrays, with exactly the primitives
the operator network needs: pointwise affines, leaky ReLU, truncated
temporal DFTs with arbitrary-position evaluation, complex per-mode kernel
products, and a weighted l1 loss. Complex tensors carry gradients in the
dL/dRe + i*dL/dIm convention. Everything runs in double precision.
"""
from __future__ import annotations

import math

import numpy as np


class Tensor:
    """Node in the computation graph; leaves are created with `param`."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        if self.value.ndim != 0:
            raise ValueError("backward() needs a scalar loss")
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)

        visit(self)
        for node in topo:
            node.grad = None
        self.grad = np.ones((), dtype=float)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def param(value) -> Tensor:
    return Tensor(np.asarray(value))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Tensor(a.value + b.value, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(c * a.value, (a,), lambda g: (c * g,))


def affine_pointwise(W: Tensor, b: Tensor, u: Tensor) -> Tensor:
    """Row-wise affine map: each trailing-axis vector goes through W x + b."""
    if W.value.shape[1] != u.value.shape[-1] or b.value.shape[0] != W.value.shape[0]:
        raise ValueError("affine shape mismatch")
    out = u.value @ W.value.T + b.value

    def bw(g):
        lead = (-1, g.shape[-1])
        gW = g.reshape(lead).T @ u.value.reshape(-1, u.value.shape[-1])
        gb = g.reshape(lead).sum(axis=0)
        gu = g @ W.value
        return gW, gb, gu

    return Tensor(out, (W, b, u), bw)


def leaky_relu(u: Tensor, slope: float = 0.01) -> Tensor:
    mask = np.where(u.value >= 0, 1.0, slope)
    return Tensor(u.value * mask, (u,), lambda g: (g * mask,))


def _dft_basis(J: int, positions: np.ndarray, M: int) -> np.ndarray:
    """Forward basis F[j, i] = (M/Q) exp(-2i*pi*j*q_i/M) over index positions q_i.

    At the integer grid positions 0..M-1 this is the standard truncated
    DFT matrix; at fractional positions it is the quadrature analogue
    used for resolution-free evaluation.
    """
    j = np.arange(J)[:, None]
    q = np.asarray(positions, dtype=float)[None, :]
    return (M / q.shape[1]) * np.exp(-2j * np.pi * j * q / M)


def dft_at_positions(u: Tensor, J: int, positions, M: int) -> Tensor:
    """Truncated forward transform of (..., Q, C) features sampled at
    the given index positions of an M-point grid; returns (..., J, C)."""
    F = _dft_basis(J, np.asarray(positions, dtype=float), M)
    out = np.matmul(F, u.value)

    def bw(g):
        return (np.real(np.matmul(np.conj(F).T, g)),)

    return Tensor(out, (u,), bw)


def dft_truncated(u: Tensor, J: int) -> Tensor:
    """One-sided unnormalized DFT over the temporal axis, modes 0..J-1."""
    M = u.value.shape[-2]
    if J > M // 2 + 1:
        raise ValueError(f"J={J} exceeds M//2+1={M // 2 + 1}")
    return dft_at_positions(u, J, np.arange(M), M)


def mode_multiply(R: Tensor, u_hat: Tensor) -> Tensor:
    """Per-mode complex matrix-vector product: out[j,k] = sum_l R[j,k,l] u_hat[j,l]."""
    if R.value.shape[0] != u_hat.value.shape[-2] or R.value.shape[2] != u_hat.value.shape[-1]:
        raise ValueError("kernel/coefficient shape mismatch")
    uv = u_hat.value
    lead = uv.shape[:-2]
    J, Cin = uv.shape[-2], uv.shape[-1]
    K = R.value.shape[1]
    x = uv.reshape(-1, J, Cin).transpose(1, 0, 2)                 # (J, B, Cin)
    out = np.matmul(x, R.value.transpose(0, 2, 1))                # (J, B, K)
    out = out.transpose(1, 0, 2).reshape(*lead, J, K)

    def bw(g):
        gj = g.reshape(-1, J, K).transpose(1, 0, 2)               # (J, B, K)
        gu = np.matmul(gj, np.conj(R.value))                      # (J, B, Cin)
        gu = gu.transpose(1, 0, 2).reshape(uv.shape)
        gR = np.matmul(gj.transpose(0, 2, 1), np.conj(x))         # (J, K, Cin)
        return gR, gu

    return Tensor(out, (R, u_hat), bw)


def _idft_basis(J: int, M: int, queries: np.ndarray) -> np.ndarray:
    """Inverse basis B[j, q] with one-sided mode weights and 1/M normalization."""
    c = np.full(J, 2.0)
    c[0] = 1.0
    if M % 2 == 0 and J - 1 == M // 2:
        c[-1] = 1.0
    j = np.arange(J)[:, None]
    q = np.asarray(queries, dtype=float)[None, :]
    return (c[:, None] / M) * np.exp(2j * np.pi * j * q / M)


def idft_at(u_hat: Tensor, M: int, queries) -> Tensor:
    """Real trigonometric interpolant of one-sided modes at (fractional)
    index positions; at the full integer grid with maximal J this is the
    exact inverse DFT."""
    J = u_hat.value.shape[-2]
    B = _idft_basis(J, M, np.asarray(queries, dtype=float))
    out = np.real(np.matmul(B.T, u_hat.value))

    def bw(g):
        return (np.matmul(np.conj(B), g.astype(complex)),)

    return Tensor(out, (u_hat,), bw)


def time_embedding(t: float, E: int) -> np.ndarray:
    """Sinusoidal embedding [sin(w_k t), cos(w_k t)] with log-spaced w_k."""
    if E < 2 or E % 2 != 0:
        raise ValueError("embedding width must be even and >= 2")
    half = E // 2
    if half == 1:
        omega = np.array([1.0])
    else:
        omega = np.exp(-np.arange(half) * math.log(1e4) / (half - 1))
    return np.concatenate([np.sin(omega * t), np.cos(omega * t)])


def weighted_l1(pred: Tensor, target: np.ndarray, weights: np.ndarray) -> Tensor:
    """(1/M) sum_m w_m * |pred - target|_1, averaged over any batch axes."""
    target = np.asarray(target, dtype=float)
    w = np.asarray(weights, dtype=float)
    if pred.value.shape != target.shape or w.shape[0] != pred.value.shape[-2]:
        raise ValueError("loss shape mismatch")
    diff = pred.value - target
    M = w.shape[0]
    nbatch = int(np.prod(pred.value.shape[:-2], dtype=int))
    norm = M * max(nbatch, 1)
    out = np.sum(w[:, None] * np.abs(diff)) / norm

    def bw(g):
        return (g * np.sign(diff) * w[:, None] / norm,)

    return Tensor(np.asarray(out), (pred,), bw)


def sum_squares(u: Tensor) -> Tensor:
    out = np.sum(np.abs(u.value) ** 2)

    def bw(g):
        return (2.0 * g * np.conj(u.value) if np.iscomplexobj(u.value) else 2.0 * g * u.value,)

    return Tensor(np.asarray(out), (u,), bw)


def grad_check(f, params, step: float = 1e-5, guard: float = 1e-3) -> float:
    """Max relative disagreement between analytic and central-difference
    gradients of the scalar f(params) over every real coordinate.

    Complex parameters are perturbed separately in their real and
    imaginary parts; the denominator is guarded for near-zero gradients.
    """
    loss = f(params)
    loss.backward()
    analytic = [np.zeros_like(p.value) if p.grad is None else np.array(p.grad)
                for p in params]

    def eval_loss():
        v = f(params).value
        if not np.isfinite(v):
            raise FloatingPointError("non-finite loss during grad check")
        return float(v)

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        aflat = a.reshape(-1)
        parts = (1.0, 1j) if np.iscomplexobj(p.value) else (1.0,)
        for i in range(flat.size):
            for unit in parts:
                orig = flat[i]
                flat[i] = orig + unit * step
                hi = eval_loss()
                flat[i] = orig - unit * step
                lo = eval_loss()
                flat[i] = orig
                numeric = (hi - lo) / (2 * step)
                ana = aflat[i].real if unit == 1.0 else aflat[i].imag
                err = abs(ana - numeric) / max(abs(ana), abs(numeric), guard)
                worst = max(worst, err)
    return worst
