"""Probability-flow ODE right-hand side, solvers, and trajectory datasets.

Integration runs backward in time from t_max with Gaussian initial
conditions, recording states at a fixed supervision grid. The recording
grid is decoupled from the internal step count so the targets can be far
more accurate than the supervision resolution. Datasets persist to a
self-describing little-endian binary file.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .mixture import GaussianMixture, epsilon_hat, score
from .schedule import NoiseSchedule, coefficients_at

MAGIC = b"DSNO"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray   # strictly decreasing, within (0, s]
    scheme: str         # "uniform" | "quadratic"

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        if self.times.ndim != 1 or self.times.size < 1:
            raise ValueError("grid needs at least one time")
        if np.any(np.diff(self.times) >= 0):
            raise ValueError("grid times must be strictly decreasing")
        if self.times[-1] <= 0:
            raise ValueError("grid times must be positive")

    @property
    def M(self) -> int:
        return self.times.size


def make_time_grid(M: int, scheme: str, s: float, t_floor: float) -> TimeGrid:
    """Supervision grid of M descending times in (t_floor, s].

    uniform:   t_m = t_floor + (s - t_floor) * m/M
    quadratic: t_m = t_floor + (s - t_floor) * (m/M)^2   (denser near 0)
    for m = M..1.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not (0 < t_floor < s):
        raise ValueError("need 0 < t_floor < s")
    m = np.arange(M, 0, -1, dtype=float)
    if scheme == "uniform":
        frac = m / M
    elif scheme == "quadratic":
        frac = (m / M) ** 2
    else:
        raise ValueError(f"unknown grid scheme {scheme!r}")
    return TimeGrid(times=t_floor + (s - t_floor) * frac, scheme=scheme)


def pf_rhs(gm: GaussianMixture, sched: NoiseSchedule, x, t: float) -> np.ndarray:
    """Probability-flow ODE velocity: h(t)x - (g^2/2) * score(x, t)."""
    c = coefficients_at(sched, t)
    return c.h * np.asarray(x, dtype=float) - 0.5 * c.beta * score(gm, sched, x, t)


def step_euler(rhs, x, t: float, t_next: float):
    return x + (t_next - t) * rhs(x, t)


def step_heun(rhs, x, t: float, t_next: float):
    dt = t_next - t
    k1 = rhs(x, t)
    k2 = rhs(x + dt * k1, t_next)
    return x + 0.5 * dt * (k1 + k2)


def step_exponential(gm: GaussianMixture, sched: NoiseSchedule, x, t: float, t_next: float):
    """Semi-linear exact update with the noise prediction frozen over the step.

    x' = (a'/a) x + (s' - (a'/a) s) * eps_hat(x, t); exact whenever eps_hat
    is constant along the step.
    """
    c = coefficients_at(sched, t)
    cn = coefficients_at(sched, t_next)
    ratio = cn.alpha / c.alpha
    return ratio * x + (cn.sigma - ratio * c.sigma) * epsilon_hat(gm, sched, x, t)


class IntegrationDiverged(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"non-finite state reached at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class Trajectory:
    x_T: np.ndarray       # (d,) or (n, d) initial condition(s)
    values: np.ndarray    # (M, d) or (n, M, d)
    grid: TimeGrid


def _advance(gm, sched, x, t_from, t_to, solver, substeps):
    if t_to == t_from:
        return x
    ts = np.linspace(t_from, t_to, substeps + 1)
    for a, b in zip(ts[:-1], ts[1:]):
        if solver == "euler":
            x = step_euler(lambda y, tt: pf_rhs(gm, sched, y, tt), x, a, b)
        elif solver == "heun":
            x = step_heun(lambda y, tt: pf_rhs(gm, sched, y, tt), x, a, b)
        elif solver == "exponential":
            x = step_exponential(gm, sched, x, a, b)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(b)
    return x


def solve_trajectory(gm: GaussianMixture, sched: NoiseSchedule, x_T,
                     grid: TimeGrid, solver: str = "heun", substeps: int = 64) -> Trajectory:
    """Integrate from t_max down through the grid, recording each grid time.

    `substeps` internal steps are taken per segment (t_max -> first grid
    time, then between consecutive grid times). Works on a single (d,)
    state or a batch (n, d); the batch is just row-parallel.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.array(x_T, dtype=float)
    rows = []
    t = sched.t_max
    for tm in grid.times:
        x = _advance(gm, sched, x, t, tm, solver, substeps)
        rows.append(x.copy())
        t = tm
    values = np.stack(rows, axis=-2)
    return Trajectory(x_T=np.array(x_T, dtype=float), values=values, grid=grid)


_HEADER_FMT = "<4sIIIQdddd"  # magic, version, d, M, N, beta_min, beta_max, t_min, T


@dataclass(frozen=True)
class TrajectoryDataset:
    sched: NoiseSchedule
    grid: TimeGrid
    x_T: np.ndarray      # (N, d) float32
    values: np.ndarray   # (N, M, d) float32

    @property
    def N(self) -> int:
        return self.x_T.shape[0]

    @property
    def d(self) -> int:
        return self.x_T.shape[1]

    def save(self, path) -> None:
        N, d = self.x_T.shape
        M = self.grid.M
        with open(path, "wb") as f:
            f.write(struct.pack(_HEADER_FMT, MAGIC, FORMAT_VERSION, d, M, N,
                                self.sched.beta_min, self.sched.beta_max,
                                self.sched.t_min, self.sched.t_max))
            f.write(self.grid.times.astype("<f8").tobytes())
            interleaved = np.concatenate(
                [self.x_T.astype("<f4").reshape(N, d),
                 self.values.astype("<f4").reshape(N, M * d)], axis=1)
            f.write(interleaved.tobytes())

    @classmethod
    def load(cls, path) -> "TrajectoryDataset":
        with open(path, "rb") as f:
            raw = f.read(struct.calcsize(_HEADER_FMT))
            magic, version, d, M, N, bmin, bmax, tmin, T = struct.unpack(_HEADER_FMT, raw)
            if magic != MAGIC:
                raise ValueError("not a trajectory dataset file")
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported dataset version {version}")
            times = np.frombuffer(f.read(8 * M), dtype="<f8").copy()
            payload = np.frombuffer(f.read(), dtype="<f4")
        per_rec = d + M * d
        if payload.size != N * per_rec:
            raise ValueError(f"dataset truncated: expected {N} records")
        payload = payload.reshape(N, per_rec)
        sched = NoiseSchedule(beta_min=bmin, beta_max=bmax, t_max=T, t_min=tmin)
        scheme = _infer_scheme(times, T)
        return cls(sched=sched,
                   grid=TimeGrid(times=times, scheme=scheme),
                   x_T=payload[:, :d].copy(),
                   values=payload[:, d:].reshape(N, M, d).copy())


def _infer_scheme(times: np.ndarray, T: float) -> str:
    """Best-effort grid-scheme label for a loaded file (not used numerically)."""
    if times.size >= 3 and np.allclose(np.diff(times), np.diff(times)[0]):
        return "uniform"
    return "quadratic"


def generate_dataset(gm: GaussianMixture, sched: NoiseSchedule, grid: TimeGrid,
                     N: int, base_seed: int, solver: str = "heun",
                     substeps: int = 64, path=None) -> TrajectoryDataset:
    """Solve N trajectories from per-record seeded Gaussian noise.

    Record j draws x_T from default_rng(base_seed + j), so any subset can
    be regenerated independently; the batch is integrated row-parallel
    with a deterministic output order.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    d = gm.d
    x_T = np.empty((N, d))
    for j in range(N):
        x_T[j] = np.random.default_rng(base_seed + j).standard_normal(d)
    traj = solve_trajectory(gm, sched, x_T, grid, solver=solver, substeps=substeps)
    ds = TrajectoryDataset(sched=sched, grid=grid,
                           x_T=x_T.astype(np.float32),
                           values=traj.values.astype(np.float32))
    if path is not None:
        ds.save(path)
    return ds
