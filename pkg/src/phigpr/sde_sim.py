"""
Stochastic swing/Ornstein-Uhlenbeck simulation.

The wind fluctuations follow dP' = -P'/lam dt + sigma sqrt(2/lam) dW, one
independent Wiener process per wind generator, and enter the speed equation
additively. Time stepping uses a second-order stochastic Runge-Kutta scheme
(Heun predictor/corrector plus an h^{3/2} correction driven by a second
Gaussian variate per step).

Random numbers for one trajectory come from a single generator in a fixed
order: the stationary initial draw (one value per wind generator) followed by
``(xi, eta)`` pairs per wind generator per step. Ensembles are integrated in
fixed-size member blocks, so results do not depend on the worker count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ContractError, IntegrationError
from .grid_model import GridParameters, GridState, _drift

__all__ = [
    "SimConfig",
    "Trajectory",
    "Ensemble",
    "sample_stationary_wind",
    "rk2_step",
    "simulate",
    "generate_ensemble",
    "member_seeds",
    "subsample",
    "stride_for",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

BLOCK_SIZE = 500
_SQRT12 = math.sqrt(12.0)

InitWind = Union[str, Sequence[float]]


def stride_for(interval, step):
    """Integer m with interval = m * step, or ContractError."""
    ratio = interval / step
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(ratio, 1.0):
        raise ContractError(f"interval {interval} is not an integer multiple of step {step}")
    return m


@dataclass(frozen=True)
class SimConfig:
    step: float = 0.0025
    t_end: float = 12.5
    seed: int = 0
    init_theta: tuple = (0.0431, 0.4584, 0.2372)
    init_omega: tuple = (0.0, 0.0, 0.0)
    init_wind: InitWind = "stationary-draw"

    def __post_init__(self):
        if not self.step > 0:
            raise ContractError("step must be positive")
        if self.t_end < self.step:
            raise ContractError("t_end must be at least one step")
        if isinstance(self.init_wind, str) and self.init_wind != "stationary-draw":
            raise ContractError("init_wind must be 'stationary-draw' or explicit values")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.step + 1e-9))

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_points) * self.step


@dataclass
class Trajectory:
    """One realization on a uniform grid; state arrays are (n_times, n_gen)."""

    times: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    wind_fluct: np.ndarray

    @property
    def n_gen(self) -> int:
        return self.theta.shape[1]

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def state(self, i) -> GridState:
        return GridState(self.theta[i].copy(), self.omega[i].copy(), self.wind_fluct[i].copy())

    def __len__(self):
        return len(self.times)


@dataclass
class Ensemble:
    """Members stacked on a leading axis: state arrays are (n_members, n_times, n_gen)."""

    times: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    wind_fluct: np.ndarray
    seeds: np.ndarray

    def __post_init__(self):
        if self.theta.shape[0] < 2:
            raise ContractError("an ensemble needs at least two members")

    @property
    def n_members(self) -> int:
        return self.theta.shape[0]

    @property
    def n_gen(self) -> int:
        return self.theta.shape[2]

    def __len__(self):
        return self.n_members

    def member(self, i) -> Trajectory:
        return Trajectory(self.times, self.theta[i], self.omega[i], self.wind_fluct[i])

    def __iter__(self):
        return (self.member(i) for i in range(self.n_members))

    def select(self, index) -> "Ensemble":
        index = np.asarray(index)
        return Ensemble(self.times, self.theta[index], self.omega[index],
                        self.wind_fluct[index], self.seeds[index])


def sample_stationary_wind(params: GridParameters, rng) -> np.ndarray:
    """Draw P'(0) ~ N(0, sigma_k^2) for wind generators; zero elsewhere."""
    out = np.zeros(params.n_gen)
    idx = params.wind_index
    out[idx] = params.wind_sigma[idx] * rng.standard_normal(len(idx))
    return out


def _ou_coefficients(params):
    idx = params.wind_index
    lam = params.wind_lambda[idx]
    return idx, -1.0 / lam, params.wind_sigma[idx] * np.sqrt(2.0 / lam)


def _check_step(params, h):
    idx = params.wind_index
    if len(idx) and h > params.wind_lambda[idx].min() / 10.0:
        raise ContractError(
            f"step {h} exceeds the stability bound min(lambda)/10 = {params.wind_lambda[idx].min() / 10.0}")


def _advance(theta, omega, wind, params, h, xi, eta, coeffs):
    """One scheme step for batched states; xi/eta are (..., n_wind)."""
    idx, a, b = coeffs
    sqrt_h = math.sqrt(h)
    h32 = h * sqrt_h

    dth0, dom0 = _drift(theta, omega, wind, params)
    p0 = wind[..., idx]
    p_bar = p0 + b * xi * sqrt_h + a * p0 * h
    wind_bar = wind.copy()
    wind_bar[..., idx] = p_bar
    dth1, dom1 = _drift(theta + h * dth0, omega + h * dom0, wind_bar, params)

    theta_new = theta + 0.5 * h * (dth0 + dth1)
    omega_new = omega + 0.5 * h * (dom0 + dom1)
    omega_new[..., idx] += b * h32 * eta / (_SQRT12 * 2.0 * params.inertia[idx])
    wind_new = wind.copy()
    wind_new[..., idx] = p0 + b * xi * sqrt_h + 0.5 * h * a * (p0 + p_bar) + a * b * h32 * eta / _SQRT12
    return theta_new, omega_new, wind_new


def rk2_step(state: GridState, params: GridParameters, h: float, rng, step_index: int = 0) -> GridState:
    """Advance one step, drawing (xi, eta) for each wind generator from ``rng``."""
    _check_step(params, h)
    coeffs = _ou_coefficients(params)
    z = rng.standard_normal((len(coeffs[0]), 2))
    theta, omega, wind = _advance(state.theta, state.omega, state.wind_fluct, params, h,
                                  z[:, 0], z[:, 1], coeffs)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(omega)) and np.all(np.isfinite(wind))):
        raise IntegrationError(step_index)
    return GridState(theta, omega, wind)


def _initial_wind(config, params, rng):
    if isinstance(config.init_wind, str):
        return sample_stationary_wind(params, rng)
    wind = np.asarray(config.init_wind, dtype=float).copy()
    if wind.shape != (params.n_gen,):
        raise ContractError("explicit init_wind has the wrong length")
    wind[~params.wind_mask] = 0.0
    return wind


def _integrate_block(config, params, seeds, stride):
    """Integrate a block of members in lockstep; returns recorded arrays."""
    h = config.step
    n_steps = config.n_steps
    n_rec = n_steps // stride + 1
    n_mem, n_gen = len(seeds), params.n_gen
    coeffs = _ou_coefficients(params)
    n_wind = len(coeffs[0])

    theta = np.tile(np.asarray(config.init_theta, dtype=float), (n_mem, 1))
    omega = np.tile(np.asarray(config.init_omega, dtype=float), (n_mem, 1))
    if theta.shape[1] != n_gen or omega.shape[1] != n_gen:
        raise ContractError("initial condition length does not match n_gen")
    wind = np.empty((n_mem, n_gen))
    noise = np.empty((n_steps, n_mem, n_wind, 2))
    for j, seed in enumerate(seeds):
        rng = np.random.default_rng(int(seed))
        wind[j] = _initial_wind(config, params, rng)
        noise[:, j] = rng.standard_normal((n_steps, n_wind, 2))

    out = np.empty((3, n_mem, n_rec, n_gen))
    out[0, :, 0], out[1, :, 0], out[2, :, 0] = theta, omega, wind
    for i in range(n_steps):
        z = noise[i]
        theta, omega, wind = _advance(theta, omega, wind, params, h, z[..., 0], z[..., 1], coeffs)
        if not np.isfinite(omega).all() or not np.isfinite(theta).all():
            raise IntegrationError(i + 1)
        if (i + 1) % stride == 0:
            r = (i + 1) // stride
            out[0, :, r], out[1, :, r], out[2, :, r] = theta, omega, wind
    return out


def simulate(config: SimConfig, params: GridParameters, record_interval=None) -> Trajectory:
    """Integrate one trajectory seeded by ``config.seed``.

    ``record_interval`` (a multiple of the step) thins the stored grid without
    changing the integration step.
    """
    _check_step(params, config.step)
    stride = 1 if record_interval is None else stride_for(record_interval, config.step)
    out = _integrate_block(config, params, [config.seed], stride)
    times = config.times[::stride]
    return Trajectory(times, out[0, 0], out[1, 0], out[2, 0])


def member_seeds(master_seed: int, n_members: int) -> np.ndarray:
    """Per-member 64-bit seeds; member i depends only on (master_seed, i)."""
    return np.array([
        np.random.SeedSequence(master_seed, spawn_key=(i,)).generate_state(1, np.uint64)[0]
        for i in range(n_members)
    ], dtype=np.uint64)


def generate_ensemble(config: SimConfig, params: GridParameters, n_members: int,
                      record_interval=None, threads: int = 1) -> Ensemble:
    """Integrate ``n_members`` independent trajectories.

    Members are grouped into blocks of fixed size and each block is integrated
    in lockstep; ``threads`` only changes how blocks are scheduled.
    """
    if n_members < 2:
        raise ContractError("n_members must be >= 2")
    _check_step(params, config.step)
    stride = 1 if record_interval is None else stride_for(record_interval, config.step)
    seeds = member_seeds(config.seed, n_members)
    blocks = [seeds[i:i + BLOCK_SIZE] for i in range(0, n_members, BLOCK_SIZE)]

    def run(block):
        return _integrate_block(config, params, block, stride)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    data = np.concatenate(parts, axis=1)
    times = config.times[::stride]
    return Ensemble(times, data[0], data[1], data[2], seeds)


def subsample(traj: Trajectory, interval: float) -> Trajectory:
    """Keep every m-th point, where interval = m * (grid spacing)."""
    m = stride_for(interval, traj.step)
    return Trajectory(traj.times[::m], traj.theta[::m], traj.omega[::m], traj.wind_fluct[::m])


def _columns(n_gen):
    return (["t"] + [f"theta_{k}" for k in range(1, n_gen + 1)]
            + [f"omega_{k}" for k in range(1, n_gen + 1)]
            + [f"pwind_{k}" for k in range(1, n_gen + 1)])


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    table = np.column_stack([traj.times, traj.theta, traj.omega, traj.wind_fluct])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_columns(traj.n_gen))
        for row in table:
            writer.writerow([repr(float(v)) for v in row])
    return path


def read_trajectory_csv(path) -> Trajectory:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    n_gen = (len(header) - 1) // 3
    if header != _columns(n_gen):
        raise ContractError(f"{path}: unexpected trajectory columns")
    return Trajectory(data[:, 0], data[:, 1:1 + n_gen], data[:, 1 + n_gen:1 + 2 * n_gen],
                      data[:, 1 + 2 * n_gen:])
