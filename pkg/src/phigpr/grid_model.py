"""
Classical-generator swing dynamics on a reduced admittance network.

All functions accept arrays with arbitrary leading batch dimensions; the last
axis always indexes generators. This lets the ensemble integrator advance many
members at once with the same code used for a single trajectory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ContractError

__all__ = [
    "GridParameters",
    "GridState",
    "ContractError",
    "load_grid",
    "three_gen",
    "electrical_power",
    "drift",
]


def _vector(values, n, name):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (n,):
        raise ContractError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class GridParameters:
    """Physical constants of an N-generator reduced network.

    Arrays are copied and made read-only on construction, so instances can be
    shared freely between threads.
    """

    n_gen: int
    inertia: np.ndarray
    damping: np.ndarray
    emf: np.ndarray
    conductance: np.ndarray
    susceptance: np.ndarray
    base_speed: float
    sync_speed: float
    wind_mean: np.ndarray
    wind_sigma: np.ndarray
    wind_lambda: np.ndarray

    def __post_init__(self):
        n = int(self.n_gen)
        if n < 1:
            raise ContractError("n_gen must be >= 1")
        object.__setattr__(self, "n_gen", n)
        for name in ("inertia", "damping", "emf", "wind_mean", "wind_sigma", "wind_lambda"):
            arr = _vector(getattr(self, name), n, name).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        for name in ("conductance", "susceptance"):
            mat = np.array(getattr(self, name), dtype=float)
            if mat.shape != (n, n):
                raise ContractError(f"{name} must be {n}x{n}, got {mat.shape}")
            mat.flags.writeable = False
            object.__setattr__(self, name, mat)
        object.__setattr__(self, "base_speed", float(self.base_speed))
        object.__setattr__(self, "sync_speed", float(self.sync_speed))

        if np.any(self.inertia <= 0):
            raise ContractError("all inertia constants must be positive")
        if np.any(self.wind_sigma < 0):
            raise ContractError("wind_sigma must be non-negative")
        if np.any(self.wind_lambda[self.wind_sigma > 0] <= 0):
            raise ContractError("wind_lambda must be positive where wind_sigma > 0")
        for name in ("inertia", "damping", "emf", "conductance", "susceptance", "wind_mean", "wind_sigma"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"{name} contains non-finite values")

    @property
    def wind_mask(self) -> np.ndarray:
        """Boolean mask of generators with stochastic mechanical power."""
        return self.wind_sigma > 0

    @property
    def wind_index(self) -> np.ndarray:
        return np.flatnonzero(self.wind_mask)

    def replace(self, **changes) -> "GridParameters":
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return GridParameters(**fields)


@dataclass
class GridState:
    """Rotor angles, speeds and wind-power fluctuations of every generator."""

    theta: np.ndarray
    omega: np.ndarray
    wind_fluct: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        if self.wind_fluct is None:
            self.wind_fluct = np.zeros_like(self.theta)
        self.wind_fluct = np.asarray(self.wind_fluct, dtype=float)
        if not (self.theta.shape == self.omega.shape == self.wind_fluct.shape):
            raise ContractError("theta, omega and wind_fluct must share a shape")

    def copy(self) -> "GridState":
        return GridState(self.theta.copy(), self.omega.copy(), self.wind_fluct.copy())


def _parse_row(text):
    return [float(tok) for tok in text.replace("\n", " ").split(",") if tok.strip()]


def _parse_matrix(text):
    return [_parse_row(row) for row in text.split(";") if row.strip()]


def load_grid(path) -> GridParameters:
    """Read a grid instance from an INI-style configuration file."""
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#",))
    text = Path(path).read_text()
    cfg.read_string(text)
    try:
        gen = cfg["generators"]
        net = cfg["network"]
        speed = cfg["speed"]
        wind = cfg["wind"]
        n = gen.getint("n_gen")
        return GridParameters(
            n_gen=n,
            inertia=_parse_row(gen["inertia"]),
            damping=_parse_row(gen["damping"]),
            emf=_parse_row(gen["emf"]),
            conductance=_parse_matrix(net["conductance"]),
            susceptance=_parse_matrix(net["susceptance"]),
            base_speed=speed.getfloat("base_speed"),
            sync_speed=speed.getfloat("sync_speed"),
            wind_mean=_parse_row(wind["mean"]),
            wind_sigma=_parse_row(wind["sigma"]),
            wind_lambda=_parse_row(wind["lambda"]),
        )
    except KeyError as exc:
        raise ContractError(f"{path}: missing configuration key {exc}") from None


def three_gen_path() -> Path:
    return Path(str(resources.files("phigpr") / "data" / "three_gen.cfg"))


def three_gen() -> GridParameters:
    """The shipped three-generator instance (two wind generators)."""
    return load_grid(three_gen_path())


def electrical_power(theta, params: GridParameters) -> np.ndarray:
    """Electrical power injected by each generator.

    P_k = sum_i E_k E_i (G_ki cos(theta_k - theta_i) + B_ki sin(theta_k - theta_i))
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (params.n_gen,):
        raise ContractError(f"theta must end in a generator axis of length {params.n_gen}")
    # cos/sin of angle differences expanded so only N trig evaluations are needed
    c = np.cos(theta) * params.emf
    s = np.sin(theta) * params.emf
    return c * (_rowdot(c, params.conductance) - _rowdot(s, params.susceptance)) \
        + s * (_rowdot(s, params.conductance) + _rowdot(c, params.susceptance))


def _rowdot(x, m):
    """x @ m.T with a fixed summation order, so a member's result does not
    depend on how many members are batched with it (BLAS kernels may differ)."""
    out = x[..., 0, None] * m[:, 0]
    for i in range(1, m.shape[1]):
        out = out + x[..., i, None] * m[:, i]
    return out


def drift(state: GridState, params: GridParameters):
    """Time derivatives (dtheta/dt, domega/dt) including the wind fluctuation."""
    theta, omega, wind = state.theta, state.omega, state.wind_fluct
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(omega)) and np.all(np.isfinite(wind))):
        raise ContractError("state contains non-finite values")
    return _drift(theta, omega, wind, params)


def _drift(theta, omega, wind, params):
    slip = omega - params.sync_speed
    dtheta = params.base_speed * slip
    accel = params.wind_mean + wind - electrical_power(theta, params) - params.damping * slip
    return dtheta, accel / (2.0 * params.inertia)
