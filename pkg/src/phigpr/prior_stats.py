"""
Monte Carlo prior statistics and joint Gaussian-process assembly.

Means use the 1/N estimator and two-time covariances the 1/(N-1) estimator
over ensemble members. Blocks of the joint covariance are laid out channel by
channel, each channel contributing all of its times in order.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container
from .errors import ContractError

__all__ = [
    "StateChannel",
    "parse_channel",
    "channel_values",
    "MomentTable",
    "JointGp",
    "ensemble_moments",
    "relative_channel_stats",
    "assemble_joint",
    "time_indices",
]

RAW_KINDS = ("theta", "omega", "wind_fluct")
RELATIVE_KINDS = {"theta_rel": "theta", "omega_rel": "omega"}
_LABEL_PREFIX = {"theta": "theta", "omega": "omega", "wind_fluct": "pwind"}
JITTER = 1e-10


@dataclass(frozen=True)
class StateChannel:
    """A raw state (theta_k, omega_k, P'_k) or a relative one (theta_k - theta_ref)."""

    kind: str
    index: int
    reference: int | None = None

    def __post_init__(self):
        if self.kind in RAW_KINDS:
            if self.reference is not None:
                raise ContractError(f"{self.kind} takes no reference generator")
        elif self.kind in RELATIVE_KINDS:
            if self.reference is None or self.reference == self.index:
                raise ContractError("relative channels need a reference different from the index")
        else:
            raise ContractError(f"unknown channel kind {self.kind!r}")
        if self.index < 1 or (self.reference is not None and self.reference < 1):
            raise ContractError("generator indices are 1-based")

    @property
    def base_kind(self) -> str:
        return RELATIVE_KINDS.get(self.kind, self.kind)

    @property
    def is_relative(self) -> bool:
        return self.kind in RELATIVE_KINDS

    @property
    def label(self) -> str:
        prefix = _LABEL_PREFIX[self.base_kind]
        if self.is_relative:
            return f"{prefix}_{self.index}-{prefix}_{self.reference}"
        return f"{prefix}_{self.index}"

    def raw_parts(self):
        """(channel_k, channel_ref) for relative kinds."""
        return StateChannel(self.base_kind, self.index), StateChannel(self.base_kind, self.reference)

    def __str__(self):
        return self.label


_LABEL_RE = re.compile(r"^(theta|omega|pwind)_(\d+)(?:-(theta|omega|pwind)_(\d+))?$")


def parse_channel(label: str) -> StateChannel:
    """Inverse of ``StateChannel.label`` (e.g. ``"omega_2-omega_1"``, ``"pwind_1"``)."""
    if isinstance(label, StateChannel):
        return label
    m = _LABEL_RE.match(label.strip())
    if not m:
        raise ContractError(f"cannot parse channel {label!r}")
    prefix, k, ref_prefix, ref = m.groups()
    kind = {"theta": "theta", "omega": "omega", "pwind": "wind_fluct"}[prefix]
    if ref is None:
        return StateChannel(kind, int(k))
    if ref_prefix != prefix or kind == "wind_fluct":
        raise ContractError(f"unsupported relative channel {label!r}")
    return StateChannel(kind + "_rel", int(k), int(ref))


def channel_values(source, ch: StateChannel) -> np.ndarray:
    """Channel samples from a Trajectory (n_t,) or Ensemble (n_members, n_t)."""
    arr = getattr(source, ch.base_kind)
    n_gen = arr.shape[-1]
    if ch.index > n_gen or (ch.reference or 0) > n_gen:
        raise ContractError(f"{ch} refers to a generator beyond n_gen={n_gen}")
    values = arr[..., ch.index - 1]
    if ch.is_relative:
        values = values - arr[..., ch.reference - 1]
    return values


def time_indices(grid, times, tol=1e-9) -> np.ndarray:
    """Positions of ``times`` in the sorted ``grid``; ContractError if off-grid."""
    grid = np.asarray(grid, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    pos = np.clip(np.searchsorted(grid, times), 0, len(grid) - 1)
    left = np.clip(pos - 1, 0, len(grid) - 1)
    pick = np.where(np.abs(grid[left] - times) < np.abs(grid[pos] - times), left, pos)
    bad = np.abs(grid[pick] - times) > tol * max(1.0, float(np.abs(grid).max(initial=0.0)))
    if np.any(bad):
        raise ContractError(f"times not on the grid: {times[bad][:5]}")
    return pick


@dataclass
class MomentTable:
    """Ensemble means per channel and two-time covariances per unordered channel pair."""

    grid: np.ndarray
    channels: tuple
    means: dict
    covs: dict
    n_mc: int

    def _order(self, a, b):
        ia, ib = self.channels.index(a), self.channels.index(b)
        return (a, b, False) if ia <= ib else (b, a, True)

    def has(self, ch) -> bool:
        return ch in self.channels

    def mean(self, ch) -> np.ndarray:
        if ch not in self.means:
            raise ContractError(f"channel {ch} not in moment table")
        return self.means[ch]

    def cov(self, a, b) -> np.ndarray:
        """K_ab(t_i, t_j) over the full grid."""
        if a not in self.channels or b not in self.channels:
            raise ContractError(f"pair ({a}, {b}) not in moment table")
        first, second, swapped = self._order(a, b)
        block = self.covs[(first, second)]
        return block.T if swapped else block

    def std(self, ch) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov(ch, ch)), 0.0))

    def write_csv(self, path) -> Path:
        """Mean and standard-deviation curves, one row per grid time."""
        path = Path(path)
        cols = [self.grid]
        header = ["t"]
        for ch in self.channels:
            header += [f"{ch.label}_mean", f"{ch.label}_std"]
            cols += [self.mean(ch), self.std(ch)]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in np.column_stack(cols):
                writer.writerow([repr(float(v)) for v in row])
        return path

    def save(self, path) -> Path:
        meta = {"channels": [ch.label for ch in self.channels], "n_mc": int(self.n_mc)}
        arrays = [self.grid, np.array([self.means[ch] for ch in self.channels])]
        n = len(self.channels)
        for i in range(n):
            for j in range(i, n):
                arrays.append(self.covs[(self.channels[i], self.channels[j])])
        return container.write_container(path, container.KIND_MOMENTS, self.n_mc, len(self.grid), n,
                                         meta, arrays)

    @classmethod
    def load(cls, path) -> "MomentTable":
        _, hdr, meta, payload = container.read_container(path, container.KIND_MOMENTS)
        t, n = hdr["n_steps"], hdr["n_gen"]
        channels = tuple(parse_channel(s) for s in meta["channels"])
        expected = t + n * t + n * (n + 1) // 2 * t * t
        if payload.size != expected or len(channels) != n:
            raise ContractError(f"{path}: payload size does not match header")
        grid = payload[:t].copy()
        means_arr = payload[t:t + n * t].reshape(n, t)
        means = {ch: means_arr[i].copy() for i, ch in enumerate(channels)}
        covs = {}
        offset = t + n * t
        for i in range(n):
            for j in range(i, n):
                covs[(channels[i], channels[j])] = payload[offset:offset + t * t].reshape(t, t).copy()
                offset += t * t
        return cls(grid, channels, means, covs, int(meta["n_mc"]))


def ensemble_moments(ens, channels: Sequence[StateChannel], grid=None) -> MomentTable:
    """Sample means and two-time covariances of ``channels`` on ``grid``.

    Relative channels are formed member by member before any averaging.
    """
    n_mc = ens.n_members
    if n_mc < 2:
        raise ContractError("need at least two ensemble members")
    channels = tuple(dict.fromkeys(parse_channel(c) for c in channels))
    if not channels:
        raise ContractError("no channels requested")
    grid = np.asarray(ens.times if grid is None else grid, dtype=float)
    idx = time_indices(ens.times, grid)

    means, anomalies = {}, {}
    for ch in channels:
        values = channel_values(ens, ch)[:, idx]
        mu = values.mean(axis=0)
        means[ch] = mu
        anomalies[ch] = values - mu
    covs = {}
    for i, a in enumerate(channels):
        for b in channels[i:]:
            covs[(a, b)] = anomalies[a].T @ anomalies[b] / (n_mc - 1)
    return MomentTable(ens.times[idx].copy(), channels, means, covs, n_mc)


def relative_channel_stats(table: MomentTable, k: int, ref: int, kind: str = "theta"):
    """Mean and covariance of X_k - X_ref from raw-channel entries by linearity."""
    if k == ref:
        raise ContractError("relative channel needs k != ref")
    a, r = StateChannel(kind, k), StateChannel(kind, ref)
    for ch in (a, r):
        if not table.has(ch):
            raise ContractError(f"raw channel {ch} missing from moment table")
    mean = table.mean(a) - table.mean(r)
    cov = table.cov(a, a) + table.cov(r, r) - table.cov(a, r) - table.cov(r, a)
    return mean, cov


def _terms(table, ch):
    """Linear decomposition of a channel into stored channels: [(coef, channel)]."""
    if table.has(ch):
        return [(1.0, ch)]
    if ch.is_relative:
        a, r = ch.raw_parts()
        if table.has(a) and table.has(r):
            return [(1.0, a), (-1.0, r)]
    raise ContractError(f"channel {ch} not available in moment table")


def _mean(table, ch):
    return sum(c * table.mean(s) for c, s in _terms(table, ch))


def _cross(table, a, b, ia, ib):
    out = 0.0
    for ca, sa in _terms(table, a):
        for cb, sb in _terms(table, b):
            out = out + ca * cb * table.cov(sa, sb)[np.ix_(ia, ib)]
    return out


@dataclass
class JointGp:
    """Prior mean and covariance blocks for observed and target (channel, time) pairs."""

    mean_obs: np.ndarray
    mean_target: np.ndarray
    k_oo: np.ndarray
    k_ot: np.ndarray
    k_tt: np.ndarray
    obs_layout: list
    target_layout: list
    noise_var: np.ndarray = field(default=None)

    def __post_init__(self):
        n_o, n_t = len(self.obs_layout), len(self.target_layout)
        if self.k_oo.shape != (n_o, n_o) or self.k_ot.shape != (n_o, n_t) or self.k_tt.shape != (n_t, n_t):
            raise ContractError("covariance blocks do not match the layouts")
        if self.mean_obs.shape != (n_o,) or self.mean_target.shape != (n_t,):
            raise ContractError("mean vectors do not match the layouts")
        if self.noise_var is None:
            self.noise_var = np.zeros(n_o)


def _layout(channels, times):
    return [(ch, float(t)) for ch in channels for t in times]


def assemble_joint(table: MomentTable, obs_channels, obs_times, noise_std,
                   target_channels, target_times) -> JointGp:
    """Build the joint prior of observations and targets.

    ``noise_std`` is a scalar or one value per observed channel; its square is
    added to the diagonal of the observed block only. Rows with zero noise get
    a jitter of 1e-10 times the largest prior variance instead.
    """
    obs_channels = [parse_channel(c) for c in obs_channels]
    target_channels = [parse_channel(c) for c in target_channels]
    if not obs_channels or len(np.atleast_1d(obs_times)) == 0:
        raise ContractError("observation spec is empty")
    io = time_indices(table.grid, obs_times)
    it = time_indices(table.grid, target_times)
    noise_std = np.broadcast_to(np.asarray(noise_std, dtype=float), (len(obs_channels),))
    if np.any(noise_std < 0):
        raise ContractError("noise std must be non-negative")

    mean_obs = np.concatenate([_mean(table, c)[io] for c in obs_channels])
    mean_tgt = (np.concatenate([_mean(table, c)[it] for c in target_channels])
                if target_channels else np.zeros(0))

    def block(rows, ri, cols, ci):
        if not rows or not cols:
            return np.zeros((len(rows) * len(ri), len(cols) * len(ci)))
        return np.block([[_cross(table, a, b, ri, ci) for b in cols] for a in rows])

    k_oo = block(obs_channels, io, obs_channels, io)
    k_oo = 0.5 * (k_oo + k_oo.T)
    k_ot = block(obs_channels, io, target_channels, it)
    k_tt = block(target_channels, it, target_channels, it)
    k_tt = 0.5 * (k_tt + k_tt.T)

    noise_var = np.repeat(noise_std ** 2, len(io))
    jitter = JITTER * max(float(np.max(np.diag(k_oo))), np.finfo(float).tiny)
    k_oo[np.diag_indices_from(k_oo)] += np.where(noise_var > 0, noise_var, jitter)

    return JointGp(mean_obs, mean_tgt, k_oo, k_ot, k_tt,
                   _layout(obs_channels, table.grid[io]), _layout(target_channels, table.grid[it]),
                   noise_var)
