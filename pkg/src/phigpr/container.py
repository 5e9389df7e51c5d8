"""
Versioned binary container for ensembles and moment tables.

Byte layout (all integers unsigned little-endian)::

    offset  size  field
    0       4     magic  b"PGRC"
    4       4     version (uint32, currently 1)
    8       4     kind    (uint32: 1 = ensemble, 2 = moment table)
    12      4     reserved, zero
    16      8     n_members (uint64)
    24      8     n_steps   (uint64, length of the time grid)
    32      8     n_gen     (uint64, generators or channels)
    40      8     meta_len  (uint64)
    48      meta_len bytes of UTF-8 JSON metadata
    ...     payload: little-endian float64 values, C order

Ensemble payload: times[n_steps], theta, omega, wind each [n_members, n_steps, n_gen].
Moment payload: grid[n_steps], means[n_channels, n_steps], then one
[n_steps, n_steps] covariance per unordered channel pair (i <= j, row-major
over i then j).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"PGRC"
VERSION = 1
KIND_ENSEMBLE = 1
KIND_MOMENTS = 2

_HEADER = struct.Struct("<4sIIIQQQQ")


def write_container(path, kind, n_members, n_steps, n_gen, meta, arrays):
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind, 0, n_members, n_steps, n_gen, len(meta_bytes)))
        fh.write(meta_bytes)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_container(path, expected_kind=None):
    """Return (kind, header dict, meta dict, flat float64 payload)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContractError(f"{path}: truncated header")
    magic, version, kind, _, n_members, n_steps, n_gen, meta_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ContractError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ContractError(f"{path}: unsupported container version {version}")
    if expected_kind is not None and kind != expected_kind:
        raise ContractError(f"{path}: container kind {kind}, expected {expected_kind}")
    start = _HEADER.size
    meta = json.loads(raw[start:start + meta_len].decode("utf-8"))
    payload = np.frombuffer(raw, dtype="<f8", offset=start + meta_len).astype(float)
    header = dict(n_members=n_members, n_steps=n_steps, n_gen=n_gen)
    return kind, header, meta, payload


def save_ensemble(ens, path):
    meta = {"seeds": [int(s) for s in ens.seeds]}
    return write_container(path, KIND_ENSEMBLE, ens.n_members, len(ens.times), ens.n_gen, meta,
                           [ens.times, ens.theta, ens.omega, ens.wind_fluct])


def load_ensemble(path):
    from .sde_sim import Ensemble

    _, hdr, meta, payload = read_container(path, KIND_ENSEMBLE)
    m, t, g = hdr["n_members"], hdr["n_steps"], hdr["n_gen"]
    if payload.size != t + 3 * m * t * g:
        raise ContractError(f"{path}: payload size does not match header")
    times = payload[:t]
    blocks = payload[t:].reshape(3, m, t, g)
    seeds = np.array(meta["seeds"], dtype=np.uint64)
    return Ensemble(times, blocks[0].copy(), blocks[1].copy(), blocks[2].copy(), seeds)
