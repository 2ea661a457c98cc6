"""Flat parameter vectors: the unit of aggregation, optimization and transport.

A `ModelSnapshot` is an ordered float64 vector plus the method family it
parameterizes.  The on-disk form is little-endian:

    magic "FTPGSNP1" | u32 version=1 | u32 method id | u32 count | count * f64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, ParameterError, ShapeError, StoreFormatError, StoreIOError

SNAPSHOT_MAGIC = b"FTPGSNP1"
SNAPSHOT_VERSION = 1

# Method ids on disk: one per parameterization family.
METHOD_IDS = {"fedtpg": 1, "fixed": 2}
_ID_METHODS = {v: k for k, v in METHOD_IDS.items()}


@dataclass(frozen=True)
class ModelSnapshot:
    """Flat, ordered parameter vector for one method family."""

    method: str
    values: np.ndarray

    def __post_init__(self):
        if self.method not in METHOD_IDS:
            raise ParameterError(f"unknown snapshot method {self.method!r}")
        v = np.array(self.values, dtype=np.float64, copy=True).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values: np.ndarray) -> "ModelSnapshot":
        return ModelSnapshot(self.method, values)


def sgd_momentum_step(
    params: ModelSnapshot,
    grads: ModelSnapshot,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[ModelSnapshot, np.ndarray]:
    """One classic heavy-ball step with coupled L2 decay.

    g' = g + weight_decay * theta;  v <- momentum * v + g';  theta <- theta - lr * v.
    Returns the updated snapshot and velocity; arguments are left untouched.
    """
    if lr < 0.0:
        raise ParameterError(f"lr must be >= 0, got {lr}")
    v = np.asarray(velocity, dtype=np.float64)
    if not (len(params) == len(grads) == v.size):
        raise ShapeError(
            f"sgd step: params {len(params)}, grads {len(grads)}, velocity {v.size}"
        )
    g = grads.values + weight_decay * params.values
    v_new = momentum * v + g
    theta = params.values - lr * v_new
    return params.with_values(theta), v_new


def finite_diff_grad(
    f: Callable[[ModelSnapshot], float],
    theta: ModelSnapshot,
    h: float = 1e-5,
) -> ModelSnapshot:
    """Central-difference gradient of a scalar function of a snapshot."""
    if h <= 0.0:
        raise ParameterError(f"step h must be > 0, got {h}")
    base = theta.values
    out = np.zeros_like(base)
    for i in range(base.size):
        up = base.copy()
        up[i] += h
        dn = base.copy()
        dn[i] -= h
        fu = float(f(theta.with_values(up)))
        fd = float(f(theta.with_values(dn)))
        if not (np.isfinite(fu) and np.isfinite(fd)):
            raise NumericError(f"non-finite objective at coordinate {i}")
        out[i] = (fu - fd) / (2.0 * h)
    return theta.with_values(out)


def save_snapshot(snap: ModelSnapshot, path) -> None:
    payload = snap.values.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<III", SNAPSHOT_VERSION, METHOD_IDS[snap.method], len(snap)))
        fh.write(payload)


def load_snapshot(path) -> ModelSnapshot:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != SNAPSHOT_MAGIC:
        raise StoreFormatError(f"bad snapshot magic {blob[:8]!r}")
    if len(blob) < 20:
        raise StoreIOError(f"snapshot truncated at byte {len(blob)}: header incomplete")
    version, method_id, count = struct.unpack_from("<III", blob, 8)
    if version != SNAPSHOT_VERSION:
        raise StoreFormatError(f"unsupported snapshot version {version}")
    if method_id not in _ID_METHODS:
        raise StoreFormatError(f"unknown snapshot method id {method_id}")
    need = 20 + 8 * count
    if len(blob) < need:
        raise StoreIOError(f"snapshot truncated at byte {len(blob)}: expected {need}")
    values = np.frombuffer(blob, dtype="<f8", count=count, offset=20)
    return ModelSnapshot(_ID_METHODS[method_id], values)
