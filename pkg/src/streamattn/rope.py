"""Rotary position embedding over real-valued positions.

A head vector of even width d is treated as d/2 two-dimensional lanes,
lane i holding components (2i, 2i+1). Rotating a vector "to position m"
spins lane i by angle m * theta_i with theta_i = base**(-2i/d). Because
lane rotations are orthogonal and angles add, the attention score between
a query at position n and a key at position m depends only on the offset:

    dot(rotate(q, n), rotate(k, m)) == q . R(m - n) k

Positions are floats on purpose: the group encoding places the target
stream at a configurable real offset (0.5 is a legal offset), so nothing
here assumes integer positions. Angle computation always runs in float64
regardless of the activation dtype; results are cast back afterwards.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RotaryParams:
    """Frequency layout for one attention head width."""

    head_dim: int
    base: float = 10000.0
    thetas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2 != 0:
            raise ValueError(f"head_dim must be a positive even number, got {self.head_dim}")
        if self.base <= 0:
            raise ValueError(f"base must be positive, got {self.base}")
        lanes = np.arange(self.head_dim // 2, dtype=np.float64)
        object.__setattr__(self, "thetas", self.base ** (-2.0 * lanes / self.head_dim))


def _check_width(params: RotaryParams, x: np.ndarray):
    if x.shape[-1] != params.head_dim:
        raise ValueError(f"last axis is {x.shape[-1]}, rotary params expect {params.head_dim}")


def rotation_angles(params: RotaryParams, positions) -> np.ndarray:
    """Per-lane angles for the given positions, shape positions.shape + (d/2,).

    Always float64; this is the only place position values meet thetas.
    """
    pos = np.asarray(positions, dtype=np.float64)
    return pos[..., None] * params.thetas


def rotation_apply(params: RotaryParams, vec: np.ndarray, m) -> np.ndarray:
    """Rotate vectors to position m, i.e. R(m) @ vec applied blockwise.

    vec has shape (..., d); m broadcasts against vec.shape[:-1] (a scalar
    rotates every vector by the same position). Negative m is the inverse
    rotation; layouts only hand out non-negative positions, the backward
    pass uses the inverse internally. Output keeps vec's dtype.
    """
    vec = np.asarray(vec)
    _check_width(params, vec)
    angles = rotation_angles(params, m)
    cos = np.cos(angles)
    sin = np.sin(angles)
    even = vec[..., 0::2].astype(np.float64)
    odd = vec[..., 1::2].astype(np.float64)
    shape = np.broadcast(even, cos).shape[:-1] + (params.head_dim,)
    out = np.empty(shape, dtype=np.float64)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out.astype(vec.dtype, copy=False)


def relative_score(params: RotaryParams, q: np.ndarray, k: np.ndarray, n, m) -> np.ndarray:
    """Unscaled attention score of query q at position n against key k at m.

    Equals q . R(m - n) k; computed here as the rotated dot product
    dot(rotate(q, n), rotate(k, m)), which is the form the model uses.
    """
    qr = rotation_apply(params, np.asarray(q, dtype=np.float64), n)
    kr = rotation_apply(params, np.asarray(k, dtype=np.float64), m)
    return np.sum(qr * kr, axis=-1)


def group_positions(source_len: int, target_len: int, phi) -> np.ndarray:
    """Position ids of the group layout: source 0..M-1, target phi..phi+N-1."""
    if source_len < 0 or target_len < 0:
        raise ValueError("lengths must be non-negative")
    src = np.arange(source_len, dtype=np.float64)
    tgt = float(phi) + np.arange(target_len, dtype=np.float64)
    return np.concatenate([src, tgt])


def relative_distance_matrix(source_len: int, target_len: int, phi) -> np.ndarray:
    """Signed offset grid p(query) - p(key) under the group layout.

    Shape (M+N) x (M+N) with rows/cols ordered source-then-target. Entries
    for pairs a mask would forbid are populated anyway; this matrix feeds
    analysis, not attention.
    """
    p = group_positions(source_len, target_len, phi)
    return p[:, None] - p[None, :]
