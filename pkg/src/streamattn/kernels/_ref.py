"""Numpy reference implementations of the decode-time kernels.

Both backends promise the same numerics: angles, softmax, and all dot
products are accumulated in float64 and cast back to the input dtype at
the end, so fp32 caches still get stable attention.
"""

import numpy as np


def rotate(x: np.ndarray, positions: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Rotary-rotate x (N, H, d) to positions (N,); returns x's dtype."""
    ang = np.asarray(positions, dtype=np.float64)[:, None] * thetas[None, :]
    cos = np.cos(ang)[:, None, :]
    sin = np.sin(ang)[:, None, :]
    even = x[..., 0::2].astype(np.float64)
    odd = x[..., 1::2].astype(np.float64)
    out = np.empty(x.shape, dtype=np.float64)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out.astype(x.dtype, copy=False)


def attend(q: np.ndarray, keys: np.ndarray, values: np.ndarray, scale: float) -> np.ndarray:
    """Single-query attention: q (H, d), keys/values (N, H, d) -> (H, d)."""
    if keys.shape[0] == 0:
        raise ValueError("attend needs at least one key")
    q64 = q.astype(np.float64)
    k64 = keys.astype(np.float64)
    v64 = values.astype(np.float64)
    scores = np.einsum("hd,nhd->hn", q64, k64) * scale
    scores -= scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    out = np.einsum("hn,nhd->hd", w, v64)
    return out.astype(q.dtype, copy=False)
