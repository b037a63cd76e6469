"""Attention extraction and the visualization transforms.

The pipeline used for attention figures: capture a (query x key) weight
matrix, normalize each column to [0, 1], optionally apply a gamma curve,
and strip the first key column (the sink that absorbs bulk attention mass
and would otherwise dominate the scale). Exports are CSV (parseable back)
or a self-contained SVG heat grid.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, Parameters, forward
from .paradigm import ROLE_SOURCE, ArrangedSequence


@dataclass(frozen=True)
class AttentionMap:
    layer: int
    head: int
    matrix: np.ndarray      # (query, key) weights, rows sum to 1 over allowed keys
    query_roles: tuple      # per-row "S"/"T"
    key_roles: tuple        # per-column "S"/"T"


def capture_attention_map(cfg: ModelConfig, params: Parameters, arr: ArrangedSequence,
                          layer: int, head: int) -> AttentionMap:
    if not (0 <= layer < cfg.layers):
        raise ValueError(f"layer {layer} outside [0, {cfg.layers})")
    if not (0 <= head < cfg.heads):
        raise ValueError(f"head {head} outside [0, {cfg.heads})")
    out = forward(cfg, params, arr, capture_attention=True)
    roles = tuple("S" if r == ROLE_SOURCE else "T" for r in arr.roles)
    return AttentionMap(
        layer=layer, head=head,
        matrix=np.asarray(out.attention[layer][head], dtype=np.float64),
        query_roles=roles, key_roles=roles,
    )


def normalize_columns(a: np.ndarray) -> np.ndarray:
    """Column-wise min-max rescale to [0, 1]; constant columns map to 0."""
    a = np.asarray(a, dtype=np.float64)
    lo = a.min(axis=0, keepdims=True)
    hi = a.max(axis=0, keepdims=True)
    span = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (a - lo) / span
    return np.where(span == 0, 0.0, out)


def gamma_transform(a: np.ndarray, gamma: float = 0.5) -> np.ndarray:
    """Entrywise power curve over values in [0, 1]."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    a = np.asarray(a, dtype=np.float64)
    if a.size and (a.min() < -1e-12 or a.max() > 1 + 1e-12):
        raise ValueError("gamma_transform expects entries in [0, 1]; normalize first")
    return np.clip(a, 0.0, 1.0) ** gamma


def sink_strip(a: np.ndarray):
    """Drop key column 0 (the attention sink). Returns the narrowed matrix."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got {a.ndim} axes")
    if a.shape[1] < 2:
        raise ValueError("cannot strip the sink column of a single-column matrix")
    return a[:, 1:]


def band_mass_fraction(a: np.ndarray, query_positions, key_positions, band: float) -> float:
    """Fraction of total weight lying within |p(query) - p(key)| <= band."""
    a = np.asarray(a, dtype=np.float64)
    qp = np.asarray(query_positions, dtype=np.float64)
    kp = np.asarray(key_positions, dtype=np.float64)
    total = a.sum()
    if total <= 0:
        raise ValueError("matrix has no mass")
    inside = np.abs(qp[:, None] - kp[None, :]) <= band
    return float(a[inside].sum() / total)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def export_csv(a: np.ndarray, path):
    """Header row of key indices, then one row of 6-significant-digit
    decimals per query."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(str(j) for j in range(a.shape[1])) + "\n")
        for row in a:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def load_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty CSV")
    rows = [[float(tok) for tok in ln.split(",")] for ln in lines[1:]]
    return np.asarray(rows, dtype=np.float64)


_CELL = 14
_MARGIN = 22


def export_svg(a, path, query_roles=None, key_roles=None):
    """Grayscale heat grid; darker = more weight. Role letters label both
    axes when provided (an AttentionMap carries them)."""
    if isinstance(a, AttentionMap):
        query_roles = a.query_roles
        key_roles = a.key_roles
        a = a.matrix
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    rows, cols = a.shape
    w = cols * _CELL + _MARGIN
    h = rows * _CELL + _MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    lo, hi = float(a.min()), float(a.max())
    span = hi - lo if hi > lo else 1.0
    for i in range(rows):
        for j in range(cols):
            v = (a[i, j] - lo) / span
            shade = int(round(255 * (1.0 - v)))
            parts.append(
                f'<rect x="{_MARGIN + j * _CELL}" y="{_MARGIN + i * _CELL}" '
                f'width="{_CELL}" height="{_CELL}" fill="rgb({shade},{shade},{shade})"/>'
            )
    style = 'font-family="monospace" font-size="9"'
    if key_roles is not None:
        for j, r in enumerate(key_roles[:cols]):
            parts.append(
                f'<text x="{_MARGIN + j * _CELL + 4}" y="{_MARGIN - 6}" {style}>{r}</text>'
            )
    if query_roles is not None:
        for i, r in enumerate(query_roles[:rows]):
            parts.append(
                f'<text x="6" y="{_MARGIN + i * _CELL + 10}" {style}>{r}</text>'
            )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")


def export(obj, path, format: str = "csv"):
    if format == "csv":
        export_csv(obj.matrix if isinstance(obj, AttentionMap) else obj, path)
    elif format == "svg":
        export_svg(obj, path)
    else:
        raise ValueError(f"format must be 'csv' or 'svg', got {format!r}")
