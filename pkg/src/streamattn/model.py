"""Minimal decoder-only transformer over ArrangedSequence layouts.

Architecture: pre-norm residual blocks (RMSNorm gains, no biases anywhere),
multi-head attention with rotary positions taken from the arrangement,
tanh-GELU feed-forward, optional tied output head. Masking is additive
-inf before softmax, so forbidden attention weights are exactly zero.

The backward pass is hand-written reverse mode and exact; rotary rotation
backpropagates as the inverse rotation (the rotation is orthogonal). All
trig runs in float64 whatever the activation precision.

Training-time position removal ("constant position id 0" for a chosen
role) is an override applied to arrangement positions, not a code path
inside the network.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID, PAD_ID
from .paradigm import ROLE_SOURCE, ROLE_TARGET, ArrangedSequence, Paradigm, arrange, waitk_schedule
from .rope import RotaryParams

_DTYPES = {"fp32": np.float32, "fp64": np.float64}
_RMS_EPS = 1e-6

POS_ZERO_MODES = ("none", "source", "target", "all")


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    heads: int
    d_model: int
    vocab_size: int
    max_positions: int
    ffn_mult: int = 4
    precision: str = "fp64"
    tied_head: bool = False
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if (self.d_model // self.heads) % 2 != 0:
            raise ValueError(f"head dim {self.d_model // self.heads} must be even for rotary")
        if self.precision not in _DTYPES:
            raise ValueError(f"precision must be one of {tuple(_DTYPES)}, got {self.precision}")
        if min(self.layers, self.heads, self.vocab_size, self.max_positions, self.ffn_mult) < 1:
            raise ValueError("layers, heads, vocab_size, max_positions, ffn_mult must be >= 1")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def d_ffn(self) -> int:
        return self.d_model * self.ffn_mult

    @property
    def dtype(self):
        return _DTYPES[self.precision]

    @property
    def rotary(self) -> RotaryParams:
        return RotaryParams(head_dim=self.d_head, base=self.rope_base)

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "heads": self.heads,
            "d_model": self.d_model,
            "vocab_size": self.vocab_size,
            "max_positions": self.max_positions,
            "ffn_mult": self.ffn_mult,
            "precision": self.precision,
            "tied_head": self.tied_head,
            "rope_base": self.rope_base,
        }


@dataclass
class Parameters:
    """Named tensors; insertion order is the checkpoint layout order."""

    tensors: dict[str, np.ndarray]
    tied_head: bool

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def head_matrix(self) -> np.ndarray:
        return self.tensors["embed"].T if self.tied_head else self.tensors["head"]


@dataclass
class ForwardOutput:
    logits: np.ndarray                      # (T, vocab)
    attention: list[np.ndarray] | None      # per layer (H, T, T), on request


def tensor_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    shapes = {"embed": (cfg.vocab_size, cfg.d_model)}
    for i in range(cfg.layers):
        shapes[f"L{i}.attn_norm"] = (cfg.d_model,)
        shapes[f"L{i}.wq"] = (cfg.d_model, cfg.d_model)
        shapes[f"L{i}.wk"] = (cfg.d_model, cfg.d_model)
        shapes[f"L{i}.wv"] = (cfg.d_model, cfg.d_model)
        shapes[f"L{i}.wo"] = (cfg.d_model, cfg.d_model)
        shapes[f"L{i}.ffn_norm"] = (cfg.d_model,)
        shapes[f"L{i}.w1"] = (cfg.d_model, cfg.d_ffn)
        shapes[f"L{i}.w2"] = (cfg.d_ffn, cfg.d_model)
    shapes["final_norm"] = (cfg.d_model,)
    if not cfg.tied_head:
        shapes["head"] = (cfg.d_model, cfg.vocab_size)
    return shapes


def init_parameters(cfg: ModelConfig, seed: int) -> Parameters:
    rng = np.random.default_rng(seed)
    dt = cfg.dtype
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        if name.endswith("norm"):
            tensors[name] = np.ones(shape, dtype=dt)
        else:
            std = 0.02
            if name.endswith(("wo", "w2")):  # residual-write projections
                std = 0.02 / math.sqrt(2 * cfg.layers)
            tensors[name] = rng.normal(0.0, std, size=shape).astype(dt)
    return Parameters(tensors=tensors, tied_head=cfg.tied_head)


def rmsnorm(x: np.ndarray, gain: np.ndarray):
    inv = 1.0 / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + _RMS_EPS)
    return x * inv * gain, inv


def rmsnorm_backward(dy, x, inv, gain):
    d = x.shape[-1]
    dgain = np.sum(dy * x * inv, axis=tuple(range(x.ndim - 1)))
    gx = np.sum(dy * gain * x, axis=-1, keepdims=True)
    dx = dy * gain * inv - x * (gx * inv**3 / d)
    return dx, dgain


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def gelu_backward(dy, x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def _trig_tables(positions: np.ndarray, thetas: np.ndarray, dtype):
    ang = positions.astype(np.float64)[..., None] * thetas
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def _rope_apply(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (B, T, H, d); cos/sin: (B, T, d/2), broadcast over heads
    c = cos[:, :, None, :]
    s = sin[:, :, None, :]
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out


def _rope_unapply(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # inverse rotation = transpose; gradients flow through it this way
    c = cos[:, :, None, :]
    s = sin[:, :, None, :]
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * c + odd * s
    out[..., 1::2] = -even * s + odd * c
    return out


@dataclass
class Batch:
    """Padded forward inputs. cross_positions, when set, replaces the query
    position against source-role key columns (the decode oracle for
    position-re-encoding needs per-row query positions; training never
    sets it)."""

    tokens: np.ndarray          # (B, T) int64
    positions: np.ndarray       # (B, T) float64
    attn_mask: np.ndarray       # (B, T, T) bool
    labels: np.ndarray          # (B, T) int64, -1 = no loss
    loss_mask: np.ndarray       # (B, T) bool
    roles: np.ndarray           # (B, T) int8
    cross_positions: np.ndarray | None = None


def batch_from_arrangement(arr: ArrangedSequence, cross_positions=None) -> Batch:
    return Batch(
        tokens=arr.tokens[None, :],
        positions=arr.positions[None, :],
        attn_mask=arr.attn_mask[None, :, :],
        labels=arr.labels[None, :],
        loss_mask=arr.loss_mask[None, :],
        roles=arr.roles[None, :],
        cross_positions=None if cross_positions is None else np.asarray(cross_positions)[None, :],
    )


def collate(arrs: list[ArrangedSequence], pad_to: int | None = None) -> Batch:
    """Pad arrangements to a common length. Padding rows hold PAD tokens at
    position 0, attend only themselves, and carry no loss."""
    t = max(len(a) for a in arrs)
    if pad_to is not None:
        t = max(t, pad_to)
    b = len(arrs)
    tokens = np.full((b, t), PAD_ID, dtype=np.int64)
    positions = np.zeros((b, t), dtype=np.float64)
    mask = np.zeros((b, t, t), dtype=bool)
    labels = np.full((b, t), -1, dtype=np.int64)
    loss = np.zeros((b, t), dtype=bool)
    roles = np.full((b, t), ROLE_SOURCE, dtype=np.int8)
    for i, a in enumerate(arrs):
        n = len(a)
        tokens[i, :n] = a.tokens
        positions[i, :n] = a.positions
        mask[i, :n, :n] = a.attn_mask
        labels[i, :n] = a.labels
        loss[i, :n] = a.loss_mask
        roles[i, :n] = a.roles
        if n < t:
            mask[i, range(n, t), range(n, t)] = True
    return Batch(tokens=tokens, positions=positions, attn_mask=mask,
                 labels=labels, loss_mask=loss, roles=roles)


def _check_batch(cfg: ModelConfig, batch: Batch):
    if batch.tokens.min() < 0 or batch.tokens.max() >= cfg.vocab_size:
        raise ValueError(
            f"token ids must lie in [0, {cfg.vocab_size}), got range "
            f"[{batch.tokens.min()}, {batch.tokens.max()}]"
        )
    span = float(np.ptp(batch.positions))
    if batch.cross_positions is not None:
        lo = min(batch.positions.min(), batch.cross_positions.min())
        hi = max(batch.positions.max(), batch.cross_positions.max())
        span = float(hi - lo)
    if span + 1 > cfg.max_positions:
        raise ValueError(
            f"position span {span + 1:g} exceeds max_positions {cfg.max_positions}; "
            "relative distances past the trained context are undefined"
        )


def _forward_batch(cfg: ModelConfig, params: Parameters, batch: Batch,
                   capture_attention: bool = False, want_cache: bool = False):
    """Returns (logits, attn or None, cache or None).

    cache holds every intermediate the backward pass needs, in forward order.
    """
    _check_batch(cfg, batch)
    if want_cache and batch.cross_positions is not None:
        raise NotImplementedError("backward is not defined for cross-position forwards")
    dt = cfg.dtype
    thetas = cfg.rotary.thetas
    cos, sin = _trig_tables(batch.positions, thetas, dt)
    cross = None
    if batch.cross_positions is not None:
        ccos, csin = _trig_tables(batch.cross_positions, thetas, dt)
        src_cols = (batch.roles == ROLE_SOURCE)[:, None, None, :]  # key-column mask
        cross = (ccos, csin, src_cols)

    b, t = batch.tokens.shape
    h_n, dh = cfg.heads, cfg.d_head
    scale = dt(1.0 / math.sqrt(dh))
    neg_inf = dt(-np.inf)
    mask4 = batch.attn_mask[:, None, :, :]

    x = params["embed"][batch.tokens]
    attn_maps = [] if capture_attention else None
    cache = {"layers": []} if want_cache else None

    for i in range(cfg.layers):
        g1 = params[f"L{i}.attn_norm"]
        h, inv1 = rmsnorm(x, g1)
        q = (h @ params[f"L{i}.wq"]).reshape(b, t, h_n, dh)
        k = (h @ params[f"L{i}.wk"]).reshape(b, t, h_n, dh)
        v = (h @ params[f"L{i}.wv"]).reshape(b, t, h_n, dh)
        q_r = _rope_apply(q, cos, sin)
        k_r = _rope_apply(k, cos, sin)
        scores = np.einsum("bthd,bshd->bhts", q_r, k_r) * scale
        if cross is not None:
            ccos, csin, src_cols = cross
            q_c = _rope_apply(q, ccos, csin)
            cross_scores = np.einsum("bthd,bshd->bhts", q_c, k_r) * scale
            scores = np.where(src_cols, cross_scores, scores)
        scores = np.where(mask4, scores, neg_inf)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        if capture_attention:
            attn_maps.append(attn)
        ctx = np.einsum("bhts,bshd->bthd", attn, v).reshape(b, t, cfg.d_model)
        x1 = x + ctx @ params[f"L{i}.wo"]

        g2 = params[f"L{i}.ffn_norm"]
        h2, inv2 = rmsnorm(x1, g2)
        a1 = h2 @ params[f"L{i}.w1"]
        ff = gelu(a1)
        x2 = x1 + ff @ params[f"L{i}.w2"]

        if want_cache:
            cache["layers"].append(
                {"x0": x, "inv1": inv1, "h": h, "q_r": q_r, "k_r": k_r, "v": v,
                 "attn": attn, "ctx": ctx, "x1": x1, "inv2": inv2, "h2": h2,
                 "a1": a1, "ff": ff}
            )
        x = x2

    hf, invf = rmsnorm(x, params["final_norm"])
    logits = hf @ params.head_matrix()
    if want_cache:
        cache["x_final"] = x
        cache["invf"] = invf
        cache["hf"] = hf
        cache["cos"] = cos
        cache["sin"] = sin
    return logits, attn_maps, cache


def forward(cfg: ModelConfig, params: Parameters, arr: ArrangedSequence,
            capture_attention: bool = False, cross_positions=None) -> ForwardOutput:
    batch = batch_from_arrangement(arr, cross_positions=cross_positions)
    logits, attn, _ = _forward_batch(cfg, params, batch, capture_attention=capture_attention)
    return ForwardOutput(
        logits=logits[0],
        attention=None if attn is None else [a[0] for a in attn],
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss(out: ForwardOutput, arr: ArrangedSequence) -> float:
    """Mean negative log-likelihood of arr.labels over arr.loss_mask rows."""
    if not arr.loss_mask.any():
        raise ValueError("arrangement has no loss positions")
    rows = np.flatnonzero(arr.loss_mask)
    logp = _log_softmax(out.logits[rows].astype(np.float64))
    return float(-logp[np.arange(len(rows)), arr.labels[rows]].mean())


def loss_and_grads(cfg: ModelConfig, params: Parameters, batch: Batch):
    """Forward + exact reverse-mode gradients, averaged over loss rows."""
    if not batch.loss_mask.any():
        raise ValueError("batch has no loss positions")
    logits, _, cache = _forward_batch(cfg, params, batch, want_cache=True)

    b, t = batch.tokens.shape
    n_loss = int(batch.loss_mask.sum())
    logp = _log_softmax(logits.astype(np.float64))
    safe_labels = np.where(batch.loss_mask, batch.labels, 0)
    picked = np.take_along_axis(logp, safe_labels[..., None], axis=-1)[..., 0]
    total = -float(picked[batch.loss_mask].sum()) / n_loss

    dt = cfg.dtype
    dlogits = np.exp(logp)
    bi = np.arange(b)[:, None]
    ti = np.arange(t)[None, :]
    dlogits[bi, ti, safe_labels] -= 1.0
    dlogits *= batch.loss_mask[..., None] / n_loss
    dlogits = dlogits.astype(dt)

    grads = {name: np.zeros_like(arr) for name, arr in params.tensors.items()}
    hf = cache["hf"]
    if params.tied_head:
        grads["embed"] += np.einsum("btv,btd->vd", dlogits, hf)
        dhf = dlogits @ params["embed"]
    else:
        grads["head"] += np.einsum("btd,btv->dv", hf, dlogits)
        dhf = dlogits @ params["head"].T
    dx, dg = rmsnorm_backward(dhf, cache["x_final"], cache["invf"], params["final_norm"])
    grads["final_norm"] += dg

    cos, sin = cache["cos"], cache["sin"]
    h_n, dh = cfg.heads, cfg.d_head
    scale = dt(1.0 / math.sqrt(dh))

    for i in reversed(range(cfg.layers)):
        c = cache["layers"][i]
        # feed-forward block
        dff = dx @ params[f"L{i}.w2"].T
        grads[f"L{i}.w2"] += np.einsum("btf,btd->fd", c["ff"], dx)
        da1 = gelu_backward(dff, c["a1"])
        grads[f"L{i}.w1"] += np.einsum("btd,btf->df", c["h2"], da1)
        dh2 = da1 @ params[f"L{i}.w1"].T
        dx1_n, dg2 = rmsnorm_backward(dh2, c["x1"], c["inv2"], params[f"L{i}.ffn_norm"])
        grads[f"L{i}.ffn_norm"] += dg2
        dx1 = dx + dx1_n
        # attention block
        dctx_flat = dx1 @ params[f"L{i}.wo"].T
        grads[f"L{i}.wo"] += np.einsum("btd,bte->de",
                                       c["ctx"], dx1)
        dctx = dctx_flat.reshape(b, t, h_n, dh)
        dattn = np.einsum("bthd,bshd->bhts", dctx, c["v"])
        dv = np.einsum("bhts,bthd->bshd", c["attn"], dctx)
        dscores = c["attn"] * (dattn - np.sum(dattn * c["attn"], axis=-1, keepdims=True))
        dscores *= scale
        dq_r = np.einsum("bhts,bshd->bthd", dscores, c["k_r"])
        dk_r = np.einsum("bhts,bthd->bshd", dscores, c["q_r"])
        dq = _rope_unapply(dq_r, cos, sin).reshape(b, t, cfg.d_model)
        dk = _rope_unapply(dk_r, cos, sin).reshape(b, t, cfg.d_model)
        dv = dv.reshape(b, t, cfg.d_model)
        grads[f"L{i}.wq"] += np.einsum("btd,bte->de", c["h"], dq)
        grads[f"L{i}.wk"] += np.einsum("btd,bte->de", c["h"], dk)
        grads[f"L{i}.wv"] += np.einsum("btd,bte->de", c["h"], dv)
        dh_pre = (dq @ params[f"L{i}.wq"].T + dk @ params[f"L{i}.wk"].T
                  + dv @ params[f"L{i}.wv"].T)
        dx0_n, dg1 = rmsnorm_backward(dh_pre, c["x0"], c["inv1"], params[f"L{i}.attn_norm"])
        grads[f"L{i}.attn_norm"] += dg1
        dx = dx1 + dx0_n

    np.add.at(grads["embed"], batch.tokens, dx)
    return total, grads


def backward(cfg: ModelConfig, params: Parameters, arr: ArrangedSequence) -> dict:
    """Gradients of loss() for a single arrangement."""
    _, grads = loss_and_grads(cfg, params, batch_from_arrangement(arr))
    return grads


@dataclass
class TrainHyper:
    lr: float = 1e-3
    steps: int = 2000
    batch_size: int = 16
    seed: int = 0
    k: int = 3
    pos_zero: str = "none"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.pos_zero not in POS_ZERO_MODES:
            raise ValueError(f"pos_zero must be one of {POS_ZERO_MODES}, got {self.pos_zero!r}")
        if self.steps < 0 or self.batch_size < 1 or self.k < 1:
            raise ValueError("steps must be >= 0, batch_size and k >= 1")


def remove_positions(positions: np.ndarray, roles: np.ndarray, mode: str) -> np.ndarray:
    """Assign constant position 0 to the chosen role(s); 'none' is identity."""
    if mode not in POS_ZERO_MODES:
        raise ValueError(f"pos_zero must be one of {POS_ZERO_MODES}, got {mode!r}")
    if mode == "none":
        return positions
    out = positions.copy()
    if mode in ("source", "all"):
        out[roles == ROLE_SOURCE] = 0.0
    if mode in ("target", "all"):
        out[roles == ROLE_TARGET] = 0.0
    return out


def training_arrangement(pair, paradigm: Paradigm, k: int, phi, bos_id: int = BOS_ID,
                         pos_zero: str = "none") -> ArrangedSequence:
    """Lay out one parallel pair for training: the target stream is
    BOS + target (EOS already terminal), so every content token and the
    EOS are predicted."""
    tgt_rows = np.concatenate([[bos_id], pair.target])
    sched = waitk_schedule(k, len(pair.source), len(tgt_rows))
    arr = arrange(paradigm, sched, phi, pair.source, tgt_rows)
    if pos_zero != "none":
        arr = ArrangedSequence(
            paradigm=arr.paradigm, tokens=arr.tokens, roles=arr.roles,
            arrival_index=arr.arrival_index,
            positions=remove_positions(arr.positions, arr.roles, pos_zero),
            attn_mask=arr.attn_mask, loss_mask=arr.loss_mask, labels=arr.labels,
            avail_src=arr.avail_src, source_len=arr.source_len,
            target_len=arr.target_len, phi=arr.phi,
        )
    return arr


def _step_lr(hyper: TrainHyper, step: int) -> float:
    """Linear warmup over the first 5% of steps, then cosine decay to 10%.

    Cold-started attention at full lr collapses into bad basins on some
    seeds; the warmup removes that seed dependence and the decay shrinks
    end-of-run variance.
    """
    warm = max(1, hyper.steps // 20)
    if step <= warm:
        return hyper.lr * step / warm
    frac = (step - warm) / max(1, hyper.steps - warm)
    return hyper.lr * (0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * frac)))


def train(cfg: ModelConfig, paradigm: Paradigm, phi, corpus: list, hyper: TrainHyper,
          bos_id: int = 1, init_seed: int | None = None):
    """Adam training over a fixed corpus; returns (Parameters, loss curve).

    Batches are drawn with replacement from the pre-built arrangements by a
    generator seeded with hyper.seed, so runs are reproducible. Divergence
    (NaN loss) raises, naming the step.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    arrs = [training_arrangement(p, paradigm, hyper.k, phi, bos_id, hyper.pos_zero)
            for p in corpus]
    params = init_parameters(cfg, hyper.seed if init_seed is None else init_seed)
    rng = np.random.default_rng(hyper.seed)
    m = {n: np.zeros_like(a) for n, a in params.tensors.items()}
    v = {n: np.zeros_like(a) for n, a in params.tensors.items()}
    curve = []
    for step in range(1, hyper.steps + 1):
        idx = rng.integers(0, len(arrs), size=hyper.batch_size)
        batch = collate([arrs[j] for j in idx])
        loss_val, grads = loss_and_grads(cfg, params, batch)
        if not np.isfinite(loss_val):
            raise RuntimeError(f"training diverged: loss became {loss_val} at step {step}")
        lr = _step_lr(hyper, step)
        b1c = 1.0 - hyper.beta1**step
        b2c = 1.0 - hyper.beta2**step
        for name, g in grads.items():
            m[name] = hyper.beta1 * m[name] + (1 - hyper.beta1) * g
            v[name] = hyper.beta2 * v[name] + (1 - hyper.beta2) * np.square(g)
            update = (m[name] / b1c) / (np.sqrt(v[name] / b2c) + hyper.eps)
            params.tensors[name] -= (lr * update).astype(params.tensors[name].dtype)
        curve.append(loss_val)
    return params, curve


def next_token_accuracy(cfg: ModelConfig, params: Parameters,
                        arrs: list[ArrangedSequence], batch_size: int = 64) -> float:
    """Teacher-forced argmax accuracy over loss positions."""
    hit = 0
    total = 0
    for i in range(0, len(arrs), batch_size):
        batch = collate(arrs[i : i + batch_size])
        logits, _, _ = _forward_batch(cfg, params, batch)
        pred = logits.argmax(axis=-1)
        hit += int((pred[batch.loss_mask] == batch.labels[batch.loss_mask]).sum())
        total += int(batch.loss_mask.sum())
    return hit / total if total else 1.0


_MAGIC = b"STRA"
_CKPT_VERSION = 1


def save_checkpoint(path, cfg: ModelConfig, params: Parameters, meta: dict | None = None):
    """Flat binary container: magic, JSON header, then little-endian tensors
    in header order."""
    header = {
        "version": _CKPT_VERSION,
        "config": cfg.to_dict(),
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    wire = "<f4" if cfg.precision == "fp32" else "<f8"
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(blob).to_bytes(4, "little"))
        f.write(blob)
        for arr in params.tensors.values():
            f.write(np.ascontiguousarray(arr, dtype=wire).tobytes())


def load_checkpoint(path):
    """Returns (cfg, params, meta). Shape or magic mismatch raises ValueError."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    n = int.from_bytes(raw[4:8], "little")
    header = json.loads(raw[8 : 8 + n].decode("utf-8"))
    if header["version"] != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    cfg = ModelConfig(**header["config"])
    wire = np.dtype("<f4" if cfg.precision == "fp32" else "<f8")
    expected = tensor_shapes(cfg)
    tensors = {}
    off = 8 + n
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected or expected[name] != shape:
            raise ValueError(f"{path}: tensor {name!r} with shape {shape} does not match config")
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype=wire, count=count, offset=off)
        off += count * wire.itemsize
        tensors[name] = arr.astype(cfg.dtype).reshape(shape)
    if set(tensors) != set(expected):
        missing = set(expected) - set(tensors)
        raise ValueError(f"{path}: missing tensors {sorted(missing)}")
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes after tensor payload")
    return cfg, Parameters(tensors=tensors, tied_head=cfg.tied_head), header["meta"]
