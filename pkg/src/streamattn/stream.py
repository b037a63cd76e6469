"""Wait-k streaming decoder over split source/target KV caches.

The session alternates read and write actions. A read appends newly
available source tokens to the source cache (encoded against prior source
only, or against the full history for the interleaved paradigm). A write
feeds the previous target token (the BOS prompt on the first write) as the
query, attends over both caches, emits the greedy argmax, and appends the
fed token's K/V to the target cache.

Keys are cached unrotated; each paradigm contributes only a position rule
saying where keys and queries get rotated to at attention time:

- group:         source key i at i, target key j at phi + j, fixed forever.
- batch-no-re:   keys frozen at their interleaved arrival indices.
- batch-pos-re:  target key j at S_now + j, re-rotated on every write.
- batch-all-re:  as pos-re, but each source read also recomputes every
                 target hidden state against the enlarged source.
- interleaved:   one merged history at arrival positions.
- batch-offline: the entire source is read before the first write;
                 contiguous positions.

The oracle decoder replays every write as a from-scratch forward over the
equivalent prefix arrangement; its traces and per-step logits must match
the incremental decoder. That match is the cache-correctness contract.

Operation counters are per (pair, layer): attention_pairs counts scored
query/key pairs in reads and writes, rotation_refreshes counts re-rotations
of already-cached target keys, recompute_pairs counts pairs scored inside
all-re re-encoding passes.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import BOS_ID, EOS_ID
from .model import (
    ModelConfig,
    Parameters,
    forward,
    gelu,
    remove_positions,
    rmsnorm,
)
from .paradigm import (
    ROLE_TARGET,
    ArrangedSequence,
    Paradigm,
    arrange,
    waitk_schedule,
)

LENGTH_CAP_SLACK = 8  # decode cap = 2 * source_len + this

_ARRIVAL_PARADIGMS = (Paradigm.INTERLEAVED, Paradigm.BATCH_NO_RE)
_REFRESH_PARADIGMS = (Paradigm.BATCH_POS_RE, Paradigm.BATCH_ALL_RE)


def length_cap(source_len: int) -> int:
    return 2 * source_len + LENGTH_CAP_SLACK


@dataclass
class OpCounters:
    attention_pairs: int = 0
    rotation_refreshes: int = 0
    recompute_pairs: int = 0

    @property
    def recompute_ops(self) -> int:
        return self.rotation_refreshes + self.recompute_pairs

    @property
    def total(self) -> int:
        return self.attention_pairs + self.rotation_refreshes + self.recompute_pairs


@dataclass
class DecodeTrace:
    tokens: np.ndarray        # emitted content tokens (no EOS)
    g: np.ndarray             # source tokens consumed at each emission
    step_seconds: np.ndarray  # wall time of the write that emitted each token
    finish_reason: str        # "end-symbol" or "length-cap"
    counters: OpCounters
    step_logits: list | None = None


class SplitKvCache:
    """Per-layer unrotated K/V stores for the source and target streams.

    source_positions are always the canonical ordinals 0..S-1; the active
    paradigm's rule decides where keys are rotated to at attention time.
    rot_* buffers memoize rotated keys so fixed-position paradigms never
    re-rotate a cached key.
    """

    def __init__(self, cfg: ModelConfig, src_capacity: int, tgt_capacity: int):
        l, h, d = cfg.layers, cfg.heads, cfg.d_head
        dt = cfg.dtype
        self.src_k = np.empty((l, src_capacity, h, d), dtype=dt)
        self.src_v = np.empty((l, src_capacity, h, d), dtype=dt)
        self.rot_src_k = np.empty((l, src_capacity, h, d), dtype=dt)
        self.tgt_k = np.empty((l, tgt_capacity, h, d), dtype=dt)
        self.tgt_v = np.empty((l, tgt_capacity, h, d), dtype=dt)
        self.rot_tgt_k = np.empty((l, tgt_capacity, h, d), dtype=dt)
        self.source_positions = np.empty(src_capacity, dtype=np.float64)
        self.target_positions = np.empty(tgt_capacity, dtype=np.float64)
        self.source_len = 0
        self.target_len = 0


class DecodeSession:
    """One streaming decode. Single-threaded; drive with decode() or call
    read_step()/write_step() directly."""

    def __init__(self, cfg: ModelConfig, params: Parameters, paradigm: Paradigm,
                 k: int, phi: float | None, source, *,
                 pos_zero: str = "none", allre_refresh: str = "read",
                 word_boundary=None, bos_id: int = BOS_ID, eos_id: int = EOS_ID,
                 max_tokens: int | None = None, capture_logits: bool = False,
                 ignore_eos: bool = False):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if allre_refresh not in ("read", "write"):
            raise ValueError(f"allre_refresh must be 'read' or 'write', got {allre_refresh!r}")
        source = np.asarray(source, dtype=np.int64)
        if len(source) < 1:
            raise ValueError("source must be non-empty")
        if paradigm is Paradigm.GROUP_STREAM:
            phi = 0.0 if phi is None else float(phi)
        else:
            phi = None
        self.cfg = cfg
        self.params = params
        self.paradigm = paradigm
        self.k = k
        self.phi = phi
        self.source = source
        self.pos_zero = pos_zero
        self.allre_refresh = allre_refresh
        self.word_boundary = word_boundary or (lambda token: True)
        self.bos_id = bos_id
        self.eos_id = eos_id
        self.capture_logits = capture_logits
        self.ignore_eos = ignore_eos
        self.cap = length_cap(len(source)) if max_tokens is None else max_tokens

        self._check_context(len(source))
        self.cache = SplitKvCache(cfg, len(source), self.cap + 1)
        self.index = 0              # completed reads
        self.action = "read"
        self.is_finished = False
        self.finish_reason = None
        self.next_token = bos_id    # the algorithm's next_token, seeded with the prompt
        self.token_list = []        # current word under construction
        self.emitted = []
        self.g = []
        self.step_seconds = []
        self.step_logits = [] if capture_logits else None
        self.counters = OpCounters()
        self.arrival = 0            # shared arrival counter (interleaved/no-re positions)
        self._thetas = cfg.rotary.thetas
        self._scale = 1.0 / math.sqrt(cfg.d_head)

    def _check_context(self, m: int):
        if self.pos_zero == "all":
            span = 1.0
        elif self.paradigm is Paradigm.GROUP_STREAM:
            span = max(m - 1, self.phi + self.cap) + 1
        else:
            span = m + self.cap + 1
        if span > self.cfg.max_positions:
            raise ValueError(
                f"decode may reach position span {span:g}, beyond max_positions "
                f"{self.cfg.max_positions}"
            )

    # -- position rules ------------------------------------------------------

    def _source_rot_position(self, ordinal: int) -> float:
        if self.pos_zero in ("source", "all"):
            return 0.0
        if self.paradigm in _ARRIVAL_PARADIGMS:
            return float(self.arrival)
        return float(ordinal)

    def _target_rot_position(self, ordinal: int) -> float:
        if self.pos_zero in ("target", "all"):
            return 0.0
        p = self.paradigm
        if p is Paradigm.GROUP_STREAM:
            return self.phi + ordinal
        if p in _REFRESH_PARADIGMS:
            return float(self.cache.source_len + ordinal)
        if p is Paradigm.BATCH_OFFLINE:
            return float(len(self.source) + ordinal)
        return float(self.arrival)  # interleaved / no-re

    # -- protocol ------------------------------------------------------------

    def wanted_source(self) -> int:
        """Cumulative source the schedule allows before the next write."""
        if self.paradigm is Paradigm.BATCH_OFFLINE:
            return len(self.source)
        return min(self.k + self.index, len(self.source))

    def read_step(self, new_source_tokens):
        """Encode newly readable source tokens; flips action to write even
        when nothing new is available (the tail of the schedule)."""
        if self.action != "read":
            raise RuntimeError("read_step called while action is write")
        if self.is_finished:
            raise RuntimeError("session is finished")
        new = np.asarray(new_source_tokens, dtype=np.int64)
        c = self.cache
        for tok in new:
            ordinal = c.source_len
            c.source_positions[ordinal] = ordinal  # canonical numbering, all paradigms
            self._encode_source(int(tok), ordinal, self._source_rot_position(ordinal))
            c.source_len += 1
            self.arrival += 1
        if (self.paradigm is Paradigm.BATCH_ALL_RE and self.allre_refresh == "read"
                and len(new) > 0 and c.target_len > 0):
            self._reencode_targets()
        self.index += 1
        self.action = "write"

    def write_step(self) -> int:
        """Feed next_token as the query; emit and return the greedy argmax."""
        if self.is_finished:
            raise RuntimeError("write_step called on a finished session")
        if self.action != "write":
            raise RuntimeError("write_step called while action is read")
        t0 = time.perf_counter()
        if (self.paradigm is Paradigm.BATCH_ALL_RE and self.allre_refresh == "write"
                and self.cache.target_len > 0):
            self._reencode_targets()
        logits = self._write_forward(self.next_token)
        elapsed = time.perf_counter() - t0

        token = int(np.argmax(logits))  # ties break to the lowest id
        if self.capture_logits:
            self.step_logits.append(np.array(logits))
        if token == self.eos_id and not self.ignore_eos:
            self.is_finished = True
            self.finish_reason = "end-symbol"
        else:
            self.emitted.append(token)
            self.g.append(self.cache.source_len)
            self.step_seconds.append(elapsed)
            if len(self.emitted) >= self.cap:
                self.is_finished = True
                self.finish_reason = "length-cap"
        self.next_token = token
        self.token_list.append(token)
        if not self.is_finished and self.word_boundary(token):
            self.token_list = []
            self.action = "read"
        return token

    def trace(self) -> DecodeTrace:
        return DecodeTrace(
            tokens=np.asarray(self.emitted, dtype=np.int64),
            g=np.asarray(self.g, dtype=np.int64),
            step_seconds=np.asarray(self.step_seconds, dtype=np.float64),
            finish_reason=self.finish_reason or "length-cap",
            counters=self.counters,
            step_logits=self.step_logits,
        )

    # -- internals -------------------------------------------------------------

    def _mlp(self, i: int, x: np.ndarray) -> np.ndarray:
        h2, _ = rmsnorm(x, self.params[f"L{i}.ffn_norm"])
        return x + gelu(h2 @ self.params[f"L{i}.w1"]) @ self.params[f"L{i}.w2"]

    def _rotate(self, x: np.ndarray, positions: np.ndarray) -> np.ndarray:
        return kernels.rotate(np.ascontiguousarray(x), positions, self._thetas)

    def _encode_source(self, token: int, ordinal: int, rot_pos: float):
        cfg, params, c = self.cfg, self.params, self.cache
        h_n, dh = cfg.heads, cfg.d_head
        unified = self.paradigm is Paradigm.INTERLEAVED
        pos_arr = np.array([rot_pos])
        x = params["embed"][token].copy()
        for i in range(cfg.layers):
            h, _ = rmsnorm(x, params[f"L{i}.attn_norm"])
            q = (h @ params[f"L{i}.wq"]).reshape(1, h_n, dh)
            k = (h @ params[f"L{i}.wk"]).reshape(1, h_n, dh)
            c.src_k[i, ordinal] = k[0]
            c.src_v[i, ordinal] = (h @ params[f"L{i}.wv"]).reshape(h_n, dh)
            c.rot_src_k[i, ordinal] = self._rotate(k, pos_arr)[0]
            q_r = self._rotate(q, pos_arr)[0]
            if unified and c.target_len > 0:
                t = c.target_len
                keys = np.concatenate([c.rot_src_k[i, : ordinal + 1], c.rot_tgt_k[i, :t]])
                values = np.concatenate([c.src_v[i, : ordinal + 1], c.tgt_v[i, :t]])
            else:
                keys = c.rot_src_k[i, : ordinal + 1]
                values = c.src_v[i, : ordinal + 1]
            out = kernels.attend(q_r, keys, values, self._scale)
            self.counters.attention_pairs += keys.shape[0]
            x = x + out.reshape(cfg.d_model) @ params[f"L{i}.wo"]
            x = self._mlp(i, x)

    def _write_forward(self, token: int) -> np.ndarray:
        cfg, params, c = self.cfg, self.params, self.cache
        h_n, dh = cfg.heads, cfg.d_head
        ordinal = c.target_len
        q_pos = self._target_rot_position(ordinal)
        pos_arr = np.array([q_pos])
        refresh_old = (self.paradigm is Paradigm.BATCH_POS_RE and ordinal > 0
                       and self.pos_zero not in ("target", "all"))

        x = params["embed"][token].copy()
        for i in range(cfg.layers):
            h, _ = rmsnorm(x, params[f"L{i}.attn_norm"])
            q = (h @ params[f"L{i}.wq"]).reshape(1, h_n, dh)
            k = (h @ params[f"L{i}.wk"]).reshape(1, h_n, dh)
            c.tgt_k[i, ordinal] = k[0]
            c.tgt_v[i, ordinal] = (h @ params[f"L{i}.wv"]).reshape(h_n, dh)
            if refresh_old:
                # pos-re rule: every cached target key moves to S_now + j.
                # (all-re keys are already fresh from the last re-encode at
                # this same S, so only its new key needs rotating.)
                fresh = np.arange(ordinal + 1, dtype=np.float64) + c.source_len
                c.rot_tgt_k[i, : ordinal + 1] = self._rotate(c.tgt_k[i, : ordinal + 1], fresh)
                self.counters.rotation_refreshes += ordinal
            else:
                c.rot_tgt_k[i, ordinal] = self._rotate(k, pos_arr)[0]
            s = c.source_len
            keys = np.concatenate([c.rot_src_k[i, :s], c.rot_tgt_k[i, : ordinal + 1]])
            values = np.concatenate([c.src_v[i, :s], c.tgt_v[i, : ordinal + 1]])
            q_r = self._rotate(q, pos_arr)[0]
            out = kernels.attend(q_r, keys, values, self._scale)
            self.counters.attention_pairs += keys.shape[0]
            x = x + out.reshape(cfg.d_model) @ params[f"L{i}.wo"]
            x = self._mlp(i, x)

        c.target_positions[ordinal] = q_pos
        c.target_len += 1
        if self.paradigm in _ARRIVAL_PARADIGMS:
            self.arrival += 1
        hf, _ = rmsnorm(x, params["final_norm"])
        return hf @ params.head_matrix()

    def _reencode_targets(self):
        """all-re: recompute every cached target K/V against the enlarged
        source with contiguous positions (target j at S_now + j). Runs on
        the same single-query kernels as the rest of the decoder so the
        cost model stays uniform."""
        cfg, params, c = self.cfg, self.params, self.cache
        h_n, dh = cfg.heads, cfg.d_head
        t, s = c.target_len, c.source_len
        if self.pos_zero in ("target", "all"):
            tpos = np.zeros(t, dtype=np.float64)
        else:
            tpos = np.arange(t, dtype=np.float64) + s
        xs = params["embed"][self._target_token_ids[:t]]
        for i in range(cfg.layers):
            hs, _ = rmsnorm(xs, params[f"L{i}.attn_norm"])
            ks = (hs @ params[f"L{i}.wk"]).reshape(t, h_n, dh)
            c.tgt_k[i, :t] = ks
            c.tgt_v[i, :t] = (hs @ params[f"L{i}.wv"]).reshape(t, h_n, dh)
            c.rot_tgt_k[i, :t] = self._rotate(ks, tpos)
            qs_r = self._rotate((hs @ params[f"L{i}.wq"]).reshape(t, h_n, dh), tpos)
            outs = np.empty((t, cfg.d_model), dtype=cfg.dtype)
            for j in range(t):
                keys = np.concatenate([c.rot_src_k[i, :s], c.rot_tgt_k[i, : j + 1]])
                values = np.concatenate([c.src_v[i, :s], c.tgt_v[i, : j + 1]])
                out = kernels.attend(qs_r[j], keys, values, self._scale)
                self.counters.recompute_pairs += keys.shape[0]
                outs[j] = out.reshape(cfg.d_model)
            xs = xs + outs @ params[f"L{i}.wo"]
            h2, _ = rmsnorm(xs, params[f"L{i}.ffn_norm"])
            xs = xs + gelu(h2 @ params[f"L{i}.w1"]) @ params[f"L{i}.w2"]
        c.target_positions[:t] = tpos

    @property
    def _target_token_ids(self) -> np.ndarray:
        # every token fed so far: BOS, then each emitted content token
        return np.asarray([self.bos_id] + self.emitted, dtype=np.int64)


def read_step(session: DecodeSession, new_source_tokens):
    session.read_step(new_source_tokens)


def write_step(session: DecodeSession) -> int:
    return session.write_step()


def decode(session: DecodeSession, source=None) -> DecodeTrace:
    """Run the read/write loop until the end symbol or the length cap."""
    src = session.source if source is None else np.asarray(source, dtype=np.int64)
    if source is not None and not np.array_equal(src, session.source):
        raise ValueError("source differs from the one the session was built for")
    while not session.is_finished:
        if session.action == "read":
            session.read_step(src[session.cache.source_len : session.wanted_source()])
        else:
            session.write_step()
    return session.trace()


# -- full-prefix oracle --------------------------------------------------------


def _override_positions(arr: ArrangedSequence, positions: np.ndarray) -> ArrangedSequence:
    return ArrangedSequence(
        paradigm=arr.paradigm, tokens=arr.tokens, roles=arr.roles,
        arrival_index=arr.arrival_index, positions=positions,
        attn_mask=arr.attn_mask, loss_mask=arr.loss_mask, labels=arr.labels,
        avail_src=arr.avail_src, source_len=arr.source_len,
        target_len=arr.target_len, phi=arr.phi,
    )


def _oracle_step_logits(cfg: ModelConfig, params: Parameters, paradigm: Paradigm,
                        k: int, phi, consumed_src: np.ndarray, target_rows: np.ndarray,
                        pos_zero: str) -> np.ndarray:
    """Logits of the last target row of a from-scratch forward over the
    prefix arrangement equivalent to the incremental decoder's state."""
    m, n = len(consumed_src), len(target_rows)
    sched = waitk_schedule(k, m, n)
    cross = None
    if paradigm in (Paradigm.BATCH_ALL_RE, Paradigm.BATCH_OFFLINE):
        # After re-encoding every target against the current source, the
        # state is exactly an offline prefix with contiguous positions.
        arr = arrange(Paradigm.BATCH_OFFLINE, sched, None, consumed_src, target_rows)
        positions = remove_positions(arr.positions, arr.roles, pos_zero)
    elif paradigm is Paradigm.BATCH_POS_RE:
        arr = arrange(Paradigm.BATCH_POS_RE, sched, None, consumed_src, target_rows)
        # Frozen hidden states: target row r was computed when g(r+1) sources
        # were cached, so against source keys its query sat at g(r+1) + r,
        # while target-to-target offsets reduce to the ordinal gap r - i.
        positions = arr.positions.copy()
        positions[m:] = np.arange(n, dtype=np.float64)
        positions = remove_positions(positions, arr.roles, pos_zero)
        cross = positions.copy()
        if pos_zero not in ("target", "all"):
            cross[m:] = sched.g.astype(np.float64) + np.arange(n, dtype=np.float64)
    else:
        arr = arrange(paradigm, sched, phi, consumed_src, target_rows)
        positions = remove_positions(arr.positions, arr.roles, pos_zero)
    out = forward(cfg, params, _override_positions(arr, positions),
                  cross_positions=cross)
    last_target_row = np.flatnonzero(arr.roles == ROLE_TARGET)[-1]
    return out.logits[last_target_row]


def oracle_decode(cfg: ModelConfig, params: Parameters, paradigm: Paradigm,
                  k: int, phi, source, *, pos_zero: str = "none",
                  bos_id: int = BOS_ID, eos_id: int = EOS_ID,
                  max_tokens: int | None = None,
                  capture_logits: bool = False) -> DecodeTrace:
    """Reference decoder: no caches, every write replays the full prefix.

    Assumes the one-token-per-word boundary rule (read between all writes),
    like the sessions it is compared against.
    """
    source = np.asarray(source, dtype=np.int64)
    m = len(source)
    if m < 1:
        raise ValueError("source must be non-empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    cap = length_cap(m) if max_tokens is None else max_tokens
    if paradigm is Paradigm.GROUP_STREAM:
        phi = 0.0 if phi is None else float(phi)
    else:
        phi = None
    target_rows = [bos_id]
    emitted, g = [], []
    logits_log = [] if capture_logits else None
    index = 0
    finish = None
    while finish is None:
        consumed = m if paradigm is Paradigm.BATCH_OFFLINE else min(k + index, m)
        index += 1
        row_logits = _oracle_step_logits(
            cfg, params, paradigm, k, phi, source[:consumed],
            np.asarray(target_rows, dtype=np.int64), pos_zero,
        )
        token = int(np.argmax(row_logits))
        if capture_logits:
            logits_log.append(np.array(row_logits))
        if token == eos_id:
            finish = "end-symbol"
        else:
            emitted.append(token)
            g.append(consumed)
            if len(emitted) >= cap:
                finish = "length-cap"
        target_rows.append(token)
    return DecodeTrace(
        tokens=np.asarray(emitted, dtype=np.int64),
        g=np.asarray(g, dtype=np.int64),
        step_seconds=np.zeros(len(emitted)),
        finish_reason=finish,
        counters=OpCounters(),
        step_logits=logits_log,
    )
