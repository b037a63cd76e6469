"""Sequence layouts for the six processing paradigms.

A layout fixes, for one (source, target) pair, the physical token order,
the arrival order (the order a streaming decoder would encode them in),
position ids, the attention mask, and the loss mask. The six paradigms:

- BatchOffline:  full input available, contiguous positions, causal mask.
- Interleaved:   source blocks and target tokens interleaved per the wait-k
                 schedule; one unified stream, causal over arrival order, so
                 source tokens attend earlier targets.
- BatchNoRe:     physical order source-then-target, streaming mask (sources
                 never see targets, target j sees sources up to g(j)), and
                 position ids frozen at the interleaved arrival indices.
- BatchPosRe:    same mask; contiguous positions. The "refresh positions at
                 every step" behavior lives in the decoder, not here.
- BatchAllRe:    identical layout to BatchPosRe; differs only at decode time
                 (target hidden states are recomputed after each read).
- GroupStream:   same mask; source positions 0..M-1, target positions
                 phi..phi+N-1 with a real-valued offset phi.

Targets shorter than needed to drain the source leave trailing source
tokens that no target may attend; they are kept in the layout (arriving
after the last target) so all paradigms cover the same token set.
"""

import enum
import warnings
from dataclasses import dataclass

import numpy as np


class Paradigm(enum.Enum):
    BATCH_OFFLINE = "batch-offline"
    INTERLEAVED = "interleaved"
    BATCH_NO_RE = "batch-no-re"
    BATCH_POS_RE = "batch-pos-re"
    BATCH_ALL_RE = "batch-all-re"
    GROUP_STREAM = "group"

    @classmethod
    def from_name(cls, name: str) -> "Paradigm":
        for p in cls:
            if p.value == name:
                return p
        known = ", ".join(p.value for p in cls)
        raise ValueError(f"unknown paradigm {name!r}; expected one of: {known}")


# Paradigms whose layout places all sources before all targets with
# contiguous integer positions over that physical order.
CONTIGUOUS_POSITION_PARADIGMS = frozenset(
    {Paradigm.BATCH_OFFLINE, Paradigm.BATCH_POS_RE, Paradigm.BATCH_ALL_RE}
)
# Paradigms where source rows never attend target columns.
STREAMING_MASK_PARADIGMS = frozenset(
    {Paradigm.BATCH_NO_RE, Paradigm.BATCH_POS_RE, Paradigm.BATCH_ALL_RE, Paradigm.GROUP_STREAM}
)

ROLE_SOURCE = 0
ROLE_TARGET = 1


@dataclass(frozen=True)
class WaitkSchedule:
    """Wait-k read/write schedule: g[j-1] sources are readable before target j."""

    k: int
    source_len: int
    g: np.ndarray  # int64, length target_len; g[j-1] = min(k + j - 1, source_len)

    @property
    def target_len(self) -> int:
        return len(self.g)


def waitk_schedule(k: int, source_len: int, target_len: int) -> WaitkSchedule:
    """Closed-form wait-k schedule g(j) = min(k + j - 1, source_len), 1-based j.

    Once the source is exhausted g stays pinned at source_len, which is the
    tail-write behavior of the decode loop (reads consume nothing but the
    generator keeps writing).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if source_len < 1 or target_len < 1:
        raise ValueError(f"lengths must be >= 1, got source {source_len}, target {target_len}")
    j = np.arange(1, target_len + 1, dtype=np.int64)
    g = np.minimum(k + j - 1, source_len)
    return WaitkSchedule(k=k, source_len=source_len, g=g)


@dataclass(frozen=True)
class ArrangedSequence:
    """One laid-out training sequence.

    tokens/roles/positions/arrival_index are per physical row; attn_mask is
    row=query, col=key, True = may attend. labels[r] is the next-token target
    for row r and is only meaningful where loss_mask[r] is True (-1 elsewhere).
    avail_src[j] is how many source tokens target ordinal j may use; the
    offline paradigm grants all of them, streaming paradigms grant g(j+1).
    """

    paradigm: Paradigm
    tokens: np.ndarray        # int64 (T,)
    roles: np.ndarray         # int8 (T,), ROLE_SOURCE / ROLE_TARGET
    arrival_index: np.ndarray # int64 (T,)
    positions: np.ndarray     # float64 (T,)
    attn_mask: np.ndarray     # bool (T, T)
    loss_mask: np.ndarray     # bool (T,)
    labels: np.ndarray        # int64 (T,), -1 where loss_mask is False
    avail_src: np.ndarray     # int64 (target_len,)
    source_len: int
    target_len: int
    phi: float | None

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def target_rows(self) -> np.ndarray:
        return np.flatnonzero(self.roles == ROLE_TARGET)

    @property
    def source_rows(self) -> np.ndarray:
        return np.flatnonzero(self.roles == ROLE_SOURCE)


def _arrival_slots(schedule: WaitkSchedule):
    """Arrival slot of every source and target token under the schedule.

    Returns (src_slots, tgt_slots): arrival indices over the merged stream
    [first g(1) sources, target 1, next sources, target 2, ...]. Source
    tokens the schedule never exposes arrive after the final target.
    """
    m, n = schedule.source_len, schedule.target_len
    src_slots = np.empty(m, dtype=np.int64)
    tgt_slots = np.empty(n, dtype=np.int64)
    slot = 0
    consumed = 0
    for j in range(n):
        want = int(schedule.g[j])
        while consumed < want:
            src_slots[consumed] = slot
            consumed += 1
            slot += 1
        tgt_slots[j] = slot
        slot += 1
    while consumed < m:  # trailing sources no target may attend
        src_slots[consumed] = slot
        consumed += 1
        slot += 1
    return src_slots, tgt_slots


def arrange(
    paradigm: Paradigm,
    schedule: WaitkSchedule,
    phi: float | None,
    source,
    target,
) -> ArrangedSequence:
    """Build the ArrangedSequence of one pair under one paradigm.

    phi only applies to GroupStream (default 0.0 there); passing it for any
    other paradigm raises a warning and ignores the value.
    """
    source = np.asarray(source, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    m, n = len(source), len(target)
    if m != schedule.source_len or n != schedule.target_len:
        raise ValueError(
            f"schedule is for lengths ({schedule.source_len}, {schedule.target_len}), "
            f"got sequences of lengths ({m}, {n})"
        )
    if paradigm is Paradigm.GROUP_STREAM:
        phi = 0.0 if phi is None else float(phi)
        if phi < 0 or not np.isfinite(phi):
            raise ValueError(f"phi must be finite and >= 0, got {phi}")
    elif phi is not None:
        warnings.warn(f"position offset phi is ignored for paradigm {paradigm.value}")
        phi = None

    src_slots, tgt_slots = _arrival_slots(schedule)

    if paradigm is Paradigm.INTERLEAVED:
        # Physical order is the arrival order itself.
        total = m + n
        tokens = np.empty(total, dtype=np.int64)
        roles = np.empty(total, dtype=np.int8)
        tokens[src_slots] = source
        tokens[tgt_slots] = target
        roles[src_slots] = ROLE_SOURCE
        roles[tgt_slots] = ROLE_TARGET
        arrival = np.arange(total, dtype=np.int64)
        positions = arrival.astype(np.float64)
        mask = np.tril(np.ones((total, total), dtype=bool))
        labels = np.full(total, -1, dtype=np.int64)
        loss = np.zeros(total, dtype=bool)
        labels[tgt_slots[:-1]] = target[1:]
        loss[tgt_slots[:-1]] = True
        avail = schedule.g.copy()
    else:
        # Physical order: all sources, then all targets.
        tokens = np.concatenate([source, target])
        roles = np.concatenate(
            [np.full(m, ROLE_SOURCE, np.int8), np.full(n, ROLE_TARGET, np.int8)]
        )
        arrival = np.concatenate([src_slots, tgt_slots])
        if paradigm in CONTIGUOUS_POSITION_PARADIGMS:
            positions = np.arange(m + n, dtype=np.float64)
        elif paradigm is Paradigm.GROUP_STREAM:
            positions = np.concatenate(
                [np.arange(m, dtype=np.float64), phi + np.arange(n, dtype=np.float64)]
            )
        else:  # BatchNoRe freezes the interleaved arrival ids as positions
            positions = arrival.astype(np.float64)

        mask = np.zeros((m + n, m + n), dtype=bool)
        src_tri = np.tril(np.ones((m, m), dtype=bool))
        mask[:m, :m] = src_tri
        if paradigm is Paradigm.BATCH_OFFLINE:
            mask[m:, :m] = True
            avail = np.full(n, m, dtype=np.int64)
        else:
            cols = np.arange(m)
            mask[m:, :m] = cols[None, :] < schedule.g[:, None]
            avail = schedule.g.copy()
        mask[m:, m:] = np.tril(np.ones((n, n), dtype=bool))

        labels = np.full(m + n, -1, dtype=np.int64)
        loss = np.zeros(m + n, dtype=bool)
        labels[m : m + n - 1] = target[1:]
        loss[m : m + n - 1] = True

    return ArrangedSequence(
        paradigm=paradigm,
        tokens=tokens,
        roles=roles,
        arrival_index=arrival,
        positions=positions,
        attn_mask=mask,
        loss_mask=loss,
        labels=labels,
        avail_src=avail,
        source_len=m,
        target_len=n,
        phi=phi,
    )


def mask_report(arr: ArrangedSequence) -> dict:
    """Count the forbidden-edge classes of an arrangement's mask.

    source_to_target_edges: allowed edges from a source row to a target key.
    target_future_source_edges: allowed edges from target ordinal j to a
    source key beyond avail_src[j]. density: allowed fraction of the grid.
    """
    src = arr.roles == ROLE_SOURCE
    tgt = arr.roles == ROLE_TARGET
    s2t = int(arr.attn_mask[np.ix_(src, tgt)].sum())

    tgt_rows = np.flatnonzero(tgt)
    src_cols = np.flatnonzero(src)
    sub = arr.attn_mask[np.ix_(tgt_rows, src_cols)]
    # source ordinal of every source column, in physical-column order
    src_ord = np.empty(len(src_cols), dtype=np.int64)
    order = np.argsort(arr.arrival_index[src_cols], kind="stable")
    src_ord[order] = np.arange(len(src_cols))
    future = int((sub & (src_ord[None, :] >= arr.avail_src[:, None])).sum())

    total = arr.attn_mask.size
    return {
        "source_to_target_edges": s2t,
        "target_future_source_edges": future,
        "density": float(arr.attn_mask.sum()) / total,
    }
