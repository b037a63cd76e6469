"""Synthetic parallel corpora and JSONL ingestion.

Token ids 0, 1, 2 are reserved (PAD, BOS, EOS); content ids run from 3 to
vocab_size - 1. Generation uses a splitmix64 stream (integer arithmetic
only) so corpora are byte-identical across platforms and implementations;
the exact draw order is documented on generate().

Two tasks:
- Copy: target = source, then EOS.
- MappedTranslation: tokens are mapped through a seed-fixed bijection over
  the content vocabulary, then adjacent pairs at even indices are swapped
  ([a, b, c, d] -> [b, a, d, c], odd tail untouched). The swap makes every
  even-position output depend on one token of lookahead, so wait-1 and
  wait-3 decoding separate measurably.
"""

import json
from dataclasses import dataclass

import numpy as np

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
FIRST_CONTENT_ID = 3

_MASK64 = (1 << 64) - 1


class Splitmix64:
    """splitmix64 PRNG: 64-bit state, one mix per draw."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform-ish draw in [0, n) by modulo; bias is < n / 2**64."""
        if n <= 0:
            raise ValueError(f"below() needs n >= 1, got {n}")
        return self.next_u64() % n


TASK_KINDS = ("copy", "mapped")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str
    vocab_size: int
    len_min: int
    len_max: int
    seed: int

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.vocab_size < 4:
            raise ValueError(f"vocab_size must be >= 4 (3 reserved ids), got {self.vocab_size}")
        if not (1 <= self.len_min <= self.len_max):
            raise ValueError(f"need 1 <= len_min <= len_max, got {self.len_min}, {self.len_max}")


@dataclass(frozen=True)
class ParallelPair:
    source: np.ndarray  # int64 content tokens
    target: np.ndarray  # int64 content tokens, EOS-terminated

    @property
    def target_content(self) -> np.ndarray:
        return self.target[:-1]


def _build_table(spec: SyntheticTaskSpec, rng: Splitmix64) -> np.ndarray:
    table = np.arange(spec.vocab_size, dtype=np.int64)
    if spec.kind == "mapped":
        content = table[FIRST_CONTENT_ID:]
        for i in range(len(content) - 1, 0, -1):
            j = rng.below(i + 1)
            content[i], content[j] = content[j], content[i]
    return table


def mapping_table(spec: SyntheticTaskSpec) -> np.ndarray:
    """The task's content bijection as a vocab-sized lookup table.

    Reserved ids map to themselves. The content block is a Fisher-Yates
    shuffle drawn from splitmix64(seed) before any pair is generated, so
    the table is a pure function of the spec.
    """
    return _build_table(spec, Splitmix64(spec.seed))


def swap_even_pairs(seq: np.ndarray) -> np.ndarray:
    """Swap elements (0,1), (2,3), ...; an odd-length tail stays put."""
    out = np.asarray(seq).copy()
    cut = len(out) - (len(out) % 2)
    out[0:cut:2], out[1:cut:2] = out[1:cut:2].copy(), out[0:cut:2].copy()
    return out


def generate(spec: SyntheticTaskSpec, n: int) -> list[ParallelPair]:
    """Generate n pairs, deterministically in (spec, n).

    Draw order from splitmix64(spec.seed): first the mapping shuffle (for
    the mapped task; the copy task draws nothing for it), then per pair one
    length draw followed by one draw per source token. Calling twice with
    the same arguments yields identical corpora; generate(spec, n) is a
    prefix of generate(spec, n + m).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = Splitmix64(spec.seed)
    table = _build_table(spec, rng)

    span = spec.len_max - spec.len_min + 1
    n_content = spec.vocab_size - FIRST_CONTENT_ID
    pairs = []
    for _ in range(n):
        length = spec.len_min + rng.below(span)
        source = np.fromiter(
            (FIRST_CONTENT_ID + rng.below(n_content) for _ in range(length)),
            dtype=np.int64,
            count=length,
        )
        if spec.kind == "copy":
            content_out = source
        else:
            content_out = swap_even_pairs(table[source])
        target = np.concatenate([content_out, [EOS_ID]])
        pairs.append(ParallelPair(source=source, target=target))
    return pairs


def _check_ids(name: str, values, lineno: int, vocab_size: int | None):
    if not isinstance(values, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in values
    ):
        raise ValueError(f"line {lineno}: {name!r} must be an array of integers")
    for v in values:
        if v < 0:
            raise ValueError(f"line {lineno}: negative token id {v} in {name!r}")
        if v == PAD_ID:
            raise ValueError(f"line {lineno}: PAD id {PAD_ID} not allowed inside {name!r}")
        if vocab_size is not None and v >= vocab_size:
            raise ValueError(
                f"line {lineno}: token id {v} in {name!r} outside vocab of size {vocab_size}"
            )


def load_jsonl(path, vocab_size: int | None = None) -> list[ParallelPair]:
    """Read {"source": [...], "target": [...]} lines into pairs.

    EOS is appended to targets that lack it; an EOS anywhere but the end is
    malformed. Errors carry the 1-based line number.
    """
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "source" not in obj or "target" not in obj:
                raise ValueError(f"line {lineno}: expected object with 'source' and 'target'")
            src, tgt = obj["source"], obj["target"]
            _check_ids("source", src, lineno, vocab_size)
            if not isinstance(tgt, list):
                raise ValueError(f"line {lineno}: 'target' must be an array of integers")
            if tgt and tgt[-1] == EOS_ID:
                tgt = tgt[:-1]
            _check_ids("target", tgt, lineno, vocab_size)
            if EOS_ID in tgt:
                raise ValueError(f"line {lineno}: EOS id {EOS_ID} inside target content")
            pairs.append(
                ParallelPair(
                    source=np.asarray(src, dtype=np.int64),
                    target=np.asarray(tgt + [EOS_ID], dtype=np.int64),
                )
            )
    return pairs


def save_jsonl(pairs, path):
    """Write pairs as JSONL, targets EOS-terminated (round-trips load_jsonl)."""
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(
                json.dumps({"source": p.source.tolist(), "target": p.target.tolist()}) + "\n"
            )
