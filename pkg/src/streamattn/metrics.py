"""Quality and latency metrics over decode traces.

Latency definitions (token-level; one token = one word here):

    AL   = (1/tau) * sum_{j<=tau} [ g(j) - (j-1)/gamma ],  gamma = |ref| / |x|
    LAAL = same sum,                gamma = max(|hyp|, |ref|) / |x|

where tau is the first j with g(j) >= |x| (or the last emitted token if
the source was never fully consumed). A first delay beyond the source
length returns that delay directly, which is the degenerate-case rule of
the standard implementations.

BLEU is corpus-level BLEU-4 with brevity penalty; smoothing is pinned to
add-1 on zero match counts for n >= 2 so scores are reproducible across
implementations. Unigram precision is never smoothed: no unigram match
means a score of 0.
"""

import math
from collections import Counter
from dataclasses import dataclass


@dataclass(frozen=True)
class SentenceLagging:
    al: float
    laal: float


@dataclass(frozen=True)
class LatencyReport:
    al: float
    laal: float
    per_sentence: tuple


def token_accuracy(hyp, ref) -> float:
    """Exact-position matches over max(len); two empty sequences score 1."""
    hyp = list(hyp)
    ref = list(ref)
    denom = max(len(hyp), len(ref))
    if denom == 0:
        return 1.0
    hits = sum(1 for a, b in zip(hyp, ref) if a == b)
    return hits / denom


def _lagging_sum(delays, source_len: int, gamma: float) -> float:
    total = 0.0
    tau = 0
    for t_minus_1, d in enumerate(delays):
        total += d - t_minus_1 / gamma
        tau = t_minus_1 + 1
        if d >= source_len:
            break
    return total / tau


def lagging(trace, source_len: int, ref_len: int) -> SentenceLagging:
    """AL and LAAL of one trace; trace may be a DecodeTrace or a plain
    sequence of per-token read counts g(j)."""
    delays = list(getattr(trace, "g", trace))
    if not delays:
        raise ValueError("cannot compute lagging of an empty trace")
    if source_len <= 0:
        raise ValueError(f"source_len must be positive, got {source_len}")
    if ref_len <= 0:
        raise ValueError(f"ref_len must be positive, got {ref_len}")
    if delays[0] > source_len:
        return SentenceLagging(al=float(delays[0]), laal=float(delays[0]))
    al = _lagging_sum(delays, source_len, ref_len / source_len)
    laal = _lagging_sum(delays, source_len, max(len(delays), ref_len) / source_len)
    return SentenceLagging(al=al, laal=laal)


def corpus_lagging(traces, source_lens, ref_lens) -> LatencyReport:
    """Mean AL/LAAL over sentences."""
    if not (len(traces) == len(source_lens) == len(ref_lens)):
        raise ValueError("traces, source_lens, ref_lens must align")
    if len(traces) == 0:
        raise ValueError("empty corpus")
    per = tuple(lagging(t, s, r) for t, s, r in zip(traces, source_lens, ref_lens))
    return LatencyReport(
        al=sum(p.al for p in per) / len(per),
        laal=sum(p.laal for p in per) / len(per),
        per_sentence=per,
    )


def _ngrams(seq, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu(hyps, refs, max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100]; see module docstring for the pinned rules."""
    if len(hyps) != len(refs):
        raise ValueError(f"corpus sizes differ: {len(hyps)} hypotheses, {len(refs)} references")
    if len(hyps) == 0:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp = [int(t) for t in hyp]
        ref = [int(t) for t in ref]
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            got = _ngrams(hyp, n)
            want = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, want[g]) for g, c in got.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        m, t = matches[n - 1], totals[n - 1]
        if n >= 2 and m == 0:
            m, t = 1, t + 1
        if t == 0 or m == 0:
            return 0.0
        log_sum += math.log(m / t)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / max_n)
