import numpy as np
import pytest

from streamattn.model import ModelConfig, Parameters, init_parameters, tensor_shapes
from streamattn.paradigm import Paradigm
from streamattn.stream import (DecodeSession, decode, length_cap, oracle_decode,
                               read_step, write_step)

ALL = list(Paradigm)
CFG = ModelConfig(layers=2, heads=2, d_model=16, vocab_size=16,
                  max_positions=512, precision="fp64")


def constant_params(cfg, predict=None):
    """All-zero network; with predict set, every row shouts that token."""
    tensors = {k: np.zeros(v, dtype=cfg.dtype) for k, v in tensor_shapes(cfg).items()}
    if predict is not None:
        tensors["final_norm"][:] = 1.0
        tensors["embed"][:, 0] = 1.0
        tensors["head"][0, predict] = 30.0
    return Parameters(tensors, tied_head=False)


def phi_for(p):
    return 0.5 if p is Paradigm.GROUP_STREAM else None


@pytest.fixture(scope="module")
def params():
    return init_parameters(CFG, seed=11)


def test_first_read_consumes_k(params):
    src = np.array([3, 4, 5, 6, 7])
    s = DecodeSession(CFG, params, Paradigm.GROUP_STREAM, 3, 0.0, src)
    assert s.wanted_source() == 3
    read_step(s, src[:3])
    assert s.cache.source_len == 3
    assert s.action == "write"


def test_read_after_exhaustion_consumes_zero(params):
    src = np.array([3, 4])
    s = DecodeSession(CFG, params, Paradigm.GROUP_STREAM, 5, 0.0, src)
    read_step(s, src)  # k >= |x|: single read takes everything
    write_step(s)
    assert s.action == "read"
    read_step(s, np.array([], dtype=np.int64))
    assert s.cache.source_len == 2
    assert s.action == "write"


def test_step_order_is_enforced(params):
    src = np.array([3, 4, 5])
    s = DecodeSession(CFG, params, Paradigm.GROUP_STREAM, 2, 0.0, src)
    with pytest.raises(RuntimeError):
        write_step(s)
    read_step(s, src[:2])
    with pytest.raises(RuntimeError):
        read_step(s, src[2:])


def test_session_validation(params):
    with pytest.raises(ValueError):
        DecodeSession(CFG, params, Paradigm.GROUP_STREAM, 0, 0.0, np.array([3]))
    with pytest.raises(ValueError):
        DecodeSession(CFG, params, Paradigm.GROUP_STREAM, 1, 0.0, np.array([], dtype=int))
    with pytest.raises(ValueError):
        DecodeSession(CFG, params, Paradigm.BATCH_ALL_RE, 1, None, np.array([3]),
                      allre_refresh="sometimes")


def test_tie_breaks_to_lowest_id():
    zero = constant_params(CFG)
    s = DecodeSession(CFG, zero, Paradigm.GROUP_STREAM, 2, 0.0, np.array([3, 4, 5]))
    read_step(s, np.array([3, 4]))
    assert write_step(s) == 0


def test_immediate_end_symbol_gives_empty_trace():
    eos_always = constant_params(CFG, predict=2)
    s = DecodeSession(CFG, eos_always, Paradigm.GROUP_STREAM, 2, 0.0,
                      np.array([3, 4, 5]))
    tr = decode(s)
    assert tr.finish_reason == "end-symbol"
    assert tr.tokens.size == 0 and tr.g.size == 0
    assert s.is_finished


def test_length_cap_reached():
    babbler = constant_params(CFG, predict=5)
    src = np.array([3, 4, 5, 6])
    s = DecodeSession(CFG, babbler, Paradigm.GROUP_STREAM, 2, 0.0, src)
    tr = decode(s)
    assert tr.finish_reason == "length-cap"
    assert tr.tokens.size == length_cap(4) == 16
    assert np.all(tr.tokens == 5)
    assert tr.g[-1] == 4
    assert np.all(np.diff(tr.g) >= 0)


def test_decode_source_mismatch_rejected(params):
    s = DecodeSession(CFG, params, Paradigm.GROUP_STREAM, 2, 0.0, np.array([3, 4]))
    with pytest.raises(ValueError):
        decode(s, source=np.array([3, 5]))


def test_max_tokens_override():
    babbler = constant_params(CFG, predict=5)
    s = DecodeSession(CFG, babbler, Paradigm.BATCH_NO_RE, 1, None,
                      np.array([3, 4, 5, 6, 7]), max_tokens=3)
    tr = decode(s)
    assert tr.tokens.size == 3
    assert tr.step_seconds.size == 3


def test_ignore_eos_keeps_generating():
    eos_always = constant_params(CFG, predict=2)
    s = DecodeSession(CFG, eos_always, Paradigm.GROUP_STREAM, 1, 0.0,
                      np.array([3, 4]), max_tokens=4, ignore_eos=True)
    tr = decode(s)
    assert tr.tokens.size == 4
    assert np.all(tr.tokens == 2)


@pytest.mark.parametrize("paradigm", ALL)
def test_decode_matches_oracle(paradigm, params):
    rng = np.random.default_rng(hash(paradigm.value) % 2 ** 31)
    for trial in range(6):
        src = rng.integers(3, 16, size=rng.integers(2, 7))
        k = int(rng.integers(1, 4))
        s = DecodeSession(CFG, params, paradigm, k, phi_for(paradigm), src,
                          capture_logits=True, max_tokens=6)
        tr = decode(s)
        orc = oracle_decode(CFG, params, paradigm, k, phi_for(paradigm), src,
                            capture_logits=True, max_tokens=6)
        np.testing.assert_array_equal(tr.tokens, orc.tokens)
        np.testing.assert_array_equal(tr.g, orc.g)
        for a, b in zip(tr.step_logits, orc.step_logits):
            np.testing.assert_allclose(a, b, atol=1e-12)


def test_oracle_deterministic(params):
    src = np.array([3, 9, 4, 11])
    a = oracle_decode(CFG, params, Paradigm.BATCH_POS_RE, 2, None, src)
    b = oracle_decode(CFG, params, Paradigm.BATCH_POS_RE, 2, None, src)
    np.testing.assert_array_equal(a.tokens, b.tokens)


def test_decode_with_pos_zero_matches_oracle(params):
    src = np.array([5, 7, 9, 11, 6])
    for mode in ("source", "target", "all"):
        for paradigm in (Paradigm.GROUP_STREAM, Paradigm.BATCH_POS_RE,
                         Paradigm.BATCH_ALL_RE):
            s = DecodeSession(CFG, params, paradigm, 2, phi_for(paradigm), src,
                              pos_zero=mode, capture_logits=True, max_tokens=5)
            tr = decode(s)
            orc = oracle_decode(CFG, params, paradigm, 2, phi_for(paradigm), src,
                                pos_zero=mode, capture_logits=True, max_tokens=5)
            np.testing.assert_array_equal(tr.tokens, orc.tokens)
            for a, b in zip(tr.step_logits, orc.step_logits):
                np.testing.assert_allclose(a, b, atol=1e-12)


def test_monotone_emission(params):
    src = np.array([3, 4, 5, 6, 7, 8])
    for paradigm in ALL:
        s = DecodeSession(CFG, params, paradigm, 2, phi_for(paradigm), src,
                          max_tokens=8)
        seen = []
        while not s.is_finished:
            if s.action == "read":
                read_step(s, src[s.cache.source_len:s.wanted_source()])
            else:
                write_step(s)
                assert s.emitted[:len(seen)] == seen
                seen = list(s.emitted)
        assert np.all(np.diff(s.trace().g) >= 0)


def test_offline_equivalence_when_k_covers_source(params):
    # with k >= |x| every arrival order collapses to source-then-target and
    # all contiguous-position paradigms replay offline greedy decoding
    src = np.array([4, 6, 8, 10])
    base = decode(DecodeSession(CFG, params, Paradigm.BATCH_OFFLINE, 9, None, src,
                                max_tokens=6))
    for paradigm in (Paradigm.INTERLEAVED, Paradigm.BATCH_NO_RE,
                     Paradigm.BATCH_POS_RE, Paradigm.BATCH_ALL_RE):
        tr = decode(DecodeSession(CFG, params, paradigm, 9, None, src, max_tokens=6))
        np.testing.assert_array_equal(tr.tokens, base.tokens)
    grp = decode(DecodeSession(CFG, params, Paradigm.GROUP_STREAM, 9, float(len(src)),
                               src, max_tokens=6))
    np.testing.assert_array_equal(grp.tokens, base.tokens)


def test_op_counters_ordering(params):
    src = np.array([3, 4, 5, 6, 7, 8])
    totals = {}
    for paradigm in (Paradigm.GROUP_STREAM, Paradigm.BATCH_NO_RE,
                     Paradigm.BATCH_POS_RE, Paradigm.BATCH_ALL_RE):
        s = DecodeSession(CFG, params, paradigm, 2, phi_for(paradigm), src,
                          max_tokens=8, ignore_eos=True)
        decode(s)
        totals[paradigm] = s.counters
    assert totals[Paradigm.GROUP_STREAM].attention_pairs == \
        totals[Paradigm.BATCH_NO_RE].attention_pairs
    assert totals[Paradigm.GROUP_STREAM].recompute_ops == 0
    assert totals[Paradigm.BATCH_NO_RE].recompute_ops == 0
    assert totals[Paradigm.BATCH_POS_RE].rotation_refreshes > 0
    assert totals[Paradigm.BATCH_POS_RE].recompute_pairs == 0
    assert totals[Paradigm.BATCH_ALL_RE].recompute_pairs > 0
    assert totals[Paradigm.BATCH_ALL_RE].total >= totals[Paradigm.BATCH_POS_RE].total
    assert totals[Paradigm.BATCH_POS_RE].total >= totals[Paradigm.GROUP_STREAM].total


def test_allre_read_recomputes_cached_target_rows(params):
    src = np.array([3, 4, 5, 6])
    s = DecodeSession(CFG, params, Paradigm.BATCH_ALL_RE, 2, None, src,
                      ignore_eos=True, max_tokens=6)
    read_step(s, src[:2])
    write_step(s)
    read_step(s, src[2:3])   # re-encodes 1 target row
    write_step(s)
    before = s.counters.recompute_pairs
    read_step(s, src[3:4])   # re-encodes 2 target rows against 4 sources
    # row j attends (4 sources + j + 1) keys, per layer
    expect = CFG.layers * ((4 + 1) + (4 + 2))
    assert s.counters.recompute_pairs - before == expect
    assert s.cache.target_len == 2


def test_allre_write_refresh_matches_read_refresh(params):
    src = np.array([3, 9, 5, 12, 7])
    a = decode(DecodeSession(CFG, params, Paradigm.BATCH_ALL_RE, 2, None, src,
                             allre_refresh="read", max_tokens=6))
    b = decode(DecodeSession(CFG, params, Paradigm.BATCH_ALL_RE, 2, None, src,
                             allre_refresh="write", max_tokens=6))
    np.testing.assert_array_equal(a.tokens, b.tokens)


def test_word_boundary_predicate_controls_reads(params):
    # two-token words: reads happen only after every second write
    src = np.array([3, 4, 5, 6, 7, 8])
    count = [0]

    def every_other(token):
        count[0] += 1
        return count[0] % 2 == 0

    s = DecodeSession(CFG, params, Paradigm.GROUP_STREAM, 2, 0.0, src,
                      word_boundary=every_other, ignore_eos=True, max_tokens=6)
    tr = decode(s)
    # g advances only at word boundaries
    assert tr.g.tolist() == [2, 2, 3, 3, 4, 4]


def test_interleaved_attention_grows_with_targets(params):
    src = np.array([3, 4, 5, 6])
    inter = DecodeSession(CFG, params, Paradigm.INTERLEAVED, 2, None, src,
                          ignore_eos=True, max_tokens=4)
    nore = DecodeSession(CFG, params, Paradigm.BATCH_NO_RE, 2, None, src,
                         ignore_eos=True, max_tokens=4)
    decode(inter)
    decode(nore)
    # interleaved source tokens also attend earlier targets, so reads cost more
    assert inter.counters.attention_pairs > nore.counters.attention_pairs


def test_write_after_finish_rejected():
    eos_always = constant_params(CFG, predict=2)
    s = DecodeSession(CFG, eos_always, Paradigm.GROUP_STREAM, 1, 0.0, np.array([3]))
    decode(s)
    with pytest.raises(RuntimeError):
        write_step(s)
