from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from nvodsched.core import CTFB, DPFB, FB, ValidationError, VideoSpec
from nvodsched.scheduler import (
    UnsupportedGrid,
    build_segment_map,
    coarsen_index,
    correspondence,
    fb_transition_report,
    refine_index,
    schedule_csv,
    segment_at,
)

D = Fraction(8000)
V = VideoSpec(8 * 10**7, 10**4)

configs = st.one_of(
    st.builds(FB, st.integers(1, 10)),
    st.integers(1, 10).flatmap(lambda k: st.builds(DPFB, st.integers(1, k), st.just(k))),
    st.integers(1, 10).flatmap(lambda k: st.builds(CTFB, st.integers(1, k), st.just(k))),
)


def test_fb_map(video):
    m = build_segment_map(video, FB(3))
    assert m.segment_count == 7 and m.segment_duration == D / 7
    assert m.channel_groups == ((1, 1), (2, 3), (4, 7))
    assert m.preloaded == () and not m.never_broadcast and not m.redundant_broadcast


def test_dpfb_map(video):
    m = build_segment_map(video, DPFB(2, 3))
    assert m.segment_count == 8 and m.segment_duration == 1000
    assert m.channel_groups == ((1, 1), (2, 3), (4, 7))
    assert m.preloaded == (7, 8)
    assert m.never_broadcast == {8}
    assert m.redundant_broadcast == {7}


def test_ctfb_map(video):
    m = build_segment_map(video, CTFB(2, 4))
    assert m.segment_count == 16 and m.segment_duration == 500
    assert m.preloaded == (1, 2, 3, 4)
    assert m.channel_groups == ((5, 8), (9, 16))
    assert m.never_broadcast == {1, 2, 3, 4}
    assert not m.redundant_broadcast


def test_segment_at_examples(video):
    fb3 = build_segment_map(video, FB(3))
    assert [segment_at(fb3, 2, t) for t in range(1, 9)] == [4, 5, 6, 7, 4, 5, 6, 7]
    assert [segment_at(fb3, 1, t) for t in range(1, 5)] == [2, 3, 2, 3]
    ct = build_segment_map(video, CTFB(2, 4))
    assert [segment_at(ct, 0, t) for t in range(1, 6)] == [5, 6, 7, 8, 5]
    with pytest.raises(IndexError):
        segment_at(fb3, 3, 1)
    with pytest.raises(ValueError):
        segment_at(fb3, 0, 0)


@given(configs)
def test_groups_partition_broadcast_set(cfg):
    m = build_segment_map(V, cfg)
    seen = []
    for lo, hi in m.channel_groups:
        seen.extend(range(lo, hi + 1))
    assert len(seen) == len(set(seen))
    everything = set(range(1, m.segment_count + 1))
    assert set(seen) == everything - set(m.never_broadcast)
    assert m.redundant_broadcast == set(m.preloaded) & set(seen)
    if isinstance(cfg, (FB, DPFB)):
        assert [m.period(i) for i in range(m.channel_count)] == [2**i for i in range(cfg.k)]
    else:
        assert [m.period(i) for i in range(m.channel_count)] == [2 ** (cfg.k - cfg.gamma + i) for i in range(cfg.gamma)]


@given(configs, st.integers(1, 3000))
def test_schedule_is_periodic(cfg, t):
    m = build_segment_map(V, cfg)
    for ch in range(m.channel_count):
        assert segment_at(m, ch, t) == segment_at(m, ch, t + m.period(ch))


@pytest.mark.parametrize("k", range(1, 9))
def test_just_in_time_from_any_slot(video, k):
    # a client starting at slot t plays segment j during slot t + j - 1; it
    # must have been broadcast at some slot in t..t+j-1
    for cfg in (FB(k), DPFB(1, k), CTFB(1, k)):
        m = build_segment_map(video, cfg)
        for t in range(1, m.hyperperiod + 1):
            for j in m.broadcast_indices():
                ch = m.channel_of(j)
                assert any(segment_at(m, ch, s) == j for s in range(t, t + j))


def test_schedule_csv(video):
    text = schedule_csv(build_segment_map(video, FB(2)), 2)
    assert text.splitlines() == ["slot,channel,segment_index", "1,0,1", "1,1,2", "2,0,1", "2,1,3"]


def test_correspondence_examples():
    assert correspondence(3, 4).forward(3) == (5, 6)
    assert correspondence(4, 3).forward(5) == (3,)
    assert correspondence(4, 3).forward(6) == (3,)
    assert correspondence(3, 5).forward(2) == (5, 6, 7, 8)
    assert correspondence(3, 3).forward(4) == (4,)
    with pytest.raises(UnsupportedGrid):
        correspondence(2, 3, FB(2))


@given(st.integers(1, 2**20), st.integers(0, 5))
def test_refine_coarsen_round_trip(i, levels):
    fine = refine_index(i, levels)
    assert len(fine) == 2**levels
    assert fine == tuple(range((i - 1) * 2**levels + 1, i * 2**levels + 1))
    assert {coarsen_index(j, levels) for j in fine} == {i}
    c = correspondence(10, 10 + levels)
    assert all(c.backward(j) == (i,) for j in c.forward(i))


@pytest.mark.parametrize("k", range(2, 9))
def test_fb_grids_share_only_endpoints(k):
    a = {Fraction(j, 2**k - 1) for j in range(2**k)}
    b = {Fraction(j, 2 ** (k + 1) - 1) for j in range(2 ** (k + 1))}
    assert a & b == {0, 1}


def test_fb_transition_report_examples(video):
    r = fb_transition_report(video, 2, 3, D / 3)
    assert r.replay_s == D / 21 and r.forward_gap_s == 2 * D / 21 and not r.on_grid
    r = fb_transition_report(video, 3, 2, 3 * D / 7)
    assert r.replay_s == 2 * D / 21 and r.forward_gap_s == 5 * D / 21
    r = fb_transition_report(video, 2, 3, 0)
    assert r.replay_s == 0 and r.forward_gap_s == 0 and r.on_grid
    with pytest.raises(ValidationError):
        fb_transition_report(video, 2, 3, D + 1)
