from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from nvodsched.core import CTFB, DPFB, FB, MAX_K, SlotClock, ValidationError, VideoSpec, make_config, validate, video_duration


def test_duration_decimal_megabytes():
    assert video_duration(VideoSpec(8 * 10**7, 10_000)) == 8000
    assert VideoSpec.from_mb(10, 10) == VideoSpec(8 * 10**7, 10_000)


def test_duration_identity_rate():
    assert video_duration(VideoSpec(10**4, 10**4)) == 1


@pytest.mark.parametrize("size,rate", [(0, 10), (10, 0), (-8, 10), (8, -1)])
def test_video_rejects_non_positive(size, rate):
    with pytest.raises(ValidationError):
        VideoSpec(size, rate)


def test_duration_is_exact():
    d = video_duration(VideoSpec(10, 3))
    assert isinstance(d, Fraction) and d == Fraction(10, 3)


def test_validate_examples():
    assert validate(CTFB(2, 4)) == CTFB(2, 4)
    with pytest.raises(ValidationError):
        DPFB(3, 2)
    assert validate(FB(1)).k == 1


@pytest.mark.parametrize("bad", [lambda: FB(0), lambda: FB(MAX_K + 1), lambda: CTFB(3, 2), lambda: CTFB(0, 0), lambda: FB(True)])
def test_config_constraints(bad):
    with pytest.raises(ValidationError):
        bad()


def test_make_config():
    assert make_config("dpfb", 4, beta=2) == DPFB(2, 4)
    assert make_config("CTFB", 3, gamma=3) == CTFB(3, 3)
    with pytest.raises(ValidationError):
        make_config("harmonic", 3)


@given(st.integers(1, MAX_K), st.integers(1, MAX_K))
def test_validate_idempotent(a, b):
    lo, hi = sorted((a, b))
    for cfg in (FB(hi), DPFB(lo, hi), CTFB(lo, hi)):
        assert validate(validate(cfg)) == cfg


def test_slot_clock():
    c = SlotClock.at(Fraction(2500), Fraction(1000))
    assert (c.slot_index, c.phase_s) == (3, 500)
    assert c.boundary_s == 2000 and c.time_s == 2500
    with pytest.raises(ValidationError):
        SlotClock(1, Fraction(1), Fraction(1))
