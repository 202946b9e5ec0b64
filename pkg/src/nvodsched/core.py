"""Domain types shared by every module.

Times and sizes are exact :class:`fractions.Fraction` values measured in
seconds of video (or bits, once multiplied by the playback rate).  Decimal
rendering only happens when a report is written out.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

MAX_K = 30

# decimal units, 1 MB = 10**6 bytes
BITS_PER_MB = 8 * 10**6


class ValidationError(ValueError):
    """A domain value violates one of its invariants."""


@dataclass(frozen=True)
class VideoSpec:
    size_bits: int
    playback_rate_bps: int

    def __post_init__(self):
        for name in ("size_bits", "playback_rate_bps"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValidationError(f"{name} must be an integer, got {value!r}")
            if value <= 0:
                raise ValidationError(f"{name} must be positive, got {value}")

    @classmethod
    def from_mb(cls, size_mb, rate_kbps) -> "VideoSpec":
        """Build from decimal megabytes and kilobits per second."""
        bits = Fraction(size_mb) * BITS_PER_MB
        rate = Fraction(rate_kbps) * 1000
        if bits.denominator != 1 or rate.denominator != 1:
            raise ValidationError("size and rate must come out as whole bits")
        return cls(int(bits), int(rate))

    @property
    def duration(self) -> Fraction:
        return Fraction(self.size_bits, self.playback_rate_bps)

    def seconds_to_bits(self, seconds) -> Fraction:
        return Fraction(seconds) * self.playback_rate_bps

    def seconds_to_mb(self, seconds) -> Fraction:
        return self.seconds_to_bits(seconds) / BITS_PER_MB


def video_duration(spec: VideoSpec) -> Fraction:
    """Video length D in seconds, exact."""
    if not isinstance(spec, VideoSpec):
        raise ValidationError(f"expected VideoSpec, got {type(spec).__name__}")
    return spec.duration


def _check_int(name, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if not 1 <= value <= MAX_K:
        raise ValidationError(f"{name} must lie in 1..{MAX_K}, got {value}")


@dataclass(frozen=True)
class FB:
    k: int

    family = "fb"

    def __post_init__(self):
        _check_int("k", self.k)

    @property
    def aux(self) -> int:
        return 0

    def with_k(self, k: int) -> "FB":
        return FB(k)


@dataclass(frozen=True)
class DPFB:
    beta: int
    k: int

    family = "dpfb"

    def __post_init__(self):
        _check_int("beta", self.beta)
        _check_int("k", self.k)
        if self.k < self.beta:
            raise ValidationError(f"DPFB needs k >= beta (k={self.k}, beta={self.beta})")

    @property
    def aux(self) -> int:
        return self.beta

    def with_k(self, k: int) -> "DPFB":
        return DPFB(self.beta, k)


@dataclass(frozen=True)
class CTFB:
    gamma: int
    k: int

    family = "ctfb"

    def __post_init__(self):
        _check_int("gamma", self.gamma)
        _check_int("k", self.k)
        if self.k < self.gamma:
            raise ValidationError(f"CTFB needs k >= gamma (k={self.k}, gamma={self.gamma})")

    @property
    def aux(self) -> int:
        return self.gamma

    def with_k(self, k: int) -> "CTFB":
        return CTFB(self.gamma, k)


SchemeConfig = Union[FB, DPFB, CTFB]

FAMILIES = {"fb": FB, "dpfb": DPFB, "ctfb": CTFB}


def validate(config) -> SchemeConfig:
    """Return ``config`` unchanged if it satisfies its invariants.

    The dataclasses already check themselves on construction; this re-runs the
    checks so that objects built with ``object.__setattr__`` tricks or plain
    duck-typed values are caught too.
    """
    if not isinstance(config, (FB, DPFB, CTFB)):
        raise ValidationError(f"unknown scheme config {config!r}")
    config.__post_init__()
    return config


def make_config(family: str, k: int, beta: int | None = None, gamma: int | None = None) -> SchemeConfig:
    family = family.lower()
    if family == "fb":
        return FB(k)
    if family == "dpfb":
        if beta is None:
            raise ValidationError("DPFB requires beta")
        return DPFB(beta, k)
    if family == "ctfb":
        if gamma is None:
            raise ValidationError("CTFB requires gamma")
        return CTFB(gamma, k)
    raise ValidationError(f"unknown scheme family {family!r}")


def segment_count(config: SchemeConfig) -> int:
    if isinstance(config, FB):
        return 2**config.k - 1
    return 2**config.k


@dataclass(frozen=True)
class SlotClock:
    """Position on a slot grid: 1-based slot index plus a sub-slot phase."""

    slot_index: int
    slot_duration_s: Fraction
    phase_s: Fraction = Fraction(0)

    def __post_init__(self):
        if self.slot_index < 1:
            raise ValidationError("slot_index is 1-based")
        if self.slot_duration_s <= 0:
            raise ValidationError("slot duration must be positive")
        if not 0 <= self.phase_s < self.slot_duration_s:
            raise ValidationError("phase must lie in [0, slot duration)")

    @property
    def boundary_s(self) -> Fraction:
        return (self.slot_index - 1) * Fraction(self.slot_duration_s)

    @property
    def time_s(self) -> Fraction:
        return self.boundary_s + self.phase_s

    @classmethod
    def at(cls, time_s, slot_duration_s) -> "SlotClock":
        time_s = Fraction(time_s)
        slot_duration_s = Fraction(slot_duration_s)
        whole, phase = divmod(time_s, slot_duration_s)
        return cls(int(whole) + 1, slot_duration_s, phase)
