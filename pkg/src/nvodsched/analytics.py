"""Closed-form metrics for FB, DPFB and CTFB.

The buffer formulas are implemented exactly as the published expressions
read, sum and all.  Where they disagree with what a simulated client actually
stores, both numbers are reported side by side; nothing here corrects them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

from .core import CTFB, DPFB, FB, SchemeConfig, ValidationError, VideoSpec, validate


def ceil_log2(n: int) -> int:
    """Integer ceil(log2 n) for n >= 1, with ceil_log2(1) == 0."""
    if n < 1:
        raise ValueError(f"ceil_log2 needs n >= 1, got {n}")
    return (n - 1).bit_length()


def segment_duration(video: VideoSpec, config: SchemeConfig) -> Fraction:
    config = validate(config)
    if isinstance(config, FB):
        return video.duration / (2**config.k - 1)
    return video.duration / 2**config.k


def initial_wait_worst(video: VideoSpec, config: SchemeConfig) -> Fraction:
    if isinstance(validate(config), CTFB):
        return Fraction(0)
    return segment_duration(video, config)


def downloads_at_instant(k: int, n: int) -> int:
    """Segments a fresh FB client picks up during its n-th slot."""
    if k < 1 or n < 1:
        raise ValueError("k and n must be >= 1")
    return max(0, k - ceil_log2(n))


def cumulative_downloads(k: int, n: int) -> int:
    if k < 1 or n < 1:
        raise ValueError("k and n must be >= 1")
    return k + sum(downloads_at_instant(k, i) for i in range(2, n + 1))


def fb_buffer_profile(video: VideoSpec, k: int, n: int) -> Fraction:
    """FB client storage at instant n, in video-seconds."""
    validate(FB(k))
    if not 1 <= n <= 2**k - 1:
        raise ValidationError(f"n must lie in 1..{2**k - 1}, got {n}")
    delta = video.duration / (2**k - 1)
    return (cumulative_downloads(k, n) - (n - 1)) * delta


def buffer_bracket(k: int) -> int:
    """The bracketed segment count shared by the three max-buffer formulas.

    Summed term by term, not via the closed form ``2**(k-1)``; for k == 1 the
    sum range is degenerate and the n=1 value (one segment) is used.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return 1
    top = 2 ** (k - 2)
    return k + sum(k - ceil_log2(i) for i in range(2, top + 1)) - (top - 1)


def max_buffer_formula(video: VideoSpec, config: SchemeConfig) -> Fraction:
    config = validate(config)
    delta = segment_duration(video, config)
    body = buffer_bracket(config.k) * delta
    if isinstance(config, FB):
        return body
    return preload_size(video, config) + body


def transmitted_distinct_count(config: SchemeConfig) -> int:
    config = validate(config)
    if isinstance(config, CTFB):
        return 2**config.k - 2 ** (config.k - config.gamma)
    return 2**config.k - 1


def redundant_count(config: SchemeConfig) -> int:
    config = validate(config)
    if isinstance(config, DPFB):
        return 2 ** (config.k - config.beta) - 1
    return 0


def preload_size(video: VideoSpec, config: SchemeConfig) -> Fraction:
    config = validate(config)
    if isinstance(config, DPFB):
        return video.duration / 2**config.beta
    if isinstance(config, CTFB):
        return video.duration / 2**config.gamma
    return Fraction(0)


def channel_count(config: SchemeConfig) -> int:
    config = validate(config)
    if isinstance(config, CTFB):
        return config.gamma
    return config.k


@dataclass(frozen=True)
class ChannelRequirement:
    family: str
    channels: int
    k: int


def channels_required(video: VideoSpec, family: str, target_segment_s, gamma: int = 2) -> ChannelRequirement:
    """Fewest channels whose segments are no longer than ``target_segment_s``.

    For CTFB the channel count is pinned at ``gamma`` and the returned ``k`` is
    the buffer-control value that reaches the target (never below ``gamma``).
    """
    target = Fraction(target_segment_s)
    duration = video.duration
    if target <= 0:
        raise ValidationError("target segment size must be positive")
    if target > duration:
        raise ValidationError("target segment size exceeds the video length")
    family = family.lower()
    if family == "fb":
        k = 1
        while duration / (2**k - 1) > target:
            k += 1
        return ChannelRequirement("fb", k, k)
    k = 0
    while duration / 2**k > target:
        k += 1
    if family == "dpfb":
        k = max(k, 1)
        return ChannelRequirement("dpfb", k, k)
    if family == "ctfb":
        return ChannelRequirement("ctfb", gamma, max(k, gamma))
    raise ValidationError(f"unknown scheme family {family!r}")


@dataclass(frozen=True)
class SchemeMetrics:
    segment_duration_s: Fraction
    initial_wait_worst_s: Fraction
    max_buffer_formula_s: Fraction
    transmitted_distinct_count: int
    redundant_count: int
    preload_s: Fraction
    channel_count: int

    def as_dict(self) -> dict:
        return asdict(self)


def analyze(video: VideoSpec, config: SchemeConfig) -> SchemeMetrics:
    return SchemeMetrics(
        segment_duration_s=segment_duration(video, config),
        initial_wait_worst_s=initial_wait_worst(video, config),
        max_buffer_formula_s=max_buffer_formula(video, config),
        transmitted_distinct_count=transmitted_distinct_count(config),
        redundant_count=redundant_count(config),
        preload_s=preload_size(video, config),
        channel_count=channel_count(config),
    )
