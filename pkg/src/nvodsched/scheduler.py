"""Segment maps, periodic channel schedules and grid correspondences."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

from .core import CTFB, DPFB, FB, SchemeConfig, ValidationError, VideoSpec, segment_count, validate


class UnsupportedGrid(ValueError):
    """FB grids (2^k - 1 segments) have no nested correspondence."""


@dataclass(frozen=True)
class SegmentMap:
    config: SchemeConfig
    segment_count: int
    segment_duration: Fraction
    preloaded: tuple[int, ...]
    channel_groups: tuple[tuple[int, int], ...]
    never_broadcast: frozenset[int]
    redundant_broadcast: frozenset[int]
    video: VideoSpec

    @property
    def video_duration(self) -> Fraction:
        return self.video.duration

    @property
    def channel_count(self) -> int:
        return len(self.channel_groups)

    def period(self, channel: int) -> int:
        lo, hi = self.channel_groups[channel]
        return hi - lo + 1

    @property
    def hyperperiod(self) -> int:
        """Slots after which the whole schedule repeats (largest group)."""
        return max(self.period(i) for i in range(self.channel_count))

    def broadcast_indices(self) -> set[int]:
        out = set()
        for lo, hi in self.channel_groups:
            out.update(range(lo, hi + 1))
        return out

    def channel_of(self, segment: int) -> int | None:
        for i, (lo, hi) in enumerate(self.channel_groups):
            if lo <= segment <= hi:
                return i
        return None

    def segment_bounds(self, segment: int) -> tuple[Fraction, Fraction]:
        """Start and end of ``segment`` in video seconds."""
        return (segment - 1) * self.segment_duration, segment * self.segment_duration


def build_segment_map(video: VideoSpec, config: SchemeConfig) -> SegmentMap:
    config = validate(config)
    n = segment_count(config)
    duration = video.duration
    delta = duration / n
    k = config.k
    if isinstance(config, FB):
        groups = tuple((2**i, 2 ** (i + 1) - 1) for i in range(k))
        preloaded: tuple[int, ...] = ()
        never: frozenset[int] = frozenset()
        redundant: frozenset[int] = frozenset()
    elif isinstance(config, DPFB):
        # prebuffer is the last 1/2^beta of the video
        first_pre = (2**config.beta - 1) * 2 ** (k - config.beta) + 1
        groups = tuple((2**i, 2 ** (i + 1) - 1) for i in range(k))
        preloaded = tuple(range(first_pre, n + 1))
        never = frozenset({n})
        redundant = frozenset(range(first_pre, n))
    elif isinstance(config, CTFB):
        head = 2 ** (k - config.gamma)
        groups = tuple(
            (2 ** (k - config.gamma + i) + 1, 2 ** (k - config.gamma + i + 1))
            for i in range(config.gamma)
        )
        preloaded = tuple(range(1, head + 1))
        never = frozenset(preloaded)
        redundant = frozenset()
    else:  # pragma: no cover - validate() rejects this
        raise ValidationError(f"unknown config {config!r}")
    return SegmentMap(
        config=config,
        segment_count=n,
        segment_duration=delta,
        preloaded=preloaded,
        channel_groups=groups,
        never_broadcast=never,
        redundant_broadcast=redundant,
        video=video,
    )


def segment_at(segmap: SegmentMap, channel: int, slot: int) -> int:
    """Segment carried by ``channel`` during global ``slot`` (1-based)."""
    if not 0 <= channel < segmap.channel_count:
        raise IndexError(f"channel {channel} out of range 0..{segmap.channel_count - 1}")
    if slot < 1:
        raise ValueError(f"slot is 1-based, got {slot}")
    lo, hi = segmap.channel_groups[channel]
    return lo + (slot - 1) % (hi - lo + 1)


def schedule_rows(segmap: SegmentMap, slots: int, start_slot: int = 1) -> Iterator[tuple[int, int, int]]:
    """Yield ``(slot, channel, segment_index)`` for ``slots`` consecutive slots."""
    for slot in range(start_slot, start_slot + slots):
        for ch in range(segmap.channel_count):
            yield slot, ch, segment_at(segmap, ch, slot)


def schedule_csv(segmap: SegmentMap, slots: int, start_slot: int = 1) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["slot", "channel", "segment_index"])
    writer.writerows(schedule_rows(segmap, slots, start_slot))
    return buf.getvalue()


@dataclass(frozen=True)
class SegmentCorrespondence:
    old_k: int
    new_k: int

    @property
    def direction(self) -> str:
        if self.new_k > self.old_k:
            return "refine"
        if self.new_k < self.old_k:
            return "coarsen"
        return "identity"

    @property
    def ratio(self) -> int:
        return 2 ** abs(self.new_k - self.old_k)

    def forward(self, index: int) -> tuple[int, ...]:
        """New-grid indices covering old segment ``index``.

        Refining yields ``ratio`` fine segments; coarsening yields the single
        coarse segment containing ``index``.
        """
        if index < 1:
            raise ValueError("segment indices are 1-based")
        if self.direction == "coarsen":
            return (coarsen_index(index, self.old_k - self.new_k),)
        return refine_index(index, self.new_k - self.old_k)

    def backward(self, index: int) -> tuple[int, ...]:
        return SegmentCorrespondence(self.new_k, self.old_k).forward(index)


def refine_index(index: int, levels: int = 1) -> tuple[int, ...]:
    out = (index,)
    for _ in range(levels):
        out = tuple(j for i in out for j in (2 * i - 1, 2 * i))
    return out


def coarsen_index(index: int, levels: int = 1) -> int:
    for _ in range(levels):
        index = (index + 1) // 2
    return index


def correspondence(old_k: int, new_k: int, config: SchemeConfig | None = None) -> SegmentCorrespondence:
    if old_k < 1 or new_k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(config, FB):
        raise UnsupportedGrid("FB grids share only their endpoints; use fb_transition_report")
    return SegmentCorrespondence(old_k, new_k)


@dataclass(frozen=True)
class FbTransitionReport:
    k_old: int
    k_new: int
    playback_pos_s: Fraction
    replay_s: Fraction
    forward_gap_s: Fraction

    @property
    def on_grid(self) -> bool:
        return self.replay_s == 0


def fb_transition_report(video: VideoSpec, k_old: int, k_new: int, playback_pos_s) -> FbTransitionReport:
    validate(FB(k_old))
    validate(FB(k_new))
    pos = Fraction(playback_pos_s)
    duration = video.duration
    if not 0 <= pos <= duration:
        raise ValidationError(f"playback position {pos} outside [0, {duration}]")
    delta_new = duration / (2**k_new - 1)
    q = pos / delta_new
    floor = q.numerator // q.denominator
    ceil = -(-q.numerator // q.denominator)
    return FbTransitionReport(
        k_old=k_old,
        k_new=k_new,
        playback_pos_s=pos,
        replay_s=pos - delta_new * floor,
        forward_gap_s=delta_new * ceil - pos,
    )
