"""Slot-accurate simulation of the broadcast server and one client.

Rules the client follows:

* The server plays ``segment_at(map, ch, t)`` on every channel during global
  slot ``t``, anchored at wall time 0.  At a transition, channels whose byte
  stream is unchanged keep their phase (CTFB: channel i carries the same
  stretch of video for every k).  FB and DPFB reassign channel groups, so
  their new schedule restarts at the group heads at the transition instant.
* FB and DPFB clients start playing at the first slot boundary at or after
  arrival.  CTFB clients start immediately from their preloaded prefix.
* Every slot the client stores each broadcast segment it does not hold and
  has not yet played; everything else is counted in ``duplicates_skipped``.
* A segment is resident from the client slot in which it becomes usable
  (for slot-aligned clients, the slot it was broadcast in) through the slot in
  which it is played.  Preloaded segments are resident from client slot 1.
* A client whose slots straddle the server grid (a CTFB client arriving
  mid-slot) can use a broadcast that started before its playback slot only
  with ``receive_while_play``; otherwise it must wait for the segment to
  finish first.
* If the segment due for playback is not resident the client stalls for a
  whole slot and a starvation event is logged.

Times are tracked as integer ticks of a grid fine enough for every segment
boundary, arrival phase and transition in the scenario.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .core import CTFB, DPFB, FB, SchemeConfig, ValidationError, VideoSpec, segment_count, validate
from .scheduler import build_segment_map, correspondence, fb_transition_report, segment_at


class TransitionError(ValidationError):
    """A transition is misaligned or moves to an invalid configuration."""


@dataclass(frozen=True)
class Transition:
    at_slot_boundary: int
    new_config: SchemeConfig


@dataclass(frozen=True)
class SimScenario:
    video: VideoSpec
    initial: SchemeConfig
    arrival_phase: Fraction = Fraction(0)
    transitions: tuple[Transition, ...] = ()
    receive_while_play: bool = False
    # global slot (of the initial grid) in which the client arrives
    arrival_slot: int = 1


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    wall_time_s: Fraction
    k: int
    downloads: tuple[int, ...]
    duplicates_skipped: tuple[int, ...]
    resident_count: int
    resident_s: Fraction
    resident_bits: Fraction
    playback_segment: int | None
    starved: bool


@dataclass(frozen=True)
class Event:
    kind: str  # transition | starvation | replay | forward_gap | redownload
    slot: int
    wall_time_s: Fraction
    seconds: Fraction | None = None
    segment: int | None = None
    k_old: int | None = None
    k_new: int | None = None


@dataclass(frozen=True)
class TraceSummary:
    max_resident_s: Fraction
    max_resident_bits: Fraction
    max_resident_count: int
    total_downloaded_segments: int
    redundant_received_segments: int
    redundant_observed_segments: int
    redownloaded_segments: int
    starvation_slots: int
    playback_complete: bool


@dataclass(frozen=True)
class ClientTrace:
    scenario: SimScenario
    initial_wait_s: Fraction
    records: tuple[SlotRecord, ...]
    events: tuple[Event, ...]
    summary: TraceSummary

    def resident_counts(self) -> list[int]:
        return [r.resident_count for r in self.records]

    def events_of(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    def downloaded(self) -> list[int]:
        return [j for r in self.records for j in r.downloads]


@dataclass
class _Epoch:
    start: int  # wall tick at which this scheme becomes active
    config: SchemeConfig
    segmap: object
    origin: int  # wall tick of this schedule's global slot 1
    delta: int


def _family(config) -> type:
    return type(config)


def _check_transition(old, new):
    validate(new)
    if _family(old) is not _family(new):
        raise TransitionError(f"cannot switch from {type(old).__name__} to {type(new).__name__}")
    if isinstance(old, DPFB) and old.beta != new.beta:
        raise TransitionError("DPFB transitions keep beta fixed")
    if isinstance(old, CTFB) and old.gamma != new.gamma:
        raise TransitionError("CTFB transitions keep gamma fixed")


def _plan(scenario: SimScenario, unit: int) -> list[_Epoch]:
    video = scenario.video
    first = validate(scenario.initial)
    epochs = [_Epoch(-1, first, build_segment_map(video, first), 0, unit // segment_count(first))]
    for tr in scenario.transitions:
        cur = epochs[-1]
        _check_transition(cur.config, tr.new_config)
        if tr.at_slot_boundary < 1:
            raise TransitionError("transition boundaries are 1-based slot indices")
        when = cur.origin + (tr.at_slot_boundary - 1) * cur.delta
        if when <= cur.start:
            raise TransitionError("transitions must be strictly increasing in wall time")
        delta = unit // segment_count(tr.new_config)
        if not isinstance(tr.new_config, FB) and when % delta:
            raise TransitionError(
                f"transition at slot {tr.at_slot_boundary} is not on the k={tr.new_config.k} grid"
            )
        origin = 0 if isinstance(tr.new_config, CTFB) else when
        epochs.append(_Epoch(when, tr.new_config, build_segment_map(video, tr.new_config), origin, delta))
    return epochs


def _tick_unit(scenario: SimScenario) -> int:
    counts = [segment_count(scenario.initial)] + [segment_count(t.new_config) for t in scenario.transitions]
    unit = math.lcm(*counts)
    delta0 = scenario.video.duration / segment_count(scenario.initial)
    phase = Fraction(scenario.arrival_phase)
    if not 0 <= phase < delta0:
        raise ValidationError(f"arrival phase {phase} outside [0, {delta0})")
    # phase in ticks must be whole
    return unit * (phase * unit / scenario.video.duration).denominator


def _merge(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def _covered(merged, lo, hi) -> bool:
    return any(a <= lo and hi <= b for a, b in merged)


def _overlaps(merged, lo, hi) -> bool:
    return any(a < hi and lo < b for a, b in merged)


def simulate(scenario: SimScenario) -> ClientTrace:
    video = scenario.video
    if scenario.arrival_slot < 1:
        raise ValidationError("arrival_slot is 1-based")
    unit = _tick_unit(scenario)
    epochs = _plan(scenario, unit)
    sec_per_tick = video.duration / unit

    ep_i = 0
    ep = epochs[0]
    delta = ep.delta
    arrival = (scenario.arrival_slot - 1) * delta + int(Fraction(scenario.arrival_phase) / sec_per_tick)
    if isinstance(ep.config, CTFB):
        start = arrival
    else:
        start = -(-arrival // delta) * delta
    if len(epochs) > 1 and epochs[1].start < start:
        raise TransitionError("transitions must not precede the start of playback")
    aligned = (start - ep.origin) % delta == 0
    if not aligned and len(epochs) > 1:
        raise TransitionError("transitions need a client whose slots line up with the server grid")

    segmap = ep.segmap
    preload = set(segmap.preloaded)
    held: set[int] = set(preload)
    dropped: list[tuple[int, int]] = []
    pos = 0  # ticks of video already played
    m = 1  # next segment to play
    clock = start
    slot = 1
    starving = False
    limit = start + 8 * unit + 8 * max(e.delta for e in epochs)

    records: list[SlotRecord] = []
    events: list[Event] = []
    total_downloads = 0
    observed_redundant: set[tuple[int, int]] = set()
    redownloads = 0
    starved_slots = 0
    max_resident_s = Fraction(0)
    max_count = 0

    def secs(ticks: int) -> Fraction:
        return ticks * sec_per_tick

    def ticks(seconds: Fraction) -> int:
        value = seconds / sec_per_tick
        assert value.denominator == 1, seconds
        return value.numerator

    while m <= segmap.segment_count and clock < limit:
        while ep_i + 1 < len(epochs) and epochs[ep_i + 1].start <= clock:
            nxt = epochs[ep_i + 1]
            if nxt.start != clock:  # pragma: no cover - guarded by _plan
                raise TransitionError("transition fell inside a client slot")
            old = ep
            ep_i += 1
            ep = nxt
            events.append(Event("transition", slot, secs(clock), k_old=old.config.k, k_new=ep.config.k))
            if isinstance(ep.config, FB):
                rep = fb_transition_report(video, old.config.k, ep.config.k, secs(pos))
                if ep.config.k > old.config.k:
                    pos -= ticks(rep.replay_s)
                    if rep.replay_s:
                        events.append(Event("replay", slot, secs(clock), seconds=rep.replay_s))
                elif ep.config.k < old.config.k:
                    pos += ticks(rep.forward_gap_s)
                    if rep.forward_gap_s:
                        events.append(Event("forward_gap", slot, secs(clock), seconds=rep.forward_gap_s))
                held_iv = _merge(((j - 1) * old.delta, j * old.delta) for j in held)
                new_m = pos // ep.delta + 1
                new_held = {
                    j
                    for j in range(new_m, segment_count(ep.config) + 1)
                    if _covered(held_iv, (j - 1) * ep.delta, j * ep.delta)
                }
            else:
                corr = correspondence(old.config.k, ep.config.k, old.config)
                if pos % ep.delta:
                    raise TransitionError("playback position is not on the new grid")
                new_m = pos // ep.delta + 1
                # a coarse segment is held only if every fine piece of it is
                candidates = {j for i in held for j in corr.forward(i)}
                new_held = {j for j in candidates if all(i in held for i in corr.backward(j))}
            kept = _merge(((j - 1) * ep.delta, j * ep.delta) for j in new_held)
            for i in held:
                lo, hi = (i - 1) * old.delta, i * old.delta
                if not _covered(kept, lo, hi):
                    dropped.append((lo, hi))
            dropped = _merge(dropped)
            held = {j for j in new_held if j >= new_m}
            m = new_m
            delta = ep.delta
            segmap = ep.segmap
            preload = set(segmap.preloaded)
            starving = False

        # which server slot can feed this client slot
        if aligned:
            head = clock
        else:
            head = clock - (clock - ep.origin) % delta
            if not scenario.receive_while_play:
                head -= delta
        downloads: list[int] = []
        skipped: list[int] = []
        if head >= arrival and head >= ep.start:
            t = (head - ep.origin) // delta + 1
            for ch in range(segmap.channel_count):
                j = segment_at(segmap, ch, t)
                if j in preload:
                    observed_redundant.add((ep.config.k, j))
                if j < m or j in held:
                    skipped.append(j)
                    continue
                held.add(j)
                downloads.append(j)
                total_downloads += 1
                if dropped and _overlaps(dropped, (j - 1) * delta, j * delta):
                    redownloads += 1
                    events.append(Event("redownload", slot, secs(clock), segment=j))

        resident = len(held)
        resident_s = resident * secs(delta)
        if resident_s > max_resident_s:
            max_resident_s = resident_s
        max_count = max(max_count, resident)
        if m in held:
            played = m
            held.discard(m)
            m += 1
            pos += delta
            starving = False
        else:
            played = None
            starved_slots += 1
            if not starving:
                events.append(Event("starvation", slot, secs(clock), segment=m))
            starving = True
        records.append(
            SlotRecord(
                slot=slot,
                wall_time_s=secs(clock),
                k=ep.config.k,
                downloads=tuple(downloads),
                duplicates_skipped=tuple(skipped),
                resident_count=resident,
                resident_s=resident_s,
                resident_bits=video.seconds_to_bits(resident_s),
                playback_segment=played,
                starved=played is None,
            )
        )
        clock += delta
        slot += 1

    summary = TraceSummary(
        max_resident_s=max_resident_s,
        max_resident_bits=video.seconds_to_bits(max_resident_s),
        max_resident_count=max_count,
        total_downloaded_segments=total_downloads,
        redundant_received_segments=0,
        redundant_observed_segments=len(observed_redundant),
        redownloaded_segments=redownloads,
        starvation_slots=starved_slots,
        playback_complete=m > segmap.segment_count,
    )
    return ClientTrace(
        scenario=scenario,
        initial_wait_s=secs(start - arrival),
        records=tuple(records),
        events=tuple(events),
        summary=summary,
    )


@dataclass(frozen=True)
class PhaseSweep:
    phases: tuple[Fraction, ...]
    waits: tuple[Fraction, ...]
    worst_wait_s: Fraction
    average_wait_s: Fraction
    max_resident_s: Fraction
    starved: bool


def sweep_arrival_phases(scenario: SimScenario, phases: Sequence) -> PhaseSweep:
    phases = tuple(Fraction(p) for p in phases)
    if not phases:
        raise ValueError("need at least one phase")
    traces = [simulate(replace(scenario, arrival_phase=p)) for p in phases]
    waits = tuple(t.initial_wait_s for t in traces)
    return PhaseSweep(
        phases=phases,
        waits=waits,
        worst_wait_s=max(waits),
        average_wait_s=sum(waits, Fraction(0)) / len(waits),
        max_resident_s=max(t.summary.max_resident_s for t in traces),
        starved=any(t.summary.starvation_slots for t in traces),
    )


def verify_no_starvation(trace: ClientTrace) -> tuple[bool, int | None]:
    for ev in trace.events:
        if ev.kind == "starvation":
            return False, ev.slot
    return True, None


TRACE_COLUMNS = ("slot", "wall_time_s", "downloads", "resident_count", "resident_bits", "playback_segment", "starved")


def _dec(value: Fraction) -> str:
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{float(value):.9g}"


def trace_csv(trace: ClientTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace.records:
        writer.writerow(
            [
                r.slot,
                _dec(r.wall_time_s),
                ";".join(map(str, r.downloads)),
                r.resident_count,
                _dec(r.resident_bits),
                "" if r.playback_segment is None else r.playback_segment,
                int(r.starved),
            ]
        )
    return buf.getvalue()


def trace_summary_json(trace: ClientTrace) -> str:
    s = trace.summary
    sc = trace.scenario
    doc = {
        "scheme": type(sc.initial).__name__,
        "k": sc.initial.k,
        "aux": sc.initial.aux,
        "arrival_phase_s": _dec(sc.arrival_phase),
        "receive_while_play": sc.receive_while_play,
        "initial_wait_s": _dec(trace.initial_wait_s),
        "max_resident_s": _dec(s.max_resident_s),
        "max_resident_bits": _dec(s.max_resident_bits),
        "max_resident_count": s.max_resident_count,
        "total_downloaded_segments": s.total_downloaded_segments,
        "redundant_received_segments": s.redundant_received_segments,
        "redundant_observed_segments": s.redundant_observed_segments,
        "redownloaded_segments": s.redownloaded_segments,
        "starvation_slots": s.starvation_slots,
        "playback_complete": s.playback_complete,
        "events": [
            {
                k: (_dec(v) if isinstance(v, Fraction) else v)
                for k, v in (
                    ("kind", e.kind),
                    ("slot", e.slot),
                    ("wall_time_s", e.wall_time_s),
                    ("seconds", e.seconds),
                    ("segment", e.segment),
                    ("k_old", e.k_old),
                    ("k_new", e.k_new),
                )
                if v is not None
            }
            for e in trace.events
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
