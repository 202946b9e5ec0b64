"""Framed-datagram broadcast of a segment schedule.

Wire layout of one frame (big-endian, 29 bytes of overhead)::

    magic        u32   0x43544642 ("CTFB")
    version      u8    1
    scheme       u8    0=FB 1=DPFB 2=CTFB
    k            u8
    aux          u8    beta or gamma, 0 for FB
    segment      u32   1-based segment index
    offset       u32   byte offset of the chunk within the segment
    chunk_len    u16
    slot         u40   global broadcast slot
    channel      u8
    reserved     u8    0
    payload      chunk_len bytes
    crc          u32   CRC-32/ISO-HDLC of everything above
"""

from __future__ import annotations

import json
import logging
import random
import select
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .core import CTFB, DPFB, FB, ValidationError, VideoSpec, make_config
from .scheduler import SegmentMap, build_segment_map, segment_at

log = logging.getLogger(__name__)

MAGIC = 0x43544642
VERSION = 1
DEFAULT_CHUNK = 1024
HEADER = struct.Struct(">IBBBBIIH5sBB")
CRC = struct.Struct(">I")
OVERHEAD = HEADER.size + CRC.size
MAX_SLOT = 2**40 - 1

SCHEME_CODES = {FB: 0, DPFB: 1, CTFB: 2}
CODE_FAMILIES = {0: "fb", 1: "dpfb", 2: "ctfb"}


class FrameError(ValueError):
    pass


class BadMagic(FrameError):
    pass


class VersionMismatch(FrameError):
    pass


class CrcMismatch(FrameError):
    pass


class Truncated(FrameError):
    pass


@dataclass(frozen=True)
class ChunkFrame:
    scheme: int
    k: int
    aux: int
    segment_index: int
    chunk_offset: int
    slot: int
    channel: int
    payload: bytes
    version: int = VERSION
    reserved: int = 0

    @property
    def chunk_len(self) -> int:
        return len(self.payload)


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def encode_frame(frame: ChunkFrame) -> bytes:
    if len(frame.payload) > 0xFFFF:
        raise FrameError("payload longer than 65535 bytes")
    if not 0 <= frame.slot <= MAX_SLOT:
        raise FrameError("slot does not fit in 40 bits")
    head = HEADER.pack(
        MAGIC,
        frame.version,
        frame.scheme,
        frame.k,
        frame.aux,
        frame.segment_index,
        frame.chunk_offset,
        len(frame.payload),
        frame.slot.to_bytes(5, "big"),
        frame.channel,
        frame.reserved,
    )
    body = head + frame.payload
    return body + CRC.pack(crc32(body))


def decode_frame(data: bytes) -> ChunkFrame:
    data = bytes(data)
    if len(data) < OVERHEAD:
        raise Truncated(f"{len(data)} bytes is shorter than a bare header")
    (magic, version, scheme, k, aux, seg, off, clen, slot, ch, rsv) = HEADER.unpack_from(data)
    declared = OVERHEAD + clen
    (crc,) = CRC.unpack_from(data, len(data) - CRC.size)
    if crc != crc32(data[:-CRC.size]):
        if len(data) < declared:
            raise Truncated(f"datagram has {len(data)} bytes, header declares {declared}")
        raise CrcMismatch("CRC-32 check failed")
    if magic != MAGIC:
        raise BadMagic(f"bad magic 0x{magic:08x}")
    if version != VERSION:
        raise VersionMismatch(f"frame version {version}, expected {VERSION}")
    if len(data) != declared:
        raise Truncated(f"datagram has {len(data)} bytes, header declares {declared}")
    return ChunkFrame(
        scheme=scheme,
        k=k,
        aux=aux,
        segment_index=seg,
        chunk_offset=off,
        slot=int.from_bytes(slot, "big"),
        channel=ch,
        payload=data[HEADER.size : HEADER.size + clen],
        version=version,
        reserved=rsv,
    )


def segment_byte_ranges(total_bytes: int, n: int) -> list[tuple[int, int]]:
    """Split ``total_bytes`` into ``n`` near-equal contiguous ranges."""
    return [((j - 1) * total_bytes // n, j * total_bytes // n) for j in range(1, n + 1)]


def source_bytes_for(segmap: SegmentMap) -> int:
    bits = segmap.video.size_bits
    if bits % 8:
        raise ValidationError("video size is not a whole number of bytes")
    return bits // 8


@dataclass(frozen=True)
class Pacing:
    """How fast slots go by: ``real`` (one slot per segment duration),
    ``scale`` (sped up by ``factor``) or ``none``."""

    mode: str = "none"
    factor: float = 1.0

    def slot_seconds(self, segmap: SegmentMap) -> float | None:
        if self.mode == "none":
            return None
        if self.mode == "real":
            return float(segmap.segment_duration)
        if self.mode == "scale":
            if self.factor <= 0:
                raise ValidationError("pacing factor must be positive")
            return float(segmap.segment_duration) / self.factor
        raise ValidationError(f"unknown pacing mode {self.mode!r}")


UNPACED = Pacing()


def _frames_for(segmap, source, ranges, channel, slot, chunk_size):
    cfg = segmap.config
    seg = segment_at(segmap, channel, slot)
    lo, hi = ranges[seg - 1]
    size = hi - lo
    for off in range(0, max(size, 1), chunk_size):
        yield seg, off, size, ChunkFrame(
            scheme=SCHEME_CODES[type(cfg)],
            k=cfg.k,
            aux=cfg.aux,
            segment_index=seg,
            chunk_offset=off,
            slot=slot,
            channel=channel,
            payload=source[lo + off : lo + min(off + chunk_size, size)],
        )


def channel_stream(
    segmap: SegmentMap,
    source: bytes,
    channel: int,
    *,
    slots: int | None = None,
    start_slot: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    pacing: Pacing = UNPACED,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.monotonic,
) -> Iterator[bytes]:
    """Encoded frames of one channel, in (slot, offset) order.

    ``slots=None`` runs forever.  With pacing, each segment's chunks are spread
    uniformly across its slot, as a channel whose bandwidth equals the
    playback rate would deliver them.
    """
    if len(source) != source_bytes_for(segmap):
        raise ValidationError(f"source has {len(source)} bytes, video needs {source_bytes_for(segmap)}")
    if not 0 < chunk_size <= 0xFFFF:
        raise ValidationError("chunk size must lie in 1..65535")
    ranges = segment_byte_ranges(len(source), segmap.segment_count)
    slot_s = pacing.slot_seconds(segmap)
    t0 = clock()
    slot = start_slot
    while slots is None or slot < start_slot + slots:
        for _seg, off, size, frame in _frames_for(segmap, source, ranges, channel, slot, chunk_size):
            if slot_s is not None:
                due = t0 + (slot - start_slot + off / max(size, 1)) * slot_s
                delay = due - clock()
                if delay > 0:
                    sleep(delay)
            yield encode_frame(frame)
        slot += 1


def serve(
    segmap: SegmentMap,
    source: bytes,
    pacing: Pacing = UNPACED,
    *,
    slots: int | None = None,
    start_slot: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    **kw,
) -> dict[int, Iterator[bytes]]:
    """One frame iterator per channel.  ``slots`` defaults to one full period."""
    if slots is None:
        slots = segmap.hyperperiod
    return {
        ch: channel_stream(
            segmap, source, ch, slots=slots, start_slot=start_slot, chunk_size=chunk_size, pacing=pacing, **kw
        )
        for ch in range(segmap.channel_count)
    }


def interleave(streams: dict[int, Iterable[bytes]], seed: int | None = None) -> Iterator[bytes]:
    """Merge per-channel streams, keeping each channel's own order.

    With ``seed`` the channel picked at each step is random; otherwise the
    channels are visited round-robin.
    """
    iters = {ch: iter(s) for ch, s in streams.items()}
    rng = random.Random(seed) if seed is not None else None
    order = sorted(iters)
    i = 0
    while iters:
        if rng is not None:
            ch = rng.choice(order)
        else:
            ch = order[i % len(order)]
            i += 1
        try:
            yield next(iters[ch])
        except StopIteration:
            del iters[ch]
            order.remove(ch)


@dataclass
class AssemblyStats:
    frames: int = 0
    corrupt_frames: int = 0
    foreign_frames: int = 0
    duplicate_frames: int = 0
    duplicate_bytes: int = 0
    redundant_bytes: int = 0
    redundant_segments: set[int] = field(default_factory=set)


class Assembler:
    """Rebuilds segments from frames.

    Preloaded segments count as held from the start.  Bytes of a preloaded
    segment that arrive over the air are counted in ``redundant_bytes``; bytes
    of a segment already assembled from the air are ``duplicate_bytes``.
    Corrupt frames are counted and dropped.
    """

    def __init__(self, segmap: SegmentMap, preload: bytes | None = None):
        self.segmap = segmap
        self.total_bytes = source_bytes_for(segmap)
        self.ranges = segment_byte_ranges(self.total_bytes, segmap.segment_count)
        cfg = segmap.config
        self._ident = (SCHEME_CODES[type(cfg)], cfg.k, cfg.aux)
        self.preloaded = set(segmap.preloaded)
        self.segments: dict[int, bytes] = {}
        self.completed: list[int] = []
        self.stats = AssemblyStats()
        self._partial: dict[int, dict[int, bytes]] = {}
        if preload is not None:
            self._load_preload(preload)

    def _load_preload(self, preload: bytes):
        if not self.preloaded:
            if preload:
                raise ValidationError("this scheme has no preload")
            return
        lo = self.ranges[min(self.preloaded) - 1][0]
        hi = self.ranges[max(self.preloaded) - 1][1]
        if len(preload) != hi - lo:
            raise ValidationError(f"preload must be {hi - lo} bytes, got {len(preload)}")
        for j in self.preloaded:
            a, b = self.ranges[j - 1]
            self.segments[j] = preload[a - lo : b - lo]

    def seg_size(self, j: int) -> int:
        a, b = self.ranges[j - 1]
        return b - a

    def held(self, j: int) -> bool:
        return j in self.preloaded or j in self.segments

    def feed(self, datagram: bytes) -> ChunkFrame | None:
        self.stats.frames += 1
        try:
            frame = decode_frame(datagram)
        except FrameError as exc:
            self.stats.corrupt_frames += 1
            log.debug("dropping frame: %s", exc)
            return None
        j = frame.segment_index
        if (frame.scheme, frame.k, frame.aux) != self._ident or not 1 <= j <= self.segmap.segment_count:
            self.stats.foreign_frames += 1
            return None
        size = self.seg_size(j)
        if frame.chunk_offset + frame.chunk_len > size:
            self.stats.corrupt_frames += 1
            return None
        if j in self.preloaded:
            self.stats.redundant_bytes += frame.chunk_len
            self.stats.redundant_segments.add(j)
            return frame
        if j in self.segments:
            self.stats.duplicate_frames += 1
            self.stats.duplicate_bytes += frame.chunk_len
            return frame
        chunks = self._partial.setdefault(j, {})
        if frame.chunk_offset in chunks:
            self.stats.duplicate_frames += 1
            self.stats.duplicate_bytes += frame.chunk_len
            return frame
        chunks[frame.chunk_offset] = frame.payload
        if sum(len(c) for c in chunks.values()) == size:
            self.segments[j] = b"".join(chunks[o] for o in sorted(chunks))
            self.completed.append(j)
            del self._partial[j]
        return frame

    def feed_all(self, datagrams: Iterable[bytes]) -> "Assembler":
        for d in datagrams:
            self.feed(d)
        return self

    @property
    def complete(self) -> bool:
        return all(j in self.segments for j in range(1, self.segmap.segment_count + 1))

    def missing(self) -> list[int]:
        return [j for j in range(1, self.segmap.segment_count + 1) if not self.held(j)]

    def video_bytes(self) -> bytes:
        if not self.complete:
            raise ValidationError("video not fully assembled")
        return b"".join(self.segments[j] for j in range(1, self.segmap.segment_count + 1))


def assemble(datagrams: Iterable[bytes], segmap: SegmentMap, preload: bytes | None = None) -> Assembler:
    return Assembler(segmap, preload).feed_all(datagrams)


def preload_bytes(segmap: SegmentMap, source: bytes) -> bytes:
    if not segmap.preloaded:
        return b""
    ranges = segment_byte_ranges(len(source), segmap.segment_count)
    return source[ranges[min(segmap.preloaded) - 1][0] : ranges[max(segmap.preloaded) - 1][1]]


# --- datagram sockets -------------------------------------------------------
#
# The server binds one UDP port per channel (base_port + channel).  A receiver
# subscribes to a channel by sending JOIN to its port; the server answers with
# a JSON descriptor and from then on forwards that channel's frames.

JOIN = b"JOIN"
DESCRIPTOR_TAG = b"NVOD"


def descriptor(segmap: SegmentMap, chunk_size: int) -> bytes:
    cfg = segmap.config
    doc = {
        "scheme": cfg.family,
        "k": cfg.k,
        "aux": cfg.aux,
        "size_bits": segmap.video.size_bits,
        "rate_bps": segmap.video.playback_rate_bps,
        "channels": segmap.channel_count,
        "chunk_size": chunk_size,
    }
    return DESCRIPTOR_TAG + json.dumps(doc, sort_keys=True).encode()


def parse_descriptor(data: bytes) -> SegmentMap:
    if not data.startswith(DESCRIPTOR_TAG):
        raise FrameError("not a descriptor")
    doc = json.loads(data[len(DESCRIPTOR_TAG) :])
    aux = doc["aux"]
    cfg = make_config(doc["scheme"], doc["k"], beta=aux, gamma=aux)
    return build_segment_map(VideoSpec(doc["size_bits"], doc["rate_bps"]), cfg)


class UdpServer:
    """Runs one emitter thread per channel until ``stop()`` or ``slots`` run out."""

    def __init__(
        self,
        segmap: SegmentMap,
        source: bytes,
        host: str = "127.0.0.1",
        base_port: int = 0,
        pacing: Pacing = UNPACED,
        slots: int | None = None,
        chunk_size: int = DEFAULT_CHUNK,
    ):
        self.segmap = segmap
        self.source = source
        self.pacing = pacing
        self.slots = slots
        self.chunk_size = chunk_size
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.socks: list[socket.socket] = []
        for ch in range(segmap.channel_count):
            s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            s.bind((host, base_port + ch if base_port else 0))
            s.setblocking(False)
            self.socks.append(s)
        self.frames_sent = [0] * segmap.channel_count
        self._desc = descriptor(segmap, chunk_size)
        self._finished = 0
        self._lock = threading.Lock()
        self.done = threading.Event()

    @property
    def ports(self) -> list[int]:
        return [s.getsockname()[1] for s in self.socks]

    def _poll_joins(self, sock, subscribers):
        while True:
            try:
                data, addr = sock.recvfrom(64)
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                return
            if data == JOIN:
                subscribers.add(addr)
                sock.sendto(self._desc, addr)

    def _run(self, ch: int):
        sock = self.socks[ch]
        subscribers: set = set()
        stream = channel_stream(
            self.segmap,
            self.source,
            ch,
            slots=self.slots,
            chunk_size=self.chunk_size,
            pacing=self.pacing,
            sleep=self._stop.wait,
        )
        for datagram in stream:
            if self._stop.is_set():
                break
            self._poll_joins(sock, subscribers)
            for addr in list(subscribers):
                try:
                    sock.sendto(datagram, addr)
                except OSError as exc:
                    log.warning("channel %d: send to %s failed: %s", ch, addr, exc)
            self.frames_sent[ch] += 1
        with self._lock:
            self._finished += 1
            if self._finished == len(self.socks):
                self.done.set()
        # keep answering JOINs until stopped so late receivers still learn the map
        while not self._stop.is_set():
            self._poll_joins(sock, subscribers)
            self._stop.wait(0.01)

    def start(self) -> "UdpServer":
        for ch in range(len(self.socks)):
            t = threading.Thread(target=self._run, args=(ch,), daemon=True, name=f"channel-{ch}")
            t.start()
            self._threads.append(t)
        return self

    def stop(self):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2)
        for s in self.socks:
            s.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def watch(
    host: str,
    ports: list[int] | int,
    preload: bytes | None = None,
    timeout: float = 30.0,
) -> Assembler:
    """Subscribe to every channel and assemble until complete or ``timeout``.

    ``ports`` is either the explicit per-channel port list or the base port.
    """
    socks: list[socket.socket] = []
    deadline = time.monotonic() + timeout
    try:
        first = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        socks.append(first)
        port0 = ports[0] if isinstance(ports, list) else ports
        segmap = None
        while segmap is None:
            if time.monotonic() > deadline:
                raise TimeoutError("no descriptor from server")
            first.sendto(JOIN, (host, port0))
            ready, _, _ = select.select([first], [], [], 0.2)
            if ready:
                data = first.recv(65535)
                if data.startswith(DESCRIPTOR_TAG):
                    segmap = parse_descriptor(data)
        asm = Assembler(segmap, preload)
        for ch in range(1, segmap.channel_count):
            s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            socks.append(s)
            port = ports[ch] if isinstance(ports, list) else ports + ch
            s.sendto(JOIN, (host, port))
        while not all(asm.held(j) for j in range(1, segmap.segment_count + 1)):
            left = deadline - time.monotonic()
            if left <= 0:
                break
            ready, _, _ = select.select(socks, [], [], min(left, 0.2))
            for s in ready:
                data = s.recv(65535)
                if data.startswith(DESCRIPTOR_TAG):
                    continue
                asm.feed(data)
        return asm
    finally:
        for s in socks:
            s.close()
