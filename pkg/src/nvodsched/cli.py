"""Command-line entry point: ``nvodsched <command> ...``.

Exit codes: 0 ok, 1 validation error, 2 I/O error, 3 starvation (simulate
with ``--fail-on-starve``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import analytics, harness
from .core import ValidationError, VideoSpec, make_config
from .scheduler import build_segment_map, schedule_csv
from .simulator import SimScenario, Transition, simulate, trace_csv, trace_summary_json, verify_no_starvation
from .transport import Pacing, UdpServer, preload_bytes, watch

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_STARVED = 0, 1, 2, 3

log = logging.getLogger("nvodsched")


def _scheme_args(p):
    p.add_argument("--scheme", choices=("fb", "dpfb", "ctfb"), required=True)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--beta", type=int, default=2)
    p.add_argument("--gamma", type=int, default=2)


def _video_args(p, size=True):
    if size:
        p.add_argument("--size-mb", type=Fraction, default=Fraction(10))
    p.add_argument("--rate-kbps", type=Fraction, default=Fraction(10))


def _config(args):
    return make_config(args.scheme, args.k, beta=args.beta, gamma=args.gamma)


def _transition(text: str):
    try:
        slot, k = text.split(":")
        return int(slot), int(k)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SLOT:K, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvodsched", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file mirroring the flags (flags win)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="print or export the broadcast table")
    _scheme_args(p)
    _video_args(p)
    p.add_argument("--slots", type=int, default=None, help="default: one full period")
    p.add_argument("--csv", dest="csv_path")

    p = sub.add_parser("analyze", help="closed-form metrics of one configuration")
    _scheme_args(p)
    _video_args(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("simulate", help="run one client through the slot simulator")
    _scheme_args(p)
    _video_args(p)
    p.add_argument("--phase", type=Fraction, default=Fraction(0), help="arrival offset as a fraction of a slot")
    p.add_argument("--arrival-slot", type=int, default=1)
    p.add_argument("--transition", type=_transition, action="append", default=[], metavar="SLOT:K2")
    p.add_argument("--receive-while-play", action="store_true")
    p.add_argument("--trace", required=True, help="CSV trace path; the JSON summary goes next to it")
    p.add_argument("--fail-on-starve", action="store_true")

    p = sub.add_parser("figures", help="write fig6.csv .. fig9.csv")
    p.add_argument("--out", required=True)
    _video_args(p)
    p.add_argument("--beta", type=int, default=2)
    p.add_argument("--gamma", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)

    p = sub.add_parser("serve", help="broadcast a file over UDP, one port per channel")
    _scheme_args(p)
    _video_args(p, size=False)
    p.add_argument("--input", required=True)
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--base-port", type=int, required=True)
    p.add_argument("--pace", nargs="+", default=["none"], metavar="MODE", help="real | none | scale F")
    p.add_argument("--slots", type=int, default=None, help="stop after this many slots (default: run forever)")
    p.add_argument("--chunk-size", type=int, default=1024)
    p.add_argument("--export-preload", help="write the bytes clients must preload")

    p = sub.add_parser("watch", help="receive a broadcast and write the video")
    p.add_argument("--connect", default="127.0.0.1")
    p.add_argument("--base-port", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preload")
    p.add_argument("--timeout", type=float, default=60.0)
    return parser


def _read_config(path) -> dict:
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = _read_config(known.config)
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            dests = {a.dest: a for a in sp._actions}
            defaults = {}
            for key, raw in values.items():
                a = dests.get(key)
                if a is None:
                    continue
                if isinstance(a, argparse._StoreTrueAction):
                    defaults[key] = raw.lower() in ("1", "true", "yes", "on")
                elif isinstance(a, argparse._AppendAction):
                    defaults[key] = [a.type(v) for v in raw.split(",") if v]
                elif a.nargs == "+":
                    defaults[key] = raw.split()
                else:
                    defaults[key] = a.type(raw) if a.type else raw
                    a.required = False
            sp.set_defaults(**defaults)


def _video(args, size_bits=None) -> VideoSpec:
    rate = args.rate_kbps * 1000
    if rate.denominator != 1:
        raise ValidationError("rate must be a whole number of bits per second")
    if size_bits is None:
        return VideoSpec.from_mb(args.size_mb, args.rate_kbps)
    return VideoSpec(size_bits, int(rate))


def cmd_schedule(args):
    segmap = build_segment_map(_video(args), _config(args))
    text = schedule_csv(segmap, args.slots or segmap.hyperperiod)
    if args.csv_path:
        Path(args.csv_path).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze(args):
    video = _video(args)
    metrics = analytics.analyze(video, _config(args))
    doc = {k: (harness.fmt6(v) if isinstance(v, Fraction) else v) for k, v in metrics.as_dict().items()}
    doc["max_buffer_formula_MB"] = harness.fmt6(video.seconds_to_mb(metrics.max_buffer_formula_s))
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        for key in sorted(doc):
            print(f"{key:28} {doc[key]}")
    return EXIT_OK


def cmd_simulate(args):
    video = _video(args)
    config = _config(args)
    delta = analytics.segment_duration(video, config)
    transitions = []
    current = config
    for slot, k2 in args.transition:
        current = current.with_k(k2)
        transitions.append(Transition(slot, current))
    scenario = SimScenario(
        video,
        config,
        arrival_phase=args.phase * delta,
        transitions=tuple(transitions),
        receive_while_play=args.receive_while_play,
        arrival_slot=args.arrival_slot,
    )
    trace = simulate(scenario)
    path = Path(args.trace)
    path.write_text(trace_csv(trace))
    path.with_suffix(".json").write_text(trace_summary_json(trace) + "\n")
    ok, slot = verify_no_starvation(trace)
    print(f"initial wait {harness.fmt6(trace.initial_wait_s)} s, peak storage "
          f"{harness.fmt6(trace.summary.max_resident_s)} s, starvation: {'none' if ok else f'first at slot {slot}'}")
    if not ok and args.fail_on_starve:
        return EXIT_STARVED
    return EXIT_OK


def cmd_figures(args):
    video = _video(args)
    datasets = harness.all_figures(video, args.k_max, args.beta, args.gamma)
    for path in harness.write_figures(args.out, datasets):
        print(path)
    return EXIT_OK


def _pacing(tokens) -> Pacing:
    mode = tokens[0]
    if mode == "scale":
        if len(tokens) != 2:
            raise ValidationError("--pace scale needs a factor")
        return Pacing("scale", float(tokens[1]))
    if len(tokens) != 1 or mode not in ("real", "none"):
        raise ValidationError(f"bad --pace {' '.join(tokens)!r}")
    return Pacing(mode)


def cmd_serve(args):
    source = Path(args.input).read_bytes()
    video = _video(args, size_bits=len(source) * 8)
    segmap = build_segment_map(video, _config(args))
    if args.export_preload:
        Path(args.export_preload).write_bytes(preload_bytes(segmap, source))
    server = UdpServer(
        segmap, source, args.bind, args.base_port, _pacing(args.pace), slots=args.slots, chunk_size=args.chunk_size
    )
    print(f"serving {segmap.channel_count} channels on {args.bind}:{server.ports[0]}..{server.ports[-1]}", flush=True)
    server.start()
    try:
        while not server.done.wait(0.5):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_watch(args):
    pre = Path(args.preload).read_bytes() if args.preload else None
    asm = watch(args.connect, args.base_port, pre, timeout=args.timeout)
    s = asm.stats
    print(
        f"frames {s.frames}, corrupt {s.corrupt_frames}, duplicate {s.duplicate_frames}, "
        f"redundant bytes {s.redundant_bytes} ({len(s.redundant_segments)} segments)"
    )
    if not asm.complete:
        print(f"incomplete; missing segments {asm.missing()}", file=sys.stderr)
        return EXIT_IO
    Path(args.out).write_bytes(asm.video_bytes())
    return EXIT_OK


COMMANDS = {
    "schedule": cmd_schedule,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "figures": cmd_figures,
    "serve": cmd_serve,
    "watch": cmd_watch,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: bad config file: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, TimeoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
