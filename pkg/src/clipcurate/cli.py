"""``curate`` command line.

Exit codes: 0 success, 1 runtime error, 2 config error, 3 sink failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import Optional, Sequence

from .camera_motion import classify_clip, clip_features
from .config import STAGES, ConfigError, dump_config, load_config
from .media import MediaError, probe
from .sampler import SamplingError, plan_samples

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_SINK = 0, 1, 2, 3


def _print(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _stages(text: str) -> tuple:
    stages = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown stage(s) {bad}; choose from {list(STAGES)}")
    return stages


def cmd_run(args) -> int:
    from .pipeline import SinkFailure, run

    try:
        cfg = load_config(args.config)
        if args.stages:
            cfg = cfg.with_stages(args.stages)
        if args.workers:
            cfg = cfg.with_workers(args.workers)
        if args.sources:
            cfg = cfg.with_paths(sources=args.sources)
        if args.manifest:
            cfg = cfg.with_paths(manifest=args.manifest)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        cfg.validate()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(cfg)
    except SinkFailure as e:
        print(f"sink failure: {e}", file=sys.stderr)
        return EXIT_SINK
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    _print(report.to_dict())
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import MalformedManifest, write_report

    try:
        stats = write_report(args.manifest, args.out)
    except MalformedManifest as e:
        print(f"malformed manifest: {e}", file=sys.stderr)
        return EXIT_ERROR
    _print(stats)
    return EXIT_OK


def cmd_probe(args) -> int:
    try:
        meta = probe(args.source)
    except MediaError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    d = dataclasses.asdict(meta)
    d["fps"] = float(meta.fps)
    d["fps_rational"] = f"{meta.fps.numerator}/{meta.fps.denominator}"
    _print(d)
    return EXIT_OK


def cmd_sample(args) -> int:
    try:
        plan = plan_samples(args.clip_n, args.n, args.trim, args.fps)
    except SamplingError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    _print(plan.to_dict())
    return EXIT_OK


def cmd_classify(args) -> int:
    from .pipeline import source_trace

    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        meta, trace = source_trace(args.clip, cfg)
    except (MediaError, ValueError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    motions, deltas = trace.motions(), trace.luma_deltas()
    label = classify_clip(motions, cfg.classifier, deltas)
    _print({
        "source": args.clip,
        "frames": trace.frame_count,
        "label": label.label.value,
        "confidence": round(label.confidence, 6),
        "rule": label.rule,
        "features": clip_features(motions, cfg.classifier, deltas),
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curate", description="Curate camera-motion clips from source videos into a scored manifest.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline over a source list")
    r.add_argument("--config", help="TOML config file (defaults embedded)")
    r.add_argument("--stages", type=_stages, help=f"comma-separated subset of {','.join(STAGES)}")
    r.add_argument("--workers", type=int)
    r.add_argument("--sources", help="override paths.sources")
    r.add_argument("--manifest", help="override paths.manifest")
    r.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="statistics and histograms from a manifest")
    rep.add_argument("--manifest", required=True)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)

    pr = sub.add_parser("probe", help="print video metadata")
    pr.add_argument("source")
    pr.set_defaults(func=cmd_probe)

    s = sub.add_parser("sample", help="print a sampling plan")
    s.add_argument("--clip-n", type=int, required=True)
    s.add_argument("--n", type=int, default=85)
    s.add_argument("--trim", type=float, default=0.10)
    s.add_argument("--fps", type=float, default=30.0)
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("classify", help="classify one clip file (debug)")
    c.add_argument("--clip", required=True)
    c.add_argument("--config")
    c.set_defaults(func=cmd_classify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)
