"""Command-line entry point: ``lfmicroscan <command> [options]``.

Exit codes:

    0   success
    2   invalid configuration or arguments
    10  simulate      14  fuse        17  evaluate
    11  calibrate     15  deconv      18  report
    12  decode        16  superres
    13  register
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .errors import ConfigurationError, LFError
from .pipeline import EXIT_CODES, PipelineConfig, Run, StageError, aggregate_reports, load_config

COUNT_CHOICES = (1, 2, 4, 8, 16)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="PipelineConfig JSON file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads (1 gives the reference output)")
    common.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: ./run)")

    p = argparse.ArgumentParser(prog="lfmicroscan", description="Micro-scanning light field simulation and fusion.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render the white image and raw captures")
    s.add_argument("--count", type=int, choices=COUNT_CHOICES, default=16,
                   help="simulate only the captures this subset needs")

    sub.add_parser("calibrate", parents=[common], help="fit the lens grid to the white image")

    for name, text in (("decode", "decode raw captures into light fields"),
                       ("register", "estimate shifts between light fields"),
                       ("fuse", "fuse registered light fields onto a finer grid"),
                       ("deconv", "deconvolve fused perspectives"),
                       ("superres", "single-capture MAP super-resolution baseline"),
                       ("evaluate", "score outputs against the known scene")):
        c = sub.add_parser(name, parents=[common], help=text)
        c.add_argument("--captures", type=int, nargs="+", choices=COUNT_CHOICES,
                       help="capture counts to process (default: from config)")
        if name == "fuse":
            c.add_argument("--enhancement", type=int)
        if name == "evaluate":
            c.add_argument("--threshold", type=float, help="contrast threshold for the frequency cutoff")

    pl = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    pl.add_argument("--captures", type=int, nargs="+", choices=COUNT_CHOICES)
    pl.add_argument("--enhancement", type=int)
    pl.add_argument("--threshold", type=float, help="contrast threshold for the frequency cutoff")

    r = sub.add_parser("report", help="aggregate reports from run directories")
    r.add_argument("runs", nargs="+", type=Path)
    r.add_argument("--out", type=Path, default=Path("report"))

    sub.add_parser("default-config", parents=[common], help="print the default configuration as JSON")
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    if getattr(args, "enhancement", None) is not None:
        cfg = replace(cfg, fusion=replace(cfg.fusion, enhancement=args.enhancement))
        if cfg.superres is not None:
            cfg = replace(cfg, superres=replace(cfg.superres, upscale_factor=args.enhancement))
    if getattr(args, "threshold", None) is not None:
        cfg = replace(cfg, metrics=replace(cfg.metrics, threshold=args.threshold))
    if getattr(args, "captures", None):
        cfg = replace(cfg, captures=tuple(args.captures))
    return cfg


def _dispatch(args) -> int:
    if args.command == "report":
        rows, missing = aggregate_reports(args.runs, args.out)
        for m in missing:
            print(f"missing: no reports under {m}", file=sys.stderr)
        print(f"{len(rows)} rows written to {args.out / 'summary.csv'}")
        return 0 if rows else EXIT_CODES["report"]

    cfg = _config(args)
    if args.command == "default-config":
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return 0
    run = Run(args.out, cfg)
    run.root.mkdir(parents=True, exist_ok=True)
    io.write_json(run.root / "config.json", cfg.to_dict())
    counts = cfg.captures
    cmd = args.command
    if cmd == "simulate":
        run.simulate((args.count,))
    elif cmd == "calibrate":
        run.calibrate()
    elif cmd == "decode":
        run.decode(run.labels_for(counts))
    elif cmd == "pipeline":
        for c, reports in run.run(counts).items():
            for rep in reports:
                print(_summary_line(rep))
        return 0
    else:
        step = {"register": run.register, "fuse": run.fuse, "deconv": run.deconv,
                "superres": run.superres, "evaluate": run.evaluate}[cmd]
        for c in counts:
            res = step(c)
            if cmd == "evaluate":
                for rep in res:
                    print(_summary_line(rep))
    run.save_timings()
    return 0


def _summary_line(rep) -> str:
    parts = [rep.config_label]
    if rep.psnr_db is not None:
        parts.append(f"psnr={rep.psnr_db:.2f}dB")
    if rep.ssim is not None:
        parts.append(f"ssim={rep.ssim:.4f}")
    if rep.cutoff_cycles_per_mm is not None:
        parts.append(f"cutoff={rep.cutoff_cycles_per_mm:.1f}c/mm")
    return " ".join(parts)


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigurationError as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    except LFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
