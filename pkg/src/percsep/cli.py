"""Command-line entry point.

    percsep synth     --out run/
    percsep diarize   --out run/ [--mode fixed|strokes] [--mixture x.wav]
    percsep identify  --out run/ [--models id_models.json]
    percsep separate  --out run/ [--net mask_net.json]
    percsep score     --out run/ [--emit-csv scores.csv] [--max-der 10]
    percsep run-all   --out run/

Exit codes: 0 success, 1 a scoring threshold was missed, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import typing
from dataclasses import MISSING, fields

from . import pipeline
from .config import RunConfig

EXIT_OK, EXIT_THRESHOLD, EXIT_IO = 0, 1, 2

# Config fields that are not sensible as flags (the plan is JSON-only).
_NO_FLAG = {"plan"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    hints = typing.get_type_hints(RunConfig)
    g = p.add_argument_group("configuration overrides")
    for f in fields(RunConfig):
        if f.name in _NO_FLAG:
            continue
        flag = "--" + f.name.replace("_", "-")
        hint = hints[f.name]
        default = f.default if f.default is not MISSING else None
        if hint is bool:
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None,
                           help=f"(default {default})")
            continue
        base = next((t for t in typing.get_args(hint) if t is not type(None)), hint)
        kw = {"choices": ["fixed", "strokes"]} if f.name == "mode" else {}
        g.add_argument(flag, dest=f.name, type=base, default=None, help=f"(default {default})", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="percsep", description="Diarization-driven separation of two percussion voices.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    specs = {
        "synth": "write a synthetic recording, its tracks, truth and onsets",
        "diarize": "cluster the mixture into relative voice labels",
        "identify": "name the clusters MRIDANGAM / GHATAM / OVERLAP",
        "separate": "separate overlapped intervals and the whole recording",
        "score": "print DER, purity, accuracy and GSDR tables",
        "run-all": "run every stage in order",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", required=True, help="working directory for artifacts")
        p.add_argument("--config", help="JSON run configuration")
        if name in ("diarize", "identify", "separate"):
            p.add_argument("--mixture", help="mixture WAV (default: <out>/mixture.wav)")
        if name == "identify":
            p.add_argument("--models", help="pre-trained identification models (JSON)")
        if name == "separate":
            p.add_argument("--net", help="pre-trained mask network (JSON)")
        if name in ("score", "run-all"):
            p.add_argument("--emit-csv", help="also write the scores as CSV")
        _add_config_flags(p)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    return cfg.replace(**overrides) if overrides else cfg


def _report(report: pipeline.ScoreReport, cfg: RunConfig) -> int:
    print(report.format())
    failures = pipeline.thresholds_met(report, cfg)
    for msg in failures:
        print(f"threshold failed: {msg}", file=sys.stderr)
    return EXIT_THRESHOLD if failures else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        cmd = args.command
        if cmd == "synth":
            for path in pipeline.stage_synth(cfg, args.out):
                print(path)
        elif cmd == "diarize":
            for path in pipeline.stage_diarize(cfg, args.out, args.mixture):
                print(path)
        elif cmd == "identify":
            for path in pipeline.stage_identify(cfg, args.out, args.mixture, args.models):
                print(path)
        elif cmd == "separate":
            for path in pipeline.stage_separate(cfg, args.out, args.mixture, args.net):
                print(path)
        elif cmd == "score":
            return _report(pipeline.stage_score(cfg, args.out, args.emit_csv), cfg)
        else:
            return _report(pipeline.run_all(cfg, args.out, args.emit_csv), cfg)
    except pipeline.MissingArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (OSError, ValueError) as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
