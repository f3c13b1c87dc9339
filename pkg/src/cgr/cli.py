"""Command line entry point: ``cgr run|sweep|report|plotdata|synth|serve``.

Settings resolve in this order: command-line flag, then ``--config`` file
(flat ``key = value`` lines using the flag names), then defaults. When no
backend is given anywhere, ``$CGR_BACKEND_URL`` selects a remote backend.

Exit codes: 0 success, 1 configuration error, 2 backend error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from cgr.config import DEFAULT_PENALTIES, ExperimentConfig
from cgr.errors import (
    BackendUnavailable,
    ConfigError,
    DatasetError,
    InputError,
    PlotDataError,
    ProtocolError,
    TokenizationError,
    TraceFormatError,
    UnknownBackend,
)

log = logging.getLogger("cgr")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_DATA = 0, 1, 2, 3


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _seeds(text):
    """Comma list with optional inclusive ranges: ``42`` / ``1,2,3`` / ``0-63``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        lo, dash, hi = part.partition("-")
        if dash and lo:
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _modes(text):
    return tuple(m.strip() for m in str(text).split(",") if m.strip())


# flag name -> (config field, parser)
FIELDS = {
    "mode": ("modes", _modes),
    "budget": ("budgets", _ints),
    "budgets": ("budgets", _ints),
    "threshold": ("thresholds", _floats),
    "thresholds": ("thresholds", _floats),
    "interval": ("probe_interval", int),
    "seeds": ("seeds", _seeds),
    "penalties": ("penalties", _floats),
    "backend": ("backend", str),
    "probe-backend": ("probe_backend", str),
    "dataset": ("dataset", str),
    "out": ("out", str),
    "system-prompt": ("system_prompt", str),
    "template": ("template", str),
    "abstain-threshold": ("abstain_threshold", float),
    "max-answer-tokens": ("max_answer_tokens", int),
    "workers": ("workers", int),
}


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key = key.strip().lstrip("-").replace("_", "-")
        if not eq or key not in FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown or malformed entry {raw!r}")
        values[key] = value.strip().strip('"')
    return values


def resolve_config(args, command: str) -> ExperimentConfig:
    raw = read_config_file(args.config) if getattr(args, "config", None) else {}
    for flag in FIELDS:
        value = getattr(args, flag.replace("-", "_"), None)
        if value is not None:
            raw[flag] = value
    if command == "run":
        for flag in ("thresholds", "budgets"):
            if flag in raw:
                raise ConfigError(f"'{flag}' is a sweep setting; use `cgr sweep`")
    kwargs = {}
    try:
        for flag, value in raw.items():
            name, parse = FIELDS[flag]
            if name in ("template", "system_prompt"):
                value = value.replace("\\n", "\n")
            kwargs[name] = parse(value)
    except ValueError as exc:
        raise ConfigError(f"bad value: {exc}") from None
    if command == "run":
        for name in ("budgets", "thresholds"):
            if name in kwargs and len(kwargs[name]) != 1:
                raise ConfigError(f"`cgr run` takes a single {name[:-1]}; use `cgr sweep` for several")
    if "backend" not in kwargs and os.environ.get("CGR_BACKEND_URL"):
        kwargs["backend"] = "remote:" + os.environ["CGR_BACKEND_URL"]
    return ExperimentConfig(**kwargs)


def _add_run_flags(p, sweep=False):
    p.add_argument("--config", help="flat key = value file with defaults for any flag")
    p.add_argument("--mode", help="baseline, budget-forcing, cgr or cgr-forcing (comma list allowed)")
    p.add_argument("--budget", help="thinking token budget (default 32000)")
    p.add_argument("--threshold", help="certainty threshold (default 0.97)")
    p.add_argument("--interval", help="probe every N thinking tokens (default 1000)")
    p.add_argument("--seeds", help="comma list or inclusive range, e.g. 0-63 (default 42)")
    p.add_argument("--penalties", help=f"grade penalties (default {','.join(map(str, DEFAULT_PENALTIES))})")
    p.add_argument("--backend", help="mock[:k=v,...], trace:PATH, remote[:URL] or http://...")
    p.add_argument("--probe-backend", dest="probe_backend", help="separate backend for certainty probes")
    p.add_argument("--dataset", help="line-delimited JSON questions")
    p.add_argument("--out", help="run directory")
    p.add_argument("--system-prompt", dest="system_prompt")
    p.add_argument("--template", help="prompt format string with {system_prompt} and {question}")
    p.add_argument("--abstain-threshold", dest="abstain_threshold",
                   help="certainty under which the certainty-below grade abstains (default: threshold)")
    p.add_argument("--max-answer-tokens", dest="max_answer_tokens")
    p.add_argument("--workers", help="parallel worker processes (default 1)")
    if sweep:
        p.add_argument("--thresholds", help="comma list of thresholds")
        p.add_argument("--budgets", help="comma list of budgets")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgr", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("run", help="run one configuration over a dataset"))
    _add_run_flags(sub.add_parser("sweep", help="run a grid of thresholds and/or budgets"), sweep=True)

    p = sub.add_parser("report", help="regenerate summary reports from a run's trace files")
    p.add_argument("run_dir")

    p = sub.add_parser("plotdata", help="emit CSV series for the figures")
    p.add_argument("run_dir")
    p.add_argument("--out", help="output directory (default RUN_DIR/plots)")

    p = sub.add_parser("synth", help="write a synthetic arithmetic dataset")
    p.add_argument("--questions", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="serve a mock model over the HTTP wire protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--crossing-step", type=int, default=3000)
    p.add_argument("--answer", type=int, default=204)
    return parser


def cmd_run(args, command):
    from cgr.experiment import load_dataset, run_experiment

    config = resolve_config(args, command)
    if not config.dataset:
        raise ConfigError("--dataset is required")
    dataset = load_dataset(config.dataset)
    out = run_experiment(config, dataset)
    print(out)


def cmd_report(args):
    from cgr.experiment import load_trace_records, write_manifest, write_reports

    run_dir = Path(args.run_dir)
    try:
        cfg = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read {run_dir / 'config.json'}: {exc}") from None
    config = ExperimentConfig(**cfg)
    records = load_trace_records(run_dir)
    if not records:
        raise DatasetError(f"no trace files under {run_dir / 'traces'}")
    files = write_reports(run_dir, records, config)
    old = json.loads((run_dir / "manifest.json").read_text()) if (run_dir / "manifest.json").exists() else {}
    traces = {k: v for k, v in old.get("files", {}).items() if k.startswith("traces/")}
    write_manifest(run_dir, config, {**traces, **files}, old.get("failures", []))
    print(run_dir)


def cmd_plotdata(args):
    from cgr.plotdata import emit_plot_data

    for path in emit_plot_data(args.run_dir, args.out).values():
        print(path)


def cmd_synth(args):
    from cgr.experiment import synthetic_dataset, write_dataset

    write_dataset(args.out, synthetic_dataset(args.questions, args.seed))
    print(args.out)


def cmd_serve(args):
    from cgr.backend import MockProfile, StubServer, build_mock, default_specials, default_vocabulary

    vocab = default_vocabulary()
    profile = MockProfile(crossing_step=args.crossing_step, pre_certainty=0.8, post_certainty=0.99,
                          answer_digits=tuple(int(c) for c in str(args.answer)))
    server = StubServer(build_mock(args.seed, profile, vocab, default_specials(vocab)), host=args.host, port=args.port)
    print(f"serving on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("run", "sweep"):
            cmd_run(args, args.command)
        elif args.command == "report":
            cmd_report(args)
        elif args.command == "plotdata":
            cmd_plotdata(args)
        elif args.command == "synth":
            cmd_synth(args)
        elif args.command == "serve":
            cmd_serve(args)
    except (ConfigError, UnknownBackend) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendUnavailable, ProtocolError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DatasetError, TraceFormatError, PlotDataError, InputError, TokenizationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
