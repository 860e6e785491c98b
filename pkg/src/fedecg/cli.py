"""Command-line entry point: ``fedecg synth | run | compare``.

Exit codes: 0 success, 1 user error (bad config, missing file, invalid
data), 2 internal error.  Failures print one ``error: <kind>: <message>`` line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

from .errors import FedEcgError, StateError
from .synth import GENERATOR_CLASSES

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2

log = logging.getLogger("fedecg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"error: usage: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedecg", description="Federated ECG arrhythmia experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset (manifest + record CSVs)")
    s.add_argument("--config", help="JSON file with classes, per_class, fs, seconds, seed")
    s.add_argument("--classes", default=",".join(GENERATOR_CLASSES))
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--fs", type=float, default=257.0)
    s.add_argument("--seconds", type=float, default=16.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("run", help="run one experiment (or a client-count sweep)")
    r.add_argument("--config", required=True, help="experiment JSON config")
    r.add_argument("--out", help="report directory (overrides config)")
    r.add_argument("--seed", type=int, help="master seed (overrides config)")

    c = sub.add_parser("compare", help="tabulate finished reports as CSV")
    c.add_argument("reports", nargs="+", help="report directories")
    c.add_argument("--out", help="write CSV here instead of stdout")
    return p


def cmd_synth(args) -> int:
    from .signal import write_dataset
    from .synth import synth_dataset

    spec = {"classes": args.classes.split(","), "per_class": args.per_class,
            "fs": args.fs, "seconds": args.seconds, "seed": 0}
    if args.config:
        spec.update(json.loads(Path(args.config).read_text()))
    if args.seed is not None:
        spec["seed"] = args.seed
    classes = [c.strip() for c in spec["classes"] if c.strip()]
    ds = synth_dataset(classes, spec["per_class"], spec["seed"], spec["fs"], spec["seconds"])
    write_dataset(ds, args.out)
    counts = Counter(r.label for r in ds)
    for cls in classes:
        print(f"[synth] {cls},{counts[cls]}")
    print(f"[synth] total,{len(ds)}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline import ExperimentConfig, prepare_data, run_scenario
    from .report import make_report, report_dir

    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg = replace(cfg, out=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data = prepare_data(cfg)
    counts = cfg.client_counts
    for n in counts:
        result = run_scenario(cfg, data, n)
        out = make_report(result, report_dir(cfg.out, result, sweep=len(counts) > 1))
        h = result.history
        print(f"[run] scenario={cfg.scenario} model={cfg.model.upper()} n_clients={n} "
              f"rounds={len(h.rounds)} f1={h.test.f1:.6f} accuracy={h.test.accuracy:.6f} "
              f"seconds={result.total_seconds:.2f} report={out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .report import compare, compare_csv

    text = compare_csv(compare(args.reports))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _one_line(msg: str) -> str:
    return " ".join(str(msg).split())


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    handler = {"synth": cmd_synth, "run": cmd_run, "compare": cmd_compare}[args.command]
    try:
        return handler(args)
    except StateError as exc:
        print(f"error: internal: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INTERNAL
    except (FedEcgError, FileNotFoundError, NotADirectoryError, PermissionError,
            json.JSONDecodeError, KeyError) as exc:
        kind = type(exc).__name__
        print(f"error: {kind}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"error: internal: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
