"""Report bundles on disk and the cross-run comparison table."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from .errors import SchemaError
from .pipeline import RunResult

SCHEMA_VERSION = 1
COMPARE_COLUMNS = ("scenario", "model", "balancing", "n_clients", "f1", "accuracy", "seconds")


def _dump(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def report_dir(base: str | Path, result: RunResult, sweep: bool) -> Path:
    base = Path(base)
    return base / f"{result.config.scenario}_N{result.n_clients}" if sweep else base


def make_report(result: RunResult, out_dir: str | Path) -> Path:
    """Write the report bundle for one run into ``out_dir``.

    Files: config.json, rounds.csv, history.json, metrics.json, per_class.csv,
    timing.json, clients.json, importance.csv, scaler.json and the final
    weights as model.bin + model.json.  Only timing.json, rounds.csv and
    history.json carry durations.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg, hist, art = result.config, result.history, result.artifacts
    if hist.test is None:
        raise SchemaError("run has no test metrics")

    conf = cfg.to_dict()
    conf["n_clients"] = result.n_clients
    _dump(out / "config.json", conf)
    hist.write_rounds_csv(out / "rounds.csv")
    _dump(out / "history.json", hist.to_dict())

    last = hist.rounds[-1]
    _dump(out / "metrics.json", {
        "schema_version": SCHEMA_VERSION, "scenario": cfg.scenario, "model": cfg.model.upper(),
        "balancing": cfg.balancing if cfg.balancing == "none" else f"{cfg.balancing} beta={cfg.beta:g}",
        "n_clients": result.n_clients, "partition": art.audit["partition"],
        "rounds": len(hist.rounds), "stopped_early": hist.stopped_early,
        "test": {k: v for k, v in hist.test.to_dict().items() if k != "seconds"},
        "final_val": {k: v for k, v in last.val.to_dict().items() if k != "seconds"},
        "final_digest": hist.params.digest(),
    })
    with open(out / "per_class.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["class", "index", "precision", "recall", "f1", "support"])
        w.writeheader()
        for row in hist.test.per_class_rows():
            w.writerow(row)

    total = result.total_seconds
    _dump(out / "timing.json", {
        "schema_version": SCHEMA_VERSION,
        "preprocessing_seconds": result.preprocessing_seconds,
        "training_seconds": result.training_seconds,
        "total_seconds": total, "total_minutes": total / 60.0,
        "round_seconds": [r.seconds for r in hist.rounds],
        "round_critical_seconds": [r.critical_seconds for r in hist.rounds],
    })
    _dump(out / "clients.json", {
        "schema_version": SCHEMA_VERSION, **art.audit,
        "balance_plans": [p.to_dict() for p in art.plans],
        "training_rows": [c.n for c in hist.rounds[-1].clients],
    })
    art.ranking.to_csv(out / "importance.csv")
    art.scaler.save(out / "scaler.json")
    hist.params.save(out / "model")
    return out


def read_metrics(report: str | Path) -> dict:
    path = Path(report)
    if not path.is_dir():
        raise FileNotFoundError(f"report directory not found: {path}")
    metrics = json.loads((path / "metrics.json").read_text())
    timing = json.loads((path / "timing.json").read_text())
    if metrics.get("schema_version") != timing.get("schema_version"):
        raise SchemaError(f"{path}: metrics and timing schema versions differ")
    metrics["seconds"] = timing["total_seconds"]
    return metrics


def compare(reports: Sequence[str | Path]) -> list[dict]:
    """One row per report, ordered by (scenario, model, n_clients)."""
    if len(reports) < 2:
        raise SchemaError("compare needs at least two reports")
    docs = [read_metrics(r) for r in reports]
    versions = {d.get("schema_version") for d in docs}
    if len(versions) != 1:
        raise SchemaError(f"reports mix schema versions {sorted(map(str, versions))}")
    rows = [{"scenario": d["scenario"], "model": d["model"], "balancing": d["balancing"],
             "n_clients": d["n_clients"], "f1": d["test"]["f1"], "accuracy": d["test"]["accuracy"],
             "seconds": d["seconds"]} for d in docs]
    rows.sort(key=lambda r: (r["scenario"], r["model"], r["n_clients"]))
    return rows


def compare_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, COMPARE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "f1": f"{r['f1']:.6f}", "accuracy": f"{r['accuracy']:.6f}",
                    "seconds": f"{r['seconds']:.3f}"})
    return buf.getvalue()
