"""Run-directory outputs: ``result.json``, ``utterances.jsonl`` and CSV tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .harness import RunResult

SUMMARY_COLUMNS = (
    "id", "domain_tag", "words", "source_errors", "adapted_errors", "source_wer",
    "adapted_wer", "iterations", "evaluations", "best_loss", "blank_frames", "frames",
)
CORPUS_ROW_ID = "__corpus__"


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def write_table(path: str | Path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
    return path


def summary_rows(result: RunResult) -> list[dict]:
    rows = [dict(r) for r in result.records]
    agg = result.aggregates
    rows.append({
        "id": CORPUS_ROW_ID,
        "domain_tag": "",
        "words": sum(r["words"] for r in result.records),
        "source_errors": sum(r["source_errors"] for r in result.records),
        "adapted_errors": sum(r["adapted_errors"] for r in result.records),
        "source_wer": agg["source_wer"],
        "adapted_wer": agg["adapted_wer"],
        "iterations": sum(r["iterations"] for r in result.records),
        "evaluations": agg["forward_passes"],
        "blank_frames": sum(r["blank_frames"] for r in result.records),
        "frames": sum(r["frames"] for r in result.records),
    })
    return rows


def per_domain(result: RunResult) -> list[dict]:
    """Corpus WER per domain tag, in first-appearance order."""
    groups: dict[str, dict] = {}
    for r in result.records:
        g = groups.setdefault(r["domain_tag"], {"condition": r["domain_tag"], "words": 0, "src": 0, "ad": 0})
        g["words"] += r["words"]
        g["src"] += r["source_errors"]
        g["ad"] += r["adapted_errors"]
    return [
        {"condition": g["condition"], "source_wer": g["src"] / g["words"] if g["words"] else 0.0,
         "adapted_wer": g["ad"] / g["words"] if g["words"] else 0.0}
        for g in groups.values()
    ]


def write_run(out_dir: str | Path, result: RunResult, plot: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"result": out / "result.json", "utterances": out / "utterances.jsonl", "summary": out / "summary.csv"}
    with open(paths["result"], "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
    with open(paths["utterances"], "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    write_table(paths["summary"], summary_rows(result), SUMMARY_COLUMNS)
    if plot and result.records:
        from .plotting import plot_wer_by_condition

        paths["plot"] = plot_wer_by_condition(per_domain(result), out / "wer_by_condition.png")
    return paths
