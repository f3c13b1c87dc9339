"""Figure-ready CSV series derived from a completed run directory.

Only data is emitted; rendering is left to whatever plotting tool the
reader prefers.
"""

from __future__ import annotations

import csv
import math
import statistics
from collections import defaultdict
from pathlib import Path

from cgr.errors import PlotDataError
from cgr.evaluation import aggregate_seeds, group_by_seed, rank_questions
from cgr.experiment import atomic_write_text, csv_text, group_cells, read_records_csv

SERIES = {
    "accuracy_vs_budget.csv": ["mode", "threshold", "budget", "seeds", "mean_correct", "std_correct",
                               "mean_thinking_tokens"],
    "cumulative_mean_vs_seed.csv": ["mode", "threshold", "budget", "seed_index", "seed", "correct",
                                    "cumulative_mean"],
    "grade_vs_tokens.csv": ["mode", "threshold", "budget", "penalty", "policy", "mean_thinking_tokens",
                            "mean_grade"],
    "savings_per_question.csv": ["mode", "threshold", "budget", "rank", "question_id", "mean_tokens_saved"],
}


def _require(run_dir: Path, name: str) -> Path:
    path = run_dir / name
    if not path.exists():
        raise PlotDataError(f"missing upstream report {name} in {run_dir}")
    return path


def emit_plot_data(run_dir, out_dir=None) -> dict:
    """Write the four series files; returns {filename: path}."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "plots"
    records = read_records_csv(_require(run_dir, "records.csv"))
    with _require(run_dir, "grades.csv").open(newline="", encoding="utf-8") as fh:
        grade_rows = list(csv.DictReader(fh))

    accuracy, cumulative, savings = [], [], []
    cells = group_cells(records)
    for (mode, budget, th), cell in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][2], kv[0][1])):
        by_seed = group_by_seed(cell)
        counts = [sum(1 for r in rs if r.predicted == r.truth) for rs in by_seed.values()]
        agg = aggregate_seeds(counts)
        accuracy.append({
            "mode": mode, "threshold": repr(th), "budget": budget, "seeds": agg.seeds,
            "mean_correct": repr(agg.mean_correct), "std_correct": repr(agg.std_correct),
            "mean_thinking_tokens": repr(math.fsum(r.thinking_tokens_used for r in cell) / len(cell)),
        })
        for i, (seed, count, cm) in enumerate(zip(by_seed, counts, agg.cumulative_means), start=1):
            cumulative.append({"mode": mode, "threshold": repr(th), "budget": budget, "seed_index": i,
                               "seed": seed, "correct": count, "cumulative_mean": repr(cm)})
        for rank, (qid, mean_saved) in enumerate(rank_questions(cell), start=1):
            savings.append({"mode": mode, "threshold": repr(th), "budget": budget, "rank": rank,
                            "question_id": qid, "mean_tokens_saved": repr(mean_saved)})

    mean_tokens = {
        key: math.fsum(r.thinking_tokens_used for r in cell) / len(cell) for key, cell in cells.items()
    }
    grades = defaultdict(list)
    for row in grade_rows:
        key = (row["mode"], int(row["budget"]), float(row["threshold"]), row["penalty"], row["policy"])
        grades[key].append(float(row["grade"]))
    grade_series = []
    for (mode, budget, th, c, policy), values in sorted(grades.items(), key=lambda kv: (kv[0][0], kv[0][2], kv[0][4], float(kv[0][3]), kv[0][1])):
        grade_series.append({
            "mode": mode, "threshold": repr(th), "budget": budget, "penalty": c, "policy": policy,
            "mean_thinking_tokens": repr(mean_tokens.get((mode, budget, th), float("nan"))),
            "mean_grade": repr(statistics.fmean(values)),
        })

    out = {}
    for name, rows in (("accuracy_vs_budget.csv", accuracy), ("cumulative_mean_vs_seed.csv", cumulative),
                       ("grade_vs_tokens.csv", grade_series), ("savings_per_question.csv", savings)):
        atomic_write_text(out_dir / name, csv_text(SERIES[name], rows))
        out[name] = out_dir / name
    return out
