"""Scoring, penalty grading, token-savings accounting and seed aggregation."""

from __future__ import annotations

import math
import re
import statistics
from collections import defaultdict
from dataclasses import dataclass, field

from cgr.errors import InputError

RECORD_COLUMNS = [
    "question_id", "seed", "threshold", "predicted", "truth", "correct", "abstained",
    "thinking_tokens_used", "tokens_saved", "final_certainty", "stop_reason",
    "mode", "budget", "probe_overhead_tokens",
]
ABSTAIN = "ABSTAIN"


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    seed: int
    predicted: int | None
    truth: int
    correct: bool
    abstained: bool
    thinking_tokens_used: int
    tokens_saved: int
    final_certainty: float
    stop_reason: str
    threshold: float = 0.97
    mode: str = "cgr"
    budget: int = 32000
    probe_overhead_tokens: int = 0

    def __post_init__(self):
        if self.correct and (self.abstained or self.predicted != self.truth):
            raise InputError(f"record {self.question_id}/{self.seed} marked correct but abstained or wrong")
        if self.tokens_saved != self.budget - self.thinking_tokens_used or self.tokens_saved < 0:
            raise InputError(f"record {self.question_id}/{self.seed} has inconsistent token counts")

    def to_row(self) -> dict:
        return {
            "question_id": self.question_id,
            "seed": self.seed,
            "threshold": repr(float(self.threshold)),
            "predicted": ABSTAIN if self.predicted is None else self.predicted,
            "truth": self.truth,
            "correct": str(self.correct).lower(),
            "abstained": str(self.abstained).lower(),
            "thinking_tokens_used": self.thinking_tokens_used,
            "tokens_saved": self.tokens_saved,
            "final_certainty": repr(float(self.final_certainty)),
            "stop_reason": self.stop_reason,
            "mode": self.mode,
            "budget": self.budget,
            "probe_overhead_tokens": self.probe_overhead_tokens,
        }

    @classmethod
    def from_row(cls, row: dict) -> "EvalRecord":
        pred = row["predicted"]
        return cls(
            question_id=str(row["question_id"]),
            seed=int(row["seed"]),
            predicted=None if pred in (ABSTAIN, None, "") else int(pred),
            truth=int(row["truth"]),
            correct=str(row["correct"]).lower() == "true",
            abstained=str(row["abstained"]).lower() == "true",
            thinking_tokens_used=int(row["thinking_tokens_used"]),
            tokens_saved=int(row["tokens_saved"]),
            final_certainty=float(row["final_certainty"]),
            stop_reason=str(row["stop_reason"]),
            threshold=float(row["threshold"]),
            mode=str(row["mode"]),
            budget=int(row["budget"]),
            probe_overhead_tokens=int(row.get("probe_overhead_tokens", 0)),
        )


def record_from_trace(trace, seed: int, truth: int) -> EvalRecord:
    """Build the as-recorded evaluation record of one decode."""
    predicted = trace.predicted
    abstained = trace.abstainable
    return EvalRecord(
        question_id=trace.question_id,
        seed=seed,
        predicted=predicted,
        truth=truth,
        correct=(not abstained) and predicted == truth,
        abstained=abstained,
        thinking_tokens_used=trace.thinking_tokens_used,
        tokens_saved=trace.tokens_saved,
        final_certainty=trace.final_certainty,
        stop_reason=str(trace.stop_reason),
        threshold=trace.threshold,
        mode=trace.mode.value,
        budget=trace.budget,
        probe_overhead_tokens=trace.probe_overhead_tokens,
    )


def score_question(predicted, truth, abstained: bool, c: float) -> float:
    """+1 for a correct answer, 0 for an abstention, -c for a wrong answer."""
    if c < 0:
        raise ValueError("penalty must be >= 0")
    if abstained:
        return 0.0
    if predicted is not None and predicted == truth:
        return 1.0
    return -c


@dataclass(frozen=True)
class AbstentionPolicy:
    """When the hypothetical exam taker skips a question.

    ``as-recorded`` uses the run's own flag, ``never`` answers everything,
    ``certainty-below`` skips answers whose final certainty is under
    ``threshold``. A failed parse is always a skip except under ``never``,
    where it counts as wrong.
    """

    kind: str = "as-recorded"
    threshold: float | None = None

    KINDS = ("as-recorded", "never", "certainty-below")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown abstention policy {self.kind!r}")
        if self.kind == "certainty-below" and self.threshold is None:
            raise ValueError("certainty-below needs a threshold")

    def __str__(self):
        return f"certainty-below:{self.threshold:g}" if self.kind == "certainty-below" else self.kind

    @classmethod
    def parse(cls, text: str) -> "AbstentionPolicy":
        kind, _, arg = text.partition(":")
        return cls(kind, float(arg) if arg else None)

    def abstains(self, record: EvalRecord) -> bool:
        if self.kind == "never":
            return False
        if self.kind == "as-recorded":
            return record.abstained
        return record.predicted is None or record.final_certainty < self.threshold


AS_RECORDED = AbstentionPolicy("as-recorded")
NEVER = AbstentionPolicy("never")


def certainty_below(threshold: float) -> AbstentionPolicy:
    return AbstentionPolicy("certainty-below", threshold)


@dataclass(frozen=True)
class GradeReport:
    penalty_c: float
    total_correct: int
    total_wrong: int
    total_abstained: int
    grade: float
    policy: str = "as-recorded"

    @property
    def questions(self) -> int:
        return self.total_correct + self.total_wrong + self.total_abstained


def grade_dataset(records, c: float, policy: AbstentionPolicy = AS_RECORDED) -> GradeReport:
    """Exam-style grade: correct answers minus ``c`` times wrong answers."""
    if c < 0:
        raise ValueError("penalty must be >= 0")
    seen = set()
    correct = wrong = abstained = 0
    total = 0.0
    for rec in records:
        if rec.question_id in seen:
            raise InputError(f"duplicate question id {rec.question_id!r}")
        seen.add(rec.question_id)
        skip = policy.abstains(rec)
        score = score_question(rec.predicted, rec.truth, skip, c)
        total += score
        if skip:
            abstained += 1
        elif score == 1.0:
            correct += 1
        else:
            wrong += 1
    return GradeReport(c, correct, wrong, abstained, total, str(policy))


@dataclass(frozen=True)
class SavingsRow:
    threshold: float
    total: int
    seeds: int
    questions: int

    @property
    def per_seed(self) -> float:
        return self.total / self.seeds

    @property
    def per_question(self) -> float:
        return self.total / (self.seeds * self.questions)


def tokens_saved_summary(records) -> list:
    """One savings row per threshold, in ascending threshold order.

    Averages divide by the number of distinct seeds and questions in each
    threshold group. All records must share one budget.
    """
    records = list(records)
    if not records:
        return []
    budgets = {r.budget for r in records}
    if len(budgets) > 1:
        raise InputError(f"records mix budgets {sorted(budgets)}")
    groups = defaultdict(list)
    for r in records:
        groups[r.threshold].append(r)
    rows = []
    for th in sorted(groups):
        group = groups[th]
        seeds = {r.seed for r in group}
        questions = {r.question_id for r in group}
        rows.append(SavingsRow(th, sum(r.tokens_saved for r in group), len(seeds), len(questions)))
    return rows


def format_savings_row(row: SavingsRow) -> str:
    """Table row with thousands separators; averages are truncated to integers."""
    per_seed = row.total // row.seeds
    per_question = row.total // (row.seeds * row.questions)
    return f"{row.threshold:.2f} & {row.total:,} & {per_seed:,} & {per_question:,} \\\\"


_ROW_RE = re.compile(r"^\s*([0-9.]+)\s*&\s*([0-9,]+)\s*&\s*([0-9,]+)\s*&\s*([0-9,]+)\s*\\\\\s*$")


def parse_savings_row(line: str) -> tuple:
    """Inverse of :func:`format_savings_row`: (threshold, total, per_seed, per_question)."""
    m = _ROW_RE.match(line)
    if not m:
        raise InputError(f"not a savings row: {line!r}")
    th, *ints = m.groups()
    return (float(th), *(int(s.replace(",", "")) for s in ints))


@dataclass(frozen=True)
class SeedAggregate:
    seeds: int
    mean_correct: float
    std_correct: float
    cumulative_means: tuple
    mean_grade: dict = field(default_factory=dict)


def aggregate_seeds(correct_counts, grades=None) -> SeedAggregate:
    """Mean, sample standard deviation and running means of per-seed correct counts.

    ``grades`` maps a penalty to the per-seed grades under it.
    """
    counts = [float(x) for x in correct_counts]
    if not counts:
        raise InputError("aggregate_seeds needs at least one seed")
    mean = math.fsum(counts) / len(counts)
    std = statistics.stdev(counts) if len(counts) > 1 else 0.0
    cumulative = []
    running = 0.0
    for i, x in enumerate(counts, start=1):
        running += x
        cumulative.append(running / i)
    # running sum may drift by an ulp from fsum; pin the last value to the mean
    cumulative[-1] = mean
    mean_grade = {}
    for c, values in (grades or {}).items():
        values = list(values)
        if values:
            mean_grade[c] = math.fsum(values) / len(values)
    return SeedAggregate(len(counts), mean, std, tuple(cumulative), mean_grade)


def group_by_seed(records) -> dict:
    """Records bucketed by seed, preserving first-seen seed order."""
    out = {}
    for r in records:
        out.setdefault(r.seed, []).append(r)
    return out


def rank_questions(records) -> list:
    """Questions ordered easiest first: highest mean tokens saved, ties by id."""
    per_q = defaultdict(list)
    for r in records:
        per_q[r.question_id].append(r.tokens_saved)
    means = [(qid, math.fsum(v) / len(v)) for qid, v in per_q.items()]
    return sorted(means, key=lambda item: (-item[1], item[0]))
