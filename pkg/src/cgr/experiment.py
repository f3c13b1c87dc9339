"""Dataset ingestion, backend construction and the experiment grid runner."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cgr import __version__
from cgr.backend import (
    MockProfile,
    RemoteBackend,
    build_mock,
    default_specials,
    default_vocabulary,
    load_trace,
)
from cgr.config import ExperimentConfig
from cgr.decoder import decode
from cgr.errors import BackendUnavailable, ConfigError, DatasetError, UnknownBackend
from cgr.evaluation import (
    AS_RECORDED,
    NEVER,
    RECORD_COLUMNS,
    EvalRecord,
    aggregate_seeds,
    certainty_below,
    format_savings_row,
    grade_dataset,
    group_by_seed,
    rank_questions,
    record_from_trace,
    tokens_saved_summary,
)

log = logging.getLogger(__name__)

BACKEND_URL_ENV = "CGR_BACKEND_URL"


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    prompt_text: str
    truth: int


def load_dataset(path) -> list:
    """Read line-delimited JSON questions ``{"id", "question", "answer"}``."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset {path} does not exist")
    records = []
    seen = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DatasetError(f"invalid JSON: {exc}", lineno) from None
            if not isinstance(obj, dict):
                raise DatasetError("record must be a JSON object", lineno)
            qid, question, answer = obj.get("id"), obj.get("question"), obj.get("answer")
            if not isinstance(qid, str) or not qid:
                raise DatasetError("'id' must be a non-empty string", lineno)
            if not isinstance(question, str):
                raise DatasetError("'question' must be a string", lineno)
            if isinstance(answer, bool) or not isinstance(answer, int):
                raise DatasetError(f"'answer' must be an integer, got {answer!r}", lineno)
            if not 0 <= answer <= 999:
                raise DatasetError(f"answer {answer} outside [0, 999]", lineno)
            if qid in seen:
                raise DatasetError(f"duplicate id {qid!r} (first seen on line {seen[qid]})", lineno)
            seen[qid] = lineno
            records.append(QuestionRecord(qid, question, answer))
    return records


def synthetic_dataset(n: int, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        a, b = (int(x) for x in rng.integers(0, 500, size=2))
        out.append(QuestionRecord(f"q{i + 1:02d}", f"Compute {a} + {b}.", a + b))
    return out


def write_dataset(path, questions) -> None:
    lines = [json.dumps({"id": q.id, "question": q.prompt_text, "answer": q.truth}) for q in questions]
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- backends ----------------------------------------------------------------

MOCK_DEFAULTS = {
    "p_correct": 0.7,
    "noise": 0.005,
    "horizon": 12000,
    "never_cross": 0.15,
    "wander": 0.4,
}


@dataclass(frozen=True)
class BackendSpec:
    """Parsed ``--backend`` value.

    ``mock[:key=value,...]``, ``trace:PATH`` (a file, or a directory of
    ``<question_id>.jsonl`` files), ``remote[:URL]`` or a bare ``http(s)://``
    URL. A remote spec without a URL falls back to ``$CGR_BACKEND_URL``.
    """

    kind: str
    target: str = ""
    params: tuple = ()

    @classmethod
    def parse(cls, text: str) -> "BackendSpec":
        text = text.strip()
        if text.startswith(("http://", "https://")):
            return cls("remote", text)
        kind, _, rest = text.partition(":")
        if kind == "mock":
            params = dict(MOCK_DEFAULTS)
            for item in filter(None, rest.split(",")):
                key, eq, value = item.partition("=")
                if not eq or key not in MOCK_DEFAULTS:
                    raise ConfigError(f"bad mock parameter {item!r}; known: {sorted(MOCK_DEFAULTS)}")
                try:
                    params[key] = float(value)
                except ValueError:
                    raise ConfigError(f"mock parameter {key} needs a number, got {value!r}") from None
            return cls("mock", "", tuple(sorted(params.items())))
        if kind == "trace":
            if not rest:
                raise ConfigError("trace backend needs a path: trace:PATH")
            return cls("trace", rest)
        if kind == "remote":
            url = rest or os.environ.get(BACKEND_URL_ENV, "")
            if not url:
                raise ConfigError(f"remote backend needs a URL (remote:URL or ${BACKEND_URL_ENV})")
            return cls("remote", url)
        raise UnknownBackend(f"unknown backend kind {kind!r}")

    @property
    def param_dict(self) -> dict:
        return dict(self.params)


def stable_key(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def sample_profile(seed: int, question: QuestionRecord, params: dict) -> MockProfile:
    """Draw the mock's certainty trajectory for one (seed, question) pair.

    The draw ignores budget and threshold, so one (seed, question) behaves
    as the same "model" in every cell of a grid.
    """
    rng = np.random.default_rng(stable_key("profile", seed, question.id))
    right = rng.random() < params["p_correct"]
    wrong = (question.truth + int(rng.integers(1, 1000))) % 1000
    final = question.truth if right else wrong
    early = final
    if rng.random() < params["wander"]:
        early = (final + int(rng.integers(1, 1000))) % 1000
    horizon = max(2, int(params["horizon"]))
    crossing = None if rng.random() < params["never_cross"] else int(rng.integers(1, horizon))
    pre = float(rng.uniform(0.30, 0.95))
    post = float(rng.uniform(max(pre + 0.005, 0.95), 0.999))
    n_stops = int(rng.integers(0, 4))
    stops = sorted({int(s) for s in rng.integers(1, 2 * horizon, size=n_stops)})
    return MockProfile(
        crossing_step=crossing,
        pre_certainty=pre,
        post_certainty=post,
        stop_attempt_steps=tuple(stops),
        noise_amplitude=float(params["noise"]),
        answer_digits=tuple(int(c) for c in str(final)),
        pre_answer_digits=tuple(int(c) for c in str(early)),
    )


def mock_vocabulary(texts):
    return default_vocabulary().extended(texts)


_REMOTE_CACHE = {}


def build_backend(spec: BackendSpec, seed: int, question: QuestionRecord, vocabulary, role: str = "gen"):
    if spec.kind == "mock":
        profile = sample_profile(seed, question, spec.param_dict)
        noise_seed = stable_key("noise", role, seed, question.id)
        return build_mock(noise_seed, profile, vocabulary, default_specials(vocabulary))
    if spec.kind == "trace":
        path = Path(spec.target)
        if path.is_dir():
            path = path / f"{question.id}.jsonl"
        return load_trace(path)
    if spec.kind == "remote":
        client = _REMOTE_CACHE.get(spec.target)
        if client is None:
            client = _REMOTE_CACHE[spec.target] = RemoteBackend(spec.target)
        return client
    raise UnknownBackend(spec.kind)


def prompt_tokens(backend, config: ExperimentConfig, question: QuestionRecord):
    text = config.template.format(system_prompt=config.system_prompt, question=question.prompt_text)
    return backend.tokenize(text)


# -- run ---------------------------------------------------------------------

@dataclass(frozen=True)
class Job:
    mode: str
    budget: int
    threshold: float
    seed: int
    question: QuestionRecord


def _run_job(job: Job, config: ExperimentConfig, gen_spec, probe_spec, vocabulary):
    gen = build_backend(gen_spec, job.seed, job.question, vocabulary, "gen")
    probe = build_backend(probe_spec, job.seed, job.question, vocabulary, "probe") if probe_spec else None
    rc = config.run_config(job.budget, job.threshold, job.seed)
    trace = decode(prompt_tokens(gen, config, job.question), gen, probe, job.mode, rc,
                   question_id=job.question.id)
    return trace, record_from_trace(trace, job.seed, job.question.truth)


def _run_chunk(jobs, config, gen_spec, probe_spec, vocabulary):
    out = []
    for job in jobs:
        try:
            trace, record = _run_job(job, config, gen_spec, probe_spec, vocabulary)
            out.append((trace_lines(trace, job.seed, job.question.truth), record, None))
        except BackendUnavailable as exc:
            out.append((None, None, f"{job.mode}/{job.threshold}/{job.budget}/{job.seed}/{job.question.id}: {exc}"))
    return out


def trace_lines(trace, seed: int, truth: int) -> str:
    head = {"seed": seed, "truth": truth, **trace.to_json()}
    lines = [json.dumps(head)]
    lines += [json.dumps({"probe": p.to_json()}) for p in trace.probe_events]
    return "\n".join(lines) + "\n"


def trace_relpath(job_or_record) -> str:
    r = job_or_record
    qid = r.question.id if isinstance(r, Job) else r.question_id
    return f"traces/{r.mode}/th{float(r.threshold)!r}/b{r.budget}/seed{r.seed}/{qid}.jsonl"


def run_experiment(config: ExperimentConfig, dataset, out_dir=None) -> Path:
    """Run every (mode, budget, threshold, seed, question) cell and write reports.

    Returns the run directory. Fails with ``BackendUnavailable`` before
    writing anything if the backend cannot serve the first prompt.
    """
    out = Path(out_dir or config.out or "runs/latest")
    questions = list(dataset)
    if not questions:
        raise DatasetError("dataset is empty")
    gen_spec = BackendSpec.parse(config.backend)
    probe_spec = BackendSpec.parse(config.probe_backend) if config.probe_backend else None
    vocabulary = mock_vocabulary([config.system_prompt, config.template] + [q.prompt_text for q in questions])

    # fail fast on an unreachable or unusable backend
    for spec in filter(None, (gen_spec, probe_spec)):
        b = build_backend(spec, config.seeds[0], questions[0], vocabulary)
        b.check()
        prompt_tokens(b, config, questions[0])

    jobs = [
        Job(mode, budget, th, seed, q)
        for mode, budget, th in config.cells()
        for seed in config.seeds
        for q in questions
    ]
    started = time.time()
    if config.workers > 1 and len(jobs) > 1:
        size = max(1, len(jobs) // (config.workers * 4))
        chunks = [jobs[i:i + size] for i in range(0, len(jobs), size)]
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            parts = pool.map(_run_chunk, chunks, *zip(*[(config, gen_spec, probe_spec, vocabulary)] * len(chunks)))
            results = [r for part in parts for r in part]
    else:
        results = _run_chunk(jobs, config, gen_spec, probe_spec, vocabulary)

    out.mkdir(parents=True, exist_ok=True)
    files = {}
    records = []
    failures = []
    for job, (lines, record, failure) in zip(jobs, results):
        if failure is not None:
            failures.append(failure)
            continue
        rel = trace_relpath(job)
        files[rel] = atomic_write_text(out / rel, lines)
        records.append(record)
    files.update(write_reports(out, records, config))
    write_manifest(out, config, files, failures, started)
    return out


# -- reports -----------------------------------------------------------------

def atomic_write_text(path, text: str) -> str:
    """Write via a temporary file and rename; returns the sha256 of the content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def group_cells(records) -> dict:
    """Records keyed by (mode, budget, threshold), keys in sorted order."""
    cells = {}
    for r in records:
        cells.setdefault((r.mode, r.budget, r.threshold), []).append(r)
    return dict(sorted(cells.items()))


def policies_for(threshold: float, config: ExperimentConfig):
    theta = config.abstain_threshold if config.abstain_threshold is not None else threshold
    return [AS_RECORDED, NEVER, certainty_below(theta)]


def write_reports(out: Path, records, config: ExperimentConfig) -> dict:
    """Write every summary report derived from ``records``; returns {relpath: digest}."""
    out = Path(out)
    files = {}
    records = sorted(records, key=lambda r: (r.mode, r.budget, r.threshold, config.seeds.index(r.seed)
                                             if r.seed in config.seeds else r.seed, r.question_id))
    rows = [r.to_row() for r in records]
    files["records.csv"] = atomic_write_text(out / "records.csv", csv_text(RECORD_COLUMNS, rows))
    files["records.jsonl"] = atomic_write_text(
        out / "records.jsonl", "".join(json.dumps(row) + "\n" for row in rows))

    grade_cols = ["mode", "budget", "threshold", "seed", "penalty", "policy",
                  "total_correct", "total_wrong", "total_abstained", "grade"]
    grade_rows = []
    aggregates = []
    ranking_rows = []
    savings_rows = []
    table_lines = []
    for (mode, budget, th), cell in group_cells(records).items():
        by_seed = group_by_seed(cell)
        counts = []
        grades = {}
        for seed, seed_records in by_seed.items():
            counts.append(sum(1 for r in seed_records if r.predicted == r.truth))
            for policy in policies_for(th, config):
                for c in config.penalties:
                    g = grade_dataset(seed_records, c, policy)
                    grades.setdefault(f"{policy}|{c!r}", []).append(g.grade)
                    grade_rows.append({
                        "mode": mode, "budget": budget, "threshold": repr(th), "seed": seed,
                        "penalty": repr(float(c)), "policy": str(policy),
                        "total_correct": g.total_correct, "total_wrong": g.total_wrong,
                        "total_abstained": g.total_abstained, "grade": repr(g.grade),
                    })
        agg = aggregate_seeds(counts, grades)
        aggregates.append({
            "mode": mode, "budget": budget, "threshold": th,
            "seeds": agg.seeds, "seed_order": list(by_seed),
            "correct_per_seed": counts,
            "mean_correct": agg.mean_correct, "std_correct": agg.std_correct,
            "cumulative_means": list(agg.cumulative_means),
            "mean_grade": agg.mean_grade,
        })
        for rank, (qid, mean_saved) in enumerate(rank_questions(cell), start=1):
            ranking_rows.append({"mode": mode, "budget": budget, "threshold": repr(th),
                                 "rank": rank, "question_id": qid, "mean_tokens_saved": repr(mean_saved)})
        for row in tokens_saved_summary(cell):
            savings_rows.append({
                "mode": mode, "budget": budget, "threshold": repr(row.threshold),
                "total_saved": row.total, "seeds": row.seeds, "questions": row.questions,
                "avg_per_seed": repr(row.per_seed), "avg_per_question": repr(row.per_question),
            })
            header = f"% {mode} budget={budget}"
            if header not in table_lines:
                table_lines.append(header)
            table_lines.append(format_savings_row(row))

    files["grades.csv"] = atomic_write_text(out / "grades.csv", csv_text(grade_cols, grade_rows))
    files["grades.json"] = atomic_write_text(out / "grades.json", json.dumps(grade_rows, indent=1) + "\n")
    files["savings.csv"] = atomic_write_text(out / "savings.csv", csv_text(
        ["mode", "budget", "threshold", "total_saved", "seeds", "questions", "avg_per_seed", "avg_per_question"],
        savings_rows))
    files["savings_table.tex"] = atomic_write_text(out / "savings_table.tex", "\n".join(table_lines) + "\n")
    files["seed_aggregate.json"] = atomic_write_text(
        out / "seed_aggregate.json", json.dumps(aggregates, indent=1) + "\n")
    files["ranking.csv"] = atomic_write_text(out / "ranking.csv", csv_text(
        ["mode", "budget", "threshold", "rank", "question_id", "mean_tokens_saved"], ranking_rows))
    return files


def write_manifest(out: Path, config: ExperimentConfig, files: dict, failures, started=None) -> None:
    manifest = {
        "engine_version": __version__,
        "config_hash": config.digest(),
        "config": config.to_json(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started or time.time())),
        "failures": list(failures),
        "files": dict(sorted(files.items())),
    }
    config_digest = atomic_write_text(out / "config.json", json.dumps(config.to_json(), indent=1, sort_keys=True) + "\n")
    manifest["files"]["config.json"] = config_digest
    manifest["files"] = dict(sorted(manifest["files"].items()))
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=1) + "\n")


def load_trace_records(out: Path) -> list:
    """Rebuild evaluation records from the trace files of a run directory."""
    from cgr.answer import AnswerDecode, extract_answer
    from cgr.decoder import StopReason

    out = Path(out)
    records = []
    for path in sorted((out / "traces").rglob("*.jsonl")):
        with path.open(encoding="utf-8") as fh:
            head = json.loads(fh.readline())
        answer = AnswerDecode.from_json(head["final_answer"])
        stop = StopReason.parse(head["stop_reason"], head["budget"])
        predicted = extract_answer(answer)
        abstained = stop.kind.value == "BudgetExhausted" or answer.parse_failed
        records.append(EvalRecord(
            question_id=head["question_id"], seed=head["seed"], predicted=predicted,
            truth=head["truth"], correct=(not abstained) and predicted == head["truth"],
            abstained=abstained, thinking_tokens_used=head["thinking_tokens_used"],
            tokens_saved=head["budget"] - head["thinking_tokens_used"],
            final_certainty=head["final_certainty"], stop_reason=head["stop_reason"],
            threshold=head["threshold"], mode=head["mode"], budget=head["budget"],
            probe_overhead_tokens=head["probe_overhead_tokens"],
        ))
    return records


def read_records_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EvalRecord.from_row(row) for row in csv.DictReader(fh)]
