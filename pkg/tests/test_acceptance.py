"""Acceptance criteria 1-10.

Each test records one ``PASS``/``FAIL`` line; the lines are printed in the
terminal summary of a pytest run, and also when this file is executed
directly with ``python3 tests/test_acceptance.py``.
"""

import itertools
import random
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from cgr.answer import AnswerDecode
from cgr.backend import MockProfile, TokenId, build_mock, default_specials, default_vocabulary
from cgr.certainty import SweepSource, answer_certainty, softmax, sweep_thresholds
from cgr.config import ExperimentConfig, RunConfig
from cgr.decoder import DecodingMode, StopKind, decode
from cgr.evaluation import (
    EvalRecord,
    SavingsRow,
    aggregate_seeds,
    format_savings_row,
    grade_dataset,
    parse_savings_row,
    tokens_saved_summary,
)
from cgr.experiment import read_records_csv, run_experiment, synthetic_dataset

VOCAB = default_vocabulary()
SP = default_specials(VOCAB)
QUESTION = VOCAB.tokenize("You are a helpful assistant\nCompute 17 + 187.")
GOLDEN = Path(__file__).parent / "golden" / "savings_table.tex"

RESULTS = []


def report(n, title, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {title}" + (f" ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


def random_profile(rng, horizon):
    crossing = None if rng.random() < 0.2 else rng.randint(1, horizon)
    pre = rng.uniform(0.0, 0.94)
    post = rng.uniform(max(pre + 1e-3, 0.9), 1.0)
    return MockProfile(
        crossing_step=crossing,
        pre_certainty=pre,
        post_certainty=post,
        stop_attempt_steps=tuple(rng.randint(1, horizon) for _ in range(rng.randint(0, 3))),
        noise_amplitude=rng.choice([0.0, 0.0, 0.003, 0.02]),
        answer_digits=tuple(rng.randint(0, 9) for _ in range(rng.randint(1, 3))),
        pre_answer_digits=tuple(rng.randint(0, 9) for _ in range(rng.randint(1, 3))),
    )


# Straight-line interpreter of the certainty-guided loop, sharing nothing with
# cgr.decoder / cgr.answer beyond the backend's next_distribution.
def reference_probe(model, o, theta):
    ctx = list(o)
    if SP.end_think not in ctx[ctx.index(SP.begin_think):]:
        ctx.append(SP.end_think)
    ctx += [VOCAB[ch] for ch in SP.answer_prefix_text]
    digits, probs = "", []
    for _ in range(4):
        cands = model.next_distribution(ctx, 2).candidates
        tok, p = next((c for c in cands if c[0] != SP.end_think), (SP.end_of_sequence, 1.0))
        if tok == SP.end_of_sequence or tok.text == "}":
            break
        ctx.append(tok)
        digits += tok.text
        probs.append(p)
    ok = 1 <= len(digits) <= 3 and digits.isascii() and digits.isdigit()
    return (min(probs) if ok else 0.0) >= theta


def reference_cgr(model, q, budget, theta, interval):
    o = list(q) + [SP.begin_think]
    t = 0
    while t < budget:
        x = model.next_distribution(o, 1).candidates[0][0]
        if x == SP.end_of_sequence:
            return "NaturalStop", t
        o.append(x)
        t += 1
        if x == SP.end_think:
            return "NaturalStop", t - 1
        if t % interval == 0 and reference_probe(model, o, theta):
            return "EarlyExitCertainty", t
    return "BudgetExhausted", t


def test_criterion_01_worked_certainty():
    ans = AnswerDecode(tuple((TokenId(i, d), p) for i, d, p in [(10, "2", 0.99), (11, "0", 0.98), (12, "4", 0.99)]), 204)
    start = time.perf_counter()
    c = answer_certainty(ans)
    elapsed = time.perf_counter() - start
    report(1, "worked certainty example", c == 0.98 and elapsed < 1e-3, f"certainty={c!r}, {elapsed * 1e6:.0f} us")


def test_criterion_02_reference_interpreter():
    rng = random.Random(2024)
    start = time.perf_counter()
    mismatches = []
    for i in range(200):
        profile = random_profile(rng, 3000)
        budget = rng.randint(200, 3000)
        interval = rng.choice([50, 100, 250, 500, 1000])
        interval = min(interval, budget)
        theta = rng.choice([0.9, 0.95, 0.97, 0.99])
        model = build_mock(rng.getrandbits(64), profile, VOCAB, SP)
        trace = decode(QUESTION, model, mode=DecodingMode.CGR,
                       config=RunConfig(budget=budget, threshold=theta, probe_interval=interval))
        kind, step = reference_cgr(model, QUESTION, budget, theta, interval)
        got = (trace.stop_reason.kind.value, trace.stop_reason.step, trace.thinking_tokens_used)
        want_used = step + 1 if kind == "NaturalStop" else step
        if got != (kind, step, want_used):
            mismatches.append((i, got, (kind, step)))
    elapsed = time.perf_counter() - start
    report(2, "CGR matches reference interpreter on 200 profiles",
           not mismatches and elapsed < 10, f"{200 - len(mismatches)}/200 agree, {elapsed:.2f} s")


def test_criterion_03_forcing_matrix():
    cfg = RunConfig(budget=4000, threshold=0.97, probe_interval=1000)
    cases = {
        "certify-before-stop-attempt": (
            MockProfile(crossing_step=800, pre_certainty=0.5, post_certainty=0.99, stop_attempt_steps=(2500,)),
            lambda tr: tr.stop_reason.kind is StopKind.EARLY_EXIT_CERTAINTY and tr.stop_reason.step == 1000),
        "stop-attempt-uncertified": (
            MockProfile(pre_certainty=0.5, stop_attempt_steps=(1500,)),
            lambda tr: tr.stop_reason.kind is StopKind.BUDGET_EXHAUSTED and tr.forced_wait_count >= 1),
        "certify-at-stop-attempt": (
            MockProfile(crossing_step=1200, pre_certainty=0.5, post_certainty=0.99, stop_attempt_steps=(1500,)),
            lambda tr: tr.stop_reason.kind is StopKind.NATURAL_STOP_CERTIFIED and tr.stop_reason.step == 1500),
        "never-certify": (
            MockProfile(pre_certainty=0.6),
            lambda tr: tr.stop_reason.kind is StopKind.BUDGET_EXHAUSTED and tr.forced_wait_count == 0),
    }
    outcomes = {}
    for name, (profile, check) in cases.items():
        trace = decode(QUESTION, build_mock(42, profile, VOCAB, SP), mode=DecodingMode.CGR_FORCING, config=cfg)
        outcomes[name] = (check(trace), str(trace.stop_reason))
    ok = all(v[0] for v in outcomes.values())
    report(3, "CGR-with-forcing behaviour matrix", ok, ", ".join(f"{k}: {v[1]}" for k, v in outcomes.items()))


def test_criterion_04_budget_safety():
    rng = random.Random(4)
    modes = itertools.cycle(DecodingMode)
    failures = 0
    start = time.perf_counter()
    for _ in range(1000):
        mode = next(modes)
        budget = rng.randint(20, 2000)
        interval = rng.randint(1, budget) if rng.random() < 0.3 else min(budget, rng.choice([100, 250, 500]))
        profile = random_profile(rng, 2000)
        cfg = RunConfig(budget=budget, threshold=rng.choice([0.9, 0.97, 0.99]), probe_interval=interval)
        trace = decode(QUESTION, build_mock(rng.getrandbits(64), profile, VOCAB, SP), mode=mode, config=cfg)
        bad = trace.thinking_tokens_used > budget
        if mode.forcing:
            bad = bad or SP.end_think in trace.tokens
        failures += bad
    elapsed = time.perf_counter() - start
    report(4, "budget safety and forcing exclusion on 1000 profiles",
           failures == 0 and elapsed < 30, f"{failures} failures, {elapsed:.2f} s")


def test_criterion_05_threshold_monotonicity():
    rng = random.Random(5)
    thresholds = [0.96, 0.97, 0.98, 0.99]
    violations = 0
    for i in range(50):
        mode = DecodingMode.CGR if i % 2 == 0 else DecodingMode.CGR_FORCING
        model = build_mock(rng.getrandbits(64), random_profile(rng, 4000), VOCAB, SP)
        sweep = sweep_thresholds(SweepSource(QUESTION, model, mode=mode), thresholds,
                                 RunConfig(budget=4000, probe_interval=rng.choice([250, 500, 1000])))
        saved = [p.tokens_saved for p in sweep.points]
        violations += any(a < b for a, b in zip(saved, saved[1:]))
    report(5, "tokens saved non-increasing in threshold", violations == 0, f"{violations} violations")


def _random_records(rng):
    out = []
    for q in range(rng.randint(1, 40)):
        truth = rng.randint(0, 999)
        abstained = rng.random() < 0.25
        predicted = rng.choice([truth, truth, (truth + 1) % 1000, None])
        used = rng.randint(0, 32000)
        out.append(EvalRecord(
            question_id=f"q{q}", seed=0, predicted=predicted, truth=truth,
            correct=(not abstained) and predicted == truth, abstained=abstained,
            thinking_tokens_used=used, tokens_saved=32000 - used, final_certainty=rng.random(),
            stop_reason="BudgetExhausted" if abstained else f"EarlyExitCertainty({used})"))
    return out


def test_criterion_06_grade_formula():
    rng = random.Random(6)
    worst = 0.0
    zero_ok = dominance_ok = True
    for _ in range(100):
        records = _random_records(rng)
        correct = sum(not r.abstained and r.predicted == r.truth for r in records)
        wrong = sum(not r.abstained and r.predicted != r.truth for r in records)
        for c in (0, 0.25, 0.5, 1.0):
            g = grade_dataset(records, c).grade
            worst = max(worst, abs(g - float(Fraction(correct) - Fraction(c) * wrong)))
            if c == 0:
                zero_ok &= g == correct
        for i, r in enumerate(records):
            if not r.abstained and r.predicted != r.truth:
                flipped = list(records)
                flipped[i] = EvalRecord(r.question_id, r.seed, r.predicted, r.truth, False, True,
                                        r.thinking_tokens_used, r.tokens_saved, r.final_certainty, r.stop_reason)
                for c in (0.25, 0.5, 1.0):
                    dominance_ok &= grade_dataset(flipped, c).grade >= grade_dataset(records, c).grade
                break
    report(6, "grade formula on 100 random record sets",
           worst <= 1e-12 and zero_ok and dominance_ok, f"max error {worst:.1e}")


def test_criterion_07_savings_table():
    records = [EvalRecord(f"q{q}", s, 1, 1, True, False, 31000, 1000, 0.99, "x")
               for s in range(64) for q in range(30)]
    (row,) = tokens_saved_summary(records)
    uniform_ok = (row.total, row.per_seed, row.per_question) == (1_920_000, 30_000, 1_000)
    golden_ok = True
    lines = GOLDEN.read_text().splitlines()
    for line in lines:
        th, total, per_seed, per_question = parse_savings_row(line)
        golden_ok &= format_savings_row(SavingsRow(th, total, 64, 30)) == line
        golden_ok &= (per_seed, per_question) == (total // 64, total // 1920)
    golden_ok &= lines[-1] == "0.99 & 2,042,389 & 31,912 & 1,063 \\\\"
    report(7, "savings table arithmetic and golden rows", uniform_ok and golden_ok and len(lines) == 4)


def test_criterion_08_seed_aggregation():
    start = time.perf_counter()
    agg = aggregate_seeds([14, 14, 15, 14])
    ok = agg.mean_correct == 14.25 and abs(agg.std_correct - 0.5) < 1e-12
    ok &= agg.cumulative_means[-1] == 14.25 and agg.cumulative_means[0] == 14
    for perm in itertools.permutations([14, 14, 15, 14]):
        other = aggregate_seeds(perm)
        ok &= other.mean_correct == agg.mean_correct and abs(other.std_correct - agg.std_correct) < 1e-12
    elapsed = time.perf_counter() - start
    report(8, "multi-seed aggregation", ok and elapsed < 1, f"mean {agg.mean_correct}, std {agg.std_correct}")


def test_criterion_09_softmax():
    rng = np.random.default_rng(9)
    worst = 0.0
    argmax_ok = True
    for _ in range(1000):
        logits = rng.normal(0, rng.uniform(0.1, 30), size=int(rng.integers(2, 64)))
        shift = float(rng.uniform(-500, 500))
        a = np.asarray(softmax(logits.tolist()))
        b = np.asarray(softmax((logits + shift).tolist()))
        worst = max(worst, float(np.max(np.abs(a - b))))
        argmax_ok &= int(np.argmax(a)) == int(np.argmax(b)) == int(np.argmax(logits))
    big = softmax([1000.0, 0.0])
    finite = all(np.isfinite(big)) and big[0] == 1.0
    report(9, "softmax shift invariance and overflow", worst <= 1e-12 and argmax_ok and finite,
           f"max deviation {worst:.1e}")


def test_criterion_10_end_to_end(tmp_path):
    questions = synthetic_dataset(30, seed=0)
    cfg = ExperimentConfig(modes=("cgr",), budgets=(4000,), thresholds=(0.97,), probe_interval=1000,
                           seeds=tuple(range(64)), backend="mock:horizon=5000")
    timings, runs = [], []
    for name in ("first", "second"):
        start = time.perf_counter()
        out = run_experiment(cfg, questions, tmp_path / name)
        timings.append(time.perf_counter() - start)
        runs.append(read_records_csv(out / "records.csv"))
    ok = len(runs[0]) == 64 * 30 and runs[0] == runs[1] and max(timings) < 60
    ok &= (tmp_path / "first" / "records.csv").read_bytes() == (tmp_path / "second" / "records.csv").read_bytes()
    report(10, "64 seeds x 30 questions, two identical runs", ok,
           f"{len(runs[0])} records, {timings[0]:.1f} s and {timings[1]:.1f} s")


if __name__ == "__main__":
    import sys
    import tempfile

    failed = 0
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_criterion_")):
        try:
            if fn.__code__.co_argcount:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
        except Exception as exc:
            failed += 1
            print(f"FAIL {name}: {type(exc).__name__}: {exc}")
    sys.exit(1 if failed else 0)
