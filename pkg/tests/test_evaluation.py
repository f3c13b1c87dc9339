import itertools
import random
import statistics
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgr.backend import MockProfile, build_mock, default_specials, default_vocabulary
from cgr.config import RunConfig
from cgr.decoder import decode
from cgr.errors import InputError
from cgr.evaluation import (
    AS_RECORDED,
    NEVER,
    AbstentionPolicy,
    EvalRecord,
    SavingsRow,
    aggregate_seeds,
    certainty_below,
    format_savings_row,
    grade_dataset,
    parse_savings_row,
    rank_questions,
    record_from_trace,
    score_question,
    tokens_saved_summary,
)

GOLDEN = Path(__file__).parent / "golden" / "savings_table.tex"


def rec(qid="q1", seed=0, predicted=1, truth=1, abstained=False, used=0, budget=32000,
        threshold=0.97, certainty=0.99):
    return EvalRecord(
        question_id=qid, seed=seed, predicted=predicted, truth=truth,
        correct=(not abstained) and predicted == truth, abstained=abstained,
        thinking_tokens_used=used, tokens_saved=budget - used, final_certainty=certainty,
        stop_reason="BudgetExhausted" if abstained else f"EarlyExitCertainty({used})",
        threshold=threshold, budget=budget,
    )


@pytest.mark.parametrize("args,expected", [
    ((204, 204, False, 0.25), 1.0),
    ((None, 204, True, 1.0), 0.0),
    ((17, 204, False, 0.25), -0.25),
    ((None, 204, False, 0.5), -0.5),
])
def test_score_question(args, expected):
    assert score_question(*args) == expected


def test_negative_penalty():
    with pytest.raises(ValueError):
        score_question(1, 1, False, -0.1)


def make_exam(correct, wrong, abstained):
    out = []
    n = 0
    for kind, count in (("c", correct), ("w", wrong), ("a", abstained)):
        for _ in range(count):
            n += 1
            if kind == "c":
                out.append(rec(f"q{n}", predicted=5, truth=5))
            elif kind == "w":
                out.append(rec(f"q{n}", predicted=6, truth=5))
            else:
                out.append(rec(f"q{n}", predicted=6, truth=5, abstained=True, used=32000))
    return out


class TestGrade:
    def test_worked(self):
        report = grade_dataset(make_exam(16, 7, 7), 0.25)
        assert (report.total_correct, report.total_wrong, report.total_abstained) == (16, 7, 7)
        assert report.grade == 14.25
        assert report.questions == 30

    def test_zero_penalty(self):
        assert grade_dataset(make_exam(9, 12, 3), 0).grade == 9

    def test_no_wrong(self):
        for c in (0, 0.25, 1.0, 3.0):
            assert grade_dataset(make_exam(11, 0, 4), c).grade == 11

    def test_never_policy_counts_abstentions_as_answers(self):
        report = grade_dataset(make_exam(16, 7, 7), 0.25, NEVER)
        assert (report.total_correct, report.total_wrong, report.total_abstained) == (16, 14, 0)
        assert report.grade == 16 - 0.25 * 14

    def test_certainty_below(self):
        records = [rec("a", certainty=0.5, predicted=1, truth=2), rec("b", certainty=0.99)]
        report = grade_dataset(records, 1.0, certainty_below(0.9))
        assert (report.total_correct, report.total_wrong, report.total_abstained) == (1, 0, 1)

    def test_parse_failure_policies(self):
        records = [rec("a", predicted=None, truth=3, certainty=0.0)]
        assert grade_dataset(records, 1.0, NEVER).total_wrong == 1
        assert grade_dataset(records, 1.0, certainty_below(0.0)).total_abstained == 1

    def test_duplicate_ids(self):
        with pytest.raises(InputError):
            grade_dataset([rec("a"), rec("a")], 0.25)

    def test_policy_parse(self):
        for text in ("as-recorded", "never", "certainty-below:0.97"):
            assert str(AbstentionPolicy.parse(text)) == text
        with pytest.raises(ValueError):
            AbstentionPolicy.parse("sometimes")
        with pytest.raises(ValueError):
            AbstentionPolicy.parse("certainty-below")

    @given(st.integers(0, 30), st.integers(1, 30), st.integers(0, 30),
           st.lists(st.integers(0, 500).map(lambda k: k / 100), min_size=2, max_size=5, unique=True))
    def test_monotone_in_penalty(self, c, w, a, penalties):
        records = make_exam(c, w, a)
        grades = [grade_dataset(records, p).grade for p in sorted(penalties)]
        assert all(x > y for x, y in zip(grades, grades[1:]))

    @given(st.integers(0, 20), st.integers(1, 20), st.integers(0, 20), st.floats(0.01, 2))
    def test_abstention_dominance(self, c, w, a, penalty):
        records = make_exam(c, w, a)
        before = grade_dataset(records, penalty).grade
        wrong = next(i for i, r in enumerate(records) if not r.correct and not r.abstained)
        r = records[wrong]
        records[wrong] = rec(r.question_id, predicted=r.predicted, truth=r.truth, abstained=True, used=32000)
        assert grade_dataset(records, penalty).grade >= before

    def test_random_against_direct_formula(self):
        rng = random.Random(7)
        for _ in range(100):
            records = make_exam(rng.randint(0, 30), rng.randint(0, 30), rng.randint(0, 30))
            for c in (0, 0.25, 0.5, 1.0):
                report = grade_dataset(records, c)
                exact = Fraction(report.total_correct) - Fraction(c) * report.total_wrong
                assert abs(report.grade - float(exact)) <= 1e-12


class TestRecords:
    def test_invariants(self):
        with pytest.raises(InputError):
            EvalRecord("q", 0, 5, 6, True, False, 10, 31990, 0.9, "x")
        with pytest.raises(InputError):
            EvalRecord("q", 0, 5, 5, True, True, 10, 31990, 0.9, "x")
        with pytest.raises(InputError):
            EvalRecord("q", 0, 5, 5, True, False, 10, 5, 0.9, "x")

    def test_row_round_trip(self):
        for r in (rec(), rec(predicted=None, abstained=True, used=32000), rec(certainty=0.1 + 0.2)):
            assert EvalRecord.from_row(r.to_row()) == r

    def test_from_trace(self):
        vocab = default_vocabulary()
        sp = default_specials(vocab)
        backend = build_mock(42, MockProfile(crossing_step=300, answer_digits=(2, 0, 4)), vocab, sp)
        trace = decode(vocab.tokenize("Q"), backend, config=RunConfig(budget=1000, probe_interval=100),
                       question_id="q7")
        r = record_from_trace(trace, seed=3, truth=204)
        assert (r.question_id, r.seed, r.predicted, r.correct, r.abstained) == ("q7", 3, 204, True, False)
        assert r.tokens_saved == 700 and r.stop_reason == "EarlyExitCertainty(300)"
        exhausted = decode(vocab.tokenize("Q"), backend, config=RunConfig(budget=200, probe_interval=100))
        r2 = record_from_trace(exhausted, seed=3, truth=204)
        assert r2.abstained and not r2.correct and r2.predicted == 204


class TestSavings:
    def test_uniform(self):
        records = [rec(f"q{q}", seed=s, used=31000) for s in range(64) for q in range(30)]
        (row,) = tokens_saved_summary(records)
        assert (row.total, row.seeds, row.questions) == (1_920_000, 64, 30)
        assert row.per_seed == 30_000 and row.per_question == 1_000
        assert format_savings_row(row) == "0.97 & 1,920,000 & 30,000 & 1,000 \\\\"

    def test_zero(self):
        (row,) = tokens_saved_summary([rec(used=32000)])
        assert (row.total, row.per_seed, row.per_question) == (0, 0, 0)

    def test_empty(self):
        assert tokens_saved_summary([]) == []

    def test_grouped_by_threshold(self):
        records = [rec("a", threshold=0.99, used=100), rec("a", threshold=0.96, used=50),
                   rec("b", threshold=0.96, used=150)]
        rows = tokens_saved_summary(records)
        assert [r.threshold for r in rows] == [0.96, 0.99]
        assert [r.total for r in rows] == [64000 - 200, 31900]

    def test_mixed_budgets(self):
        with pytest.raises(InputError):
            tokens_saved_summary([rec("a", budget=1000), rec("b", budget=2000)])

    def test_golden_rows(self):
        lines = GOLDEN.read_text().splitlines()
        assert len(lines) == 4
        for line in lines:
            th, total, per_seed, per_question = parse_savings_row(line)
            assert per_seed == total // 64
            assert per_question == total // (64 * 30)
            assert format_savings_row(SavingsRow(th, total, 64, 30)) == line

    def test_bad_row(self):
        with pytest.raises(InputError):
            parse_savings_row("0.99 & 12 & 3")


class TestAggregate:
    def test_worked(self):
        agg = aggregate_seeds([14, 14, 15, 14])
        assert agg.mean_correct == 14.25
        assert agg.std_correct == 0.5
        assert agg.cumulative_means == (14.0, 14.0, 43 / 3, 14.25)

    def test_single(self):
        agg = aggregate_seeds([13])
        assert (agg.mean_correct, agg.std_correct, agg.cumulative_means) == (13, 0, (13,))

    def test_constant(self):
        assert aggregate_seeds([7] * 10).std_correct == 0

    def test_empty(self):
        with pytest.raises(InputError):
            aggregate_seeds([])

    def test_grades(self):
        agg = aggregate_seeds([1, 2], {0.25: [0.5, 1.5]})
        assert agg.mean_grade == {0.25: 1.0}

    @given(st.lists(st.integers(0, 30), min_size=1, max_size=64), st.randoms())
    def test_permutation_and_last_mean(self, counts, rnd):
        a = aggregate_seeds(counts)
        shuffled = list(counts)
        rnd.shuffle(shuffled)
        b = aggregate_seeds(shuffled)
        assert a.mean_correct == b.mean_correct
        assert abs(a.std_correct - b.std_correct) <= 1e-9
        assert abs(a.cumulative_means[-1] - a.mean_correct) <= 1e-9
        if len(counts) > 1:
            assert abs(a.std_correct - statistics.stdev(counts)) <= 1e-9


class TestRank:
    def test_two(self):
        records = [rec("q1", used=12000), rec("q2", used=32000)]
        assert [q for q, _ in rank_questions(records)] == ["q1", "q2"]

    def test_ties_by_id(self):
        records = [rec(q, used=100) for q in ("q3", "q1", "q2")]
        assert [q for q, _ in rank_questions(records)] == ["q1", "q2", "q3"]

    def test_means(self):
        saved = {"q1": [10_000, 12_000], "q2": [11_000, 11_000], "q3": [0, 0]}
        records = [rec(q, seed=s, used=32000 - v) for q, vs in saved.items() for s, v in enumerate(vs)]
        for perm in itertools.islice(itertools.permutations(records), 0, None, 97):
            assert rank_questions(perm) == [("q1", 11_000), ("q2", 11_000), ("q3", 0)]
