"""Min-max answer certainty, certainty probes and threshold sweeps."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from cgr.answer import AnswerDecode, force_answer
from cgr.errors import NumericalError, SweepUnsupported

log = logging.getLogger(__name__)

RECOMMENDED_MIN_THRESHOLD = 0.90


class ProbeTrigger(str, enum.Enum):
    INTERVAL = "Interval"
    STOP_ATTEMPT = "StopAttempt"
    FINAL = "Final"


@dataclass(frozen=True)
class ProbeResult:
    step: int
    answer: AnswerDecode
    certainty: float
    trigger: ProbeTrigger = ProbeTrigger.INTERVAL

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "trigger": self.trigger.value,
            "certainty": self.certainty,
            "answer": self.answer.to_json(),
        }

    @classmethod
    def from_json(cls, obj) -> "ProbeResult":
        return cls(obj["step"], AnswerDecode.from_json(obj["answer"]), obj["certainty"], ProbeTrigger(obj["trigger"]))


def softmax(logits) -> list:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("logits must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)):
        raise NumericalError("softmax input contains non-finite values")
    e = np.exp(x - x.max())
    return (e / e.sum()).tolist()


def answer_certainty(answer: AnswerDecode) -> float:
    """Smallest argmax probability over the answer's digit tokens; 0 for a failed parse."""
    if answer.parse_failed or not answer.digit_tokens:
        return 0.0
    return min(p for _, p in answer.digit_tokens)


def certainty_probe(context, probe_backend, specials=None, *, step=None,
                    trigger=ProbeTrigger.INTERVAL, source_backend=None,
                    max_answer_tokens=4) -> ProbeResult:
    """Force an answer on a fork of ``context`` and score it.

    When the probe model differs from the model that produced ``context``,
    pass the latter as ``source_backend`` so the context is re-tokenised
    through text for the probe model's vocabulary. ``specials`` is accepted
    for symmetry with the generation side; the probe backend's own special
    tokens are what get injected.
    """
    if not context:
        raise ValueError("context must be non-empty")
    if source_backend is not None and source_backend is not probe_backend:
        context = probe_backend.tokenize(source_backend.detokenize(context))
    answer = force_answer(context, probe_backend, max_answer_tokens)
    if step is None:
        step = probe_backend.generated_length(context)
    return ProbeResult(step, answer, answer_certainty(answer), ProbeTrigger(trigger))


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    stop_step: int
    tokens_saved: int
    answer: int | None
    correct: bool | None = None
    stop_reason: str = ""


@dataclass
class ThresholdSweep:
    points: list = field(default_factory=list)

    @property
    def thresholds(self) -> list:
        return [p.threshold for p in self.points]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "stop_step", "tokens_saved", "answer", "correct"])
            for p in self.points:
                w.writerow([
                    repr(p.threshold),
                    p.stop_step,
                    p.tokens_saved,
                    "ABSTAIN" if p.answer is None else p.answer,
                    "" if p.correct is None else str(p.correct).lower(),
                ])


@dataclass(frozen=True)
class SweepSource:
    """One deterministic (question, model) pair to replay under several thresholds."""

    question: list
    backend: object
    probe_backend: object = None
    mode: object = None
    truth: int | None = None
    question_id: str = ""


def sweep_thresholds(source: SweepSource, thresholds, config) -> ThresholdSweep:
    from dataclasses import replace

    from cgr.answer import extract_answer
    from cgr.decoder import DecodingMode, decode

    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    for th in thresholds:
        if not 0.0 <= th <= 1.0:
            raise ValueError(f"threshold {th!r} outside [0, 1]")
        if th < RECOMMENDED_MIN_THRESHOLD:
            log.warning("threshold %.3f is below %.2f; early exits may lock in wrong answers",
                        th, RECOMMENDED_MIN_THRESHOLD)
    backends = [source.backend] + ([source.probe_backend] if source.probe_backend is not None else [])
    if not all(getattr(b, "deterministic", False) for b in backends):
        raise SweepUnsupported("threshold sweeps need deterministic backends")

    mode = source.mode or DecodingMode.CGR
    sweep = ThresholdSweep()
    for th in thresholds:
        trace = decode(source.question, source.backend, source.probe_backend, mode,
                       replace(config, threshold=th), question_id=source.question_id)
        predicted = extract_answer(trace.final_answer)
        correct = None if source.truth is None else predicted == source.truth
        sweep.points.append(SweepPoint(
            threshold=th,
            stop_step=trace.thinking_tokens_used,
            tokens_saved=trace.budget - trace.thinking_tokens_used,
            answer=predicted,
            correct=correct,
            stop_reason=str(trace.stop_reason),
        ))
    return sweep
