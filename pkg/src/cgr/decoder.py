"""Token-by-token reasoning controllers.

Four modes share one loop:

* ``BASELINE``: greedy decode until ``</think>``, end of sequence or budget.
* ``BUDGET_FORCING``: every stop attempt is replaced by the wait cue; runs to budget.
* ``CGR``: baseline plus periodic certainty probes that end thinking early.
* ``CGR_FORCING``: stop attempts are allowed only when a probe certifies the
  current answer, otherwise the wait cue is inserted; periodic probes as in CGR.

The thinking budget counts generated reasoning tokens, including inserted
wait tokens. Probe tokens are tallied separately.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from cgr.answer import AnswerDecode, extract_answer, force_answer
from cgr.certainty import ProbeResult, ProbeTrigger, answer_certainty, certainty_probe
from cgr.config import RunConfig
from cgr.errors import BackendUnavailable

__all__ = [
    "DecodingMode",
    "ReasoningTrace",
    "StopKind",
    "StopReason",
    "decode",
    "extract_answer",
    "force_answer",
]


class DecodingMode(str, enum.Enum):
    BASELINE = "baseline"
    BUDGET_FORCING = "budget-forcing"
    CGR = "cgr"
    CGR_FORCING = "cgr-forcing"

    @property
    def forcing(self) -> bool:
        return self in (DecodingMode.BUDGET_FORCING, DecodingMode.CGR_FORCING)

    @property
    def probing(self) -> bool:
        return self in (DecodingMode.CGR, DecodingMode.CGR_FORCING)


class StopKind(str, enum.Enum):
    BUDGET_EXHAUSTED = "BudgetExhausted"
    EARLY_EXIT_CERTAINTY = "EarlyExitCertainty"
    NATURAL_STOP_CERTIFIED = "NaturalStopCertified"
    NATURAL_STOP = "NaturalStop"


@dataclass(frozen=True)
class StopReason:
    kind: StopKind
    step: int

    def __str__(self):
        if self.kind is StopKind.BUDGET_EXHAUSTED:
            return self.kind.value
        return f"{self.kind.value}({self.step})"

    @property
    def certified(self) -> bool:
        return self.kind in (StopKind.EARLY_EXIT_CERTAINTY, StopKind.NATURAL_STOP_CERTIFIED)

    @classmethod
    def parse(cls, text: str, budget: int = 0) -> "StopReason":
        name, _, rest = text.partition("(")
        kind = StopKind(name)
        step = int(rest.rstrip(")")) if rest else budget
        return cls(kind, step)


@dataclass(frozen=True)
class ReasoningTrace:
    question_id: str
    tokens: tuple
    thinking_tokens_used: int
    budget: int
    forced_wait_count: int
    probe_events: tuple
    stop_reason: StopReason
    final_answer: AnswerDecode
    probe_overhead_tokens: int
    mode: DecodingMode = DecodingMode.CGR
    threshold: float = 0.97
    probe_interval: int = 1000
    final_certainty: float = 0.0
    wait_truncated: bool = False
    complete: bool = True

    @property
    def predicted(self) -> int | None:
        return extract_answer(self.final_answer)

    @property
    def abstainable(self) -> bool:
        """Ended at the budget without certification, or produced no parsable answer."""
        return self.stop_reason.kind is StopKind.BUDGET_EXHAUSTED or self.final_answer.parse_failed

    @property
    def tokens_saved(self) -> int:
        return self.budget - self.thinking_tokens_used

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "mode": self.mode.value,
            "budget": self.budget,
            "threshold": self.threshold,
            "probe_interval": self.probe_interval,
            "thinking_tokens_used": self.thinking_tokens_used,
            "forced_wait_count": self.forced_wait_count,
            "stop_reason": str(self.stop_reason),
            "final_answer": self.final_answer.to_json(),
            "final_certainty": self.final_certainty,
            "probe_overhead_tokens": self.probe_overhead_tokens,
            "wait_truncated": self.wait_truncated,
            "complete": self.complete,
            "tokens": [t.id for t in self.tokens],
        }


def _interval_fires(t: int, interval: int) -> bool:
    return t > 0 and t % interval == 0


def decode(question, gen_backend, probe_backend=None, mode=DecodingMode.CGR,
           config: RunConfig | None = None, *, question_id: str = "") -> ReasoningTrace:
    """Run one reasoning episode and force a final answer.

    ``question`` is the tokenised prompt. When the backend defines a
    ``<think>`` token and the prompt does not contain it, it is appended to
    open the thinking region.
    """
    if config is None:
        config = RunConfig()
    if not question:
        raise ValueError("question must be non-empty")
    mode = DecodingMode(mode)
    probe_backend = probe_backend if probe_backend is not None else gen_backend
    sp = gen_backend.specials

    context = list(question)
    if sp.begin_think is not None and all(t.id != sp.begin_think.id for t in context):
        context.append(sp.begin_think)
    prompt_len = len(context)

    budget = config.budget
    theta = config.threshold
    interval = config.probe_interval
    probing = mode.probing
    forcing = mode.forcing
    end_id = sp.end_think.id
    eos_id = sp.end_of_sequence.id
    wait = gen_backend.tokenize(sp.wait_text) if forcing else []
    source = gen_backend if probe_backend is not gen_backend else None

    t = 0
    waits = 0
    overhead = 0
    truncated = False
    probes = []
    stop = None

    def probe(trigger):
        nonlocal overhead
        result = certainty_probe(context, probe_backend, step=t, trigger=trigger,
                                 source_backend=source, max_answer_tokens=config.max_answer_tokens)
        overhead += result.answer.tokens_used
        probes.append(result)
        return result.certainty >= theta

    def build(final, final_certainty, complete=True):
        return ReasoningTrace(
            question_id=question_id,
            tokens=tuple(context[prompt_len:]),
            thinking_tokens_used=t,
            budget=budget,
            forced_wait_count=waits,
            probe_events=tuple(probes),
            stop_reason=stop if stop is not None else StopReason(StopKind.BUDGET_EXHAUSTED, t),
            final_answer=final,
            probe_overhead_tokens=overhead,
            mode=mode,
            threshold=theta,
            probe_interval=interval,
            final_certainty=final_certainty,
            wait_truncated=truncated,
            complete=complete,
        )

    next_dist = gen_backend.next_distribution
    try:
        while t < budget:
            x = next_dist(context, 1).candidates[0][0]
            if x.id == end_id or x.id == eos_id:
                if not forcing:
                    step = t
                    if x.id == end_id:
                        context.append(x)
                        t += 1
                    stop = StopReason(StopKind.NATURAL_STOP, step)
                    break
                if mode is DecodingMode.CGR_FORCING and probe(ProbeTrigger.STOP_ATTEMPT):
                    stop = StopReason(StopKind.NATURAL_STOP_CERTIFIED, t)
                    break
                waits += 1
                room = budget - t
                insert = wait if len(wait) <= room else wait[:room]
                truncated = truncated or len(insert) < len(wait)
                for w in insert:
                    context.append(w)
                    t += 1
                    if probing and t % interval == 0 and probe(ProbeTrigger.INTERVAL):
                        stop = StopReason(StopKind.EARLY_EXIT_CERTAINTY, t)
                        break
                if stop is not None:
                    break
                continue
            context.append(x)
            t += 1
            if probing and t % interval == 0 and probe(ProbeTrigger.INTERVAL):
                stop = StopReason(StopKind.EARLY_EXIT_CERTAINTY, t)
                break
        if stop is None:
            stop = StopReason(StopKind.BUDGET_EXHAUSTED, t)
        final = force_answer(context, gen_backend, config.max_answer_tokens)
    except BackendUnavailable as exc:
        exc.partial_trace = build(AnswerDecode((), None), 0.0, complete=False)
        raise
    return build(final, answer_certainty(final))
