"""Seeded mock backend that synthesises certainty trajectories.

The mock does not imitate language. It emits filler tokens while thinking,
``</think>`` at scripted steps, and when it sees the answer prefix at the
end of the context it decodes a fixed answer whose per-digit argmax
probability is a step function of how long the model has been thinking.
"""

from __future__ import annotations

from dataclasses import dataclass

from cgr.backend.base import Backend, SpecialTokens, TokenDistribution, Vocabulary
from cgr.errors import InvalidProfile

_MASK = (1 << 64) - 1
_FILLER = "abcdefghijklmnopqrstuvwxyz .,="
# Probability mass of the filler argmax and of a scripted </think>.
_FILLER_P = 0.55
_STOP_P = 0.9
_CLOSE_P = 0.995


def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def unit_noise(seed: int, step: int, position: int) -> float:
    """Deterministic uniform draw in [-1, 1) keyed on (seed, step, position)."""
    h = _splitmix(seed & _MASK)
    h = _splitmix(h ^ (step & _MASK))
    h = _splitmix(h ^ (position & _MASK))
    return (h >> 11) * (2.0 / (1 << 53)) - 1.0


@dataclass(frozen=True)
class MockProfile:
    crossing_step: int | None = None
    pre_certainty: float = 0.5
    post_certainty: float = 0.99
    stop_attempt_steps: tuple = ()
    noise_amplitude: float = 0.0
    answer_digits: tuple = (0,)
    # Answer decoded before the crossing; ``None`` means the same answer.
    pre_answer_digits: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "stop_attempt_steps", tuple(sorted(set(self.stop_attempt_steps))))
        object.__setattr__(self, "answer_digits", tuple(self.answer_digits))
        if self.pre_answer_digits is not None:
            object.__setattr__(self, "pre_answer_digits", tuple(self.pre_answer_digits))
        self.validate()

    def validate(self) -> None:
        if self.crossing_step is not None:
            if int(self.crossing_step) != self.crossing_step or self.crossing_step < 1:
                raise InvalidProfile(f"crossing_step must be a positive integer, got {self.crossing_step!r}")
            if not self.pre_certainty < self.post_certainty:
                raise InvalidProfile("pre_certainty must be below post_certainty when crossing_step is set")
        if not 0.0 <= self.pre_certainty < 1.0:
            raise InvalidProfile(f"pre_certainty {self.pre_certainty!r} outside [0, 1)")
        if not 0.0 <= self.post_certainty <= 1.0:
            raise InvalidProfile(f"post_certainty {self.post_certainty!r} outside [0, 1]")
        if self.noise_amplitude < 0:
            raise InvalidProfile("noise_amplitude must be >= 0")
        for s in self.stop_attempt_steps:
            if int(s) != s or s < 1:
                raise InvalidProfile(f"stop attempt step {s!r} is not a positive integer")
        for digits in (self.answer_digits, self.pre_answer_digits):
            if digits is None:
                continue
            if not 1 <= len(digits) <= 3:
                raise InvalidProfile("answers must have 1 to 3 digits")
            if any(d not in range(10) for d in digits):
                raise InvalidProfile(f"answer digits must be in 0..9, got {digits!r}")

    def certainty_at(self, step: int) -> float:
        """Noise-free certainty level of a probe taken after ``step`` thinking tokens."""
        if self.crossing_step is not None and step >= self.crossing_step:
            return self.post_certainty
        return self.pre_certainty

    def answer_at(self, step: int) -> tuple:
        if self.pre_answer_digits is None:
            return self.answer_digits
        if self.crossing_step is not None and step >= self.crossing_step:
            return self.answer_digits
        return self.pre_answer_digits

    def to_json(self) -> dict:
        return {
            "crossing_step": self.crossing_step,
            "pre_certainty": self.pre_certainty,
            "post_certainty": self.post_certainty,
            "stop_attempt_steps": list(self.stop_attempt_steps),
            "noise_amplitude": self.noise_amplitude,
            "answer_digits": list(self.answer_digits),
            "pre_answer_digits": None if self.pre_answer_digits is None else list(self.pre_answer_digits),
        }


class MockBackend(Backend):
    deterministic = True

    def __init__(self, seed: int, profile: MockProfile, vocabulary: Vocabulary,
                 specials: SpecialTokens, max_context: int = 1 << 20):
        if specials.begin_think is None:
            raise ValueError("the mock backend needs a begin_think token to locate the prompt boundary")
        missing = [s for s in list("0123456789") + list(_FILLER) if s not in vocabulary]
        for tok in (specials.end_think, specials.end_of_sequence, specials.begin_think):
            if vocabulary.by_id.get(tok.id) != tok:
                missing.append(tok.text)
        if missing:
            raise ValueError(f"vocabulary lacks tokens required by the mock: {missing!r}")
        profile.validate()
        self.seed = int(seed)
        self.profile = profile
        self.vocabulary = vocabulary
        self.specials = specials
        self.max_context = max_context
        self._stops = frozenset(profile.stop_attempt_steps)
        self._digits = [vocabulary[str(d)] for d in range(10)]
        self._filler = [vocabulary[c] for c in _FILLER]
        self._offset = _splitmix(self.seed) % len(self._filler)
        prefix = vocabulary.tokenize(specials.answer_prefix_text)
        self._prefix = [t.id for t in prefix]
        self._prefix_last = prefix[-1]
        close = vocabulary.tokenize(specials.answer_close_text)
        if len(close) != 1:
            raise ValueError("answer_close_text must be a single token")
        self._close = close[0]
        self._max_answer = 3
        n = len(self._filler)
        self._filler_pairs = [
            ((self._filler[i], _FILLER_P), (self._filler[(i + 1) % n], 0.25), (specials.end_think, 0.01))
            for i in range(n)
        ]
        self._stop_pairs = [
            ((specials.end_think, _STOP_P), (self._filler[(i + self._offset) % n], 1.0 - _STOP_P - 0.01))
            for i in range(n)
        ]
        self._begin = specials.begin_think

    def tokenize(self, text):
        return self.vocabulary.tokenize(text)

    def _answer_position(self, context):
        """Return (prefix_start, tokens_after_prefix) or None when not answering."""
        prefix = self._prefix
        m = len(prefix)
        last = prefix[-1]
        n = len(context)
        for k in range(0, self._max_answer + 2):
            j = n - 1 - k
            if j < m - 1:
                break
            if context[j].id == last and all(context[j - m + 1 + i].id == prefix[i] for i in range(m)):
                return j - m + 1, k
        return None

    def next_distribution(self, context, top_k=1):
        n = len(context)
        if not n or top_k < 1 or n > self.max_context:
            self._check_request(context, top_k)
        try:
            step = n - context.index(self._begin) - 1
        except ValueError:
            step = n
        if self._prefix_last in context[-(self._max_answer + 2):]:
            answering = self._answer_position(context)
            if answering is not None:
                return self._answer_distribution(context, step, *answering).truncate(top_k)
        if step in self._stops:
            return TokenDistribution(self._stop_pairs[step % len(self._stop_pairs)][:top_k], step)
        return TokenDistribution(self._filler_pairs[(step * 7 + self._offset) % len(self._filler_pairs)][:top_k], step)

    def _answer_distribution(self, context, step, prefix_start, k):
        thinking_steps = prefix_start - (len(context) - step)
        if prefix_start > 0 and context[prefix_start - 1].id == self.specials.end_think.id:
            thinking_steps -= 1
        digits = self.profile.answer_at(thinking_steps)
        if k < len(digits):
            level = self.profile.certainty_at(thinking_steps)
            amp = self.profile.noise_amplitude
            if amp:
                level += amp * unit_noise(self.seed, thinking_steps, k)
            p = min(1.0, max(0.0, level))
            top = self._digits[digits[k]]
            pairs = [(top, p)]
            rest = 1.0 - p
            if p > 0.0 and rest > 0.0:
                alts = [d for d in self._digits if d.id != top.id][:3]
                for tok, share, cap in zip(alts, (0.6, 0.3, 0.1), (0.5, 0.25, 0.125)):
                    pairs.append((tok, min(rest * share, p * cap)))
            return TokenDistribution.from_pairs(pairs, step)
        if k == len(digits):
            return TokenDistribution(((self._close, _CLOSE_P), (self.specials.end_of_sequence, 0.004)), step)
        return TokenDistribution(((self.specials.end_of_sequence, 1.0),), step)


def build_mock(seed: int, profile: MockProfile, vocabulary: Vocabulary, specials: SpecialTokens) -> MockBackend:
    return MockBackend(seed, profile, vocabulary, specials)
