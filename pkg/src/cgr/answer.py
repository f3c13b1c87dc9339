"""Answer forcing and extraction on a forked context."""

from __future__ import annotations

from dataclasses import dataclass

MAX_ANSWER = 999


@dataclass(frozen=True)
class AnswerDecode:
    """Greedy decode of a boxed answer.

    ``digit_tokens`` holds (token, argmax probability) pairs for every
    decoded token carrying digits; ``parsed_value`` is ``None`` when the
    text did not parse to an integer in [0, 999].
    """

    digit_tokens: tuple
    parsed_value: int | None
    text: str = ""
    tokens_used: int = 0

    @property
    def parse_failed(self) -> bool:
        return self.parsed_value is None

    @property
    def probabilities(self) -> list:
        return [p for _, p in self.digit_tokens]

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "parsed_value": self.parsed_value,
            "digits": [[t.id, t.text, p] for t, p in self.digit_tokens],
            "tokens_used": self.tokens_used,
        }

    @classmethod
    def from_json(cls, obj) -> "AnswerDecode":
        from cgr.backend.base import TokenId

        return cls(
            digit_tokens=tuple((TokenId(i, s), p) for i, s, p in obj["digits"]),
            parsed_value=obj["parsed_value"],
            text=obj.get("text", ""),
            tokens_used=obj.get("tokens_used", 0),
        )


def parse_answer_text(text: str) -> int | None:
    """Canonical integer reading of a boxed answer, or ``None``.

    Surrounding whitespace and leading zeros are dropped; anything that is
    not a plain run of ASCII digits, or reads above 999, fails.
    """
    s = text.strip()
    if not s or not s.isascii() or not s.isdigit():
        return None
    value = int(s)
    return value if value <= MAX_ANSWER else None


def thinking_open(context, specials) -> bool:
    """True unless ``</think>`` already appears after the prompt boundary."""
    start = 0
    if specials.begin_think is not None:
        try:
            start = context.index(specials.begin_think) + 1
        except ValueError:
            start = 0
    try:
        context.index(specials.end_think, start)
    except ValueError:
        return True
    return False


def force_answer(context, backend, max_answer_tokens: int = 4) -> AnswerDecode:
    """Append the answer prefix to a copy of ``context`` and greedily decode the answer."""
    if max_answer_tokens < 1:
        raise ValueError("max_answer_tokens must be >= 1")
    sp = backend.specials
    fork = list(context)
    injected = []
    if thinking_open(fork, sp):
        injected.append(sp.end_think)
    injected += backend.tokenize(sp.answer_prefix_text)
    fork += injected

    close = sp.answer_close_text
    end_id = sp.end_think.id
    eos_id = sp.end_of_sequence.id
    pieces = []
    generated = 0
    for _ in range(max_answer_tokens):
        dist = backend.next_distribution(fork, 2)
        generated += 1
        choice = next(((t, p) for t, p in dist.candidates if t.id != end_id), None)
        if choice is None or choice[0].id == eos_id:
            break
        tok, p = choice
        if close and close in tok.text:
            head = tok.text.split(close, 1)[0]
            if head:
                pieces.append((tok, p, head))
            break
        pieces.append((tok, p, tok.text))
        fork.append(tok)

    text = "".join(s for _, _, s in pieces)
    value = parse_answer_text(text)
    digits = tuple((t, p) for t, p, s in pieces if s.strip())
    return AnswerDecode(digits, value, text, len(injected) + generated)


def extract_answer(decode: AnswerDecode) -> int | None:
    """The predicted integer, or ``None`` (abstain) when parsing failed."""
    value = decode.parsed_value
    if value is None or not 0 <= value <= MAX_ANSWER:
        return None
    return value
