"""Token types and the next-token-distribution interface the controllers drive."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from cgr.errors import ContextOverflow, TokenizationError


class TokenId(NamedTuple):
    id: int
    text: str


class TokenDistribution(NamedTuple):
    """Top-k next-token candidates at one decoding step.

    Candidates are ordered by descending probability, ties broken by
    ascending token id. Probabilities are raw (no renormalisation after
    truncation), so they may sum to less than one.
    """

    candidates: tuple
    step_index: int = 0

    @classmethod
    def from_pairs(cls, pairs, step_index, top_k=None):
        ordered = sorted(pairs, key=lambda c: (-c[1], c[0].id))
        if top_k is not None:
            ordered = ordered[:top_k]
        return cls(tuple(ordered), step_index)

    @property
    def top(self) -> TokenId:
        return self.candidates[0][0]

    @property
    def top_probability(self) -> float:
        return self.candidates[0][1]

    def truncate(self, top_k: int) -> "TokenDistribution":
        return TokenDistribution(self.candidates[:top_k], self.step_index)

    def validate(self) -> None:
        """Raise ``ValueError`` when an invariant does not hold."""
        if not self.candidates:
            raise ValueError("distribution has no candidates")
        total = 0.0
        seen = set()
        for token, p in self.candidates:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p!r} outside [0, 1]")
            if token.id in seen:
                raise ValueError(f"token id {token.id} repeated")
            seen.add(token.id)
            total += p
        if total > 1.0 + 1e-9:
            raise ValueError(f"probabilities sum to {total:.12g} > 1")
        keys = [(-p, t.id) for t, p in self.candidates]
        if keys != sorted(keys):
            raise ValueError("candidates are not sorted by (probability desc, id asc)")


@dataclass(frozen=True)
class SpecialTokens:
    """Control tokens and the text snippets the controllers inject.

    ``begin_think`` marks the end of the prompt: everything after its first
    occurrence is the generated suffix whose length is the step index.
    """

    end_think: TokenId
    end_of_sequence: TokenId
    begin_think: TokenId | None = None
    wait_text: str = "\nWait"
    answer_prefix_text: str = "Final Answer: \\boxed{"
    answer_close_text: str = "}"

    def __post_init__(self):
        if self.end_think.id == self.end_of_sequence.id:
            raise ValueError("end_think and end_of_sequence must differ")
        if not self.wait_text:
            raise ValueError("wait_text must be non-empty")

    def to_json(self) -> dict:
        out = {
            "end_think": list(self.end_think),
            "end_of_sequence": list(self.end_of_sequence),
            "wait_text": self.wait_text,
            "answer_prefix_text": self.answer_prefix_text,
            "answer_close_text": self.answer_close_text,
        }
        if self.begin_think is not None:
            out["begin_think"] = list(self.begin_think)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SpecialTokens":
        begin = obj.get("begin_think")
        return cls(
            end_think=TokenId(*obj["end_think"]),
            end_of_sequence=TokenId(*obj["end_of_sequence"]),
            begin_think=TokenId(*begin) if begin is not None else None,
            wait_text=obj.get("wait_text", "\nWait"),
            answer_prefix_text=obj.get("answer_prefix_text", "Final Answer: \\boxed{"),
            answer_close_text=obj.get("answer_close_text", "}"),
        )


BEGIN_THINK_TEXT = "<think>"
END_THINK_TEXT = "</think>"
EOS_TEXT = "<eos>"


class Vocabulary:
    """A fixed token inventory with greedy longest-match tokenisation."""

    def __init__(self, tokens: Sequence[TokenId]):
        self.tokens = list(tokens)
        self.by_text = {}
        self.by_id = {}
        for tok in self.tokens:
            if tok.id in self.by_id:
                raise ValueError(f"duplicate token id {tok.id}")
            if not tok.text:
                raise ValueError(f"token {tok.id} has empty text")
            self.by_id[tok.id] = tok
            self.by_text.setdefault(tok.text, tok)
        self.max_len = max(len(t) for t in self.by_text)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, text):
        return text in self.by_text

    def __getitem__(self, text) -> TokenId:
        return self.by_text[text]

    def tokenize(self, text: str) -> list[TokenId]:
        out = []
        i = 0
        n = len(text)
        by_text = self.by_text
        while i < n:
            for width in range(min(self.max_len, n - i), 0, -1):
                tok = by_text.get(text[i:i + width])
                if tok is not None:
                    out.append(tok)
                    i += width
                    break
            else:
                raise TokenizationError(f"character {text[i]!r} at offset {i} is not in the vocabulary")
        return out

    def extended(self, texts) -> "Vocabulary":
        """Return a copy with any missing single characters of ``texts`` appended."""
        tokens = list(self.tokens)
        known = set(self.by_text)
        next_id = max(self.by_id) + 1
        for text in texts:
            for ch in text:
                if ch not in known:
                    tokens.append(TokenId(next_id, ch))
                    known.add(ch)
                    next_id += 1
        return Vocabulary(tokens)

    def to_json(self) -> list:
        return [[t.id, t.text] for t in self.tokens]

    @classmethod
    def from_json(cls, rows) -> "Vocabulary":
        return cls([TokenId(int(i), str(s)) for i, s in rows])


def default_vocabulary() -> Vocabulary:
    """Control tokens, tab, newline and printable ASCII, one character per token."""
    texts = [EOS_TEXT, BEGIN_THINK_TEXT, END_THINK_TEXT, "\t", "\n"]
    texts += [chr(c) for c in range(32, 127)]
    return Vocabulary([TokenId(i, s) for i, s in enumerate(texts)])


def default_specials(vocab: Vocabulary) -> SpecialTokens:
    return SpecialTokens(
        end_think=vocab[END_THINK_TEXT],
        end_of_sequence=vocab[EOS_TEXT],
        begin_think=vocab[BEGIN_THINK_TEXT] if BEGIN_THINK_TEXT in vocab else None,
    )


def detokenize(tokens) -> str:
    return "".join(t.text for t in tokens)


class Backend:
    """Next-token distribution source.

    Implementations are stateless with respect to the context: everything
    a call needs arrives in ``context`` so that concurrent sessions never
    interfere.
    """

    specials: SpecialTokens
    deterministic: bool = True
    max_context: int = 1 << 20

    def tokenize(self, text: str) -> list[TokenId]:
        raise NotImplementedError

    def detokenize(self, tokens) -> str:
        return detokenize(tokens)

    def next_distribution(self, context, top_k: int = 1) -> TokenDistribution:
        raise NotImplementedError

    def check(self) -> None:
        """Fail fast when the backend cannot serve requests."""

    def generated_length(self, context) -> int:
        """Number of tokens after the prompt boundary (the step index)."""
        begin = self.specials.begin_think
        if begin is None:
            return len(context)
        try:
            return len(context) - context.index(begin) - 1
        except ValueError:
            return len(context)

    def _check_request(self, context, top_k):
        if not context:
            raise ValueError("context must be non-empty")
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        if len(context) > self.max_context:
            raise ContextOverflow(f"context of {len(context)} tokens exceeds maximum {self.max_context}")
