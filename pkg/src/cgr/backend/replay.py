"""Scripted trace replay backend and the trace file format."""

from __future__ import annotations

import json
import math
from pathlib import Path

from cgr.backend.base import Backend, SpecialTokens, TokenDistribution, TokenId, Vocabulary
from cgr.errors import TraceFormatError


class ReplayBackend(Backend):
    """Returns the recorded distribution for each step of the generated suffix.

    Past the last recorded step it returns ``end_of_sequence`` with
    probability one so that controllers terminate cleanly.
    """

    deterministic = True

    def __init__(self, vocabulary: Vocabulary, specials: SpecialTokens, steps):
        self.vocabulary = vocabulary
        self.specials = specials
        self.steps = list(steps)
        self._end = ((specials.end_of_sequence, 1.0),)

    def tokenize(self, text):
        return self.vocabulary.tokenize(text)

    def next_distribution(self, context, top_k=1):
        self._check_request(context, top_k)
        step = self.generated_length(context)
        if step < len(self.steps):
            return TokenDistribution(self.steps[step].candidates[:top_k], step)
        return TokenDistribution(self._end, step)


def write_trace(path, vocabulary: Vocabulary, specials: SpecialTokens, distributions) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"vocab": vocabulary.to_json(), "specials": specials.to_json()}) + "\n")
        for i, dist in enumerate(distributions):
            row = {
                "step": i,
                "candidates": [{"id": t.id, "text": t.text, "p": p} for t, p in dist.candidates],
            }
            fh.write(json.dumps(row) + "\n")


def _parse_candidate(obj, lineno):
    try:
        tok = TokenId(int(obj["id"]), str(obj["text"]))
        p = float(obj["p"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"bad candidate {obj!r}: {exc}", lineno) from None
    if not math.isfinite(p) or not 0.0 <= p <= 1.0:
        raise TraceFormatError(f"probability {p!r} outside [0, 1]", lineno)
    return tok, p


def load_trace(path) -> ReplayBackend:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceFormatError("empty trace file", 1)
    try:
        header = json.loads(lines[0])
        vocabulary = Vocabulary.from_json(header["vocab"])
        specials = SpecialTokens.from_json(header["specials"])
    except (ValueError, KeyError, TypeError) as exc:
        raise TraceFormatError(f"bad header: {exc}", 1) from None

    steps = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            step = row["step"]
            raw = row["candidates"]
        except (ValueError, KeyError, TypeError) as exc:
            raise TraceFormatError(f"bad record: {exc}", lineno) from None
        if step != len(steps):
            raise TraceFormatError(f"expected step {len(steps)}, found {step!r}", lineno)
        if not isinstance(raw, list) or not raw:
            raise TraceFormatError("candidates must be a non-empty list", lineno)
        dist = TokenDistribution.from_pairs([_parse_candidate(c, lineno) for c in raw], step)
        try:
            dist.validate()
        except ValueError as exc:
            raise TraceFormatError(str(exc), lineno) from None
        steps.append(dist)
    return ReplayBackend(vocabulary, specials, steps)
