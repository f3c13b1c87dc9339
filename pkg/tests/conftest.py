import pytest

from cgr.backend import (
    Backend,
    MockProfile,
    TokenDistribution,
    build_mock,
    default_specials,
    default_vocabulary,
)

PROMPT = "You are a helpful assistant\nWhat is the answer?"


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="session")
def specials(vocab):
    return default_specials(vocab)


@pytest.fixture
def make_mock(vocab, specials):
    def _make(seed=42, **profile):
        return build_mock(seed, MockProfile(**profile), vocab, specials)

    return _make


@pytest.fixture
def prompt(vocab, specials):
    return vocab.tokenize(PROMPT) + [specials.begin_think]


class ScriptedAnswerBackend(Backend):
    """Emits filler while thinking and a scripted list of (text, p) once the
    answer prefix has been appended."""

    def __init__(self, vocab, specials, script, filler="x"):
        self.vocabulary = vocab
        self.specials = specials
        self.script = list(script)
        self.filler = vocab[filler]
        self.prefix = vocab.tokenize(specials.answer_prefix_text)
        self.calls = 0

    def tokenize(self, text):
        return self.vocabulary.tokenize(text)

    def next_distribution(self, context, top_k=1):
        self.calls += 1
        step = self.generated_length(context)
        m = len(self.prefix)
        for k in range(len(self.script) + 1):
            end = len(context) - k
            if end >= m and context[end - m:end] == self.prefix:
                if k < len(self.script):
                    text, p = self.script[k]
                    tok = self.vocabulary[text]
                else:
                    tok, p = self.specials.end_of_sequence, 1.0
                return TokenDistribution(((tok, p),), step)
        return TokenDistribution(((self.filler, 0.5),), step)


@pytest.fixture
def scripted(vocab, specials):
    def _make(script):
        return ScriptedAnswerBackend(vocab, specials, script)

    return _make


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
