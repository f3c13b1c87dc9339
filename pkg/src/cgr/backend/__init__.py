from cgr.backend.base import (
    Backend,
    SpecialTokens,
    TokenDistribution,
    TokenId,
    Vocabulary,
    default_specials,
    default_vocabulary,
    detokenize,
)
from cgr.backend.mock import MockBackend, MockProfile, build_mock
from cgr.backend.remote import RemoteBackend, remote_next
from cgr.backend.replay import ReplayBackend, load_trace, write_trace
from cgr.backend.stub import StubServer


def tokenize(backend: Backend, text: str) -> list[TokenId]:
    return backend.tokenize(text)


def next_distribution(backend: Backend, context, top_k: int = 1) -> TokenDistribution:
    return backend.next_distribution(context, top_k)


__all__ = [
    "Backend",
    "MockBackend",
    "MockProfile",
    "RemoteBackend",
    "ReplayBackend",
    "SpecialTokens",
    "StubServer",
    "TokenDistribution",
    "TokenId",
    "Vocabulary",
    "build_mock",
    "default_specials",
    "default_vocabulary",
    "detokenize",
    "load_trace",
    "next_distribution",
    "remote_next",
    "tokenize",
    "write_trace",
]
