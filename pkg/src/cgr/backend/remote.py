"""HTTP client for a model server speaking the /v1/next + /v1/tokenize protocol."""

from __future__ import annotations

import math

import httpx

from cgr.backend.base import (
    BEGIN_THINK_TEXT,
    END_THINK_TEXT,
    EOS_TEXT,
    Backend,
    SpecialTokens,
    TokenDistribution,
    TokenId,
)
from cgr.errors import BackendUnavailable, ProtocolError

DEFAULT_TIMEOUT = 30.0


class RemoteBackend(Backend):
    """Talks to a model server over JSON/HTTP.

    Requests are pure reads, so transport failures are retried up to
    ``retries`` times before ``BackendUnavailable`` is raised. Special
    token ids are looked up lazily through ``/v1/tokenize``.
    """

    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, retries: int = 1,
                 deterministic: bool = False, special_texts=None, max_context: int = 1 << 20):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.deterministic = deterministic
        self.max_context = max_context
        self._special_texts = {
            "begin_think": BEGIN_THINK_TEXT,
            "end_think": END_THINK_TEXT,
            "end_of_sequence": EOS_TEXT,
            **(special_texts or {}),
        }
        self._client = httpx.Client(base_url=self.url, timeout=timeout)
        self._specials = None

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_client"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._client = httpx.Client(base_url=self.url, timeout=self.timeout)

    def _post(self, path, payload):
        last = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(path, json=payload)
            except httpx.TimeoutException as exc:
                last = BackendUnavailable(f"{self.url}{path} timed out after {self.timeout}s: {exc}")
                continue
            except httpx.TransportError as exc:
                last = BackendUnavailable(f"{self.url}{path} unreachable: {exc}")
                continue
            if resp.status_code >= 500:
                last = BackendUnavailable(f"{self.url}{path} returned HTTP {resp.status_code}", status=resp.status_code)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"{self.url}{path} returned HTTP {resp.status_code}", status=resp.status_code)
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"response from {path} is not JSON: {exc}") from None
        raise last

    @property
    def specials(self) -> SpecialTokens:
        if self._specials is None:
            resolved = {}
            for name, text in self._special_texts.items():
                toks = self.tokenize(text)
                if len(toks) != 1:
                    raise ProtocolError(f"special token {text!r} does not map to a single token")
                resolved[name] = toks[0]
            self._specials = SpecialTokens(**resolved)
        return self._specials

    def check(self):
        self.specials  # noqa: B018 - resolves ids, raising if the server is down

    def tokenize(self, text):
        body = self._post("/v1/tokenize", {"text": text})
        try:
            ids = body["ids"]
            texts = body["texts"]
            if len(ids) != len(texts):
                raise ValueError("ids and texts differ in length")
            return [TokenId(int(i), str(s)) for i, s in zip(ids, texts)]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed tokenize response: {exc}") from None

    def next_distribution(self, context, top_k=1):
        self._check_request(context, top_k)
        body = self._post("/v1/next", {"context_ids": [t.id for t in context], "top_k": top_k})
        return decode_next_response(body, self.generated_length(context), top_k)


def decode_next_response(body, step_index: int, top_k: int) -> TokenDistribution:
    """Turn a /v1/next response body into a distribution, exponentiating log-probabilities."""
    try:
        raw = body["candidates"]
    except (KeyError, TypeError):
        raise ProtocolError("response has no 'candidates' field") from None
    if not isinstance(raw, list) or not raw:
        raise ProtocolError("response candidates list is empty")
    pairs = []
    for c in raw:
        try:
            tok = TokenId(int(c["id"]), str(c["text"]))
            lp = float(c["logprob"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed candidate {c!r}: {exc}") from None
        if math.isnan(lp) or lp > 1e-9:
            raise ProtocolError(f"log-probability {lp!r} is not <= 0")
        pairs.append((tok, math.exp(min(lp, 0.0))))
    dist = TokenDistribution.from_pairs(pairs, step_index, top_k)
    try:
        dist.validate()
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None
    return dist


def remote_next(client: RemoteBackend, context, top_k: int) -> TokenDistribution:
    return client.next_distribution(context, top_k)
