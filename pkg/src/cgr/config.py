"""Run configuration for a single decode and for a whole experiment grid."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

from cgr.errors import ConfigError

log = logging.getLogger(__name__)

DEFAULT_SYSTEM_PROMPT = "You are a helpful assistant"
DEFAULT_TEMPLATE = "{system_prompt}\n{question}"
DEFAULT_PENALTIES = (0.0, 0.25, 0.5, 1.0)


@dataclass(frozen=True)
class RunConfig:
    """Knobs of one decode.

    A threshold above 1 can never be met and disables early exit.
    """

    budget: int = 32000
    threshold: float = 0.97
    probe_interval: int = 1000
    max_answer_tokens: int = 4
    seed: int = 42

    def __post_init__(self):
        if int(self.budget) != self.budget or self.budget < 1:
            raise ConfigError(f"budget must be a positive integer, got {self.budget!r}")
        if int(self.probe_interval) != self.probe_interval or self.probe_interval < 1:
            raise ConfigError(f"probe_interval must be a positive integer, got {self.probe_interval!r}")
        if not self.threshold >= 0.0:
            raise ConfigError(f"threshold must be >= 0, got {self.threshold!r}")
        if self.max_answer_tokens < 1:
            raise ConfigError("max_answer_tokens must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything ``cgr run``/``cgr sweep`` needs.

    ``modes``, ``budgets`` and ``thresholds`` are orthogonal grid axes; a
    plain ``run`` uses one value on each.
    """

    modes: tuple = ("cgr",)
    budgets: tuple = (32000,)
    thresholds: tuple = (0.97,)
    probe_interval: int = 1000
    seeds: tuple = (42,)
    penalties: tuple = DEFAULT_PENALTIES
    backend: str = "mock"
    probe_backend: str | None = None
    dataset: str | None = None
    out: str | None = None
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    template: str = DEFAULT_TEMPLATE
    abstain_threshold: float | None = None
    max_answer_tokens: int = 4
    workers: int = 1

    def __post_init__(self):
        from cgr.decoder import DecodingMode

        for name in ("modes", "budgets", "thresholds", "seeds", "penalties"):
            value = tuple(getattr(self, name))
            if not value:
                raise ConfigError(f"{name} must not be empty")
            object.__setattr__(self, name, value)
        try:
            object.__setattr__(self, "modes", tuple(DecodingMode(m).value for m in self.modes))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.probe_interval < 1:
            raise ConfigError("interval must be >= 1")
        for b in self.budgets:
            if int(b) != b or b < self.probe_interval:
                raise ConfigError(f"budget {b!r} must be an integer >= interval ({self.probe_interval})")
        for th in self.thresholds:
            if not 0.0 <= th <= 1.0:
                raise ConfigError(f"threshold {th!r} outside [0, 1]")
            if th < 0.90:
                log.warning("threshold %.3f is below 0.90; early exits may lock in wrong answers", th)
        for c in self.penalties:
            if c < 0:
                raise ConfigError(f"penalty {c!r} must be >= 0")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for s in self.seeds:
            if int(s) != s or not -(1 << 63) <= s < (1 << 64):
                raise ConfigError(f"seed {s!r} is not a 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.template.format(system_prompt="", question="")
        except (KeyError, IndexError, ValueError) as exc:
            raise ConfigError(f"bad template: {exc}") from None

    def cells(self):
        """Yield (mode, budget, threshold) grid points in a fixed order."""
        for mode in self.modes:
            for budget in self.budgets:
                for th in self.thresholds:
                    yield mode, budget, th

    def run_config(self, budget, threshold, seed) -> RunConfig:
        return RunConfig(budget=budget, threshold=threshold, probe_interval=self.probe_interval,
                         max_answer_tokens=self.max_answer_tokens, seed=seed)

    def to_json(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Hash of everything that influences results (output dir and workers excluded)."""
        payload = {k: v for k, v in self.to_json().items() if k not in ("out", "workers")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
