"""Core domain types shared by every stage of the prompt search.

Templates, scored pools, run configuration, token budgets, and the
append-only run ledger live here. Everything except the ledger is an
immutable value object that is safe to share across worker threads.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

import numpy as np

PLACEHOLDER = "{}"

# Loop coordinate used for ledger rows written while scoring the initial
# prompt set of a restart, before the first reset begins.
INITIAL_POOL_RESET = -1

ORIGIN_INITIAL = "initial_pool"
ORIGIN_PROPOSAL = "llm_proposal"
ORIGIN_APE = "ape_paraphrase"
ORIGINS = (ORIGIN_INITIAL, ORIGIN_PROPOSAL, ORIGIN_APE)

FEEDBACK_P_ONLY = "p_only"
FEEDBACK_P_PLUS_N = "p_plus_n"
FEEDBACK_MODES = (FEEDBACK_P_ONLY, FEEDBACK_P_PLUS_N)

CONV_MULTI_TURN = "multi_turn"
CONV_ITERATIVE = "iterative"
CONV_NON_ITERATIVE = "non_iterative"
CONVERSATION_MODES = (CONV_MULTI_TURN, CONV_ITERATIVE, CONV_NON_ITERATIVE)


class PromptClimbError(Exception):
    """Base class for errors raised by this package."""


class EmptyLedgerError(PromptClimbError):
    pass


class ConfigError(PromptClimbError):
    pass


@dataclass(frozen=True)
class Template:
    """A class-agnostic prompt string; ``{}`` marks where a class name goes.

    The text must be a single trimmed line. Zero placeholders is a legal
    value (raw captions pass through here) but pools reject such templates
    at admission.
    """

    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.text, str):
            raise ValueError(f"template text must be str, got {type(self.text).__name__}")
        if self.text != self.text.strip():
            raise ValueError(f"template has leading/trailing whitespace: {self.text!r}")
        if "\n" in self.text or "\r" in self.text:
            raise ValueError(f"template contains a newline: {self.text!r}")

    @property
    def placeholder_count(self) -> int:
        return self.text.count(PLACEHOLDER)

    @property
    def word_count(self) -> int:
        # whitespace split; "{}" counts as one word
        return len(self.text.split())

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class ScoredTemplate:
    """A template bound to its evaluator score and pool admission index."""

    template: Template
    score: float
    origin: str
    seq: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score outside [0,1]: {self.score!r} for {self.template.text!r}")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    @property
    def text(self) -> str:
        return self.template.text


class PromptPool:
    """Ordered set of scored templates; duplicate texts are rejected at admission.

    Admission is idempotent: re-admitting known text returns the existing
    entry and leaves the pool unchanged.
    """

    def __init__(self, entries: Iterable[ScoredTemplate] = ()):
        self._entries: list[ScoredTemplate] = []
        self._by_text: dict[str, ScoredTemplate] = {}
        for entry in entries:
            if entry.text in self._by_text:
                continue
            self._entries.append(entry)
            self._by_text[entry.text] = entry

    def admit(self, template: Template, score: float, origin: str, seq: int) -> ScoredTemplate:
        if template.placeholder_count < 1:
            raise ValueError(f"pool rejects template without placeholder: {template.text!r}")
        existing = self._by_text.get(template.text)
        if existing is not None:
            return existing
        entry = ScoredTemplate(template=template, score=score, origin=origin, seq=seq)
        self._entries.append(entry)
        self._by_text[entry.text] = entry
        return entry

    def __contains__(self, text: str) -> bool:
        return text in self._by_text

    def get(self, text: str) -> Optional[ScoredTemplate]:
        return self._by_text.get(text)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ScoredTemplate]:
        return iter(self._entries)

    @property
    def entries(self) -> tuple[ScoredTemplate, ...]:
        return tuple(self._entries)

    def max_score(self) -> float:
        if not self._entries:
            raise ValueError("empty pool has no max score")
        return max(e.score for e in self._entries)

    def best(self) -> ScoredTemplate:
        """Highest score; ties go to the earliest admitted entry."""
        if not self._entries:
            raise ValueError("empty pool has no best entry")
        return min(self._entries, key=lambda e: (-e.score, e.seq))


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters of one search run.

    Defaults follow the reference setup: 20 restarts of 50 resets with 10
    hill-climbing iterations each, 100 sampled prompts per restart, and the
    top/bottom 15 shown to the proposer at temperature 1.0.
    """

    n_restart: int = 20
    n_reset: int = 50
    n_iter: int = 10
    m: int = 100
    k: int = 15
    feedback_mode: str = FEEDBACK_P_PLUS_N
    conversation_mode: str = CONV_ITERATIVE
    proposer_temperature: float = 1.0
    seed: int = 0
    shots: int = 1
    folds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        for name in ("n_restart", "n_reset", "n_iter", "m", "k", "shots"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if self.feedback_mode not in FEEDBACK_MODES:
            raise ConfigError(f"feedback_mode must be one of {FEEDBACK_MODES}, got {self.feedback_mode!r}")
        if self.conversation_mode not in CONVERSATION_MODES:
            raise ConfigError(
                f"conversation_mode must be one of {CONVERSATION_MODES}, got {self.conversation_mode!r}"
            )
        # both feedback modes surface 2k prompts, so both need 2k <= m
        if 2 * self.k > self.m:
            raise ConfigError(f"need 2*k <= m, got k={self.k} m={self.m}")
        if not self.folds:
            raise ConfigError("folds must be non-empty")
        object.__setattr__(self, "folds", tuple(int(f) for f in self.folds))

    @property
    def calls_per_restart(self) -> int:
        """Proposer calls budgeted for one restart."""
        return self.n_reset * self.n_iter

    @property
    def total_calls(self) -> int:
        return self.n_restart * self.calls_per_restart


class Budget:
    """Monotone counters for API usage plus a token-price cost model."""

    def __init__(self, price_per_1k_tokens: float = 0.0015):
        self.price_per_1k_tokens = float(price_per_1k_tokens)
        self.proposer_calls = 0
        self.evaluator_calls = 0
        self.tokens_in = 0
        self.tokens_out = 0
        self._lock = threading.Lock()

    def add_proposer_call(self, tokens_in: int = 0, tokens_out: int = 0) -> None:
        if tokens_in < 0 or tokens_out < 0:
            raise ValueError("token counts never decrease")
        with self._lock:
            self.proposer_calls += 1
            self.tokens_in += tokens_in
            self.tokens_out += tokens_out

    def add_evaluator_call(self) -> None:
        with self._lock:
            self.evaluator_calls += 1

    @property
    def cost(self) -> float:
        return (self.tokens_in + self.tokens_out) / 1000.0 * self.price_per_1k_tokens

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "proposer_calls": self.proposer_calls,
                "evaluator_calls": self.evaluator_calls,
                "tokens_in": self.tokens_in,
                "tokens_out": self.tokens_out,
                "cost": self.cost,
            }


LEDGER_FIELDS = (
    "run_id",
    "restart",
    "reset",
    "iter",
    "template_text",
    "score",
    "tokens_in",
    "tokens_out",
    "origin",
    "timestamp",
    "extra",
)


@dataclass(frozen=True)
class LedgerEntry:
    """One appended record: a proposal or an initial-pool scoring event.

    ``score`` is None for events that produced no evaluator score
    (rejected proposals, generative rounds). ``reset`` is
    ``INITIAL_POOL_RESET`` for initial-pool rows, in which case ``iter``
    is the position within the sampled set.
    """

    run_id: str
    restart: int
    reset: int
    iter: int
    template_text: str
    score: Optional[float]
    tokens_in: int
    tokens_out: int
    origin: str
    timestamp: str
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.score is not None:
            if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
                raise ValueError(f"ledger score outside [0,1]: {self.score!r}")

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "run_id": self.run_id,
            "restart": self.restart,
            "reset": self.reset,
            "iter": self.iter,
            "template_text": self.template_text,
        }
        if self.score is not None:
            record["score"] = self.score
        record.update(
            tokens_in=self.tokens_in,
            tokens_out=self.tokens_out,
            origin=self.origin,
            timestamp=self.timestamp,
            extra=self.extra,
        )
        return record

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "LedgerEntry":
        return cls(
            run_id=record["run_id"],
            restart=int(record["restart"]),
            reset=int(record["reset"]),
            iter=int(record["iter"]),
            template_text=record["template_text"],
            score=record.get("score"),
            tokens_in=int(record["tokens_in"]),
            tokens_out=int(record["tokens_out"]),
            origin=record["origin"],
            timestamp=record["timestamp"],
            extra=record.get("extra", {}),
        )


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


class Ledger:
    """Append-only JSONL record of every scoring and proposal event.

    Appends are serialized with a lock so parallel restarts can share one
    ledger. Loading tolerates a truncated final line (a crash mid-write)
    by discarding it; any earlier malformed line is a hard error.
    """

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None and self.path.exists():
            self._entries = list(self._load(self.path))

    @staticmethod
    def _load(path: Path) -> Iterator[LedgerEntry]:
        raw = path.read_text(encoding="utf-8")
        if not raw:
            return
        lines = raw.split("\n")
        trailing_complete = raw.endswith("\n")
        if trailing_complete:
            lines = lines[:-1]
        for i, line in enumerate(lines):
            last = i == len(lines) - 1
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                if last and not trailing_complete:
                    return  # partial final line from an interrupted append
                raise PromptClimbError(f"corrupt ledger line {i + 1} in {path}")
            yield LedgerEntry.from_record(record)

    def append(self, entry: LedgerEntry) -> None:
        line = json.dumps(entry.to_record(), ensure_ascii=False)
        with self._lock:
            self._entries.append(entry)
            if self.path is not None:
                if self._fh is None:
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                    self._fh = self.path.open("a", encoding="utf-8")
                self._fh.write(line + "\n")
                self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        return iter(self.entries)


def best_so_far(entries: Iterable[LedgerEntry]) -> LedgerEntry:
    """Entry with the highest score; ties go to the earliest appended.

    Raises EmptyLedgerError when no entry carries a score.
    """
    best: Optional[LedgerEntry] = None
    for entry in entries:
        if entry.score is None:
            continue
        if best is None or entry.score > best.score:
            best = entry
    if best is None:
        raise EmptyLedgerError("ledger contains no scored entries")
    return best


def replay_cost(entries: Iterable[LedgerEntry], price_per_1k_tokens: float) -> float:
    """Reconstruct the token cost of a run from its ledger rows."""
    tokens = sum(e.tokens_in + e.tokens_out for e in entries)
    return tokens / 1000.0 * price_per_1k_tokens


def seeded_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Deterministic, independent random stream for (seed, label).

    The label is folded in through SHA-256 so streams do not depend on
    Python's per-process string hashing.
    """
    digest = hashlib.sha256(stream_label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng([seed % (2**63), *words])
