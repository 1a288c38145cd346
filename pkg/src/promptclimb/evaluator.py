"""Black-box scoring backends for templates.

``score(template, task)`` is the single contract; three implementations
cover the remote scoring service, a persistent memoization wrapper, and a
deterministic keyword-weighted synthetic oracle for desk-scale runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import requests

from .core import Budget, PromptClimbError, Template

logger = logging.getLogger(__name__)


class EvaluatorError(PromptClimbError):
    pass


class EvaluatorTransportError(EvaluatorError):
    """Retryable transport-level failure."""


class ScoreRangeError(EvaluatorError):
    """Backend returned a score outside [0,1]; fatal, never clamped."""


class UnknownDatasetError(EvaluatorError):
    pass


class TemplateRejectedError(EvaluatorError):
    pass


@dataclass(frozen=True)
class ClassificationTask:
    """One dataset/fold/split scoring target.

    ``class_names`` is populated where the classes are known (the scoring
    service, the synthetic fixtures); remote clients may leave it None and
    let the service own the class list.
    """

    dataset_id: str
    shots: int
    fold: int
    split: str = "train"
    class_names: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if self.class_names is not None:
            names = tuple(self.class_names)
            if not names:
                raise ValueError("class_names must be non-empty when given")
            if len(set(names)) != len(names):
                raise ValueError("class_names contains duplicates")
            object.__setattr__(self, "class_names", names)

    def cache_key(self, template_text: str) -> tuple:
        return (template_text, self.dataset_id, self.shots, self.fold, self.split)


def render_class_prompts(template: Template, class_names: Sequence[str]) -> list[str]:
    """Fill every placeholder with the class name, one prompt per class."""
    if template.placeholder_count < 1:
        raise ValueError(f"template has no placeholder: {template.text!r}")
    return [template.text.replace("{}", name) for name in class_names]


class ScoreBackend(Protocol):
    def score(self, template: Template, task: ClassificationTask) -> float: ...


@dataclass(frozen=True)
class SyntheticOracleSpec:
    """Keyword-weighted landscape standing in for real VLM accuracy.

    score = clip(sum of matched keyword weights
                 - length_penalty * word count
                 + noise_scale * u(template, task), 0, 1)
    where u is a deterministic pseudo-noise in [-1, 1].
    """

    keyword_weights: Mapping[str, float]
    length_penalty: float = 0.0
    noise_scale: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        object.__setattr__(self, "keyword_weights", dict(self.keyword_weights))

    def noise_free_optimum(self) -> float:
        """Best achievable deterministic score: keep every keyword whose
        weight beats the per-word penalty, plus the placeholder word."""
        gain = sum(max(w - self.length_penalty, 0.0) for w in self.keyword_weights.values())
        return min(max(gain - self.length_penalty, 0.0), 1.0)


_WORD_RE = re.compile(r"[a-z0-9']+")


def _content_words(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


def _unit_noise(key: str) -> float:
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    value = int.from_bytes(digest[:8], "little") / 2**64
    return 2.0 * value - 1.0


class SyntheticOracle:
    """Pure deterministic scorer: a function of (template, spec, task, seed)."""

    def __init__(self, spec: SyntheticOracleSpec, seed: int = 0):
        self.spec = spec
        self.seed = seed

    def score(self, template: Template, task: ClassificationTask) -> float:
        words = _content_words(template.text)
        base = sum(w for kw, w in self.spec.keyword_weights.items() if kw.lower() in words)
        base -= self.spec.length_penalty * template.word_count
        if self.spec.noise_scale > 0:
            key = f"{self.seed}|{task.dataset_id}|{task.shots}|{task.fold}|{task.split}|{template.text}"
            base += self.spec.noise_scale * _unit_noise(key)
        return min(max(base, 0.0), 1.0)


class RemoteScorer:
    """Client for the /v1/score wire protocol.

    Transport failures and 5xx responses are retried with exponential
    backoff; protocol-level rejections (404 unknown dataset, 422 bad
    template) and out-of-range scores are fatal.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        session: Optional[requests.Session] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.session = session or requests.Session()

    def score(self, template: Template, task: ClassificationTask) -> float:
        body = {
            "template": template.text,
            "dataset": task.dataset_id,
            "shots": task.shots,
            "fold": task.fold,
            "split": task.split,
        }
        url = f"{self.endpoint}/v1/score"
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = self.session.post(url, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = EvaluatorTransportError(f"server error {response.status_code}")
                continue
            if response.status_code == 404:
                raise UnknownDatasetError(f"unknown dataset/fold: {task.dataset_id}/{task.fold}")
            if response.status_code == 422:
                raise TemplateRejectedError(f"service rejected template: {template.text!r}")
            if response.status_code != 200:
                raise EvaluatorError(f"unexpected status {response.status_code}: {response.text[:200]}")
            payload = response.json()
            accuracy = payload["accuracy"]
            if not isinstance(accuracy, (int, float)) or not 0.0 <= accuracy <= 1.0:
                raise ScoreRangeError(f"service returned accuracy outside [0,1]: {accuracy!r}")
            return float(accuracy)
        raise EvaluatorTransportError(f"scoring failed after {self.max_retries + 1} attempts: {last_error}")


class CachedScorer:
    """Memoize scores on (template text, dataset, shots, fold, split).

    Optionally persists the cache as JSONL next to the run ledger; a
    corrupt cache file is set aside and rebuilt from empty with a warning.
    Every call, hit or miss, counts as one evaluator call in the budget
    (hits cost nothing).
    """

    def __init__(
        self,
        backend: ScoreBackend,
        path: Optional[Path] = None,
        budget: Optional[Budget] = None,
    ):
        self.backend = backend
        self.path = Path(path) if path is not None else None
        self.budget = budget
        self._cache: dict[tuple, float] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        try:
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line:
                    continue
                record = json.loads(line)
                key = (
                    record["template"],
                    record["dataset"],
                    int(record["shots"]),
                    int(record["fold"]),
                    record["split"],
                )
                self._cache[key] = float(record["score"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            logger.warning("score cache %s is corrupt (%s); rebuilding from empty", self.path, exc)
            self._cache.clear()
            corrupt = self.path.with_suffix(self.path.suffix + ".corrupt")
            self.path.replace(corrupt)

    def _persist(self, key: tuple, score: float) -> None:
        if self.path is None:
            return
        record = {
            "template": key[0],
            "dataset": key[1],
            "shots": key[2],
            "fold": key[3],
            "split": key[4],
            "score": score,
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._cache)

    def score(self, template: Template, task: ClassificationTask) -> float:
        if self.budget is not None:
            self.budget.add_evaluator_call()
        key = task.cache_key(template.text)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        value = self.backend.score(template, task)
        if not 0.0 <= value <= 1.0:
            raise ScoreRangeError(f"backend returned score outside [0,1]: {value!r}")
        with self._lock:
            if key not in self._cache:
                self._cache[key] = value
                self._persist(key, value)
        return value


def cached(backend: ScoreBackend, path: Optional[Path] = None, budget: Optional[Budget] = None) -> CachedScorer:
    return CachedScorer(backend, path=path, budget=budget)
