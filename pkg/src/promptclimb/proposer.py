"""Candidate generation: conversation building, chat backends, reply parsing.

The message text shown to the chat model is fixed verbatim (golden files
under tests/golden pin every byte); only the template lists and feedback
percentages are substituted.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import requests

from .core import (
    CONV_MULTI_TURN,
    CONVERSATION_MODES,
    FEEDBACK_MODES,
    FEEDBACK_P_PLUS_N,
    PromptClimbError,
    ScoredTemplate,
    Template,
    seeded_rng,
)

logger = logging.getLogger(__name__)

WORD_LIMIT = 15  # advisory given to the model, not a hard contract

P_PLUS_N_TEMPLATE = (
    "Hi ChatGPT, assume you are a pattern learner. I have two lists of CLIP templates: "
    "one with good templates and the other with bad templates. There are latent patterns "
    "that make a template good or bad. Based on these patterns, give me a better template "
    "for image classification while avoiding worse template.\n"
    "Here is the list of good templates:\n"
    "{good_list}\n"
    "Here is the list of bad templates:\n"
    "{bad_list}\n"
    "Here are my requirements:\n"
    "- Please only reply with the template.\n"
    "- The template should be fewer than 15 words.\n"
    "- The template should have a similar structure to the above templates."
)

P_ONLY_TEMPLATE = (
    "Hi ChatGPT, assume you are a pattern learner. I have one list of CLIP templates: "
    "one with good templates. There are latent patterns that make a template good. "
    "Based on these patterns, give me a better template for image classification.\n"
    "Here is the list of good templates:\n"
    "{good_list}\n"
    "Here are my requirements:\n"
    "- Please only reply with the template.\n"
    "- The template should be fewer than 15 words.\n"
    "- The template should have a similar structure to the above templates."
)

POSITIVE_RESPONSE = (
    'The performance of the template "{template}" improves to {pct}%. '
    "Please give me a better template."
)

NEGATIVE_RESPONSE = (
    'The performance of the template "{template}" drops to {pct}%. '
    "Please give me a better template."
)

APE_TEMPLATE = (
    "Hi ChatGPT, generate a single variation of the following template "
    "while keeping the semantic meaning:\n"
    "- {template}\n"
    "Here is my requirement:\n"
    "- Please return a single template starting with '-'"
)

REPAIR_MESSAGE = (
    "Your reply was not a usable template. Please only reply with the template, "
    'and make sure it contains "{}" as the placeholder for the class name.'
)

_GOOD_HEADER = "Here is the list of good templates:"
_BAD_HEADER = "Here is the list of bad templates:"
_REQ_HEADER = "Here are my requirements:"
_APE_HEADER = "generate a single variation of the following template"


class ProposerError(PromptClimbError):
    pass


class KMismatchError(ProposerError):
    pass


class ParseRejectError(ProposerError):
    """Reply did not contain a usable template."""


class ProposerTransportError(ProposerError):
    """Retryable transport failure talking to the chat backend."""


class ProposerUnavailable(ProposerError):
    """Transport kept failing; the caller should skip this iteration."""


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")


MessageSequence = list[Message]


def validate_messages(messages: Sequence[Message]) -> None:
    if not messages:
        raise ProposerError("message sequence is empty")
    if messages[0].role == "assistant":
        raise ProposerError("first message must be user or system")


@dataclass(frozen=True)
class ProposalOutcome:
    """What happened to the previous proposal, for multi-turn feedback."""

    template_text: str
    score: float
    improved: bool


@dataclass(frozen=True)
class FeedbackContext:
    """Scored extremes shown to the proposer plus conversation state.

    In p_plus_n mode ``top`` and ``bottom`` each hold k entries; in p_only
    mode ``top`` holds 2k entries and ``bottom`` is empty.
    """

    top: tuple[ScoredTemplate, ...]
    bottom: tuple[ScoredTemplate, ...]
    k: int
    feedback_mode: str
    conversation_mode: str
    last_proposal: Optional[ProposalOutcome] = None
    history: tuple[tuple[str, Optional[ProposalOutcome]], ...] = ()

    def __post_init__(self) -> None:
        if self.feedback_mode not in FEEDBACK_MODES:
            raise ValueError(f"unknown feedback mode {self.feedback_mode!r}")
        if self.conversation_mode not in CONVERSATION_MODES:
            raise ValueError(f"unknown conversation mode {self.conversation_mode!r}")
        if self.feedback_mode == FEEDBACK_P_PLUS_N:
            if len(self.top) != self.k or len(self.bottom) != self.k:
                raise KMismatchError(
                    f"p_plus_n needs |top|=|bottom|=k={self.k}, "
                    f"got {len(self.top)}/{len(self.bottom)}"
                )
        else:
            if len(self.top) != 2 * self.k or self.bottom:
                raise KMismatchError(
                    f"p_only needs |top|=2k={2 * self.k} and no bottom, "
                    f"got {len(self.top)}/{len(self.bottom)}"
                )
        overlap = {t.text for t in self.top} & {b.text for b in self.bottom}
        if overlap:
            raise ValueError(f"top and bottom lists overlap: {sorted(overlap)}")


def _bullet_list(entries: Sequence[ScoredTemplate]) -> str:
    return "\n".join(f"- {entry.text}" for entry in entries)


def feedback_response(outcome: ProposalOutcome) -> str:
    template = POSITIVE_RESPONSE if outcome.improved else NEGATIVE_RESPONSE
    return template.format(template=outcome.template_text, pct=f"{outcome.score * 100:.2f}")


def build_feedback_messages(context: FeedbackContext, max_history_pairs: int = 50) -> MessageSequence:
    """Render the conversation shown to the proposer.

    iterative / non_iterative: a single fresh user message (the caller
    decides whether the extremes are current or frozen). multi_turn: the
    opening message plus each prior reply and its performance response;
    exchanges older than ``max_history_pairs`` are dropped, oldest first.
    """
    if context.feedback_mode == FEEDBACK_P_PLUS_N:
        base = P_PLUS_N_TEMPLATE.format(
            good_list=_bullet_list(context.top),
            bad_list=_bullet_list(context.bottom),
        )
    else:
        base = P_ONLY_TEMPLATE.format(good_list=_bullet_list(context.top))
    messages: MessageSequence = [Message("user", base)]
    if context.conversation_mode != CONV_MULTI_TURN:
        return messages
    pairs = context.history
    if not pairs and context.last_proposal is not None:
        pairs = ((context.last_proposal.template_text, context.last_proposal),)
    for reply_text, outcome in pairs[-max_history_pairs:]:
        messages.append(Message("assistant", reply_text))
        if outcome is not None:
            messages.append(Message("user", feedback_response(outcome)))
    return messages


def build_ape_message(template: Template) -> MessageSequence:
    """Single paraphrase request used by the iterative-APE baseline."""
    return [Message("user", APE_TEMPLATE.format(template=template.text))]


_QUOTE_PAIRS = (('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’"))


def parse_reply(raw: str) -> Template:
    """Extract the template from a raw chat reply.

    Strips surrounding whitespace, one wrapping quote pair, and a leading
    "- ". A reply without a placeholder is rejected; one longer than the
    15-word advisory is accepted with a warning.
    """
    text = raw.strip()
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise ParseRejectError("empty reply")
    text = lines[0]
    if text.startswith("- "):
        text = text[2:].strip()
    for opening, closing in _QUOTE_PAIRS:
        if len(text) >= 2 and text.startswith(opening) and text.endswith(closing):
            text = text[1:-1].strip()
            break
    if "{}" not in text:
        raise ParseRejectError(f"reply has no {{}} placeholder: {raw!r}")
    template = Template(text)
    if template.word_count > WORD_LIMIT:
        logger.warning("proposal exceeds %d-word advisory: %r", WORD_LIMIT, text)
    return template


@dataclass(frozen=True)
class ChatReply:
    text: str
    tokens_in: int
    tokens_out: int


class ChatBackend(Protocol):
    def complete(
        self, messages: MessageSequence, temperature: float, stream: Optional[str] = None
    ) -> ChatReply: ...


def propose(
    backend: ChatBackend,
    messages: MessageSequence,
    temperature: float,
    budget=None,
    stream: Optional[str] = None,
    max_retries: int = 2,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatReply:
    """One proposal attempt with bounded transport retries.

    Every attempt is charged to the budget even when it fails; after the
    retries run out a ProposerUnavailable tells the caller to skip the
    iteration.
    """
    validate_messages(messages)
    last_error: Optional[Exception] = None
    for attempt in range(max_retries + 1):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            reply = backend.complete(messages, temperature, stream=stream)
        except ProposerTransportError as exc:
            if budget is not None:
                budget.add_proposer_call()
            last_error = exc
            continue
        if budget is not None:
            budget.add_proposer_call(reply.tokens_in, reply.tokens_out)
        return reply
    raise ProposerUnavailable(f"proposer failed after {max_retries + 1} attempts: {last_error}")


class OpenAIChatBackend:
    """OpenAI-compatible chat-completions client.

    The API key is read from an environment variable so it never lands in
    config files or ledgers.
    """

    def __init__(
        self,
        model: str,
        endpoint: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        session: Optional[requests.Session] = None,
    ):
        self.model = model
        self.endpoint = endpoint.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(
        self, messages: MessageSequence, temperature: float, stream: Optional[str] = None
    ) -> ChatReply:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise ProposerError(f"environment variable {self.api_key_env} is not set")
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": temperature,
        }
        try:
            response = self.session.post(
                f"{self.endpoint}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProposerTransportError(str(exc)) from exc
        if response.status_code in (429,) or response.status_code >= 500:
            raise ProposerTransportError(f"status {response.status_code}")
        if response.status_code != 200:
            raise ProposerError(f"chat backend error {response.status_code}: {response.text[:200]}")
        payload = response.json()
        usage = payload.get("usage", {})
        return ChatReply(
            text=payload["choices"][0]["message"]["content"],
            tokens_in=int(usage.get("prompt_tokens", 0)),
            tokens_out=int(usage.get("completion_tokens", 0)),
        )


# --- deterministic mock backend ---------------------------------------------

DEFAULT_MOCK_VOCAB = (
    "photo", "image", "picture", "bright", "clear", "natural", "vivid", "crisp",
    "detailed", "simple", "plain", "small", "large", "colorful", "closeup", "wide",
)


def _word_counts(texts: Sequence[str]) -> Counter:
    counts: Counter = Counter()
    for text in texts:
        counts.update(w for w in text.split() if w != "{}")
    return counts


def _compose_from_gradient(top_texts: Sequence[str], bottom_texts: Sequence[str], rng) -> str:
    """Build a candidate from words over-represented in top vs bottom.

    Starts from a top template (biased toward the best one), drops words
    the bottom list over-represents, prunes some signal-free words, and
    splices in a few of the strongest top-side words.
    """
    top_counts = _word_counts(top_texts)
    bot_counts = _word_counts(bottom_texts)
    overrep = sorted(w for w in top_counts if top_counts[w] > bot_counts.get(w, 0))
    bad = {w for w in bot_counts if bot_counts[w] > top_counts.get(w, 0)}
    base_index = 0 if rng.random() < 0.5 else int(rng.integers(len(top_texts)))
    base = top_texts[base_index]
    words = []
    for word in base.split():
        if word != "{}" and word in bad:
            continue
        if word != "{}" and word not in overrep and rng.random() < 0.35:
            continue  # weak word, prune sometimes
        words.append(word)
    candidates = [w for w in overrep if w not in words]
    rng.shuffle(candidates)
    for word in candidates[: int(rng.integers(1, 3))]:
        words.insert(int(rng.integers(len(words) + 1)), word)
    if "{}" not in words:
        words.insert(int(rng.integers(len(words) + 1)), "{}")
    while len(words) > WORD_LIMIT - 1:
        extras = [w for w in words if w != "{}" and w not in overrep]
        if not extras:
            break
        words.remove(extras[0])
    return " ".join(words)


def _mutate_single_word(base_text: str, rng, vocabulary: Sequence[str]) -> str:
    """Swap, insert, or delete one word; the placeholder is untouchable."""
    words = base_text.split()
    editable = [i for i, w in enumerate(words) if w != "{}"]
    op = ("swap", "insert", "delete")[int(rng.integers(3))]
    if op == "delete" and len(editable) >= 1 and len(words) > 1:
        words.pop(editable[int(rng.integers(len(editable)))])
    elif op == "swap" and editable:
        words[editable[int(rng.integers(len(editable)))]] = str(
            vocabulary[int(rng.integers(len(vocabulary)))]
        )
    else:
        words.insert(
            int(rng.integers(len(words) + 1)),
            str(vocabulary[int(rng.integers(len(vocabulary)))]),
        )
    return " ".join(words)


def mock_propose(context: FeedbackContext, rng, vocabulary: Sequence[str] = DEFAULT_MOCK_VOCAB) -> str:
    """Deterministic stand-in for the chat model.

    With a bottom list present it composes from the implicit gradient
    between the two lists; in p_only mode it takes one random edit step
    from a top template.
    """
    top_texts = [entry.text for entry in context.top]
    if context.bottom:
        return _compose_from_gradient(top_texts, [e.text for e in context.bottom], rng)
    return _mutate_single_word(top_texts[int(rng.integers(len(top_texts)))], rng, vocabulary)


def _extract_bullets(lines: list[str], header: str, stop_headers: tuple[str, ...]) -> list[str]:
    bullets: list[str] = []
    collecting = False
    for line in lines:
        if line == header:
            collecting = True
            continue
        if collecting:
            if line in stop_headers:
                break
            if line.startswith("- "):
                bullets.append(line[2:])
    return bullets


class MockChatBackend:
    """Parses its own rendered prompts back into lists and answers like
    a cooperative model would: a bare template, or "- template" for the
    paraphrase request.

    ``stream`` labels make replies a pure function of (seed, stream) so
    resumed and parallel runs reproduce exactly.
    """

    def __init__(self, seed: int = 0, vocabulary: Sequence[str] = DEFAULT_MOCK_VOCAB):
        self.seed = seed
        self.vocabulary = tuple(vocabulary)
        self._fallback_calls = 0

    def _rng(self, stream: Optional[str]):
        if stream is None:
            self._fallback_calls += 1
            stream = f"unlabelled-{self._fallback_calls}"
        return seeded_rng(self.seed, f"mock-chat/{stream}")

    def complete(
        self, messages: MessageSequence, temperature: float, stream: Optional[str] = None
    ) -> ChatReply:
        rng = self._rng(stream)
        tokens_in = sum(len(m.content.split()) for m in messages)
        reply_text: Optional[str] = None
        for message in reversed(messages):
            if message.role != "user":
                continue
            lines = message.content.split("\n")
            if _APE_HEADER in message.content:
                target = _extract_bullets(lines, lines[0], (_REQ_HEADER,)) or [
                    line[2:] for line in lines if line.startswith("- ")
                ]
                mutated = _mutate_single_word(target[0], rng, self.vocabulary)
                reply_text = f"- {mutated}"
                break
            if _GOOD_HEADER in message.content:
                good = _extract_bullets(lines, _GOOD_HEADER, (_BAD_HEADER, _REQ_HEADER))
                bad = _extract_bullets(lines, _BAD_HEADER, (_REQ_HEADER,))
                if bad:
                    reply_text = _compose_from_gradient(good, bad, rng)
                else:
                    reply_text = _mutate_single_word(good[int(rng.integers(len(good)))], rng, self.vocabulary)
                break
        if reply_text is None:
            raise ProposerError("mock backend found no template lists in the conversation")
        return ChatReply(text=reply_text, tokens_in=tokens_in, tokens_out=len(reply_text.split()))


# --- transcript record / replay ----------------------------------------------


def _transcript_key(messages: MessageSequence, temperature: float) -> str:
    canonical = json.dumps(
        [[m.role, m.content] for m in messages] + [temperature], ensure_ascii=False
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RecordingBackend:
    """Wraps a live backend and appends every exchange to a fixture file."""

    def __init__(self, inner: ChatBackend, path: Path):
        self.inner = inner
        self.path = Path(path)

    def complete(
        self, messages: MessageSequence, temperature: float, stream: Optional[str] = None
    ) -> ChatReply:
        reply = self.inner.complete(messages, temperature, stream=stream)
        record = {
            "key": _transcript_key(messages, temperature),
            "messages": [[m.role, m.content] for m in messages],
            "temperature": temperature,
            "reply": reply.text,
            "tokens_in": reply.tokens_in,
            "tokens_out": reply.tokens_out,
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return reply


class ReplayBackend:
    """Replays a recorded transcript; repeated identical requests are
    answered in recording order."""

    def __init__(self, path: Path):
        self._replies: dict[str, list[ChatReply]] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            record = json.loads(line)
            reply = ChatReply(record["reply"], record["tokens_in"], record["tokens_out"])
            self._replies.setdefault(record["key"], []).append(reply)

    def complete(
        self, messages: MessageSequence, temperature: float, stream: Optional[str] = None
    ) -> ChatReply:
        key = _transcript_key(messages, temperature)
        queue = self._replies.get(key)
        if not queue:
            raise ProposerError("no recorded reply for this conversation")
        return queue.pop(0)
