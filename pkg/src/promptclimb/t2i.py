"""Generative optimization loops: text-to-image refinement and prompt inversion.

A multimodal critic reviews each generated image against the user's goal
and answers with a structured {feedback, new_prompt} object; the loop
regenerates with the revised prompt. Mock backends exchange bag-of-words
image descriptors so the whole loop runs deterministically on a desk.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence

from .core import PromptClimbError, seeded_rng

logger = logging.getLogger(__name__)

GENERATION_WRAPPER = "Create this exact image without any changes to the prompt: {prompt}."

T2I_FIRST_ROUND = "Create an image that shows {query}."

T2I_CRITIC_TEMPLATE = (
    "Do you think this image {image} correctly depicts {query}? "
    "If not, briefly explain why and suggest modifications. "
    "Then, help me adjust the prompt to make it correct: {prompt}. "
    "Please provide a response in a JSON file format containing: "
    '(1) "feedback" summarizing the key points, and (2) "new_prompt" with the revised text.'
)

INVERT_FIRST_ROUND = (
    "Generate a detailed text prompt to recreate the attached image {image} "
    "using an image generator."
)

INVERT_CRITIC_TEMPLATE = (
    "Compare the original image {query_image} and generated image {generated_image}, "
    "analyze their differences, and then propose changes to update the original "
    "prompt in-place: {prompt}. "
    "Please provide a response in a JSON file format containing: "
    '(1) "feedback" summarizing the key points, and (2) "new_prompt" with the revised text.'
)

CRITIC_REPAIR_MESSAGE = (
    "Your reply could not be parsed. Please provide a response in a JSON file format "
    'containing: (1) "feedback" summarizing the key points, and (2) "new_prompt" '
    "with the revised text."
)


class T2IError(PromptClimbError):
    pass


class CriticParseError(T2IError):
    pass


class GenerationRefused(T2IError):
    """Backend declined to render (content policy et al.)."""


@dataclass(frozen=True)
class ImageRef:
    """Handle for an image passed between backends by reference.

    ``payload`` is a path or URL for real images and a word-set descriptor
    for mock ones. Generated refs record the exact prompt that produced
    them.
    """

    id: str
    source: str  # generated | user_query
    payload: Any = None
    prompt: Optional[str] = None

    def __post_init__(self) -> None:
        if self.source not in ("generated", "user_query"):
            raise ValueError(f"unknown image source {self.source!r}")

    @property
    def reference(self) -> str:
        """The string substituted into critic messages."""
        if isinstance(self.payload, str):
            return self.payload
        return self.id

    @property
    def descriptor(self) -> Optional[frozenset]:
        return self.payload if isinstance(self.payload, frozenset) else None


@dataclass(frozen=True)
class CriticReply:
    feedback: str
    new_prompt: str

    def __post_init__(self) -> None:
        if not self.feedback or not self.new_prompt:
            raise ValueError("feedback and new_prompt must both be non-empty")


@dataclass(frozen=True)
class GenerativeLedgerEntry:
    round: int
    prompt: str
    image: ImageRef
    feedback: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        image: dict[str, Any] = {"id": self.image.id, "source": self.image.source,
                                 "reference": self.image.reference}
        if self.image.descriptor is not None:
            image["descriptor"] = sorted(self.image.descriptor)
        record: dict[str, Any] = {"round": self.round, "prompt": self.prompt, "image": image}
        if self.feedback is not None:
            record["feedback"] = self.feedback
        if self.extra:
            record["extra"] = self.extra
        return record


def validate_generative_ledger(entries: Sequence[GenerativeLedgerEntry]) -> None:
    for i, entry in enumerate(entries):
        if entry.round != i:
            raise T2IError(f"ledger rounds are not consecutive from 0: {[e.round for e in entries]}")


class GeneratorBackend(Protocol):
    def render(self, request: str, prompt: str, stream: Optional[str] = None) -> ImageRef: ...


class CriticBackend(Protocol):
    def review(
        self, message: str, images: Sequence[ImageRef], stream: Optional[str] = None
    ) -> str: ...


def generate_image(backend: GeneratorBackend, prompt: str, stream: Optional[str] = None) -> ImageRef:
    """Render ``prompt`` through the verbatim-generation wrapper."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    request = GENERATION_WRAPPER.format(prompt=prompt)
    ref = backend.render(request, prompt, stream=stream)
    return replace(ref, prompt=prompt)


def parse_critic_reply(raw: str) -> CriticReply:
    """Pull the first structured {feedback, new_prompt} object out of a reply.

    Critics wrap the object in prose or code fences, and prompts routinely
    contain bare ``{}``, so we scan for the first JSON object carrying both
    keys with non-empty values.
    """
    decoder = json.JSONDecoder()
    idx = 0
    while True:
        start = raw.find("{", idx)
        if start == -1:
            raise CriticParseError(f"no structured reply found in: {raw[:120]!r}")
        try:
            obj, _ = decoder.raw_decode(raw[start:])
        except json.JSONDecodeError:
            idx = start + 1
            continue
        if isinstance(obj, dict) and "feedback" in obj and "new_prompt" in obj:
            feedback = str(obj["feedback"]).strip()
            new_prompt = str(obj["new_prompt"]).strip()
            if feedback and new_prompt:
                return CriticReply(feedback=feedback, new_prompt=new_prompt)
        idx = start + 1


def customize(inverted_prompt: str, user_edit: str) -> str:
    """Append a user edit to an inverted prompt (single-space join)."""
    if not inverted_prompt.strip() or not user_edit.strip():
        raise ValueError("both the inverted prompt and the edit must be non-empty")
    return f"{inverted_prompt} {user_edit}"


def _ask_critic(
    critic: CriticBackend,
    message: str,
    images: Sequence[ImageRef],
    stream: str,
) -> Optional[CriticReply]:
    """One critique with a single repair retry; None means keep the prompt."""
    raw = critic.review(message, images, stream=stream)
    try:
        return parse_critic_reply(raw)
    except CriticParseError:
        logger.warning("critic reply unparseable, retrying once")
    raw = critic.review(message + "\n" + CRITIC_REPAIR_MESSAGE, images, stream=stream + "/repair")
    try:
        return parse_critic_reply(raw)
    except CriticParseError:
        logger.warning("critic reply unparseable after retry; keeping current prompt")
        return None


@dataclass
class GenerativeResult:
    final_prompt: str
    final_image: ImageRef
    entries: list[GenerativeLedgerEntry]


def t2i_optimize(
    generator: GeneratorBackend,
    critic: CriticBackend,
    query_text: str,
    rounds: int = 3,
    stream_prefix: str = "t2i",
) -> GenerativeResult:
    """Refine a text-to-image prompt for ``query_text``.

    Round 0 asks the generator to expand the query via the first-round
    request; each later round critiques the image and regenerates with the
    revised prompt. rounds=3 therefore costs 4 generator calls and 3
    critic calls.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not query_text.strip():
        raise ValueError("query text must be non-empty")
    prompt = T2I_FIRST_ROUND.format(query=query_text)
    image = generator.render(prompt, prompt, stream=f"{stream_prefix}/gen/0")
    image = replace(image, prompt=prompt)
    entries = [GenerativeLedgerEntry(round=0, prompt=prompt, image=image)]
    for r in range(1, rounds + 1):
        message = T2I_CRITIC_TEMPLATE.format(image=image.reference, query=query_text, prompt=prompt)
        reply = _ask_critic(critic, message, [image], stream=f"{stream_prefix}/critic/{r}")
        feedback = None
        extra: dict = {}
        if reply is not None:
            prompt = reply.new_prompt
            feedback = reply.feedback
        else:
            extra["critic_reply_unparseable"] = True
        try:
            image = generate_image(generator, prompt, stream=f"{stream_prefix}/gen/{r}")
        except GenerationRefused as exc:
            extra["generation_refused"] = str(exc)
        entries.append(
            GenerativeLedgerEntry(round=r, prompt=prompt, image=image, feedback=feedback, extra=extra)
        )
    validate_generative_ledger(entries)
    return GenerativeResult(final_prompt=prompt, final_image=image, entries=entries)


def invert_prompt(
    generator: GeneratorBackend,
    critic: CriticBackend,
    query_image: ImageRef,
    rounds: int = 3,
    stream_prefix: str = "invert",
) -> GenerativeResult:
    """Reverse-engineer a prompt that regenerates ``query_image``.

    Round 0 asks the critic for an initial prompt from the query image;
    each later round compares query and generation and revises the prompt.
    The ledger has exactly ``rounds`` entries.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    first = INVERT_FIRST_ROUND.format(image=query_image.reference)
    prompt = critic.review(first, [query_image], stream=f"{stream_prefix}/critic/0").strip()
    if not prompt:
        raise T2IError("critic returned an empty initial prompt")
    image = generate_image(generator, prompt, stream=f"{stream_prefix}/gen/0")
    entries = [GenerativeLedgerEntry(round=0, prompt=prompt, image=image)]
    for r in range(1, rounds):
        message = INVERT_CRITIC_TEMPLATE.format(
            query_image=query_image.reference,
            generated_image=image.reference,
            prompt=prompt,
        )
        reply = _ask_critic(critic, message, [query_image, image], stream=f"{stream_prefix}/critic/{r}")
        feedback = None
        extra: dict = {}
        if reply is not None:
            prompt = reply.new_prompt
            feedback = reply.feedback
        else:
            extra["critic_reply_unparseable"] = True
        try:
            image = generate_image(generator, prompt, stream=f"{stream_prefix}/gen/{r}")
        except GenerationRefused as exc:
            extra["generation_refused"] = str(exc)
        entries.append(
            GenerativeLedgerEntry(round=r, prompt=prompt, image=image, feedback=feedback, extra=extra)
        )
    validate_generative_ledger(entries)
    return GenerativeResult(final_prompt=prompt, final_image=image, entries=entries)


# --- mock backends -----------------------------------------------------------


def words_of(text: str) -> frozenset:
    return frozenset(w.strip(".,;:!?\"'").lower() for w in text.split() if w.strip(".,;:!?\"'"))


class MockGenerator:
    """Perfect bag-of-words renderer: the image is the prompt's word set."""

    def __init__(self):
        self._count = 0

    def render(self, request: str, prompt: str, stream: Optional[str] = None) -> ImageRef:
        self._count += 1
        return ImageRef(
            id=f"gen-{self._count:03d}",
            source="generated",
            payload=words_of(prompt),
            prompt=prompt,
        )


class MockCritic:
    """Set-difference critic: names what the image is missing relative to
    the goal and appends up to three missing words to the prompt."""

    def __init__(self, seed: int = 0, initial_fraction: float = 0.5):
        self.seed = seed
        self.initial_fraction = initial_fraction

    def _rng(self, stream: Optional[str]):
        return seeded_rng(self.seed, f"mock-critic/{stream or 'unlabelled'}")

    def review(
        self, message: str, images: Sequence[ImageRef], stream: Optional[str] = None
    ) -> str:
        if message.startswith("Generate a detailed text prompt"):
            # inversion round 0: describe part of the query image
            descriptor = sorted(images[0].descriptor or ())
            if not descriptor:
                return "an image"
            rng = self._rng(stream)
            count = max(1, int(len(descriptor) * self.initial_fraction))
            picks = sorted(rng.choice(descriptor, size=count, replace=False).tolist())
            return " ".join(picks)
        if message.startswith("Do you think this image"):
            target = _slice(message, "correctly depicts ", "? If not")
            prompt = _slice(message, "make it correct: ", ". Please provide")
            generated = images[-1]
        else:
            target_ref = _slice(message, "Compare the original image ", " and generated image")
            prompt = _slice(message, "prompt in-place: ", ". Please provide")
            query = next(i for i in images if i.reference == target_ref)
            generated = images[-1]
            target = " ".join(sorted(query.descriptor or ()))
        missing = sorted(words_of(target) - (generated.descriptor or frozenset()))
        if not missing:
            feedback = "The image matches the request."
            new_prompt = prompt
        else:
            additions = missing[:3]
            feedback = "The image is missing: " + ", ".join(additions) + "."
            new_prompt = prompt + " " + " ".join(additions)
        return json.dumps({"feedback": feedback, "new_prompt": new_prompt})


def _slice(text: str, start_marker: str, end_marker: str) -> str:
    start = text.index(start_marker) + len(start_marker)
    end = text.index(end_marker, start)
    return text[start:end]


class OpenAIImageGenerator:
    """Thin images-API client; returns URL-backed refs."""

    def __init__(
        self,
        model: str = "dall-e-3",
        endpoint: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
    ):
        import requests

        self.model = model
        self.endpoint = endpoint.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = requests.Session()
        self._count = 0

    def render(self, request: str, prompt: str, stream: Optional[str] = None) -> ImageRef:
        import os

        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise T2IError(f"environment variable {self.api_key_env} is not set")
        try:
            response = self.session.post(
                f"{self.endpoint}/images/generations",
                json={"model": self.model, "prompt": request, "n": 1},
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise T2IError(str(exc)) from exc
        if response.status_code == 400:
            raise GenerationRefused(response.text[:200])
        if response.status_code != 200:
            raise T2IError(f"image backend error {response.status_code}: {response.text[:200]}")
        self._count += 1
        data = response.json()["data"][0]
        return ImageRef(
            id=f"gen-{self._count:03d}",
            source="generated",
            payload=data.get("url") or data.get("b64_json", ""),
            prompt=prompt,
        )


class OpenAIVisionCritic:
    """Chat client that attaches the referenced images to the message."""

    def __init__(
        self,
        model: str = "gpt-4-1106-preview",
        endpoint: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
    ):
        import requests

        self.model = model
        self.endpoint = endpoint.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = requests.Session()

    def review(
        self, message: str, images: Sequence[ImageRef], stream: Optional[str] = None
    ) -> str:
        import os

        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise T2IError(f"environment variable {self.api_key_env} is not set")
        content: list[dict] = [{"type": "text", "text": message}]
        for image in images:
            content.append({"type": "image_url", "image_url": {"url": image.reference}})
        try:
            response = self.session.post(
                f"{self.endpoint}/chat/completions",
                json={"model": self.model, "messages": [{"role": "user", "content": content}]},
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise T2IError(str(exc)) from exc
        if response.status_code != 200:
            raise T2IError(f"critic backend error {response.status_code}: {response.text[:200]}")
        return response.json()["choices"][0]["message"]["content"]


def load_query_image(path: Path) -> ImageRef:
    """Build a user-query ImageRef from a path.

    Text/JSON files are treated as mock descriptors (a word list); anything
    else is passed by reference.
    """
    path = Path(path)
    if path.suffix in (".txt", ".json") and path.exists():
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            words = frozenset(str(w).lower() for w in json.loads(text))
        else:
            words = words_of(text)
        return ImageRef(id=path.stem, source="user_query", payload=words)
    return ImageRef(id=path.stem, source="user_query", payload=str(path))


def run_query_file(
    queries_path: Path,
    out_root: Path,
    generator: GeneratorBackend,
    critic: CriticBackend,
    rounds: int = 3,
    kinds: Sequence[str] = ("t2i", "invert"),
) -> list[Path]:
    """Process a JSONL query file; one output directory per query.

    Records look like {"type": "t2i", "text": ...} or
    {"type": "invert", "image_path": ...}; records outside ``kinds`` are
    skipped.
    """
    out_root = Path(out_root)
    out_dirs = []
    lines = [l for l in Path(queries_path).read_text(encoding="utf-8").splitlines() if l.strip()]
    for i, line in enumerate(lines):
        record = json.loads(line)
        kind = record["type"]
        if kind not in ("t2i", "invert"):
            raise T2IError(f"unknown query type {kind!r}")
        if kind not in kinds:
            continue
        qid = f"q{i:03d}_{kind}"
        if kind == "t2i":
            result = t2i_optimize(generator, critic, record["text"], rounds, stream_prefix=qid)
        else:
            query_image = load_query_image(Path(record["image_path"]))
            result = invert_prompt(generator, critic, query_image, rounds, stream_prefix=qid)
        out_dir = out_root / qid
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "ledger.jsonl").open("w", encoding="utf-8") as fh:
            for entry in result.entries:
                fh.write(json.dumps(entry.to_record(), ensure_ascii=False) + "\n")
        (out_dir / "final_prompt.txt").write_text(result.final_prompt + "\n", encoding="utf-8")
        (out_dir / "final_image.txt").write_text(result.final_image.reference + "\n", encoding="utf-8")
        out_dirs.append(out_dir)
    return out_dirs
