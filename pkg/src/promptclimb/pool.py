"""Build the initial template corpus from annotated captions.

Each caption arrives with precomputed noun-phrase character spans (any
external tagger can produce them; a naive fallback chunker is included
for convenience). One template is emitted per span by swapping the span
for the ``{}`` placeholder.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .core import PLACEHOLDER, PromptClimbError, Template

# Non-placeholder content shorter than this is considered degenerate and
# is rejected when building the corpus.
MIN_CONTENT_CHARS = 3


class AnnotationError(PromptClimbError):
    pass


class CorpusTooSmallError(PromptClimbError):
    pass


@dataclass(frozen=True)
class AnnotatedCaption:
    """A caption plus the character spans of its noun phrases."""

    caption: str
    noun_phrase_spans: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        spans = tuple((int(s), int(e)) for s, e in self.noun_phrase_spans)
        object.__setattr__(self, "noun_phrase_spans", spans)
        prev_end = 0
        for start, end in sorted(spans):
            if start < 0 or end > len(self.caption) or start >= end:
                raise AnnotationError(f"span ({start},{end}) out of bounds for caption {self.caption!r}")
            if start < prev_end:
                raise AnnotationError(f"overlapping spans in caption {self.caption!r}")
            if not self.caption[start:end].strip():
                raise AnnotationError(f"span ({start},{end}) covers only whitespace in {self.caption!r}")
            prev_end = end


def _substitute(caption: str, start: int, end: int) -> str:
    left = caption[:start]
    right = caption[end:]
    # collapse a doubled space created at the seam when the span carried
    # its own surrounding whitespace
    if left.endswith(" ") and right.startswith(" "):
        right = right[1:]
    return (left + PLACEHOLDER + right).strip()


def templatize(annotated: AnnotatedCaption) -> list[Template]:
    """One template per span, in span order; zero spans yield an empty list."""
    templates = []
    for start, end in annotated.noun_phrase_spans:
        templates.append(Template(_substitute(annotated.caption, start, end)))
    return templates


def template_content_chars(template: Template) -> int:
    """Characters of real content once placeholders and spacing are removed."""
    stripped = template.text.replace(PLACEHOLDER, "")
    return len(re.sub(r"\s", "", stripped))


def admissible(template: Template) -> bool:
    return template.placeholder_count >= 1 and template_content_chars(template) >= MIN_CONTENT_CHARS


@dataclass
class BuildReport:
    captions_read: int = 0
    templates_emitted: int = 0
    duplicates_dropped: int = 0
    malformed_skipped: int = 0
    degenerate_rejected: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def parse_annotation_line(line: str) -> AnnotatedCaption:
    record = json.loads(line)
    return AnnotatedCaption(
        caption=record["caption"],
        noun_phrase_spans=tuple((s, e) for s, e in record["noun_phrases"]),
    )


def read_annotations(stream: Iterable[str]) -> Iterator[Union[AnnotatedCaption, Exception]]:
    """Yield parsed records; malformed lines come back as the exception."""
    for line in stream:
        line = line.strip()
        if not line:
            continue
        try:
            yield parse_annotation_line(line)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AnnotationError) as exc:
            yield exc


def build_pool(
    annotation_stream: Iterable[str],
    out_path: Path,
    max_captions: Optional[int] = None,
) -> BuildReport:
    """Stream captions into a deduplicated template corpus file.

    Malformed records are counted and skipped, never fatal. Dedup is
    case-sensitive. Returns counts of everything seen and dropped.
    """
    report = BuildReport()
    seen: set[str] = set()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as out:
        for item in read_annotations(annotation_stream):
            if max_captions is not None and report.captions_read >= max_captions:
                break
            if isinstance(item, Exception):
                report.malformed_skipped += 1
                continue
            report.captions_read += 1
            try:
                templates = templatize(item)
            except ValueError:
                report.malformed_skipped += 1
                continue
            for template in templates:
                if not admissible(template):
                    report.degenerate_rejected += 1
                    continue
                if template.text in seen:
                    report.duplicates_dropped += 1
                    continue
                seen.add(template.text)
                out.write(template.text + "\n")
                report.templates_emitted += 1
    return report


def load_corpus(path: Path) -> list[Template]:
    """Read a one-template-per-line corpus file."""
    templates = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            templates.append(Template(line))
    return templates


def sample_initial(corpus: Sequence[Template], m: int, rng: np.random.Generator) -> list[Template]:
    """Draw m distinct templates uniformly without replacement."""
    if len(corpus) < m:
        raise CorpusTooSmallError(f"corpus has {len(corpus)} templates but m={m} requested")
    idx = rng.choice(len(corpus), size=m, replace=False)
    return [corpus[i] for i in idx]


# --- naive fallback chunker ------------------------------------------------
# Convenience only: approximates noun phrases as article/possessive-led
# token runs. Use a real part-of-speech tagger for serious corpora.

_LEADERS = {
    "a", "an", "the",
    "my", "your", "his", "her", "its", "our", "their",
    "this", "that", "these", "those", "some",
}
_MAX_RUN_TOKENS = 3
_TOKEN_RE = re.compile(r"[A-Za-z][A-Za-z'-]*")


def naive_noun_spans(caption: str) -> list[tuple[int, int]]:
    tokens = [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(caption)]
    spans: list[tuple[int, int]] = []
    i = 0
    while i < len(tokens):
        word, start, _ = tokens[i]
        if word.lower() in _LEADERS:
            j = i + 1
            run_end = None
            while j < len(tokens) and j - i <= _MAX_RUN_TOKENS:
                next_word, next_start, next_end = tokens[j]
                if next_word.lower() in _LEADERS:
                    break
                # stop a run at punctuation between tokens
                gap = caption[tokens[j - 1][2] : next_start]
                if gap.strip(" ") != "":
                    break
                run_end = next_end
                j += 1
            if run_end is not None:
                spans.append((start, run_end))
                i = j
                continue
        i += 1
    return spans


def annotate_naively(caption: str) -> AnnotatedCaption:
    return AnnotatedCaption(caption=caption, noun_phrase_spans=tuple(naive_noun_spans(caption)))
