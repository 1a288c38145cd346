"""Deterministic desk-scale benchmark: a keyword landscape plus a matching
caption-style corpus.

The oracle rewards a handful of style words, punishes a few others, and
charges a small per-word tax, so hill climbing has real structure to find
without any network access.
"""

from __future__ import annotations

from .core import Template, seeded_rng
from .evaluator import SyntheticOracleSpec

POSITIVE_WORDS = {
    "bright": 0.25,
    "photo": 0.20,
    "clear": 0.20,
    "natural": 0.15,
    "vivid": 0.10,
    "crisp": 0.10,
}

NEGATIVE_WORDS = {
    "dark": -0.15,
    "sketch": -0.10,
    "blurry": -0.15,
    "corrupted": -0.20,
}

JUNK_WORDS = (
    "old", "small", "round", "wooden", "metal", "paper", "green", "yellow",
    "street", "indoor", "outdoor", "vintage", "modern", "simple", "plain",
    "tiny", "huge", "distant", "close", "random",
)

LENGTH_PENALTY = 0.005
NOISE_SCALE = 0.02


def bench_oracle_spec(noise_scale: float = NOISE_SCALE) -> SyntheticOracleSpec:
    return SyntheticOracleSpec(
        keyword_weights={**POSITIVE_WORDS, **NEGATIVE_WORDS},
        length_penalty=LENGTH_PENALTY,
        noise_scale=noise_scale,
    )


def bench_vocabulary() -> tuple[str, ...]:
    """Word pool for the mock proposer's single-word edits."""
    return tuple(POSITIVE_WORDS) + tuple(NEGATIVE_WORDS) + JUNK_WORDS


def bench_corpus(size: int = 240, seed: int = 0) -> list[Template]:
    """Caption-style templates mixing 0-2 signal words with junk."""
    rng = seeded_rng(seed, "bench-corpus")
    signal = list(POSITIVE_WORDS) + list(NEGATIVE_WORDS)
    seen: set[str] = set()
    corpus: list[Template] = []
    while len(corpus) < size:
        n_signal = int(rng.choice([1, 2, 2]))
        picks = []
        picks.extend(rng.choice(signal, size=n_signal, replace=False).tolist())
        n_junk = int(rng.integers(2, 4))
        picks.extend(rng.choice(JUNK_WORDS, size=n_junk, replace=False).tolist())
        rng.shuffle(picks)
        picks.insert(int(rng.integers(len(picks) + 1)), "{}")
        text = " ".join(picks)
        if text in seen:
            continue
        seen.add(text)
        corpus.append(Template(text))
    return corpus
