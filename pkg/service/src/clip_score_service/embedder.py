"""Pluggable image/text embedders behind one tiny interface.

The bundled "toy" embedder is fully deterministic and dependency-light:
words hash to fixed unit vectors and fixture images carry their embedding
in their pixels. A real CLIP checkpoint can be swapped in with
``hf:<model-or-path>`` when weights are available locally.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

TOY_DIM = 32
# weight of pairwise word-interaction terms in the toy text tower; without
# them, template words shared across class prompts cancel in the argmax
# and wording would barely move accuracy
INTERACTION_WEIGHT = 0.5
_WORD_RE = re.compile(r"[a-z0-9']+")


class Embedder(Protocol):
    model_id: str

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray: ...

    def embed_images(self, paths: Sequence[Path]) -> np.ndarray: ...


def _normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


def word_vector(word: str, dim: int = TOY_DIM) -> np.ndarray:
    """Fixed pseudo-random unit vector for a word (SHA-256 derived)."""
    digest = hashlib.sha256(word.lower().encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


class ToyEmbedder:
    """Word-hash text tower plus a pixel-decoding image tower.

    The text embedding is the word-vector sum plus weighted pairwise
    elementwise products, so a template word interacts with each class
    name differently. Fixture images are 8x4 grayscale PNGs whose 32
    pixels quantize the image's embedding into [0, 255]; decoding is
    exact enough to keep scoring deterministic across processes.
    """

    def __init__(self, dim: int = TOY_DIM):
        if dim != TOY_DIM:
            raise ValueError(f"toy embedder is fixed at {TOY_DIM} dimensions")
        self.dim = dim
        self.model_id = f"toy-{dim}"
        self._word_cache: dict[str, np.ndarray] = {}

    def _word(self, word: str) -> np.ndarray:
        if word not in self._word_cache:
            self._word_cache[word] = word_vector(word, self.dim)
        return self._word_cache[word]

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        scale = INTERACTION_WEIGHT * np.sqrt(self.dim)
        rows = []
        for text in texts:
            words = _WORD_RE.findall(text.lower())
            if not words:
                rows.append(np.zeros(self.dim))
                continue
            vectors = [self._word(w) for w in words]
            total = np.sum(vectors, axis=0)
            for i in range(len(vectors)):
                for j in range(i + 1, len(vectors)):
                    total = total + scale * vectors[i] * vectors[j]
            rows.append(total)
        return _normalize(np.asarray(rows, dtype=np.float64))

    def embed_images(self, paths: Sequence[Path]) -> np.ndarray:
        rows = []
        for path in paths:
            with Image.open(path) as img:
                pixels = np.asarray(img.convert("L"), dtype=np.float64).reshape(-1)
            if pixels.size != self.dim:
                raise ValueError(f"{path}: expected {self.dim} pixels, got {pixels.size}")
            rows.append(pixels / 255.0 * 2.0 - 1.0)
        return _normalize(np.asarray(rows, dtype=np.float64))


def encode_embedding_as_image(vector: np.ndarray, path: Path) -> None:
    """Quantize a toy embedding into an 8x4 grayscale PNG (fixture maker)."""
    if vector.size != TOY_DIM:
        raise ValueError(f"expected {TOY_DIM} values, got {vector.size}")
    scaled = np.clip((vector + 1.0) / 2.0 * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(scaled.reshape(4, 8), mode="L").save(path)


class HfClipEmbedder:
    """Real CLIP towers via transformers; requires local weights."""

    def __init__(self, model_or_path: str):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_or_path)
        self.processor = CLIPProcessor.from_pretrained(model_or_path)
        self.model.eval()
        self.model_id = model_or_path

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        with self._torch.no_grad():
            inputs = self.processor(text=list(texts), return_tensors="pt", padding=True,
                                    truncation=True)
            features = self.model.get_text_features(**inputs)
        return _normalize(features.cpu().numpy().astype(np.float64))

    def embed_images(self, paths: Sequence[Path]) -> np.ndarray:
        images = [Image.open(p).convert("RGB") for p in paths]
        with self._torch.no_grad():
            inputs = self.processor(images=images, return_tensors="pt")
            features = self.model.get_image_features(**inputs)
        for image in images:
            image.close()
        return _normalize(features.cpu().numpy().astype(np.float64))


def load_embedder(model_id: str) -> Embedder:
    """"toy" (default fixture model) or "hf:<model-or-path>"."""
    if model_id in ("toy", f"toy-{TOY_DIM}"):
        return ToyEmbedder()
    if model_id.startswith("hf:"):
        return HfClipEmbedder(model_id[3:])
    raise ValueError(f"unknown model id {model_id!r}; use 'toy' or 'hf:<model-or-path>'")
