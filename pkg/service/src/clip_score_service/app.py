"""FastAPI application serving the /v1/score wire protocol.

Image embeddings are computed once per (dataset, fold, split) at startup;
each request only runs the text tower over the rendered class prompts,
which is what keeps thousands of scoring calls per search affordable.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .embedder import Embedder, load_embedder
from .manifest import DatasetManifest, load_manifest_dir


class ScoreRequest(BaseModel):
    template: str
    dataset: str
    shots: int
    fold: int
    split: Literal["train", "test"]


class ScoreResponse(BaseModel):
    accuracy: float
    num_images: int
    num_classes: int


def render_class_prompts(template: str, class_names) -> list[str]:
    """Every placeholder is filled with the class name (same rule as the
    optimizer client)."""
    return [template.replace("{}", name) for name in class_names]


class ScoringIndex:
    """Immutable per-split image embeddings plus the text tower."""

    def __init__(self, manifests: dict[str, DatasetManifest], embedder: Embedder):
        self.manifests = manifests
        self.embedder = embedder
        self._images: dict[tuple[str, int, str], tuple[np.ndarray, np.ndarray]] = {}
        for dataset_id, manifest in manifests.items():
            for fold in manifest.folds:
                for split in ("train", "test"):
                    images = manifest.images_for(fold, split)
                    if not images:
                        continue
                    matrix = embedder.embed_images([img.path for img in images])
                    labels = np.array([img.label for img in images])
                    self._images[(dataset_id, fold, split)] = (matrix, labels)

    def has_fold(self, dataset: str, fold: int) -> bool:
        return dataset in self.manifests and fold in self.manifests[dataset].folds

    def has_split(self, dataset: str, fold: int, split: str) -> bool:
        return (dataset, fold, split) in self._images

    def score(self, template: str, dataset: str, fold: int, split: str) -> ScoreResponse:
        manifest = self.manifests[dataset]
        matrix, labels = self._images[(dataset, fold, split)]
        prompts = render_class_prompts(template, manifest.class_names)
        text = self.embedder.embed_texts(prompts)
        predictions = np.argmax(matrix @ text.T, axis=1)
        accuracy = float(np.mean(predictions == labels))
        return ScoreResponse(
            accuracy=accuracy,
            num_images=int(labels.size),
            num_classes=len(manifest.class_names),
        )


def create_app(manifest_dir: Path, model_id: str = "toy") -> FastAPI:
    embedder = load_embedder(model_id)
    manifests = load_manifest_dir(Path(manifest_dir))
    index = ScoringIndex(manifests, embedder)
    app = FastAPI(title="clip-score-service")

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.post("/v1/score", response_model=ScoreResponse)
    async def score(body: ScoreRequest):
        if "{}" not in body.template:
            return JSONResponse(
                status_code=422,
                content={"detail": "template must contain the {} class placeholder"},
            )
        if not index.has_fold(body.dataset, body.fold):
            return JSONResponse(
                status_code=404,
                content={"detail": f"unknown dataset/fold {body.dataset}/{body.fold}"},
            )
        if not index.has_split(body.dataset, body.fold, body.split):
            return JSONResponse(
                status_code=404,
                content={"detail": f"no {body.split} images for {body.dataset}/{body.fold}"},
            )
        return index.score(body.template, body.dataset, body.fold, body.split)

    @app.get("/healthz")
    async def healthz():
        return {"model_id": embedder.model_id, "datasets": sorted(manifests)}

    return app
