"""Few-shot template scoring microservice (the /v1/score protocol)."""

from .app import create_app, render_class_prompts
from .embedder import ToyEmbedder, load_embedder
from .manifest import DatasetManifest, load_manifest, load_manifest_dir

__all__ = [
    "create_app",
    "render_class_prompts",
    "ToyEmbedder",
    "load_embedder",
    "DatasetManifest",
    "load_manifest",
    "load_manifest_dir",
]
