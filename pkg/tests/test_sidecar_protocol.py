"""Integration suite for any live provider endpoint speaking the /v1 protocol.

Skipped unless DEBIAS_PROVIDER_URL is set; point it at a running inference
service to verify protocol conformance end to end. DEBIAS_PROVIDER_DIM may
override the declared embedding dimension (default 64).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from conftest import make_record
from debias_forge.providers import GenerationParams, ProviderConfig, RemoteProvider

ENDPOINT = os.environ.get("DEBIAS_PROVIDER_URL")
DECLARED_DIM = int(os.environ.get("DEBIAS_PROVIDER_DIM", "64"))

pytestmark = pytest.mark.skipif(not ENDPOINT, reason="DEBIAS_PROVIDER_URL not set")

FULL_PLAN = (
    GenerationParams(guidance_scale=7.5, num_images=10, seed=0),
    GenerationParams(guidance_scale=9.5, num_images=10, seed=1),
    GenerationParams(guidance_scale=15.0, num_images=10, seed=2),
)

IMAGE_W, IMAGE_H = 96, 72


@pytest.fixture()
def provider(tmp_path: Path) -> RemoteProvider:
    config = ProviderConfig(
        mode="remote", endpoint=ENDPOINT, timeout=120.0, retries=2, embedding_dim=DECLARED_DIM
    )
    return RemoteProvider(config, image_root=tmp_path, store_root=tmp_path / "store")


@pytest.fixture()
def scene(tmp_path: Path) -> tuple[Path, Path]:
    rng = np.random.default_rng(123)
    pixels = (rng.random((IMAGE_H, IMAGE_W, 3)) * 255).astype(np.uint8)
    image_path = tmp_path / "images" / "scene.png"
    image_path.parent.mkdir(parents=True)
    Image.fromarray(pixels).save(image_path)
    mask = np.zeros((IMAGE_H, IMAGE_W), dtype=np.uint8)
    mask[20:60, 30:70] = 255
    mask_path = tmp_path / "mask.png"
    Image.fromarray(mask, mode="L").save(mask_path)
    return image_path, mask_path


def test_health_reports_models(provider):
    body = provider.health()
    assert body["status"] == "ok"
    assert body["model_ids"]


def test_text_embedding_unit_norm_at_declared_dim(provider):
    emb = provider.request_text_embedding("A woman with a dog")
    assert emb.dim == DECLARED_DIM
    assert abs(float(np.linalg.norm(emb.values)) - 1.0) <= 1e-6
    again = provider.request_text_embedding("A woman with a dog")
    assert np.allclose(emb.values, again.values, atol=1e-9)


def test_image_embedding_unit_norm_at_declared_dim(provider, scene):
    image_path, _ = scene
    emb = provider.request_image_embedding(image_path)
    assert emb.dim == DECLARED_DIM
    assert abs(float(np.linalg.norm(emb.values)) - 1.0) <= 1e-6


def test_detections_respect_threshold(provider, scene):
    image_path, _ = scene
    detections = provider.request_detections(image_path, 0.5)
    assert detections.threshold_applied == 0.5
    assert all(d.confidence >= 0.5 for d in detections.items)
    lenient = provider.request_detections(image_path, 0.0)
    assert len(lenient.items) >= len(detections.items)


def test_inpaint_full_plan_returns_30_images_at_input_dimensions(provider, scene):
    image_path, mask_path = scene
    record = make_record("scene")
    cset = provider.request_candidates(record, "man", "A man with a dog", [mask_path], FULL_PLAN)
    assert [c.index for c in cset.candidates] == list(range(1, 31))
    assert [c.guidance_scale for c in cset.candidates] == [7.5] * 10 + [9.5] * 10 + [15.0] * 10
    for candidate in cset.candidates:
        with Image.open(candidate.image_ref) as img:
            assert img.size == (IMAGE_W, IMAGE_H)


def test_inpaint_requests_are_idempotent(provider, scene):
    image_path, mask_path = scene
    record = make_record("scene")
    plan = (GenerationParams(guidance_scale=7.5, num_images=2, seed=0),)
    first = provider.request_candidates(record, "man", "A man with a dog", [mask_path], plan)
    stamps = {c.image_ref: Path(c.image_ref).stat().st_mtime_ns for c in first.candidates}
    second = provider.request_candidates(record, "man", "A man with a dog", [mask_path], plan)
    assert second == first
    assert {c.image_ref: Path(c.image_ref).stat().st_mtime_ns for c in second.candidates} == stamps
