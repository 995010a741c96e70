"""Generation/embedding/detection providers.

Two interchangeable providers sit behind one interface: a deterministic
fixture provider for fully offline runs (pre-rendered candidates, hash-derived
pseudo-embeddings, sidecar detection files) and an HTTP client for the model
sidecar speaking the /v1 wire protocol.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import FixtureMissError, ProviderError
from .scoring import Detection, DetectionSet, Embedding, ImageBuffer

logger = logging.getLogger(__name__)

DEFAULT_EMBEDDING_DIM = 64

ENDPOINT_ENV_VAR = "DEBIAS_PROVIDER_URL"


@dataclass(frozen=True)
class GenerationParams:
    guidance_scale: float
    num_images: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.guidance_scale <= 0:
            raise ValueError(f"guidance_scale must be positive, got {self.guidance_scale}")
        if self.num_images < 1:
            raise ValueError(f"num_images must be >= 1, got {self.num_images}")


# 10 images at each of three guidance scales: m = 30 candidates per pair.
DEFAULT_PLAN: tuple[GenerationParams, ...] = (
    GenerationParams(guidance_scale=7.5, num_images=10, seed=0),
    GenerationParams(guidance_scale=9.5, num_images=10, seed=1),
    GenerationParams(guidance_scale=15.0, num_images=10, seed=2),
)


@dataclass(frozen=True)
class Candidate:
    """One inpainted variant, traceable to its generation parameters."""

    index: int
    image_ref: str
    guidance_scale: float
    image_slot: int
    seed: int


@dataclass(frozen=True)
class CandidateSet:
    """The m generated inpaintings for one (record, target group) pair."""

    record_id: str
    target_group: str
    prompt: str
    candidates: tuple[Candidate, ...]
    request_hash: str

    def __post_init__(self) -> None:
        indices = [c.index for c in self.candidates]
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError(f"candidate indices must be 1..m in order, got {indices}")


@dataclass(frozen=True)
class ProviderConfig:
    """Provider selection plus transport/fixture settings."""

    mode: str
    endpoint: str | None = None
    fixture_root: Path | None = None
    timeout: float = 30.0
    retries: int = 3
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    concurrency: int = 1

    def __post_init__(self) -> None:
        if self.mode not in ("fixture", "remote"):
            raise ValueError(f"provider mode must be fixture|remote, got {self.mode!r}")
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {self.concurrency}")
        if self.mode == "fixture":
            if self.fixture_root is None or self.endpoint is not None:
                raise ValueError("fixture mode requires fixture_root and no endpoint")
            object.__setattr__(self, "fixture_root", Path(self.fixture_root))
        else:
            if not self.endpoint or self.fixture_root is not None:
                raise ValueError("remote mode requires endpoint and no fixture_root")


def compute_request_hash(
    record_id: str,
    target_group: str,
    prompt: str,
    mask_digests: Sequence[str],
    plan: Sequence[GenerationParams],
) -> str:
    payload = json.dumps(
        {
            "record_id": record_id,
            "target_group": target_group,
            "prompt": prompt,
            "masks": list(mask_digests),
            "plan": [[p.guidance_scale, p.num_images, p.seed] for p in plan],
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _file_digest(path: Path) -> str:
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError as exc:
        raise ProviderError(f"cannot read mask raster {path}: {exc}", code="io") from exc


def pseudo_embedding(content: bytes, domain: str, dim: int) -> Embedding:
    """Expand a content digest into a unit vector, stable across platforms."""
    digest = hashlib.sha256(domain.encode("ascii") + b":" + content).digest()
    raw = bytearray()
    counter = 0
    while len(raw) < dim * 8:
        raw.extend(hashlib.sha256(digest + counter.to_bytes(4, "big")).digest())
        counter += 1
    ints = np.frombuffer(bytes(raw[: dim * 8]), dtype=">u8").astype(np.float64)
    values = ints / 2**63 - 1.0
    norm = float(np.linalg.norm(values))
    if norm < 1e-12:  # pragma: no cover - measure-zero digest
        values = np.zeros(dim)
        values[0] = 1.0
        norm = 1.0
    return Embedding(values=values / norm, normalized=True)


def load_image_buffer(path: str | Path) -> ImageBuffer:
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise ProviderError(f"cannot read image {path}: {exc}", code="io") from exc
    return ImageBuffer.from_array(rgb)


def _expand_plan(plan: Sequence[GenerationParams]) -> list[tuple[int, GenerationParams, int]]:
    """Flatten a plan into (candidate_index, params, image_slot) triples."""
    out = []
    index = 1
    for params in plan:
        for slot in range(1, params.num_images + 1):
            out.append((index, params, slot))
            index += 1
    return out


class FixtureProvider:
    """Deterministic offline provider backed by a fixture directory.

    Layout under ``fixture_root``:
      candidates/<record_id>/<target_group>/*.png   pre-rendered inpaintings
      <any image>.detections.json                   sidecar detection files
    """

    def __init__(self, config: ProviderConfig, image_root: Path | None = None) -> None:
        if config.mode != "fixture":
            raise ValueError("FixtureProvider requires fixture mode config")
        self.config = config
        self.image_root = image_root

    def _resolve(self, ref: str | Path) -> Path:
        p = Path(ref)
        if p.is_absolute() or self.image_root is None:
            return p
        return self.image_root / p

    def request_candidates(
        self,
        record,
        target_group: str,
        prompt: str,
        masks: Sequence[str | Path],
        plan: Sequence[GenerationParams] = DEFAULT_PLAN,
    ) -> CandidateSet:
        slots = _expand_plan(plan)
        directory = self.config.fixture_root / "candidates" / record.record_id / target_group
        files = sorted(directory.glob("*.png"))
        if len(files) != len(slots):
            raise FixtureMissError(
                f"fixture {directory} holds {len(files)} candidate(s), plan needs {len(slots)}",
                code="fixture_miss",
            )
        mask_digests = [_file_digest(self._resolve(m)) for m in masks]
        request_hash = compute_request_hash(record.record_id, target_group, prompt, mask_digests, plan)
        candidates = tuple(
            Candidate(
                index=index,
                image_ref=str(path),
                guidance_scale=params.guidance_scale,
                image_slot=slot,
                seed=params.seed,
            )
            for (index, params, slot), path in zip(slots, files)
        )
        return CandidateSet(
            record_id=record.record_id,
            target_group=target_group,
            prompt=prompt,
            candidates=candidates,
            request_hash=request_hash,
        )

    def request_image_embedding(self, image_ref: str | Path) -> Embedding:
        path = self._resolve(image_ref)
        try:
            content = path.read_bytes()
        except OSError as exc:
            raise ProviderError(f"cannot read image {path}: {exc}", code="io") from exc
        return pseudo_embedding(content, "image", self.config.embedding_dim)

    def request_text_embedding(self, text: str) -> Embedding:
        return pseudo_embedding(text.encode("utf-8"), "text", self.config.embedding_dim)

    def request_detections(self, image_ref: str | Path, threshold: float) -> DetectionSet:
        path = self._resolve(image_ref)
        sidecar = path.with_name(path.name + ".detections.json")
        if not sidecar.exists():
            raise FixtureMissError(f"no detection annotations for {path}", code="fixture_miss")
        raw = json.loads(sidecar.read_text(encoding="utf-8"))
        items = tuple(
            Detection(label=d["label"], confidence=float(d["confidence"]))
            for d in raw
            if float(d["confidence"]) >= threshold
        )
        return DetectionSet(items=items, threshold_applied=threshold)

    def load_image(self, image_ref: str | Path) -> ImageBuffer:
        return load_image_buffer(self._resolve(image_ref))

    def health(self) -> dict:
        return {"status": "ok", "model_ids": {"provider": "fixture"}}


class RemoteProvider:
    """HTTP client for the model sidecar; idempotent per request hash.

    Generated candidates are persisted under ``store_root`` keyed by their
    request hash, so retries and re-runs never duplicate work.
    """

    def __init__(self, config: ProviderConfig, image_root: Path | None = None, store_root: Path | None = None) -> None:
        if config.mode != "remote":
            raise ValueError("RemoteProvider requires remote mode config")
        self.config = config
        self.image_root = image_root
        self.store_root = Path(store_root) if store_root else None
        self._local = threading.local()

    def _resolve(self, ref: str | Path) -> Path:
        p = Path(ref)
        if p.is_absolute() or self.image_root is None:
            return p
        return self.image_root / p

    def _session(self):
        import requests

        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def _request(self, method: str, route: str, payload: Mapping | None = None) -> dict:
        import requests

        url = self.config.endpoint.rstrip("/") + route
        delay = 0.25
        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                if method == "GET":
                    response = self._session().get(url, timeout=self.config.timeout)
                else:
                    response = self._session().post(url, json=payload, timeout=self.config.timeout)
            except requests.RequestException as exc:
                last_error = exc
                if attempt < self.config.retries:
                    time.sleep(delay)
                    delay *= 2
                continue
            if response.status_code >= 500 and attempt < self.config.retries:
                last_error = ProviderError(f"{route}: server error {response.status_code}", code="server")
                time.sleep(delay)
                delay *= 2
                continue
            if response.status_code != 200:
                try:
                    body = response.json()
                    raise ProviderError(str(body.get("message", response.text)), code=str(body.get("code", response.status_code)))
                except ValueError:
                    raise ProviderError(f"{route}: HTTP {response.status_code}", code=str(response.status_code)) from None
            return response.json()
        raise ProviderError(f"{route}: transport failure after {self.config.retries + 1} attempts: {last_error}", code="transport")

    @staticmethod
    def _b64_file(path: Path) -> str:
        try:
            return base64.b64encode(path.read_bytes()).decode("ascii")
        except OSError as exc:
            raise ProviderError(f"cannot read {path}: {exc}", code="io") from exc

    def request_candidates(
        self,
        record,
        target_group: str,
        prompt: str,
        masks: Sequence[str | Path],
        plan: Sequence[GenerationParams] = DEFAULT_PLAN,
    ) -> CandidateSet:
        if self.store_root is None:
            raise ProviderError("remote candidate generation requires a store_root", code="config")
        mask_paths = [self._resolve(m) for m in masks]
        mask_digests = [_file_digest(p) for p in mask_paths]
        request_hash = compute_request_hash(record.record_id, target_group, prompt, mask_digests, plan)
        slots = _expand_plan(plan)
        directory = self.store_root / "candidates" / record.record_id / target_group
        marker = directory / "request.json"

        def assemble() -> CandidateSet:
            candidates = tuple(
                Candidate(
                    index=index,
                    image_ref=str(directory / f"{index:03d}.png"),
                    guidance_scale=params.guidance_scale,
                    image_slot=slot,
                    seed=params.seed,
                )
                for index, params, slot in slots
            )
            return CandidateSet(
                record_id=record.record_id,
                target_group=target_group,
                prompt=prompt,
                candidates=candidates,
                request_hash=request_hash,
            )

        if marker.exists():
            existing = json.loads(marker.read_text(encoding="utf-8"))
            if existing.get("request_hash") == request_hash and all(
                (directory / f"{index:03d}.png").exists() for index, _, _ in slots
            ):
                return assemble()

        image_b64 = self._b64_file(self._resolve(record.image_ref))
        masks_b64 = [self._b64_file(p) for p in mask_paths]
        directory.mkdir(parents=True, exist_ok=True)
        index = 1
        for params in plan:
            body = self._request(
                "POST",
                "/v1/inpaint",
                {
                    "image_b64": image_b64,
                    "mask_b64": masks_b64,
                    "prompt": prompt,
                    "guidance_scale": params.guidance_scale,
                    "num_images": params.num_images,
                    "seed": params.seed,
                },
            )
            images = body.get("images_b64")
            if not isinstance(images, list) or len(images) != params.num_images:
                raise ProviderError(
                    f"/v1/inpaint returned {len(images) if isinstance(images, list) else 'no'} image(s), "
                    f"expected {params.num_images}",
                    code="protocol",
                )
            for encoded in images:
                (directory / f"{index:03d}.png").write_bytes(base64.b64decode(encoded))
                index += 1
        marker.write_text(
            json.dumps({"request_hash": request_hash, "prompt": prompt}, sort_keys=True), encoding="utf-8"
        )
        return assemble()

    def _embedding_from(self, body: Mapping) -> Embedding:
        vector = body.get("vector")
        dim = body.get("dim")
        if not isinstance(vector, list) or dim != len(vector):
            raise ProviderError("malformed embedding response", code="protocol")
        if dim != self.config.embedding_dim:
            raise ProviderError(
                f"embedding dimension drift: declared {self.config.embedding_dim}, got {dim}",
                code="protocol",
            )
        values = np.asarray(vector, dtype=np.float64)
        norm = float(np.linalg.norm(values))
        if abs(norm - 1.0) > 1e-6:
            raise ProviderError(f"provider returned unnormalized embedding (norm {norm})", code="protocol")
        return Embedding(values=values, normalized=True)

    def request_image_embedding(self, image_ref: str | Path) -> Embedding:
        body = self._request("POST", "/v1/embed/image", {"image_b64": self._b64_file(self._resolve(image_ref))})
        return self._embedding_from(body)

    def request_text_embedding(self, text: str) -> Embedding:
        body = self._request("POST", "/v1/embed/text", {"text": text})
        return self._embedding_from(body)

    def request_detections(self, image_ref: str | Path, threshold: float) -> DetectionSet:
        body = self._request(
            "POST", "/v1/detect", {"image_b64": self._b64_file(self._resolve(image_ref)), "threshold": threshold}
        )
        raw = body.get("detections")
        if not isinstance(raw, list):
            raise ProviderError("malformed detection response", code="protocol")
        items = tuple(
            Detection(label=d["label"], confidence=float(d["confidence"]))
            for d in raw
            if float(d["confidence"]) >= threshold
        )
        return DetectionSet(items=items, threshold_applied=threshold)

    def load_image(self, image_ref: str | Path) -> ImageBuffer:
        return load_image_buffer(self._resolve(image_ref))

    def health(self) -> dict:
        return self._request("GET", "/v1/health")


def make_provider(
    config: ProviderConfig, image_root: Path | None = None, store_root: Path | None = None
) -> FixtureProvider | RemoteProvider:
    if config.mode == "fixture":
        return FixtureProvider(config, image_root=image_root)
    return RemoteProvider(config, image_root=image_root, store_root=store_root)


def image_bytes_to_png(pixels: np.ndarray) -> bytes:
    """Encode an (h, w, 3) uint8 array as PNG bytes."""
    buffer = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()
