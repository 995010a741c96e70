"""FastAPI application implementing the /v1 wire protocol."""

from __future__ import annotations

import base64
import binascii
import io
import threading

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from .config import SidecarConfig
from .models import ClassicalBundle


class InpaintRequest(BaseModel):
    image_b64: str
    mask_b64: list[str]
    prompt: str
    guidance_scale: float = Field(gt=0)
    num_images: int = Field(ge=1)
    seed: int = 0


class EmbedImageRequest(BaseModel):
    image_b64: str


class EmbedTextRequest(BaseModel):
    text: str


class DetectRequest(BaseModel):
    image_b64: str
    threshold: float = Field(ge=0.0, le=1.0)


class SegmentRequest(BaseModel):
    image_b64: str
    keypoints: list[tuple[float, float]]
    part_label: str


class ProtocolError(Exception):
    def __init__(self, status: int, code: str, message: str) -> None:
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


def _decode_image(field: str, payload: str, mode: str = "RGB") -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert(mode))
    except (binascii.Error, OSError, ValueError) as exc:
        raise ProtocolError(400, "bad_image", f"{field}: cannot decode image ({exc})") from exc


def _encode_png(pixels: np.ndarray, mode: str = "RGB") -> str:
    buffer = io.BytesIO()
    Image.fromarray(pixels, mode=mode).save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def create_app(config: SidecarConfig | None = None) -> FastAPI:
    config = config or SidecarConfig()
    bundle = ClassicalBundle(embedding_dim=config.embedding_dim)
    # one inference at a time per device; request handling itself is parallel
    inference_lock = threading.Lock()
    app = FastAPI(title="debias-sidecar")

    @app.exception_handler(ProtocolError)
    async def protocol_error(_: Request, exc: ProtocolError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def validation_error(_: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"code": "bad_request", "message": str(exc.errors())})

    @app.exception_handler(Exception)
    async def inference_error(_: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"code": "inference_error", "message": str(exc)})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model_ids": config.model_ids()}

    @app.post("/v1/inpaint")
    def inpaint(request: InpaintRequest):
        if request.num_images > config.max_batch:
            raise ProtocolError(
                400, "batch_too_large", f"num_images {request.num_images} exceeds max batch {config.max_batch}"
            )
        if not request.mask_b64:
            raise ProtocolError(400, "bad_request", "mask_b64 must contain at least one mask")
        image = _decode_image("image_b64", request.image_b64)
        masks = [_decode_image(f"mask_b64[{i}]", m, mode="L") for i, m in enumerate(request.mask_b64)]
        try:
            with inference_lock:
                outputs = bundle.inpaint(
                    image, masks, request.prompt, request.guidance_scale, request.num_images, request.seed
                )
        except ValueError as exc:
            raise ProtocolError(400, "bad_request", str(exc)) from exc
        return {"images_b64": [_encode_png(out) for out in outputs]}

    @app.post("/v1/embed/image")
    def embed_image(request: EmbedImageRequest):
        image = _decode_image("image_b64", request.image_b64)
        with inference_lock:
            vector = bundle.embed_image(image)
        return {"vector": vector.tolist(), "dim": config.embedding_dim}

    @app.post("/v1/embed/text")
    def embed_text(request: EmbedTextRequest):
        with inference_lock:
            vector = bundle.embed_text(request.text)
        return {"vector": vector.tolist(), "dim": config.embedding_dim}

    @app.post("/v1/detect")
    def detect(request: DetectRequest):
        image = _decode_image("image_b64", request.image_b64)
        with inference_lock:
            detections = bundle.detect(image, request.threshold)
        return {"detections": [{"label": label, "confidence": confidence} for label, confidence in detections]}

    @app.post("/v1/segment")
    def segment(request: SegmentRequest):
        if not request.keypoints:
            raise ProtocolError(400, "missing_keypoints", f"no keypoints for part {request.part_label!r}")
        image = _decode_image("image_b64", request.image_b64)
        with inference_lock:
            mask = bundle.segment(image, request.keypoints, request.part_label)
        return {"mask_b64": _encode_png(mask, mode="L")}

    return app
