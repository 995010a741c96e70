"""Classical-CV model bundle behind the inference endpoints.

The service contract is shapes and normalization, so the default bundle uses
deterministic classical algorithms: Telea diffusion inpainting with a
prompt-seeded tint for per-sample diversity, feature-hash / fixed-projection
embeddings, hue-region detection, and convex-hull keypoint segmentation.
Heavier neural bundles can replace this one without touching the endpoints.
"""

from __future__ import annotations

import hashlib
import re

import cv2
import numpy as np

_TOKEN_RE = re.compile(r"[a-z]+(?:-[a-z]+)*")

_HUE_SECTORS = (
    ("red", 0, 15),
    ("orange", 15, 45),
    ("yellow", 45, 75),
    ("green", 75, 105),
    ("cyan", 105, 135),
    ("blue", 135, 160),
    ("purple", 160, 175),
    ("magenta", 175, 180),
)

# Fixed projection basis for image embeddings; seeded once so every process
# of the same build produces identical vectors.
_PROJECTION_SEED = 0x51DEC0DE
_PATCH_GRID = 16


def _digest_floats(payload: bytes, count: int) -> np.ndarray:
    raw = bytearray()
    counter = 0
    while len(raw) < count * 8:
        raw.extend(hashlib.sha256(payload + counter.to_bytes(4, "big")).digest())
        counter += 1
    ints = np.frombuffer(bytes(raw[: count * 8]), dtype=">u8").astype(np.float64)
    return ints / 2**63 - 1.0


class ClassicalBundle:
    """Deterministic CPU implementations of all four model roles."""

    def __init__(self, embedding_dim: int = 64) -> None:
        self.embedding_dim = embedding_dim
        rng = np.random.default_rng(_PROJECTION_SEED)
        self._projection = rng.standard_normal((embedding_dim, _PATCH_GRID * _PATCH_GRID + 6))

    # -- inpainting ----------------------------------------------------------

    def inpaint(
        self,
        image: np.ndarray,
        masks: list[np.ndarray],
        prompt: str,
        guidance_scale: float,
        num_images: int,
        seed: int,
    ) -> list[np.ndarray]:
        """num_images variants of the image with the union mask region repainted."""
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError("image must be RGB")
        union = np.zeros(image.shape[:2], dtype=np.uint8)
        for mask in masks:
            if mask.shape != image.shape[:2]:
                raise ValueError(
                    f"mask shape {mask.shape} does not match image {image.shape[:2]}"
                )
            union |= (mask >= 128).astype(np.uint8)
        union *= 255
        bgr = cv2.cvtColor(image, cv2.COLOR_RGB2BGR)
        base = cv2.inpaint(bgr, union, 3, cv2.INPAINT_TELEA)
        base = cv2.cvtColor(base, cv2.COLOR_BGR2RGB)

        region = union > 0
        outputs = []
        for index in range(num_images):
            payload = f"{prompt}|{seed}|{guidance_scale}|{index}".encode("utf-8")
            tint = _digest_floats(payload, 3) * 40.0  # per-channel shift in [-40, 40]
            variant = base.astype(np.float64)
            variant[region] = np.clip(variant[region] + tint, 0, 255)
            outputs.append(variant.astype(np.uint8))
        return outputs

    # -- embeddings ----------------------------------------------------------

    def _normalize(self, values: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(values))
        if norm < 1e-12:
            values = np.zeros(self.embedding_dim)
            values[0] = 1.0
            return values
        return values / norm

    def embed_text(self, text: str) -> np.ndarray:
        """Signed feature hashing of word tokens into the embedding space."""
        values = np.zeros(self.embedding_dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.embedding_dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            values[bucket] += sign
        return self._normalize(values)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        """Fixed random projection of a grayscale patch grid plus color statistics."""
        gray = cv2.cvtColor(image, cv2.COLOR_RGB2GRAY)
        patches = cv2.resize(
            gray, (_PATCH_GRID, _PATCH_GRID), interpolation=cv2.INTER_AREA
        ).astype(np.float64)
        channel_stats = np.concatenate(
            [image.mean(axis=(0, 1)) / 255.0, image.std(axis=(0, 1)) / 255.0]
        )
        features = np.concatenate([patches.ravel() / 255.0, channel_stats])
        return self._normalize(self._projection @ features)

    # -- detection -----------------------------------------------------------

    def detect(self, image: np.ndarray, threshold: float) -> list[tuple[str, float]]:
        """Hue-region presence labels with pixel-mass confidences."""
        hsv = cv2.cvtColor(image, cv2.COLOR_RGB2HSV)
        hue = hsv[:, :, 0]
        saturation = hsv[:, :, 1]
        value = hsv[:, :, 2]
        total = hue.size
        chromatic = saturation >= 40
        detections = []
        for label, lo, hi in _HUE_SECTORS:
            mass = float(np.count_nonzero(chromatic & (hue >= lo) & (hue < hi))) / total
            confidence = min(1.0, 2.0 * mass)
            if confidence >= threshold:
                detections.append((label, confidence))
        dark = float(np.count_nonzero(value < 60)) / total
        bright = float(np.count_nonzero(value > 200)) / total
        for label, mass in (("dark-region", dark), ("bright-region", bright)):
            confidence = min(1.0, 2.0 * mass)
            if confidence >= threshold:
                detections.append((label, confidence))
        return detections

    # -- segmentation --------------------------------------------------------

    def segment(self, image: np.ndarray, keypoints: list[tuple[float, float]], part_label: str) -> np.ndarray:
        """Binary mask over the convex hull of the keypoints, slightly dilated."""
        if not keypoints:
            raise ValueError(f"no keypoints supplied for part {part_label!r}")
        height, width = image.shape[:2]
        mask = np.zeros((height, width), dtype=np.uint8)
        points = np.array(
            [
                [int(round(min(max(x, 0), width - 1))), int(round(min(max(y, 0), height - 1)))]
                for x, y in keypoints
            ],
            dtype=np.int32,
        )
        if len(points) >= 3:
            hull = cv2.convexHull(points)
            cv2.fillConvexPoly(mask, hull, 255)
        else:
            for point in points:
                cv2.circle(mask, tuple(point), 3, 255, -1)
            if len(points) == 2:
                cv2.line(mask, tuple(points[0]), tuple(points[1]), 255, 5)
        radius = max(2, int(0.02 * max(height, width)))
        kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * radius + 1, 2 * radius + 1))
        return cv2.dilate(mask, kernel)
