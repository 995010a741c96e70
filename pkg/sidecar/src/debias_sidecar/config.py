"""Sidecar configuration: model identifiers are deployment choices, not API."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SidecarConfig:
    inpainter: str = "telea-tint-v1"
    embedder: str = "hashproj-v1"
    detector: str = "hue-region-v1"
    segmenter: str = "keypoint-hull-v1"
    device: str = "cpu"
    max_batch: int = 16
    port: int = 8008
    embedding_dim: int = 64

    def model_ids(self) -> dict[str, str]:
        return {
            "inpainter": self.inpainter,
            "embedder": self.embedder,
            "detector": self.detector,
            "segmenter": self.segmenter,
        }
