"""Candidate quality filters: prompt adherence, object consistency, color fidelity.

All scorers are pure functions over provider-supplied embeddings, detections,
and pixel buffers; no neural inference happens here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import ProviderError
from .serde import dump_compact, fmt_float, make_header, read_header_and_rows, write_lines

if TYPE_CHECKING:  # pragma: no cover
    from pathlib import Path

    from .manifest import DatasetRecord
    from .providers import CandidateSet

PROMPT = "prompt"
OBJECT = "object"
COLOR = "color"
ALL_FILTERS = frozenset((PROMPT, OBJECT, COLOR))

_NORM_TOL = 1e-6
DEFAULT_COLOR_EPS = 1e-6
DOWNSAMPLE_SIZE = 14


@dataclass(frozen=True)
class Embedding:
    """A fixed-dimension real vector; providers deliver these pre-normalized."""

    values: np.ndarray
    normalized: bool = True

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise ValueError(f"embedding must be a non-empty 1-D vector, got shape {values.shape}")
        if self.normalized:
            norm = float(np.linalg.norm(values))
            if abs(norm - 1.0) > _NORM_TOL:
                raise ValueError(f"embedding declared normalized but has norm {norm!r}")

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float


@dataclass(frozen=True)
class DetectionSet:
    """Thresholded detector output with set semantics over labels."""

    items: tuple[Detection, ...]
    threshold_applied: float

    def __post_init__(self) -> None:
        labels = [d.label for d in self.items]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels after thresholding: {sorted(labels)}")
        for det in self.items:
            if det.confidence < self.threshold_applied:
                raise ValueError(
                    f"detection {det.label!r} confidence {det.confidence} below threshold {self.threshold_applied}"
                )

    @property
    def labels(self) -> frozenset[str]:
        return frozenset(d.label for d in self.items)


@dataclass(frozen=True)
class ImageBuffer:
    """RGB pixels in [0, 1], row-major, shape (height, width, 3)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float64)
        object.__setattr__(self, "pixels", pixels)
        if pixels.shape != (self.height, self.width, 3):
            raise ValueError(f"pixel shape {pixels.shape} != ({self.height}, {self.width}, 3)")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if float(pixels.min(initial=0.0)) < 0.0 or float(pixels.max(initial=0.0)) > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "ImageBuffer":
        pixels = np.asarray(pixels, dtype=np.float64)
        return cls(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)


@dataclass(frozen=True)
class ScoreTriple:
    """Per-candidate filter scores; masked-out filters are recorded as absent."""

    s_prompt: float | None = None
    s_object: float | None = None
    s_color: float | None = None

    def __post_init__(self) -> None:
        if self.s_prompt is not None and not -1.0 - 1e-9 <= self.s_prompt <= 1.0 + 1e-9:
            raise ValueError(f"s_prompt out of [-1, 1]: {self.s_prompt}")
        if self.s_object is not None and not 0.0 <= self.s_object <= 1.0 + 1e-9:
            raise ValueError(f"s_object out of [0, 1]: {self.s_object}")
        if self.s_color is not None and not (self.s_color > 0 and np.isfinite(self.s_color)):
            raise ValueError(f"s_color must be finite and positive: {self.s_color}")

    def value(self, name: str) -> float | None:
        return {PROMPT: self.s_prompt, OBJECT: self.s_object, COLOR: self.s_color}[name]


@dataclass(frozen=True)
class ScoreTable:
    """Scores for the m candidates of one (record, target group) pair."""

    record_id: str
    target_group: str
    rows: tuple[tuple[int, ScoreTriple], ...]
    filter_mask: frozenset[str]

    def __post_init__(self) -> None:
        mask = frozenset(self.filter_mask)
        object.__setattr__(self, "filter_mask", mask)
        if not mask or not mask <= ALL_FILTERS:
            raise ValueError(f"filter_mask must be a non-empty subset of {sorted(ALL_FILTERS)}")
        indices = [j for j, _ in self.rows]
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError(f"candidate indices must be contiguous 1..m in order, got {indices}")
        for j, triple in self.rows:
            for name in ALL_FILTERS:
                present = triple.value(name) is not None
                if present != (name in mask):
                    raise ValueError(
                        f"candidate {j}: filter {name!r} {'present' if present else 'absent'}, "
                        f"inconsistent with mask {sorted(mask)}"
                    )

    def column(self, name: str) -> list[float]:
        if name not in self.filter_mask:
            raise ValueError(f"filter {name!r} not active in this table")
        return [triple.value(name) for _, triple in self.rows]  # type: ignore[misc]


def score_prompt_adherence(image_emb: Embedding, prompt_emb: Embedding) -> float:
    """Cosine similarity (dot product of unit vectors) between image and prompt."""
    if image_emb.dim != prompt_emb.dim:
        raise ValueError(f"embedding dimension mismatch: {image_emb.dim} vs {prompt_emb.dim}")
    if not (image_emb.normalized and prompt_emb.normalized):
        raise ValueError("prompt adherence requires pre-normalized embeddings")
    return float(np.dot(image_emb.values, prompt_emb.values))


def score_object_consistency(det_original: DetectionSet, det_candidate: DetectionSet) -> float:
    """F1 between the two detected label sets; two empty sets count as 1.0."""
    if det_original.threshold_applied != det_candidate.threshold_applied:
        raise ValueError(
            f"detection thresholds differ: {det_original.threshold_applied} vs {det_candidate.threshold_applied}"
        )
    a, b = det_original.labels, det_candidate.labels
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))


def _pool_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic overlap weights for exact area-average pooling on one axis."""
    scale = n_in / n_out
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        lo, hi = o * scale, (o + 1) * scale
        i0, i1 = int(np.floor(lo)), int(np.ceil(hi))
        for i in range(i0, min(i1, n_in)):
            overlap = min(hi, i + 1) - max(lo, i)
            if overlap > 0:
                weights[o, i] = overlap / scale
    return weights


def downsample_area(img: ImageBuffer, out_w: int = DOWNSAMPLE_SIZE, out_h: int = DOWNSAMPLE_SIZE) -> ImageBuffer:
    """Area-average pooling with fractional boundaries; preserves the image mean."""
    if img.width < out_w or img.height < out_h:
        raise ValueError(f"input {img.width}x{img.height} smaller than output {out_w}x{out_h}")
    wh = _pool_weights(img.height, out_h)
    ww = _pool_weights(img.width, out_w)
    pooled = np.einsum("oi,iwc,pw->opc", wh, img.pixels, ww, optimize=True)
    # Exact pooling of in-range pixels can exceed [0,1] only by rounding error.
    pooled = np.clip(pooled, 0.0, 1.0)
    return ImageBuffer(width=out_w, height=out_h, pixels=pooled)


def score_color_fidelity(
    img_original: ImageBuffer, img_candidate: ImageBuffer, eps: float = DEFAULT_COLOR_EPS
) -> float:
    """Inverse Frobenius norm of the downsampled color difference (epsilon-guarded)."""
    if (img_original.width, img_original.height) != (img_candidate.width, img_candidate.height):
        raise ValueError(
            f"image dimensions differ: {img_original.width}x{img_original.height} vs "
            f"{img_candidate.width}x{img_candidate.height}"
        )
    down_a = downsample_area(img_original)
    down_b = downsample_area(img_candidate)
    diff = down_a.pixels - down_b.pixels
    return 1.0 / (eps + float(np.linalg.norm(diff.ravel())))


class ScoringProvider(Protocol):  # pragma: no cover - structural type only
    def request_text_embedding(self, text: str) -> Embedding: ...

    def request_image_embedding(self, image_ref: "str | Path") -> Embedding: ...

    def request_detections(self, image_ref: "str | Path", threshold: float) -> DetectionSet: ...

    def load_image(self, image_ref: "str | Path") -> ImageBuffer: ...


def score_candidate_set(
    record: "DatasetRecord",
    candidates: "CandidateSet",
    provider: ScoringProvider,
    filter_mask: Iterable[str] = ALL_FILTERS,
    *,
    image_root: "Path | None" = None,
    detection_threshold: float = 0.5,
    color_eps: float = DEFAULT_COLOR_EPS,
) -> ScoreTable:
    """Score every candidate of one (record, target group) pair.

    The original image's detections and pixels are obtained once per record;
    rows are assembled in candidate order. Provider failures surface with the
    offending candidate index attached.
    """
    mask = frozenset(filter_mask)
    if not candidates.candidates:
        raise ValueError(f"empty candidate set for record {record.record_id!r}")
    if not mask or not mask <= ALL_FILTERS:
        raise ValueError(f"filter_mask must be a non-empty subset of {sorted(ALL_FILTERS)}")

    def resolve(ref: str) -> "str | Path":
        from pathlib import Path as _Path

        p = _Path(ref)
        return p if (p.is_absolute() or image_root is None) else image_root / p

    original_ref = resolve(record.image_ref)
    prompt_emb = provider.request_text_embedding(candidates.prompt) if PROMPT in mask else None
    det_orig = provider.request_detections(original_ref, detection_threshold) if OBJECT in mask else None
    img_orig = provider.load_image(original_ref) if COLOR in mask else None

    rows: list[tuple[int, ScoreTriple]] = []
    for candidate in candidates.candidates:
        try:
            s_prompt = s_object = s_color = None
            cand_ref = resolve(candidate.image_ref)
            if prompt_emb is not None:
                s_prompt = score_prompt_adherence(provider.request_image_embedding(cand_ref), prompt_emb)
            if det_orig is not None:
                s_object = score_object_consistency(det_orig, provider.request_detections(cand_ref, detection_threshold))
            if img_orig is not None:
                s_color = score_color_fidelity(img_orig, provider.load_image(cand_ref), eps=color_eps)
        except ProviderError as exc:
            raise ProviderError(
                f"candidate {candidate.index} of ({record.record_id!r}, {candidates.target_group!r}): {exc}",
                code=exc.code,
            ) from exc
        rows.append((candidate.index, ScoreTriple(s_prompt=s_prompt, s_object=s_object, s_color=s_color)))
    return ScoreTable(
        record_id=record.record_id,
        target_group=candidates.target_group,
        rows=tuple(rows),
        filter_mask=mask,
    )


def write_score_tables(
    tables: Sequence[ScoreTable], path: "str | Path", header_extra: Mapping[str, str] | None = None
) -> None:
    lines = [make_header("scores", dict(header_extra) if header_extra else None)]
    for table in tables:
        for j, triple in table.rows:
            lines.append(
                "{"
                + f'"record_id":{dump_compact(table.record_id)},'
                + f'"target_group":{dump_compact(table.target_group)},'
                + f'"candidate_index":{j},'
                + f'"s_prompt":{fmt_float(triple.s_prompt)},'
                + f'"s_object":{fmt_float(triple.s_object)},'
                + f'"s_color":{fmt_float(triple.s_color)}'
                + "}"
            )
    write_lines(path, lines)


def read_score_tables(path: "str | Path") -> list[ScoreTable]:
    header, rows = read_header_and_rows(path)
    if header.get("kind") != "scores":
        raise ValueError(f"{path}: not a score file (kind={header.get('kind')!r})")
    grouped: dict[tuple[str, str], list[tuple[int, ScoreTriple]]] = {}
    order: list[tuple[str, str]] = []
    for lineno, row in rows:
        key = (row["record_id"], row["target_group"])
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        triple = ScoreTriple(
            s_prompt=row.get("s_prompt"), s_object=row.get("s_object"), s_color=row.get("s_color")
        )
        grouped[key].append((int(row["candidate_index"]), triple))
    tables = []
    for key in order:
        row_list = sorted(grouped[key], key=lambda item: item[0])
        mask = frozenset(
            name for name in ALL_FILTERS if row_list and row_list[0][1].value(name) is not None
        )
        tables.append(
            ScoreTable(record_id=key[0], target_group=key[1], rows=tuple(row_list), filter_mask=mask)
        )
    return tables
