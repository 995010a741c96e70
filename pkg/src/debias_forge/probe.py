"""Artifact-shift probe: body-part inpainting requests and the prediction-shift statistic."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from .manifest import DatasetManifest, GroupSet
from .metrics import PredictionRecord, directed_ratio
from .providers import GenerationParams
from .serde import dump_compact, fmt_float, make_header, read_header_and_rows, write_lines

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BodyPartAnnotation:
    label: str
    mask_ref: str


@dataclass(frozen=True)
class ProbeRequest:
    """One inpainting request: a randomly chosen body part, prompted by the original caption."""

    record_id: str
    chosen_body_part: str
    mask_ref: str
    prompt: str
    params: GenerationParams


@dataclass(frozen=True)
class ProbeResult:
    ratio_orig: float
    ratio_inp: float
    delta: float


def round_half_up(value: float, digits: int = 1) -> float:
    """Half-up decimal rounding (0.05 at 1 digit rounds to 0.1, never 0.0)."""
    quantum = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def build_probe_set(
    test_manifest: DatasetManifest,
    body_part_annotations: Mapping[str, Sequence[BodyPartAnnotation]],
    seed: int,
    params: GenerationParams | None = None,
) -> list[ProbeRequest]:
    """One request per record with a uniformly chosen annotated body part.

    The record's caption is used verbatim as the prompt. Records without
    body-part annotations are skipped with a warning.
    """
    rng = random.Random(seed)
    if params is None:
        params = GenerationParams(guidance_scale=7.5, num_images=1, seed=seed)
    requests: list[ProbeRequest] = []
    for record in test_manifest.records:
        parts = body_part_annotations.get(record.record_id) or ()
        if not parts:
            logger.warning("record %r has no body-part annotations; skipped", record.record_id)
            continue
        chosen = parts[rng.randrange(len(parts))]
        requests.append(
            ProbeRequest(
                record_id=record.record_id,
                chosen_body_part=chosen.label,
                mask_ref=chosen.mask_ref,
                prompt=record.prompt,
                params=params,
            )
        )
    return requests


def delta_ratio(ratio_orig: float, ratio_inp: float) -> float:
    """Relative prediction-ratio shift, in percent: 100*|(orig - inp)/orig|.

    Inputs are directed ratios (not max-folded); the result is unrounded.
    """
    if ratio_orig <= 0:
        raise ValueError(f"ratio_orig must be positive, got {ratio_orig}")
    return 100.0 * abs((ratio_orig - ratio_inp) / ratio_orig)


def probe_report(
    preds_orig: Sequence[PredictionRecord],
    preds_inp: Sequence[PredictionRecord],
    group_set: GroupSet,
) -> ProbeResult:
    """Directed group-prediction ratios on both test sets and their shift.

    Both sets must cover the same record_ids; records whose prediction carries
    no group (e.g. a caption without a group term) do not enter that set's
    ratio.
    """
    ids_orig = {r.record_id for r in preds_orig}
    ids_inp = {r.record_id for r in preds_inp}
    if ids_orig != ids_inp:
        diff = sorted(ids_orig ^ ids_inp)
        raise ValueError(f"prediction sets cover different record_ids, e.g. {diff[:5]}")
    groups_orig = [r.pred_group for r in preds_orig if r.pred_group is not None]
    groups_inp = [r.pred_group for r in preds_inp if r.pred_group is not None]
    ratio_orig = directed_ratio(groups_orig, group_set)
    ratio_inp = directed_ratio(groups_inp, group_set)
    return ProbeResult(ratio_orig=ratio_orig, ratio_inp=ratio_inp, delta=delta_ratio(ratio_orig, ratio_inp))


def write_probe_requests(
    requests: Sequence[ProbeRequest], path: str, header_extra: Mapping[str, str] | None = None
) -> None:
    lines = [make_header("probe_requests", dict(header_extra) if header_extra else None)]
    for request in requests:
        lines.append(
            dump_compact(
                {
                    "record_id": request.record_id,
                    "chosen_body_part": request.chosen_body_part,
                    "mask_ref": request.mask_ref,
                    "prompt": request.prompt,
                    "guidance_scale": request.params.guidance_scale,
                    "num_images": request.params.num_images,
                    "seed": request.params.seed,
                }
            )
        )
    write_lines(path, lines)


def read_probe_requests(path: str) -> list[ProbeRequest]:
    header, rows = read_header_and_rows(path)
    if header.get("kind") != "probe_requests":
        raise ValueError(f"{path}: not a probe request file (kind={header.get('kind')!r})")
    return [
        ProbeRequest(
            record_id=row["record_id"],
            chosen_body_part=row["chosen_body_part"],
            mask_ref=row["mask_ref"],
            prompt=row["prompt"],
            params=GenerationParams(
                guidance_scale=row["guidance_scale"], num_images=row["num_images"], seed=row["seed"]
            ),
        )
        for _, row in rows
    ]


def write_probe_report(
    result: ProbeResult, path: str, model_id: str = "model", header_extra: Mapping[str, str] | None = None
) -> None:
    """Fixed-key report row; the shift is reported half-up at one decimal."""
    lines = [make_header("probe_report", dict(header_extra) if header_extra else None)]
    lines.append(
        "{"
        + f'"model":{dump_compact(model_id)},'
        + f'"ratio_orig":{fmt_float(result.ratio_orig)},'
        + f'"ratio_inp":{fmt_float(result.ratio_inp)},'
        + f'"delta":{fmt_float(round_half_up(result.delta, 1))}'
        + "}"
    )
    write_lines(path, lines)
