"""On-disk dataset model: records, person masks, validation, and JSONL round-trips.

A manifest file is UTF-8 JSON lines: one header object
(``{"kind": ..., "groups": [...], "lexicon": ...}``) followed by one record
object per line. Writing is byte-deterministic: fixed key order, records in
manifest order, no timestamps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ManifestError
from .serde import dump_compact

MANIFEST_KINDS = ("original", "synthetic", "augment", "oversample", "subsample", "probe")
SPLITS = ("train", "val", "test")

# Area in pixels above which a second person region is also inpainted.
SECOND_PERSON_THRESHOLD_PX = 55000

# Source group used when group membership is externally annotated or unavailable
# (e.g. skin-tone corpora whose captions carry no group term).
UNKNOWN_GROUP = "unknown"

_HEADER_KEYS = ("kind", "groups", "lexicon")
_OPTIONAL_HEADER_KEYS = ("config_digest", "tool_version")
_RECORD_KEYS = ("record_id", "image_ref", "prompt", "source_group", "split", "attributes", "person_masks")
_SYNTH_KEYS = ("origin_record_id", "target_group", "candidate_index")


@dataclass(frozen=True)
class PersonMask:
    """A person region: binary mask raster plus its annotated bounding-box area."""

    mask_ref: str
    bbox_area_px: int

    def __post_init__(self) -> None:
        if not isinstance(self.bbox_area_px, int) or self.bbox_area_px <= 0:
            raise ManifestError(
                f"bbox_area_px must be a positive integer, got {self.bbox_area_px!r}",
                field="bbox_area_px",
            )


@dataclass(frozen=True)
class GroupSet:
    """Ordered protected groups; order fixes the direction of ratio metrics."""

    groups: tuple[str, ...]
    lexicon_ref: str

    def __post_init__(self) -> None:
        if len(self.groups) < 2:
            raise ManifestError(f"a group set needs >= 2 groups, got {list(self.groups)}", field="groups")
        if len(set(self.groups)) != len(self.groups):
            raise ManifestError(f"duplicate group identifiers in {list(self.groups)}", field="groups")


@dataclass(frozen=True)
class DatasetRecord:
    """One image with its person masks, prompt, group, and attribute labels.

    ``extras`` preserves unknown input fields (non-strict loads) so that
    load -> write round-trips do not drop data.
    """

    record_id: str
    image_ref: str
    prompt: str
    source_group: str
    split: str
    attributes: frozenset[str]
    person_masks: tuple[PersonMask, ...]
    origin_record_id: str | None = None
    target_group: str | None = None
    candidate_index: int | None = None
    extras: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ManifestError(
                f"split must be one of {SPLITS}, got {self.split!r}",
                record_id=self.record_id,
                field="split",
            )
        if self.candidate_index is not None and self.candidate_index < 1:
            raise ManifestError(
                f"candidate_index must be >= 1, got {self.candidate_index}",
                record_id=self.record_id,
                field="candidate_index",
            )

    @property
    def is_synthetic(self) -> bool:
        return self.origin_record_id is not None


@dataclass(frozen=True)
class DatasetManifest:
    """An ordered record collection tagged with its construction kind."""

    kind: str
    group_set: GroupSet
    records: tuple[DatasetRecord, ...]
    # Directory image_ref/mask_ref are relative to; load metadata, not value state.
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in MANIFEST_KINDS:
            raise ManifestError(f"unknown manifest kind {self.kind!r}", field="kind")
        seen: set[str] = set()
        for record in self.records:
            if record.record_id in seen:
                raise ManifestError("duplicate record_id", record_id=record.record_id)
            seen.add(record.record_id)
            if record.source_group not in self.group_set.groups and record.source_group != UNKNOWN_GROUP:
                raise ManifestError(
                    f"source_group {record.source_group!r} not in group set {list(self.group_set.groups)}",
                    record_id=record.record_id,
                    field="source_group",
                )
            if self.kind == "synthetic" and not (
                record.origin_record_id and record.target_group and record.candidate_index
            ):
                raise ManifestError(
                    "synthetic manifests require origin_record_id, target_group and candidate_index",
                    record_id=record.record_id,
                )

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p


def select_inpaint_targets(
    record: DatasetRecord, second_person_threshold_px: int = SECOND_PERSON_THRESHOLD_PX
) -> list[PersonMask]:
    """Pick the person region(s) to inpaint for one record.

    Returns the mask with the largest bounding box, plus the second largest
    only when its box area strictly exceeds ``second_person_threshold_px``.
    """
    if not record.person_masks:
        raise ManifestError("record has no person masks", record_id=record.record_id, field="person_masks")
    ordered = sorted(record.person_masks, key=lambda m: -m.bbox_area_px)
    targets = [ordered[0]]
    if len(ordered) > 1 and ordered[1].bbox_area_px > second_person_threshold_px:
        targets.append(ordered[1])
    return targets


def _parse_record(obj: Mapping[str, Any], kind: str, lineno: int, strict: bool) -> DatasetRecord:
    if not isinstance(obj, Mapping):
        raise ManifestError("record line is not a JSON object", line=lineno)
    record_id = obj.get("record_id")
    if not isinstance(record_id, str) or not record_id:
        raise ManifestError("missing or invalid record_id", line=lineno, field="record_id")

    def need(key: str, typ: type) -> Any:
        value = obj.get(key)
        if not isinstance(value, typ):
            raise ManifestError(
                f"missing or invalid {key} (expected {typ.__name__})",
                line=lineno,
                record_id=record_id,
                field=key,
            )
        return value

    attributes = obj.get("attributes")
    if not isinstance(attributes, list) or not all(isinstance(a, str) for a in attributes):
        raise ManifestError("attributes must be a list of strings", line=lineno, record_id=record_id, field="attributes")
    raw_masks = obj.get("person_masks")
    if not isinstance(raw_masks, list):
        raise ManifestError("person_masks must be a list", line=lineno, record_id=record_id, field="person_masks")
    masks = []
    for raw in raw_masks:
        if not isinstance(raw, Mapping) or not isinstance(raw.get("mask_ref"), str):
            raise ManifestError("malformed person mask entry", line=lineno, record_id=record_id, field="person_masks")
        area = raw.get("bbox_area_px")
        if not isinstance(area, int):
            raise ManifestError("bbox_area_px must be an integer", line=lineno, record_id=record_id, field="bbox_area_px")
        try:
            masks.append(PersonMask(mask_ref=raw["mask_ref"], bbox_area_px=area))
        except ManifestError as exc:
            raise ManifestError(str(exc), line=lineno, record_id=record_id, field="bbox_area_px") from None

    candidate_index = obj.get("candidate_index")
    if candidate_index is not None and not isinstance(candidate_index, int):
        raise ManifestError("candidate_index must be an integer", line=lineno, record_id=record_id, field="candidate_index")

    known = set(_RECORD_KEYS) | set(_SYNTH_KEYS)
    unknown = {k: v for k, v in obj.items() if k not in known}
    if unknown and strict:
        raise ManifestError(
            f"unknown record fields {sorted(unknown)} rejected in strict mode",
            line=lineno,
            record_id=record_id,
        )

    try:
        return DatasetRecord(
            record_id=record_id,
            image_ref=need("image_ref", str),
            prompt=need("prompt", str),
            source_group=need("source_group", str),
            split=need("split", str),
            attributes=frozenset(attributes),
            person_masks=tuple(masks),
            origin_record_id=obj.get("origin_record_id"),
            target_group=obj.get("target_group"),
            candidate_index=candidate_index,
            extras=tuple(sorted(unknown.items())),
        )
    except ManifestError as exc:
        raise ManifestError(str(exc), line=lineno) from None


def load_manifest(
    path: str | Path,
    strict: bool = False,
    lexicon: "Any | None" = None,
) -> DatasetManifest:
    """Load and validate a manifest file.

    ``strict`` additionally stats every image_ref/mask_ref against the
    manifest's directory and rejects unknown record fields. When a lexicon is
    supplied, each prompt must contain at least one group term and all of its
    group terms must map to the record's source_group (skipped for records
    whose source_group is ``unknown``).
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ManifestError("missing header line", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"header parse error: {exc.msg}", line=1) from None
    if not isinstance(header, Mapping):
        raise ManifestError("header must be a JSON object", line=1)
    for key in _HEADER_KEYS:
        if key not in header:
            raise ManifestError(f"header missing {key!r}", line=1, field=key)
    if strict:
        allowed = set(_HEADER_KEYS) | set(_OPTIONAL_HEADER_KEYS)
        bad = sorted(set(header) - allowed)
        if bad:
            raise ManifestError(f"unknown header fields {bad} rejected in strict mode", line=1)
    groups = header["groups"]
    if not isinstance(groups, list) or not all(isinstance(g, str) for g in groups):
        raise ManifestError("header groups must be a list of strings", line=1, field="groups")
    group_set = GroupSet(groups=tuple(groups), lexicon_ref=str(header["lexicon"]))

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"record parse error: {exc.msg}", line=lineno) from None
        records.append(_parse_record(obj, header["kind"], lineno, strict))

    manifest = DatasetManifest(
        kind=str(header["kind"]),
        group_set=group_set,
        records=tuple(records),
        root=path.parent,
    )

    if lexicon is not None:
        from .prompt_rewrite import AMBIGUOUS, detect_group

        for record in manifest.records:
            if record.source_group == UNKNOWN_GROUP:
                continue
            detected = detect_group(record.prompt, lexicon)
            if detected is AMBIGUOUS:
                raise ManifestError(
                    "prompt mixes terms from multiple groups",
                    record_id=record.record_id,
                    field="prompt",
                )
            if detected != record.source_group:
                raise ManifestError(
                    f"prompt group term(s) map to {detected!r}, expected {record.source_group!r}",
                    record_id=record.record_id,
                    field="prompt",
                )

    if strict:
        for record in manifest.records:
            refs = [record.image_ref] + [m.mask_ref for m in record.person_masks]
            for ref in refs:
                if not manifest.resolve(ref).exists():
                    raise ManifestError(
                        f"referenced file not found: {ref}",
                        record_id=record.record_id,
                    )
    return manifest


def serialize_record(record: DatasetRecord) -> str:
    payload: dict[str, Any] = {
        "record_id": record.record_id,
        "image_ref": record.image_ref,
        "prompt": record.prompt,
        "source_group": record.source_group,
        "split": record.split,
        "attributes": sorted(record.attributes),
        "person_masks": [
            {"mask_ref": m.mask_ref, "bbox_area_px": m.bbox_area_px} for m in record.person_masks
        ],
    }
    if record.origin_record_id is not None:
        payload["origin_record_id"] = record.origin_record_id
    if record.target_group is not None:
        payload["target_group"] = record.target_group
    if record.candidate_index is not None:
        payload["candidate_index"] = record.candidate_index
    for key, value in record.extras:
        payload[key] = value
    return dump_compact(payload)


def write_manifest(
    manifest: DatasetManifest,
    path: str | Path,
    header_extra: Mapping[str, str] | None = None,
) -> None:
    """Write a manifest byte-deterministically; load(write(m)) == m."""
    header: dict[str, Any] = {
        "kind": manifest.kind,
        "groups": list(manifest.group_set.groups),
        "lexicon": manifest.group_set.lexicon_ref,
    }
    for key in _OPTIONAL_HEADER_KEYS:
        if header_extra and key in header_extra:
            header[key] = header_extra[key]
    out = [dump_compact(header)]
    out.extend(serialize_record(r) for r in manifest.records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(line + "\n" for line in out), encoding="utf-8")


def with_records(manifest: DatasetManifest, records: Iterable[DatasetRecord], kind: str | None = None) -> DatasetManifest:
    return replace(manifest, records=tuple(records), kind=kind or manifest.kind)
