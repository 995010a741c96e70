"""Balanced dataset construction: all-synthetic, augmented, and resampling baselines.

The all-synthetic build carries a structural guarantee: every attribute
combination appears once per group for each original record, so combination
counts are group-uniform by construction. Resampling balances single labeled
attributes only, which is exactly the limitation it exists to demonstrate.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Mapping

from .manifest import UNKNOWN_GROUP, DatasetManifest, DatasetRecord
from .serde import dump_compact, fmt_float, make_header, write_lines

if TYPE_CHECKING:  # pragma: no cover
    from .providers import CandidateSet

logger = logging.getLogger(__name__)

CombinationKey = tuple[str, ...]


@dataclass(frozen=True)
class AttributeMarginal:
    """Counts and probability estimates for one labeled attribute."""

    counts: Mapping[str, int]
    p_overall: float
    p_given_group: Mapping[str, float | None]


@dataclass(frozen=True)
class BalanceReport:
    """Per-attribute-combination group counts plus single-attribute marginals."""

    combinations: Mapping[CombinationKey, Mapping[str, int]]
    max_disparity: int
    marginals: Mapping[str, AttributeMarginal]
    unknown_records: int = 0


def _synthetic_record(
    record: DatasetRecord, target_group: str, candidates: "CandidateSet", candidate_index: int
) -> DatasetRecord:
    chosen = next((c for c in candidates.candidates if c.index == candidate_index), None)
    if chosen is None:
        raise ValueError(
            f"selection {candidate_index} not in candidate set for "
            f"({record.record_id!r}, {target_group!r})"
        )
    return DatasetRecord(
        record_id=f"{record.record_id}__syn_{target_group}",
        image_ref=chosen.image_ref,
        prompt=candidates.prompt,
        source_group=target_group,
        split=record.split,
        attributes=record.attributes,
        person_masks=record.person_masks,
        origin_record_id=record.record_id,
        target_group=target_group,
        candidate_index=candidate_index,
    )


def build_synthetic(
    original: DatasetManifest,
    candidates: Mapping[tuple[str, str], "CandidateSet"],
    selections: Mapping[tuple[str, str], int],
) -> DatasetManifest:
    """All-synthetic manifest: one selected inpainting per (record, group) pair.

    Every group gets a version of every record, including the record's own
    source group, so generation artifacts are distributed evenly.
    """
    groups = original.group_set.groups
    records: list[DatasetRecord] = []
    for record in original.records:
        for group in groups:
            key = (record.record_id, group)
            if key not in selections:
                raise ValueError(f"missing selection for pair {key}")
            if key not in candidates:
                raise ValueError(f"missing candidate set for pair {key}")
            records.append(_synthetic_record(record, group, candidates[key], selections[key]))
    return DatasetManifest(kind="synthetic", group_set=original.group_set, records=tuple(records))


def build_augment(
    original: DatasetManifest,
    candidates: Mapping[tuple[str, str], "CandidateSet"],
    selections: Mapping[tuple[str, str], int],
) -> DatasetManifest:
    """Originals verbatim plus one synthetic record per cross-group pair."""
    groups = original.group_set.groups
    records: list[DatasetRecord] = list(original.records)
    for record in original.records:
        for group in groups:
            key = (record.record_id, group)
            if group == record.source_group:
                if key in selections:
                    logger.warning("ignoring selection for same-group pair %s", key)
                continue
            if key not in selections:
                raise ValueError(f"missing selection for pair {key}")
            if key not in candidates:
                raise ValueError(f"missing candidate set for pair {key}")
            records.append(_synthetic_record(record, group, candidates[key], selections[key]))
    return DatasetManifest(kind="augment", group_set=original.group_set, records=tuple(records))


def _group_pools(records: list[DatasetRecord], attribute: str, groups: tuple[str, ...]) -> dict[str, list[DatasetRecord]]:
    pools: dict[str, list[DatasetRecord]] = {g: [] for g in groups}
    for record in records:
        if attribute in record.attributes and record.source_group in pools:
            pools[record.source_group].append(record)
    return pools


def oversample(original: DatasetManifest, seed: int) -> DatasetManifest:
    """Duplicate minority-group records per labeled attribute until counts match.

    Attributes are processed in sorted order with re-counting after each one;
    duplication is sampling with replacement from the current minority pool.
    Groups with no record containing an attribute cannot be balanced and are
    skipped with a warning, as are attributes present in a single group.
    """
    rng = random.Random(seed)
    records = list(original.records)
    groups = original.group_set.groups
    dup_counts: dict[str, int] = {}
    for attribute in sorted({a for r in original.records for a in r.attributes}):
        pools = _group_pools(records, attribute, groups)
        present = [g for g in groups if pools[g]]
        if len(present) < 2:
            logger.warning("attribute %r present in %d group(s); skipped", attribute, len(present))
            continue
        target = max(len(pools[g]) for g in present)
        for group in groups:
            pool = pools[group]
            if not pool:
                logger.warning("attribute %r has no %r records; cannot balance that group", attribute, group)
                continue
            for _ in range(target - len(pool)):
                source = rng.choice(pool)
                base = source.record_id.split("__dup")[0]
                dup_counts[base] = dup_counts.get(base, 0) + 1
                records.append(replace(source, record_id=f"{base}__dup{dup_counts[base]}"))
    return DatasetManifest(kind="oversample", group_set=original.group_set, records=tuple(records))


def subsample(original: DatasetManifest, seed: int) -> DatasetManifest:
    """Remove majority-group records per labeled attribute down to the minority count."""
    rng = random.Random(seed)
    records = list(original.records)
    groups = original.group_set.groups
    for attribute in sorted({a for r in original.records for a in r.attributes}):
        pools = _group_pools(records, attribute, groups)
        present = [g for g in groups if pools[g]]
        if len(present) < 2:
            logger.warning("attribute %r present in %d group(s); skipped", attribute, len(present))
            continue
        floor = min(len(pools[g]) for g in present)
        for group in present:
            pool = pools[group]
            excess = len(pool) - floor
            if excess > 0:
                removed = {id(r) for r in rng.sample(pool, excess)}
                records = [r for r in records if id(r) not in removed]
    return DatasetManifest(kind="subsample", group_set=original.group_set, records=tuple(records))


def check_balance(manifest: DatasetManifest) -> BalanceReport:
    """Exact counting over attribute-combination keys and single attributes."""
    groups = manifest.group_set.groups
    combinations: dict[CombinationKey, dict[str, int]] = {}
    unknown = 0
    counted: list[DatasetRecord] = []
    for record in manifest.records:
        if record.source_group == UNKNOWN_GROUP:
            unknown += 1
            continue
        counted.append(record)
        key = tuple(sorted(record.attributes))
        row = combinations.setdefault(key, {g: 0 for g in groups})
        row[record.source_group] += 1

    max_disparity = 0
    for row in combinations.values():
        values = [row[g] for g in groups]
        max_disparity = max(max_disparity, max(values) - min(values))

    n_total = len(counted)
    group_totals = {g: sum(1 for r in counted if r.source_group == g) for g in groups}
    marginals: dict[str, AttributeMarginal] = {}
    for attribute in sorted({a for r in counted for a in r.attributes}):
        counts = {g: sum(1 for r in counted if r.source_group == g and attribute in r.attributes) for g in groups}
        marginals[attribute] = AttributeMarginal(
            counts=counts,
            p_overall=sum(counts.values()) / n_total,
            p_given_group={
                g: (counts[g] / group_totals[g] if group_totals[g] else None) for g in groups
            },
        )
    return BalanceReport(
        combinations=combinations,
        max_disparity=max_disparity,
        marginals=marginals,
        unknown_records=unknown,
    )


def single_attribute_disparity(report: BalanceReport, attribute: str) -> int:
    counts = report.marginals[attribute].counts
    return max(counts.values()) - min(counts.values())


def format_balance_table(report: BalanceReport, groups: tuple[str, ...]) -> str:
    """Human-readable balance summary."""
    lines = ["combination".ljust(40) + "  " + "  ".join(g.rjust(10) for g in groups)]
    for key in sorted(report.combinations):
        label = "{" + ",".join(key) + "}" if key else "{}"
        row = report.combinations[key]
        lines.append(label.ljust(40) + "  " + "  ".join(str(row[g]).rjust(10) for g in groups))
    lines.append("")
    lines.append(f"max combination disparity: {report.max_disparity}")
    if report.unknown_records:
        lines.append(f"records with unknown group (not counted): {report.unknown_records}")
    return "\n".join(lines)


def write_balance_report(
    report: BalanceReport,
    groups: tuple[str, ...],
    path: str,
    header_extra: Mapping[str, str] | None = None,
) -> None:
    extra = {"max_disparity": report.max_disparity, "unknown_records": report.unknown_records}
    if header_extra:
        extra.update(header_extra)
    lines = [make_header("balance", extra)]
    for key in sorted(report.combinations):
        row = report.combinations[key]
        lines.append(dump_compact({"combination": list(key), "counts": {g: row[g] for g in groups}}))
    for attribute in sorted(report.marginals):
        marginal = report.marginals[attribute]
        lines.append(
            "{"
            + f'"attribute":{dump_compact(attribute)},'
            + f'"counts":{dump_compact({g: marginal.counts[g] for g in groups})},'
            + f'"p_overall":{fmt_float(marginal.p_overall)},'
            + '"p_given_group":{'
            + ",".join(
                f"{dump_compact(g)}:{fmt_float(marginal.p_given_group[g])}" for g in groups
            )
            + "}}"
        )
    write_lines(path, lines)
