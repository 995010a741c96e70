"""Rank-sum selection of the least-biased candidate per (record, target group)."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .scoring import ALL_FILTERS, COLOR, OBJECT, PROMPT, ScoreTable
from .serde import dump_compact, fmt_float, make_header, read_header_and_rows, write_lines

SelectionKey = tuple[str, str]


@dataclass(frozen=True)
class FilterWeights:
    """Non-negative per-filter weights; all default to 1 (equal contribution)."""

    c_prompt: float = 1.0
    c_object: float = 1.0
    c_color: float = 1.0

    def __post_init__(self) -> None:
        for name in (PROMPT, OBJECT, COLOR):
            if self.weight(name) < 0:
                raise ValueError(f"filter weight for {name!r} must be non-negative")

    def weight(self, name: str) -> float:
        return {PROMPT: self.c_prompt, OBJECT: self.c_object, COLOR: self.c_color}[name]

    def scaled(self, factor: float) -> "FilterWeights":
        return FilterWeights(self.c_prompt * factor, self.c_object * factor, self.c_color * factor)


def rank_scores(values: Sequence[float]) -> list[int]:
    """Competition ("min") ranks in descending score order.

    The highest value gets rank 1; tied values share the smallest applicable
    rank; ranks of n values lie in [1, n].
    """
    if not values:
        raise ValueError("cannot rank an empty list")
    return [1 + sum(1 for other in values if other > value) for value in values]


def _check_weights(table: ScoreTable, weights: FilterWeights) -> list[str]:
    active = sorted(table.filter_mask)
    for name in ALL_FILTERS - table.filter_mask:
        if weights.weight(name) != 0.0:
            raise ValueError(
                f"nonzero weight for filter {name!r}, which is absent from table "
                f"({table.record_id!r}, {table.target_group!r})"
            )
    if all(weights.weight(name) == 0.0 for name in active):
        raise ValueError("at least one active filter weight must be positive")
    return active


def weighted_rank_sums(table: ScoreTable, weights: FilterWeights) -> dict[int, Fraction]:
    """Weighted sum of per-filter descending ranks for every candidate.

    Sums are exact rationals (ranks are integers, float weights are dyadic),
    so ties and the scaling invariance of the argmin are exact rather than
    subject to float summation order.
    """
    active = _check_weights(table, weights)
    ranks = {name: rank_scores(table.column(name)) for name in active}
    sums: dict[int, Fraction] = {}
    for pos, (j, _) in enumerate(table.rows):
        sums[j] = sum(
            (Fraction(weights.weight(name)) * ranks[name][pos] for name in active), Fraction(0)
        )
    return sums


def select_best(table: ScoreTable, weights: FilterWeights = FilterWeights()) -> int:
    """Candidate index minimizing the weighted rank sum; ties break to the smallest index."""
    sums = weighted_rank_sums(table, weights)
    return min(sums, key=lambda j: (sums[j], j))


def select_all(
    tables: Sequence[ScoreTable], weights: FilterWeights = FilterWeights()
) -> dict[SelectionKey, int]:
    """Independent per-table selection, assembled in sorted key order."""
    seen: dict[SelectionKey, int] = {}
    for table in tables:
        key = (table.record_id, table.target_group)
        if key in seen:
            raise ValueError(f"duplicate score table for {key}")
        seen[key] = select_best(table, weights)
    return {key: seen[key] for key in sorted(seen)}


def write_selections(
    tables: Sequence[ScoreTable],
    weights: FilterWeights,
    path: str,
    header_extra: Mapping[str, str] | None = None,
) -> dict[SelectionKey, int]:
    selected = select_all(tables, weights)
    by_key = {(t.record_id, t.target_group): t for t in tables}
    lines = [make_header("selections", dict(header_extra) if header_extra else None)]
    for key in sorted(selected):
        j = selected[key]
        rank_sum = float(weighted_rank_sums(by_key[key], weights)[j])
        lines.append(
            "{"
            + f'"record_id":{dump_compact(key[0])},'
            + f'"target_group":{dump_compact(key[1])},'
            + f'"selected_candidate_index":{j},'
            + f'"weighted_rank_sum":{fmt_float(rank_sum)}'
            + "}"
        )
    write_lines(path, lines)
    return selected


def read_selections(path: str) -> dict[SelectionKey, int]:
    header, rows = read_header_and_rows(path)
    if header.get("kind") != "selections":
        raise ValueError(f"{path}: not a selection file (kind={header.get('kind')!r})")
    out: dict[SelectionKey, int] = {}
    for lineno, row in rows:
        key = (row["record_id"], row["target_group"])
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate selection for {key}")
        out[key] = int(row["selected_candidate_index"])
    return out
