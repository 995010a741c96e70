from __future__ import annotations

from collections import Counter

import pytest

from conftest import make_manifest, make_record
from debias_forge.manifest import GroupSet
from debias_forge.metrics import PredictionRecord
from debias_forge.probe import (
    BodyPartAnnotation,
    ProbeRequest,
    build_probe_set,
    delta_ratio,
    probe_report,
    read_probe_requests,
    round_half_up,
    write_probe_requests,
)

GENDER = GroupSet(groups=("man", "woman"), lexicon_ref="builtin:binary_gender")


class TestDeltaRatio:
    @pytest.mark.parametrize(
        "pair,expected",
        [
            ((3.5, 3.0), 14.3),
            ((3.7, 1.5), 59.5),
            ((3.2, 0.6), 81.3),
            ((2.5, 0.8), 68.0),
            ((2.3, 1.8), 21.7),
            ((1.8, 1.7), 5.6),
            ((2.0, 2.0), 0.0),
        ],
    )
    def test_reference_pairs_at_one_decimal(self, pair, expected):
        assert round_half_up(delta_ratio(*pair), 1) == expected

    def test_zero_or_negative_origin_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            delta_ratio(0.0, 1.0)

    def test_non_negative_and_zero_iff_equal(self):
        assert delta_ratio(2.0, 2.0) == 0.0
        assert delta_ratio(2.0, 1.9) > 0.0
        assert delta_ratio(2.0, 2.1) > 0.0

    def test_scale_invariance(self):
        base = delta_ratio(3.1, 2.6)
        assert delta_ratio(2 * 3.1, 2 * 2.6) == base  # power-of-two scale is exact
        assert delta_ratio(0.37 * 3.1, 0.37 * 2.6) == pytest.approx(base, rel=1e-12)

    def test_direction_is_absolute(self):
        assert delta_ratio(2.0, 3.0) == delta_ratio(2.0, 1.0) == 50.0


class TestRoundHalfUp:
    def test_half_rounds_up_not_to_even(self):
        assert round_half_up(81.25, 1) == 81.3
        assert round_half_up(0.05, 1) == 0.1
        assert round_half_up(4.35, 1) == 4.4

    def test_plain_cases(self):
        assert round_half_up(14.2857, 1) == 14.3
        assert round_half_up(4.3478, 1) == 4.3


def annotations_for(manifest, parts_per_record=3):
    labels = ("head", "left_hand", "right_hand", "left_foot", "right_foot")
    return {
        r.record_id: [
            BodyPartAnnotation(label=labels[k], mask_ref=f"masks/{r.record_id}_{k}.png")
            for k in range(parts_per_record)
        ]
        for r in manifest.records
    }


class TestBuildProbeSet:
    def test_single_part_is_always_chosen(self):
        manifest = make_manifest([make_record("r0")])
        annotations = {"r0": [BodyPartAnnotation("head", "masks/r0_head.png")]}
        requests = build_probe_set(manifest, annotations, seed=1)
        assert len(requests) == 1
        assert requests[0].chosen_body_part == "head"

    def test_prompt_is_caption_verbatim(self):
        record = make_record("r0", prompt="A woman balancing a pizza")
        requests = build_probe_set(make_manifest([record]), annotations_for(make_manifest([record])), seed=1)
        assert requests[0].prompt == "A woman balancing a pizza"

    def test_fixed_seed_reproduces_request_list(self):
        manifest = make_manifest([make_record(f"r{i}") for i in range(20)])
        annotations = annotations_for(manifest)
        assert build_probe_set(manifest, annotations, seed=9) == build_probe_set(manifest, annotations, seed=9)

    def test_records_without_annotations_skipped_with_warning(self, caplog):
        manifest = make_manifest([make_record("r0"), make_record("r1", group="man")])
        annotations = {"r0": [BodyPartAnnotation("head", "m.png")]}
        with caplog.at_level("WARNING"):
            requests = build_probe_set(manifest, annotations, seed=2)
        assert [r.record_id for r in requests] == ["r0"]
        assert "r1" in caplog.text

    def test_part_choice_is_roughly_uniform(self):
        manifest = make_manifest([make_record(f"r{i}", group=("woman", "man")[i % 2]) for i in range(1000)])
        annotations = annotations_for(manifest, parts_per_record=5)
        requests = build_probe_set(manifest, annotations, seed=33)
        counts = Counter(r.chosen_body_part for r in requests)
        # 3 sigma around 200 for Binomial(1000, 1/5)
        assert set(counts) == {"head", "left_hand", "right_hand", "left_foot", "right_foot"}
        for label, count in counts.items():
            assert 162 <= count <= 238, (label, count)


def preds(groups_by_id: dict[str, str | None]) -> list[PredictionRecord]:
    # caption fields keep records valid when a prediction carries no group term
    return [
        PredictionRecord(
            record_id=rid,
            true_group="man",
            pred_group=group,
            pred_caption="a person outside",
            gt_caption="a person outside",
        )
        for rid, group in groups_by_id.items()
    ]


class TestProbeReport:
    def test_identical_prediction_sets_have_zero_delta(self):
        groups = {f"r{i}": ("man" if i % 3 else "woman") for i in range(30)}
        result = probe_report(preds(groups), preds(groups), GENDER)
        assert result.delta == 0.0
        assert result.ratio_orig == result.ratio_inp

    def test_table_style_shift(self):
        orig = {f"r{i}": ("man" if i < 25 else "woman") for i in range(35)}  # 25/10 -> 2.5
        inp = {f"r{i}": ("man" if i < 8 else "woman") for i in range(18)}  # 8/10 -> 0.8
        inp = {f"r{i}": inp.get(f"r{i}", None) for i in range(35)}
        result = probe_report(preds(orig), preds(inp), GENDER)
        assert result.ratio_orig == pytest.approx(2.5)
        assert result.ratio_inp == pytest.approx(0.8)
        assert round_half_up(result.delta, 1) == 68.0

    def test_record_id_mismatch_rejected(self):
        with pytest.raises(ValueError, match="different record_ids"):
            probe_report(preds({"r0": "man"}), preds({"r1": "man"}), GENDER)

    def test_groupless_predictions_do_not_count(self):
        orig = {"r0": "man", "r1": "woman", "r2": "man"}
        inp = {"r0": "man", "r1": "woman", "r2": None}
        result = probe_report(preds(orig), preds(inp), GENDER)
        assert result.ratio_orig == pytest.approx(2.0)
        assert result.ratio_inp == pytest.approx(1.0)


class TestProbeRequestFile:
    def test_round_trip(self, tmp_path):
        manifest = make_manifest([make_record(f"r{i}") for i in range(5)])
        requests = build_probe_set(manifest, annotations_for(manifest), seed=3)
        path = tmp_path / "requests.jsonl"
        write_probe_requests(requests, path)
        assert read_probe_requests(path) == requests
