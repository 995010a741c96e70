from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpus import build_fixture_corpus  # noqa: E402

from debias_forge.manifest import DatasetManifest, DatasetRecord, GroupSet, PersonMask
from debias_forge.providers import Candidate, CandidateSet


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("corpus")
    build_fixture_corpus(root)
    return root


@pytest.fixture(scope="session")
def corpus_manifest_path(corpus_root: Path) -> Path:
    return corpus_root / "manifest.jsonl"


def make_record(
    record_id: str,
    group: str = "woman",
    attributes: tuple[str, ...] = ("dog",),
    prompt: str | None = None,
    split: str = "train",
    mask_areas: tuple[int, ...] = (120000,),
) -> DatasetRecord:
    return DatasetRecord(
        record_id=record_id,
        image_ref=f"images/{record_id}.png",
        prompt=prompt if prompt is not None else f"A {group} with a {' and a '.join(sorted(attributes)) or 'hat'}",
        source_group=group,
        split=split,
        attributes=frozenset(attributes),
        person_masks=tuple(
            PersonMask(mask_ref=f"masks/{record_id}_m{i}.png", bbox_area_px=area)
            for i, area in enumerate(mask_areas)
        ),
    )


def make_manifest(records, groups=("woman", "man"), kind="original") -> DatasetManifest:
    return DatasetManifest(
        kind=kind,
        group_set=GroupSet(groups=tuple(groups), lexicon_ref="builtin:binary_gender"),
        records=tuple(records),
    )


def make_candidate_set(record_id: str, target_group: str, prompt: str, m: int = 3) -> CandidateSet:
    candidates = tuple(
        Candidate(
            index=j,
            image_ref=f"candidates/{record_id}/{target_group}/{j:03d}.png",
            guidance_scale=7.5,
            image_slot=j,
            seed=0,
        )
        for j in range(1, m + 1)
    )
    return CandidateSet(
        record_id=record_id,
        target_group=target_group,
        prompt=prompt,
        candidates=candidates,
        request_hash="fixture",
    )
