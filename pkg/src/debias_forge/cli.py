"""debias-forge command line: the pipeline as cacheable, deterministic stages."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__
from .builder import (
    build_augment,
    build_synthetic,
    check_balance,
    format_balance_table,
    oversample,
    subsample,
    write_balance_report,
)
from .errors import ManifestError, PartialFailure, PipelineError, ProviderError
from .manifest import (
    DatasetManifest,
    DatasetRecord,
    GroupSet,
    load_manifest,
    select_inpaint_targets,
    write_manifest,
)
from .metrics import (
    AttackerConfig,
    BiasReport,
    directed_ratio,
    format_bias_summary,
    leakage,
    lic,
    ratio,
    read_predictions,
    split_by_hash,
    write_bias_report,
)
from .probe import (
    BodyPartAnnotation,
    build_probe_set,
    probe_report,
    write_probe_report,
    write_probe_requests,
)
from .prompt_rewrite import GroupLexicon, insert_group_adjective, load_lexicon, rewrite_prompt
from .providers import (
    ENDPOINT_ENV_VAR,
    Candidate,
    CandidateSet,
    GenerationParams,
    ProviderConfig,
    make_provider,
)
from .scoring import ALL_FILTERS, read_score_tables, score_candidate_set, write_score_tables
from .selection import FilterWeights, read_selections, write_selections
from .serde import read_header_and_rows

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PROVIDER = 2
EXIT_PARTIAL = 3


@dataclass(frozen=True)
class PipelineConfig:
    """Validated effective configuration for all subcommands."""

    groups: tuple[str, ...]
    lexicon_ref: str
    rewrite_mode: str
    plan: tuple[GenerationParams, ...]
    filters: frozenset[str]
    weights: FilterWeights
    detection_threshold: float
    second_person_threshold_px: int
    color_eps: float
    seed: int
    attacker: AttackerConfig
    provider: ProviderConfig
    manifest_path: Path
    out_root: Path
    raw: Mapping[str, Any]

    def digest(self) -> str:
        # transport/execution knobs cannot change artifacts, so they stay out
        semantic = dict(self.raw)
        semantic["provider"] = {
            k: v
            for k, v in dict(self.raw["provider"]).items()
            if k not in ("timeout", "retries", "concurrency")
        }
        canonical = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def header_extra(self) -> dict[str, str]:
        return {"config_digest": self.digest(), "tool_version": __version__}

    def lexicon(self) -> GroupLexicon:
        return load_lexicon(self.lexicon_ref)


_DEFAULTS: dict[str, Any] = {
    "lexicon": "builtin:binary_gender",
    "rewrite_mode": "substitute",
    "plan": [
        {"guidance_scale": 7.5, "num_images": 10, "seed": 0},
        {"guidance_scale": 9.5, "num_images": 10, "seed": 1},
        {"guidance_scale": 15.0, "num_images": 10, "seed": 2},
    ],
    "filters": ["prompt", "object", "color"],
    "weights": {"prompt": 1.0, "object": 1.0, "color": 1.0},
    "detection_threshold": 0.5,
    "second_person_threshold_px": 55000,
    "color_eps": 1e-6,
    "seed": 0,
    "attacker": {"learning_rate": 0.1, "epochs": 500, "l2": 1e-4, "seed": 0, "test_fraction": 0.3},
    "provider": {"mode": "fixture", "timeout": 30.0, "retries": 3, "embedding_dim": 64, "concurrency": 1},
}


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Load, override, and validate a config file; fail fast on any bad field."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")

    merged: dict[str, Any] = {}
    for key, default in _DEFAULTS.items():
        value = raw.get(key, default)
        if isinstance(default, dict) and isinstance(value, dict):
            value = {**default, **value}
        merged[key] = value
    for key in raw:
        if key not in merged and key not in ("groups", "paths"):
            raise ValueError(f"unknown config field {key!r}")
    merged["groups"] = raw.get("groups")
    merged["paths"] = raw.get("paths", {})

    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "fixture_root":
                merged["provider"] = {**merged["provider"], "mode": "fixture", "fixture_root": value, "endpoint": None}
            elif key == "endpoint":
                merged["provider"] = {**merged["provider"], "mode": "remote", "endpoint": value, "fixture_root": None}
            elif key == "filters":
                merged["filters"] = value
            elif key == "seed":
                merged["seed"] = value
                merged["attacker"] = {**merged["attacker"], "seed": value}
            else:
                merged[key] = value

    if not isinstance(merged["groups"], list) or len(merged["groups"]) < 2:
        raise ValueError("config requires a 'groups' list with >= 2 entries")
    filters = frozenset(merged["filters"])
    if not filters or not filters <= ALL_FILTERS:
        raise ValueError(f"filters must be a non-empty subset of {sorted(ALL_FILTERS)}")
    weights_map = dict(merged["weights"])
    weights = FilterWeights(
        c_prompt=float(weights_map.get("prompt", 0.0)),
        c_object=float(weights_map.get("object", 0.0)),
        c_color=float(weights_map.get("color", 0.0)),
    )
    for name in ALL_FILTERS - filters:
        if weights.weight(name) != 0.0:
            weights_map[name] = 0.0
    weights = FilterWeights(
        c_prompt=float(weights_map.get("prompt", 0.0)),
        c_object=float(weights_map.get("object", 0.0)),
        c_color=float(weights_map.get("color", 0.0)),
    )
    if all(weights.weight(name) == 0.0 for name in filters):
        raise ValueError("at least one active filter must have positive weight")
    merged["weights"] = {name: weights.weight(name) for name in ("prompt", "object", "color")}
    merged["filters"] = sorted(filters)

    plan = tuple(
        GenerationParams(
            guidance_scale=float(entry["guidance_scale"]),
            num_images=int(entry["num_images"]),
            seed=int(entry.get("seed", i)),
        )
        for i, entry in enumerate(merged["plan"])
    )
    if not plan:
        raise ValueError("generation plan must not be empty")

    if merged["rewrite_mode"] not in ("substitute", "insert"):
        raise ValueError("rewrite_mode must be substitute|insert")
    if merged["detection_threshold"] < 0 or merged["detection_threshold"] > 1:
        raise ValueError("detection_threshold must lie in [0, 1]")
    if merged["second_person_threshold_px"] < 0:
        raise ValueError("second_person_threshold_px must be >= 0")
    if merged["color_eps"] <= 0:
        raise ValueError("color_eps must be positive")

    provider_map = dict(merged["provider"])
    if provider_map.get("mode") == "remote" and not provider_map.get("endpoint"):
        provider_map["endpoint"] = os.environ.get(ENDPOINT_ENV_VAR)
    base = path.parent

    def respath(value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(str(value))
        return p if p.is_absolute() else base / p

    provider = ProviderConfig(
        mode=provider_map.get("mode", "fixture"),
        endpoint=provider_map.get("endpoint"),
        fixture_root=respath(provider_map.get("fixture_root")),
        timeout=float(provider_map.get("timeout", 30.0)),
        retries=int(provider_map.get("retries", 3)),
        embedding_dim=int(provider_map.get("embedding_dim", 64)),
        concurrency=int(provider_map.get("concurrency", 1)),
    )
    paths = merged["paths"]
    if "manifest" not in paths or "out_root" not in paths:
        raise ValueError("config paths must provide 'manifest' and 'out_root'")
    attacker_map = merged["attacker"]
    attacker = AttackerConfig(
        learning_rate=float(attacker_map["learning_rate"]),
        epochs=int(attacker_map["epochs"]),
        l2=float(attacker_map["l2"]),
        seed=int(attacker_map["seed"]),
        test_fraction=float(attacker_map["test_fraction"]),
    )
    merged["provider"] = {
        "mode": provider.mode,
        "endpoint": provider.endpoint,
        "fixture_root": provider_map.get("fixture_root"),
        "timeout": provider.timeout,
        "retries": provider.retries,
        "embedding_dim": provider.embedding_dim,
        "concurrency": provider.concurrency,
    }
    merged["plan"] = [
        {"guidance_scale": p.guidance_scale, "num_images": p.num_images, "seed": p.seed} for p in plan
    ]

    return PipelineConfig(
        groups=tuple(merged["groups"]),
        lexicon_ref=str(merged["lexicon"]),
        rewrite_mode=merged["rewrite_mode"],
        plan=plan,
        filters=filters,
        weights=weights,
        detection_threshold=float(merged["detection_threshold"]),
        second_person_threshold_px=int(merged["second_person_threshold_px"]),
        color_eps=float(merged["color_eps"]),
        seed=int(merged["seed"]),
        attacker=attacker,
        provider=provider,
        manifest_path=respath(paths["manifest"]),
        out_root=respath(paths["out_root"]),
        raw=merged,
    )


def _echo_config(config: PipelineConfig) -> None:
    config.out_root.mkdir(parents=True, exist_ok=True)
    payload = {"config": dict(config.raw), "config_digest": config.digest(), "tool_version": __version__}
    (config.out_root / "effective_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _load_pipeline_manifest(config: PipelineConfig) -> DatasetManifest:
    lexicon = config.lexicon() if config.rewrite_mode == "substitute" else None
    manifest = load_manifest(config.manifest_path, strict=False, lexicon=lexicon)
    if manifest.group_set.groups != config.groups:
        raise ValueError(
            f"config groups {list(config.groups)} != manifest groups {list(manifest.group_set.groups)}"
        )
    return manifest


def _counterfactual_prompt(record: DatasetRecord, group: str, config: PipelineConfig, lexicon: GroupLexicon) -> str:
    if config.rewrite_mode == "substitute":
        return rewrite_prompt(record.prompt, record.source_group, group, lexicon)
    person_terms = [t for g in lexicon.groups for t in lexicon.terms[g]] + ["person", "people"]
    return insert_group_adjective(record.prompt, group, person_terms)


def _store_dir(config: PipelineConfig, record_id: str, group: str) -> Path:
    return config.out_root / "candidates" / record_id / group


def _persist_candidates(config: PipelineConfig, cset: CandidateSet) -> None:
    """Copy candidate images into the run's store and write its index entry."""
    directory = _store_dir(config, cset.record_id, cset.target_group)
    index_path = directory / "candidates.json"
    if index_path.exists():
        existing = json.loads(index_path.read_text(encoding="utf-8"))
        if existing.get("request_hash") == cset.request_hash and all(
            (config.out_root / c["image_ref"]).exists() for c in existing.get("candidates", [])
        ):
            return
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for candidate in cset.candidates:
        rel = f"candidates/{cset.record_id}/{cset.target_group}/{candidate.index:03d}.png"
        target = config.out_root / rel
        source = Path(candidate.image_ref)
        if source != target:
            shutil.copyfile(source, target)
            sidecar = source.with_name(source.name + ".detections.json")
            if sidecar.exists():
                shutil.copyfile(sidecar, target.with_name(target.name + ".detections.json"))
        entries.append(
            {
                "index": candidate.index,
                "image_ref": rel,
                "guidance_scale": candidate.guidance_scale,
                "image_slot": candidate.image_slot,
                "seed": candidate.seed,
            }
        )
    payload = {
        "record_id": cset.record_id,
        "target_group": cset.target_group,
        "prompt": cset.prompt,
        "request_hash": cset.request_hash,
        "candidates": entries,
        **config.header_extra(),
    }
    index_path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_candidate_store(out_root: Path) -> dict[tuple[str, str], CandidateSet]:
    """Read every stored candidate set; image refs come back absolute."""
    store: dict[tuple[str, str], CandidateSet] = {}
    base = out_root / "candidates"
    if not base.exists():
        return store
    for index_path in sorted(base.glob("*/*/candidates.json")):
        payload = json.loads(index_path.read_text(encoding="utf-8"))
        candidates = tuple(
            Candidate(
                index=entry["index"],
                image_ref=str(out_root / entry["image_ref"]),
                guidance_scale=entry["guidance_scale"],
                image_slot=entry["image_slot"],
                seed=entry["seed"],
            )
            for entry in payload["candidates"]
        )
        cset = CandidateSet(
            record_id=payload["record_id"],
            target_group=payload["target_group"],
            prompt=payload["prompt"],
            candidates=candidates,
            request_hash=payload["request_hash"],
        )
        store[(cset.record_id, cset.target_group)] = cset
    return store


def cmd_generate(config: PipelineConfig, keep_going: bool = False) -> int:
    _echo_config(config)
    manifest = _load_pipeline_manifest(config)
    lexicon = config.lexicon()
    provider = make_provider(config.provider, image_root=manifest.root, store_root=config.out_root)
    pairs = [(record, group) for record in manifest.records for group in config.groups]

    def generate_pair(record: DatasetRecord, group: str) -> None:
        masks = select_inpaint_targets(record, config.second_person_threshold_px)
        prompt = _counterfactual_prompt(record, group, config, lexicon)
        cset = provider.request_candidates(record, group, prompt, [m.mask_ref for m in masks], config.plan)
        _persist_candidates(config, cset)

    failures: dict[str, str] = {}
    done = 0
    if config.provider.concurrency > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.provider.concurrency) as pool:
            futures = {
                pool.submit(generate_pair, record, group): f"{record.record_id}/{group}"
                for record, group in pairs
            }
            for future, pair in futures.items():
                try:
                    future.result()
                    done += 1
                except (PipelineError, ValueError) as exc:
                    failures[pair] = str(exc)
                    logger.error("pair %s failed: %s", pair, exc)
        if failures and not keep_going:
            raise PartialFailure(f"{len(failures)} pair(s) failed", failures)
    else:
        for record, group in pairs:
            pair = f"{record.record_id}/{group}"
            try:
                generate_pair(record, group)
                done += 1
            except (PipelineError, ValueError) as exc:
                failures[pair] = str(exc)
                logger.error("pair %s failed: %s", pair, exc)
                if not keep_going:
                    raise
    print(f"generate: {done} candidate set(s) written, {len(failures)} failure(s)")
    for pair, message in sorted(failures.items()):
        print(f"  FAILED {pair}: {message}")
    if failures:
        raise PartialFailure(f"{len(failures)} pair(s) failed", failures)
    return EXIT_OK


def cmd_score(config: PipelineConfig) -> int:
    _echo_config(config)
    manifest = _load_pipeline_manifest(config)
    store = load_candidate_store(config.out_root)
    if not store and manifest.records:
        raise ValueError(f"no candidate store under {config.out_root}; run generate first")
    provider = make_provider(config.provider, image_root=manifest.root, store_root=config.out_root)
    by_id = {record.record_id: record for record in manifest.records}
    tables = []
    for key in sorted(store):
        record = by_id.get(key[0])
        if record is None:
            raise ValueError(f"candidate store references unknown record {key[0]!r}")
        tables.append(
            score_candidate_set(
                record,
                store[key],
                provider,
                config.filters,
                image_root=manifest.root,
                detection_threshold=config.detection_threshold,
                color_eps=config.color_eps,
            )
        )
    write_score_tables(tables, config.out_root / "scores.jsonl", config.header_extra())
    print(f"score: {len(tables)} table(s) written to {config.out_root / 'scores.jsonl'}")
    return EXIT_OK


def cmd_select(config: PipelineConfig) -> int:
    _echo_config(config)
    tables = read_score_tables(config.out_root / "scores.jsonl")
    selected = write_selections(
        tables, config.weights, config.out_root / "selections.jsonl", config.header_extra()
    )
    print(f"select: {len(selected)} selection(s) written to {config.out_root / 'selections.jsonl'}")
    return EXIT_OK


def _relativize(manifest: DatasetManifest, config: PipelineConfig, source_root: Path) -> DatasetManifest:
    """Rebase every image ref so the written manifest resolves from out_root."""
    rebased = []
    for record in manifest.records:
        ref = Path(record.image_ref)
        if not ref.is_absolute():
            ref = source_root / ref if not record.is_synthetic else config.out_root / ref
        new_ref = os.path.relpath(ref, config.out_root)
        masks = tuple(
            dataclasses.replace(
                m,
                mask_ref=os.path.relpath(
                    m.mask_ref if Path(m.mask_ref).is_absolute() else source_root / m.mask_ref,
                    config.out_root,
                ),
            )
            for m in record.person_masks
        )
        rebased.append(dataclasses.replace(record, image_ref=new_ref, person_masks=masks))
    return dataclasses.replace(manifest, records=tuple(rebased))


def cmd_build(config: PipelineConfig, kind: str) -> int:
    _echo_config(config)
    manifest = _load_pipeline_manifest(config)
    if kind in ("synthetic", "augment"):
        store = load_candidate_store(config.out_root)
        selections = read_selections(config.out_root / "selections.jsonl")
        builder = build_synthetic if kind == "synthetic" else build_augment
        built = builder(manifest, store, selections)
    elif kind == "oversample":
        built = oversample(manifest, config.seed)
    elif kind == "subsample":
        built = subsample(manifest, config.seed)
    else:
        raise ValueError(f"unknown build kind {kind!r}")
    built = _relativize(built, config, manifest.root)
    out_path = config.out_root / f"{kind}.jsonl"
    write_manifest(built, out_path, config.header_extra())
    print(f"build: {len(built.records)} record(s) written to {out_path}")
    return EXIT_OK


def cmd_check_balance(manifest_path: Path, config: PipelineConfig | None = None) -> int:
    manifest = load_manifest(manifest_path)
    report = check_balance(manifest)
    print(format_balance_table(report, manifest.group_set.groups))
    if config is not None:
        _echo_config(config)
        write_balance_report(
            report, manifest.group_set.groups, config.out_root / "balance.jsonl", config.header_extra()
        )
        print(f"balance report written to {config.out_root / 'balance.jsonl'}")
    return EXIT_OK


def cmd_evaluate(config: PipelineConfig, predictions_path: Path) -> int:
    _echo_config(config)
    records = read_predictions(predictions_path)
    if not records:
        raise ValueError(f"no prediction records in {predictions_path}")
    group_set = GroupSet(groups=config.groups, lexicon_ref=config.lexicon_ref)

    ratio_value = None
    grouped = [r.pred_group for r in records if r.pred_group is not None]
    if grouped and len(config.groups) == 2:
        try:
            ratio_value = ratio(grouped, group_set)
        except ValueError as exc:
            # degenerate counts are reported as "undefined", not a hard failure
            logger.warning("ratio undefined: %s", exc)

    lk_model = lk_data = leak = lic_value = None
    if all(r.pred_objects is not None and r.gt_objects is not None for r in records):
        train, test = split_by_hash(records, config.attacker.test_fraction, config.attacker.seed)
        result = leakage(train, test, "objects", config.attacker)
        lk_model, lk_data, leak = result.lk_model, result.lk_data, result.leakage
    if all(r.pred_caption is not None and r.gt_caption is not None for r in records):
        lic_value = lic(
            [r.pred_caption for r in records],
            [r.gt_caption for r in records],
            [r.true_group for r in records],
            config.attacker,
            lexicon=config.lexicon(),
        )

    report = BiasReport(
        ratio=ratio_value,
        lk_model=lk_model,
        lk_data=lk_data,
        leakage=leak,
        lic=lic_value,
        config={"attacker": config.attacker.as_dict(), "groups": list(config.groups)},
    )
    write_bias_report(report, config.out_root / "bias_report.jsonl", config.header_extra())
    print(format_bias_summary(report))
    return EXIT_OK


def read_body_parts(path: Path) -> dict[str, list[BodyPartAnnotation]]:
    header, rows = read_header_and_rows(path)
    if "record_id" in header:
        rows = [(1, header)] + rows
    annotations: dict[str, list[BodyPartAnnotation]] = {}
    for _, row in rows:
        annotations[row["record_id"]] = [
            BodyPartAnnotation(label=p["label"], mask_ref=p["mask_ref"]) for p in row["parts"]
        ]
    return annotations


def cmd_probe(
    config: PipelineConfig,
    preds_orig: Path | None = None,
    preds_inp: Path | None = None,
    build_requests: bool = False,
    body_parts: Path | None = None,
) -> int:
    _echo_config(config)
    if build_requests:
        if body_parts is None:
            raise ValueError("probe --build-requests needs --body-parts")
        manifest = load_manifest(config.manifest_path)
        requests = build_probe_set(manifest, read_body_parts(body_parts), config.seed)
        out_path = config.out_root / "probe_requests.jsonl"
        write_probe_requests(requests, out_path, config.header_extra())
        skipped = len(manifest.records) - len(requests)
        print(f"probe: {len(requests)} request(s) written to {out_path} ({skipped} record(s) skipped)")
        return EXIT_OK
    if preds_orig is None or preds_inp is None:
        raise ValueError("probe needs two prediction files (original and inpainted)")
    group_set = GroupSet(groups=config.groups, lexicon_ref=config.lexicon_ref)
    lexicon = config.lexicon()

    def with_caption_groups(records):
        # captioning models signal the group through caption terms
        from .prompt_rewrite import detect_group

        out = []
        for record in records:
            if record.pred_group is None and record.pred_caption is not None:
                detected = detect_group(record.pred_caption, lexicon)
                if isinstance(detected, str):
                    record = dataclasses.replace(record, pred_group=detected)
            out.append(record)
        return out

    result = probe_report(
        with_caption_groups(read_predictions(preds_orig)),
        with_caption_groups(read_predictions(preds_inp)),
        group_set,
    )
    write_probe_report(result, config.out_root / "probe_report.jsonl", header_extra=config.header_extra())
    print(
        f"ratio_orig={result.ratio_orig:.6g} ratio_inp={result.ratio_inp:.6g} "
        f"delta={result.delta:.6g}"
    )
    return EXIT_OK


def cmd_pipeline(config: PipelineConfig, kind: str, keep_going: bool = False) -> int:
    cmd_generate(config, keep_going=keep_going)
    cmd_score(config)
    cmd_select(config)
    cmd_build(config, kind)
    if kind in ("synthetic", "augment", "oversample", "subsample"):
        cmd_check_balance(config.out_root / f"{kind}.jsonl", config)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="debias-forge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"debias-forge {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="pipeline config file (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--fixture-root", default=None, help="fixture provider root (switches to fixture mode)")
        p.add_argument("--provider-endpoint", default=None, help="sidecar URL (switches to remote mode)")
        p.add_argument("--filters", default=None, help="comma-separated active filters, e.g. prompt,object")

    p = sub.add_parser("generate", help="generate candidate inpaintings for every (record, group) pair")
    add_common(p)
    p.add_argument("--keep-going", action="store_true", help="continue past per-record failures")

    add_common(sub.add_parser("score", help="score all stored candidates with the active filters"))
    add_common(sub.add_parser("select", help="pick the best candidate per pair by weighted rank sum"))

    p = sub.add_parser("build", help="construct a training manifest")
    add_common(p)
    p.add_argument("--kind", choices=("synthetic", "augment", "oversample", "subsample"), default="synthetic")

    p = sub.add_parser("evaluate", help="compute bias metrics from a predictions file")
    add_common(p)
    p.add_argument("predictions", help="line-delimited predictions file")

    p = sub.add_parser("probe", help="prediction-shift probe report or probe request building")
    add_common(p)
    p.add_argument("preds_orig", nargs="?", help="predictions on the original test set")
    p.add_argument("preds_inp", nargs="?", help="predictions on the inpainted test set")
    p.add_argument("--build-requests", action="store_true", help="emit probe inpainting requests instead")
    p.add_argument("--body-parts", default=None, help="body-part annotations file")

    p = sub.add_parser("check-balance", help="group-balance report for a manifest")
    p.add_argument("manifest", help="manifest file to audit")
    p.add_argument("--config", required=False, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fixture-root", default=None)
    p.add_argument("--provider-endpoint", default=None)
    p.add_argument("--filters", default=None)

    p = sub.add_parser("pipeline", help="generate, score, select, build, and check balance")
    add_common(p)
    p.add_argument("--kind", choices=("synthetic", "augment", "oversample", "subsample"), default="synthetic")
    p.add_argument("--keep-going", action="store_true")
    return parser


def _overrides_from(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {
        "seed": args.seed,
        "fixture_root": args.fixture_root,
        "endpoint": args.provider_endpoint,
    }
    if args.filters:
        overrides["filters"] = [f.strip() for f in args.filters.split(",") if f.strip()]
    return overrides


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        config = load_config(args.config, _overrides_from(args)) if args.config else None
        if args.command == "generate":
            return cmd_generate(config, keep_going=args.keep_going)
        if args.command == "score":
            return cmd_score(config)
        if args.command == "select":
            return cmd_select(config)
        if args.command == "build":
            return cmd_build(config, args.kind)
        if args.command == "evaluate":
            return cmd_evaluate(config, Path(args.predictions))
        if args.command == "probe":
            return cmd_probe(
                config,
                Path(args.preds_orig) if args.preds_orig else None,
                Path(args.preds_inp) if args.preds_inp else None,
                build_requests=args.build_requests,
                body_parts=Path(args.body_parts) if args.body_parts else None,
            )
        if args.command == "check-balance":
            return cmd_check_balance(Path(args.manifest), config)
        if args.command == "pipeline":
            return cmd_pipeline(config, args.kind, keep_going=args.keep_going)
        raise ValueError(f"unknown command {args.command!r}")
    except PartialFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (ManifestError, PipelineError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
