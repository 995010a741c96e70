"""Bias metrics: prediction ratio, attacker-based leakage, and caption leakage (LIC).

The group attacker is a multinomial logistic regression over bag features,
trained natively by full-batch gradient descent so the whole metric stack is
deterministic and dependency-free.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .manifest import GroupSet
from .prompt_rewrite import GroupLexicon, word_tokens
from .serde import dump_compact, fmt_float, make_header, read_header_and_rows, write_lines

# Shared stand-in for any group term in caption features; the angle brackets
# keep it outside the letter-only token alphabet.
GROUP_PLACEHOLDER = "<group>"


@dataclass(frozen=True)
class PredictionRecord:
    """Model output and ground truth for one record, in object or caption shape."""

    record_id: str
    true_group: str
    pred_group: str | None = None
    pred_objects: frozenset[str] | None = None
    gt_objects: frozenset[str] | None = None
    pred_caption: str | None = None
    gt_caption: str | None = None

    def __post_init__(self) -> None:
        has_objects = self.pred_objects is not None and self.gt_objects is not None
        has_captions = self.pred_caption is not None and self.gt_caption is not None
        if not (has_objects or has_captions or self.pred_group is not None):
            raise ValueError(
                f"record {self.record_id!r} carries neither object, caption, nor group predictions"
            )


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    vocabulary_id: str

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        ordered = tuple(sorted(set(tokens)))
        digest = hashlib.sha256("\x00".join(ordered).encode("utf-8")).hexdigest()[:12]
        return cls(tokens=ordered, vocabulary_id=digest)

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    vocabulary_id: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError("feature vector must be 1-D")
        if values.size and float(values.min()) < 0:
            raise ValueError("feature values must be non-negative")


@dataclass(frozen=True)
class AttackerConfig:
    """Attacker hyperparameters; echoed into reports for reproducibility."""

    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    seed: int = 0
    test_fraction: float = 0.3

    def as_dict(self) -> dict[str, float | int]:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "l2": self.l2,
            "seed": self.seed,
            "test_fraction": self.test_fraction,
        }


def featurize_objects(objects: Iterable[str], vocabulary: Vocabulary) -> FeatureVector:
    """Binary bag-of-attributes vector; out-of-vocabulary labels are dropped."""
    values = np.zeros(len(vocabulary), dtype=np.float64)
    index = vocabulary.index
    for label in objects:
        position = index.get(label)
        if position is not None:
            values[position] = 1.0
    return FeatureVector(values=values, vocabulary_id=vocabulary.vocabulary_id)


def caption_tokens(caption: str, lexicon: GroupLexicon) -> list[str]:
    """Lowercased word tokens with every group term collapsed to one placeholder."""
    group_terms = {t for g in lexicon.groups for t in lexicon.terms[g]}
    out = []
    for _, _, surface in word_tokens(caption):
        token = surface.lower()
        out.append(GROUP_PLACEHOLDER if token in group_terms else token)
    return out


def featurize_caption(caption: str, vocabulary: Vocabulary, lexicon: GroupLexicon) -> FeatureVector:
    """Bag-of-words counts over masked caption tokens."""
    values = np.zeros(len(vocabulary), dtype=np.float64)
    index = vocabulary.index
    for token in caption_tokens(caption, lexicon):
        position = index.get(token)
        if position is not None:
            values[position] += 1.0
    return FeatureVector(values=values, vocabulary_id=vocabulary.vocabulary_id)


def build_object_vocabulary(object_sets: Iterable[Iterable[str]]) -> Vocabulary:
    return Vocabulary.from_tokens(label for objects in object_sets for label in objects)


def build_caption_vocabulary(captions: Iterable[str], lexicon: GroupLexicon) -> Vocabulary:
    return Vocabulary.from_tokens(
        token for caption in captions for token in caption_tokens(caption, lexicon)
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def attacker_loss(
    weights: np.ndarray, bias: np.ndarray, features: np.ndarray, labels: np.ndarray, l2: float
) -> float:
    """Mean cross-entropy plus (l2/2)·||W||^2; the bias is not regularized."""
    probs = _softmax(features @ weights.T + bias)
    n = features.shape[0]
    nll = -float(np.log(probs[np.arange(n), labels] + 1e-300).sum()) / n
    return nll + 0.5 * l2 * float(np.sum(weights * weights))


def attacker_gradients(
    weights: np.ndarray, bias: np.ndarray, features: np.ndarray, labels: np.ndarray, l2: float
) -> tuple[np.ndarray, np.ndarray]:
    probs = _softmax(features @ weights.T + bias)
    n = features.shape[0]
    probs[np.arange(n), labels] -= 1.0
    grad_w = probs.T @ features / n + l2 * weights
    grad_b = probs.sum(axis=0) / n
    return grad_w, grad_b


@dataclass
class GroupClassifier:
    """Multinomial logistic regression attacker predicting a group from features."""

    weights: np.ndarray
    bias: np.ndarray
    groups: tuple[str, ...]
    vocabulary_id: str
    config: AttackerConfig
    loss_history: tuple[float, ...] = field(default=(), compare=False)

    def predict_proba(self, features: np.ndarray | FeatureVector) -> np.ndarray:
        if isinstance(features, FeatureVector):
            if features.vocabulary_id != self.vocabulary_id:
                raise ValueError(
                    f"feature vocabulary {features.vocabulary_id} != classifier vocabulary {self.vocabulary_id}"
                )
            features = features.values[None, :]
        features = np.asarray(features, dtype=np.float64)
        squeeze = features.ndim == 1
        if squeeze:
            features = features[None, :]
        probs = _softmax(features @ self.weights.T + self.bias)
        return probs[0] if squeeze else probs

    def predict(self, features: np.ndarray | FeatureVector) -> np.ndarray | str:
        probs = self.predict_proba(features)
        if probs.ndim == 1:
            return self.groups[int(np.argmax(probs))]
        return np.asarray([self.groups[i] for i in np.argmax(probs, axis=1)])


def train_group_classifier(
    data: Sequence[tuple[FeatureVector, str]],
    config: AttackerConfig = AttackerConfig(),
    seed: int | None = None,
) -> GroupClassifier:
    """Fit the attacker by full-batch gradient descent with L2 regularization.

    Fully deterministic: zero initialization, fixed reduction order. A
    non-finite loss (step size too large for the data) raises instead of
    diverging silently.
    """
    if not data:
        raise ValueError("no training data")
    vocabulary_id = data[0][0].vocabulary_id
    groups = tuple(sorted({label for _, label in data}))
    if len(groups) < 2:
        raise ValueError(f"attacker training needs >= 2 groups, got {list(groups)}")
    for fv, _ in data:
        if fv.vocabulary_id != vocabulary_id:
            raise ValueError("mixed vocabularies in training data")

    if seed is not None:
        config = AttackerConfig(
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            l2=config.l2,
            seed=seed,
            test_fraction=config.test_fraction,
        )
    features = np.stack([fv.values for fv, _ in data])
    group_index = {g: i for i, g in enumerate(groups)}
    labels = np.asarray([group_index[label] for _, label in data], dtype=np.int64)

    weights = np.zeros((len(groups), features.shape[1]), dtype=np.float64)
    bias = np.zeros(len(groups), dtype=np.float64)
    history = []
    # divergence is detected via the loss guard, so let overflow produce inf quietly
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(config.epochs):
            loss = attacker_loss(weights, bias, features, labels, config.l2)
            if not math.isfinite(loss):
                raise ValueError(
                    f"non-finite training loss (learning rate {config.learning_rate} too large?)"
                )
            history.append(loss)
            grad_w, grad_b = attacker_gradients(weights, bias, features, labels, config.l2)
            weights -= config.learning_rate * grad_w
            bias -= config.learning_rate * grad_b
    return GroupClassifier(
        weights=weights,
        bias=bias,
        groups=groups,
        vocabulary_id=vocabulary_id,
        config=config,
        loss_history=tuple(history),
    )


@dataclass(frozen=True)
class LeakageResult:
    lk_model: float
    lk_data: float

    @property
    def leakage(self) -> float:
        return self.lk_model - self.lk_data


def _balanced_subsample(
    items: Sequence[tuple[FeatureVector, str]], seed: int
) -> list[tuple[FeatureVector, str]]:
    """Equalize group counts by seeded subsampling, keeping original order."""
    import random

    by_group: dict[str, list[int]] = {}
    for position, (_, label) in enumerate(items):
        by_group.setdefault(label, []).append(position)
    floor = min(len(v) for v in by_group.values())
    rng = random.Random(seed)
    keep: list[int] = []
    for label in sorted(by_group):
        keep.extend(rng.sample(by_group[label], floor))
    return [items[i] for i in sorted(keep)]


def _attacker_score(classifier: GroupClassifier, test: Sequence[tuple[FeatureVector, str]]) -> float:
    """Mean confidence-weighted correctness of group predictions (the LK statistic)."""
    features = np.stack([fv.values for fv, _ in test])
    probs = _softmax(features @ classifier.weights.T + classifier.bias)
    group_index = {g: i for i, g in enumerate(classifier.groups)}
    total = 0.0
    for row, (_, label) in zip(probs, test):
        if label not in group_index:
            raise ValueError(f"test group {label!r} unseen during attacker training")
        true_idx = group_index[label]
        if int(np.argmax(row)) == true_idx:
            total += float(row[true_idx])
    return total / len(test)


def split_by_hash(
    records: Sequence[PredictionRecord], test_fraction: float, seed: int
) -> tuple[list[PredictionRecord], list[PredictionRecord]]:
    """Deterministic record split keyed by a salted hash of record_id."""
    train, test = [], []
    for record in records:
        digest = hashlib.sha256(f"{seed}:{record.record_id}".encode("utf-8")).digest()
        u = int.from_bytes(digest[:8], "big") / 2**64
        (test if u < test_fraction else train).append(record)
    return train, test


def leakage(
    train: Sequence[PredictionRecord],
    test: Sequence[PredictionRecord],
    mode: str,
    config: AttackerConfig = AttackerConfig(),
    *,
    lexicon: GroupLexicon | None = None,
) -> LeakageResult:
    """Attacker-based leakage: LK over model outputs minus LK over ground truth.

    The model attacker is trained on the train split's predicted y and scored
    on the test split's predicted y; the data attacker does the same over
    ground truth. Both share one vocabulary (built from the train split), one
    config, and one seed, and both training sets are group-balanced by seeded
    subsampling.
    """
    if mode not in ("objects", "captions"):
        raise ValueError(f"mode must be objects|captions, got {mode!r}")
    if not test:
        raise ValueError("empty test set")
    if not train:
        raise ValueError("empty train set")
    overlap = {r.record_id for r in train} & {r.record_id for r in test}
    if overlap:
        raise ValueError(f"train/test overlap on record_ids: {sorted(overlap)[:5]}")

    if mode == "objects":
        for record in list(train) + list(test):
            if record.pred_objects is None or record.gt_objects is None:
                raise ValueError(f"record {record.record_id!r} lacks object predictions")
        vocabulary = build_object_vocabulary(
            [r.pred_objects for r in train] + [r.gt_objects for r in train]
        )

        def feats(record: PredictionRecord, predicted: bool) -> FeatureVector:
            objects = record.pred_objects if predicted else record.gt_objects
            return featurize_objects(objects, vocabulary)

    else:
        if lexicon is None:
            raise ValueError("caption mode requires a lexicon for group-term masking")
        for record in list(train) + list(test):
            if record.pred_caption is None or record.gt_caption is None:
                raise ValueError(f"record {record.record_id!r} lacks caption predictions")
        vocabulary = build_caption_vocabulary(
            [r.pred_caption for r in train] + [r.gt_caption for r in train], lexicon
        )

        def feats(record: PredictionRecord, predicted: bool) -> FeatureVector:
            caption = record.pred_caption if predicted else record.gt_caption
            return featurize_caption(caption, vocabulary, lexicon)

    scores = {}
    for name, predicted in (("model", True), ("data", False)):
        train_pairs = [(feats(r, predicted), r.true_group) for r in train]
        test_pairs = [(feats(r, predicted), r.true_group) for r in test]
        balanced = _balanced_subsample(train_pairs, config.seed)
        attacker = train_group_classifier(balanced, config)
        scores[name] = _attacker_score(attacker, test_pairs)
    return LeakageResult(lk_model=scores["model"], lk_data=scores["data"])


def ratio(pred_groups: Sequence[str], group_set: GroupSet) -> float:
    """Fold the directed prediction ratio to max(r, 1/r) >= 1.

    Computed as max(count)/min(count) so the result is exactly symmetric in
    the two groups (a float reciprocal would be off by an ulp).
    """
    counts = _group_counts(pred_groups, group_set)
    if min(counts) == 0:
        zero = group_set.groups[counts.index(0)]
        raise ValueError(f"degenerate ratio: no {zero!r} predictions")
    return max(counts) / min(counts)


def _group_counts(pred_groups: Sequence[str], group_set: GroupSet) -> list[int]:
    if len(group_set.groups) != 2:
        raise ValueError(f"ratio is defined for exactly 2 groups, got {len(group_set.groups)}")
    counts = {g: 0 for g in group_set.groups}
    for group in pred_groups:
        if group in counts:
            counts[group] += 1
    return [counts[g] for g in group_set.groups]


def directed_ratio(pred_groups: Sequence[str], group_set: GroupSet) -> float:
    """Count(first group) / count(second group), in group-set order."""
    first_count, second_count = _group_counts(pred_groups, group_set)
    if second_count == 0:
        raise ValueError(f"degenerate ratio: no {group_set.groups[1]!r} predictions")
    return first_count / second_count


def lic(
    model_captions: Sequence[str],
    gt_captions: Sequence[str],
    groups: Sequence[str],
    config: AttackerConfig = AttackerConfig(),
    *,
    lexicon: GroupLexicon,
) -> float:
    """Caption leakage: the leakage statistic with captions as attacker input."""
    if not (len(model_captions) == len(gt_captions) == len(groups)):
        raise ValueError("model captions, ground-truth captions, and groups must be paired")
    records = [
        PredictionRecord(
            record_id=f"caption{i:06d}",
            true_group=group,
            pred_caption=model,
            gt_caption=gt,
        )
        for i, (model, gt, group) in enumerate(zip(model_captions, gt_captions, groups))
    ]
    train, test = split_by_hash(records, config.test_fraction, config.seed)
    return leakage(train, test, "captions", config, lexicon=lexicon).leakage


@dataclass(frozen=True)
class BiasReport:
    """Bundle of bias measurements plus the configuration that produced them."""

    ratio: float | None = None
    lk_model: float | None = None
    lk_data: float | None = None
    leakage: float | None = None
    lic: float | None = None
    config: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.ratio is not None and self.ratio < 1.0:
            raise ValueError(f"folded ratio must be >= 1, got {self.ratio}")
        if self.leakage is not None and (self.lk_model is None or self.lk_data is None):
            raise ValueError("leakage requires lk_model and lk_data")
        if self.leakage is not None and abs(self.leakage - (self.lk_model - self.lk_data)) > 1e-12:
            raise ValueError("leakage must equal lk_model - lk_data")


def write_bias_report(report: BiasReport, path: str, header_extra: Mapping[str, str] | None = None) -> None:
    lines = [make_header("bias_report", dict(header_extra) if header_extra else None)]
    for key in ("ratio", "lk_model", "lk_data", "leakage", "lic"):
        lines.append("{" + f'"metric":{dump_compact(key)},"value":{fmt_float(getattr(report, key))}' + "}")
    lines.append(dump_compact({"metric": "config", "value": dict(report.config)}))
    write_lines(path, lines)


def format_bias_summary(report: BiasReport) -> str:
    def show(value: float | None) -> str:
        return "undefined" if value is None else "%.6g" % value

    return "\n".join(
        [
            f"ratio:    {show(report.ratio)}",
            f"lk_model: {show(report.lk_model)}",
            f"lk_data:  {show(report.lk_data)}",
            f"leakage:  {show(report.leakage)}",
            f"lic:      {show(report.lic)}",
        ]
    )


def read_predictions(path: str) -> list[PredictionRecord]:
    """Load a line-delimited predictions file (optionally headered)."""
    header, rows = read_header_and_rows(path)
    if "record_id" in header:
        # Headerless file: the first line is already a record.
        rows = [(1, header)] + rows
    records = []
    for lineno, row in rows:
        try:
            records.append(
                PredictionRecord(
                    record_id=row["record_id"],
                    true_group=row["true_group"],
                    pred_group=row.get("pred_group"),
                    pred_objects=frozenset(row["pred_objects"]) if "pred_objects" in row else None,
                    gt_objects=frozenset(row["gt_objects"]) if "gt_objects" in row else None,
                    pred_caption=row.get("pred_caption"),
                    gt_caption=row.get("gt_caption"),
                )
            )
        except KeyError as exc:
            raise ValueError(f"{path}:{lineno}: missing prediction field {exc}") from None
    return records


def write_predictions(records: Sequence[PredictionRecord], path: str) -> None:
    lines = [make_header("predictions")]
    for record in records:
        payload: dict[str, object] = {"record_id": record.record_id, "true_group": record.true_group}
        if record.pred_group is not None:
            payload["pred_group"] = record.pred_group
        if record.pred_objects is not None:
            payload["pred_objects"] = sorted(record.pred_objects)
        if record.gt_objects is not None:
            payload["gt_objects"] = sorted(record.gt_objects)
        if record.pred_caption is not None:
            payload["pred_caption"] = record.pred_caption
        if record.gt_caption is not None:
            payload["gt_caption"] = record.gt_caption
        lines.append(dump_compact(payload))
    write_lines(path, lines)
