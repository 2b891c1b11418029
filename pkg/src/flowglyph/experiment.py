"""Experiment orchestration: manifest handling, stratified splits,
training runs, and the four headline metrics.

An experiment is binary: one positive class against everything else in
the manifest pooled together. The group glyph is the unit of
classification throughout.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import cnn
from .features import extract_features, group_sessions
from .imaging import Glyph, decode_glyph, half_up, normalize_glyph, render_glyph
from .pcapio import parse_pcap
from .sessions import assemble_sessions


class EmptyManifest(ValueError):
    pass


class EmptyConfusion(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: str


@dataclass
class Confusion:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    metrics: Metrics
    confusion: Confusion
    report: dict
    model: "cnn.CnnModel | None" = None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest; entry paths resolve against its dir."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            entries.append(ManifestEntry(base / record["path"], record["label"]))
    if not entries:
        raise EmptyManifest(f"no entries in {path}")
    return entries


def split_indices(
    labels: list[str], seed: int, test_fraction: float
) -> tuple[list[int], list[int]]:
    """Seeded stratified split; per label, half_up(count * fraction) test
    samples. Returns (train indices, test indices)."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if not labels:
        raise EmptyManifest("nothing to split")
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {}
    for i, label in enumerate(labels):
        by_label.setdefault(label, []).append(i)
    train, test = [], []
    for label in sorted(by_label):
        indices = by_label[label]
        perm = rng.permutation(len(indices))
        n_test = half_up(len(indices) * test_fraction)
        test.extend(indices[j] for j in perm[:n_test])
        train.extend(indices[j] for j in perm[n_test:])
    return train, test


def split_dataset(
    entries: list[ManifestEntry], seed: int, test_fraction: float = 0.2
) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Stratified manifest split into (train, test)."""
    train_idx, test_idx = split_indices(
        [e.label for e in entries], seed, test_fraction
    )
    return [entries[i] for i in train_idx], [entries[i] for i in test_idx]


def compute_metrics(c: Confusion) -> Metrics:
    """Accuracy, precision, recall, F1 with zero-denominator conventions:
    precision and recall are 0 when undefined, F1 is 0 when P + R == 0."""
    if c.total == 0:
        raise EmptyConfusion("confusion matrix has no samples")
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return Metrics(accuracy=accuracy, precision=precision, recall=recall, f1=f1)


def glyphs_from_pcap(path: str | Path, label: str = "") -> list[Glyph]:
    """All party-group glyphs contained in one capture file."""
    capture = parse_pcap(Path(path).read_bytes())
    groups = group_sessions(assemble_sessions(capture))
    return [render_glyph(extract_features(g), label) for g in groups]


def build_glyph_dataset(
    entries: list[ManifestEntry],
) -> tuple[np.ndarray, list[str]]:
    """Load every manifest entry into (N x 28 x 28 float32, labels).

    .pcap entries run through the full pipeline and may yield several
    glyphs; .gly entries load directly. The manifest label wins over
    any label stored in a glyph file.
    """
    images, labels = [], []
    for entry in entries:
        if entry.path.suffix == ".gly":
            glyphs = [decode_glyph(entry.path.read_bytes())]
        else:
            glyphs = glyphs_from_pcap(entry.path, entry.label)
        for glyph in glyphs:
            images.append(normalize_glyph(glyph))
            labels.append(entry.label)
    if not images:
        raise EmptyManifest("manifest produced no glyphs")
    return np.stack(images), labels


def evaluate(
    model: cnn.CnnModel, inputs: np.ndarray, targets: np.ndarray
) -> Confusion:
    """Confusion counts with class 1 as positive, in batches."""
    confusion = Confusion()
    for start in range(0, len(inputs), 256):
        batch = inputs[start : start + 256]
        truth = targets[start : start + 256]
        for (pick, _), actual in zip(cnn.predict(model, batch), truth):
            if actual == 1:
                if pick == 1:
                    confusion.tp += 1
                else:
                    confusion.fn += 1
            else:
                if pick == 1:
                    confusion.fp += 1
                else:
                    confusion.tn += 1
    return confusion


def run_experiment(
    manifest: str | Path,
    positive_label: str,
    train_config: cnn.TrainConfig,
    seed: int,
    test_fraction: float = 0.2,
) -> ExperimentResult:
    """Full pipeline: manifest -> glyphs -> split -> train -> test metrics.

    Every non-positive label pools into the negative class, so a
    manifest with several normal classes runs as one mixed experiment.
    """
    started = time.monotonic()
    entries = read_manifest(manifest)
    manifest_labels = {e.label for e in entries}
    if positive_label not in manifest_labels:
        raise ValueError(f"label {positive_label!r} not present in manifest")
    if len(manifest_labels) < 2:
        raise EmptyManifest("experiment needs at least 2 labels")

    images, labels = build_glyph_dataset(entries)
    train_idx, test_idx = split_indices(labels, seed, test_fraction)
    binary = np.array([1 if l == positive_label else 0 for l in labels])

    model = cnn.init_model(seed, k=2)
    model, history = cnn.train(
        model, images[train_idx], binary[train_idx], train_config
    )
    confusion = evaluate(model, images[test_idx], binary[test_idx])
    metrics = compute_metrics(confusion)

    report = {
        "config": {
            **asdict(train_config),
            "positive_label": positive_label,
            "test_fraction": test_fraction,
        },
        "seed": seed,
        "n_train": len(train_idx),
        "n_test": len(test_idx),
        "epoch_loss": history,
        "confusion": confusion.to_dict(),
        "metrics": metrics.to_dict(),
        "runtime_s": time.monotonic() - started,
    }
    return ExperimentResult(
        metrics=metrics, confusion=confusion, report=report, model=model
    )
