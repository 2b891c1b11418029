"""Dataset splitting, metrics, and the experiment driver."""

import json

import numpy as np
import pytest

from flowglyph import cnn
from flowglyph.experiment import (
    Confusion,
    EmptyConfusion,
    EmptyManifest,
    build_glyph_dataset,
    compute_metrics,
    evaluate,
    read_manifest,
    run_experiment,
    split_indices,
)
from flowglyph.features import FeatureSet
from flowglyph.imaging import encode_glyph, render_glyph
from flowglyph.pcapio import write_pcap
from flowglyph.synth import DEFAULT_PROFILES, DatasetSpec, synth_dataset, synth_group


def test_metrics_paper_cross_check():
    # integer confusion chosen so P and R are exactly 0.963 and 0.929
    c = Confusion(tp=894627, tn=0, fp=34373, fn=68373)
    m = compute_metrics(c)
    assert m.precision == pytest.approx(0.963, abs=1e-12)
    assert m.recall == pytest.approx(0.929, abs=1e-12)
    assert abs(m.f1 - 0.946) <= 0.0005
    assert m.f1 == pytest.approx(0.9456945031712475)


def test_metrics_zero_conventions():
    m = compute_metrics(Confusion(tn=5))
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 0.0, 0.0, 0.0)
    m = compute_metrics(Confusion(tp=0, fp=3, fn=0, tn=1))
    assert m.precision == 0.0
    m = compute_metrics(Confusion(tp=0, fn=3, fp=0, tn=1))
    assert m.recall == 0.0
    with pytest.raises(EmptyConfusion):
        compute_metrics(Confusion())


def test_confusion_total_and_dicts():
    c = Confusion(tp=1, tn=2, fp=3, fn=4)
    assert c.total == 10
    assert c.to_dict() == {"tp": 1, "tn": 2, "fp": 3, "fn": 4}
    m = compute_metrics(c)
    assert set(m.to_dict()) == {"accuracy", "precision", "recall", "f1"}


def test_split_indices_stratified_counts():
    labels = ["a"] * 10 + ["b"] * 5
    train, test = split_indices(labels, seed=1, test_fraction=0.2)
    assert len(test) == 3  # 2 of 10 a's, 1 of 5 b's
    assert sorted(train + test) == list(range(15))
    assert [labels[i] for i in test].count("a") == 2
    assert [labels[i] for i in test].count("b") == 1


def test_split_indices_deterministic():
    labels = ["x"] * 20 + ["y"] * 20
    assert split_indices(labels, 3, 0.2) == split_indices(labels, 3, 0.2)
    assert split_indices(labels, 3, 0.2) != split_indices(labels, 4, 0.2)


def test_split_indices_validates_fraction():
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError):
            split_indices(["a", "b"], 0, bad)


def test_read_manifest_resolves_relative_paths(tmp_path):
    manifest = tmp_path / "sub" / "manifest.jsonl"
    manifest.parent.mkdir()
    manifest.write_text(json.dumps({"path": "g.gly", "label": "apt_cc"}) + "\n")
    entries = read_manifest(manifest)
    assert entries[0].path == tmp_path / "sub" / "g.gly"
    assert entries[0].label == "apt_cc"


def test_read_manifest_empty(tmp_path):
    empty = tmp_path / "manifest.jsonl"
    empty.write_text("")
    with pytest.raises(EmptyManifest):
        read_manifest(empty)


def _write_glyph(path, up, label):
    fs = FeatureSet(first_ts_seq=[0.0, 10.0], intervals=[10.0],
                    up_bytes=[up, up], down_bytes=[0, 0],
                    group_ref=("10.0.0.1", "198.51.0.1", 443))
    path.write_bytes(encode_glyph(render_glyph(fs, label="stored")))


def test_build_glyph_dataset_mixes_gly_and_pcap(tmp_path):
    _write_glyph(tmp_path / "a.gly", 100, "stored")
    capture = synth_group(DEFAULT_PROFILES["apt_cc"], 1)
    (tmp_path / "b.pcap").write_bytes(write_pcap(capture))
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text(
        json.dumps({"path": "a.gly", "label": "manifest_wins"}) + "\n"
        + json.dumps({"path": "b.pcap", "label": "apt_cc"}) + "\n"
    )
    images, labels = build_glyph_dataset(read_manifest(manifest))
    assert images.shape == (2, 28, 28)
    assert images.dtype == np.float32
    assert labels == ["manifest_wins", "apt_cc"]


def test_evaluate_with_constant_model():
    # zero weights predict class 0 everywhere (argmax tie -> low index)
    model = cnn.init_model(seed=0, k=2)
    for tensor in model.tensors().values():
        tensor[:] = 0
    inputs = np.zeros((4, 28, 28), dtype=np.float32)
    confusion = evaluate(model, inputs, np.array([0, 1, 0, 1]))
    assert confusion.to_dict() == {"tp": 0, "tn": 2, "fp": 0, "fn": 2}


def _small_manifest(tmp_path, groups=4):
    profiles = [DEFAULT_PROFILES["apt_cc"], DEFAULT_PROFILES["browser"]]
    spec = DatasetSpec(groups_per_class=groups, profiles=profiles, seed=33,
                       output_dir=tmp_path / "data")
    return synth_dataset(spec)


def test_run_experiment_end_to_end(tmp_path):
    manifest = _small_manifest(tmp_path, groups=5)
    config = cnn.TrainConfig(epochs=2, batch_size=4, seed=2)
    result = run_experiment(manifest, "apt_cc", config, seed=2)
    assert result.confusion.total == 2  # half_up(5 * 0.2) per class
    assert result.report["n_train"] == 8
    assert result.report["n_test"] == 2
    assert len(result.report["epoch_loss"]) == 2
    assert 0.0 <= result.metrics.accuracy <= 1.0
    assert result.model.k == 2
    assert result.report["config"]["positive_label"] == "apt_cc"
    assert result.report["runtime_s"] > 0


def test_run_experiment_label_checks(tmp_path):
    manifest = _small_manifest(tmp_path)
    config = cnn.TrainConfig(epochs=1, batch_size=4, seed=0)
    with pytest.raises(ValueError):
        run_experiment(manifest, "voip", config, seed=0)
    single = tmp_path / "single.jsonl"
    rows = [json.loads(l) for l in manifest.read_text().splitlines()]
    apt_only = [r for r in rows if r["label"] == "apt_cc"]
    single.write_text("".join(
        json.dumps({"path": str(tmp_path / "data" / r["path"]), "label": r["label"]})
        + "\n" for r in apt_only
    ))
    with pytest.raises(EmptyManifest):
        run_experiment(single, "apt_cc", config, seed=0)
