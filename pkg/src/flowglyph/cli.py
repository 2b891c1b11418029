"""Command-line surface: synth / extract / render / train / eval / classify.

Exit codes: 0 success, 1 usage error, 2 input format error, 3 runtime
failure. All randomness flows from --seed (or the FLOWGLYPH_SEED
environment variable, which wins when set), so identical invocations
produce identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import cnn
from .experiment import (
    EmptyConfusion,
    EmptyManifest,
    build_glyph_dataset,
    compute_metrics,
    evaluate,
    read_manifest,
)
from .features import FeatureSet, extract_features, group_sessions
from .imaging import (
    GlyphFormatError,
    encode_glyph,
    normalize_glyph,
    render_glyph,
    render_presentation_png,
)
from .pcapio import PcapError, parse_pcap
from .sessions import DEFAULT_IDLE_TIMEOUT, assemble_sessions
from .synth import DatasetSpec, InvalidProfile, load_profiles, synth_dataset

_INPUT_ERRORS = (
    PcapError,
    GlyphFormatError,
    cnn.BadMagic,
    cnn.SizeMismatch,
    EmptyManifest,
    EmptyConfusion,
    InvalidProfile,
    json.JSONDecodeError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    UnicodeDecodeError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract here is exit 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_seed(args, fallback: int = 0) -> int:
    """FLOWGLYPH_SEED beats --seed beats the caller's fallback."""
    env = os.environ.get("FLOWGLYPH_SEED")
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise UsageError(f"FLOWGLYPH_SEED must be an integer, got {env!r}")
    elif args.seed is not None:
        seed = args.seed
    else:
        seed = fallback
    if seed < 0:
        raise UsageError("seed must be non-negative")
    return seed


def _log(args, message: str) -> None:
    if args.verbose:
        print(message, file=sys.stderr)


def cmd_synth(args) -> int:
    config = _load_json(args.config) if args.config else {}
    spec_doc = _load_json(args.spec) if args.spec else {}
    seed = _resolve_seed(args, fallback=int(spec_doc.get("seed", 0)))

    overrides: dict[str, dict] = {}
    for layer in (config, spec_doc):
        for name, fields in layer.get("profiles", {}).items():
            overrides.setdefault(name, {}).update(fields)
    profiles = {p.name: p for p in load_profiles({"profiles": overrides})}

    names = spec_doc.get("classes", sorted(profiles))
    missing = [n for n in names if n not in profiles]
    if missing:
        raise InvalidProfile(f"unknown class names in spec: {missing}")

    spec = DatasetSpec(
        groups_per_class=int(spec_doc.get("groups_per_class", 10)),
        profiles=[profiles[n] for n in names],
        seed=seed,
        output_dir=Path(args.out),
    )
    manifest = synth_dataset(spec)
    _log(args, f"wrote {spec.groups_per_class * len(spec.profiles)} captures")
    print(manifest)
    return 0


def cmd_extract(args) -> int:
    if args.idle_timeout <= 0:
        raise UsageError("--idle-timeout must be positive")
    feature_sets = []
    sessions_dump = []
    for pcap_path in args.pcap:
        capture = parse_pcap(Path(pcap_path).read_bytes())
        session_set = assemble_sessions(capture, idle_timeout=args.idle_timeout)
        sessions_dump.extend(s.to_dict() for s in session_set.sessions)
        for group in group_sessions(session_set):
            feature_sets.append(extract_features(group))
        _log(args, f"{pcap_path}: {session_set.n} sessions")
    with open(args.out, "w", encoding="utf-8") as fh:
        for fs in feature_sets:
            fh.write(_dump(fs.to_dict()) + "\n")
    if args.sessions:
        with open(args.sessions, "w", encoding="utf-8") as fh:
            for record in sessions_dump:
                fh.write(_dump(record) + "\n")
    print(args.out)
    return 0


def cmd_render(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.features, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    if not rows:
        raise EmptyManifest(f"no feature sets in {args.features}")
    entries = []
    for i, row in enumerate(rows):
        fs = FeatureSet.from_dict(row)
        label = row.get("label", "")
        name = f"glyph_{i:05d}.gly"
        (out_dir / name).write_bytes(encode_glyph(render_glyph(fs, label)))
        entries.append({"path": name, "label": label})
        if args.png:
            (out_dir / f"glyph_{i:05d}.png").write_bytes(
                render_presentation_png(fs)
            )
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(_dump(entry) + "\n")
    print(manifest)
    return 0


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    try:
        config = cnn.TrainConfig(
            learning_rate=args.lr,
            momentum=args.momentum,
            batch_size=args.batch,
            epochs=args.epochs,
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    if not 0 <= args.dropout < 1:
        raise UsageError("--dropout must be in [0, 1)")
    if args.classes < 2:
        raise UsageError("--classes must be at least 2")

    entries = read_manifest(args.manifest)
    if args.positive not in {e.label for e in entries}:
        raise EmptyManifest(
            f"label {args.positive!r} not present in {args.manifest}"
        )

    images, image_labels = build_glyph_dataset(entries)
    targets = np.array([1 if l == args.positive else 0 for l in image_labels])
    _log(args, f"training on {len(image_labels)} glyphs")
    model = cnn.init_model(seed, k=args.classes, dropout_rate=args.dropout)
    model, history = cnn.train(model, images, targets, config)

    out = Path(args.model_out)
    out.write_bytes(cnn.save_model(model))
    label_names = ["normal", args.positive] + [
        f"class_{i}" for i in range(2, args.classes)
    ]
    Path(str(out) + ".labels.json").write_text(
        _dump(label_names) + "\n", encoding="utf-8"
    )

    confusion = evaluate(model, images, targets)
    metrics = compute_metrics(confusion)
    report = {
        "config": {
            "learning_rate": config.learning_rate,
            "momentum": config.momentum,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
            "dropout": args.dropout,
            "classes": args.classes,
            "positive_label": args.positive,
        },
        "seed": seed,
        "n_samples": len(image_labels),
        "epoch_loss": history,
        "train_confusion": confusion.to_dict(),
        "train_metrics": metrics.to_dict(),
    }
    Path(str(out) + ".report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(_dump({"model": str(out), "train_metrics": metrics.to_dict()}))
    return 0


def cmd_eval(args) -> int:
    model = cnn.load_model(Path(args.model).read_bytes())
    entries = read_manifest(args.manifest)
    if args.positive not in {e.label for e in entries}:
        raise EmptyManifest(
            f"label {args.positive!r} not present in {args.manifest}"
        )
    images, image_labels = build_glyph_dataset(entries)
    targets = np.array([1 if l == args.positive else 0 for l in image_labels])
    metrics = compute_metrics(evaluate(model, images, targets))
    print(_dump(metrics.to_dict()))
    return 0


def cmd_classify(args) -> int:
    model = cnn.load_model(Path(args.model).read_bytes())
    labels_path = Path(args.model + ".labels.json")
    if labels_path.exists():
        label_names = json.loads(labels_path.read_text(encoding="utf-8"))
    else:
        label_names = [f"class_{i}" for i in range(model.k)]

    capture = parse_pcap(Path(args.pcap).read_bytes())
    groups = group_sessions(assemble_sessions(capture))
    if not groups:
        _log(args, f"{args.pcap}: no TCP party groups found")
        return 0
    glyphs = [render_glyph(extract_features(g)) for g in groups]
    batch = np.stack([normalize_glyph(g) for g in glyphs])
    for group, (pick, prob) in zip(groups, cnn.predict(model, batch)):
        name = label_names[pick] if pick < len(label_names) else f"class_{pick}"
        print(
            _dump(
                {
                    "triplet": [group.client_ip, group.server_ip, group.server_port],
                    "label": name,
                    "probability": prob,
                }
            )
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="global RNG seed (default 0); FLOWGLYPH_SEED wins")
    common.add_argument("--config", help="JSON file overriding built-in defaults")
    common.add_argument("--verbose", action="store_true",
                        help="progress messages on stderr")
    common.add_argument("--threads", type=int, default=1,
                        help="parallelism cap for pure stages (default 1)")

    parser = _Parser(prog="flowglyph",
                     description="Two-party traffic glyphs and a CNN classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a labeled synthetic pcap dataset")
    p.add_argument("--spec", help="dataset spec JSON (groups_per_class, classes, profiles)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common],
                       help="pcap -> per-group feature sets (JSON lines)")
    p.add_argument("--pcap", nargs="+", required=True, help="input pcap file(s)")
    p.add_argument("--out", required=True, help="output feature JSONL path")
    p.add_argument("--idle-timeout", type=float, default=DEFAULT_IDLE_TIMEOUT,
                   help="seconds of silence that split a session (default 300)")
    p.add_argument("--sessions", help="also dump assembled sessions as JSONL")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("render", parents=[common],
                       help="feature JSONL -> glyph files (+ optional PNGs)")
    p.add_argument("--features", required=True, help="feature JSONL from extract")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--png", action="store_true",
                   help="also write 640x320 presentation PNGs")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", parents=[common],
                       help="train the CNN on a labeled manifest")
    p.add_argument("--manifest", required=True, help="dataset manifest JSONL")
    p.add_argument("--positive", required=True, help="positive class label")
    p.add_argument("--model-out", required=True, help="output model path")
    p.add_argument("--lr", type=float, default=0.01, help="learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--batch", type=int, default=32, help="mini-batch size")
    p.add_argument("--epochs", type=int, default=20, help="training epochs")
    p.add_argument("--dropout", type=float, default=0.5, help="dropout rate")
    p.add_argument("--classes", type=int, default=2,
                   help="output layer width K (default 2)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a model on a labeled manifest")
    p.add_argument("--manifest", required=True, help="dataset manifest JSONL")
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--positive", required=True, help="positive class label")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", parents=[common],
                       help="per-group verdicts for one capture")
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--pcap", required=True, help="capture to classify")
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.func(args)
    except SystemExit:
        raise
    except UsageError as exc:
        print(f"flowglyph: error: {exc}", file=sys.stderr)
        return 1
    except _INPUT_ERRORS as exc:
        print(f"flowglyph: input error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"flowglyph: runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
