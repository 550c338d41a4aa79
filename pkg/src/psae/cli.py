"""Command-line pipeline: preprocess, augment, train, score, eval.

Every command is deterministic under a fixed --seed and writes outputs to
temporary names before an atomic rename. Per-file problems are soft: they
are reported and counted, the command still exits 0; fatal errors exit 1.
Config precedence for training is command-line flag > config file >
built-in default.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .augment import AugmentPolicy, expand_sequence_detailed
from .checkpoint import load_checkpoint, save_checkpoint_bytes
from .corpus import TOKENS_SUFFIX, read_corpus_dir, read_corpus_file, write_corpus_file
from .errors import PsaeError
from .model import ModelConfig, TrainHyper, train
from .pipeline import sequence_from_midi_bytes, sequence_from_midi_path
from .quantize import GridUnit
from .scoring import EvalReport, evaluate_manifest, note_probabilities, score_sequence

MIDI_SUFFIXES = (".mid", ".midi")


class NoInputs(PsaeError):
    pass


class ConfigError(PsaeError):
    pass


def _atomic_write(path: Path, data: bytes | str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data, encoding="utf-8")
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------- config

def _merge_section(name: str, defaults: dict, overrides: dict) -> dict:
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r} config: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(overrides)
    return merged


def load_run_config(path: str | Path | None) -> dict:
    """Validated run configuration: sections seed / model / train / augment
    merged over built-in defaults. Unknown keys are rejected everywhere."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    unknown = set(raw) - {"seed", "model", "train", "augment"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    model_defaults = dataclasses.asdict(ModelConfig())
    train_defaults = {"epochs": None, "batch_size": 64, "learning_rate": 1e-3,
                      "flood_b": 0.05, "mask_rate": 0.15, "mask_strategy": "mask",
                      "weight_decay": 0.01}
    augment_defaults = {"transpositions_per_seq": 31, "truncated_per_seq": 16,
                        "truncation_min": 1, "truncation_max": 100}
    return {
        "seed": raw.get("seed"),
        "model": _merge_section("model", model_defaults, raw.get("model", {})),
        "train": _merge_section("train", train_defaults, raw.get("train", {})),
        "augment": _merge_section("augment", augment_defaults, raw.get("augment", {})),
    }


# ------------------------------------------------------------- commands

def cmd_preprocess(input_dir: str, output_dir: str, seed: int = 0) -> int:
    in_dir = Path(input_dir)
    files = sorted(p for p in in_dir.iterdir()
                   if p.suffix.lower() in MIDI_SUFFIXES) if in_dir.is_dir() else []
    if not files:
        raise NoInputs(f"no MIDI files in {input_dir}")
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_histogram = {g: 0 for g in GridUnit}
    errors: list[tuple[str, str]] = []
    written = 0
    for path in files:
        try:
            seq = sequence_from_midi_bytes(path.read_bytes(), source_id=path.stem, seed=seed)
        except PsaeError as exc:
            errors.append((path.name, f"{type(exc).__name__}: {exc}"))
            continue
        _atomic_write(out_dir / f"{path.stem}{TOKENS_SUFFIX}",
                      _corpus_text([seq]))
        grid_histogram[seq.grid] += 1
        written += 1
    summary = [f"inputs={len(files)}", f"written={written}", f"errors={len(errors)}"]
    summary += [f"grid_{g.value}={n}" for g, n in grid_histogram.items()]
    summary += [f"error file={name} message={msg}" for name, msg in errors]
    _atomic_write(out_dir / "preprocess_summary.txt", "\n".join(summary) + "\n")
    print("\n".join(summary[:3 + len(grid_histogram)]))
    if errors:
        print(f"skipped {len(errors)} file(s); see preprocess_summary.txt", file=sys.stderr)
    return 0


def _corpus_text(sequences) -> str:
    from .corpus import format_sequence
    return "".join(format_sequence(s) + "\n" for s in sequences)


def cmd_augment(input_dir: str, output_dir: str, policy: AugmentPolicy) -> int:
    in_dir = Path(input_dir)
    files = sorted(in_dir.glob(f"*{TOKENS_SUFFIX}"))
    if not files:
        raise NoInputs(f"no {TOKENS_SUFFIX} files in {input_dir}")
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ["variant_id\tsource_id\tshift\ttruncation"]
    total = 0
    for path in files:
        expanded = []
        for seq in read_corpus_file(path):
            for variant in expand_sequence_detailed(seq, policy):
                expanded.append(variant.sequence)
                manifest.append("\t".join((
                    variant.sequence.source_id, variant.source_id,
                    str(variant.shift),
                    "" if variant.truncation is None else str(variant.truncation))))
        _atomic_write(out_dir / path.name, _corpus_text(expanded))
        total += len(expanded)
    _atomic_write(out_dir / "augment_manifest.tsv", "\n".join(manifest) + "\n")
    print(f"inputs={len(files)} variants={total}")
    return 0


def cmd_train(corpus_dir: str, out_path: str, config_path: str | None = None,
              epochs: int | None = None, seed: int | None = None,
              batch_size: int | None = None, learning_rate: float | None = None,
              flood_b: float | None = None) -> int:
    run = load_run_config(config_path)
    flags = {"epochs": epochs, "batch_size": batch_size,
             "learning_rate": learning_rate, "flood_b": flood_b}
    for key, value in flags.items():
        if value is not None:
            run["train"][key] = value
    if seed is not None:
        run["seed"] = seed
    if run["seed"] is None:
        run["seed"] = 0
    if run["train"]["epochs"] is None:
        raise ConfigError("epochs must be set via --epochs or the config file")
    config = ModelConfig(**run["model"])
    config.validate()
    hyper = TrainHyper(seed=run["seed"], **run["train"])
    sequences = read_corpus_dir(corpus_dir)
    metrics_lines: list[str] = []

    def on_epoch(m: dict) -> None:
        line = (f"epoch={m['epoch']} raw_loss={m['raw_loss']:.6f} "
                f"flooded_loss={m['flooded_loss']:.6f} "
                f"masked_accuracy={m['masked_accuracy']:.6f}")
        metrics_lines.append(line)
        print(line)

    checkpoint = train(sequences, config, hyper, on_epoch=on_epoch)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(out, save_checkpoint_bytes(checkpoint))
    _atomic_write(out.with_name(out.name + ".metrics"), "\n".join(metrics_lines) + "\n")
    print(f"checkpoint={out}")
    return 0


def cmd_score(model_path: str, midi_path: str, per_note: bool = False,
              seed: int = 0) -> int:
    checkpoint = load_checkpoint(model_path)
    seq = sequence_from_midi_path(midi_path, seed=seed)
    score = score_sequence(checkpoint, seq)
    print(f"path={midi_path} notes={score.n_notes} "
          f"ai_probability={score.ai_probability:.6f} "
          f"human_probability={score.human_probability:.6f}")
    if per_note:
        probs = note_probabilities(checkpoint, seq)
        for pos, p in zip(probs.positions, probs.probabilities):
            print(f"note position={int(pos)} probability={p:.6f}")
    return 0


def render_report_kv(report: EvalReport) -> str:
    """Machine-readable report; floats use %.17g so re-parsing is exact."""
    lines = [f"overall_auc={report.overall_auc:.17g}",
             f"scored={report.n_scored}",
             f"skipped={report.n_skipped}"]
    for key, values in report.group_aucs.items():
        for value, auc in values.items():
            n = sum(1 for row, _ in report.scores if row.groups.get(key) == value)
            auc_text = "n/a" if auc is None else f"{auc:.17g}"
            lines.append(f"group key={key} value={value} auc={auc_text} n={n}")
    for row, sc in report.scores:
        lines.append(f"excerpt path={row.path} label={row.label} "
                     f"ai_probability={sc.ai_probability:.17g} "
                     f"human_probability={sc.human_probability:.17g} "
                     f"notes={sc.n_notes}")
    for path, message in report.errors:
        lines.append(f"error path={path} message={message}")
    return "\n".join(lines) + "\n"


def parse_report_kv(text: str) -> dict:
    """Inverse of render_report_kv (used by tests and downstream tooling)."""
    out: dict = {"groups": {}, "excerpts": [], "errors": []}
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("group "):
            kv = dict(item.split("=", 1) for item in line[len("group "):].split(" "))
            auc = None if kv["auc"] == "n/a" else float(kv["auc"])
            out["groups"].setdefault(kv["key"], {})[kv["value"]] = (auc, int(kv["n"]))
        elif line.startswith("excerpt "):
            kv = dict(item.split("=", 1) for item in line[len("excerpt "):].split(" "))
            out["excerpts"].append({"path": kv["path"], "label": kv["label"],
                                    "ai_probability": float(kv["ai_probability"]),
                                    "human_probability": float(kv["human_probability"]),
                                    "notes": int(kv["notes"])})
        elif line.startswith("error "):
            path_part, message = line[len("error "):].split(" message=", 1)
            out["errors"].append({"path": path_part[len("path="):], "message": message})
        else:
            key, value = line.split("=", 1)
            out[key] = float(value) if key == "overall_auc" else int(value)
    return out


def render_report_text(report: EvalReport) -> str:
    lines = [f"overall AUC: {report.overall_auc:.4f} "
             f"({report.n_scored} scored, {report.n_skipped} skipped)"]
    for key, values in report.group_aucs.items():
        lines.append("")
        lines.append(f"AUC by {key}:")
        for value, auc in values.items():
            n = sum(1 for row, _ in report.scores if row.groups.get(key) == value)
            auc_text = "n/a (single class)" if auc is None else f"{auc:.4f}"
            lines.append(f"  {value}: {auc_text} (n={n})")
    if report.errors:
        lines.append("")
        lines.append("skipped files:")
        lines.extend(f"  {path}: {message}" for path, message in report.errors)
    return "\n".join(lines) + "\n"


def cmd_eval(model_path: str, manifest_path: str, output_dir: str,
             seed: int = 0) -> int:
    checkpoint = load_checkpoint(model_path)
    report = evaluate_manifest(checkpoint, manifest_path,
                               scorer=lambda p: sequence_from_midi_path(p, seed=seed))
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = render_report_text(report)
    _atomic_write(out_dir / "report.txt", text)
    _atomic_write(out_dir / "report.kv", render_report_kv(report))
    print(text, end="")
    if report.errors:
        print(f"skipped {len(report.errors)} file(s)", file=sys.stderr)
    return 0


# ------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psae",
        description="Train a masked pitch model on machine-made MIDI and "
                    "score new clips for machine provenance.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="MIDI directory -> token corpus")
    p.add_argument("--in", dest="input_dir", required=True)
    p.add_argument("--out", dest="output_dir", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("augment", help="expand a token corpus")
    p.add_argument("--in", dest="input_dir", required=True)
    p.add_argument("--out", dest="output_dir", required=True)
    p.add_argument("--transpositions", type=int, default=31)
    p.add_argument("--truncated", type=int, default=16)
    p.add_argument("--trunc-min", type=int, default=1)
    p.add_argument("--trunc-max", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("train", help="train the masked pitch model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--flood-b", type=float)

    p = sub.add_parser("score", help="score one MIDI file")
    p.add_argument("--model", required=True)
    p.add_argument("--midi", required=True)
    p.add_argument("--per-note", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="score a labeled manifest and report AUCs")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "preprocess":
            return cmd_preprocess(args.input_dir, args.output_dir, seed=args.seed)
        if args.command == "augment":
            policy = AugmentPolicy(transpositions_per_seq=args.transpositions,
                                   truncated_per_seq=args.truncated,
                                   truncation_min=args.trunc_min,
                                   truncation_max=args.trunc_max,
                                   seed=args.seed)
            return cmd_augment(args.input_dir, args.output_dir, policy)
        if args.command == "train":
            return cmd_train(args.corpus, args.out, config_path=args.config,
                             epochs=args.epochs, seed=args.seed,
                             batch_size=args.batch_size,
                             learning_rate=args.learning_rate,
                             flood_b=args.flood_b)
        if args.command == "score":
            return cmd_score(args.model, args.midi, per_note=args.per_note,
                             seed=args.seed)
        if args.command == "eval":
            return cmd_eval(args.model, args.manifest, args.out, seed=args.seed)
    except (PsaeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command}")


def entry() -> None:
    sys.exit(main())
