"""Command-line pipeline: formats, determinism, precedence, exit codes."""

import json

import numpy as np
import pytest

from psae import cli, model
from psae.augment import random_truncate, transpose
from psae.cli import main, parse_report_kv, render_report_kv
from psae.corpus import (CorpusFormatError, format_sequence, parse_sequence_line,
                         read_corpus_dir, read_corpus_file)
from psae.quantize import GridUnit, PitchSequence
from psae.scoring import EvalReport, ManifestRow
from helpers import notes, smf_bytes


def write_midi_corpus(directory, count=4, tpq=480):
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(99)
    for i in range(count):
        tick = 0
        note_list = []
        for _ in range(16):
            duration = int(rng.choice([240, 480]))
            note_list.append((tick, duration, int(rng.integers(50, 80))))
            tick += duration
        (directory / f"clip{i:03d}.mid").write_bytes(smf_bytes(notes(*note_list), tpq=tpq))


SMALL_MODEL = {"vocab_size": 131, "embed_dim": 16, "hidden_dim": 16, "num_layers": 2,
               "num_heads": 2, "ffn_dim": 32, "max_position": 384, "output_classes": 128}


def run_small_pipeline(tmp_path, epochs=2):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir)
    assert main(["preprocess", "--in", str(midi_dir), "--out", str(tmp_path / "tok"),
                 "--seed", "1"]) == 0
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"model": SMALL_MODEL}), encoding="utf-8")
    assert main(["train", "--corpus", str(tmp_path / "tok"), "--config", str(config),
                 "--out", str(tmp_path / "model.psae"), "--epochs", str(epochs),
                 "--seed", "3"]) == 0
    return tmp_path / "model.psae", midi_dir


# ------------------------------------------------------------ corpus file

def test_sequence_line_round_trip():
    seq = PitchSequence(tokens=np.array([60, 128, 64], dtype=np.int16),
                        grid=GridUnit.THIRTY_SECOND, source_id="clip#t+3")
    parsed = parse_sequence_line(format_sequence(seq))
    assert parsed.source_id == seq.source_id
    assert parsed.grid is seq.grid
    assert (parsed.tokens == seq.tokens).all()


def test_corpus_parse_errors():
    with pytest.raises(CorpusFormatError):
        parse_sequence_line("only_two\tfields")
    with pytest.raises(CorpusFormatError):
        parse_sequence_line("id\tbadgrid\t60 61")
    with pytest.raises(CorpusFormatError):
        parse_sequence_line("id\t16th\t60 sixty")


# ------------------------------------------------------------- preprocess

def test_preprocess_writes_tokens_and_summary(tmp_path, capsys):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir, count=5)
    out_dir = tmp_path / "tok"
    assert main(["preprocess", "--in", str(midi_dir), "--out", str(out_dir)]) == 0
    files = sorted(out_dir.glob("*.tokens"))
    assert len(files) == 5
    summary = (out_dir / "preprocess_summary.txt").read_text()
    assert "inputs=5" in summary and "written=5" in summary and "errors=0" in summary
    assert "grid_16th=" in summary and "grid_32nd=" in summary
    sequences = read_corpus_dir(out_dir)
    assert len(sequences) == 5


def test_preprocess_empty_dir_fails(tmp_path, capsys):
    empty = tmp_path / "nothing"
    empty.mkdir()
    assert main(["preprocess", "--in", str(empty), "--out", str(tmp_path / "o")]) == 1
    assert "no MIDI files" in capsys.readouterr().err


def test_preprocess_bad_file_is_soft_error(tmp_path):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir, count=2)
    (midi_dir / "broken.mid").write_bytes(b"not midi data")
    out_dir = tmp_path / "tok"
    assert main(["preprocess", "--in", str(midi_dir), "--out", str(out_dir)]) == 0
    summary = (out_dir / "preprocess_summary.txt").read_text()
    assert "errors=1" in summary and "broken.mid" in summary


def test_preprocess_deterministic(tmp_path):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["preprocess", "--in", str(midi_dir), "--out", str(out),
                     "--seed", "5"]) == 0
    for f in sorted(out_a.glob("*.tokens")):
        assert f.read_bytes() == (out_b / f.name).read_bytes()


# ---------------------------------------------------------------- augment

def test_augment_identity_policy_copies_corpus(tmp_path):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir, count=2)
    tok = tmp_path / "tok"
    main(["preprocess", "--in", str(midi_dir), "--out", str(tok), "--seed", "1"])
    out = tmp_path / "aug"
    assert main(["augment", "--in", str(tok), "--out", str(out),
                 "--transpositions", "1", "--truncated", "0", "--seed", "2"]) == 0
    for seq, aug in zip(read_corpus_dir(tok), read_corpus_dir(out)):
        assert (seq.tokens == aug.tokens).all()


def test_augment_expansion_and_provenance(tmp_path):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir, count=3)
    tok, out = tmp_path / "tok", tmp_path / "aug"
    main(["preprocess", "--in", str(midi_dir), "--out", str(tok), "--seed", "1"])
    assert main(["augment", "--in", str(tok), "--out", str(out), "--seed", "4"]) == 0
    augmented = {s.source_id: s for s in read_corpus_dir(out)}
    assert len(augmented) == 3 * 31
    sources = {s.source_id: s for s in read_corpus_dir(tok)}
    manifest_lines = (out / "augment_manifest.tsv").read_text().splitlines()
    assert manifest_lines[0] == "variant_id\tsource_id\tshift\ttruncation"
    for line in manifest_lines[1:]:
        variant_id, source_id, shift, trunc = line.split("\t")
        rebuilt = transpose(sources[source_id], int(shift))
        if trunc:
            rebuilt = random_truncate(rebuilt, int(trunc))
        assert (rebuilt.tokens == augmented[variant_id].tokens).all()


def test_augment_deterministic(tmp_path):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir, count=2)
    tok = tmp_path / "tok"
    main(["preprocess", "--in", str(midi_dir), "--out", str(tok), "--seed", "1"])
    blobs = []
    for name in ("x", "y"):
        out = tmp_path / name
        main(["augment", "--in", str(tok), "--out", str(out), "--seed", "9"])
        blobs.append(b"".join(f.read_bytes() for f in sorted(out.glob("*.tokens"))))
    assert blobs[0] == blobs[1]


# ------------------------------------------------------------------ train

def test_train_writes_checkpoint_and_metrics(tmp_path):
    model_path, _ = run_small_pipeline(tmp_path)
    assert model_path.exists()
    metrics = model_path.with_name(model_path.name + ".metrics").read_text().splitlines()
    assert len(metrics) == 2
    assert metrics[0].startswith("epoch=1 raw_loss=")
    assert "masked_accuracy=" in metrics[0]


def test_train_requires_epochs(tmp_path, capsys):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir, count=2)
    tok = tmp_path / "tok"
    main(["preprocess", "--in", str(midi_dir), "--out", str(tok)])
    assert main(["train", "--corpus", str(tok), "--out", str(tmp_path / "m")]) == 1
    assert "epochs" in capsys.readouterr().err


def test_train_deterministic_checkpoints(tmp_path):
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir)
    tok = tmp_path / "tok"
    main(["preprocess", "--in", str(midi_dir), "--out", str(tok), "--seed", "1"])
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"model": SMALL_MODEL}), encoding="utf-8")
    blobs = []
    for name in ("m1", "m2"):
        path = tmp_path / name
        assert main(["train", "--corpus", str(tok), "--config", str(config),
                     "--out", str(path), "--epochs", "2", "--seed", "3"]) == 0
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]


def test_config_precedence_flag_over_file_over_default(tmp_path, monkeypatch):
    captured = {}

    def fake_train(sequences, config, hyper, on_epoch=None):
        captured["config"] = config
        captured["hyper"] = hyper
        return model.Checkpoint(model.init_model(config, 0))

    monkeypatch.setattr(cli, "train", fake_train)
    midi_dir = tmp_path / "midi"
    write_midi_corpus(midi_dir, count=2)
    tok = tmp_path / "tok"
    main(["preprocess", "--in", str(midi_dir), "--out", str(tok)])
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "seed": 42,
        "model": SMALL_MODEL,
        "train": {"epochs": 7, "batch_size": 8, "learning_rate": 0.5, "flood_b": 0.2},
    }), encoding="utf-8")

    # flags override the file; file overrides defaults; defaults fill the rest
    assert main(["train", "--corpus", str(tok), "--config", str(config),
                 "--out", str(tmp_path / "m"), "--epochs", "3",
                 "--learning-rate", "0.25"]) == 0
    hyper = captured["hyper"]
    assert hyper.epochs == 3               # flag wins over file's 7
    assert hyper.learning_rate == 0.25     # flag wins over file's 0.5
    assert hyper.batch_size == 8           # file wins over default 64
    assert hyper.flood_b == 0.2            # file wins over default 0.05
    assert hyper.seed == 42                # file wins over default 0
    assert hyper.mask_rate == 0.15         # untouched default
    assert captured["config"].embed_dim == 16

    # without the file, defaults apply
    assert main(["train", "--corpus", str(tok), "--out", str(tmp_path / "m2"),
                 "--epochs", "1"]) == 0
    assert captured["hyper"].batch_size == 64
    assert captured["hyper"].learning_rate == 1e-3
    assert captured["hyper"].flood_b == 0.05
    assert captured["hyper"].seed == 0


def test_unknown_config_keys_rejected(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"train": {"epoch": 3}}), encoding="utf-8")
    assert main(["train", "--corpus", str(tmp_path), "--config", str(config),
                 "--out", str(tmp_path / "m"), "--epochs", "1"]) == 1
    assert "unknown keys" in capsys.readouterr().err
    config.write_text(json.dumps({"trainer": {}}), encoding="utf-8")
    assert main(["train", "--corpus", str(tmp_path), "--config", str(config),
                 "--out", str(tmp_path / "m"), "--epochs", "1"]) == 1
    assert "unknown top-level" in capsys.readouterr().err


# ------------------------------------------------------------------ score

def test_score_prints_complementary_probabilities(tmp_path, capsys):
    model_path, midi_dir = run_small_pipeline(tmp_path)
    midi_file = sorted(midi_dir.glob("*.mid"))[0]
    assert main(["score", "--model", str(model_path), "--midi", str(midi_file)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    fields = dict(item.split("=", 1) for item in line.split(" "))
    p = float(fields["ai_probability"])
    q = float(fields["human_probability"])
    assert abs((p + q) - 1.0) < 1e-6
    assert int(fields["notes"]) > 0


def test_score_deterministic(tmp_path, capsys):
    model_path, midi_dir = run_small_pipeline(tmp_path)
    midi_file = sorted(midi_dir.glob("*.mid"))[0]
    capsys.readouterr()  # drain pipeline output
    outputs = []
    for _ in range(2):
        assert main(["score", "--model", str(model_path), "--midi", str(midi_file),
                     "--per-note"]) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    assert "note position=" in outputs[0]


def test_score_non_midi_file_exits_nonzero(tmp_path, capsys):
    model_path, _ = run_small_pipeline(tmp_path)
    bogus = tmp_path / "bogus.mid"
    bogus.write_bytes(b"garbage")
    assert main(["score", "--model", str(model_path), "--midi", str(bogus)]) == 1
    assert "error:" in capsys.readouterr().err


def test_score_corrupted_checkpoint_exits_nonzero(tmp_path, capsys):
    model_path, midi_dir = run_small_pipeline(tmp_path)
    blob = bytearray(model_path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    bad = tmp_path / "bad.psae"
    bad.write_bytes(bytes(blob))
    midi_file = sorted(midi_dir.glob("*.mid"))[0]
    assert main(["score", "--model", str(bad), "--midi", str(midi_file)]) == 1
    assert "CRC" in capsys.readouterr().err


# ------------------------------------------------------------------- eval

def test_eval_report_files_and_round_trip(tmp_path, capsys):
    model_path, midi_dir = run_small_pipeline(tmp_path)
    manifest = tmp_path / "manifest.csv"
    rows = ["path,label,style,algorithm,published"]
    for i, midi_file in enumerate(sorted(midi_dir.glob("*.mid"))):
        label = "human" if i % 2 else "ai"
        rows.append(f"{midi_file},{label},s{i % 2},,")
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    out_dir = tmp_path / "report"
    assert main(["eval", "--model", str(model_path), "--manifest", str(manifest),
                 "--out", str(out_dir)]) == 0
    stdout = capsys.readouterr().out
    assert "overall AUC:" in stdout and "AUC by style:" in stdout
    parsed = parse_report_kv((out_dir / "report.kv").read_text())
    assert 0.0 <= parsed["overall_auc"] <= 1.0
    assert parsed["scored"] == 4 and parsed["skipped"] == 0
    assert len(parsed["excerpts"]) == 4


def test_eval_missing_class_surfaces_single_class_error(tmp_path, capsys):
    model_path, midi_dir = run_small_pipeline(tmp_path)
    manifest = tmp_path / "manifest.csv"
    lines = ["path,label"] + [f"{p},ai" for p in sorted(midi_dir.glob("*.mid"))]
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert main(["eval", "--model", str(model_path), "--manifest", str(manifest),
                 "--out", str(tmp_path / "r")]) == 1
    assert "both classes" in capsys.readouterr().err


def test_render_parse_report_round_trip_exact():
    rows = [ManifestRow("a.mid", "human", {"style": "bach"}),
            ManifestRow("b.mid", "ai", {"style": "bach"})]
    from psae.scoring import ExcerptScore
    scores = [(rows[0], ExcerptScore("a", 1 / 3, 100)),
              (rows[1], ExcerptScore("b", 2 / 3, 90))]
    report = EvalReport(overall_auc=1.0,
                        group_aucs={"style": {"bach": 1.0, "pop": None}},
                        scores=scores, errors=[("c.mid", "ParseError: nope")])
    parsed = parse_report_kv(render_report_kv(report))
    assert parsed["overall_auc"] == report.overall_auc
    assert parsed["groups"]["style"]["bach"] == (1.0, 2)
    assert parsed["groups"]["style"]["pop"] == (None, 0)
    assert parsed["excerpts"][0]["ai_probability"] == 1 / 3  # %.17g is exact
    assert parsed["excerpts"][1]["human_probability"] == 1 - 2 / 3
    assert parsed["errors"] == [{"path": "c.mid", "message": "ParseError: nope"}]
