"""Token corpus files: one line per sequence,
``source_id<TAB>grid<TAB>space-separated token ids``.

A corpus directory is any directory of ``*.tokens`` files; readers walk it
in sorted filename order so downstream runs are reproducible. The format
is UTF-8 and diff-friendly on purpose.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import PsaeError
from .quantize import GridUnit, PitchSequence

TOKENS_SUFFIX = ".tokens"


class CorpusFormatError(PsaeError):
    pass


def format_sequence(seq: PitchSequence) -> str:
    ids = " ".join(str(int(t)) for t in seq.tokens)
    return f"{seq.source_id}\t{seq.grid.value}\t{ids}"


def parse_sequence_line(line: str) -> PitchSequence:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3:
        raise CorpusFormatError(f"expected 3 tab-separated fields, got {len(parts)}")
    source_id, grid_name, ids = parts
    try:
        grid = GridUnit(grid_name)
    except ValueError:
        raise CorpusFormatError(f"unknown grid unit {grid_name!r}")
    try:
        tokens = np.array([int(t) for t in ids.split()], dtype=np.int16)
        return PitchSequence(tokens=tokens, grid=grid, source_id=source_id)
    except ValueError as exc:
        raise CorpusFormatError(f"bad token list for {source_id!r}: {exc}")


def write_corpus_file(path: str | Path, sequences: list[PitchSequence]) -> None:
    text = "".join(format_sequence(s) + "\n" for s in sequences)
    Path(path).write_text(text, encoding="utf-8")


def read_corpus_file(path: str | Path) -> list[PitchSequence]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(parse_sequence_line(line))
        except CorpusFormatError as exc:
            raise CorpusFormatError(f"{path}:{n}: {exc}")
    return out


def read_corpus_dir(directory: str | Path) -> list[PitchSequence]:
    directory = Path(directory)
    files = sorted(directory.glob(f"*{TOKENS_SUFFIX}"))
    if not files:
        raise CorpusFormatError(f"no {TOKENS_SUFFIX} files in {directory}")
    sequences: list[PitchSequence] = []
    for f in files:
        sequences.extend(read_corpus_file(f))
    return sequences
