"""End-to-end preprocessing: MIDI bytes or path -> PitchSequence.

Triplet resolution is the only randomness; each file draws from a
generator seeded by (seed, source id), so any traversal or worker order
produces the same sequences, and scoring stays fully deterministic.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .augment import derive_seed
from .midi_ingest import extract_monophonic_notes, parse_smf
from .quantize import (PitchSequence, detect_grid_unit, quantize_to_pitch_sequence,
                       resolve_triplets)


def sequence_from_midi_bytes(data: bytes, source_id: str, seed: int = 0) -> PitchSequence:
    midi = parse_smf(data)
    notes = extract_monophonic_notes(midi)
    rng = np.random.default_rng(derive_seed(seed, source_id))
    notes = resolve_triplets(notes, rng, midi.ticks_per_quarter)
    grid = detect_grid_unit(notes, midi.ticks_per_quarter)
    return quantize_to_pitch_sequence(notes, grid, midi.ticks_per_quarter,
                                      source_id=source_id)


def sequence_from_midi_path(path: str | Path, seed: int = 0) -> PitchSequence:
    path = Path(path)
    return sequence_from_midi_bytes(path.read_bytes(), source_id=path.stem, seed=seed)
