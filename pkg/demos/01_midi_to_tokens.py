#!/usr/bin/env python3
"""From raw MIDI bytes to a grid-quantized pitch sequence.

Builds a two-bar clip in memory (no files needed), walks it through the
parser, triplet resolution, grid detection, and quantization, and prints
what each stage sees.
"""

import numpy as np

from psae import (GridUnit, MidiFile, NoteEvent, detect_grid_unit,
                  extract_monophonic_notes, parse_smf, quantize_to_pitch_sequence,
                  resolve_triplets, write_smf)
from psae.quantize import REST_ID

TPQ = 480

# Two bars of 4/4: a quarter, an eighth-note triplet, a rest, then eighths.
clip = [
    NoteEvent(0, 480, 60, 80),              # C4 quarter
    NoteEvent(480, 160, 62, 80),            # eighth-note triplet group
    NoteEvent(640, 160, 64, 80),
    NoteEvent(800, 160, 65, 80),
    NoteEvent(960, 480, 67, 80),            # G4 quarter
    # half-beat rest here
    NoteEvent(1680, 240, 69, 80),           # eighths
    NoteEvent(1920, 240, 71, 80),
    NoteEvent(2160, 240, 72, 80),
    NoteEvent(2400, 480, 74, 80),
]

raw = write_smf(MidiFile(format=0, ticks_per_quarter=TPQ, tracks=[clip],
                         tempo_events=[(0, 600_000)]))
print(f"serialized clip: {len(raw)} bytes, starts with {raw[:4]!r}")

midi = parse_smf(raw)
notes = extract_monophonic_notes(midi)
print(f"parsed {len(notes)} monophonic notes at {midi.ticks_per_quarter} ticks/quarter")
print(f"tempo events (parsed, then ignored downstream): {midi.tempo_events}")

# The triplet group becomes three straight eighths or three straight
# sixteenths with equal probability; the tail of the clip shifts to match.
for seed in (0, 1, 2, 3):
    resolved = resolve_triplets(notes, np.random.default_rng(seed), TPQ)
    triplet_durs = [n.duration_tick for n in resolved[1:4]]
    print(f"seed {seed}: triplet group rewritten to durations {triplet_durs}")

resolved = resolve_triplets(notes, np.random.default_rng(0), TPQ)
grid = detect_grid_unit(resolved, TPQ)
print(f"shortest note selects the {grid.value} grid")

seq = quantize_to_pitch_sequence(resolved, grid, TPQ, source_id="demo-clip")
pretty = " ".join("." if t == REST_ID else str(int(t)) for t in seq.tokens)
print(f"{len(seq)} grid steps ({grid.value}):")
print(f"  {pretty}")

# tempo never matters: re-render the same notes at a different tempo
other = parse_smf(write_smf(MidiFile(0, TPQ, [clip], [(0, 300_000)])))
other_seq = quantize_to_pitch_sequence(
    resolve_triplets(extract_monophonic_notes(other), np.random.default_rng(0), TPQ),
    grid, TPQ, source_id="demo-clip-fast")
assert (other_seq.tokens == seq.tokens).all()
print("same tokens at double tempo: speed is not a feature")
