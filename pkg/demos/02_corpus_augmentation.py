#!/usr/bin/env python3
"""Corpus expansion: every legal transposition, plus random head-truncation.

Shows the shift-count law (128 minus the pitch range), the guaranteed
identity variant, and the 6000 -> 186000 expansion arithmetic.
"""

import numpy as np

from psae import (AugmentPolicy, PitchSequence, expand_corpus,
                  expand_sequence_detailed, formula_shift_count, legal_shifts,
                  transpose)
from psae.quantize import REST_ID, GridUnit

melody = PitchSequence(
    tokens=np.array([60, 62, 64, REST_ID, 65, 67, 65, 64, 62, 60] * 12, dtype=np.int16),
    grid=GridUnit.SIXTEENTH, source_id="theme")

shifts = legal_shifts(melody)
print(f"pitch range {melody.pitch_tokens.min()}..{melody.pitch_tokens.max()} "
      f"admits {len(shifts)} shifts ({shifts[0]:+d} .. {shifts[-1]:+d})")
print(f"closed-form count (kept as a diagnostic, one too high): "
      f"{formula_shift_count(melody)}")

up5 = transpose(melody, 5)
print(f"shift +5 keeps intervals: {np.diff(melody.pitch_tokens[:5]).tolist()} -> "
      f"{np.diff(up5.pitch_tokens[:5]).tolist()}, rests stay rests")

policy = AugmentPolicy(transpositions_per_seq=8, truncated_per_seq=3,
                       truncation_min=1, truncation_max=100, seed=13)
variants = expand_sequence_detailed(melody, policy)
print(f"\npolicy: {policy.transpositions_per_seq} transpositions, "
      f"{policy.truncated_per_seq} of them truncated")
for v in variants:
    cut = f", first {v.truncation} tokens dropped" if v.truncation else ""
    print(f"  shift {v.shift:+3d}: length {len(v.sequence):3d}{cut}")
assert any(v.shift == 0 for v in variants), "identity transposition always kept"

# the production numbers: 6000 sources x 31 variants = 186000 training rows
rng = np.random.default_rng(0)
corpus = []
for i in range(6000):
    walk = np.clip(rng.integers(-2, 3, size=256).cumsum() + 64, 20, 108)
    corpus.append(PitchSequence(tokens=walk.astype(np.int16),
                                grid=GridUnit.THIRTY_SECOND, source_id=f"s{i}"))
expanded = expand_corpus(corpus, AugmentPolicy(seed=1))
print(f"\n{len(corpus)} sources x 31 -> {len(expanded)} sequences")
assert len(expanded) == 186_000
