"""psae: pitch-sequence autoencoder for MIDI provenance scoring.

Train a small shared-parameter transformer as a masked language model on
machine-composed monophonic MIDI, then score new clips by how well the
model predicts each note when masked: the mean per-note probability is
the machine-composition score, and 1 - p the human one.
"""

from .augment import (AugmentedVariant, AugmentPolicy, expand_corpus, expand_sequence,
                      expand_sequence_detailed, formula_shift_count, legal_shifts,
                      random_truncate, transpose)
from .checkpoint import (load_checkpoint, load_checkpoint_bytes, save_checkpoint,
                         save_checkpoint_bytes)
from .errors import PsaeError
from .midi_ingest import (MidiFile, NoteEvent, extract_monophonic_notes, parse_smf,
                          write_smf)
from .model import (Checkpoint, ModelConfig, ModelParams, TrainHyper, TrainingBatch,
                    flooded_loss, forward, init_model, make_mlm_batch, param_count,
                    train)
from .pipeline import sequence_from_midi_bytes, sequence_from_midi_path
from .quantize import (GridUnit, PitchSequence, detect_grid_unit,
                       quantize_to_pitch_sequence, resolve_triplets)
from .scoring import (EvalReport, ExcerptScore, NoteProbabilities, ai_probability,
                      compute_auc, evaluate_manifest, note_probabilities,
                      score_sequence)

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy", "AugmentedVariant", "Checkpoint", "EvalReport", "ExcerptScore",
    "GridUnit", "MidiFile", "ModelConfig", "ModelParams", "NoteEvent",
    "NoteProbabilities", "PitchSequence", "PsaeError", "TrainHyper", "TrainingBatch",
    "ai_probability", "compute_auc", "detect_grid_unit", "evaluate_manifest",
    "expand_corpus", "expand_sequence", "expand_sequence_detailed", "extract_monophonic_notes",
    "flooded_loss", "formula_shift_count", "forward", "init_model", "legal_shifts",
    "load_checkpoint", "load_checkpoint_bytes", "make_mlm_batch", "note_probabilities",
    "param_count", "parse_smf", "quantize_to_pitch_sequence", "random_truncate",
    "resolve_triplets", "save_checkpoint", "save_checkpoint_bytes", "score_sequence",
    "sequence_from_midi_bytes", "sequence_from_midi_path", "train", "transpose",
    "write_smf",
]
