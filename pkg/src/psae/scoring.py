"""Provenance scoring: mask each note in turn, read the model's probability
of the true pitch, and average. High average probability means the clip
looks like the machine-composed training distribution; 1 - p is reported
as the probability of human origin. Labeled manifests aggregate the
1 - p detection scores into rank-sum (Mann-Whitney) AUCs, overall and per
group key. Nothing in this path is random.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PsaeError
from .model import Checkpoint, ModelParams, forward
from .quantize import PitchSequence, SequenceTooLong

_SCORING_CHUNK = 128  # single-mask variants evaluated per forward pass


class NoScoreablePositions(PsaeError):
    pass


class SingleClassOnly(PsaeError):
    pass


class ManifestMalformed(PsaeError):
    pass


@dataclass
class NoteProbabilities:
    """Model probability of the true pitch at each scoreable position."""

    probabilities: np.ndarray  # float64, each in (0, 1)
    positions: np.ndarray      # int indices into the token sequence

    def __len__(self) -> int:
        return len(self.probabilities)


@dataclass(frozen=True)
class ExcerptScore:
    source_id: str
    ai_probability: float
    n_notes: int

    @property
    def human_probability(self) -> float:
        return 1.0 - self.ai_probability


def _params_of(model: Checkpoint | ModelParams) -> ModelParams:
    return model.params if isinstance(model, Checkpoint) else model


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z, dtype=np.float64)
    return e / e.sum(axis=-1, keepdims=True)


def _scoreable_positions(tokens: np.ndarray, n_classes: int,
                         whole_notes: bool) -> list[np.ndarray]:
    """Index groups to mask together: one per grid step, or one per
    sustained note (run of equal pitch tokens) when whole_notes is set."""
    pitch_at = np.nonzero(tokens < n_classes)[0]
    if not whole_notes:
        return [np.array([i]) for i in pitch_at]
    groups: list[np.ndarray] = []
    run: list[int] = []
    for i in pitch_at:
        if run and (i != run[-1] + 1 or tokens[i] != tokens[run[-1]]):
            groups.append(np.array(run))
            run = []
        run.append(int(i))
    if run:
        groups.append(np.array(run))
    return groups


def note_probabilities(model: Checkpoint | ModelParams, seq: PitchSequence,
                       whole_notes: bool = False) -> NoteProbabilities:
    """Successive masking: for each scoreable (non-REST) position, run the
    model with only that position masked and record the softmax probability
    of the ground-truth pitch. Variants are batched; results are identical
    to one-at-a-time evaluation.

    whole_notes masks every step of a sustained note together and averages
    within the note, scoring musical notes instead of grid steps.
    """
    params = _params_of(model)
    config = params.config
    tokens = np.asarray(seq.tokens, dtype=np.int64)
    if len(tokens) > config.max_position:
        raise SequenceTooLong(
            f"sequence length {len(tokens)} exceeds max_position {config.max_position}")
    groups = _scoreable_positions(tokens, config.output_classes, whole_notes)
    if len(groups) < 2:
        raise NoScoreablePositions(
            f"{seq.source_id or 'sequence'} has {len(groups)} scoreable positions; need >= 2")
    probs = np.empty(len(groups))
    for start in range(0, len(groups), _SCORING_CHUNK):
        chunk = groups[start:start + _SCORING_CHUNK]
        batch = np.tile(tokens, (len(chunk), 1))
        for row, positions in enumerate(chunk):
            batch[row, positions] = config.mask_id
        logits = forward(params, batch).data
        for row, positions in enumerate(chunk):
            p = _softmax_rows(logits[row, positions])
            probs[start + row] = p[np.arange(len(positions)), tokens[positions]].mean()
    first_steps = np.array([int(g[0]) for g in groups])
    return NoteProbabilities(probabilities=probs, positions=first_steps)


def ai_probability(note_probs: NoteProbabilities) -> float:
    """Arithmetic mean of the per-note true-pitch probabilities."""
    if len(note_probs) == 0:
        raise NoScoreablePositions("no note probabilities to average")
    return float(np.mean(note_probs.probabilities))


def score_sequence(model: Checkpoint | ModelParams, seq: PitchSequence,
                   whole_notes: bool = False) -> ExcerptScore:
    note_probs = note_probabilities(model, seq, whole_notes)
    return ExcerptScore(source_id=seq.source_id,
                        ai_probability=ai_probability(note_probs),
                        n_notes=len(note_probs))


def compute_auc(scores, labels) -> float:
    """Rank-sum AUC: P(random positive outscores random negative), ties
    counted half. labels are 1 for positive, 0 for negative."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassOnly(f"need both classes, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    rank_sum = ranks[positive].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


GROUP_KEYS = ("style", "algorithm", "published")


@dataclass
class ManifestRow:
    path: str
    label: str
    groups: dict[str, str] = field(default_factory=dict)


@dataclass
class EvalReport:
    overall_auc: float
    group_aucs: dict[str, dict[str, float | None]]
    scores: list[tuple[ManifestRow, ExcerptScore]]
    errors: list[tuple[str, str]]

    @property
    def n_scored(self) -> int:
        return len(self.scores)

    @property
    def n_skipped(self) -> int:
        return len(self.errors)


def read_manifest(path: str | Path) -> list[ManifestRow]:
    """CSV with header path,label[,style,algorithm,published]; label must be
    human or ai. Relative paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    rows: list[ManifestRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "path" not in header or "label" not in header:
            raise ManifestMalformed(f"manifest needs path and label columns, got {header}")
        unknown = set(header) - {"path", "label", *GROUP_KEYS}
        if unknown:
            raise ManifestMalformed(f"unknown manifest columns: {sorted(unknown)}")
        for line_no, record in enumerate(reader, start=2):
            file_path = (record.get("path") or "").strip()
            label = (record.get("label") or "").strip()
            if not file_path or label not in ("human", "ai"):
                raise ManifestMalformed(
                    f"line {line_no}: need a path and label human|ai, got {record}")
            resolved = file_path if Path(file_path).is_absolute() else str(base / file_path)
            groups = {k: (record.get(k) or "").strip() for k in GROUP_KEYS}
            rows.append(ManifestRow(path=resolved, label=label,
                                    groups={k: v for k, v in groups.items() if v}))
    if not rows:
        raise ManifestMalformed("manifest has no data rows")
    return rows


def _group_aucs(scored: list[tuple[ManifestRow, ExcerptScore]]) -> dict[str, dict[str, float | None]]:
    """Within-group AUCs: each value of a group key is scored only against
    rows carrying that same value. None marks a single-class group."""
    out: dict[str, dict[str, float | None]] = {}
    for key in GROUP_KEYS:
        values = sorted({row.groups[key] for row, _ in scored if row.groups.get(key)})
        if not values:
            continue
        per_value: dict[str, float | None] = {}
        for value in values:
            subset = [(row, sc) for row, sc in scored if row.groups.get(key) == value]
            detection = [sc.human_probability for _, sc in subset]
            labels = [1 if row.label == "human" else 0 for row, _ in subset]
            try:
                per_value[value] = compute_auc(detection, labels)
            except SingleClassOnly:
                per_value[value] = None
        out[key] = per_value
    return out


def evaluate_manifest(model: Checkpoint | ModelParams, manifest: str | Path | list[ManifestRow],
                      scorer=None, whole_notes: bool = False) -> EvalReport:
    """Score every manifest row through the full pipeline and aggregate
    AUCs with the human label as the positive class and 1 - p as the
    detection score. Rows that fail preprocessing are collected, counted,
    and excluded from every AUC.

    scorer(path) -> PitchSequence may be injected; the default parses the
    file as a Standard MIDI File (see pipeline.sequence_from_midi_path).
    """
    if scorer is None:
        from .pipeline import sequence_from_midi_path
        scorer = sequence_from_midi_path
    rows = manifest if isinstance(manifest, list) else read_manifest(manifest)
    scored: list[tuple[ManifestRow, ExcerptScore]] = []
    errors: list[tuple[str, str]] = []
    for row in rows:
        try:
            seq = scorer(row.path)
            scored.append((row, score_sequence(model, seq, whole_notes)))
        except (PsaeError, OSError) as exc:
            errors.append((row.path, f"{type(exc).__name__}: {exc}"))
    if not scored:
        raise ManifestMalformed("every manifest row failed preprocessing")
    detection = [sc.human_probability for _, sc in scored]
    labels = [1 if row.label == "human" else 0 for row, _ in scored]
    overall = compute_auc(detection, labels)
    return EvalReport(overall_auc=overall, group_aucs=_group_aucs(scored),
                      scores=scored, errors=errors)
