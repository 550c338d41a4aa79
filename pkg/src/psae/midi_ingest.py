"""Standard MIDI File ingestion for single-melody clips.

Parses SMF bytes (format 0/1) into tick-accurate note events: variable
length deltas, running status, and note-on/note-off pairing (velocity-0
note-on counts as note-off) are all resolved here. The parser is strict
about chunk boundaries and raises domain errors instead of crashing on
mangled input. A minimal writer exists so tests and demos can build
fixture files; it is not a general-purpose MIDI writer.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

from .errors import PsaeError


class MalformedHeader(PsaeError):
    pass


class UnsupportedFormat(PsaeError):
    pass


class TruncatedChunk(PsaeError):
    pass


class UnmatchedNoteOn(PsaeError):
    pass


class PolyphonyDetected(PsaeError):
    pass


@dataclass(frozen=True)
class NoteEvent:
    """One sounded note. The interval is half-open: [onset, onset + duration)."""

    onset_tick: int
    duration_tick: int
    pitch: int
    velocity: int

    def __post_init__(self):
        if self.duration_tick < 1:
            raise ValueError(f"duration_tick must be >= 1, got {self.duration_tick}")
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch outside [0, 127]: {self.pitch}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity outside [1, 127]: {self.velocity}")

    @property
    def end_tick(self) -> int:
        return self.onset_tick + self.duration_tick


@dataclass
class MidiFile:
    format: int
    ticks_per_quarter: int
    tracks: list[list[NoteEvent]]
    tempo_events: list[tuple[int, int]] = field(default_factory=list)


class _ChunkReader:
    """Bounds-checked cursor over one chunk; never reads past its end."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.data)

    def u8(self) -> int:
        if self.pos >= len(self.data):
            raise TruncatedChunk("byte read past end of chunk")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedChunk(f"{n}-byte read past end of chunk")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def var_len(self) -> int:
        """MIDI variable-length quantity: 7 data bits per byte, MSB set on
        all but the last byte; at most 4 bytes."""
        value = 0
        for i in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise TruncatedChunk("variable-length quantity longer than 4 bytes")


def _parse_track(chunk: bytes) -> tuple[list[NoteEvent], list[tuple[int, int]]]:
    """One MTrk chunk -> (notes sorted by onset, tempo events)."""
    reader = _ChunkReader(chunk)
    notes: list[NoteEvent] = []
    tempos: list[tuple[int, int]] = []
    open_notes: dict[int, tuple[int, int]] = {}  # pitch -> (onset, velocity)
    tick = 0
    running_status = None

    def close_note(pitch: int, at_tick: int) -> None:
        started = open_notes.pop(pitch, None)
        if started is None:
            return  # orphan note-off: tolerated
        onset, velocity = started
        duration = max(1, at_tick - onset)
        notes.append(NoteEvent(onset, duration, pitch, velocity))

    while not reader.eof():
        tick += reader.var_len()
        status = reader.u8()
        if status < 0x80:
            if running_status is None:
                raise TruncatedChunk("data byte with no running status")
            reader.pos -= 1
            status = running_status
        if status == 0xFF:
            meta_type = reader.u8()
            length = reader.var_len()
            payload = reader.take(length)
            running_status = None
            if meta_type == 0x51 and length == 3:
                tempos.append((tick, int.from_bytes(payload, "big")))
            if meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):
            length = reader.var_len()
            reader.take(length)
            running_status = None
        elif status >= 0xF0:
            raise TruncatedChunk(f"unsupported system status byte 0x{status:02X}")
        else:
            running_status = status
            kind = status & 0xF0
            if kind in (0xC0, 0xD0):
                reader.u8()
                continue
            data1 = reader.u8()
            data2 = reader.u8()
            if data1 > 0x7F or data2 > 0x7F:
                raise TruncatedChunk(f"data byte out of range after status 0x{status:02X}")
            if kind == 0x90 and data2 > 0:
                if data1 in open_notes:
                    # restated note-on: close the running one first
                    close_note(data1, tick)
                open_notes[data1] = (tick, data2)
            elif kind == 0x80 or (kind == 0x90 and data2 == 0):
                close_note(data1, tick)
            # aftertouch / controller / pitch bend: two data bytes, ignored

    if open_notes:
        pitches = sorted(open_notes)
        raise UnmatchedNoteOn(f"note-on without note-off for pitches {pitches}")
    notes.sort(key=lambda n: (n.onset_tick, n.pitch))
    return notes, tempos


def parse_smf(data: bytes) -> MidiFile:
    """Parse Standard MIDI File bytes into a MidiFile of note events.

    Accepts format 0 and 1 with tick-based (non-SMPTE) division. Raises
    MalformedHeader, UnsupportedFormat, TruncatedChunk, or UnmatchedNoteOn.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader("missing MThd magic")
    header_len = struct.unpack(">I", data[4:8])[0]
    if header_len < 6 or 8 + header_len > len(data):
        raise MalformedHeader(f"bad MThd length {header_len}")
    fmt, n_tracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"SMF format {fmt} not supported")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division not supported")
    if division == 0:
        raise MalformedHeader("ticks per quarter note is zero")

    pos = 8 + header_len
    tracks: list[list[NoteEvent]] = []
    tempo_events: list[tuple[int, int]] = []
    while len(tracks) < n_tracks:
        if pos + 8 > len(data):
            raise TruncatedChunk(f"expected {n_tracks} tracks, found {len(tracks)}")
        chunk_type = data[pos:pos + 4]
        chunk_len = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        if pos + 8 + chunk_len > len(data):
            raise TruncatedChunk(f"chunk {chunk_type!r} overruns file")
        body = data[pos + 8:pos + 8 + chunk_len]
        pos += 8 + chunk_len
        if chunk_type != b"MTrk":
            continue  # alien chunk: skipped per the SMF spec
        notes, tempos = _parse_track(body)
        tracks.append(notes)
        tempo_events.extend(tempos)

    if not any(tracks):
        raise MalformedHeader("no track contains note events")
    tempo_events.sort()
    return MidiFile(format=fmt, ticks_per_quarter=division,
                    tracks=tracks, tempo_events=tempo_events)


def extract_monophonic_notes(midi: MidiFile) -> list[NoteEvent]:
    """Notes of the first track that has any, verified monophonic.

    Half-open intervals: a note ending exactly where the next begins is
    legal; any positive-length overlap raises PolyphonyDetected.
    """
    melodic = [t for t in midi.tracks if t]
    if len(melodic) > 1:
        warnings.warn(f"{len(melodic)} tracks contain notes; using the first",
                      stacklevel=2)
    notes = melodic[0]
    for a, b in zip(notes, notes[1:]):
        if a.end_tick > b.onset_tick:
            raise PolyphonyDetected(
                f"notes overlap: pitch {a.pitch} [{a.onset_tick}, {a.end_tick}) vs "
                f"pitch {b.pitch} at {b.onset_tick}")
    return list(notes)


def _var_len_bytes(value: int) -> bytes:
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(chunks))


def write_smf(midi: MidiFile) -> bytes:
    """Serialize a MidiFile back to SMF bytes (fixture support for tests
    and demos). Tempo events go on the first track."""
    out = bytearray()
    out += b"MThd" + struct.pack(">IHHH", 6, midi.format,
                                 len(midi.tracks), midi.ticks_per_quarter)
    for index, notes in enumerate(midi.tracks):
        events: list[tuple[int, int, bytes]] = []  # (tick, order, payload)
        if index == 0:
            for tick, usec_per_quarter in midi.tempo_events:
                events.append((tick, 0, b"\xff\x51\x03" + usec_per_quarter.to_bytes(3, "big")))
        for n in notes:
            events.append((n.onset_tick, 1, bytes((0x90, n.pitch, n.velocity))))
            events.append((n.end_tick, 0, bytes((0x80, n.pitch, 0x40))))
        events.sort(key=lambda e: (e[0], e[1]))
        body = bytearray()
        tick = 0
        for at, _, payload in events:
            body += _var_len_bytes(at - tick)
            body += payload
            tick = at
        body += b"\x00\xff\x2f\x00"
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return bytes(out)
