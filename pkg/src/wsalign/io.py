"""File formats.

Emission matrix (``.emis``)
    ``b"EMIS"``, then little-endian u32 T, u32 N, u32 frame shift in
    microseconds, then T*N little-endian float32 log posteriors, row-major.

Vocabulary
    One symbol per line; line number (1-based) is the token id.

Transcripts
    One utterance per line, words separated by ``|``, phones by spaces.

Reference alignment (``.tsv``)
    ``phone start_frame end_frame word_index`` per phone; a
    ``# frames T`` comment records the utterance length.

Alignment output (``.tsv`` + ``.json``)
    ``phone start_ms end_ms word_index`` per segment, disfluency events as
    ``# EVENT kind frame word_index`` comment lines; the JSON record holds
    cost, OER, beta, mode and frame count.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .aligner import Alignment, Event, Mode, Segment
from .graphs import EventKind, LogProbMatrix, PhoneTranscript, PhoneVocab
from .synth import RefAlignment

MAGIC = b"EMIS"
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    pass


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_emissions(path, e: LogProbMatrix) -> None:
    T, N = e.values.shape
    header = _HEADER.pack(MAGIC, T, N, int(round(e.frame_shift_ms * 1000)))
    body = np.ascontiguousarray(e.values, dtype="<f4").tobytes()
    atomic_write(path, header + body)


def read_emissions(path, renormalize: bool = False) -> LogProbMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, T, N, shift_us = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * T * N
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(T, N)
    try:
        return LogProbMatrix.from_logits(values.astype(np.float64), shift_us / 1000.0,
                                         renormalize=renormalize)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_vocab(path) -> PhoneVocab:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read vocabulary: {exc}") from None
    symbols = [ln.strip() for ln in lines if ln.strip()]
    try:
        return PhoneVocab(tuple(symbols))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_vocab(path, vocab: PhoneVocab) -> None:
    atomic_write(path, "\n".join(vocab.symbols) + "\n")


def read_transcripts(path, vocab: PhoneVocab) -> list[PhoneTranscript]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(PhoneTranscript.parse(line, vocab))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_transcripts(path, transcripts: Iterable[PhoneTranscript], vocab: PhoneVocab) -> None:
    atomic_write(path, "".join(t.to_line(vocab) + "\n" for t in transcripts))


def write_ref_alignment(path, ref: RefAlignment, vocab: PhoneVocab) -> None:
    lines = [f"# frames {ref.num_frames}"]
    for w, wid in zip(ref.words, ref.word_ids):
        lines.append("# word")
        for phone, start, end in w:
            lines.append(f"{vocab.symbol(phone)}\t{start}\t{end}\t{wid}")
    atomic_write(path, "\n".join(lines) + "\n")


def read_ref_alignment(path, vocab: PhoneVocab, utt_id: str | None = None) -> RefAlignment:
    """Read a reference alignment.

    ``# word`` comment lines delimit words when present (needed when a word
    is immediately repeated); otherwise consecutive segments sharing a word
    index form one word.
    """
    path = Path(path)
    num_frames = None
    words: list[list[tuple[int, int, int]]] = []
    word_ids: list[int] = []
    prev_wid = None
    marked = False
    new_word = False
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "frames":
                num_frames = int(parts[1])
            elif parts == ["word"]:
                marked = new_word = True
            continue
        cols = line.split()
        if len(cols) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 columns")
        try:
            phone = vocab.encode([cols[0]])[0]
            start, end, wid = int(cols[1]), int(cols[2]), int(cols[3])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if marked:
            starts_word = new_word or not words
        else:
            starts_word = prev_wid is None or wid != prev_wid
        if starts_word:
            words.append([])
            word_ids.append(wid)
        words[-1].append((phone, start, end))
        prev_wid = wid
        new_word = False
    if not words:
        raise FormatError(f"{path}: no segments")
    if num_frames is None:
        num_frames = words[-1][-1][2]
    ref = RefAlignment(utt_id or path.name.split(".")[0], words, num_frames, word_ids)
    try:
        ref.validate(vocab)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return ref


def write_alignment(path, ali: Alignment, vocab: PhoneVocab, frame_shift_ms: float,
                    record: dict | None = None) -> None:
    """Write the TSV and a JSON record next to it (same stem, ``.json``)."""
    path = Path(path)
    lines = ["# phone\tstart_ms\tend_ms\tword_index"]
    for seg in ali.segments:
        lines.append(
            f"{vocab.symbol(seg.phone)}\t{_ms(seg.start, frame_shift_ms)}\t"
            f"{_ms(seg.end, frame_shift_ms)}\t{seg.word_index}"
        )
    for ev in ali.events:
        lines.append(f"# EVENT {ev.kind.value} {ev.frame} {ev.word_index}")
    atomic_write(path, "\n".join(lines) + "\n")
    rec = {
        "mode": ali.mode.value,
        "cost": ali.total_cost,
        "oer": ali.oer,
        "beta": ali.beta,
        "num_frames": ali.num_frames,
        "frame_shift_ms": frame_shift_ms,
        "word_onsets": [list(w) for w in ali.word_onsets],
        "events": [
            {"kind": ev.kind.value, "frame": ev.frame, "word_index": ev.word_index,
             "span": ev.span, "start_frame": ev.start_frame, "occurrence": ev.occurrence}
            for ev in ali.events
        ],
    }
    if record:
        rec.update(record)
    atomic_write(path.with_suffix(".json"), json.dumps(rec, indent=2, sort_keys=True) + "\n")


def _ms(frames: int, shift: float) -> str:
    return f"{frames * shift:.6f}".rstrip("0").rstrip(".")


def read_alignment(path, vocab: PhoneVocab) -> tuple[Alignment, dict]:
    """Rebuild an Alignment (frame labels from segments) from TSV + JSON."""
    path = Path(path)
    rec_path = path.with_suffix(".json")
    rec = json.loads(rec_path.read_text()) if rec_path.exists() else {}
    shift = float(rec.get("frame_shift_ms", 10.0))
    segments, events = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("# EVENT"):
            _, _, kind, frame, wid = line.split()
            events.append(Event(EventKind(kind), int(frame), int(wid)))
            continue
        if line.startswith("#"):
            continue
        cols = line.split()
        if len(cols) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 columns")
        try:
            phone = vocab.encode([cols[0]])[0]
            start = int(round(float(cols[1]) / shift))
            end = int(round(float(cols[2]) / shift))
            segments.append(Segment(phone, start, end, int(cols[3])))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    num_frames = int(rec.get("num_frames", segments[-1].end if segments else 0))
    labels = [vocab.blank_id] * num_frames
    for seg in segments:
        labels[seg.start:seg.end] = [seg.phone] * (seg.end - seg.start)
    ali = Alignment(labels, segments, events, [s.phone for s in segments],
                    float(rec.get("cost", float("nan"))), Mode(rec.get("mode", "linear")),
                    rec.get("beta"), rec.get("oer"))
    if rec.get("events") is not None and len(rec["events"]) == len(events):
        ali.events = [Event(EventKind(ev["kind"]), int(ev["frame"]), int(ev["word_index"]),
                            int(ev.get("span", 1)), int(ev.get("start_frame", 0)),
                            int(ev.get("occurrence", 1))) for ev in rec["events"]]
    if "word_onsets" in rec:
        ali.word_onsets = [(int(j), int(t)) for j, t in rec["word_onsets"]]
    else:
        ali.word_onsets = [(s.word_index, s.start) for i, s in enumerate(segments)
                           if i == 0 or segments[i - 1].word_index != s.word_index]
    return ali, rec


def write_manifest(path, records: Iterable[dict]) -> None:
    atomic_write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def read_manifest(path) -> list[dict]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out
