"""Planted-truth corpora: synthetic emissions and emission-level disfluencies.

``synth_emissions`` turns a reference alignment into a posterior matrix that
puts ``peak`` mass on the reference label of every frame. ``corrupt`` then
splices frames to simulate part-word repetitions (PW), word repetitions (W),
phrase repetitions (PH) and word deletions (D), returning the corrupted
matrix together with the verbatim alignment and the untouched approximate
transcript.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graphs import LogProbMatrix, PhoneTranscript, PhoneVocab

DISFLUENCY_TYPES = ("PW", "W", "PH", "D")
SEVERITIES = (0.1, 0.2, 0.3)


class SynthError(ValueError):
    pass


class CorruptionError(SynthError):
    pass


@dataclass
class RefAlignment:
    """Reference alignment: words of (phone, start_frame, end_frame).

    ``word_ids`` maps each entry to the word of the approximate transcript it
    realises; copies inserted by a repetition share their source's id.
    """

    utt_id: str
    words: list[list[tuple[int, int, int]]]
    num_frames: int
    word_ids: list[int] | None = None

    def __post_init__(self):
        self.words = [[tuple(int(x) for x in seg) for seg in w] for w in self.words]
        if self.word_ids is None:
            self.word_ids = list(range(len(self.words)))
        if len(self.word_ids) != len(self.words):
            raise SynthError("word_ids and words differ in length")

    def validate(self, vocab: PhoneVocab | None = None) -> None:
        prev_end = 0
        allowed = set(vocab.phone_ids) if vocab else None
        for w in self.words:
            if not w:
                raise SynthError(f"{self.utt_id}: empty word")
            for phone, start, end in w:
                if start < prev_end or end <= start:
                    raise SynthError(f"{self.utt_id}: overlapping or unordered segments at frame {start}")
                if allowed is not None and phone not in allowed:
                    raise SynthError(f"{self.utt_id}: token {phone} is not a phone")
                prev_end = end
        if prev_end > self.num_frames:
            raise SynthError(f"{self.utt_id}: segment ends at {prev_end} beyond {self.num_frames} frames")

    def segments(self) -> list[tuple[int, int, int, int]]:
        """Flat (phone, start, end, word_id) list in time order."""
        return [(p, s, e, wid) for w, wid in zip(self.words, self.word_ids) for p, s, e in w]

    def frame_labels(self, blank_id: int) -> list[int]:
        labels = [blank_id] * self.num_frames
        for phone, start, end, _ in self.segments():
            labels[start:end] = [phone] * (end - start)
        return labels

    def transcript(self) -> PhoneTranscript:
        return PhoneTranscript(tuple(tuple(p for p, _, _ in w) for w in self.words))

    def onsets(self) -> list[tuple[int, int]]:
        return [(p, s) for p, s, _, _ in self.segments()]

    def word_onsets(self) -> list[tuple[int, int]]:
        return [(wid, w[0][1]) for w, wid in zip(self.words, self.word_ids)]


@dataclass
class DisfluencySpec:
    """One planted disfluency.

    ``word`` is the first affected word of the approximate transcript;
    ``amount`` is the repeat count (W), phrase length (PH), prefix length in
    phones (PW) or number of deleted words (D). ``frame``/``num_frames``
    locate the inserted (or, for D, removed) frames in the corrupted matrix.
    """

    type: str
    word: int
    amount: int
    frame: int = -1
    num_frames: int = 0

    def words_touched(self) -> range:
        if self.type in ("PH", "D"):
            return range(self.word, self.word + self.amount)
        return range(self.word, self.word + 1)


@dataclass
class CorruptionResult:
    emissions: LogProbMatrix
    verbatim: RefAlignment
    approximate: PhoneTranscript
    specs: list[DisfluencySpec]
    p: float | None


def utterance_rng(seed: int, utt_id: str) -> np.random.Generator:
    """Per-utterance generator keyed on (corpus seed, utterance id)."""
    return np.random.default_rng([int(seed), zlib.crc32(utt_id.encode())])


def random_ref_alignment(
    vocab: PhoneVocab,
    rng: np.random.Generator,
    utt_id: str = "utt",
    num_words: tuple[int, int] = (6, 12),
    phone_frames: tuple[int, int] = (3, 9),
) -> RefAlignment:
    """Random word sequence with plausible durations.

    Words hold 1-5 distinct phones; pauses between words are 0-3 frames, and
    a pause is forced where two adjacent words would otherwise run the same
    phone into itself (CTC could not separate them).
    """
    phones = np.array(vocab.phone_ids)
    n = int(rng.integers(num_words[0], num_words[1] + 1))
    lengths = rng.choice([1, 2, 3, 4, 5], size=n, p=[0.1, 0.25, 0.3, 0.2, 0.15])
    t = int(rng.integers(4, 12))
    words = []
    last_phone = None
    for length in lengths:
        ws = [int(p) for p in rng.choice(phones, size=int(length), replace=False)]
        gap = int(rng.choice([0, 0, 1, 2, 3]))
        if words and gap == 0 and ws[0] == last_phone:
            gap = 1
        if words:
            t += gap
        segs = []
        for p in ws:
            d = int(rng.integers(phone_frames[0], phone_frames[1] + 1))
            segs.append((p, t, t + d))
            t += d
        words.append(segs)
        last_phone = ws[-1]
    t += int(rng.integers(4, 12))
    return RefAlignment(utt_id, words, t)


def synth_emissions(ref: RefAlignment, vocab: PhoneVocab, peak: float = 0.9,
                    rng_seed: int | np.random.Generator = 0,
                    frame_shift_ms: float = 10.0) -> LogProbMatrix:
    """Posteriors with ``peak`` on each frame's reference label ([SIL] off-segment).

    The remaining mass is spread over every other token with uniform(0.5,
    1.5) jitter, so rows are proper distributions with no zeros.
    """
    if not 0.5 < peak < 1:
        raise SynthError("peak must lie in (0.5, 1)")
    ref.validate()
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    labels = np.asarray(ref.frame_labels(vocab.sil_id)) - 1
    T, N = ref.num_frames, vocab.size
    jitter = rng.uniform(0.5, 1.5, size=(T, N))
    jitter[np.arange(T), labels] = 0.0
    probs = (1.0 - peak) * jitter / jitter.sum(axis=1, keepdims=True)
    probs[np.arange(T), labels] = peak
    return LogProbMatrix(np.log(probs), frame_shift_ms)


def _sample_spec(kind: str, n: int, word_lengths: Sequence[int], used: set[int],
                 deleted: int, rng: np.random.Generator) -> DisfluencySpec | None:
    """Pick a placement for one disfluency of ``kind``, or None if impossible."""
    free = [j for j in range(n) if j not in used]
    if kind == "W":
        cands = [j for j in free if j < n - 1]
        if not cands:
            return None
        return DisfluencySpec("W", int(rng.choice(cands)), int(rng.integers(1, 4)))
    if kind == "PW":
        cands = [j for j in free if j < n - 1 and word_lengths[j] >= 2]
        if not cands:
            return None
        j = int(rng.choice(cands))
        return DisfluencySpec("PW", j, int(rng.integers(1, word_lengths[j])))
    if kind == "PH":
        size = int(rng.integers(2, 4))
        cands = [j for j in range(n - size + 1) if all(k not in used for k in range(j, j + size))]
        if not cands:
            return None
        return DisfluencySpec("PH", int(rng.choice(cands)), size)
    if kind == "D":
        size = int(rng.integers(1, 4))
        if deleted + size >= n:
            return None
        cands = [j for j in range(n - size + 1) if all(k not in used for k in range(j, j + size))]
        if not cands:
            return None
        return DisfluencySpec("D", int(rng.choice(cands)), size)
    raise ValueError(f"unknown disfluency type {kind!r}")


def num_disfluencies(p: float, n: int) -> int:
    """ceil(p * n), guarded against float noise (0.3 * 10 is 3.0000000000000004)."""
    return math.ceil(round(p * n, 9))


def sample_specs(ref: RefAlignment, rng: np.random.Generator, p: float | None = None,
                 types: Sequence[str] = DISFLUENCY_TYPES,
                 max_tries: int = 200) -> tuple[float, list[DisfluencySpec]]:
    """Draw p from {0.1, 0.2, 0.3} (unless given) and ceil(p * n) placements.

    Each disfluency takes words no other one touches; when a drawn type has
    no legal placement another type is drawn.
    """
    n = len(ref.words)
    if n == 0:
        raise CorruptionError(f"{ref.utt_id}: no words")
    if p is None:
        p = float(rng.choice(SEVERITIES))
    count = num_disfluencies(p, n)
    lengths = [len(w) for w in ref.words]
    used: set[int] = set()
    deleted = 0
    specs = []
    tries = 0
    while len(specs) < count:
        tries += 1
        if tries > max_tries:
            raise CorruptionError(f"{ref.utt_id}: cannot place {count} disfluencies in {n} words")
        spec = _sample_spec(str(rng.choice(list(types))), n, lengths, used, deleted, rng)
        if spec is None:
            continue
        used.update(spec.words_touched())
        if spec.type == "D":
            deleted += spec.amount
        specs.append(spec)
    return p, specs


@dataclass
class _Piece:
    start: int  # source rows [start, end)
    end: int
    word: int | None = None  # source word, None for pauses
    phones: list[tuple[int, int, int]] = field(default_factory=list)  # source-frame segments
    spec: int | None = None  # index of the spec that inserted this piece


def _pause_rows(ref: RefAlignment, n: int) -> list[int]:
    """``n`` source rows taken from the longest stretch outside every segment."""
    covered = np.zeros(ref.num_frames, dtype=bool)
    for _, s, e_, _ in ref.segments():
        covered[s:e_] = True
    best, run_start = (0, 0), None
    for t in range(ref.num_frames + 1):
        free = t < ref.num_frames and not covered[t]
        if free and run_start is None:
            run_start = t
        elif not free and run_start is not None:
            if t - run_start > best[1] - best[0]:
                best = (run_start, t)
            run_start = None
    if best[1] == best[0]:
        raise CorruptionError(f"{ref.utt_id}: no pause frames to separate a repeated phone")
    length = best[1] - best[0]
    return [best[0] + i % length for i in range(n)]


def _separate(pieces: list[_Piece], ref: RefAlignment, gap: int) -> list[_Piece]:
    """Put a short pause between spliced pieces that would run one phone into itself."""
    out: list[_Piece] = []
    for pc in pieces:
        prev = next((q for q in reversed(out) if q.end > q.start), None)
        if (pc.phones and prev is not None and prev.phones and prev.end != pc.start
                and prev.phones[-1][0] == pc.phones[0][0]):
            owner = pc.spec if pc.spec is not None else prev.spec
            out.extend(_Piece(r, r + 1, None, [], owner) for r in _pause_rows(ref, gap))
        out.append(pc)
    return out


def apply_specs(ref: RefAlignment, e: LogProbMatrix, specs: Sequence[DisfluencySpec],
                crossfade: bool = True, gap: int = 3) -> tuple[LogProbMatrix, RefAlignment]:
    """Splice ``e`` according to ``specs``; fills in each spec's frame span.

    Where a splice would put the same phone on both sides (e.g. a one-phone
    part-word repeat), ``gap`` pause frames from the utterance's own silence
    are inserted so the repetition stays audible.
    """
    if e.num_frames != ref.num_frames:
        raise CorruptionError(
            f"{ref.utt_id}: reference has {ref.num_frames} frames, emissions {e.num_frames}"
        )
    words = ref.words
    n = len(words)
    pieces: list[_Piece] = []
    cursor = 0
    for j, w in enumerate(words):
        ws, we = w[0][1], w[-1][2]
        if ws > cursor:
            pieces.append(_Piece(cursor, ws))
        pieces.append(_Piece(ws, we, j, list(w)))
        cursor = we
    if cursor < ref.num_frames:
        pieces.append(_Piece(cursor, ref.num_frames))

    def index_of(j: int) -> int:
        for i, pc in enumerate(pieces):
            if pc.word == j and pc.spec is None:
                return i
        raise CorruptionError(f"{ref.utt_id}: word {j} is no longer present")

    def copy(pc: _Piece, k: int, upto: int | None = None) -> _Piece:
        phones = pc.phones if upto is None else pc.phones[:upto]
        end = pc.end if upto is None else phones[-1][2]
        return _Piece(pc.start, end, pc.word, list(phones), k)

    for k, spec in enumerate(specs):
        if spec.type == "D":
            first, last = index_of(spec.word), index_of(spec.word + spec.amount - 1)
            removed = sum(pc.end - pc.start for pc in pieces[first:last + 1])
            spec.num_frames = removed
            marker = _Piece(0, 0, None, [], k)
            pieces[first:last + 1] = [marker]
            continue
        i = index_of(spec.word)
        if spec.type == "W":
            inserted = [copy(pieces[i], k) for _ in range(spec.amount)]
        elif spec.type == "PW":
            inserted = [copy(pieces[i], k, upto=spec.amount)]
        elif spec.type == "PH":
            last = index_of(spec.word + spec.amount - 1)
            inserted = [copy(pc, k) for pc in pieces[i:last + 1]]
        else:
            raise ValueError(f"unknown disfluency type {spec.type!r}")
        pieces[i:i] = inserted

    pieces = _separate(pieces, ref, gap)

    # lay out the new timeline
    rows: list[np.ndarray] = []
    verbatim_words, word_ids = [], []
    t = 0
    for pc in pieces:
        if pc.spec is not None and specs[pc.spec].frame < 0:
            specs[pc.spec].frame = t
        if pc.end > pc.start:
            rows.append(np.arange(pc.start, pc.end))
        if pc.word is not None:
            shift = t - pc.start
            verbatim_words.append([(p, s + shift, e_ + shift) for p, s, e_ in pc.phones])
            word_ids.append(pc.word)
        t += pc.end - pc.start
    for spec in specs:
        if spec.type != "D":
            spec.num_frames = sum(pc.end - pc.start for pc in pieces
                                  if pc.spec is not None and specs[pc.spec] is spec)
    source = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    if len(source) == 0:
        raise CorruptionError(f"{ref.utt_id}: corruption removed every frame")
    values = e.values[source]
    if crossfade:
        values = crossfade_splices(values, source)
    verbatim = RefAlignment(ref.utt_id, verbatim_words, len(source), word_ids)
    verbatim.validate()
    return LogProbMatrix(values, e.frame_shift_ms), verbatim


def crossfade_splices(values: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Blend the two rows at each splice point in probability space.

    A splice lies between rows i and i+1 whenever their source rows are not
    consecutive. Row i becomes 2/3 of itself plus 1/3 of row i+1 and vice
    versa; each row is then renormalised.
    """
    splices = np.flatnonzero(source[1:] != source[:-1] + 1)
    if not len(splices):
        return values.copy()
    probs = np.exp(values)
    out = probs.copy()
    for i in splices:
        out[i] = (2 * probs[i] + probs[i + 1]) / 3
        out[i + 1] = (probs[i] + 2 * probs[i + 1]) / 3
    out /= out.sum(axis=1, keepdims=True)
    return np.log(out)


def corrupt(ref: RefAlignment, e: LogProbMatrix, rng_seed: int | np.random.Generator = 0,
            p: float | None = None, specs: Sequence[DisfluencySpec] | None = None,
            types: Sequence[str] = DISFLUENCY_TYPES) -> CorruptionResult:
    """Plant ceil(p * n) random disfluencies in ``e``.

    Repetitions are inserted before the original material; deletions drop
    whole words. The approximate transcript keeps every original word, so
    none of the disfluencies are transcribed.
    """
    ref.validate()
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if specs is None:
        p, specs = sample_specs(ref, rng, p, types)
    else:
        specs = [DisfluencySpec(s.type, s.word, s.amount) for s in specs]
        p = None if p is None else float(p)
    corrupted, verbatim = apply_specs(ref, e, specs)
    return CorruptionResult(corrupted, verbatim, ref.transcript(), list(specs), p)


def random_refs(vocab: PhoneVocab, count: int, seed: int = 0, prefix: str = "utt",
                **kwargs) -> list[RefAlignment]:
    refs = []
    for i in range(count):
        utt_id = f"{prefix}{i:04d}"
        refs.append(random_ref_alignment(vocab, utterance_rng(seed, utt_id), utt_id, **kwargs))
    return refs


def synth_utterance(ref: RefAlignment, vocab: PhoneVocab, rng_seed: int = 0,
                    clean_fraction: float = 0.0, peak: float = 0.9,
                    frame_shift_ms: float = 10.0) -> tuple[CorruptionResult, bool]:
    """Emissions for one reference, clean with probability ``clean_fraction``.

    Deterministic in (``rng_seed``, utterance id). Clean utterances report
    p = 0.
    """
    if not 0.0 <= clean_fraction <= 1.0:
        raise SynthError("clean_fraction must lie in [0, 1]")
    rng = utterance_rng(rng_seed, ref.utt_id)
    clean = bool(rng.random() < clean_fraction)
    e = synth_emissions(ref, vocab, peak, rng, frame_shift_ms)
    if clean:
        return CorruptionResult(e, ref, ref.transcript(), [], 0.0), True
    return corrupt(ref, e, rng), False


def manifest_record(ref: RefAlignment, res: CorruptionResult, clean: bool,
                    vocab: PhoneVocab) -> dict:
    return {
        "id": ref.utt_id,
        "emissions": f"emissions/{ref.utt_id}.emis",
        "ref": f"refs/{ref.utt_id}.tsv",
        "transcript": res.approximate.to_line(vocab),
        "verbatim_transcript": res.verbatim.transcript().to_line(vocab),
        "num_words": len(ref.words),
        "num_frames": res.emissions.num_frames,
        "p": res.p,
        "clean": clean,
        "specs": [asdict(s) for s in res.specs],
    }


def build_corpus(refs: Iterable[RefAlignment], vocab: PhoneVocab, out_dir: str | Path,
                 rng_seed: int = 0, clean_fraction: float = 0.0, peak: float = 0.9,
                 frame_shift_ms: float = 10.0) -> list[dict]:
    """Write emissions, verbatim references and a JSON-lines manifest.

    Each utterance is kept clean with probability ``clean_fraction`` and
    corrupted otherwise (0.5 gives a mixed clean/disfluent test set).
    Layout under ``out_dir``: ``emissions/<id>.emis``, ``refs/<id>.tsv``,
    ``manifest.jsonl``.
    """
    from . import io as wio

    out = Path(out_dir)
    records = []
    for ref in refs:
        res, clean = synth_utterance(ref, vocab, rng_seed, clean_fraction, peak, frame_shift_ms)
        rec = manifest_record(ref, res, clean, vocab)
        wio.write_emissions(out / rec["emissions"], res.emissions)
        wio.write_ref_alignment(out / rec["ref"], res.verbatim, vocab)
        records.append(rec)
    if not records:
        raise SynthError("no reference alignments to build a corpus from")
    wio.write_manifest(out / "manifest.jsonl", records)
    return records
