"""Corpus-level runs: align a planted-truth corpus, score it, ablate arcs."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .aligner import (
    ADAPTIVE,
    Alignment,
    AlignmentError,
    Mode,
    OerResult,
    adaptive_beta,
    compute_oer,
    force_align,
)
from .graphs import PH_MAX_WORDS, LogProbMatrix, PhoneTranscript, PhoneVocab
from .metrics import (
    BoundaryScores,
    BoundarySet,
    Level,
    MetricsReport,
    UttScores,
    boundary_metrics,
)
from .synth import DisfluencySpec, RefAlignment, random_refs, synth_utterance

log = logging.getLogger(__name__)

APPROXIMATE = "approximate"
VERBATIM = "verbatim"

ABLATIONS = {
    "full": (),
    "-PW": ("PW",),
    "-D": ("D",),
    "-W": ("W",),
    "-W-D": ("W", "D"),
    "-W-PW": ("W", "PW"),
    "-PW-D": ("PW", "D"),
}


@dataclass
class Utterance:
    id: str
    emissions: LogProbMatrix
    verbatim: RefAlignment
    approximate: PhoneTranscript
    p: float = 0.0
    clean: bool = True
    specs: list[DisfluencySpec] = field(default_factory=list)

    def transcript(self, kind: str = APPROXIMATE) -> PhoneTranscript:
        if kind == APPROXIMATE:
            return self.approximate
        if kind == VERBATIM:
            return self.verbatim.transcript()
        raise ValueError(f"unknown transcript kind {kind!r}")

    def word_ids(self, kind: str) -> list[int]:
        """Approximate-transcript word id of each word of the chosen transcript."""
        if kind == VERBATIM:
            return list(self.verbatim.word_ids)
        return list(range(self.approximate.num_words))


def synth_corpus(vocab: PhoneVocab, count: int, seed: int = 0, clean_fraction: float = 0.0,
                 peak: float = 0.9, frame_shift_ms: float = 10.0,
                 prefix: str = "utt") -> list[Utterance]:
    """In-memory equivalent of random refs + ``build_corpus``."""
    utts = []
    for ref in random_refs(vocab, count, seed, prefix):
        res, clean = synth_utterance(ref, vocab, seed, clean_fraction, peak, frame_shift_ms)
        utts.append(Utterance(ref.utt_id, res.emissions, res.verbatim, res.approximate,
                              res.p or 0.0, clean, res.specs))
    return utts


def load_corpus(corpus_dir, vocab: PhoneVocab) -> list[Utterance]:
    from . import io as wio

    root = Path(corpus_dir)
    utts = []
    for rec in wio.read_manifest(root / "manifest.jsonl"):
        e = wio.read_emissions(root / rec["emissions"])
        ref = wio.read_ref_alignment(root / rec["ref"], vocab, rec["id"])
        y = PhoneTranscript.parse(rec["transcript"], vocab)
        specs = [DisfluencySpec(**s) for s in rec.get("specs", [])]
        utts.append(Utterance(rec["id"], e, ref, y, float(rec.get("p") or 0.0),
                              bool(rec.get("clean", not specs)), specs))
    return utts


@dataclass(frozen=True)
class RunSpec:
    mode: Mode = Mode.WEAKLY_SUPERVISED
    beta: float | str = ADAPTIVE
    transcript: str = APPROXIMATE
    disable: tuple[str, ...] = ()
    ph_max_words: int = PH_MAX_WORDS
    lm_scale: float = 1.0
    add_k: float = 0.1

    @property
    def name(self) -> str:
        if self.mode is Mode.LINEAR:
            base = "linear"
        else:
            base = "ws" + ("" if self.beta == ADAPTIVE else f"(beta={self.beta:g})")
        flags = "".join(f"-{d}" for d in self.disable)
        return f"{base}{flags}/{self.transcript}"


class OerCache:
    """OER per (utterance, transcript kind, lm_scale, add_k)."""

    def __init__(self):
        self._store: dict[tuple, OerResult] = {}

    def get(self, utt: Utterance, run: RunSpec, vocab: PhoneVocab) -> OerResult:
        key = (utt.id, run.transcript, run.lm_scale, run.add_k)
        if key not in self._store:
            self._store[key] = compute_oer(utt.emissions, utt.transcript(run.transcript), vocab,
                                           lm_scale=run.lm_scale, add_k=run.add_k)
        return self._store[key]

    def __len__(self):
        return len(self._store)


def _align_one(job):
    e, y, vocab, run, beta, oer = job
    try:
        ali = force_align(e, y, vocab, run.mode, beta, ph_max_words=run.ph_max_words,
                          disable=run.disable, lm_scale=run.lm_scale, add_k=run.add_k)
    except (AlignmentError, ValueError) as exc:
        return exc
    ali.oer = oer
    return ali


def run_corpus(utts: Sequence[Utterance], vocab: PhoneVocab, run: RunSpec, workers: int = 1,
               oer_cache: OerCache | None = None) -> dict[str, Alignment | Exception]:
    """Align every utterance; failures are returned in place of alignments."""
    jobs = []
    for u in utts:
        beta, oer = run.beta, None
        if run.mode is Mode.WEAKLY_SUPERVISED and run.beta == ADAPTIVE:
            res = (oer_cache or OerCache()).get(u, run, vocab)
            beta, oer = adaptive_beta(res), res.oer
        jobs.append((u.emissions, u.transcript(run.transcript), vocab, run, beta, oer))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_align_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_align_one(j) for j in jobs]
    out = {}
    for u, r in zip(utts, results):
        if isinstance(r, Exception):
            log.warning("%s: %s", u.id, r)
        out[u.id] = r
    return out


def score_alignment(ali: Alignment, ref: RefAlignment, tolerance_ms: float,
                    frame_shift_ms: float = 10.0, level: Level = Level.PHONE,
                    word_ids: Sequence[int] | None = None, blank_id: int | None = None,
                    matching: str = "greedy") -> UttScores:
    """Boundary counts against ``ref``; frame agreement when ``blank_id`` is given.

    For word level, ``word_ids`` maps the aligned transcript's word indices
    to those used by ``ref``.
    """
    if level is Level.PHONE:
        pred = BoundarySet(ali.onsets(), level)
        gold = BoundarySet(ref.onsets(), level)
    else:
        ids = word_ids if word_ids is not None else range(10 ** 9)
        pred = BoundarySet(sorted(((ids[j], t) for j, t in ali.word_onsets), key=lambda x: x[1]), level)
        gold = BoundarySet(ref.word_onsets(), level)
    b = boundary_metrics(pred, gold, tolerance_ms, frame_shift_ms, matching)
    if blank_id is None or len(ali.frame_labels) != ref.num_frames:
        return UttScores(b, 0, 0)
    labels = ref.frame_labels(blank_id)
    same = sum(1 for a, c in zip(ali.frame_labels, labels) if a == c)
    return UttScores(b, same, len(labels))


def score_corpus(utts: Sequence[Utterance], alis: Mapping[str, Alignment | Exception],
                 run: RunSpec, vocab: PhoneVocab, tolerance_ms: float = 40.0,
                 level: Level = Level.PHONE) -> tuple[MetricsReport, dict[str, UttScores]]:
    """Pooled (micro-averaged) report. A failed utterance contributes its
    reference boundaries as misses and no correct frames."""
    per = {}
    for u in utts:
        ali = alis.get(u.id)
        if isinstance(ali, Alignment):
            per[u.id] = score_alignment(ali, u.verbatim, tolerance_ms, u.emissions.frame_shift_ms,
                                        level, u.word_ids(run.transcript), vocab.blank_id)
        else:
            n_ref = len(u.verbatim.onsets() if level is Level.PHONE else u.verbatim.word_onsets())
            per[u.id] = UttScores(BoundaryScores(0, 0, n_ref), 0, u.verbatim.num_frames)
    return MetricsReport.from_scores(per.values()), per


def _overlaps(a0: int, a1: int, b0: int, b1: int) -> bool:
    return max(a0, b0) < min(a1, b1)


def detection_rate(utts: Iterable[Utterance], alis: Mapping[str, Alignment | Exception],
                   types: Sequence[str] = ("W", "PH")) -> tuple[int, int]:
    """(detected, planted) over planted repetitions of ``types``.

    A planted repetition counts as detected when the alignment has a word
    repeat event whose repeated span [start_frame, frame) overlaps the
    inserted frames.
    """
    hit = total = 0
    for u in utts:
        ali = alis.get(u.id)
        for s in u.specs:
            if s.type not in types:
                continue
            total += 1
            if not isinstance(ali, Alignment):
                continue
            lo, hi = s.frame, s.frame + s.num_frames
            if any(ev.kind.value == "W" and _overlaps(ev.start_frame, max(ev.frame, ev.start_frame + 1), lo, hi)
                   for ev in ali.events):
                hit += 1
    return hit, total


def ablation(utts: Sequence[Utterance], vocab: PhoneVocab, base: RunSpec = RunSpec(),
             tolerance_ms: float = 40.0, workers: int = 1,
             oer_cache: OerCache | None = None) -> dict[str, MetricsReport]:
    """Weakly-supervised runs with each arc-type subset disabled."""
    cache = oer_cache or OerCache()
    rows = {}
    for name, disable in ABLATIONS.items():
        run = replace(base, mode=Mode.WEAKLY_SUPERVISED, disable=disable)
        alis = run_corpus(utts, vocab, run, workers, cache)
        rows[name], _ = score_corpus(utts, alis, run, vocab, tolerance_ms)
    return rows


def mean(values: Iterable[float]) -> float:
    values = list(values)
    return sum(values) / len(values) if values else math.nan
