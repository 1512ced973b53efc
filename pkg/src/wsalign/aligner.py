"""Forced alignment over T o Y o E, with optional disfluency arcs in Y.

``force_align`` builds the transcript graph (linear or modified), composes
it under the CTC topology, composes the emission graph in front and takes
the shortest path. ``compute_oer`` decodes the emissions against a
transcript-biased bigram grammar to estimate how far the audio strays from
the transcript; ``adaptive_beta`` turns that into the disfluency-arc prior.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from . import fst
from .fst import EPSILON, EmptyLanguageError, Path
from .graphs import (
    PH_MAX_WORDS,
    EventKind,
    LogProbMatrix,
    PhoneTranscript,
    PhoneVocab,
    build_biased_bigram,
    build_ctc_topology,
    build_emission_graph,
    build_linear_fsa,
    build_modified_fsa,
    scale_costs,
)


class Mode(enum.Enum):
    LINEAR = "linear"
    WEAKLY_SUPERVISED = "ws"


ADAPTIVE = "adaptive"


class AlignmentError(Exception):
    pass


class InfeasibleAlignmentError(AlignmentError):
    """The transcript cannot be realised in the available frames."""


class Segment(NamedTuple):
    phone: int
    start: int  # first frame
    end: int  # one past the last frame
    word_index: int


@dataclass
class Event:
    kind: EventKind
    frame: int  # frames consumed when the disfluency arc was taken
    word_index: int  # deleted word, or first word of the repeated span
    span: int = 1  # words covered (repeats) / 1
    start_frame: int = 0  # onset of the material that gets repeated
    occurrence: int = 1  # n-th event of this kind on this word


@dataclass
class Alignment:
    frame_labels: list[int]
    segments: list[Segment]
    events: list[Event]
    realized_phones: list[int]
    total_cost: float
    mode: Mode = Mode.LINEAR
    beta: float | None = None
    oer: float | None = None
    word_onsets: list[tuple[int, int]] = field(default_factory=list)  # (word_index, frame)

    @property
    def num_frames(self) -> int:
        return len(self.frame_labels)

    def onsets(self) -> list[tuple[int, int]]:
        return [(s.phone, s.start) for s in self.segments]


@dataclass
class OerResult:
    oer: float
    decoded_phones: list[int]
    clipped: bool = field(default=False)


# graph caches; everything cached is a frozen, immutable graph


@lru_cache(maxsize=8)
def _topology(vocab: PhoneVocab) -> fst.Fst:
    return build_ctc_topology(vocab)


@lru_cache(maxsize=256)
def _label_graph(y: PhoneTranscript, vocab: PhoneVocab, mode: Mode, beta: float,
                 ph_max_words: int, disable: frozenset) -> fst.Fst:
    if mode is Mode.LINEAR:
        ygraph = build_linear_fsa(y, vocab)
    else:
        ygraph = build_modified_fsa(y, beta, vocab, ph_max_words=ph_max_words, disable=disable)
    return fst.compose(_topology(vocab), ygraph)


def label_graph(y: PhoneTranscript, vocab: PhoneVocab, mode: Mode = Mode.LINEAR,
                beta: float = math.inf, *, ph_max_words: int = PH_MAX_WORDS,
                disable: Sequence[str] = ()) -> fst.Fst:
    """T o Y (or T o Y_M): emission-independent, cached per transcript."""
    if mode is Mode.LINEAR:
        beta = math.inf
    return _label_graph(y, vocab, Mode(mode), float(beta), ph_max_words,
                        frozenset(d.upper() for d in disable))


def force_align(
    e: LogProbMatrix,
    y: PhoneTranscript,
    vocab: PhoneVocab | None = None,
    mode: Mode = Mode.LINEAR,
    beta: float | str = ADAPTIVE,
    *,
    ph_max_words: int = PH_MAX_WORDS,
    disable: Sequence[str] = (),
    lm_scale: float = 1.0,
    add_k: float = 0.1,
    engine: str = "frames",
) -> Alignment:
    """Align ``y`` to ``e``; in weakly-supervised mode the path may repeat,
    part-repeat or skip transcript words.

    ``engine="frames"`` intersects the emissions with T o Y one frame at a
    time; ``engine="compose"`` materialises E o (T o Y), trims it and runs
    ``shortest_path``. Both return a minimum-cost path of the same graph;
    the explicit route is only practical for short inputs.
    """
    if engine not in ("frames", "compose"):
        raise ValueError(f"unknown engine {engine!r}")
    vocab = vocab or PhoneVocab.default()
    mode = Mode(mode)
    e.check_vocab(vocab)
    y.validate(vocab)
    oer = None
    if mode is Mode.WEAKLY_SUPERVISED:
        if beta == ADAPTIVE:
            res = compute_oer(e, y, vocab, lm_scale=lm_scale, add_k=add_k)
            oer = res.oer
            beta = adaptive_beta(res)
        beta = float(beta)
    else:
        beta = None

    ty = label_graph(y, vocab, mode, math.inf if beta is None else beta,
                     ph_max_words=ph_max_words, disable=disable)
    try:
        if engine == "frames":
            path = fst.frame_shortest_path(ty, e.frame_costs(vocab))
        else:
            graph = fst.trim(fst.compose(build_emission_graph(e, vocab), ty))
            path = fst.shortest_path(graph)
    except EmptyLanguageError:
        raise InfeasibleAlignmentError(
            f"transcript of {len(y.flat)} phones cannot be aligned to {e.num_frames} frames"
        ) from None
    ali = decode_path(path, vocab, y, num_frames=e.num_frames)
    ali.mode = mode
    ali.beta = beta
    ali.oer = oer
    return ali


def segments_from_frames(frame_labels: Sequence[int], blank_id: int) -> list[tuple[int, int, int]]:
    """Maximal runs of identical non-blank labels as (label, start, end)."""
    runs = []
    t = 0
    n = len(frame_labels)
    while t < n:
        lab = frame_labels[t]
        u = t + 1
        while u < n and frame_labels[u] == lab:
            u += 1
        if lab != blank_id:
            runs.append((lab, t, u))
        t = u
    return runs


def decode_path(p: Path, vocab: PhoneVocab, y: PhoneTranscript,
                num_frames: int | None = None) -> Alignment:
    """Turn a shortest path through the alignment graph into an Alignment.

    The transcript-graph state is replayed from the output labels: a phone
    advances one position, a deletion jumps to the next word start, a
    part-word repeat returns to the current word start, and a repeat of
    span s returns to the start of the word s-1 words back.
    """
    flat = y.flat
    starts = y.word_starts()
    word_of = y.word_of_position()
    start_index = {s: j for j, s in enumerate(starts[:-1])}
    end_index = {starts[j + 1]: j for j in range(y.num_words)}

    frame_labels: list[int] = []
    phone_words: list[int] = []
    events: list[Event] = []
    word_onset: dict[int, int] = {}
    word_onsets: list[tuple[int, int]] = []
    counts: dict[tuple[EventKind, int], int] = {}
    pos = 0

    for arc in p.arcs:
        frame = len(frame_labels)
        if arc.ilabel != EPSILON:
            frame_labels.append(arc.ilabel)
        lab = arc.olabel
        if lab == EPSILON:
            continue
        ev = vocab.event_of(lab)
        if ev is None:
            if pos >= len(flat) or flat[pos] != lab:
                raise AlignmentError(f"path emits {lab} where the transcript has no such phone")
            j = word_of[pos]
            if pos == starts[j]:
                word_onset[j] = frame
                word_onsets.append((j, frame))
            phone_words.append(j)
            pos += 1
            continue
        kind, span = ev
        if kind is EventKind.WORD_DELETE:
            if pos not in start_index:
                raise AlignmentError("deletion arc taken off a word start")
            j = start_index[pos]
            pos = starts[j + 1]
            start_frame = frame
        elif kind is EventKind.PART_WORD_REPEAT:
            if pos in start_index or pos >= len(flat):
                raise AlignmentError("part-word arc taken off a word interior")
            j = word_of[pos]
            pos = starts[j]
            start_frame = word_onset.get(j, frame)
        else:
            if pos not in end_index:
                raise AlignmentError("repeat arc taken off a word end")
            j = end_index[pos] - span + 1
            if j < 0:
                raise AlignmentError("repeat span reaches before the first word")
            pos = starts[j]
            start_frame = word_onset.get(j, frame)
        key = (kind, j)
        counts[key] = counts.get(key, 0) + 1
        events.append(Event(kind, frame, j, span, start_frame, counts[key]))

    if pos != len(flat):
        raise AlignmentError("path does not end at the end of the transcript")
    if num_frames is not None and len(frame_labels) != num_frames:
        raise AlignmentError(
            f"path consumes {len(frame_labels)} frames, expected {num_frames}"
        )
    runs = segments_from_frames(frame_labels, vocab.blank_id)
    if len(runs) != len(phone_words):
        raise AlignmentError("frame runs do not match the emitted phones")
    segments = [Segment(lab, s, t, w) for (lab, s, t), w in zip(runs, phone_words)]
    return Alignment(
        frame_labels=frame_labels,
        segments=segments,
        events=events,
        realized_phones=[s.phone for s in segments],
        total_cost=p.total_cost,
        word_onsets=word_onsets,
    )


def min_frames(flat: Sequence[int]) -> int:
    """Fewest frames a CTC path needs: one per label plus a blank between repeats."""
    return len(flat) + sum(1 for a, b in zip(flat[:-1], flat[1:]) if a == b)


def viterbi_oracle(e: LogProbMatrix, y: PhoneTranscript,
                   vocab: PhoneVocab | None = None) -> Alignment:
    """Plain CTC trellis forced alignment, no graph machinery.

    Lattice over the blank-interleaved label sequence; at each frame a
    position may stay, advance one, or skip a blank between different
    labels. Ties prefer staying, then advancing one, then skipping.
    """
    vocab = vocab or PhoneVocab.default()
    e.check_vocab(vocab)
    flat = list(y.flat)
    blank = vocab.blank_id
    T = e.num_frames
    if T < min_frames(flat):
        raise InfeasibleAlignmentError(
            f"{len(flat)} phones need at least {min_frames(flat)} frames, got {T}"
        )
    ext = [blank]
    for p in flat:
        ext += [p, blank]
    S = len(ext)
    cost = np.maximum(-e.values[:, [c - 1 for c in ext]], 0.0)  # T x S
    can_skip = np.zeros(S, dtype=bool)
    for s in range(2, S):
        can_skip[s] = ext[s] != blank and ext[s] != ext[s - 2]

    inf = math.inf
    score = np.full(S, inf)
    score[0] = cost[0, 0]
    if S > 1:
        score[1] = cost[0, 1]
    back = np.zeros((T, S), dtype=np.int8)
    for t in range(1, T):
        stay = score
        one = np.concatenate(([inf], score[:-1]))
        two = np.concatenate(([inf, inf], score[:-2]))
        two = np.where(can_skip, two, inf)
        cand = np.stack([stay, one, two])
        choice = np.argmin(cand, axis=0)  # first minimum: stay, then one, then two
        score = cand[choice, np.arange(S)] + cost[t]
        back[t] = choice

    ends = [S - 1, S - 2] if S > 1 else [S - 1]
    end = min(ends, key=lambda s: (score[s], -s))
    total = float(score[end])
    if not math.isfinite(total):
        raise InfeasibleAlignmentError("no complete path through the trellis")
    states = [end]
    s = end
    for t in range(T - 1, 0, -1):
        s -= int(back[t, s])
        states.append(s)
    states.reverse()
    labels = [ext[s] for s in states]

    # each odd lattice position is one transcript phone
    word_of = y.word_of_position()
    starts = set(y.word_starts())
    segments, word_onsets = [], []
    t = 0
    while t < T:
        s = states[t]
        u = t + 1
        while u < T and states[u] == s:
            u += 1
        if s % 2 == 1:
            pos = (s - 1) // 2
            segments.append(Segment(ext[s], t, u, word_of[pos]))
            if pos in starts:
                word_onsets.append((word_of[pos], t))
        t = u
    return Alignment(
        frame_labels=labels,
        segments=segments,
        events=[],
        realized_phones=[sg.phone for sg in segments],
        total_cost=total,
        word_onsets=word_onsets,
    )


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, z in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != z)))
        prev = cur
    return prev[-1]


@lru_cache(maxsize=256)
def _oer_graph(y: PhoneTranscript, vocab: PhoneVocab, lm_scale: float, add_k: float) -> fst.Fst:
    grammar = build_biased_bigram(y, vocab, add_k)
    if lm_scale != 1.0:
        grammar = scale_costs(grammar, lm_scale)
    return fst.trim(fst.compose(_topology(vocab), grammar))


def oer_decode(e: LogProbMatrix, y: PhoneTranscript, vocab: PhoneVocab,
               lm_scale: float = 1.0, add_k: float = 0.1) -> Path:
    """Best path of E o (T o G) for the transcript-biased bigram G."""
    graph = _oer_graph(y, vocab, float(lm_scale), float(add_k))
    return fst.frame_shortest_path(graph, e.frame_costs(vocab))


def compute_oer(e: LogProbMatrix, y: PhoneTranscript, vocab: PhoneVocab | None = None,
                lm_scale: float = 1.0, add_k: float = 0.1) -> OerResult:
    """Phone error rate of the transcript-biased decode against ``y``."""
    vocab = vocab or PhoneVocab.default()
    path = oer_decode(e, y, vocab, lm_scale, add_k)
    decoded = path.olabels()
    ref = y.flat
    oer = edit_distance(decoded, ref) / len(ref)
    return OerResult(oer=oer, decoded_phones=decoded, clipped=oer > 1.0)


def adaptive_beta(o: OerResult | float) -> float:
    """10 ** (1 - OER), with OER clipped to [0, 1] so beta lies in [1, 10]."""
    oer = o.oer if isinstance(o, OerResult) else float(o)
    return 10.0 ** (1.0 - min(max(oer, 0.0), 1.0))
