"""Token tables, transcripts, emission matrices and the graphs built from them.

Four graphs make up an alignment: the CTC topology (frame tokens to phones),
the transcript acceptor (linear, or modified with disfluency arcs), and the
emission graph (one arc per token per frame). A biased bigram grammar over
the transcript's phones is used for oracle-error-rate decoding.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .fst import EPSILON, ONE, ZERO, Fst

CMU_PHONES = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY",
    "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P",
    "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)
SIL = "[SIL]"
UNK = "[UNK]"
PAD = "[PAD]"
RESERVED = (SIL, UNK, PAD)

PH_MAX_WORDS = 3

_UNSEEN = object()  # left context with no counts


class EventKind(enum.Enum):
    WORD_REPEAT = "W"
    PART_WORD_REPEAT = "PW"
    WORD_DELETE = "D"


class VocabError(ValueError):
    pass


class TranscriptError(ValueError):
    pass


@dataclass(frozen=True)
class PhoneVocab:
    """Token table. Token id = position in ``symbols`` + 1; id 0 is epsilon.

    The CTC blank shares the [SIL] id: the upstream frame classifier has no
    dedicated blank, and silence frames play that role.
    """

    symbols: tuple[str, ...]
    ids: dict[str, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(set(symbols)) != len(symbols):
            raise VocabError("duplicate symbols in vocabulary")
        missing = [s for s in RESERVED if s not in symbols]
        if missing:
            raise VocabError(f"vocabulary lacks reserved symbols {missing}")
        if "<eps>" in symbols:
            raise VocabError("epsilon must not appear in the token table")
        object.__setattr__(self, "ids", {s: i + 1 for i, s in enumerate(symbols)})

    @classmethod
    def default(cls) -> "PhoneVocab":
        """39 CMU phones plus [SIL], [UNK], [PAD] (42 tokens)."""
        return cls(CMU_PHONES + RESERVED)

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def sil_id(self) -> int:
        return self.ids[SIL]

    @property
    def blank_id(self) -> int:
        return self.ids[SIL]

    @property
    def unk_id(self) -> int:
        return self.ids[UNK]

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    @property
    def phone_ids(self) -> tuple[int, ...]:
        """Ids of real phones (no reserved tokens)."""
        reserved = {self.sil_id, self.unk_id, self.pad_id}
        return tuple(i for i in range(1, self.size + 1) if i not in reserved)

    @property
    def space(self) -> str:
        digest = hashlib.sha1("\n".join(self.symbols).encode()).hexdigest()[:12]
        return f"tokens:{digest}"

    def event_label(self, kind: EventKind, span: int = 1) -> int:
        """Reserved output label for a disfluency arc.

        Word-repeat labels encode how many words the repetition spans so a
        decoded path is unambiguous.
        """
        base = self.size
        if kind is EventKind.WORD_DELETE:
            return base + 1
        if kind is EventKind.PART_WORD_REPEAT:
            return base + 2
        if span < 1:
            raise ValueError("repeat span must be >= 1")
        return base + 2 + span

    def event_of(self, label: int) -> tuple[EventKind, int] | None:
        off = label - self.size
        if off <= 0:
            return None
        if off == 1:
            return EventKind.WORD_DELETE, 1
        if off == 2:
            return EventKind.PART_WORD_REPEAT, 1
        return EventKind.WORD_REPEAT, off - 2

    def is_event(self, label: int) -> bool:
        return label > self.size

    def symbol(self, token_id: int) -> str:
        return self.symbols[token_id - 1]

    def encode(self, symbols: Iterable[str]) -> list[int]:
        try:
            return [self.ids[s] for s in symbols]
        except KeyError as exc:
            raise VocabError(f"unknown symbol {exc.args[0]!r}") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.symbol(i) for i in ids]

    def column(self, token_id: int) -> int:
        """Emission-matrix column for a token id."""
        return token_id - 1


@dataclass(frozen=True)
class PhoneTranscript:
    """Word-grouped phone ids, e.g. ``((D, AA, N, T), (AE, S, K))``."""

    words: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        words = tuple(tuple(int(p) for p in w) for w in self.words)
        object.__setattr__(self, "words", words)
        if not words:
            raise TranscriptError("transcript has no words")
        if any(len(w) == 0 for w in words):
            raise TranscriptError("transcript contains an empty word")

    @classmethod
    def parse(cls, line: str, vocab: PhoneVocab) -> "PhoneTranscript":
        words = [w.split() for w in line.strip().split("|")]
        words = [w for w in words if w]
        if not words:
            raise TranscriptError("empty transcript line")
        t = cls(tuple(tuple(vocab.encode(w)) for w in words))
        t.validate(vocab)
        return t

    def to_line(self, vocab: PhoneVocab) -> str:
        return " | ".join(" ".join(vocab.decode(w)) for w in self.words)

    def validate(self, vocab: PhoneVocab) -> None:
        allowed = set(vocab.phone_ids)
        for w in self.words:
            for p in w:
                if p not in allowed:
                    raise TranscriptError(f"token {p} is not a phone of the vocabulary")

    @property
    def flat(self) -> tuple[int, ...]:
        return tuple(p for w in self.words for p in w)

    @property
    def num_words(self) -> int:
        return len(self.words)

    def word_starts(self) -> list[int]:
        """Flat offsets of each word's first phone, plus the total length."""
        starts = [0]
        for w in self.words:
            starts.append(starts[-1] + len(w))
        return starts

    def word_of_position(self) -> list[int]:
        return [j for j, w in enumerate(self.words) for _ in w]


class EmissionError(ValueError):
    pass


@dataclass
class LogProbMatrix:
    """T x N frame-level log posteriors; column ``j`` holds token id ``j + 1``."""

    values: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise EmissionError(f"expected a non-empty T x N matrix, got shape {v.shape}")
        if np.isnan(v).any() or np.isposinf(v).any():
            raise EmissionError("emission matrix contains NaN or +inf")
        self.values = v

    @classmethod
    def from_logits(cls, values, frame_shift_ms: float = 10.0, renormalize: bool = False,
                    tol: float = 1e-3) -> "LogProbMatrix":
        """Ingest log posteriors, checking each row log-sum-exps to 0."""
        m = cls(values, frame_shift_ms)
        lse = np.logaddexp.reduce(m.values, axis=1)
        if renormalize:
            m.values = m.values - lse[:, None]
        elif np.max(np.abs(lse)) > tol:
            bad = int(np.argmax(np.abs(lse)))
            raise EmissionError(f"row {bad} log-sum-exps to {lse[bad]:.4g}, not 0")
        return m

    @classmethod
    def from_probs(cls, probs, frame_shift_ms: float = 10.0) -> "LogProbMatrix":
        p = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls.from_logits(np.log(p / p.sum(axis=1, keepdims=True)), frame_shift_ms)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.values.shape[1]

    def check_vocab(self, vocab: PhoneVocab) -> None:
        if self.num_tokens != vocab.size:
            raise VocabError(
                f"emission matrix has {self.num_tokens} columns, vocabulary has {vocab.size} tokens"
            )

    def frame_costs(self, vocab: PhoneVocab) -> np.ndarray:
        """T x (N+1) cost table indexed by token id; epsilon and [PAD] are +inf."""
        self.check_vocab(vocab)
        costs = np.empty((self.num_frames, vocab.size + 1))
        costs[:, 0] = np.inf
        costs[:, 1:] = np.maximum(-self.values, 0.0)
        costs[:, vocab.pad_id] = np.inf
        return costs


def _prior_costs(beta: float) -> tuple[float, float]:
    """(backbone cost, epsilon cost) for alpha = 1 - 10**-beta.

    Computed in closed form so large beta stays exact: -log(1 - alpha) is
    beta * ln 10.
    """
    if beta < 0 or beta != beta:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if math.isinf(beta):
        return ONE, ZERO
    eps_cost = beta * math.log(10.0)
    if beta == 0:
        return ZERO, ONE
    return -math.log1p(-(10.0 ** -beta)), eps_cost


def alpha_of(beta: float) -> float:
    return 1.0 - 10.0 ** -beta


def build_linear_fsa(y: PhoneTranscript, vocab: PhoneVocab | None = None) -> Fst:
    """Chain acceptor for the flat phone sequence of ``y``."""
    flat = y.flat
    space = vocab.space if vocab else None
    f = Fst(space, space)
    f.add_states(len(flat) + 1)
    f.set_start(0)
    for k, p in enumerate(flat):
        f.add_arc(k, p, p, ONE, k + 1)
    f.set_final(len(flat))
    return f.freeze()


def build_modified_fsa(
    y: PhoneTranscript,
    beta: float,
    vocab: PhoneVocab | None = None,
    *,
    ph_max_words: int = PH_MAX_WORDS,
    disable: Iterable[str] = (),
) -> Fst:
    """Transcript acceptor with repetition and deletion epsilon arcs.

    States are the backbone positions 0..L of the flat phone sequence, so
    state ``k`` sits before phone ``k``. Added arcs, all with input epsilon:

    * W: word-end state of word j -> start of word i, for j-ph_max_words < i <= j
    * D: start of word j -> start of word j+1
    * PW: state inside word j (after >= 1 phone) -> start of word j

    Backbone arcs cost -log(alpha). An epsilon arc costs -log(1 - alpha),
    or -log((1 - alpha) / 2) at states that emit both D and W arcs.
    ``disable`` names arc classes ("W", "D", "PW") to leave out.
    """
    vocab = vocab or PhoneVocab.default()
    disabled = {d.upper() for d in disable}
    unknown = disabled - {"W", "D", "PW"}
    if unknown:
        raise ValueError(f"unknown arc classes {sorted(unknown)}")
    if ph_max_words < 1:
        raise ValueError("ph_max_words must be >= 1")
    backbone_cost, eps_cost = _prior_costs(beta)
    half_cost = eps_cost + math.log(2.0)

    flat = y.flat
    starts = y.word_starts()
    n_words = y.num_words
    length = len(flat)
    f = Fst(vocab.space, vocab.space)
    f.add_states(length + 1)
    f.set_start(0)
    f.set_final(length)

    # word index ending at each boundary state; starts[j + 1] ends word j
    ends_word = {starts[j + 1]: j for j in range(n_words)}
    starts_word = {starts[j]: j for j in range(n_words)}
    word_of = y.word_of_position()
    d_label = vocab.event_label(EventKind.WORD_DELETE)
    pw_label = vocab.event_label(EventKind.PART_WORD_REPEAT)

    for k in range(length + 1):
        if k < length:
            f.add_arc(k, flat[k], flat[k], backbone_cost, k + 1)
        eps_arcs = []
        if "W" not in disabled and k in ends_word:
            j = ends_word[k]
            for i in range(j, max(-1, j - ph_max_words), -1):
                span = j - i + 1
                eps_arcs.append(("W", vocab.event_label(EventKind.WORD_REPEAT, span), starts[i]))
        if "D" not in disabled and k in starts_word:
            j = starts_word[k]
            eps_arcs.append(("D", d_label, starts[j + 1]))
        if "PW" not in disabled and k < length and k not in starts_word:
            eps_arcs.append(("PW", pw_label, starts[word_of[k]]))
        kinds = {kind for kind, _, _ in eps_arcs}
        cost = half_cost if {"W", "D"} <= kinds else eps_cost
        for _, label, target in eps_arcs:
            f.add_arc(k, EPSILON, label, cost, target)
    return f.freeze()


def topology_tokens(vocab: PhoneVocab, include_unk: bool = True) -> list[int]:
    toks = list(vocab.phone_ids)
    if include_unk:
        toks.append(vocab.unk_id)
        toks.sort()
    return toks


def build_ctc_topology(vocab: PhoneVocab, *, include_unk: bool = True,
                       tokens: Sequence[int] | None = None) -> Fst:
    """Standard CTC topology: frame tokens in, collapsed phones out.

    State 0 is the blank state; state ``k + 1`` stands for ``tokens[k]``.
    Entering a phone state emits the phone, a phone's self-loop and any
    blank emit nothing, and a phone can only be re-emitted after a blank
    or a different phone. Every state is final and every cost is 0.
    """
    toks = list(tokens) if tokens is not None else topology_tokens(vocab, include_unk)
    blank = vocab.blank_id
    f = Fst(vocab.space, vocab.space)
    f.add_states(len(toks) + 1)
    f.set_start(0)
    for s in range(len(toks) + 1):
        f.set_final(s)
        f.add_arc(s, blank, EPSILON, ONE, 0)
        for k, tok in enumerate(toks):
            if s == k + 1:
                f.add_arc(s, tok, EPSILON, ONE, s)
            else:
                f.add_arc(s, tok, tok, ONE, k + 1)
    return f.freeze()


def build_emission_graph(e: LogProbMatrix, vocab: PhoneVocab) -> Fst:
    """Linear chain of T+1 states; frame t has one arc per non-[PAD] token
    costing -log P(token | frame t)."""
    costs = e.frame_costs(vocab)
    toks = [i for i in range(1, vocab.size + 1) if i != vocab.pad_id]
    f = Fst(vocab.space, vocab.space)
    f.add_states(e.num_frames + 1)
    f.set_start(0)
    rows = costs[:, toks].tolist()
    for t, row in enumerate(rows):
        for tok, w in zip(toks, row):
            f.add_arc(t, tok, tok, w, t + 1)
    f.set_final(e.num_frames)
    return f.freeze()


def bigram_probabilities(y: PhoneTranscript, vocab: PhoneVocab, add_k: float):
    """Add-k smoothed bigram table estimated from ``y``'s flat phones.

    Returns ``(contexts, prob)`` where ``contexts`` lists the left contexts
    (``None`` is the sentence start) and ``prob(context, b)`` gives
    P(b | context); ``b=None`` is the end-of-sequence event. Unseen contexts
    get the uniform smoothed distribution.
    """
    if add_k <= 0:
        raise ValueError("add_k must be > 0")
    flat = y.flat
    phones = vocab.phone_ids
    n_events = len(phones) + 1
    seq = [None] + list(flat) + [None]
    counts: dict = {}
    totals: dict = {}
    for a, b in zip(seq[:-1], seq[1:]):
        counts[(a, b)] = counts.get((a, b), 0) + 1
        totals[a] = totals.get(a, 0) + 1

    def prob(context, b):
        return (counts.get((context, b), 0) + add_k) / (totals.get(context, 0) + add_k * n_events)

    contexts = [None]
    for p in flat:
        if p not in contexts:
            contexts.append(p)
    return contexts, prob


def build_biased_bigram(y: PhoneTranscript, vocab: PhoneVocab, add_k: float = 0.1) -> Fst:
    """Bigram acceptor over all phones, biased toward the transcript.

    One state per observed left context (state 0 is the sentence start)
    plus a shared state for contexts absent from the transcript. Every
    phone is reachable from every state; every state is final with the
    smoothed end-of-sequence cost.
    """
    contexts, prob = bigram_probabilities(y, vocab, add_k)
    state_of = {c: i for i, c in enumerate(contexts)}
    unseen = len(contexts)
    f = Fst(vocab.space, vocab.space)
    f.add_states(len(contexts) + 1)
    f.set_start(0)
    for s, ctx in enumerate(contexts + [_UNSEEN]):
        for b in vocab.phone_ids:
            f.add_arc(s, b, b, -math.log(prob(ctx, b)), state_of.get(b, unseen))
        f.set_final(s, -math.log(prob(ctx, None)))
    return f.freeze()


def scale_costs(f: Fst, factor: float) -> Fst:
    """Copy of ``f`` with every arc and final cost multiplied by ``factor``."""
    if factor < 0:
        raise ValueError("scale factor must be >= 0")
    g = Fst(f.input_space, f.output_space)
    g.add_states(f.num_states)
    g.set_start(f.start)
    for s in f.states():
        for a in f.arcs(s):
            g.add_arc(s, a.ilabel, a.olabel, a.weight * factor if a.weight != ZERO else ZERO,
                      a.nextstate)
    for s, w in f.finals.items():
        g.set_final(s, w * factor if w != ZERO else ZERO)
    return g.freeze()
