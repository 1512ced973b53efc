"""Boundary and frame metrics for alignments, and relative-reduction reports."""

from __future__ import annotations

import bisect
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

METRICS = ("precision", "recall", "f1", "r_value", "overlap")
SEVERITY_NAMES = {0.0: "clean", 0.1: "mild", 0.2: "moderate", 0.3: "severe"}


class Level(enum.Enum):
    PHONE = "phone"
    WORD = "word"


class MetricsError(ValueError):
    pass


@dataclass
class BoundarySet:
    """(label, onset_frame) pairs. For word sets the label is the word index."""

    items: list[tuple[int, int]]
    level: Level = Level.PHONE

    def __post_init__(self):
        self.items = [(int(lab), int(t)) for lab, t in self.items]
        onsets = [t for _, t in self.items]
        if any(b < a for a, b in zip(onsets, onsets[1:])):
            raise MetricsError("boundary onsets must be non-decreasing")

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class BoundaryScores:
    hits: int
    num_pred: int
    num_ref: int

    @property
    def precision(self) -> float:
        return self.hits / self.num_pred if self.num_pred else 0.0

    @property
    def recall(self) -> float:
        return self.hits / self.num_ref if self.num_ref else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    @property
    def r_value(self) -> float:
        return r_value(self.recall, self.num_pred, self.num_ref)

    def __add__(self, other: "BoundaryScores") -> "BoundaryScores":
        return BoundaryScores(self.hits + other.hits, self.num_pred + other.num_pred,
                              self.num_ref + other.num_ref)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def r_value(recall: float, num_pred: int, num_ref: int) -> float:
    """R-value from hit rate and over-segmentation.

    HR = 100 R, OS = 100 (num_pred / num_ref - 1), which equals
    100 (R / P - 1) whenever there is at least one hit. Clipped to [0, 1].
    """
    if num_ref <= 0:
        raise MetricsError("R-value needs a non-empty reference")
    hr = 100.0 * recall
    os_ = 100.0 * (num_pred / num_ref - 1.0)
    r1 = math.sqrt((100.0 - hr) ** 2 + os_ ** 2)
    r2 = (-os_ + hr - 100.0) / math.sqrt(2.0)
    return min(1.0, max(0.0, 1.0 - (abs(r1) + abs(r2)) / 200.0))


def r_value_from_pr(precision: float, recall: float) -> float:
    """R-value when only P and R are known (needs P > 0)."""
    if precision <= 0:
        raise MetricsError("precision must be positive")
    return r_value(recall, recall / precision, 1)


def boundary_metrics(pred: BoundarySet, ref: BoundarySet, tolerance_ms: float,
                     frame_shift_ms: float = 10.0, matching: str = "greedy") -> BoundaryScores:
    """Count one-to-one label-matched hits within ``tolerance_ms``.

    ``greedy``: predictions in time order each take the earliest unmatched
    reference of the same label within tolerance (this maximises hits).
    ``nearest``: each prediction takes the closest such reference instead.
    """
    if pred.level != ref.level:
        raise MetricsError("prediction and reference are at different levels")
    if not ref.items:
        raise MetricsError("empty reference")
    if matching not in ("greedy", "nearest"):
        raise MetricsError(f"unknown matching policy {matching!r}")
    tol = tolerance_ms / frame_shift_ms + 1e-9  # in frames

    by_label: dict[int, list[int]] = {}
    for lab, t in ref.items:
        by_label.setdefault(lab, []).append(t)
    used = {lab: [False] * len(ts) for lab, ts in by_label.items()}

    hits = 0
    for lab, t in sorted(pred.items, key=lambda it: it[1]):
        onsets = by_label.get(lab)
        if not onsets:
            continue
        flags = used[lab]
        i = bisect.bisect_left(onsets, t - tol)
        best = None
        while i < len(onsets) and onsets[i] <= t + tol:
            if not flags[i]:
                if matching == "greedy":
                    best = i
                    break
                if best is None or abs(onsets[i] - t) < abs(onsets[best] - t):
                    best = i
            i += 1
        if best is not None:
            flags[best] = True
            hits += 1
    return BoundaryScores(hits, len(pred.items), len(ref.items))


def frame_overlap(pred_labels: Sequence[int], ref_labels: Sequence[int]) -> float:
    """Fraction of frames whose labels agree."""
    if len(pred_labels) != len(ref_labels):
        raise MetricsError(f"length mismatch: {len(pred_labels)} vs {len(ref_labels)}")
    if not ref_labels:
        raise MetricsError("empty label sequences")
    same = sum(1 for a, b in zip(pred_labels, ref_labels) if a == b)
    return same / len(ref_labels)


def relative_reduction(m_verbatim: float, m_approximate: float) -> float:
    """Percentage drop from the verbatim-transcript score to the approximate one."""
    if m_verbatim == 0:
        raise MetricsError("relative reduction undefined for a zero verbatim metric")
    return (m_verbatim - m_approximate) / m_verbatim * 100.0


@dataclass
class UttScores:
    """Additive per-utterance counts; corpus metrics pool these (micro average)."""

    boundaries: BoundaryScores
    frames_correct: int
    num_frames: int

    def __add__(self, other: "UttScores") -> "UttScores":
        return UttScores(self.boundaries + other.boundaries,
                         self.frames_correct + other.frames_correct,
                         self.num_frames + other.num_frames)


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    r_value: float
    overlap: float | None = None
    reductions: dict[str, float] = field(default_factory=dict)
    count: int = 0

    @classmethod
    def from_scores(cls, scores: Iterable[UttScores]) -> "MetricsReport":
        scores = list(scores)
        if not scores:
            raise MetricsError("no utterances to score")
        total = scores[0]
        for s in scores[1:]:
            total = total + s
        b = total.boundaries
        overlap = total.frames_correct / total.num_frames if total.num_frames else None
        return cls(b.precision, b.recall, b.f1, b.r_value, overlap, count=len(scores))

    def value(self, name: str) -> float | None:
        return getattr(self, name)

    def with_reductions(self, verbatim: "MetricsReport") -> "MetricsReport":
        red = {}
        for name in METRICS:
            v, a = verbatim.value(name), self.value(name)
            if v is not None and a is not None and v != 0:
                red[name] = relative_reduction(v, a)
        return MetricsReport(self.precision, self.recall, self.f1, self.r_value,
                             self.overlap, red, self.count)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_COLUMNS = (("P", "precision"), ("R", "recall"), ("F1", "f1"), ("R-val", "r_value"),
            ("Overlap", "overlap"))


def format_table(rows: Mapping[str, MetricsReport], reductions: bool = True) -> str:
    """Plain-text table: each metric followed by its relative reduction."""
    header = ["Method"]
    for short, _ in _COLUMNS:
        header.append(short)
        if reductions:
            header.append(f"{short}↓%")
    body = []
    for name, rep in rows.items():
        line = [name]
        for _, attr in _COLUMNS:
            v = rep.value(attr)
            line.append("-" if v is None else f"{v:.3f}")
            if reductions:
                r = rep.reductions.get(attr)
                line.append("-" if r is None else f"{r:.1f}")
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w)
                                  for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([fmt(header)] + [fmt(r) for r in body]) + "\n"


def severity_report(verbatim: Mapping[str, UttScores], approximate: Mapping[str, UttScores],
                    manifest: Iterable[Mapping]) -> list[dict]:
    """Relative F1 reduction per disfluency-percentage bucket.

    ``verbatim``/``approximate`` map utterance ids to scores of runs with
    verbatim and approximate transcripts. Utterances are grouped by their
    manifest ``p`` (0.0 for clean ones).
    """
    buckets: dict[float, list[str]] = {}
    for rec in manifest:
        if "p" not in rec or "id" not in rec:
            raise MetricsError("manifest records need 'id' and 'p' fields for a severity breakdown")
        if rec["id"] not in approximate or rec["id"] not in verbatim:
            continue
        p = 0.0 if rec["p"] is None else round(float(rec["p"]), 6)
        buckets.setdefault(p, []).append(rec["id"])
    rows = []
    for p in sorted(buckets):
        ids = buckets[p]
        v = MetricsReport.from_scores(verbatim[i] for i in ids)
        a = MetricsReport.from_scores(approximate[i] for i in ids)
        rows.append({
            "p": p,
            "severity": SEVERITY_NAMES.get(p, f"p={p:g}"),
            "utterances": len(ids),
            "f1_verbatim": v.f1,
            "f1_approximate": a.f1,
            "f1_reduction": relative_reduction(v.f1, a.f1) if v.f1 else 0.0,
        })
    return rows


def format_severity(rows: Sequence[Mapping]) -> str:
    lines = [f"{'severity':<10}{'p':>6}{'n':>6}{'F1 verb':>10}{'F1 approx':>11}{'F1↓%':>8}"]
    for r in rows:
        lines.append(f"{r['severity']:<10}{r['p']:>6.1f}{r['utterances']:>6d}"
                     f"{r['f1_verbatim']:>10.3f}{r['f1_approximate']:>11.3f}{r['f1_reduction']:>8.1f}")
    return "\n".join(lines) + "\n"
