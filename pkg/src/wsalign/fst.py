"""Weighted finite-state transducers over the tropical semiring.

Weights are stored as costs (negated log probabilities): ``plus`` is ``min``
and ``times`` is ``+``, so the best path is the cheapest one. Label 0 is
epsilon on both tapes.

The module is deliberately small: construction, ``freeze``, ``trim``,
epsilon-filtered ``compose`` and ``shortest_path``, plus an AT&T-style text
format for debugging and golden files.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

EPSILON = 0
ZERO = math.inf  # semiring zero: the "no path" cost
ONE = 0.0  # semiring one

_TIE_RTOL = 1e-12


def plus(x: float, y: float) -> float:
    return x if x <= y else y


def times(x: float, y: float) -> float:
    return x + y


class FstError(Exception):
    """Base class for graph errors."""


class InvalidStateError(FstError):
    pass


class NotFrozenError(FstError):
    pass


class FrozenError(FstError):
    pass


class AlphabetMismatchError(FstError):
    pass


class EmptyLanguageError(FstError):
    """Raised when a graph has no accepting path of finite cost."""


class Arc(NamedTuple):
    ilabel: int
    olabel: int
    weight: float
    nextstate: int


@dataclass
class Path:
    """A start-to-final path; ``states[k]`` is the source of ``arcs[k]``."""

    states: list[int]
    arcs: list[Arc]
    total_cost: float
    arc_indices: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.arcs)

    def ilabels(self) -> list[int]:
        return [a.ilabel for a in self.arcs if a.ilabel != EPSILON]

    def olabels(self) -> list[int]:
        return [a.olabel for a in self.arcs if a.olabel != EPSILON]


class Fst:
    """Mutable-until-frozen WFST.

    ``input_space``/``output_space`` are optional tags naming the token
    space of each tape. ``compose`` refuses to join tapes whose tags are both
    set and differ.
    """

    def __init__(self, input_space: str | None = None, output_space: str | None = None):
        self._states: list = []
        self._finals: dict[int, float] = {}
        self.start: int | None = None
        self.frozen = False
        self.input_space = input_space
        self.output_space = output_space
        # composition provenance: result state -> (state_a, state_b, filter)
        self.origins: list[tuple[int, int, int]] | None = None

    def __repr__(self) -> str:
        return (
            f"<Fst states={self.num_states} arcs={self.num_arcs} "
            f"start={self.start} finals={len(self._finals)} frozen={self.frozen}>"
        )

    # construction

    def _check_mutable(self) -> None:
        if self.frozen:
            raise FrozenError("graph is frozen")

    def add_state(self) -> int:
        self._check_mutable()
        self._states.append([])
        return len(self._states) - 1

    def add_states(self, n: int) -> range:
        self._check_mutable()
        first = len(self._states)
        self._states.extend([] for _ in range(n))
        return range(first, first + n)

    def add_arc(self, src: int, ilabel: int, olabel: int, weight: float, nextstate: int) -> None:
        self._check_mutable()
        if weight < 0 or weight != weight:
            raise ValueError(f"arc cost must be >= 0 or +inf, got {weight}")
        self._states[src].append(Arc(ilabel, olabel, float(weight), nextstate))

    def set_start(self, state: int) -> None:
        self._check_mutable()
        self.start = state

    def set_final(self, state: int, weight: float = ONE) -> None:
        self._check_mutable()
        if weight < 0 or weight != weight:
            raise ValueError(f"final cost must be >= 0 or +inf, got {weight}")
        if weight == ZERO:
            self._finals.pop(state, None)
        else:
            self._finals[state] = float(weight)

    # access

    @property
    def num_states(self) -> int:
        return len(self._states)

    @property
    def num_arcs(self) -> int:
        return sum(len(a) for a in self._states)

    def states(self) -> range:
        return range(len(self._states))

    def arcs(self, state: int) -> Sequence[Arc]:
        return self._states[state]

    def final(self, state: int) -> float:
        return self._finals.get(state, ZERO)

    def is_final(self, state: int) -> bool:
        return state in self._finals

    @property
    def finals(self) -> dict[int, float]:
        return dict(self._finals)

    def freeze(self) -> "Fst":
        """Validate and make immutable. Returns ``self``."""
        if self.frozen:
            return self
        if self.start is None:
            raise InvalidStateError("graph has no start state")
        self._validate()
        self._states = [tuple(arcs) for arcs in self._states]
        self.frozen = True
        return self

    def _validate(self) -> None:
        n = len(self._states)
        if self.start is not None and not 0 <= self.start < n:
            raise InvalidStateError(f"start state {self.start} out of range")
        for s in self._finals:
            if not 0 <= s < n:
                raise InvalidStateError(f"final state {s} out of range")
        for s, arcs in enumerate(self._states):
            for arc in arcs:
                if not 0 <= arc.nextstate < n:
                    raise InvalidStateError(f"arc {s}->{arc.nextstate} points outside the graph")

    def to_text(self) -> str:
        return to_text(self)


def freeze(f: Fst) -> Fst:
    return f.freeze()


def _require_frozen(*fsts: Fst) -> None:
    for f in fsts:
        if not f.frozen:
            raise NotFrozenError("algorithms only accept frozen graphs")


def _empty_like(f: Fst) -> Fst:
    out = Fst(f.input_space, f.output_space)
    out.frozen = True
    out.origins = [] if f.origins is not None else None
    return out


def trim(f: Fst) -> Fst:
    """Drop states that are not on some finite-cost start-to-final path.

    Arcs of cost +inf are semiring zeros and are removed along with the
    states they alone connect.
    """
    _require_frozen(f)
    n = f.num_states
    if f.start is None or n == 0:
        return _empty_like(f)
    states = f._states

    accessible = bytearray(n)
    accessible[f.start] = 1
    stack = [f.start]
    while stack:
        s = stack.pop()
        for arc in states[s]:
            t = arc.nextstate
            if not accessible[t] and arc.weight != ZERO:
                accessible[t] = 1
                stack.append(t)

    rev: list[list[int]] = [[] for _ in range(n)]
    for s in range(n):
        if accessible[s]:
            for arc in states[s]:
                if arc.weight != ZERO:
                    rev[arc.nextstate].append(s)
    coaccessible = bytearray(n)
    stack = [s for s in f._finals if accessible[s]]
    for s in stack:
        coaccessible[s] = 1
    while stack:
        t = stack.pop()
        for s in rev[t]:
            if not coaccessible[s]:
                coaccessible[s] = 1
                stack.append(s)

    if not coaccessible[f.start]:
        return _empty_like(f)

    keep = [s for s in range(n) if accessible[s] and coaccessible[s]]
    remap = {s: i for i, s in enumerate(keep)}
    out = Fst(f.input_space, f.output_space)
    out._states = [
        tuple(
            Arc(a.ilabel, a.olabel, a.weight, remap[a.nextstate])
            for a in states[s]
            if a.weight != ZERO and a.nextstate in remap
        )
        for s in keep
    ]
    out._finals = {remap[s]: w for s, w in f._finals.items() if s in remap}
    out.start = remap[f.start]
    if f.origins is not None:
        out.origins = [f.origins[s] for s in keep]
    out.frozen = True
    return out


def compose(a: Fst, b: Fst) -> Fst:
    """Compose ``a`` (outer) with ``b`` (inner) under the 3-state epsilon filter.

    Filter states: 0 = free, 1 = only ``a`` may take output-epsilon moves,
    2 = only ``b`` may take input-epsilon moves. Simultaneous epsilon moves
    are allowed only from state 0, which removes redundant epsilon paths.

    The result's ``origins[s]`` records the ``(state_a, state_b, filter)``
    triple each state was built from.
    """
    _require_frozen(a, b)
    if a.output_space and b.input_space and a.output_space != b.input_space:
        raise AlphabetMismatchError(
            f"output space {a.output_space!r} does not match input space {b.input_space!r}"
        )
    out = Fst(a.input_space, b.output_space)
    out.origins = []
    if a.start is None or b.start is None:
        out.frozen = True
        return out

    a_states, b_states = a._states, b._states
    a_finals, b_finals = a._finals, b._finals

    # per-state label indexes, built lazily
    a_by_olabel: dict[int, tuple[dict[int, list[Arc]], list[Arc]]] = {}
    b_by_ilabel: dict[int, tuple[dict[int, list[Arc]], list[Arc]]] = {}

    def index(cache, states, q, outer):
        hit = cache.get(q)
        if hit is None:
            by_label: dict[int, list[Arc]] = {}
            eps: list[Arc] = []
            for arc in states[q]:
                lab = arc.olabel if outer else arc.ilabel
                if lab == EPSILON:
                    eps.append(arc)
                else:
                    by_label.setdefault(lab, []).append(arc)
            hit = cache[q] = (by_label, eps)
        return hit

    state_ids: dict[tuple[int, int, int], int] = {}
    origins = out.origins
    out_states = out._states
    queue: list[tuple[int, int, int]] = []

    def state_of(key):
        sid = state_ids.get(key)
        if sid is None:
            sid = state_ids[key] = len(out_states)
            out_states.append([])
            origins.append(key)
            queue.append(key)
        return sid

    out.start = state_of((a.start, b.start, 0))
    head = 0
    while head < len(queue):
        key = queue[head]
        head += 1
        qa, qb, filt = key
        src_arcs = out_states[state_ids[key]]
        a_lab, a_eps = index(a_by_olabel, a_states, qa, True)
        b_lab, b_eps = index(b_by_ilabel, b_states, qb, False)

        # matched non-epsilon moves; iterate the smaller side
        if len(a_lab) <= len(b_lab):
            for lab, arcs_a in a_lab.items():
                arcs_b = b_lab.get(lab)
                if arcs_b is None:
                    continue
                for xa in arcs_a:
                    for xb in arcs_b:
                        src_arcs.append(Arc(xa.ilabel, xb.olabel, xa.weight + xb.weight,
                                            state_of((xa.nextstate, xb.nextstate, 0))))
        else:
            for lab, arcs_b in b_lab.items():
                arcs_a = a_lab.get(lab)
                if arcs_a is None:
                    continue
                for xa in arcs_a:
                    for xb in arcs_b:
                        src_arcs.append(Arc(xa.ilabel, xb.olabel, xa.weight + xb.weight,
                                            state_of((xa.nextstate, xb.nextstate, 0))))

        for xa in a_eps:
            if filt == 0:
                for xb in b_eps:
                    src_arcs.append(Arc(xa.ilabel, xb.olabel, xa.weight + xb.weight,
                                        state_of((xa.nextstate, xb.nextstate, 0))))
            if filt != 2:
                src_arcs.append(Arc(xa.ilabel, EPSILON, xa.weight, state_of((xa.nextstate, qb, 1))))
        if filt != 1:
            for xb in b_eps:
                src_arcs.append(Arc(EPSILON, xb.olabel, xb.weight, state_of((qa, xb.nextstate, 2))))

        fa = a_finals.get(qa)
        if fa is not None:
            fb = b_finals.get(qb)
            if fb is not None:
                out._finals[state_ids[key]] = fa + fb

    out._states = [tuple(arcs) for arcs in out_states]
    out.frozen = True
    return out


def _distances_to_final(f: Fst) -> tuple[list[float], list[int]]:
    """Reverse Dijkstra keyed on (cost, number of arcs)."""
    n = f.num_states
    rev: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for s, arcs in enumerate(f._states):
        for arc in arcs:
            if arc.weight != ZERO:
                rev[arc.nextstate].append((s, arc.weight))
    dist = [ZERO] * n
    hops = [0] * n
    heap = []
    for s, w in f._finals.items():
        dist[s] = w
        heap.append((w, 0, s))
    heapq.heapify(heap)
    done = bytearray(n)
    while heap:
        d, h, t = heapq.heappop(heap)
        if done[t]:
            continue
        done[t] = 1
        for s, w in rev[t]:
            if done[s]:
                continue
            nd = d + w
            if nd < dist[s] or (nd == dist[s] and h + 1 < hops[s]):
                dist[s] = nd
                hops[s] = h + 1
                heapq.heappush(heap, (nd, h + 1, s))
    return dist, hops


def shortest_path(f: Fst) -> Path:
    """Minimum-cost accepting path.

    Ties are broken first by fewest arcs, then by the lexicographically
    smallest sequence of arc indices. Costs must be non-negative, so cyclic
    graphs are fine.
    """
    _require_frozen(f)
    if f.start is None or f.num_states == 0:
        raise EmptyLanguageError("graph is empty")
    dist, hops = _distances_to_final(f)
    s = f.start
    total = dist[s]
    if total == ZERO:
        raise EmptyLanguageError("no accepting path of finite cost")

    states, arcs, idx = [s], [], []
    while True:
        d = dist[s]
        if hops[s] == 0:
            break
        tol = _TIE_RTOL * max(1.0, d)
        want = hops[s] - 1
        for k, arc in enumerate(f._states[s]):
            t = arc.nextstate
            if hops[t] == want and abs(arc.weight + dist[t] - d) <= tol:
                break
        else:  # pragma: no cover - unreachable for consistent distances
            raise FstError("shortest-path reconstruction failed")
        arcs.append(arc)
        idx.append(k)
        s = t
        states.append(s)

    cost = sum(a.weight for a in arcs) + f.final(s)
    return Path(states, arcs, cost, idx)


class _ArcTable:
    """Arcs of one kind, sorted by destination, for grouped min-reductions."""

    def __init__(self, rows: list[tuple[int, int, int, float, int]]):
        rows.sort(key=lambda r: r[1])  # stable: keeps arc order within a target
        self.size = len(rows)
        if not rows:
            return
        cols = list(zip(*rows))
        self.src = np.asarray(cols[0], dtype=np.int64)
        self.dst = np.asarray(cols[1], dtype=np.int64)
        self.ilabel = np.asarray(cols[2], dtype=np.int64)
        self.weight = np.asarray(cols[3], dtype=np.float64)
        self.ref = np.asarray(cols[4], dtype=np.int64)  # index into the flat arc list
        new_group = np.ones(self.size, dtype=bool)
        new_group[1:] = self.dst[1:] != self.dst[:-1]
        self.group_start = np.flatnonzero(new_group)
        self.targets = self.dst[self.group_start]
        self.group_of = np.cumsum(new_group) - 1

    def best(self, cand: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-target minimum of ``cand`` and the position of its first minimiser."""
        best = np.minimum.reduceat(cand, self.group_start)
        hit = np.flatnonzero(cand == best[self.group_of])
        g = self.group_of[hit]
        first = np.ones(len(g), dtype=bool)
        first[1:] = g[1:] != g[:-1]
        arg = np.full(len(best), -1, dtype=np.int64)
        arg[g[first]] = hit[first]
        return best, arg


def frame_shortest_path(f: Fst, frame_costs: np.ndarray) -> Path:
    """Best path of ``compose(E, f)`` where ``E`` is the linear acceptor over frames.

    ``frame_costs[t, label]`` is the cost of reading ``label`` at frame ``t``
    (the emission graph's arc costs). The composition is explored one frame
    at a time, vectorised over ``f``'s arcs, so nothing of size T x |f| is
    built beyond the back-pointer tables. Input-epsilon arcs of ``f`` are
    closed over after every frame by relaxation until nothing improves,
    which is exact because costs are non-negative.

    Ties go to the lowest-numbered arc among consuming moves; epsilon moves
    are only taken on strict improvement.
    """
    _require_frozen(f)
    if f.start is None or f.num_states == 0:
        raise EmptyLanguageError("graph is empty")
    flat: list[tuple[int, int]] = []
    cons_rows, eps_rows = [], []
    for s, arcs in enumerate(f._states):
        for k, arc in enumerate(arcs):
            if arc.weight == ZERO:
                continue
            row = (s, arc.nextstate, arc.ilabel, arc.weight, len(flat))
            flat.append((s, k))
            (eps_rows if arc.ilabel == EPSILON else cons_rows).append(row)
    cons, eps = _ArcTable(cons_rows), _ArcTable(eps_rows)
    n = f.num_states
    costs = np.asarray(frame_costs, dtype=np.float64)
    num_frames = costs.shape[0]
    cons_back = np.full((num_frames, n), -1, dtype=np.int64)
    eps_back = np.full((num_frames + 1, n), -1, dtype=np.int64)

    def close(score: np.ndarray, back: np.ndarray) -> None:
        if not eps.size:
            return
        while True:
            cand = score[eps.src] + eps.weight
            best, arg = eps.best(cand)
            better = np.flatnonzero(best < score[eps.targets])
            if not len(better):
                return
            tgt = eps.targets[better]
            score[tgt] = best[better]
            back[tgt] = eps.ref[arg[better]]

    score = np.full(n, np.inf)
    score[f.start] = 0.0
    close(score, eps_back[0])
    for t in range(num_frames):
        new = np.full(n, np.inf)
        if cons.size:
            cand = score[cons.src] + cons.weight + costs[t, cons.ilabel]
            best, arg = cons.best(cand)
            reached = np.flatnonzero(np.isfinite(best))
            tgt = cons.targets[reached]
            new[tgt] = best[reached]
            cons_back[t, tgt] = cons.ref[arg[reached]]
        close(new, eps_back[t + 1])
        score = new

    final_w = np.full(n, np.inf)
    for s, w in f._finals.items():
        final_w[s] = w
    total = score + final_w
    end = int(np.argmin(total))
    if not np.isfinite(total[end]):
        raise EmptyLanguageError("no accepting path of finite cost")

    arcs_rev, idx_rev, states_rev = [], [], [end]
    s, t = end, num_frames
    while True:
        j = int(eps_back[t, s])
        if j < 0:
            if t == 0:
                break
            t -= 1
            j = int(cons_back[t, s])
        ps, k = flat[j]
        arcs_rev.append(f._states[ps][k])
        idx_rev.append(k)
        states_rev.append(ps)
        s = ps
    arcs_rev.reverse()
    idx_rev.reverse()
    states_rev.reverse()
    return Path(states_rev, arcs_rev, float(total[end]), idx_rev)


def path_cost(f: Fst, path: Path) -> float:
    return sum(a.weight for a in path.arcs) + f.final(path.states[-1])


# AT&T text format
#
#   src dst ilabel olabel cost      one line per arc
#   state cost                       one line per final state
#
# The start state is the source of the first arc line (or the first final
# line when there are no arcs). Costs use Python float syntax, "inf" allowed.


def to_text(f: Fst) -> str:
    lines = []
    order = list(f.states())
    if f.start is not None and order:
        order.remove(f.start)
        order.insert(0, f.start)
    for s in order:
        for arc in f._states[s]:
            lines.append(f"{s}\t{arc.nextstate}\t{arc.ilabel}\t{arc.olabel}\t{arc.weight!r}")
    finals = sorted(f._finals.items(), key=lambda kv: (kv[0] != f.start, kv[0]))
    for s, w in finals:
        lines.append(f"{s}\t{w!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def from_text(text: str, input_space: str | None = None, output_space: str | None = None) -> Fst:
    f = Fst(input_space, output_space)
    arcs: list[tuple[int, int, int, int, float]] = []
    finals: list[tuple[int, float]] = []
    start = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split()
        try:
            if len(cols) == 5:
                s, t, i, o = (int(c) for c in cols[:4])
                arcs.append((s, t, i, o, float(cols[4])))
            elif len(cols) in (1, 2):
                s = int(cols[0])
                finals.append((s, float(cols[1]) if len(cols) == 2 else ONE))
            else:
                raise ValueError(f"expected 1, 2 or 5 columns, got {len(cols)}")
        except ValueError as exc:
            raise FstError(f"line {lineno}: {exc}") from None
        if start is None:
            start = s
    if start is None:
        raise FstError("empty graph text")
    top = max([start] + [max(a[0], a[1]) for a in arcs] + [s for s, _ in finals])
    f.add_states(top + 1)
    f.set_start(start)
    for s, t, i, o, w in arcs:
        f.add_arc(s, i, o, w, t)
    for s, w in finals:
        f.set_final(s, w)
    return f.freeze()


def linear_acceptor(labels: Iterable[int], costs: Iterable[float] | None = None,
                    space: str | None = None) -> Fst:
    """Chain acceptor for a label string."""
    labels = list(labels)
    costs = [ONE] * len(labels) if costs is None else list(costs)
    f = Fst(space, space)
    f.add_states(len(labels) + 1)
    f.set_start(0)
    for k, (lab, w) in enumerate(zip(labels, costs)):
        f.add_arc(k, lab, lab, w, k + 1)
    f.set_final(len(labels))
    return f.freeze()


def iter_arcs(f: Fst) -> Iterator[tuple[int, int, Arc]]:
    for s, arcs in enumerate(f._states):
        for k, arc in enumerate(arcs):
            yield s, k, arc
