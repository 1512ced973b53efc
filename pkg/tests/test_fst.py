import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsalign import fst
from wsalign.fst import (
    AlphabetMismatchError,
    EmptyLanguageError,
    Fst,
    FrozenError,
    InvalidStateError,
    NotFrozenError,
    compose,
    frame_shortest_path,
    from_text,
    linear_acceptor,
    shortest_path,
    to_text,
    trim,
)

from oracles import compose_relations, enumerate_paths, random_fst, relation


def test_semiring_ops():
    assert fst.plus(1.0, 2.0) == 1.0
    assert fst.plus(fst.ZERO, 3.0) == 3.0
    assert fst.times(1.5, 2.0) == 3.5
    assert fst.times(fst.ONE, 4.0) == 4.0
    assert fst.times(fst.ZERO, 1.0) == fst.ZERO


def test_add_arc_rejects_bad_weights():
    f = Fst()
    f.add_states(2)
    with pytest.raises(ValueError):
        f.add_arc(0, 1, 1, -0.5, 1)
    with pytest.raises(ValueError):
        f.add_arc(0, 1, 1, float("nan"), 1)


def test_freeze_validation_and_immutability():
    f = Fst()
    f.add_states(2)
    with pytest.raises(InvalidStateError):
        f.freeze()  # no start
    f.set_start(0)
    f.add_arc(0, 1, 1, 0.0, 5)
    with pytest.raises(InvalidStateError):
        f.freeze()
    g = linear_acceptor([1, 2])
    with pytest.raises(FrozenError):
        g.add_arc(0, 1, 1, 0.0, 1)
    with pytest.raises(FrozenError):
        g.add_state()


def test_algorithms_need_frozen_graphs():
    f = Fst()
    f.add_state()
    f.set_start(0)
    with pytest.raises(NotFrozenError):
        shortest_path(f)
    with pytest.raises(NotFrozenError):
        compose(f, f)


def test_compose_checks_spaces():
    a = linear_acceptor([1], space="x")
    b = linear_acceptor([1], space="y")
    with pytest.raises(AlphabetMismatchError):
        compose(a, b)
    # untagged tapes compose with anything
    compose(linear_acceptor([1]), b)


def test_compose_linear_chains():
    a = linear_acceptor([1, 2], [0.5, 0.25])
    b = linear_acceptor([1, 2], [1.0, 1.0])
    p = shortest_path(compose(a, b))
    assert p.ilabels() == [1, 2]
    assert p.total_cost == pytest.approx(2.75)
    with pytest.raises(EmptyLanguageError):
        shortest_path(trim(compose(a, linear_acceptor([2, 1]))))


def test_compose_epsilon_filter_no_duplicate_paths():
    # a emits x then output-eps; b reads x then input-eps: one path only
    a = from_text("0 1 1 1 0.5\n1 2 2 0 0.5\n2\n")
    b = from_text("0 1 1 3 1.0\n1 2 0 4 1.0\n2\n")
    c = compose(a, b)
    paths = enumerate_paths(c)
    assert len(paths) == 1
    assert paths[0][:3] == ((1, 2), (3, 4), 3.0)


def test_compose_origins():
    a = linear_acceptor([1])
    c = compose(a, a)
    assert c.origins[c.start] == (0, 0, 0)


def test_trim_keeps_only_useful_states():
    f = from_text("0 1 1 1 1.0\n0 2 2 2 1.0\n2 3 3 3 inf\n1\n")
    t = trim(f)
    assert t.num_states == 2
    assert t.num_arcs == 1
    empty = trim(from_text("0 1 1 1 inf\n1\n"))
    assert empty.num_states == 0
    with pytest.raises(EmptyLanguageError):
        shortest_path(empty)


def test_shortest_path_tie_breaks():
    # equal costs: two-arc route vs one-arc route; fewest arcs wins
    f = from_text("0 1 1 1 1.0\n1 2 2 2 1.0\n0 2 3 3 2.0\n2\n")
    p = shortest_path(f)
    assert p.ilabels() == [3]
    # equal cost and length: lower arc index wins
    g = from_text("0 1 5 5 1.0\n0 1 4 4 1.0\n1\n")
    assert shortest_path(g).ilabels() == [5]
    assert shortest_path(g).arc_indices == [0]


def test_shortest_path_cyclic_graph():
    f = from_text("0 1 1 1 1.0\n1 0 2 2 0.0\n1 2 3 3 1.0\n2\n")
    p = shortest_path(f)
    assert p.total_cost == pytest.approx(2.0)
    assert p.ilabels() == [1, 3]


def test_final_weight_counts():
    f = from_text("0 1 1 1 0.0\n0 2 2 2 0.5\n1 3.0\n2 0.0\n")
    p = shortest_path(f)
    assert p.ilabels() == [2]
    assert p.total_cost == pytest.approx(0.5)
    assert fst.path_cost(f, p) == pytest.approx(0.5)


def test_text_round_trip():
    f = from_text("0 1 1 2 0.5\n1 2 0 3 inf\n2 0.25\n0 1.0\n")
    text = to_text(f)
    g = from_text(text)
    assert to_text(g) == text
    assert g.final(2) == 0.25
    assert g.final(0) == 1.0
    assert g.start == 0


def test_text_start_is_first_source():
    f = from_text("3 0 1 1 0.0\n0\n")
    assert f.start == 3


@pytest.mark.parametrize("bad", ["", "0 1 2\n", "a b c d e\n"])
def test_text_errors(bad):
    with pytest.raises(fst.FstError):
        from_text(bad)


def test_frame_engine_matches_explicit_composition():
    rng = np.random.default_rng(7)
    for _ in range(30):
        f = random_fst(rng, 5, 12, labels=3, eps_prob=0.3, acyclic=False)
        T = int(rng.integers(1, 5))
        costs = np.full((T, 4), np.inf)
        costs[:, 1:] = rng.uniform(0, 2, size=(T, 3))
        e = Fst()
        e.add_states(T + 1)
        e.set_start(0)
        for t in range(T):
            for lab in (1, 2, 3):
                e.add_arc(t, lab, lab, float(costs[t, lab]), t + 1)
        e.set_final(T)
        e.freeze()
        graph = trim(compose(e, f))
        try:
            ref = shortest_path(graph).total_cost
        except EmptyLanguageError:
            with pytest.raises(EmptyLanguageError):
                frame_shortest_path(f, costs)
            continue
        p = frame_shortest_path(f, costs)
        assert p.total_cost == pytest.approx(ref, rel=1e-9, abs=1e-12)
        assert len([a for a in p.arcs if a.ilabel != 0]) == T
        assert fst.path_cost(f, p) + sum(costs[t, lab] for t, lab in enumerate(p.ilabels())) == \
            pytest.approx(p.total_cost)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), na=st.integers(1, 6), nb=st.integers(1, 6))
def test_compose_matches_enumeration(seed, na, nb):
    rng = np.random.default_rng(seed)
    a = random_fst(rng, na, int(rng.integers(0, 10)))
    b = random_fst(rng, nb, int(rng.integers(0, 10)))
    expected = compose_relations(relation(a), relation(b))
    got = relation(compose(a, b))
    assert got.keys() == expected.keys()
    for k in expected:
        assert got[k] == pytest.approx(expected[k], abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 7))
def test_shortest_path_is_minimum_over_simple_paths(seed, n):
    rng = np.random.default_rng(seed)
    f = random_fst(rng, n, int(rng.integers(0, 14)), acyclic=False)
    costs = [c for _, _, c, _ in enumerate_paths(f, simple=True)]
    if not costs:
        with pytest.raises(EmptyLanguageError):
            shortest_path(f)
        return
    p = shortest_path(f)
    assert p.total_cost == pytest.approx(min(costs), abs=1e-9)
    assert fst.path_cost(f, p) == pytest.approx(p.total_cost, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_trim_preserves_relation(seed):
    rng = np.random.default_rng(seed)
    f = random_fst(rng, 6, 10)
    assert relation(trim(f)) == pytest.approx(relation(f)) if relation(f) else trim(f).num_states == 0


@settings(max_examples=30, deadline=None)
@given(labels=st.lists(st.integers(1, 5), min_size=0, max_size=6))
def test_linear_acceptor_identity_composition(labels):
    a = linear_acceptor(labels)
    rel = relation(compose(a, a))
    assert rel == {(tuple(labels), tuple(labels)): 0.0}
