import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsalign import fst
from wsalign.graphs import (
    EmissionError,
    EventKind,
    LogProbMatrix,
    PhoneTranscript,
    PhoneVocab,
    TranscriptError,
    VocabError,
    alpha_of,
    bigram_probabilities,
    build_biased_bigram,
    build_ctc_topology,
    build_emission_graph,
    build_linear_fsa,
    build_modified_fsa,
    scale_costs,
)

from oracles import ctc_collapse, disfluent_paths, relation

V = PhoneVocab.default()


def tr(line: str) -> PhoneTranscript:
    return PhoneTranscript.parse(line, V)


def test_default_vocab_layout():
    assert V.size == 42
    assert (V.sil_id, V.unk_id, V.pad_id) == (40, 41, 42)
    assert V.blank_id == V.sil_id
    assert len(V.phone_ids) == 39
    assert V.symbol(1) == "AA"
    assert V.column(V.sil_id) == 39
    assert V.decode(V.encode(["K", "AE", "T"])) == ["K", "AE", "T"]


def test_vocab_errors():
    with pytest.raises(VocabError):
        PhoneVocab(("AA", "AA", "[SIL]", "[UNK]", "[PAD]"))
    with pytest.raises(VocabError):
        PhoneVocab(("AA", "[SIL]", "[UNK]"))
    with pytest.raises(VocabError):
        V.encode(["QQ"])


def test_event_labels_round_trip():
    for kind, span in [(EventKind.WORD_DELETE, 1), (EventKind.PART_WORD_REPEAT, 1),
                       (EventKind.WORD_REPEAT, 1), (EventKind.WORD_REPEAT, 3)]:
        lab = V.event_label(kind, span)
        assert V.is_event(lab)
        assert V.event_of(lab) == (kind, span)
    assert V.event_of(5) is None


def test_transcript_parse_and_layout():
    y = tr("DH AH | K AE T | S AE T")
    assert y.num_words == 3
    assert y.word_starts() == [0, 2, 5, 8]
    assert y.word_of_position() == [0, 0, 1, 1, 1, 2, 2, 2]
    assert PhoneTranscript.parse(y.to_line(V), V) == y


@pytest.mark.parametrize("line", ["", " | ", "K AE QQ", "K [SIL] T"])
def test_transcript_errors(line):
    with pytest.raises((TranscriptError, VocabError)):
        tr(line)


def test_emission_matrix_checks():
    probs = np.full((3, 42), 1.0 / 42)
    e = LogProbMatrix.from_probs(probs)
    assert e.num_frames == 3
    costs = e.frame_costs(V)
    assert costs.shape == (3, 43)
    assert np.isinf(costs[:, 0]).all() and np.isinf(costs[:, V.pad_id]).all()
    assert costs[0, 1] == pytest.approx(math.log(42))
    with pytest.raises(EmissionError):
        LogProbMatrix.from_logits(np.zeros((2, 42)))
    fixed = LogProbMatrix.from_logits(np.zeros((2, 42)), renormalize=True)
    assert np.allclose(np.exp(fixed.values).sum(axis=1), 1.0)
    with pytest.raises(EmissionError):
        LogProbMatrix(np.array([[np.nan]]))
    with pytest.raises(VocabError):
        LogProbMatrix.from_probs(np.ones((2, 5))).check_vocab(V)


def test_alpha_and_prior_costs():
    assert alpha_of(1.0) == pytest.approx(0.9)
    f = build_modified_fsa(tr("K AE T | S AE T"), 1.0, V)
    weights = {(s, a.olabel): a.weight for s, _, a in fst.iter_arcs(f)}
    backbone = [a.weight for _, _, a in fst.iter_arcs(f) if a.ilabel != 0]
    assert all(w == pytest.approx(-math.log(0.9)) for w in backbone)
    d = V.event_label(EventKind.WORD_DELETE)
    w1 = V.event_label(EventKind.WORD_REPEAT, 1)
    pw = V.event_label(EventKind.PART_WORD_REPEAT)
    assert weights[(0, d)] == pytest.approx(2.302585, abs=1e-6)  # start: D only
    assert weights[(3, d)] == pytest.approx(2.995732, abs=1e-6)  # D and W leave state 3
    assert weights[(3, w1)] == pytest.approx(2.995732, abs=1e-6)
    assert weights[(6, w1)] == pytest.approx(2.302585, abs=1e-6)  # final: W only
    assert weights[(1, pw)] == pytest.approx(2.302585, abs=1e-6)


def test_beta_extremes():
    y = tr("K AE T | S AE T")
    inf = build_modified_fsa(y, math.inf, V)
    assert all(a.weight == math.inf for _, _, a in fst.iter_arcs(inf) if a.ilabel == 0)
    assert all(a.weight == 0.0 for _, _, a in fst.iter_arcs(inf) if a.ilabel != 0)
    assert relation(fst.trim(inf)) == relation(build_linear_fsa(y, V))
    zero = build_modified_fsa(y, 0.0, V)
    assert all(a.weight == math.inf for _, _, a in fst.iter_arcs(zero) if a.ilabel != 0)
    with pytest.raises(ValueError):
        build_modified_fsa(y, -1.0, V)


def test_modified_fsa_arc_inventory():
    y = tr("K AE T | S | AE T")
    f = build_modified_fsa(y, 2.0, V)
    kinds = [V.event_of(a.olabel) for _, _, a in fst.iter_arcs(f) if a.ilabel == 0]
    assert kinds.count((EventKind.WORD_DELETE, 1)) == 3
    assert kinds.count((EventKind.PART_WORD_REPEAT, 1)) == 3  # 2 inside word 0, 1 inside word 2
    assert kinds.count((EventKind.WORD_REPEAT, 1)) == 3
    assert kinds.count((EventKind.WORD_REPEAT, 2)) == 2
    assert kinds.count((EventKind.WORD_REPEAT, 3)) == 1
    capped = build_modified_fsa(y, 2.0, V, ph_max_words=1)
    assert not any(V.event_of(a.olabel) == (EventKind.WORD_REPEAT, 2)
                   for _, _, a in fst.iter_arcs(capped))
    none = build_modified_fsa(y, 2.0, V, disable=("W", "D", "PW"))
    assert none.num_arcs == len(y.flat)
    with pytest.raises(ValueError):
        build_modified_fsa(y, 2.0, V, disable=("X",))


def _fsa_paths(f, max_events):
    """All accepting paths with at most ``max_events`` epsilon arcs."""
    out = []

    def walk(s, phones, cost, names):
        if f.is_final(s):
            out.append((tuple(phones), round(cost + f.final(s), 9), tuple(names)))
        for a in f.arcs(s):
            if a.ilabel != 0:
                walk(a.nextstate, phones + [a.ilabel], cost + a.weight, names)
            elif len(names) < max_events:
                kind, span = V.event_of(a.olabel)
                name = f"W{span}" if kind is EventKind.WORD_REPEAT else kind.value
                walk(a.nextstate, phones, cost + a.weight, names + [name])

    walk(f.start, [], 0.0, [])
    return sorted(out)


@pytest.mark.parametrize("line", ["K AE T | S", "K AE | S | AE T", "DH AH | K AE T | S AE T"])
@pytest.mark.parametrize("beta", [1.0, 2.5])
@pytest.mark.parametrize("disable", [(), ("W",), ("D",), ("PW",), ("W", "D")])
def test_modified_fsa_matches_rewrite_closure(line, beta, disable):
    y = tr(line)
    f = build_modified_fsa(y, beta, V, disable=disable)
    bb = -math.log1p(-(10.0 ** -beta))
    eps = beta * math.log(10.0)
    expected = disfluent_paths(y.words, bb, eps, eps + math.log(2), max_events=2, disable=disable)
    expected = sorted((x, round(c, 9), ev) for x, c, ev in expected)
    assert _fsa_paths(f, 2) == expected


def test_ctc_topology_shape():
    t = build_ctc_topology(V)
    assert t.num_states == 41  # blank state + 39 phones + [UNK]
    assert all(t.is_final(s) for s in t.states())
    assert all(a.weight == 0.0 for _, _, a in fst.iter_arcs(t))
    no_unk = build_ctc_topology(V, include_unk=False)
    assert no_unk.num_states == 40


def test_ctc_topology_collapses_like_ctc():
    toks = [1, 2]
    t = build_ctc_topology(V, tokens=toks)
    blank = V.blank_id
    for n in range(0, 5):
        for seq in itertools.product([blank] + toks, repeat=n):
            rel = relation(fst.compose(fst.linear_acceptor(seq), t))
            assert set(rel) == {(seq, ctc_collapse(seq, blank))}


def test_emission_graph():
    rng = np.random.default_rng(0)
    e = LogProbMatrix.from_probs(rng.uniform(0.1, 1, size=(4, 42)))
    g = build_emission_graph(e, V)
    assert g.num_states == 5
    assert g.num_arcs == 4 * 41
    p = fst.shortest_path(g)
    assert p.ilabels() == [int(np.argmax(np.where(np.arange(42) == 41, -np.inf, e.values[t]))) + 1
                           for t in range(4)]


def test_bigram_probabilities_normalise():
    y = tr("K AE T | K AE T | S")
    contexts, prob = bigram_probabilities(y, V, 0.1)
    assert contexts[0] is None
    for ctx in contexts + [object()]:
        total = sum(prob(ctx, b) for b in V.phone_ids) + prob(ctx, None)
        assert total == pytest.approx(1.0)
    assert prob(V.ids["K"], V.ids["AE"]) == pytest.approx(2.1 / (2 + 0.1 * 40))


def test_biased_bigram_prefers_transcript():
    y = tr("K AE T | S")
    g = build_biased_bigram(y, V)
    lin = fst.linear_acceptor(y.flat)
    on = fst.shortest_path(fst.compose(lin, g)).total_cost
    off = fst.shortest_path(fst.compose(fst.linear_acceptor([V.ids["S"], V.ids["T"], V.ids["AE"], V.ids["K"]]), g)).total_cost
    assert on < off
    assert g.num_states == 6  # start, K, AE, T, S contexts + unseen
    with pytest.raises(ValueError):
        build_biased_bigram(y, V, add_k=0.0)


def test_scale_costs():
    g = fst.linear_acceptor([1, 2], [1.0, math.inf])
    h = scale_costs(g, 2.0)
    ws = [a.weight for _, _, a in fst.iter_arcs(h)]
    assert ws == [2.0, math.inf]
    with pytest.raises(ValueError):
        scale_costs(g, -1.0)


@settings(max_examples=40, deadline=None)
@given(words=st.lists(st.lists(st.sampled_from([1, 2, 3, 5, 8]), min_size=1, max_size=3),
                      min_size=1, max_size=4),
       beta=st.floats(0.5, 6.0))
def test_modified_fsa_contains_linear_path(words, beta):
    y = PhoneTranscript(tuple(tuple(w) for w in words))
    f = build_modified_fsa(y, beta, V)
    lin = fst.compose(fst.linear_acceptor(y.flat), f)
    p = fst.shortest_path(fst.trim(lin))
    # the fluent reading is the cheapest way to produce the transcript itself
    assert p.total_cost == pytest.approx(len(y.flat) * -math.log1p(-(10.0 ** -beta)))
    assert all(a.olabel == a.ilabel for a in p.arcs)
