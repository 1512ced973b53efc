import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsalign.graphs import PhoneVocab
from wsalign.synth import (
    SEVERITIES,
    CorruptionError,
    DisfluencySpec,
    RefAlignment,
    SynthError,
    apply_specs,
    build_corpus,
    corrupt,
    crossfade_splices,
    num_disfluencies,
    random_ref_alignment,
    random_refs,
    sample_specs,
    synth_emissions,
    synth_utterance,
    utterance_rng,
)

V = PhoneVocab.default()


def make_ref(seed=0, utt="u"):
    return random_ref_alignment(V, utterance_rng(seed, utt), utt)


def test_random_ref_is_valid_and_separable():
    for seed in range(20):
        ref = make_ref(seed)
        ref.validate(V)
        segs = ref.segments()
        for a, b in zip(segs, segs[1:]):
            # adjacent identical phones always have a pause between them
            if a[0] == b[0]:
                assert b[1] > a[2]
        assert 6 <= len(ref.words) <= 12
        assert all(len(set(p for p, _, _ in w)) == len(w) for w in ref.words)


def test_ref_validation_errors():
    with pytest.raises(SynthError):
        RefAlignment("x", [[(1, 5, 3)]], 10).validate()
    with pytest.raises(SynthError):
        RefAlignment("x", [[(1, 0, 4)], [(2, 2, 6)]], 10).validate()
    with pytest.raises(SynthError):
        RefAlignment("x", [[(1, 0, 4)]], 3).validate()
    with pytest.raises(SynthError):
        RefAlignment("x", [[(V.sil_id, 0, 4)]], 5).validate(V)


def test_synth_emissions_peak_and_normalisation():
    ref = make_ref(1)
    e = synth_emissions(ref, V, peak=0.9, rng_seed=3)
    probs = np.exp(e.values)
    assert np.allclose(probs.sum(axis=1), 1.0)
    labels = np.asarray(ref.frame_labels(V.sil_id)) - 1
    assert np.allclose(probs[np.arange(len(labels)), labels], 0.9)
    assert (probs.argmax(axis=1) == labels).all()
    with pytest.raises(SynthError):
        synth_emissions(ref, V, peak=0.4)


def test_num_disfluencies():
    assert num_disfluencies(0.3, 10) == 3
    assert num_disfluencies(0.1, 6) == 1
    assert num_disfluencies(0.2, 11) == 3
    assert num_disfluencies(0.1, 10) == 1


def test_sample_specs_constraints():
    for seed in range(40):
        ref = make_ref(seed)
        n = len(ref.words)
        p, specs = sample_specs(ref, np.random.default_rng(seed))
        assert p in SEVERITIES
        assert len(specs) == num_disfluencies(p, n)
        touched = [j for s in specs for j in s.words_touched()]
        assert len(touched) == len(set(touched))
        assert all(0 <= j < n for j in touched)
        for s in specs:
            if s.type in ("W", "PW"):
                assert s.word < n - 1
            if s.type == "W":
                assert 1 <= s.amount <= 3
            if s.type == "PW":
                assert 1 <= s.amount < len(ref.words[s.word])
            if s.type == "PH":
                assert s.amount in (2, 3)
        assert sum(s.amount for s in specs if s.type == "D") < n


def test_sample_specs_impossible():
    ref = RefAlignment("x", [[(1, 0, 4)]], 6)
    with pytest.raises(CorruptionError):
        sample_specs(ref, np.random.default_rng(0), 0.3, types=("W",))


def _word_phones(ref):
    return [tuple(p for p, _, _ in w) for w in ref.words]


def test_corrupt_word_repeat():
    ref = make_ref(2)
    e = synth_emissions(ref, V, rng_seed=0)
    res = corrupt(ref, e, specs=[DisfluencySpec("W", 1, 2)])
    words = _word_phones(ref)
    assert _word_phones(res.verbatim) == [words[0]] + [words[1]] * 3 + words[2:]
    assert res.verbatim.word_ids[:5] == [0, 1, 1, 1, 2]
    assert res.approximate == ref.transcript()
    dur = ref.words[1][-1][2] - ref.words[1][0][1]
    assert res.specs[0].num_frames == 2 * dur
    assert res.specs[0].frame == res.verbatim.words[1][0][1]
    assert res.emissions.num_frames == ref.num_frames + 2 * dur
    assert res.p is None


def test_corrupt_phrase_and_delete():
    ref = make_ref(4)
    e = synth_emissions(ref, V, rng_seed=0)
    words = _word_phones(ref)
    res = corrupt(ref, e, specs=[DisfluencySpec("PH", 0, 2), DisfluencySpec("D", 3, 2)])
    assert _word_phones(res.verbatim) == words[:2] + words[:3] + words[5:]
    removed = ref.words[4][-1][2] - ref.words[3][0][1]
    assert res.specs[1].num_frames == removed


def test_corrupt_keeps_frame_labels_recoverable():
    for seed in range(15):
        ref = make_ref(seed, f"s{seed}")
        e = synth_emissions(ref, V, rng_seed=seed)
        res = corrupt(ref, e, rng_seed=seed)
        labels = np.asarray(res.verbatim.frame_labels(V.sil_id)) - 1
        assert res.verbatim.num_frames == res.emissions.num_frames
        assert (res.emissions.values.argmax(axis=1) == labels).all()
        assert np.allclose(np.exp(res.emissions.values).sum(axis=1), 1.0)


def test_one_phone_part_word_gets_a_pause():
    ref = RefAlignment("x", [[(5, 4, 8), (6, 8, 12)], [(7, 12, 16)]], 20)
    e = synth_emissions(ref, V, rng_seed=0)
    res = corrupt(ref, e, specs=[DisfluencySpec("PW", 0, 1)])
    segs = res.verbatim.segments()
    assert segs[0][:3] == (5, 4, 8)
    assert segs[1][:3] == (5, 11, 15)  # three pause frames in between
    assert res.specs[0].num_frames == 7
    no_pause = RefAlignment("y", [[(5, 0, 4), (6, 4, 8)], [(7, 8, 12)]], 12)
    with pytest.raises(CorruptionError):
        corrupt(no_pause, synth_emissions(no_pause, V), specs=[DisfluencySpec("PW", 0, 1)])


def test_crossfade_weights():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]])
    out = np.exp(crossfade_splices(np.log(probs), np.array([0, 5, 6])))
    assert np.allclose(out[0], (2 * probs[0] + probs[1]) / 3)
    assert np.allclose(out[1], (probs[0] + 2 * probs[1]) / 3)
    assert np.allclose(out[2], probs[2])
    same = crossfade_splices(np.log(probs), np.array([3, 4, 5]))
    assert np.allclose(same, np.log(probs))


def test_apply_specs_frame_mismatch():
    ref = make_ref(0)
    e = synth_emissions(ref, V)
    short = type(e)(e.values[:-1], e.frame_shift_ms)
    with pytest.raises(CorruptionError):
        apply_specs(ref, short, [])


def test_synth_utterance_clean_fraction():
    ref = make_ref(0, "a")
    res, clean = synth_utterance(ref, V, 0, clean_fraction=1.0)
    assert clean and res.p == 0.0 and res.specs == []
    res, clean = synth_utterance(ref, V, 0, clean_fraction=0.0)
    assert not clean and res.p in SEVERITIES
    with pytest.raises(SynthError):
        synth_utterance(ref, V, 0, clean_fraction=1.5)


def test_build_corpus_is_deterministic(tmp_path):
    refs = random_refs(V, 6, seed=9)
    a = build_corpus(refs, V, tmp_path / "a", rng_seed=9, clean_fraction=0.5)
    b = build_corpus(random_refs(V, 6, seed=9), V, tmp_path / "b", rng_seed=9, clean_fraction=0.5)
    assert a == b
    assert (tmp_path / "a" / "manifest.jsonl").read_text() == (tmp_path / "b" / "manifest.jsonl").read_text()
    for rec in a:
        assert (tmp_path / "a" / rec["emissions"]).read_bytes() == (tmp_path / "b" / rec["emissions"]).read_bytes()
        assert rec["clean"] == (rec["p"] == 0.0)
    with pytest.raises(SynthError):
        build_corpus([], V, tmp_path / "c")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_corruption_invariants(seed):
    ref = make_ref(seed, "h")
    e = synth_emissions(ref, V, rng_seed=seed)
    res = corrupt(ref, e, rng_seed=seed)
    v = res.verbatim
    v.validate(V)
    # each original word survives unless deleted, in order
    deleted = {j for s in res.specs if s.type == "D" for j in s.words_touched()}
    firsts = []
    for wid in v.word_ids:
        if wid not in firsts:
            firsts.append(wid)
    assert firsts == sorted(set(range(len(ref.words))) - deleted)
    for s in res.specs:
        assert s.frame >= 0 and s.num_frames > 0
