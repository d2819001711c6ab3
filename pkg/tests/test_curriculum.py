import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wmss.curriculum import (
    CurriculumConfig,
    CurriculumWeights,
    EntropyRecord,
    curriculum_weights,
    entropy_dynamics,
    export_records,
    weighted_sample,
)
from wmss.logit_math import InvalidInputError
from wmss.toy_lm import Dims, TokenSequence, gen_corpus, init_params, sample_entropy


def recs(h_weak, delta):
    return [EntropyRecord(i, hw, hw + d, d) for i, (hw, d) in enumerate(zip(h_weak, delta))]


def hand_weights(h_weak, delta, a, b, c):
    """Spreadsheet-style recomputation with plain Python floats."""
    terms = [
        (a, list(h_weak)),
        (b, [max(-d, 0.0) for d in delta]),
        (c, [max(d, 0.0) for d in delta]),
    ]
    kept = [(coef, [v / sum(vals) for v in vals]) for coef, vals in terms if coef > 0 and sum(vals) > 0]
    total = sum(coef for coef, _ in kept)
    return [sum(coef / total * vals[i] for coef, vals in kept) for i in range(len(h_weak))]


def test_single_gamma_term():
    w = curriculum_weights(recs([1, 1, 1], [1, 1, 2]), CurriculumConfig(0, 0, 1))
    assert np.allclose(w.probs, [0.25, 0.25, 0.5], rtol=0, atol=1e-15)


def test_alpha_only_equal_difficulty_is_uniform():
    w = curriculum_weights(recs([0.7] * 4, [0.3, -0.1, 0, 2]), CurriculumConfig(1, 0, 0))
    assert np.allclose(w.probs, 0.25, rtol=0, atol=1e-15)


def test_two_sample_default_mix_by_hand():
    # alpha term [1/3, 2/3]; beta term [1, 0]; gamma term [0, 1]
    w = curriculum_weights(recs([1, 2], [-1, 1]))
    expected = [0.1 / 3 + 0.8, 0.2 / 3 + 0.1]
    assert np.allclose(w.probs, expected, rtol=0, atol=1e-15)
    assert w.probs == pytest.approx(hand_weights([1, 2], [-1, 1], 0.1, 0.8, 0.1), abs=1e-15)


def test_zero_term_is_dropped_and_renormalised():
    # no sample got worse, so gamma has no support
    w = curriculum_weights(recs([1, 1], [-1, -3]), CurriculumConfig(0.1, 0.8, 0.1))
    beta = np.array([0.25, 0.75])
    assert np.allclose(w.probs, (0.1 * 0.5 + 0.8 * beta) / 0.9, atol=1e-15)


def test_all_zero_signal_falls_back_to_uniform():
    w = curriculum_weights(recs([0, 0, 0], [0, 0, 0]))
    assert w.fallback
    assert np.array_equal(w.probs, np.full(3, 1 / 3))


def test_invalid_configs():
    with pytest.raises(InvalidInputError):
        CurriculumConfig(-0.1, 0.5, 0.5)
    with pytest.raises(InvalidInputError):
        CurriculumConfig(0, 0, 0)
    with pytest.raises(InvalidInputError):
        curriculum_weights([])


# exhaustive 5-sample grid: every combination of these h_weak / delta_h values
D_VALUES = (-1.5, -0.2, 0.0, 0.4, 1.0)
CFGS = [(0.1, 0.8, 0.1), (1, 0, 0), (0, 1, 0), (0, 0, 1), (0.3, 0.3, 0.4), (0, 2, 5)]


def five_sample_instances():
    for deltas in itertools.product(D_VALUES, repeat=3):
        yield [0.5, 2.0, 0.0, 1.0, 0.5], [*deltas, 0.4, -0.2]


@pytest.mark.parametrize("cfg", CFGS)
def test_exhaustive_sum_and_hand_oracle(cfg):
    for h, d in five_sample_instances():
        w = curriculum_weights(recs(h, d), CurriculumConfig(*cfg))
        assert abs(w.probs.sum() - 1) <= 1e-12
        assert np.all(w.probs >= 0)
        assert np.allclose(w.probs, hand_weights(h, d, *cfg), rtol=0, atol=1e-14)


@pytest.mark.parametrize("cfg", CFGS)
@pytest.mark.parametrize("scale", [1e-3, 0.5, 7.0, 1e4])
def test_exhaustive_scale_invariance(cfg, scale):
    for h, d in five_sample_instances():
        a = curriculum_weights(recs(h, d), CurriculumConfig(*cfg)).probs
        b = curriculum_weights(recs(h, d), CurriculumConfig(*(scale * c for c in cfg))).probs
        assert np.allclose(a, b, rtol=0, atol=1e-14)


def test_exhaustive_gamma_monotone_in_positive_delta():
    cfg = CurriculumConfig(0.1, 0.8, 0.1)
    for h, d in five_sample_instances():
        for i in range(5):
            if d[i] <= 0:
                continue
            bumped = list(d)
            bumped[i] = d[i] + 0.5
            before = curriculum_weights(recs(h, d), cfg).probs[i]
            after = curriculum_weights(recs(h, bumped), cfg).probs[i]
            if any(d[j] > 0 for j in range(5) if j != i):
                assert after > before
            else:  # sole member of the term already owns all of its mass
                assert after == pytest.approx(before, abs=1e-15)


def test_exhaustive_beta_monotone_in_negative_delta():
    cfg = CurriculumConfig(0.1, 0.8, 0.1)
    for h, d in five_sample_instances():
        for i in range(5):
            if d[i] >= 0:
                continue
            bumped = list(d)
            bumped[i] = d[i] - 0.5
            before = curriculum_weights(recs(h, d), cfg).probs[i]
            after = curriculum_weights(recs(h, bumped), cfg).probs[i]
            if any(d[j] < 0 for j in range(5) if j != i):
                assert after > before
            else:
                assert after == pytest.approx(before, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=30))
def test_partition_and_normalisation(deltas):
    for u in deltas:
        assert max(-u, 0) + max(u, 0) == abs(u)
    w = curriculum_weights(recs([1.0] * len(deltas), deltas))
    assert abs(w.probs.sum() - 1) <= 1e-12


def test_entropy_dynamics_limits():
    corpus = gen_corpus("copy", 0, 5)
    m = init_params(0)
    assert all(r.delta_h == 0 for r in entropy_dynamics(m, m, corpus))
    # weak uniform (all-zero weights), strong near-deterministic
    weak = m.zeros_like()
    strong = m.zeros_like()
    strong.output_bias[7] = 60.0
    for r in entropy_dynamics(weak, strong, corpus):
        assert r.h_weak == pytest.approx(math.log(32), rel=1e-14)
        assert r.delta_h == pytest.approx(-math.log(32), abs=1e-20 + 1e-12)
        assert r.delta_h == r.h_strong - r.h_weak


def test_entropy_dynamics_single_sample_matches_direct():
    corpus = gen_corpus("ambiguous-grammar", 3, 1)
    w, s = init_params(1), init_params(2)
    (r,) = entropy_dynamics(w, s, corpus)
    assert r.h_weak == sample_entropy(w, corpus[0])
    assert r.h_strong == sample_entropy(s, corpus[0])


def test_entropy_dynamics_vocab_mismatch():
    with pytest.raises(InvalidInputError):
        entropy_dynamics(init_params(0), init_params(0, Dims(vocab=16)), gen_corpus("copy", 0, 2))
    with pytest.raises(InvalidInputError):
        entropy_dynamics(init_params(0, Dims(vocab=8)), init_params(1, Dims(vocab=8)), gen_corpus("copy", 0, 2))


def test_weighted_sample_uniform_statistics():
    corpus = [TokenSequence([1, 2], i) for i in range(10)]
    w = CurriculumWeights(np.full(10, 0.1))
    draws = weighted_sample(corpus, w, n=100 * 10, seed=0)
    counts = Counter(s.sample_id for s in draws)
    sigma = math.sqrt(1000 * 0.1 * 0.9)
    assert all(abs(counts[i] - 100) <= 3 * sigma for i in range(10))


def test_weighted_sample_point_mass_and_determinism():
    corpus = [TokenSequence([1, 2], i) for i in range(4)]
    w = CurriculumWeights(np.array([0.0, 0.0, 1.0, 0.0]))
    assert {s.sample_id for s in weighted_sample(corpus, w)} == {2}
    u = CurriculumWeights(np.full(4, 0.25))
    a = [s.sample_id for s in weighted_sample(corpus, u, seed=9)]
    assert a == [s.sample_id for s in weighted_sample(corpus, u, seed=9)]
    assert len(a) == 4
    with pytest.raises(InvalidInputError):
        weighted_sample(corpus, CurriculumWeights(np.full(3, 1 / 3)))
    with pytest.raises(InvalidInputError):
        weighted_sample(corpus, u, n=0)


def test_export_records(tmp_path):
    r = recs([1, 2], [-1, 1])
    w = curriculum_weights(r)
    path = tmp_path / "cur.csv"
    export_records(path, r, w)
    lines = path.read_text().splitlines()
    assert lines[0] == "sample_id,h_weak,h_strong,delta_h,weight"
    assert float(lines[1].split(",")[-1]) == w.probs[0]
