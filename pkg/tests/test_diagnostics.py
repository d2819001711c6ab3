import math

import numpy as np
import pytest

from wmss.diagnostics import (
    SERIES_COLUMNS,
    StatsPoint,
    StatsSeries,
    export_csv,
    extended_stats,
    gap_from_logits,
    gap_stats,
    read_csv,
    stats_from_logits,
    track,
)
from wmss.logit_math import InvalidInputError, logit_stats
from wmss.toy_lm import gen_corpus, init_params


def test_gap_by_hand():
    logits = np.array([[3.0, 1.0, -1.0], [0.0, 2.0, 4.0]])
    g = gap_from_logits(logits, np.array([0, 2]))
    assert g.z_target == 3.5
    assert g.z_bg == pytest.approx((1 - 1 + 0 + 2) / 4)
    assert g.gap == pytest.approx(3.0)
    assert g.sigma == pytest.approx(np.std(logits))
    assert g.n_positions == 2


def test_gap_top_k_background():
    logits = np.array([[3.0, 1.0, -1.0, 0.5]])
    g = gap_from_logits(logits, np.array([0]), top_k=2)
    assert g.z_bg == pytest.approx(0.75)


def test_gap_invariant_to_global_shift():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(20, 8))
    tgt = rng.integers(0, 8, size=20)
    a, b = gap_from_logits(logits, tgt), gap_from_logits(logits + 7.0, tgt)
    assert b.gap == pytest.approx(a.gap, abs=1e-12)
    assert b.sigma == pytest.approx(a.sigma, abs=1e-12)


def test_fresh_model_entropy_near_log_v():
    s = extended_stats(init_params(0), gen_corpus("ambiguous-grammar", 0, 50), n_samples=50)
    assert 0.8 * math.log(32) < s.entropy <= math.log(32)


def test_stats_match_single_vector_version():
    z = np.random.default_rng(1).normal(size=(1, 9)) * 2
    a, b = stats_from_logits(z), logit_stats(z[0])
    for f in ("mean", "std", "centered_norm", "max", "min", "l2_norm", "entropy", "max_prob"):
        assert getattr(a, f) == pytest.approx(getattr(b, f), rel=1e-12)


def test_sampling_with_replacement_beyond_corpus_size():
    corpus = gen_corpus("copy", 0, 5)
    g = gap_stats(init_params(0), corpus, n_samples=40, seed=3)
    assert g.n_positions == 40 * (len(corpus[0].tokens) - 1)
    assert gap_stats(init_params(0), corpus, n_samples=40, seed=3) == g
    with pytest.raises(InvalidInputError):
        gap_stats(init_params(0), [], n_samples=3)
    with pytest.raises(InvalidInputError):
        gap_stats(init_params(0), corpus, n_samples=0)


def point(i, e, shift=0.0):
    z = np.random.default_rng(i * 10 + e).normal(size=(6, 5)) + shift
    return StatsPoint(i, e, gap_from_logits(z, np.zeros(6, dtype=int)), stats_from_logits(z))


def test_series_order_enforced():
    s = track(StatsSeries(), point(0, 0))
    track(s, point(0, 1))
    track(s, point(1, 0))
    with pytest.raises(InvalidInputError):
        track(s, point(0, 5))
    with pytest.raises(InvalidInputError):
        track(s, point(1, 0))
    assert len(s) == 3


def test_csv_round_trip(tmp_path):
    s = StatsSeries()
    for i, e in [(0, 0), (0, 1), (1, 0)]:
        track(s, point(i, e, shift=i))
    path = tmp_path / "s.csv"
    export_csv(s, path)
    assert path.read_text().splitlines()[0] == ",".join(SERIES_COLUMNS)
    back = read_csv(path)
    assert [p.row() for p in back.points] == [p.row() for p in s.points]


def test_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidInputError):
        read_csv(path)
