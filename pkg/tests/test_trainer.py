import json
from dataclasses import replace

import numpy as np
import pytest

from wmss import trainer
from wmss.curriculum import CurriculumConfig, CurriculumWeights
from wmss.logit_math import InvalidInputError, softmax
from wmss.toy_lm import TokenSequence, forward, gen_corpus, init_params, positions
from wmss.trainer import (
    CheckpointPair,
    TrainConfig,
    joint_train_step,
    make_data,
    negative_mass_in_vivo,
    phase1_sft,
    run,
    run_baseline,
    run_wmss,
    sft_step,
    write_report,
)

SMALL = TrainConfig(n_train=60, n_eval=20, epochs_per_phase=1, outer_iterations=2, batch_size=16, eta=0.1)


def small_data(cfg=SMALL):
    return make_data(cfg)


def uniform_curriculum(records, cfg):
    n = len(records)
    return CurriculumWeights(np.full(n, 1.0 / n), fallback=True)


def test_config_json_round_trip(tmp_path):
    cfg = replace(SMALL, lam=0.3, curriculum=CurriculumConfig(0.2, 0.5, 0.3))
    d = cfg.to_dict()
    assert d["lambda"] == 0.3 and "lam" not in d
    path = tmp_path / "c.json"
    path.write_text(json.dumps(d))
    assert TrainConfig.load(path) == cfg


@pytest.mark.parametrize("bad", [{"lambda": 1.5}, {"eta": 0}, {"method": "dpo"}, {"outer_iterations": 0},
                                 {"bogus": 1}, {"curriculum": {"alpha": 1, "delta": 2}}])
def test_config_rejects(bad):
    with pytest.raises(InvalidInputError):
        TrainConfig.from_dict(bad)


def test_joint_step_gradient_split():
    params_w, params_s = init_params(0), init_params(1)
    ctx, tgt, _ = positions(gen_corpus("copy", 0, 4), 8)
    lam, eta = 0.3, 0.05
    pair = CheckpointPair(params_w.copy(), params_s.copy())
    joint_train_step(pair, ctx, tgt, lam, eta)
    # reference: the mixed-logit CE gradient, pushed through each model separately
    zw, cw = forward(params_w, ctx)
    zs, cs = forward(params_s, ctx)
    p = np.array([softmax(r) for r in lam * zs + (1 - lam) * zw])
    p[np.arange(len(tgt)), tgt] -= 1
    g = p / len(tgt)
    ref_s, ref_w = params_s.copy(), params_w.copy()
    ref_s.sgd_(trainer.backward(params_s, cs, lam * g), eta)
    ref_w.sgd_(trainer.backward(params_w, cw, (1 - lam) * g), eta)
    assert pair.strong.allclose(ref_s, rtol=1e-12, atol=1e-14)
    assert pair.weak.allclose(ref_w, rtol=1e-12, atol=1e-14)


def test_frozen_weak_is_untouched():
    pair = CheckpointPair(init_params(0), init_params(1))
    before = pair.weak.copy()
    ctx, tgt, _ = positions(gen_corpus("copy", 0, 4), 8)
    joint_train_step(pair, ctx, tgt, 0.5, 0.1, update_weak=False)
    assert pair.weak.equal(before)
    assert not pair.strong.equal(init_params(1))


def test_lambda_one_step_equals_sft_step():
    ctx, tgt, _ = positions(gen_corpus("ambiguous-grammar", 0, 8), 8)
    pair = CheckpointPair(init_params(0), init_params(1))
    model = init_params(1)
    joint_train_step(pair, ctx, tgt, 1.0, 0.1)
    sft_step(model, ctx, tgt, 0.1)
    assert pair.strong.equal(model)
    assert pair.weak.equal(init_params(0))


def test_pair_dims_must_match():
    from wmss.toy_lm import Dims

    with pytest.raises(InvalidInputError):
        CheckpointPair(init_params(0), init_params(0, Dims(vocab=16)))


def test_phase1_returns_m0_as_weak():
    train, held = small_data()
    m0 = init_params(0)
    pair = phase1_sft(m0, train, SMALL, held)
    assert pair.weak.equal(m0)
    assert not pair.strong.equal(m0)
    with pytest.raises(InvalidInputError):
        phase1_sft(m0, [], SMALL)


def test_wmss_report_has_k_plus_one_checkpoints():
    train, held = small_data()
    _, rep = run_wmss(init_params(0), train, held, SMALL)
    assert len(rep.checkpoints) == SMALL.outer_iterations + 1
    assert len(rep.epochs) == (SMALL.outer_iterations + 1) * SMALL.epochs_per_phase
    assert [e.iteration for e in rep.epochs] == [0, 1, 2]
    assert rep.epochs[0].method == "sft" and rep.epochs[-1].method == "wmss"
    assert rep.weak_forward_positions > 0


def test_lambda_one_with_degenerate_curriculum_is_sft(monkeypatch):
    monkeypatch.setattr(trainer, "curriculum_weights", uniform_curriculum)
    cfg = replace(SMALL, lam=1.0)
    train, held = small_data(cfg)
    a, _ = run_wmss(init_params(0), train, held, cfg)
    b, _ = run_baseline(init_params(0), train, held, replace(cfg, method="sft"))
    assert a.equal(b)


def test_lambda_one_identical_samples_is_sft():
    # identical sequences give identical entropies, so the curriculum is exactly uniform
    cfg = replace(SMALL, lam=1.0, curriculum=CurriculumConfig(1.0, 0.0, 0.0))
    seq = gen_corpus("ambiguous-grammar", 0, 1)[0].tokens
    train = [TokenSequence(list(seq), i) for i in range(40)]
    held = gen_corpus("ambiguous-grammar", 1, 10)
    a, _ = run_wmss(init_params(0), train, held, cfg)
    b, _ = run_baseline(init_params(0), train, held, replace(cfg, method="sft"))
    assert a.equal(b)


def test_neftune_scale_zero_is_sft():
    train, held = small_data()
    a, _ = run_baseline(init_params(0), train, held, replace(SMALL, method="neftune", method_noise_scale=0.0))
    b, _ = run_baseline(init_params(0), train, held, replace(SMALL, method="sft"))
    assert a.equal(b)


def test_noisy_baselines_differ_from_sft():
    train, held = small_data()
    base, _ = run_baseline(init_params(0), train, held, replace(SMALL, method="sft"))
    for m in ("neftune", "undial"):
        other, rep = run_baseline(init_params(0), train, held, replace(SMALL, method=m))
        assert not other.equal(base)
        assert rep.epochs[-1].method == m
    with pytest.raises(InvalidInputError):
        run_baseline(init_params(0), train, held, replace(SMALL, method="wmss"))


def test_sft_and_wmss_reports_differ():
    _, rs = run(replace(SMALL, method="sft"))
    _, rw = run(SMALL)
    assert rs.rows() != rw.rows()


def test_runs_are_deterministic():
    a, ra = run(SMALL)
    b, rb = run(SMALL)
    assert a.equal(b) and ra.rows() == rb.rows()


def test_report_csv(tmp_path):
    _, rep = run(SMALL)
    write_report(rep, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(trainer.REPORT_COLUMNS)
    assert len(lines) == 1 + len(rep.epochs)
    assert lines[-1].split(",")[2] == "wmss"


def test_training_reduces_loss():
    _, rep = run(replace(SMALL, method="sft", epochs_per_phase=3))
    assert rep.epochs[-1].eval_loss < rep.epochs[0].eval_loss


def test_negative_mass_in_vivo_holds_under_premise():
    train, held = small_data()
    m, rep = run_wmss(init_params(0), train, held, SMALL)
    n_prem, n_tot, neg_mix, neg_s = negative_mass_in_vivo(rep.final_pair, held, SMALL.lam)
    assert 0 <= n_prem <= n_tot
    if n_prem:
        assert neg_mix >= neg_s - 1e-12
