import numpy as np
import pytest
from conftest import small_config

from dpla import losses, trainer
from dpla.adjust import AdjustConfig
from dpla.model import PARAM_NAMES, forward, init_model
from dpla.trainer import (
    RunState,
    TrainingError,
    batch_loss,
    make_data,
    pair_targets,
    refresh_adjustment,
    run_experiment,
    train_epoch,
)


def fresh_state(cfg, splits):
    return RunState(init_model(splits.input_dim, cfg.hidden_dim, cfg.embed_dim, splits.c_t, cfg.seed))


def test_pair_targets():
    z = np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [1.0, 0.02]])
    pairs, s = pair_targets([0, 1], 2, z, 0.95)
    # labeled pair (0,1) differs -> negative; unlabeled pairs only when similar
    assert pairs.tolist() == [[0, 1], [0, 3], [1, 3]]
    assert s.tolist() == [0.0, 1.0, 1.0]


def test_zero_lr_leaves_parameters_and_matches_eval_pass(small_cfg):
    cfg = small_config(lr=0.0)
    splits, _, _ = make_data(cfg)
    state = fresh_state(cfg, splits)
    before = state.model.flat_params()
    stats = train_epoch(state, splits, cfg)
    np.testing.assert_array_equal(state.model.flat_params(), before)

    # recompute the same batches without any optimizer
    probe = fresh_state(cfg, splits)
    refresh_adjustment(probe, splits, cfg)
    rng = np.random.default_rng([cfg.seed, 0, 17])
    perm_u = rng.permutation(splits.unlabeled_x.shape[0])
    perm_l = rng.permutation(splits.labeled_x.shape[0])
    steps = int(np.ceil(perm_u.size / cfg.batch_size))
    bl = int(np.ceil(perm_l.size / steps))
    totals = []
    for s in range(steps):
        iu = perm_u[s * cfg.batch_size:(s + 1) * cfg.batch_size]
        il = perm_l[s * bl:s * bl + bl]
        res = batch_loss(probe.model, splits.labeled_x[il], splits.labeled_y[il], splits.unlabeled_x[iu],
                         probe.omega, probe.weights, cfg.adjust)
        totals.append(res.total.value)
    assert stats["total"] == pytest.approx(np.mean(totals), abs=1e-12)


def test_baseline_isolated_until_first_update():
    dpla_cfg = small_config()
    base_cfg = small_config(baseline_mode=True)
    splits, _, _ = make_data(dpla_cfg)
    a, b = fresh_state(dpla_cfg, splits), fresh_state(base_cfg, splits)
    x = splits.unlabeled_x[:32]
    assert forward(a.model, x)[1].tobytes() == forward(b.model, x)[1].tobytes()
    train_epoch(a, splits, dpla_cfg)
    train_epoch(b, splits, base_cfg)
    assert not np.allclose(forward(a.model, x)[1], forward(b.model, x)[1])
    np.testing.assert_array_equal(b.omega, 1.0)
    np.testing.assert_array_equal(b.weights, 1.0)


def test_b_ce_finite_and_nonnegative():
    cfg = small_config(epochs=1, seed=3)
    splits, _, _ = make_data(cfg)
    stats = train_epoch(fresh_state(cfg, splits), splits, cfg)
    assert np.isfinite(stats["b_ce"]) and stats["b_ce"] >= 0
    assert set(stats) == {"pair", "ce", "b_ce", "reg", "total"}


def test_frequency_refreshed_once_per_epoch(monkeypatch):
    cfg = small_config(epochs=3)
    calls = []
    original = trainer.refresh_adjustment

    def spy(state, splits, c):
        calls.append(state.epoch)
        original(state, splits, c)

    monkeypatch.setattr(trainer, "refresh_adjustment", spy)
    run_experiment(cfg)
    assert calls == [0, 1, 2]


def test_adjustment_uses_labeled_counts_and_predictions():
    cfg = small_config()
    splits, _, _ = make_data(cfg)
    state = fresh_state(cfg, splits)
    refresh_adjustment(state, splits, cfg)
    np.testing.assert_array_equal(state.freq.labeled_counts, [20, 9, 4])
    assert state.freq.ratios.sum() == pytest.approx(1.0)
    assert np.all(np.diff(state.omega) < 0)


def test_run_experiment_reports_and_determinism():
    cfg = small_config(epochs=3)
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert len(a.history) == 3
    assert [r.epoch for r in a.history] == [1, 2, 3]
    assert [r.to_record() for r in a.history] == [r.to_record() for r in b.history]
    assert a.loss_history == b.loss_history


def test_non_finite_loss_aborts(monkeypatch):
    cfg = small_config()
    splits, _, _ = make_data(cfg)
    monkeypatch.setattr(losses, "entropy_reg", lambda p: losses.LossValue(float("nan"), np.zeros_like(p)))
    with pytest.raises(TrainingError, match="reg"):
        train_epoch(fresh_state(cfg, splits), splits, cfg)


def test_sgd_optimizer_runs():
    r = run_experiment(small_config(optimizer="sgd", lr=0.05, epochs=1))
    assert len(r.history) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(epochs=0)
    with pytest.raises(ValueError):
        small_config(batch_size=0)


def test_eq1_degeneration_on_batch():
    cfg = small_config()
    splits, _, _ = make_data(cfg)
    model = init_model(2, 16, 8, 6, seed=1)
    adj = AdjustConfig(rho=0.0, lambda_1=1.0, lambda_2=0.0)
    res = batch_loss(model, splits.labeled_x[:8], splits.labeled_y[:8], splits.unlabeled_x[:8],
                     np.ones(3), np.ones(6), adj)
    c = res.components
    assert abs(res.total.value - (c["pair"].value + c["ce"].value + c["reg"].value)) <= 1e-12
