import numpy as np
import pytest

from partialpde import autodiff as ad
from partialpde import datagen
from partialpde.errors import ContractError
from partialpde.models import EncoderConfig, TransitionConfig, init_params
from partialpde.training import (AdamW, Schedule, TrainConfig, TrainData,
                                 _bundle_from_arrays, _relative_data_loss,
                                 eval_data_loss, eval_physics_loss, run_schedule,
                                 training_system)


@pytest.fixture(scope="module")
def tiny_ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfg = datagen.GenConfig(system="burgers", ny=16, nx=16, obs_gap=4, n_window=2,
                            dt=0.01, T=0.05, n_train=4, n_unlabeled=3, n_test=2,
                            master_seed=11)
    datagen.build_dataset(cfg, root)
    return datagen.load_dataset(root)


def _state(seed=0, dtype="f32"):
    enc = EncoderConfig(n_frames=2, channels=1, coarse_shape=(4, 4), out_shape=(16, 16),
                        width=8, residual_blocks=2, dropout=0.1)
    tr = TransitionConfig(channels=1, grid_shape=(16, 16), layers=2, modes=4, width=8)
    return init_params(enc, tr, seed=seed, dtype=dtype)


def _cfg(**kw):
    base = dict(epochs=2, q=2, m1=1, m2=1, seed=0, dtype="f32", batch_size=8,
                patience=50)
    base.update(kw)
    return TrainConfig(**base)


def test_relative_data_loss_values():
    label = np.ones((3, 8))
    norm = np.linalg.norm(label, axis=1)
    zero_pred = ad.constant(np.zeros((3, 8)))
    assert abs(float(_relative_data_loss(zero_pred, label, norm).value) - 1.0) <= 1e-12
    perfect = ad.constant(label.copy())
    assert float(_relative_data_loss(perfect, label, norm).value) == 0.0


def test_loss_bundle_additivity(tiny_ds):
    cfg = _cfg(pde_weight=0.1)
    data = TrainData(tiny_ds, cfg)
    state = _state()
    system = training_system("burgers", tiny_ds.manifest.system_params, (16, 16), cfg)
    rng = np.random.default_rng(0)
    idx = np.arange(8)
    l_pi, b = _bundle_from_arrays(state, data.train_pairs, idx, data, system, cfg,
                                  True, rng)
    assert abs(b.l_pi - (b.l_d + 0.1 * b.l_p_theta + 0.1 * b.l_p_phi)) <= 1e-12
    assert min(b.l_d, b.l_p_theta, b.l_p_phi) >= 0


def test_gamma_zero_reports_physics_without_weight(tiny_ds):
    cfg = _cfg(pde_weight=0.0)
    data = TrainData(tiny_ds, cfg)
    state = _state()
    system = training_system("burgers", tiny_ds.manifest.system_params, (16, 16), cfg)
    l_pi, b = _bundle_from_arrays(state, data.train_pairs, np.arange(8), data, system,
                                  cfg, True, np.random.default_rng(0))
    assert b.l_p_theta > 0 and b.l_p_phi > 0          # reported
    assert abs(b.l_pi - b.l_d) <= 1e-15               # but unweighted
    ad.backward(l_pi)
    assert all(p.grad is None or np.all(np.isfinite(p.grad))
               for p in state.params.values())


def test_adamw_zero_grad_is_identity_without_decay():
    p = ad.parameter(np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    opt = AdamW(lr=0.1, weight_decay=0.0)
    opt.step({"p": p})
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adamw_decay_shrinks_monotonically():
    p = ad.parameter(np.array([1.0, -2.0]))
    opt = AdamW(lr=0.1, weight_decay=0.1)
    mags = [np.abs(p.value).copy()]
    for _ in range(5):
        p.grad = np.zeros(2)
        opt.step({"p": p})
        mags.append(np.abs(p.value).copy())
    for a, b in zip(mags, mags[1:]):
        assert np.all(b < a)


def test_adamw_quadratic_bowl():
    rng = np.random.default_rng(0)
    x = ad.parameter(rng.standard_normal(16))
    x.value /= np.linalg.norm(x.value)
    opt = AdamW(lr=1e-2, weight_decay=0.0)
    for _ in range(500):
        ad.zero_grads([x])
        ad.backward(ad.sumt(ad.square(x)))
        opt.step({"x": x})
    assert np.linalg.norm(x.value) <= 1e-3


def test_adamw_skips_nonfinite_gradients():
    p = ad.parameter(np.ones(2))
    p.grad = np.array([np.nan, 0.0])
    opt = AdamW(lr=0.1)
    opt.step({"p": p})
    np.testing.assert_array_equal(p.value, np.ones(2))
    assert opt.skipped_steps == 1


def test_smoke_training_loss_decreases(tiny_ds):
    drops = 0
    total = 0
    for seed in range(3):
        cfg = _cfg(epochs=5, q=10, seed=seed)
        state = _state(seed)
        state, hist = run_schedule(state, tiny_ds, cfg)
        base_rows = [r for r in hist if r.stage == "base"]
        ld = [r.l_d + 0.1 * (r.l_p_theta + r.l_p_phi) for r in base_rows]
        total += len(ld) - 1
        drops += sum(1 for a, b in zip(ld, ld[1:]) if b < a)
    assert drops >= int(0.8 * total) - 1


def test_run_schedule_deterministic(tiny_ds):
    outs = []
    for _ in range(2):
        state = _state(3)
        state, _ = run_schedule(state, tiny_ds, _cfg(epochs=3, q=2))
        outs.append({k: v.value.copy() for k, v in state.params.items()})
    for k in outs[0]:
        np.testing.assert_array_equal(outs[0][k], outs[1][k])


def test_no_finetune_equals_pure_base(tiny_ds):
    s1 = _state(4)
    run_schedule(s1, tiny_ds, _cfg(epochs=4, q=2, no_finetune=True))
    s2 = _state(4)
    # epoch budget below q -> no fine-tuning rounds either
    run_schedule(s2, tiny_ds, _cfg(epochs=4, q=5))
    for k in s1.params:
        np.testing.assert_array_equal(s1.params[k].value, s2.params[k].value)


def test_budget_below_q_means_no_ft_rows(tiny_ds):
    state = _state(5)
    _, hist = run_schedule(state, tiny_ds, _cfg(epochs=3, q=10))
    assert all(r.stage == "base" for r in hist)


def test_finetune_transition_freezes_theta(tiny_ds):
    cfg = _cfg()
    data = TrainData(tiny_ds, cfg)
    state = _state(6)
    system = training_system("burgers", tiny_ds.manifest.system_params, (16, 16), cfg)
    sched = Schedule(state, data, cfg, system)
    theta_before = {k: v.value.copy() for k, v in state.theta().items()}
    phi_before = {k: v.value.copy() for k, v in state.phi().items()}
    lp_before = eval_physics_loss(state, data.unlabeled, data, system)
    sched.finetune_transition(2)
    lp_after = eval_physics_loss(state, data.unlabeled, data, system)
    for k, v in state.theta().items():
        np.testing.assert_array_equal(v.value, theta_before[k])
    changed = any(np.abs(state.phi()[k].value - phi_before[k]).max() > 0
                  for k in phi_before)
    assert changed
    assert lp_after <= lp_before


def test_finetune_encoder_freezes_phi(tiny_ds):
    cfg = _cfg()
    data = TrainData(tiny_ds, cfg)
    state = _state(7)
    system = training_system("burgers", tiny_ds.manifest.system_params, (16, 16), cfg)
    sched = Schedule(state, data, cfg, system)
    phi_before = {k: v.value.copy() for k, v in state.phi().items()}
    ld_before = eval_data_loss(state, data.train_pairs, data)
    sched.finetune_encoder(2)
    ld_after = eval_data_loss(state, data.train_pairs, data)
    for k, v in state.phi().items():
        np.testing.assert_array_equal(v.value, phi_before[k])
    assert ld_after <= ld_before


def test_finetune_round_order_is_fixed(tiny_ds):
    cfg = _cfg()
    data = TrainData(tiny_ds, cfg)
    state = _state(8)
    system = training_system("burgers", tiny_ds.manifest.system_params, (16, 16), cfg)
    sched = Schedule(state, data, cfg, system)
    with pytest.raises(ContractError):
        sched.finetune_round(order=("encoder", "transition"))


def test_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(pde_weight=-1.0)
    with pytest.raises(ContractError):
        TrainConfig(q=0)
    cfg = TrainConfig()
    assert (cfg.q, cfg.m1, cfg.m2) == (100, 10, 10)
    assert cfg.pde_weight == 0.1


def test_checkpoints_written_per_block(tiny_ds, tmp_path):
    state = _state(9)
    run_schedule(state, tiny_ds, _cfg(epochs=4, q=2), out_dir=tmp_path)
    assert (tmp_path / "block_001" / "checkpoint.toml").exists()
    assert (tmp_path / "block_002" / "checkpoint.toml").exists()
    assert (tmp_path / "final" / "checkpoint.toml").exists()
    assert (tmp_path / "history.csv").exists()


def test_plateau_scheduler_halves_on_stall(tiny_ds):
    cfg = _cfg(patience=2, sched_factor=0.5)
    data = TrainData(tiny_ds, cfg)
    state = _state(11)
    system = training_system("burgers", tiny_ds.manifest.system_params, (16, 16), cfg)
    sched = Schedule(state, data, cfg, system)
    sched._plateau_update(1.0)      # initial best
    for _ in range(2):              # no improvement for `patience` epochs
        sched._plateau_update(1.0)
    assert sched.lr_scale == 0.5
    sched._plateau_update(0.5)      # improvement resets the counter
    sched._plateau_update(0.6)
    assert sched.lr_scale == 0.5


def test_gamma_zero_skips_finetuning_rounds(tiny_ds):
    state = _state(12)
    _, hist = run_schedule(state, tiny_ds, _cfg(epochs=4, q=2, pde_weight=0.0))
    assert all(r.stage == "base" for r in hist)
