"""Dev scratch: harden the desk task until the physics-loss direction binds."""
import os, sys, time
import numpy as np

sys.path.insert(0, "src")
from partialpde import datagen, evaluate
from partialpde.training import TrainConfig, TrainData, make_schedule, run_scheduled, eval_data_loss
from partialpde.models import EncoderConfig, TransitionConfig, init_params

def make_ds(root, T, ell, std):
    if not os.path.exists(os.path.join(root, "manifest.toml")):
        gen = datagen.GenConfig(system="burgers", ny=16, nx=16, obs_gap=4,
                                n_window=2, dt=0.01, T=T, test_T=0.12,
                                n_train=50, n_unlabeled=50, n_test=20,
                                master_seed=7, ic_length_scale=ell, ic_std=std)
        datagen.build_dataset(gen, root)
    return datagen.load_dataset(root)

def run(tag, ds, gamma, seed, no_ft=False):
    t0 = time.time()
    cfg = TrainConfig(pde_weight=gamma, epochs=200, q=50, m1=5, m2=5, seed=seed,
                      no_finetune=no_ft, dtype="f32", lr=1e-3)
    enc = EncoderConfig(n_frames=2, channels=1, coarse_shape=(4, 4),
                        out_shape=(16, 16), width=16, residual_blocks=4, dropout=0.1)
    tr = TransitionConfig(channels=1, grid_shape=(16, 16), layers=4, modes=6, width=16)
    state = init_params(enc, tr, seed=seed, dtype="f32")
    sched = make_schedule(state, ds, cfg)
    run_scheduled(sched)
    ld = evaluate.single_step_error(state, ds)
    train_ld = eval_data_loss(state, sched.data.train_pairs, sched.data)
    eps = evaluate.encoder_reconstruction(state, ds)
    roll = evaluate.rollout_errors(state, ds, 10)
    print(f"{tag}: test {ld:.4f} train {train_ld:.4f} eps {eps:.3f} "
          f"r1-5 {roll[:5].mean():.3f} r6-10 {roll[5:].mean():.3f} "
          f"({round(time.time()-t0)}s)", flush=True)

for name, T, ell, std in [("V4", 0.03, 0.20, 0.70), ("V5", 0.06, 0.20, 0.70),
                          ("V6", 0.06, 0.16, 0.70)]:
    ds = make_ds(f"/tmp/p8_{name}", T, ell, std)
    bil = evaluate.interp_reconstruction("bilinear", ds)
    print(f"== {name} T={T} ell={ell} std={std}  eps_bilinear={bil:.3f}", flush=True)
    run(f"{name} g0.1", ds, 0.1, 0)
    run(f"{name} g0  ", ds, 0.0, 0)
    run(f"{name} noft", ds, 0.1, 0, no_ft=True)
