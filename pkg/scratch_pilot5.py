"""Dev scratch: final desk-config checks (n=2, zero-init head, skip)."""
import os, sys, time
import numpy as np

sys.path.insert(0, "src")
from partialpde import datagen, evaluate
from partialpde.training import TrainConfig, make_schedule, run_scheduled
from partialpde.models import EncoderConfig, TransitionConfig, init_params

def make_ds(root, noise=0.0):
    if not os.path.exists(os.path.join(root, "manifest.toml")):
        gen = datagen.GenConfig(system="burgers", ny=16, nx=16, obs_gap=4,
                                n_window=2, dt=0.01, T=0.06, test_T=0.12,
                                n_train=50, n_unlabeled=50, n_test=20,
                                master_seed=7, noise_pct=noise)
        datagen.build_dataset(gen, root)
    return datagen.load_dataset(root)

def run(tag, ds, gamma, seed, no_ft=False, perturb=0.0):
    t0 = time.time()
    cfg = TrainConfig(pde_weight=gamma, epochs=200, q=50, m1=5, m2=5, seed=seed,
                      no_finetune=no_ft, dtype="f32", lr=1e-3, perturb_std=perturb)
    enc = EncoderConfig(n_frames=2, channels=1, coarse_shape=(4, 4),
                        out_shape=(16, 16), width=16, residual_blocks=4, dropout=0.1)
    tr = TransitionConfig(channels=1, grid_shape=(16, 16), layers=4, modes=6, width=16)
    state = init_params(enc, tr, seed=seed, dtype="f32")
    sched = make_schedule(state, ds, cfg)
    run_scheduled(sched)
    ld = evaluate.single_step_error(state, ds)
    eps = evaluate.encoder_reconstruction(state, ds)
    roll = evaluate.rollout_errors(state, ds, 10)
    checks = " ".join(f"{a:.2e}->{b:.2e}" for a, b in sched.phi_ft_checks)
    print(f"{tag}: L_D {ld:.4f} eps {eps:.4f} r1-5 {roll[:5].mean():.3f} "
          f"r6-10 {roll[5:].mean():.3f} ftphi[{checks}] ({round(time.time()-t0)}s)",
          flush=True)

ds = make_ds("/tmp/p5_clean")
dsn = make_ds("/tmp/p5_noisy", noise=0.1)
print("interp:", {m: round(evaluate.interp_reconstruction(m, ds), 4)
                  for m in ("nearest", "bilinear", "bicubic")}, flush=True)
run("g0.1 s0      ", ds, 0.1, 0)
run("g0   s0      ", ds, 0.0, 0)
run("g0.1 noft s0 ", ds, 0.1, 0, no_ft=True)
run("g0.1 noisy s0", dsn, 0.1, 0)
run("g0   noisy s0", dsn, 0.0, 0)
run("g0.1 pert s0 ", ds, 0.1, 0, perturb=1.0)
run("g0.1 s1      ", ds, 0.1, 1)
run("g0   s1      ", ds, 0.0, 1)
