"""Dev scratch: variant sweep for the desk benchmark design."""
import os, sys, time
import numpy as np

sys.path.insert(0, "src")
from partialpde import datagen, evaluate, training
from partialpde.training import TrainConfig, run_schedule
from partialpde.models import EncoderConfig, TransitionConfig, init_params

def make_ds(root, n_window, T):
    if not os.path.exists(os.path.join(root, "manifest.toml")):
        gen = datagen.GenConfig(system="burgers", ny=16, nx=16, obs_gap=4,
                                n_window=n_window, dt=0.01, T=T, test_T=0.13 if n_window==4 else 0.12,
                                n_train=50, n_unlabeled=50, n_test=20, master_seed=7)
        datagen.build_dataset(gen, root)
    return datagen.load_dataset(root)

def run(tag, ds, gamma, seed, no_ft=False, patience=50):
    t0 = time.time()
    man = ds.manifest
    cfg = TrainConfig(pde_weight=gamma, epochs=200, q=50, m1=5, m2=5, seed=seed,
                      no_finetune=no_ft, dtype="f32", lr=1e-3, patience=patience)
    enc = EncoderConfig(n_frames=man.n_window, channels=1, coarse_shape=(4, 4),
                        out_shape=(16, 16), width=16, residual_blocks=4, dropout=0.1)
    tr = TransitionConfig(channels=1, grid_shape=(16, 16), layers=4, modes=6, width=16)
    state = init_params(enc, tr, seed=seed, dtype="f32")
    state, hist = run_schedule(state, ds, cfg)
    test_ld = evaluate.single_step_error(state, ds)
    eps = evaluate.encoder_reconstruction(state, ds)
    roll = evaluate.rollout_errors(state, ds, 10)
    print(f"{tag}: L_D {test_ld:.4f} eps {eps:.4f} "
          f"r1-5 {roll[:5].mean():.3f} r6-10 {roll[5:].mean():.3f} ({round(time.time()-t0)}s)",
          flush=True)

ds2 = make_ds("/tmp/p4_n2", 2, 0.06)
ds4 = make_ds("/tmp/p4_n4", 4, 0.08)
print("interp eps n4 ds:", {m: round(evaluate.interp_reconstruction(m, ds4), 4)
                            for m in ("nearest", "bilinear", "bicubic")}, flush=True)
run("A n2 g0.1", ds2, 0.1, 0)
run("B n4 g0.1", ds4, 0.1, 0)
run("C n4 g0  ", ds4, 0.0, 0)
run("D n4 g0.1 pat20", ds4, 0.1, 0, patience=20)
