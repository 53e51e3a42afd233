"""Dev scratch: one-seed pilot of the desk benchmark directions."""
import os, sys, time, tempfile
import numpy as np

sys.path.insert(0, "src")
from partialpde import datagen, training, evaluate
from partialpde.training import TrainConfig, run_schedule
from partialpde.models import EncoderConfig, TransitionConfig, init_params

root = "/tmp/pilot3"
os.makedirs(root, exist_ok=True)
dsdir = os.path.join(root, "ds")
if not os.path.exists(os.path.join(dsdir, "manifest.toml")):
    gen = datagen.GenConfig(system="burgers", ny=16, nx=16, obs_gap=4, n_window=2,
                            dt=0.01, T=0.06, test_T=0.12, n_train=50, n_unlabeled=50, n_test=20,
                            master_seed=7)
    t0 = time.time()
    datagen.build_dataset(gen, dsdir)
    print("datagen", round(time.time() - t0, 1), "s", flush=True)

ds = datagen.load_dataset(dsdir)
man = ds.manifest

def run(tag, gamma, seed, no_ft=False):
    t0 = time.time()
    cfg = TrainConfig(pde_weight=gamma, epochs=200, q=50, m1=5, m2=5, seed=seed,
                      no_finetune=no_ft, dtype="f32", lr=1e-3)
    enc = EncoderConfig(n_frames=2, channels=1, coarse_shape=(4, 4), out_shape=(16, 16),
                        width=16, residual_blocks=4, dropout=0.1)
    tr = TransitionConfig(channels=1, grid_shape=(16, 16), layers=4, modes=6, width=16)
    state = init_params(enc, tr, seed=seed, dtype="f32")
    state, hist = run_schedule(state, ds, cfg)
    test_ld = evaluate.single_step_error(state, ds)
    eps = evaluate.encoder_reconstruction(state, ds)
    print(f"{tag}: test L_D {test_ld:.4f} eps {eps:.4f}", flush=True)
    roll = evaluate.rollout_errors(state, ds, 10)
    print(f"{tag}: test L_D {test_ld:.4f} eps {eps:.4f} "
          f"roll1-5 {roll[:5].mean():.4f} roll6-10 {roll[5:].mean():.4f} "
          f"({round(time.time()-t0,1)}s)", flush=True)
    return test_ld, eps, roll

eps_interp = {m: evaluate.interp_reconstruction(m, ds) for m in ("nearest", "bilinear", "bicubic")}
print("interp eps:", {k: round(v, 4) for k, v in eps_interp.items()}, flush=True)

run("gamma=0.1 s0", 0.1, 0)
run("gamma=0   s0", 0.0, 0)
run("gamma=0.1 noFT s0", 0.1, 0, no_ft=True)
run("gamma=0.1 s1", 0.1, 1)
run("gamma=0   s1", 0.0, 1)
