"""Acceptance gate: one test per criterion, each printing a PASS line.

Criteria 7-9 and 11 share a benchmark suite of trainings on a small Burgers
setup (50 labeled / 50 unlabeled / 20 test trajectories, 16x16 fine grid,
4x4 observation, 200 base epochs with q=50, m1=m2=5, three seeds per
configuration).  Those runs take a few minutes each on one CPU core; set
RPLPO_ACCEPT_CACHE=<dir> to reuse results across invocations.
"""

import hashlib
import json
import os
import time

import numpy as np
import pytest

from partialpde import autodiff as ad
from partialpde import datagen, evaluate, fd, training
from partialpde.cli import main as cli_main
from partialpde.datagen import GenConfig, GRFConfig, build_dataset, load_dataset, sample_grf
from partialpde.grid import ObservationSpec, observe
from partialpde.models import (EncoderConfig, TransitionConfig, encode, init_params,
                               interp_encode, observe_graph, transition)
from partialpde.systems import make_system
from partialpde.training import TrainConfig, make_schedule, run_scheduled

SEEDS = (0, 1, 2)


def _report(cid: str, detail: str) -> None:
    print(f"[PASS] {cid}: {detail}")


# ---------------------------------------------------------------- criterion 1

def test_c01_stencil_convergence_order():
    t0 = time.time()
    slopes = []
    for order in (1, 2):
        errs = []
        for n in (32, 64, 128):
            x = np.arange(n) / n
            f = np.sin(2 * np.pi * x)[None, None, :].repeat(8, axis=1)
            d = fd.central_diff(f, -1, order, 1.0 / n).value
            exact = (2 * np.pi * np.cos(2 * np.pi * x) if order == 1
                     else -(2 * np.pi) ** 2 * np.sin(2 * np.pi * x))
            errs.append(np.abs(d - exact[None, None, :]).max())
        slopes += [np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])]
    elapsed = time.time() - t0
    assert all(3.7 <= s <= 4.3 for s in slopes), slopes
    assert elapsed < 5.0
    _report("C1", f"stencil slopes {[f'{s:.2f}' for s in slopes]} in [3.7,4.3], "
                  f"{elapsed:.2f}s")


# ---------------------------------------------------------------- criterion 2

def test_c02_rk4_global_order():
    t0 = time.time()

    class Decay:
        id = "decay"
        channels = 1

        def rhs(self, psi, dx, dy):
            return -1.0 * psi

    def global_err(w):
        s = np.ones((1, 5, 5))
        ctx = fd.StepContext(w=w, dx=1.0, dy=1.0, system=Decay())
        for _ in range(int(round(1.0 / w))):
            s = fd.rk4_step(ctx, s)
        return abs(ad.value_of(s)[0, 0, 0] - np.exp(-1.0))

    slope = np.log2(global_err(0.02) / global_err(0.01))
    elapsed = time.time() - t0
    assert 3.8 <= slope <= 4.2, slope
    assert elapsed < 5.0
    _report("C2", f"RK4 global-error slope {slope:.3f} in [3.8,4.2], {elapsed:.2f}s")


# ---------------------------------------------------------------- criterion 3

def test_c03_scheme_self_consistency_all_systems():
    t0 = time.time()
    worsts = {}
    for sid, n in [("burgers", 32), ("wave", 41), ("nse", 32), ("lswe", 32),
                   ("nswe", 32)]:
        system = make_system(sid)
        ic = datagen.initial_state(system, (n, n), seed=3, ic=datagen.IcConfig())
        traj = datagen.generate_trajectory(system, ic, T=1.0, dt=0.01)
        ctx = fd.StepContext(w=0.01, dx=1.0 / n, dy=1.0 / n, system=system)
        worst = 0.0
        for k in range(traj.frames.shape[0] - 1):
            r = fd.residual_F(ctx, traj.frames[k], traj.frames[k + 1]).value
            worst = max(worst, float(np.abs(r).max()))
        worsts[sid] = worst
    elapsed = time.time() - t0
    assert all(w <= 1e-10 for w in worsts.values()), worsts
    assert elapsed < 120.0
    _report("C3", "max|residual| per system "
                  + " ".join(f"{k}={v:.1e}" for k, v in worsts.items())
                  + f" (<=1e-10), {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 4

def test_c04_gradient_fidelity_full_model():
    t0 = time.time()
    enc = EncoderConfig(n_frames=2, channels=1, coarse_shape=(4, 4),
                        out_shape=(16, 16), width=16, residual_blocks=4, dropout=0.1)
    tr = TransitionConfig(channels=1, grid_shape=(16, 16), layers=4, modes=6, width=16)
    state = init_params(enc, tr, seed=0, dtype="f64")
    spec = ObservationSpec.regular(4, (16, 16))
    system = make_system("burgers")
    ctx = fd.StepContext(w=0.01, dx=1 / 16, dy=1 / 16, system=system)

    system_gen = make_system("burgers")
    ic = datagen.initial_state(system_gen, (16, 16), seed=5, ic=datagen.IcConfig())
    traj = datagen.generate_trajectory(system_gen, ic, T=0.03, dt=0.01)
    obs = observe(traj.frames, spec)
    stack_t = np.concatenate([obs[0], obs[1]])[None]
    stack_tau = np.concatenate([obs[1], obs[2]])[None]
    label = obs[2].reshape(1, -1)
    label_norm = np.linalg.norm(label, axis=1)

    params = list(state.params.values())

    def graph():
        h_all = encode(state, np.concatenate([stack_t, stack_tau]),
                       np.concatenate([obs[1][None], obs[2][None]]), spec)
        h_t = ad.slice_axis(h_all, 0, 0, 1)
        h_tau_theta = ad.slice_axis(h_all, 0, 1, 2)
        h_tau_phi = transition(state, h_t)
        return h_t, h_tau_theta, h_tau_phi

    def f_ld():
        _, _, h_tau_phi = graph()
        pred = ad.reshape(observe_graph(h_tau_phi, spec), (1, -1))
        return training._relative_data_loss(pred, label, label_norm)

    def f_lp_theta():
        h_t, h_tau_theta, _ = graph()
        return fd.pde_loss(fd.residual_F(ctx, h_t, h_tau_theta))

    def f_lp_phi():
        h_t, _, h_tau_phi = graph()
        return fd.pde_loss(fd.residual_F(ctx, h_t, h_tau_phi))

    errs = {}
    for name, f in (("L_D", f_ld), ("L_P_theta", f_lp_theta), ("L_P_phi", f_lp_phi)):
        errs[name] = ad.grad_check(f, params, eps=1e-6, max_probes=6, seed=11)
    elapsed = time.time() - t0
    assert all(e <= 1e-5 for e in errs.values()), errs
    assert elapsed < 120.0
    _report("C4", "grad_check max rel err "
                  + " ".join(f"{k}={v:.2e}" for k, v in errs.items())
                  + f" (<=1e-5), {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 5

def test_c05_replacement_exactness_and_blocked_adjoint():
    rng = np.random.default_rng(0)
    spec = ObservationSpec.regular(4, (16, 16))
    enc = EncoderConfig(n_frames=2, channels=1, coarse_shape=(4, 4),
                        out_shape=(16, 16), width=8, residual_blocks=2, dropout=0.0)
    tr = TransitionConfig(channels=1, grid_shape=(16, 16), layers=1, modes=4, width=8)
    cases = 0
    for model_seed in range(50):
        state = init_params(enc, tr, seed=model_seed, dtype="f64").frozen()
        stack = rng.standard_normal((20, 2, 4, 4))
        cur = stack[:, 1:2]
        h = encode(state, stack, cur, spec)
        got = observe(h.value, spec)
        np.testing.assert_array_equal(got, cur)
        cases += stack.shape[0]
    assert cases >= 1000

    # adjoint through replaced pixels is zero
    state = init_params(enc, tr, seed=0, dtype="f64")
    stack = rng.standard_normal((4, 2, 4, 4))
    rows, cols = spec.coords()
    h = encode(state, stack, stack[:, 1:2], spec)
    loss = ad.sumt(ad.square(ad.gather_points(h, rows, cols)))
    ad.backward(loss)
    leaks = [name for name, p in state.theta().items()
             if p.grad is not None and np.abs(p.grad).max() > 0]
    assert not leaks, leaks
    _report("C5", f"{cases} windows reproduce observations bit-exactly; "
                  "zero adjoint through replaced pixels")


# ---------------------------------------------------------------- criterion 6

def test_c06_interpolation_ordering():
    t0 = time.time()
    spec = ObservationSpec.regular(5, (32, 32))
    eps = {m: [] for m in ("nearest", "bilinear", "bicubic")}
    for seed in range(25):
        field = sample_grf((32, 32), GRFConfig(0.0, 1.0, 0.25, seed))[None]
        coarse = observe(field, spec)
        for m in eps:
            rec = interp_encode(m, coarse, spec, (32, 32))
            eps[m].append(evaluate.reconstruction_error(rec, field))
    means = {m: float(np.mean(v)) for m, v in eps.items()}
    elapsed = time.time() - t0
    assert means["bicubic"] <= means["bilinear"] <= means["nearest"], means
    assert elapsed < 60.0
    _report("C6", "mean eps " + " ".join(f"{k}={v:.3f}" for k, v in means.items())
                  + " (bicubic <= bilinear <= nearest)")


# ------------------------------------------------------- desk benchmark suite

DESK = dict(system="burgers", ny=16, nx=16, obs_gap=4, n_window=2, dt=0.01,
            T=0.06, test_T=0.12, n_train=50, n_unlabeled=50, n_test=20,
            master_seed=7)
DESK_TRAIN = dict(epochs=200, q=50, m1=5, m2=5, lr=1e-3, batch_size=32,
                  dtype="f32", patience=50)
NOISE_PCT = 0.1
PERTURB_STD = 1.0


def _cache_dir():
    path = os.environ.get("RPLPO_ACCEPT_CACHE")
    return path or None


def _run_key(kind: str, gamma: float, seed: int, no_ft: bool) -> str:
    blob = json.dumps([DESK, DESK_TRAIN, kind, gamma, seed, no_ft, NOISE_PCT,
                       PERTURB_STD, 3], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _train_and_measure(ds, gamma: float, seed: int, no_ft: bool, perturb: float):
    cfg = TrainConfig(pde_weight=gamma, seed=seed, no_finetune=no_ft,
                      perturb_std=perturb, **DESK_TRAIN)
    man = ds.manifest
    enc = EncoderConfig(n_frames=man.n_window, channels=man.channels,
                        coarse_shape=man.obs.coarse_shape, out_shape=(man.ny, man.nx),
                        width=16, residual_blocks=4, dropout=0.1)
    tr = TransitionConfig(channels=man.channels, grid_shape=(man.ny, man.nx),
                          layers=4, modes=6, width=16)
    state = init_params(enc, tr, seed=seed, dtype=cfg.dtype)
    sched = make_schedule(state, ds, cfg)
    run_scheduled(sched)
    return {
        "test_ld": evaluate.single_step_error(state, ds),
        "eps": evaluate.encoder_reconstruction(state, ds),
        "rollout": [float(x) for x in evaluate.rollout_errors(state, ds, 10)],
        "phi_ft_checks": [[float(a), float(b)] for a, b in sched.phi_ft_checks],
    }


@pytest.fixture(scope="session")
def desk_suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cache = _cache_dir()
    if cache:
        os.makedirs(cache, exist_ok=True)

    ds_clean_dir = os.path.join(cache or root, "ds_clean")
    ds_noisy_dir = os.path.join(cache or root, "ds_noisy")
    if not os.path.exists(os.path.join(ds_clean_dir, "manifest.toml")):
        build_dataset(GenConfig(**DESK), ds_clean_dir)
    if not os.path.exists(os.path.join(ds_noisy_dir, "manifest.toml")):
        build_dataset(GenConfig(noise_pct=NOISE_PCT, **DESK), ds_noisy_dir)
    ds_clean = load_dataset(ds_clean_dir)
    ds_noisy = load_dataset(ds_noisy_dir)

    runs = {}
    jobs = []
    for seed in SEEDS:
        jobs += [
            ("clean", 0.1, seed, False),
            ("clean", 0.0, seed, False),
            ("clean-noft", 0.1, seed, True),
            ("noisy", 0.1, seed, False),
            ("noisy", 0.0, seed, False),
            ("perturbed", 0.1, seed, False),
        ]
    for kind, gamma, seed, no_ft in jobs:
        key = _run_key(kind, gamma, seed, no_ft)
        cache_file = os.path.join(cache, key + ".json") if cache else None
        if cache_file and os.path.exists(cache_file):
            with open(cache_file) as f:
                runs[(kind, gamma, seed, no_ft)] = json.load(f)
            continue
        ds = ds_noisy if kind == "noisy" else ds_clean
        perturb = PERTURB_STD if kind == "perturbed" else 0.0
        t0 = time.time()
        metrics = _train_and_measure(ds, gamma, seed, no_ft, perturb)
        metrics["seconds"] = time.time() - t0
        runs[(kind, gamma, seed, no_ft)] = metrics
        if cache_file:
            with open(cache_file, "w") as f:
                json.dump(metrics, f)

    interp_eps = {m: evaluate.interp_reconstruction(m, ds_clean)
                  for m in ("nearest", "bilinear", "bicubic")}
    return {"runs": runs, "interp_eps": interp_eps}


def _mean(suite, kind, gamma, field, no_ft=False):
    vals = [suite["runs"][(kind, gamma, s, no_ft)][field] for s in SEEDS]
    return float(np.mean(vals)), vals


# ---------------------------------------------------------------- criterion 7

def test_c07_pde_loss_beats_data_only_baseline(desk_suite):
    ld_rplpo, v1 = _mean(desk_suite, "clean", 0.1, "test_ld")
    ld_base, v2 = _mean(desk_suite, "clean", 0.0, "test_ld")
    eps_rplpo, _ = _mean(desk_suite, "clean", 0.1, "eps")
    eps_bilinear = desk_suite["interp_eps"]["bilinear"]
    secs = sum(desk_suite["runs"][("clean", g, s, False)].get("seconds", 0.0)
               for g in (0.1, 0.0) for s in SEEDS)
    assert ld_rplpo <= ld_base, (v1, v2)
    assert eps_rplpo <= eps_bilinear, (eps_rplpo, eps_bilinear)
    _report("C7", f"test L_D gamma=0.1 {ld_rplpo:.4f} <= gamma=0 {ld_base:.4f}; "
                  f"eps(encoder) {eps_rplpo:.3f} <= eps(bilinear) {eps_bilinear:.3f}; "
                  f"benchmark wall time {secs/60:.1f} min")


# ---------------------------------------------------------------- criterion 8

def test_c08_finetuning_direction(desk_suite):
    ld_ft, v1 = _mean(desk_suite, "clean", 0.1, "test_ld")
    ld_noft, v2 = _mean(desk_suite, "clean-noft", 0.1, "test_ld", no_ft=True)
    assert ld_ft <= ld_noft, (v1, v2)
    bad_blocks = []
    for s in SEEDS:
        for before, after in desk_suite["runs"][("clean", 0.1, s, False)]["phi_ft_checks"]:
            if after > before * (1 + 1e-9):
                bad_blocks.append((s, before, after))
    assert not bad_blocks, bad_blocks
    _report("C8", f"test L_D with FT {ld_ft:.4f} <= without FT {ld_noft:.4f}; "
                  "L_P^phi on unlabeled split non-increasing across every "
                  "stage-1 block")


# ---------------------------------------------------------------- criterion 9

def test_c09_multistep_error_trend(desk_suite):
    early, late = [], []
    for s in SEEDS:
        roll = np.asarray(desk_suite["runs"][("clean", 0.1, s, False)]["rollout"])
        early.append(roll[:5].mean())
        late.append(roll[5:].mean())
    assert np.mean(late) >= np.mean(early), (early, late)
    _report("C9", f"rollout mean steps 6-10 {np.mean(late):.4f} >= "
                  f"steps 1-5 {np.mean(early):.4f}")


# --------------------------------------------------------------- criterion 10

def test_c10_pipeline_determinism(tmp_path):
    def tree_hash(path):
        h = hashlib.sha256()
        for dirpath, dirnames, filenames in sorted(os.walk(path)):
            dirnames.sort()
            for fn in sorted(filenames):
                p = os.path.join(dirpath, fn)
                h.update(os.path.relpath(p, path).encode())
                with open(p, "rb") as f:
                    h.update(f.read())
        return h.hexdigest()

    digests = []
    for rep in ("a", "b"):
        base = tmp_path / rep
        ds, run, ev = str(base / "ds"), str(base / "run"), str(base / "ev")
        assert cli_main(["generate", "--out", ds, "--n-train", "3", "--n-unlabeled",
                         "2", "--n-test", "1", "--horizon-t", "0.12", "--grid", "16",
                         "--obs-gap", "4", "--seed", "5"]) == 0
        assert cli_main(["train", "--dataset", ds, "--out", run, "--epochs", "2",
                         "--q", "2", "--m1", "1", "--m2", "1", "--enc-width", "8",
                         "--enc-blocks", "2", "--tr-width", "8", "--tr-layers", "2",
                         "--modes", "4", "--batch-size", "8", "--seed", "3"]) == 0
        assert cli_main(["eval", "--dataset", ds, "--checkpoint",
                         os.path.join(run, "final"), "--out", ev,
                         "--horizon", "5"]) == 0
        digests.append((tree_hash(ds), tree_hash(os.path.join(run, "final")),
                        tree_hash(ev)))
    assert digests[0] == digests[1], digests
    _report("C10", "generate/train/eval repeated with equal seeds are "
                   "bit-identical (dataset, checkpoint, report hashes match)")


# --------------------------------------------------------------- criterion 11

def test_c11_noise_and_perturbation_direction(desk_suite):
    ld_clean, _ = _mean(desk_suite, "clean", 0.1, "test_ld")
    ld_noisy, _ = _mean(desk_suite, "noisy", 0.1, "test_ld")
    ld_noisy_base, _ = _mean(desk_suite, "noisy", 0.0, "test_ld")
    ld_pert, _ = _mean(desk_suite, "perturbed", 0.1, "test_ld")
    ld_clean_base, _ = _mean(desk_suite, "clean", 0.0, "test_ld")

    assert np.isfinite(ld_noisy) and ld_noisy >= ld_clean
    assert np.isfinite(ld_pert) and ld_pert >= ld_clean
    assert ld_noisy <= ld_noisy_base, (ld_noisy, ld_noisy_base)
    assert ld_pert <= ld_clean_base, (ld_pert, ld_clean_base)
    _report("C11", f"10% noise degrades L_D {ld_clean:.4f}->{ld_noisy:.4f} yet beats "
                   f"matched-noise baseline {ld_noisy_base:.4f}; std-1 PDE error "
                   f"degrades to {ld_pert:.4f} yet beats baseline {ld_clean_base:.4f}")
