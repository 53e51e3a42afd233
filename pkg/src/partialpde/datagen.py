"""Initial conditions, trajectory rollout, noise, and dataset assembly.

Datasets are split by trajectory (never by time slice): the labeled set,
the unlabeled set, and the test set come from disjoint IC seeds.  Only the
test split stores full-resolution frames; the other splits store observed
frames alone.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import fd
from . import kvdoc
from .errors import GenerationError, NumericalError, UnsupportedOperation
from .grid import ObservationSpec, observe
from .manifest import DatasetManifest, TrajectoryEntry, save_manifest, load_manifest
from .systems import make_system
from .tensorio import read_tensor, write_tensor


@dataclass(frozen=True)
class GRFConfig:
    """Gaussian random field: squared-exponential spectrum, exact
    mean/std rescaling, deterministic in the seed."""
    mean: float = 0.0
    std: float = 1.0
    length_scale: float = 0.25   # fraction of the domain
    seed: int = 0

    def __post_init__(self):
        if self.std <= 0:
            raise GenerationError(f"GRF std must be positive, got {self.std}")
        if not (0 < self.length_scale < 1):
            raise GenerationError(f"GRF length scale must be in (0,1), got {self.length_scale}")


def sample_grf(shape: Tuple[int, int], cfg: GRFConfig) -> np.ndarray:
    """Spectral synthesis: white complex Gaussian modes shaped by
    exp(-(l*k)^2 / 2) with k in radians, inverse-FFT, affine rescale."""
    ny, nx = shape
    rng = np.random.default_rng(cfg.seed)
    white = rng.standard_normal((ny, nx)) + 1j * rng.standard_normal((ny, nx))
    ky = 2.0 * np.pi * np.fft.fftfreq(ny) * ny
    kx = 2.0 * np.pi * np.fft.fftfreq(nx) * nx
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    spec = np.exp(-0.5 * (cfg.length_scale ** 2) * k2)
    f = np.fft.ifft2(white * spec).real
    s = f.std()
    if s == 0.0:
        return np.full(shape, cfg.mean)
    return (f - f.mean()) / s * cfg.std + cfg.mean


#: amplitudes that keep every system comfortably inside RK4 stability over
#: t in [0, 1] at the reference resolutions (nonlinear systems steepen, so
#: the shallow-water and advective systems start gentler)
DEFAULT_IC_STD = {"burgers": 0.3, "wave": 0.3, "nse": 0.3, "lswe": 0.15, "nswe": 0.05}


@dataclass(frozen=True)
class IcConfig:
    std: Optional[float] = None       # per-system default when None
    length_scale: float = 0.25
    depth: float = 1.0    # base fluid depth for the shallow-water systems

    def std_for(self, system_id: str) -> float:
        if self.std is not None:
            return self.std
        return DEFAULT_IC_STD.get(system_id, 0.3)


def _clamped_height(grf: np.ndarray, depth: float) -> np.ndarray:
    """depth + grf, rescaled so min height stays >= 0.1 * depth."""
    lo = grf.min()
    if lo < -0.9 * depth:
        grf = grf * (0.9 * depth / -lo)
    return depth + grf


def initial_state(system, shape: Tuple[int, int], seed: int, ic: IcConfig) -> np.ndarray:
    """Per-system IC protocol; returns (channels, ny, nx) float64."""
    ny, nx = shape
    seeds = np.random.SeedSequence(seed).generate_state(4)
    g = lambda i, std: sample_grf(shape, GRFConfig(0.0, std, ic.length_scale, int(seeds[i])))
    zeros = np.zeros(shape)
    sid = system.id
    std = ic.std_for(sid)
    if sid == "burgers":
        return g(0, std)[None]
    if sid == "wave":
        return np.stack([g(0, std), zeros])
    if sid == "nse":
        gx, gy = g(0, std), g(1, std)
        dx, dy = 1.0 / nx, 1.0 / ny
        ux, uy, _chi = fd.project_div_free(gx, gy, dx, dy)
        p0 = system.pressure_from_velocity(ux, uy, dx, dy)
        return np.stack([ad.value_of(ux), ad.value_of(uy), np.asarray(ad.value_of(p0))])
    if sid in ("lswe", "nswe"):
        depth = getattr(system, "H", ic.depth)
        h0 = _clamped_height(g(0, std), depth)
        return np.stack([zeros, zeros.copy(), h0])
    raise UnsupportedOperation(f"no IC protocol for system {sid!r}")


@dataclass
class Trajectory:
    system: str
    ic_seed: int
    dt: float
    frames: np.ndarray   # (F, channels, ny, nx), IO channel convention


def generate_trajectory(system, ic: np.ndarray, T: float, dt: float) -> Trajectory:
    """Roll the IC forward with RK4 steps of width dt up to time T."""
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-12 * max(1.0, abs(T)):
        raise GenerationError(f"dt={dt} does not divide T={T}")
    c, ny, nx = ic.shape
    ctx = fd.StepContext(w=dt, dx=1.0 / nx, dy=1.0 / ny, system=system)
    to_prog = getattr(system, "to_prognostic", None)
    from_prog = getattr(system, "from_prognostic", None)
    state = ad.constant(ic)
    if to_prog is not None:
        state = to_prog(state)
    frames = [ic.copy()]
    for k in range(n_steps):
        try:
            state = fd.rk4_step(ctx, state)
        except NumericalError as e:
            raise NumericalError(f"blow-up at step {k + 1}: {e}") from e
        io_state = from_prog(state) if from_prog is not None else state
        v = ad.value_of(io_state)
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"blow-up at step {k + 1}")
        frames.append(np.array(v))
    return Trajectory(system=system.id, ic_seed=-1, dt=dt, frames=np.stack(frames))


def add_noise(obs: np.ndarray, pct: float, seed: int) -> np.ndarray:
    """Additive Gaussian noise scaled by each frame's rms value.

    Applied to observations only; evaluation ground truth stays clean.
    """
    if pct <= 0:
        return obs
    rng = np.random.default_rng(seed)
    out = np.array(obs, dtype=np.float64)
    flat = out.reshape(out.shape[0], -1)
    rms = np.sqrt((flat ** 2).mean(axis=1))
    eta = rng.standard_normal(out.shape)
    return out + pct * rms.reshape((-1,) + (1,) * (out.ndim - 1)) * eta


@dataclass
class GenConfig:
    system: str = "burgers"
    system_params: Dict[str, float] = field(default_factory=dict)
    ny: int = 16
    nx: int = 16
    obs_gap: int = 4
    obs_points: Optional[List[Tuple[int, int]]] = None   # irregular if set
    n_window: int = 2
    dt: float = 0.01
    T: float = 0.15
    test_T: Optional[float] = None   # test trajectories may run longer (rollouts)
    n_train: int = 4
    n_unlabeled: int = 4
    n_test: int = 2
    master_seed: int = 0
    noise_pct: float = 0.0
    noise_seed: int = 1234
    ic_std: Optional[float] = None
    ic_length_scale: float = 0.25
    ic_depth: float = 1.0

    def observation(self) -> ObservationSpec:
        if self.obs_points is not None:
            return ObservationSpec.irregular(self.obs_points, (self.ny, self.nx))
        return ObservationSpec.regular(self.obs_gap, (self.ny, self.nx))


_MAX_IC_RETRIES = 5


def _gen_one(cfg: GenConfig, system, traj_id: int, base_seed: int, horizon: float):
    ic_cfg = IcConfig(std=cfg.ic_std, length_scale=cfg.ic_length_scale, depth=cfg.ic_depth)
    last_err = None
    for attempt in range(_MAX_IC_RETRIES + 1):
        seed = base_seed if attempt == 0 else int(
            np.random.SeedSequence([base_seed, attempt]).generate_state(1)[0])
        ic = initial_state(system, (cfg.ny, cfg.nx), seed, ic_cfg)
        try:
            traj = generate_trajectory(system, ic, horizon, cfg.dt)
            traj.ic_seed = seed
            return traj
        except NumericalError as e:
            last_err = e
    raise GenerationError(
        f"trajectory {traj_id}: blow-up persisted over {_MAX_IC_RETRIES} IC resamples "
        f"({last_err})")


def build_dataset(cfg: GenConfig, out_dir: str, overwrite: bool = False) -> DatasetManifest:
    """Generate the train/unlabeled/test splits and write the dataset tree."""
    man_path = os.path.join(out_dir, "manifest.toml")
    if os.path.exists(man_path) and not overwrite:
        raise GenerationError(f"{out_dir} already holds a dataset (use overwrite)")
    os.makedirs(out_dir, exist_ok=True)

    system = make_system(cfg.system, cfg.system_params, grid_shape=(cfg.ny, cfg.nx))
    spec = cfg.observation()
    n_total = cfg.n_train + cfg.n_unlabeled + cfg.n_test
    splits = (["train"] * cfg.n_train + ["unlabeled"] * cfg.n_unlabeled
              + ["test"] * cfg.n_test)
    base_seeds = [cfg.master_seed ^ (tid + 1) for tid in range(n_total)]
    test_T = cfg.T if cfg.test_T is None else cfg.test_T
    horizons = [cfg.T if s != "test" else test_T for s in splits]

    n_workers = int(os.environ.get("RPLPO_THREADS", "0")) or (os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=max(1, n_workers)) as pool:
        jobs = list(zip(range(n_total), base_seeds, horizons))
        trajs = list(pool.map(lambda args: _gen_one(cfg, system, *args), jobs))

    entries: List[TrajectoryEntry] = []
    channels = trajs[0].frames.shape[1]
    for tid, (split, traj) in enumerate(zip(splits, trajs)):
        subdir = f"traj_{tid:04d}"
        os.makedirs(os.path.join(out_dir, subdir), exist_ok=True)
        obs_frames = observe(traj.frames, spec)
        if cfg.noise_pct > 0 and split in ("train", "unlabeled"):
            noise_seed = int(np.random.SeedSequence(
                [cfg.noise_seed, traj.ic_seed]).generate_state(1)[0])
            obs_frames = add_noise(obs_frames, cfg.noise_pct, noise_seed)
        n_frames = traj.frames.shape[0]
        for k in range(n_frames):
            write_tensor(os.path.join(out_dir, subdir, f"obs_{k:03d}.rpl"), obs_frames[k])
            if split == "test":
                write_tensor(os.path.join(out_dir, subdir, f"frame_{k:03d}.rpl"),
                             traj.frames[k])
        entries.append(TrajectoryEntry(traj_id=tid, split=split, seed=traj.ic_seed,
                                       subdir=subdir, n_frames=n_frames))

    man = DatasetManifest(
        system=cfg.system, system_params=system.params(), obs=spec,
        channels=channels, ny=cfg.ny, nx=cfg.nx, n_window=cfg.n_window,
        tau=cfg.dt, dt=cfg.dt, noise_pct=cfg.noise_pct, master_seed=cfg.master_seed,
        trajectories=entries)
    save_manifest(man, out_dir)

    echo = {k: v for k, v in asdict(cfg).items() if v is not None}
    echo["system_params"] = system.params()
    flat = {}
    for k, v in echo.items():
        if isinstance(v, dict):
            flat[k] = {kk: float(vv) for kk, vv in v.items()}
        elif isinstance(v, (list, tuple)):
            flat[k] = [list(map(int, p)) if isinstance(p, (list, tuple)) else p for p in v]
        else:
            flat[k] = v
    kvdoc.dump(flat, os.path.join(out_dir, "gen_config.toml"))
    return man


@dataclass
class LoadedTrajectory:
    entry: TrajectoryEntry
    obs: np.ndarray                     # (F, c, sy, sx) or (F, c, s)
    full: Optional[np.ndarray] = None   # (F, c, ny, nx), test split only


@dataclass
class LoadedDataset:
    manifest: DatasetManifest
    root: str
    train: List[LoadedTrajectory]
    unlabeled: List[LoadedTrajectory]
    test: List[LoadedTrajectory]

    @property
    def obs(self) -> ObservationSpec:
        return self.manifest.obs


def load_dataset(root: str) -> LoadedDataset:
    man = load_manifest(root)
    buckets = {"train": [], "unlabeled": [], "test": []}
    for t in man.trajectories:
        obs = np.stack([read_tensor(os.path.join(root, man.obs_path(t, k)))
                        for k in range(t.n_frames)])
        full = None
        if t.split == "test":
            full = np.stack([read_tensor(os.path.join(root, man.frame_path(t, k)))
                             for k in range(t.n_frames)])
        buckets[t.split].append(LoadedTrajectory(entry=t, obs=obs, full=full))
    return LoadedDataset(manifest=man, root=root, train=buckets["train"],
                         unlabeled=buckets["unlabeled"], test=buckets["test"])
