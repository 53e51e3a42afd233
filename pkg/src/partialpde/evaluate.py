"""Prediction/reconstruction metrics, multi-step rollouts, physics diagnostics.

All functions here are pure and run in evaluation mode (no dropout, no
gradient tracking).  Per-dataset numbers are means over test trajectories;
seed-level aggregation happens in the caller.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from . import fd
from .datagen import LoadedDataset
from .errors import DegenerateLabel, HorizonError, NumericalError, UnsupportedOperation
from .grid import observe
from .models import (ModelState, encode, interp_encode, observe_graph,
                     prepare_window_stack, transition)

VELOCITY_CHANNELS = {"nse": (0, 1), "lswe": (0, 1), "nswe": (0, 1)}


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    """|| pred - truth ||_2 / || truth ||_2 over all channels and points."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise NumericalError(f"shape mismatch {pred.shape} vs {truth.shape}")
    den = np.linalg.norm(truth.ravel())
    if den == 0.0:
        raise DegenerateLabel("relative error against a zero-norm reference")
    return float(np.linalg.norm((pred - truth).ravel()) / den)


def reconstruction_error(h_hat: np.ndarray, h: np.ndarray) -> float:
    """Relative l2 distance between a reconstructed and a true fine state."""
    return relative_l2(h_hat, h)


def _test_windows(ds: LoadedDataset):
    """Yield (traj, t, stack, current_obs) for every valid test window."""
    man = ds.manifest
    n = man.n_window
    for tr in ds.test:
        for t in range(n - 1, tr.obs.shape[0]):
            stack = prepare_window_stack(tr.obs, t, n, man.obs, (man.ny, man.nx))
            yield tr, t, stack, tr.obs[t]


def single_step_error(state: ModelState, ds: LoadedDataset, batch: int = 256) -> float:
    """Mean relative l2 of one-step predictions over every valid test pair."""
    man = ds.manifest
    fs = state.frozen()
    items = [(tr, t, stack, cur) for tr, t, stack, cur in _test_windows(ds)
             if t + 1 < tr.obs.shape[0]]
    total, count = 0.0, 0
    for lo in range(0, len(items), batch):
        chunk = items[lo: lo + batch]
        stacks = np.stack([c[2] for c in chunk])
        curs = np.stack([c[3] for c in chunk])
        h = encode(fs, stacks, curs, man.obs)
        pred = observe_graph(transition(fs, h), man.obs).value
        for (tr, t, _, _), p in zip(chunk, pred):
            label = tr.obs[t + 1].reshape(-1)
            total += relative_l2(p.reshape(-1), label)
            count += 1
    return total / max(count, 1)


def encoder_reconstruction(state: ModelState, ds: LoadedDataset,
                           batch: int = 256) -> float:
    """Mean epsilon of the trained encoder against stored test fine states."""
    man = ds.manifest
    fs = state.frozen()
    items = list(_test_windows(ds))
    total, count = 0.0, 0
    for lo in range(0, len(items), batch):
        chunk = items[lo: lo + batch]
        stacks = np.stack([c[2] for c in chunk])
        curs = np.stack([c[3] for c in chunk])
        h = encode(fs, stacks, curs, man.obs).value
        for (tr, t, _, _), hh in zip(chunk, h):
            if tr.full is None:
                raise UnsupportedOperation("reconstruction needs stored fine states")
            total += reconstruction_error(hh, tr.full[t])
            count += 1
    return total / max(count, 1)


def interp_reconstruction(method: str, ds: LoadedDataset) -> float:
    """Mean epsilon of a parameter-free interpolation encoder on the test split."""
    man = ds.manifest
    total, count = 0.0, 0
    for tr in ds.test:
        if tr.full is None:
            raise UnsupportedOperation("reconstruction needs stored fine states")
        for t in range(man.n_window - 1, tr.obs.shape[0]):
            h_hat = interp_encode(method, tr.obs[t], man.obs, (man.ny, man.nx))
            total += reconstruction_error(h_hat, tr.full[t])
            count += 1
    return total / max(count, 1)


def rollout_errors(state: ModelState, ds: LoadedDataset, k_steps: int = 10) -> np.ndarray:
    """Autoregressive K-step observation errors, averaged over test windows.

    The window is encoded once; the transition rolls forward in fine-state
    space; each step is observed and compared to the true observation.
    """
    if k_steps == 0:
        return np.zeros(0)
    man = ds.manifest
    n = man.n_window
    fs = state.frozen()
    starts = []
    for tr in ds.test:
        f_count = tr.obs.shape[0]
        if f_count - n < k_steps:
            raise HorizonError(f"trajectory too short for K={k_steps}")
        for t in range(n - 1, f_count - k_steps):
            starts.append((tr, t))
    stacks = np.stack([prepare_window_stack(tr.obs, t, n, man.obs, (man.ny, man.nx))
                       for tr, t in starts])
    curs = np.stack([tr.obs[t] for tr, t in starts])
    h = encode(fs, stacks, curs, man.obs)
    per_step = np.zeros(k_steps)
    for k in range(1, k_steps + 1):
        h = transition(fs, h)
        pred = observe_graph(h, man.obs).value
        errs = [relative_l2(p.reshape(-1), tr.obs[t + k].reshape(-1))
                for (tr, t), p in zip(starts, pred)]
        per_step[k - 1] = float(np.mean(errs))
    return per_step


# -- physics metrics -------------------------------------------------------------


def mean_abs_divergence(seq: np.ndarray, dx: float, dy: float,
                        vel_channels=(0, 1)) -> float:
    """Mean |d(ux)/dx + d(uy)/dy| over all frames and pixels (4th-order)."""
    ux = seq[:, vel_channels[0]]
    uy = seq[:, vel_channels[1]]
    div = fd.divergence(ux, uy, dx, dy)
    return float(np.mean(np.abs(np.asarray(div.value if hasattr(div, "value") else div))))


def tke_field(seq: np.ndarray, vel_channels=(0, 1)) -> np.ndarray:
    """Per-pixel turbulence kinetic energy: half the time-mean of squared
    velocity fluctuations."""
    if seq.shape[0] < 2:
        raise NumericalError("TKE needs at least two frames")
    ux = seq[:, vel_channels[0]]
    uy = seq[:, vel_channels[1]]
    fx = ux - ux.mean(axis=0, keepdims=True)
    fy = uy - uy.mean(axis=0, keepdims=True)
    return 0.5 * ((fx ** 2).mean(axis=0) + (fy ** 2).mean(axis=0))


def energy_spectrum(field2d: np.ndarray) -> np.ndarray:
    """Radially binned power of the 2D Fourier transform of a field.

    Shells are integer wavenumbers k = round(sqrt(kx^2 + ky^2)); the sum of
    all bins equals the total squared-magnitude power (Parseval, up to the
    1/N^2 convention used here).
    """
    ny, nx = field2d.shape
    fhat = np.fft.fft2(field2d) / (ny * nx)
    power = np.abs(fhat) ** 2
    ky = np.fft.fftfreq(ny) * ny
    kx = np.fft.fftfreq(nx) * nx
    kmag = np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    shells = np.floor(kmag + 0.5).astype(int)
    nbins = shells.max() + 1
    spec = np.zeros(nbins)
    np.add.at(spec, shells.ravel(), power.ravel())
    return spec


@dataclass
class PhysicsMetrics:
    div_err: float
    tke_err: float
    spectrum_err: float


def physics_metrics(pred_seq: np.ndarray, true_seq: np.ndarray, dx: float, dy: float,
                    vel_channels=(0, 1)) -> PhysicsMetrics:
    """Compare divergence / TKE / energy-spectrum between two field sequences.

    div_err is the absolute difference of the mean-|divergence| functionals
    (ground truth is divergence-free for projected flows, so a ratio would be
    ill-posed); TKE and spectrum errors are relative l2.
    """
    if pred_seq.shape[0] < 2:
        raise NumericalError("physics metrics need >= 2 frames for fluctuations")
    div_p = mean_abs_divergence(pred_seq, dx, dy, vel_channels)
    div_t = mean_abs_divergence(true_seq, dx, dy, vel_channels)
    tke_p = tke_field(pred_seq, vel_channels)
    tke_t = tke_field(true_seq, vel_channels)
    spec_p = energy_spectrum(tke_p)
    spec_t = energy_spectrum(tke_t)
    return PhysicsMetrics(
        div_err=abs(div_p - div_t),
        tke_err=relative_l2(tke_p, tke_t),
        spectrum_err=relative_l2(spec_p, spec_t),
    )


def physics_metrics_for(state: ModelState, ds: LoadedDataset) -> Optional[PhysicsMetrics]:
    """Physics metrics of reconstructed test sequences vs stored fine states.

    Only defined for velocity-bearing systems; returns None otherwise.
    """
    man = ds.manifest
    if man.system not in VELOCITY_CHANNELS:
        return None
    vel = VELOCITY_CHANNELS[man.system]
    fs = state.frozen()
    n = man.n_window
    dx, dy = 1.0 / man.nx, 1.0 / man.ny
    accum = np.zeros(3)
    for tr in ds.test:
        stacks = np.stack([prepare_window_stack(tr.obs, t, n, man.obs, (man.ny, man.nx))
                           for t in range(n - 1, tr.obs.shape[0])])
        curs = np.stack([tr.obs[t] for t in range(n - 1, tr.obs.shape[0])])
        h = encode(fs, stacks, curs, man.obs).value
        true = tr.full[n - 1:]
        m = physics_metrics(h, true, dx, dy, vel)
        accum += (m.div_err, m.tke_err, m.spectrum_err)
    accum /= max(1, len(ds.test))
    return PhysicsMetrics(*accum)


# -- reports ----------------------------------------------------------------------


@dataclass
class EvalReport:
    single_step: float
    reconstruction: float
    interp_reconstruction: Dict[str, float]
    rollout: np.ndarray
    physics: Optional[PhysicsMetrics] = None

    def summary_doc(self) -> Dict:
        doc = {
            "single_step_l2": self.single_step,
            "reconstruction_eps": self.reconstruction,
            "rollout_steps": [float(x) for x in self.rollout],
        }
        for k, v in self.interp_reconstruction.items():
            doc[f"eps_{k}"] = v
        if self.physics is not None:
            doc["divergence_err"] = self.physics.div_err
            doc["tke_err"] = self.physics.tke_err
            doc["spectrum_err"] = self.physics.spectrum_err
        return doc


def evaluate_model(state: ModelState, ds: LoadedDataset, k_steps: int = 10,
                   with_interp: bool = True) -> EvalReport:
    interp = {}
    if with_interp and ds.manifest.obs.kind == "regular":
        for method in ("nearest", "bilinear", "bicubic"):
            interp[method] = interp_reconstruction(method, ds)
    return EvalReport(
        single_step=single_step_error(state, ds),
        reconstruction=encoder_reconstruction(state, ds),
        interp_reconstruction=interp,
        rollout=rollout_errors(state, ds, k_steps),
        physics=physics_metrics_for(state, ds),
    )


def write_report(report: EvalReport, out_dir: str, label: str = "model") -> None:
    os.makedirs(out_dir, exist_ok=True)
    from . import kvdoc

    kvdoc.dump(report.summary_doc(), os.path.join(out_dir, "summary.toml"))
    with open(os.path.join(out_dir, "rollout.csv"), "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["method"] + [f"step_{k}" for k in range(1, len(report.rollout) + 1)])
        wr.writerow([label] + [repr(float(x)) for x in report.rollout])


def export_step_table(run_dirs: Sequence[str], labels: Sequence[str], out_path: str) -> None:
    """Merge per-run rollout tables into one per-step error table."""
    rows = []
    for d, label in zip(run_dirs, labels):
        path = os.path.join(d, "rollout.csv")
        with open(path, newline="") as f:
            rd = list(csv.reader(f))
        header = rd[0]
        rows.append([label] + rd[1][1:])
    with open(out_path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(header)
        wr.writerows(rows)
