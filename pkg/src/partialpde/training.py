"""Loss assembly, the AdamW optimizer, and the two-period training schedule.

Base training jointly updates encoder and transition on the labeled split
with data loss plus weighted one-step PDE-residual losses.  Every `q` base
epochs, a fine-tuning round runs: first m1 passes updating only the
transition on the unlabeled split (physics loss only, encoder frozen), then
m2 passes updating only the encoder on the labeled split (data loss only,
transition frozen).  That stage order is fixed.

Everything is bit-reproducible for a fixed seed: shuffles and dropout masks
come from counter-keyed RNG streams and execution is single-threaded.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import autodiff as ad
from . import fd
from .autodiff import Tensor
from .datagen import LoadedDataset, LoadedTrajectory
from .errors import ContractError, DegenerateLabel, NumericalError
from .grid import ObservationSpec
from .models import (ModelState, encode, observe_graph, prepare_window_stack,
                     save_checkpoint, transition)
from .systems import make_system, perturb_spec


@dataclass
class TrainConfig:
    pde_weight: float = 1e-1        # gamma in the joint loss
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    sched_factor: float = 0.5       # plateau halving factor
    patience: int = 50              # epochs without val improvement before halving
    epochs: int = 200               # base-training epochs
    q: int = 100                    # base epochs between fine-tuning rounds
    m1: int = 10                    # transition fine-tune passes
    m2: int = 10                    # encoder fine-tune passes
    seed: int = 0
    no_finetune: bool = False
    dtype: str = "f32"
    val_fraction: float = 0.1
    ft_lr_scale: float = 0.1        # fine-tune stages step more cautiously
    perturb_std: float = 0.0        # inaccurate-PDE model error in the loss
    perturb_seed: int = 99

    def __post_init__(self):
        if self.pde_weight < 0:
            raise ContractError("pde_weight must be >= 0")
        if min(self.q, self.m1, self.m2) < 1:
            raise ContractError("q, m1, m2 must all be >= 1")


@dataclass
class LossBundle:
    l_d: float
    l_p_theta: float
    l_p_phi: float
    l_pi: float
    max_abs_residual: float = 0.0
    grad_norm: float = 0.0
    skipped: int = 0


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


# -- data preparation ------------------------------------------------------------


@dataclass
class PairArrays:
    """Flattened (window_t, window_{t+tau}) training pairs."""
    stack_t: np.ndarray       # (P, in_ch, sy, sx) encoder inputs at t
    stack_tau: np.ndarray     # same at t+tau
    cur_t: np.ndarray         # (P, c, s...) newest observed frame at t
    cur_tau: np.ndarray
    label: np.ndarray         # (P, c*s) flattened observation at t+tau
    label_norm: np.ndarray    # (P,) euclidean norms of labels

    @property
    def count(self) -> int:
        return self.stack_t.shape[0]


@dataclass
class WindowArrays:
    """Unlabeled windows (no future frame paired)."""
    stack: np.ndarray
    cur: np.ndarray

    @property
    def count(self) -> int:
        return self.stack.shape[0]


def _build_pairs(trajs: Sequence[LoadedTrajectory], n: int, spec: ObservationSpec,
                 out_shape, dtype) -> PairArrays:
    stacks_t, stacks_tau, cur_t, cur_tau, labels = [], [], [], [], []
    for tr in trajs:
        frames = tr.obs
        f_count = frames.shape[0]
        for t in range(n - 1, f_count - 1):
            stacks_t.append(prepare_window_stack(frames, t, n, spec, out_shape))
            stacks_tau.append(prepare_window_stack(frames, t + 1, n, spec, out_shape))
            cur_t.append(frames[t])
            cur_tau.append(frames[t + 1])
            labels.append(frames[t + 1])
    label = np.stack(labels).astype(dtype)
    flat = label.reshape(label.shape[0], -1)
    return PairArrays(
        stack_t=np.stack(stacks_t).astype(dtype),
        stack_tau=np.stack(stacks_tau).astype(dtype),
        cur_t=np.stack(cur_t).astype(dtype),
        cur_tau=np.stack(cur_tau).astype(dtype),
        label=flat,
        label_norm=np.linalg.norm(flat.astype(np.float64), axis=1),
    )


def _build_windows(trajs: Sequence[LoadedTrajectory], n: int, spec: ObservationSpec,
                   out_shape, dtype) -> WindowArrays:
    stacks, curs = [], []
    for tr in trajs:
        frames = tr.obs
        for t in range(n - 1, frames.shape[0]):
            stacks.append(prepare_window_stack(frames, t, n, spec, out_shape))
            curs.append(frames[t])
    return WindowArrays(stack=np.stack(stacks).astype(dtype),
                        cur=np.stack(curs).astype(dtype))


class TrainData:
    """Batch-ready arrays for the labeled, validation, and unlabeled splits."""

    def __init__(self, ds: LoadedDataset, cfg: TrainConfig):
        man = ds.manifest
        self.spec = man.obs
        self.n = man.n_window
        self.tau = man.tau
        self.out_shape = (man.ny, man.nx)
        self.channels = man.channels
        dtype = np.float32 if cfg.dtype == "f32" else np.float64
        self.dtype = dtype

        n_val = 0
        if len(ds.train) >= 2 and cfg.val_fraction > 0:
            n_val = max(1, int(round(cfg.val_fraction * len(ds.train))))
            n_val = min(n_val, len(ds.train) - 1)
        train_trajs = ds.train[: len(ds.train) - n_val]
        val_trajs = ds.train[len(ds.train) - n_val:]

        self.train_pairs = _build_pairs(train_trajs, self.n, self.spec, self.out_shape, dtype)
        self.val_pairs = (_build_pairs(val_trajs, self.n, self.spec, self.out_shape, dtype)
                          if val_trajs else None)
        self.unlabeled = (_build_windows(ds.unlabeled, self.n, self.spec, self.out_shape, dtype)
                          if ds.unlabeled else None)


def _batch_slices(count: int, batch: int, perm: np.ndarray) -> List[np.ndarray]:
    if count < batch:
        return [perm]
    n_full = count // batch
    return [perm[i * batch:(i + 1) * batch] for i in range(n_full)]


# -- losses ------------------------------------------------------------------------


def _relative_data_loss(pred_flat: Tensor, label_flat: np.ndarray,
                        label_norm: np.ndarray) -> Tensor:
    """Mean over the batch of per-sample relative l2 errors (in f64)."""
    bad = label_norm == 0.0
    if bad.any():
        warnings.warn(f"skipping {int(bad.sum())} zero-norm labels in data loss")
        if bad.all():
            raise DegenerateLabel("every label in the batch has zero norm")
    keep = ~bad
    diff = ad.cast(pred_flat - label_flat, np.float64)
    sq = ad.sumt(ad.square(diff), axis=1)              # (B,)
    norms = ad.sqrt(sq)
    ratio = norms * np.where(keep, 1.0 / np.maximum(label_norm, 1e-300), 0.0)
    return ad.sumt(ratio) * (1.0 / max(1, int(keep.sum())))


def loss_bundle(state: ModelState, data: TrainData, idx: np.ndarray, system,
                cfg: TrainConfig, training: bool, rng: Optional[np.random.Generator],
                ) -> Tuple[Tensor, LossBundle]:
    """Assemble L_PI = L_D + gamma (L_P^theta + L_P^phi) on one batch."""
    pairs = data.train_pairs
    return _bundle_from_arrays(state, pairs, idx, data, system, cfg, training, rng)


def _bundle_from_arrays(state, pairs: PairArrays, idx, data: TrainData, system,
                        cfg, training, rng) -> Tuple[Tensor, LossBundle]:
    spec = data.spec
    b = len(idx)
    stacks = np.concatenate([pairs.stack_t[idx], pairs.stack_tau[idx]])
    curs = np.concatenate([pairs.cur_t[idx], pairs.cur_tau[idx]])
    h_all = encode(state, stacks, curs, spec, training=training, rng=rng)
    h_t = ad.slice_axis(h_all, 0, 0, b)
    h_tau_theta = ad.slice_axis(h_all, 0, b, 2 * b)
    # the data loss trains both modules end-to-end
    h_tau_phi = transition(state, h_t)

    ny, nx = data.out_shape
    ctx = fd.StepContext(w=data.tau, dx=1.0 / nx, dy=1.0 / ny, system=system)
    gamma = cfg.pde_weight
    if gamma > 0:
        # L_P^theta trains the encoder (both window ends); L_P^phi trains the
        # transition only, so its branch sees the encoded state as data
        r_theta = fd.residual_F(ctx, h_t, h_tau_theta)
        h_t_data = ad.stop_gradient(h_t)
        h_tau_phi_phys = transition(state, h_t_data)
        r_phi = fd.residual_F(ctx, h_t_data, h_tau_phi_phys)
    else:
        # report-only physics terms: no gradient weight, so keep them out
        # of the graph entirely
        r_theta, r_phi = fd.residual_pair(
            ctx, ad.stop_gradient(h_t),
            [ad.stop_gradient(h_tau_theta), ad.stop_gradient(h_tau_phi)])

    l_p_theta = fd.pde_loss(r_theta)
    l_p_phi = fd.pde_loss(r_phi)
    pred_flat = ad.reshape(observe_graph(h_tau_phi, spec), (b, -1))
    l_d = _relative_data_loss(pred_flat, pairs.label[idx], pairs.label_norm[idx])
    if gamma > 0:
        l_pi = l_d + gamma * l_p_theta + gamma * l_p_phi
    else:
        l_pi = l_d
    bundle = LossBundle(
        l_d=float(l_d.value), l_p_theta=float(l_p_theta.value),
        l_p_phi=float(l_p_phi.value), l_pi=float(l_pi.value),
        max_abs_residual=float(np.max(np.abs(r_phi.value))))
    return l_pi, bundle


# -- optimizer ----------------------------------------------------------------------


class AdamW:
    """Adaptive-moment optimizer with bias correction and decoupled decay."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.slots: Dict[str, Tuple[np.ndarray, np.ndarray, int]] = {}
        self.skipped_steps = 0

    def reset_momentum(self, names) -> None:
        """Zero the first-moment estimates (used when the objective switches
        between stages; the second-moment preconditioner is kept)."""
        for n in names:
            if n in self.slots:
                m, v, t = self.slots[n]
                self.slots[n] = (np.zeros_like(m), v, t)

    def step(self, params: Dict[str, Tensor], lr_scale: float = 1.0,
             only: Optional[Set[str]] = None) -> None:
        names = [n for n in sorted(params) if only is None or n in only]
        grads = {}
        for n in names:
            g = params[n].grad
            if g is None:
                g = np.zeros_like(params[n].value)
            if not np.all(np.isfinite(g)):
                self.skipped_steps += 1
                return
            grads[n] = g
        b1, b2 = self.betas
        lr = self.lr * lr_scale
        for n in names:
            p = params[n]
            g = grads[n]
            m, v, t = self.slots.get(n, (np.zeros_like(p.value), np.zeros_like(p.value), 0))
            t += 1
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            mhat = m / (1.0 - b1 ** t)
            vhat = v / (1.0 - b2 ** t)
            upd = mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay:
                upd = upd + self.weight_decay * p.value
            p.value = (p.value - lr * upd).astype(p.value.dtype, copy=False)
            self.slots[n] = (m, v, t)


# -- evaluation-mode helpers ---------------------------------------------------------


def eval_data_loss(state: ModelState, pairs: PairArrays, data: TrainData,
                   batch: int = 256) -> float:
    """Mean relative-l2 single-step error over a pair set (no dropout)."""
    fs = state.frozen()
    total, count = 0.0, 0
    for lo in range(0, pairs.count, batch):
        idx = np.arange(lo, min(lo + batch, pairs.count))
        h = encode(fs, pairs.stack_t[idx], pairs.cur_t[idx], data.spec)
        pred = observe_graph(transition(fs, h), data.spec).value.reshape(len(idx), -1)
        diff = pred.astype(np.float64) - pairs.label[idx].astype(np.float64)
        norms = np.linalg.norm(diff, axis=1)
        rel = norms / np.maximum(pairs.label_norm[idx], 1e-300)
        total += rel.sum()
        count += len(idx)
    return total / max(count, 1)


def eval_physics_loss(state: ModelState, windows: WindowArrays, data: TrainData,
                      system, batch: int = 256) -> float:
    """L_P^phi over a window set in evaluation mode."""
    fs = state.frozen()
    ny, nx = data.out_shape
    ctx = fd.StepContext(w=data.tau, dx=1.0 / nx, dy=1.0 / ny, system=system)
    total, count = 0.0, 0
    for lo in range(0, windows.count, batch):
        idx = np.arange(lo, min(lo + batch, windows.count))
        h = encode(fs, windows.stack[idx], windows.cur[idx], data.spec)
        h_next = transition(fs, h)
        val = float(fd.pde_loss(fd.residual_F(ctx, h, h_next)).value)
        total += val * len(idx)
        count += len(idx)
    return total / max(count, 1)


# -- training stages -----------------------------------------------------------------


@dataclass
class TrainLogRow:
    epoch: int
    l_d: float
    l_p_theta: float
    l_p_phi: float
    val_l_d: float
    lr: float
    stage: str = "base"


class Schedule:
    """Holds optimizer/scheduler state across base and fine-tune stages."""

    def __init__(self, state: ModelState, data: TrainData, cfg: TrainConfig, system):
        self.state = state
        self.data = data
        self.cfg = cfg
        self.system = system
        self.opt = AdamW(cfg.lr, weight_decay=cfg.weight_decay)
        self.lr_scale = 1.0
        self.best_val = np.inf
        self.since_best = 0
        self.epoch = 0
        self.global_step = 0
        self.history: List[TrainLogRow] = []
        # (before, after) eval-mode physics loss on the unlabeled split
        # around each stage-1 fine-tune block
        self.phi_ft_checks: List[Tuple[float, float]] = []

    # ---- base period ----
    def base_epochs(self, n_epochs: int) -> None:
        cfg, data = self.cfg, self.data
        pairs = data.train_pairs
        for _ in range(n_epochs):
            perm = _rng(cfg.seed, 1, self.epoch).permutation(pairs.count)
            sums = np.zeros(3)
            batches = _batch_slices(pairs.count, cfg.batch_size, perm)
            for idx in batches:
                rng = _rng(cfg.seed, 2, self.global_step)
                ad.zero_grads(self.state.params.values())
                l_pi, bundle = _bundle_from_arrays(
                    self.state, pairs, idx, data, self.system, cfg, True, rng)
                if not np.isfinite(bundle.l_pi):
                    raise NumericalError(f"non-finite training loss at epoch {self.epoch}")
                ad.backward(l_pi)
                bundle.grad_norm = float(np.sqrt(sum(
                    float((p.grad ** 2).sum()) for p in self.state.params.values()
                    if p.grad is not None)))
                self.opt.step(self.state.params, self.lr_scale)
                self.global_step += 1
                sums += (bundle.l_d, bundle.l_p_theta, bundle.l_p_phi)
            sums /= max(1, len(batches))
            val = (eval_data_loss(self.state, data.val_pairs, data)
                   if data.val_pairs is not None else np.nan)
            self._plateau_update(val)
            self.epoch += 1
            self.history.append(TrainLogRow(self.epoch, sums[0], sums[1], sums[2],
                                            val, self.cfg.lr * self.lr_scale))

    def _plateau_update(self, val: float) -> None:
        if not np.isfinite(val):
            return
        if val < self.best_val - 1e-12:
            self.best_val = val
            self.since_best = 0
        else:
            self.since_best += 1
            if self.since_best >= self.cfg.patience:
                self.lr_scale *= self.cfg.sched_factor
                self.since_best = 0

    # ---- fine-tuning stages ----
    def finetune_transition(self, m1: int) -> None:
        """Stage 1: update phi on unlabeled windows with the physics loss;
        the encoder is frozen (its output enters as a constant)."""
        cfg, data = self.cfg, self.data
        wins = data.unlabeled
        if wins is None or m1 == 0:
            return
        ny, nx = data.out_shape
        ctx = fd.StepContext(w=data.tau, dx=1.0 / nx, dy=1.0 / ny, system=self.system)
        frozen_theta = {k: (Tensor(v.value) if k.startswith("encoder.") else v)
                        for k, v in self.state.params.items()}
        view = ModelState(frozen_theta, self.state.encoder, self.state.transition,
                          self.state.seed, self.state.dtype)
        phi_names = set(self.state.phi())
        self.opt.reset_momentum(phi_names)
        for p in range(m1):
            perm = _rng(cfg.seed, 3, self.epoch, p).permutation(wins.count)
            sums = 0.0
            batches = _batch_slices(wins.count, cfg.batch_size, perm)
            for idx in batches:
                ad.zero_grads(view.params.values())
                h = encode(view, wins.stack[idx], wins.cur[idx], data.spec)
                h_next = transition(view, h)
                loss = fd.pde_loss(fd.residual_F(ctx, h, h_next))
                if not np.isfinite(float(loss.value)):
                    raise NumericalError("non-finite fine-tune loss (stage 1)")
                ad.backward(loss)
                theta_grads = [v.grad for k, v in view.params.items()
                               if k.startswith("encoder.")]
                assert all(g is None for g in theta_grads), "encoder must stay frozen"
                self.opt.step(view.params, self.lr_scale * cfg.ft_lr_scale,
                              only=phi_names)
                sums += float(loss.value)
            self.history.append(TrainLogRow(self.epoch, np.nan, np.nan,
                                            sums / max(1, len(batches)),
                                            np.nan, self.cfg.lr * self.lr_scale, "ft-phi"))

    def finetune_encoder(self, m2: int) -> None:
        """Stage 2: update theta on the labeled split with the data loss;
        the transition is frozen (but gradients flow through it)."""
        cfg, data = self.cfg, self.data
        pairs = data.train_pairs
        frozen_phi = {k: (Tensor(v.value) if k.startswith("transition.") else v)
                      for k, v in self.state.params.items()}
        view = ModelState(frozen_phi, self.state.encoder, self.state.transition,
                          self.state.seed, self.state.dtype)
        theta_names = set(self.state.theta())
        self.opt.reset_momentum(theta_names)
        for p in range(m2):
            perm = _rng(cfg.seed, 4, self.epoch, p).permutation(pairs.count)
            sums = 0.0
            batches = _batch_slices(pairs.count, cfg.batch_size, perm)
            for idx in batches:
                rng = _rng(cfg.seed, 5, self.epoch, p, int(idx[0]))
                ad.zero_grads(view.params.values())
                h = encode(view, pairs.stack_t[idx], pairs.cur_t[idx], data.spec,
                           training=True, rng=rng)
                pred = ad.reshape(observe_graph(transition(view, h), data.spec),
                                  (len(idx), -1))
                loss = _relative_data_loss(pred, pairs.label[idx], pairs.label_norm[idx])
                if not np.isfinite(float(loss.value)):
                    raise NumericalError("non-finite fine-tune loss (stage 2)")
                ad.backward(loss)
                self.opt.step(view.params, self.lr_scale * cfg.ft_lr_scale,
                              only=theta_names)
                sums += float(loss.value)
            self.history.append(TrainLogRow(self.epoch, sums / max(1, len(batches)),
                                            np.nan, np.nan, np.nan,
                                            self.cfg.lr * self.lr_scale, "ft-theta"))

    def finetune_round(self, order: Tuple[str, str] = ("transition", "encoder")) -> None:
        """One two-stage fine-tuning round.  The order is part of the method:
        transition first (physics, unlabeled), then encoder (data, labeled)."""
        if tuple(order) != ("transition", "encoder"):
            raise ContractError("fine-tuning stages run transition first, encoder second")
        check = self.data.unlabeled is not None
        if check:
            before = eval_physics_loss(self.state, self.data.unlabeled, self.data,
                                       self.system)
        self.finetune_transition(self.cfg.m1)
        if check:
            after = eval_physics_loss(self.state, self.data.unlabeled, self.data,
                                      self.system)
            self.phi_ft_checks.append((before, after))
        self.finetune_encoder(self.cfg.m2)
        # the joint objective returns: drop the stage-specific momentum too
        self.opt.reset_momentum(set(self.state.params))


def training_system(manifest_system: str, params: Dict[str, float], grid_shape,
                    cfg: TrainConfig):
    """The system used inside the residual loss (optionally GRF-perturbed)."""
    system = make_system(manifest_system, params, grid_shape=grid_shape)
    if cfg.perturb_std > 0:
        system = perturb_spec(system, cfg.perturb_std, cfg.perturb_seed, grid_shape)
    return system


def run_schedule(state: ModelState, ds: LoadedDataset, cfg: TrainConfig,
                 out_dir: Optional[str] = None) -> Tuple[ModelState, List[TrainLogRow]]:
    """Base training interleaved with two-stage fine-tuning every q epochs."""
    sched = make_schedule(state, ds, cfg)
    run_scheduled(sched, out_dir)
    return state, sched.history


def make_schedule(state: ModelState, ds: LoadedDataset, cfg: TrainConfig) -> Schedule:
    data = TrainData(ds, cfg)
    man = ds.manifest
    system = training_system(man.system, man.system_params, (man.ny, man.nx), cfg)
    return Schedule(state, data, cfg, system)


def run_scheduled(sched: Schedule, out_dir: Optional[str] = None) -> Schedule:
    cfg = sched.cfg
    # gamma = 0 is the data-only baseline: its fine-tuning stages would either
    # optimize a physics objective it does not use or re-run plain data fits,
    # so the two-stage rounds are skipped entirely
    finetune = not cfg.no_finetune and cfg.pde_weight > 0
    remaining = cfg.epochs
    block = 0
    while remaining > 0:
        chunk = min(cfg.q, remaining)
        sched.base_epochs(chunk)
        remaining -= chunk
        if chunk == cfg.q and finetune:
            sched.finetune_round()
        block += 1
        if out_dir:
            save_checkpoint(sched.state, os.path.join(out_dir, f"block_{block:03d}"),
                            step=sched.global_step)
    if out_dir:
        save_checkpoint(sched.state, os.path.join(out_dir, "final"),
                        step=sched.global_step)
        write_history(sched.history, os.path.join(out_dir, "history.csv"))
    return sched


def write_history(rows: Iterable[TrainLogRow], path: str) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["epoch", "stage", "l_d", "l_p_theta", "l_p_phi", "val_l_d", "lr"])
        for r in rows:
            wr.writerow([r.epoch, r.stage, repr(r.l_d), repr(r.l_p_theta),
                         repr(r.l_p_phi), repr(r.val_l_d), repr(r.lr)])
