"""The encoding and transition networks and their parameter-free baselines.

Encoder: a residual conv stack on the coarse observation window followed by
nearest-upsample+conv stages up to the fine grid, with observed pixels
written back over the output (gradients do not flow through the replaced
entries).  Transition: a spectral operator (truncated Fourier mode mixing
with a parallel 1x1 path) acting in fine-grid space.

All parameters live in a flat name->Tensor dict; encoder names start with
"encoder.", transition names with "transition.", so the two groups can be
updated independently.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from . import kvdoc
from .autodiff import Tensor
from .errors import (BindingError, MissingCheckpoint, ShapeError,
                     UnsupportedOperation, WindowError)
from .grid import ObservationSpec
from .tensorio import read_tensor, write_tensor


def _upsample_plan(s: int, n: int) -> List[int]:
    """Integer upsample factors taking extent s to >= n (crop follows)."""
    if s >= n:
        return []
    total = -(-n // s)
    factors = []
    for p in (2, 3, 5, 7):
        while total % p == 0:
            factors.append(p)
            total //= p
    if total > 1:
        factors.append(total)
    return sorted(factors)


@dataclass(frozen=True)
class EncoderConfig:
    n_frames: int = 2
    channels: int = 1
    coarse_shape: Tuple[int, int] = (4, 4)    # fine shape for irregular inputs
    out_shape: Tuple[int, int] = (16, 16)
    width: int = 16
    residual_blocks: int = 4
    dropout: float = 0.1
    irregular: bool = False
    # parameter-free upsampling of the newest frame added to the conv path's
    # output, so the network only has to learn corrections ("none" to disable;
    # unavailable for irregular observations)
    interp_skip: str = "bilinear"

    @property
    def in_channels(self) -> int:
        extra = 1 if self.irregular else 0     # binary observation mask
        return self.n_frames * self.channels + extra

    def stages(self) -> List[int]:
        if self.irregular:
            return []
        plan_y = _upsample_plan(self.coarse_shape[0], self.out_shape[0])
        plan_x = _upsample_plan(self.coarse_shape[1], self.out_shape[1])
        if plan_y != plan_x:
            raise ShapeError(f"anisotropic upsampling unsupported: {plan_y} vs {plan_x}")
        return plan_y


@dataclass(frozen=True)
class TransitionConfig:
    channels: int = 1
    grid_shape: Tuple[int, int] = (16, 16)
    layers: int = 4
    modes: int = 6
    width: int = 16

    def __post_init__(self):
        half = min(self.grid_shape) // 2
        if self.modes > half:
            object.__setattr__(self, "modes", half)


@dataclass
class ModelState:
    params: Dict[str, Tensor]
    encoder: EncoderConfig
    transition: TransitionConfig
    seed: int
    dtype: str = "f64"

    def theta(self) -> Dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("encoder.")}

    def phi(self) -> Dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("transition.")}

    def frozen(self) -> "ModelState":
        """A view with gradient tracking off (for evaluation passes)."""
        ps = {k: Tensor(v.value) for k, v in self.params.items()}
        return ModelState(ps, self.encoder, self.transition, self.seed, self.dtype)

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())


def _np_dtype(name: str):
    return np.float32 if name == "f32" else np.float64


def init_params(enc: EncoderConfig, trans: TransitionConfig, seed: int,
                dtype: str = "f64") -> ModelState:
    """Deterministic fan-in-scaled init; spectral weights scaled by 1/width^2."""
    rng = np.random.default_rng(seed)
    dt = _np_dtype(dtype)
    params: Dict[str, Tensor] = {}

    def conv(name, cin, cout, k=3):
        w = rng.standard_normal((cout, cin, k, k)) * np.sqrt(1.0 / (cin * k * k))
        params[name + ".w"] = ad.parameter(w.astype(dt), name + ".w")
        params[name + ".b"] = ad.parameter(np.zeros(cout, dtype=dt), name + ".b")

    def mix(name, cin, cout):
        w = rng.standard_normal((cout, cin)) * np.sqrt(1.0 / cin)
        params[name + ".w"] = ad.parameter(w.astype(dt), name + ".w")
        params[name + ".b"] = ad.parameter(np.zeros(cout, dtype=dt), name + ".b")

    conv("encoder.lift", enc.in_channels, enc.width)
    for i in range(enc.residual_blocks):
        conv(f"encoder.block{i}.conv1", enc.width, enc.width)
        conv(f"encoder.block{i}.conv2", enc.width, enc.width)
    for i, f in enumerate(enc.stages()):
        conv(f"encoder.up{i}", enc.width, enc.width)
    conv("encoder.head", enc.width, enc.channels)
    # the conv path refines the interpolation skip, so it starts as a no-op
    if enc.interp_skip != "none" and not enc.irregular:
        params["encoder.head.w"].value = np.zeros_like(params["encoder.head.w"].value)

    mix("transition.lift", trans.channels, trans.width)
    scale = 1.0 / (trans.width * trans.width)
    for i in range(trans.layers):
        wspec = scale * (rng.standard_normal((trans.width, trans.width,
                                              2 * trans.modes, trans.modes, 2)))
        params[f"transition.layer{i}.spec"] = ad.parameter(
            wspec.astype(dt), f"transition.layer{i}.spec")
        mix(f"transition.layer{i}.mix", trans.width, trans.width)
    mix("transition.proj", trans.width, trans.channels)

    return ModelState(params=params, encoder=enc, transition=trans, seed=seed, dtype=dtype)


def prepare_window_stack(frames: np.ndarray, t: int, n: int, spec: ObservationSpec,
                         out_shape: Tuple[int, int]) -> np.ndarray:
    """Assemble the encoder input for the window ending at frame t.

    Regular specs: channel-stacked coarse frames (n*c, sy, sx).  Irregular
    specs: frames scattered onto a zero fine grid plus a mask channel.
    """
    if t - n + 1 < 0:
        raise WindowError(f"window of {n} frames does not fit at t={t}")
    window = frames[t - n + 1: t + 1]
    if spec.kind == "regular":
        return np.concatenate(list(window), axis=0)
    rows, cols = spec.coords()
    c = window.shape[1]
    dense = np.zeros((window.shape[0] * c,) + tuple(out_shape), dtype=frames.dtype)
    for i, fr in enumerate(window):
        dense[i * c:(i + 1) * c, rows, cols] = fr
    mask = np.zeros((1,) + tuple(out_shape), dtype=frames.dtype)
    mask[0, rows, cols] = 1.0
    return np.concatenate([dense, mask], axis=0)


def encode(state: ModelState, stack, current_obs, spec: ObservationSpec,
           training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Window stack (B, in_ch, ...) -> learnable fine state (B, c, ny, nx).

    `current_obs` holds the newest frame's observed values (B, c, s...); they
    overwrite the network output at the observed coordinates, with gradients
    stopped through the replaced entries.
    """
    enc = state.encoder
    p = state.params
    dt = _np_dtype(state.dtype)
    x = ad.constant(np.asarray(ad.value_of(stack), dtype=dt))
    if x.value.ndim != 4 or x.value.shape[1] != enc.in_channels:
        raise WindowError(f"window stack shape {x.value.shape} does not match "
                          f"n_frames={enc.n_frames}, channels={enc.channels}")
    drop = enc.dropout if training else 0.0
    if drop > 0 and rng is None:
        raise BindingError("training-mode encode needs an RNG for dropout")

    x = ad.swish(ad.conv2d_circular(x, p["encoder.lift.w"], p["encoder.lift.b"]))
    for i in range(enc.residual_blocks):
        t = ad.swish(ad.conv2d_circular(x, p[f"encoder.block{i}.conv1.w"],
                                        p[f"encoder.block{i}.conv1.b"]))
        if drop > 0:
            t = ad.dropout(t, drop, rng)
        t = ad.conv2d_circular(t, p[f"encoder.block{i}.conv2.w"],
                               p[f"encoder.block{i}.conv2.b"])
        x = x + t
    for i, f in enumerate(enc.stages()):
        x = ad.upsample_nearest(x, f)
        x = ad.swish(ad.conv2d_circular(x, p[f"encoder.up{i}.w"], p[f"encoder.up{i}.b"]))
    ny, nx = enc.out_shape
    if x.value.shape[-2] < ny or x.value.shape[-1] < nx:
        raise ShapeError(f"upsample path produced {x.value.shape[-2:]}, need {(ny, nx)}")
    if x.value.shape[-2:] != (ny, nx):
        x = ad.crop2d(x, ny, nx)
    h = ad.conv2d_circular(x, p["encoder.head.w"], p["encoder.head.b"])
    if enc.interp_skip != "none" and not enc.irregular:
        base = interp_encode(enc.interp_skip,
                             np.asarray(ad.value_of(current_obs), dtype=dt),
                             spec, enc.out_shape)
        h = h + ad.constant(base)

    rows, cols = spec.coords()
    obs_flat = np.asarray(ad.value_of(current_obs), dtype=dt).reshape(
        h.value.shape[0], enc.channels, -1)
    return ad.scatter_replace(h, rows, cols, ad.stop_gradient(obs_flat))


def transition(state: ModelState, h) -> Tensor:
    """Advance a fine state one frame gap: (B, c, ny, nx) -> same shape."""
    tr = state.transition
    p = state.params
    x = ad.constant(h)
    if x.value.shape[-3:] != (tr.channels,) + tuple(tr.grid_shape):
        raise ShapeError(f"transition input {x.value.shape[-3:]} != "
                         f"{(tr.channels,) + tuple(tr.grid_shape)}")
    x = ad.channel_mix(x, p["transition.lift.w"], p["transition.lift.b"])
    ny, nx = tr.grid_shape
    for i in range(tr.layers):
        spec_out = ad.irfft2(ad.complex_mode_mul(ad.rfft2(x),
                                                 p[f"transition.layer{i}.spec"],
                                                 tr.modes), (ny, nx))
        mixed = ad.channel_mix(x, p[f"transition.layer{i}.mix.w"],
                               p[f"transition.layer{i}.mix.b"])
        x = spec_out + mixed
        if i < tr.layers - 1:
            x = ad.gelu(x)
    return ad.channel_mix(x, p["transition.proj.w"], p["transition.proj.b"])


def observe_graph(h, spec: ObservationSpec) -> Tensor:
    """Differentiable down-sampling: (B, c, ny, nx) -> (B, c, n_points)."""
    rows, cols = spec.coords()
    return ad.gather_points(ad.constant(h), rows, cols)


def predict(state: ModelState, stack, current_obs, spec: ObservationSpec) -> np.ndarray:
    """Full pipeline D(f(E(window))): returns the predicted next observation,
    shaped like one observed frame ((c, sy, sx) regular / (c, s) irregular)."""
    fs = state.frozen()
    h = encode(fs, stack, current_obs, spec)
    nxt = transition(fs, h)
    flat = observe_graph(nxt, spec).value
    out_shape = (state.encoder.channels,) + spec.coarse_shape
    return flat.reshape((flat.shape[0],) + out_shape)


def rollout_states(state: ModelState, stack0, current_obs0, spec: ObservationSpec,
                   k_steps: int) -> List[np.ndarray]:
    """Encode once, then roll the transition in fine-state space K times."""
    fs = state.frozen()
    h = encode(fs, stack0, current_obs0, spec)
    out = []
    for _ in range(k_steps):
        h = transition(fs, h)
        out.append(h.value)
    return out


# -- interpolation baselines ---------------------------------------------------

def _fine_params(n: int, gap: int, s: int) -> Tuple[np.ndarray, np.ndarray]:
    """Map fine index -> continuous coarse coordinate u in [0, s).

    Segments between coarse samples are affine; the wrap segment from the
    last sample back to index n is shorter when gap does not divide n.
    """
    i = np.arange(n, dtype=np.float64)
    j = np.minimum(i // gap, s - 1)
    seg_start = j * gap
    seg_len = np.where(j < s - 1, float(gap), float(n - (s - 1) * gap))
    u = j + (i - seg_start) / seg_len
    return u, j


def _interp_matrix(method: str, n: int, gap: int, s: int) -> np.ndarray:
    """Dense (n, s) periodic interpolation weights for one axis."""
    w = np.zeros((n, s))
    if method == "nearest":
        pos = np.arange(s) * gap
        for i in range(n):
            d = np.abs(pos - i)
            d = np.minimum(d, n - d)
            w[i, int(np.argmin(d))] = 1.0
        return w
    u, j = _fine_params(n, gap, s)
    t = u - j
    if method == "bilinear":
        for i in range(n):
            w[i, int(j[i]) % s] += 1.0 - t[i]
            w[i, (int(j[i]) + 1) % s] += t[i]
        return w
    if method == "bicubic":
        # Catmull-Rom weights on the 4-point neighborhood
        for i in range(n):
            tt = t[i]
            c = np.array([
                0.5 * (-tt + 2 * tt ** 2 - tt ** 3),
                0.5 * (2 - 5 * tt ** 2 + 3 * tt ** 3),
                0.5 * (tt + 4 * tt ** 2 - 3 * tt ** 3),
                0.5 * (-tt ** 2 + tt ** 3),
            ])
            for off, cv in zip((-1, 0, 1, 2), c):
                w[i, (int(j[i]) + off) % s] += cv
        return w
    raise UnsupportedOperation(f"unknown interpolation method {method!r}")


def interp_encode(method: str, coarse: np.ndarray, spec: ObservationSpec,
                  out_shape: Tuple[int, int]) -> np.ndarray:
    """Parameter-free periodic upsampling of the newest observed frame.

    coarse: (..., c, sy, sx) from a regular spec.  Methods: nearest,
    bilinear, bicubic (Catmull-Rom).
    """
    if spec.kind != "regular":
        raise UnsupportedOperation("interpolation encoders need a regular grid")
    sy, sx = spec.coarse_shape
    ny, nx = out_shape
    coarse = np.asarray(coarse)
    if coarse.shape[-2:] != (sy, sx):
        raise ShapeError(f"coarse shape {coarse.shape[-2:]} != spec {spec.coarse_shape}")
    wy = _interp_matrix(method, ny, spec.gap, sy)
    wx = _interp_matrix(method, nx, spec.gap, sx)
    return np.einsum("ij,...jk,lk->...il", wy, coarse, wx, optimize=True)


# -- checkpoints ----------------------------------------------------------------

_CKPT_HEADER = "checkpoint.toml"


def save_checkpoint(state: ModelState, dir_path: str, step: int = 0) -> None:
    os.makedirs(os.path.join(dir_path, "params"), exist_ok=True)
    enc, tr = state.encoder, state.transition
    names = sorted(state.params)
    doc = {
        "format": "partialpde-checkpoint-v1",
        "seed": state.seed,
        "dtype": state.dtype,
        "step": step,
        "param_names": names,
        # tensors are stored flat (the .rpl format carries rank <= 4)
        "param_shapes": [" ".join(map(str, state.params[n].value.shape))
                         for n in names],
        "encoder": {
            "n_frames": enc.n_frames, "channels": enc.channels,
            "coarse_ny": enc.coarse_shape[0], "coarse_nx": enc.coarse_shape[1],
            "out_ny": enc.out_shape[0], "out_nx": enc.out_shape[1],
            "width": enc.width, "residual_blocks": enc.residual_blocks,
            "dropout": enc.dropout, "irregular": enc.irregular,
            "interp_skip": enc.interp_skip,
        },
        "transition": {
            "channels": tr.channels, "ny": tr.grid_shape[0], "nx": tr.grid_shape[1],
            "layers": tr.layers, "modes": tr.modes, "width": tr.width,
        },
    }
    kvdoc.dump(doc, os.path.join(dir_path, _CKPT_HEADER))
    for name in names:
        write_tensor(os.path.join(dir_path, "params", name + ".rpl"),
                     state.params[name].value.reshape(-1))


def load_checkpoint(dir_path: str) -> ModelState:
    header = os.path.join(dir_path, _CKPT_HEADER)
    if not os.path.exists(header):
        raise MissingCheckpoint(f"no checkpoint at {dir_path}")
    doc = kvdoc.load(header)
    e, t = doc["encoder"], doc["transition"]
    enc = EncoderConfig(n_frames=int(e["n_frames"]), channels=int(e["channels"]),
                        coarse_shape=(int(e["coarse_ny"]), int(e["coarse_nx"])),
                        out_shape=(int(e["out_ny"]), int(e["out_nx"])),
                        width=int(e["width"]), residual_blocks=int(e["residual_blocks"]),
                        dropout=float(e["dropout"]), irregular=bool(e["irregular"]),
                        interp_skip=e.get("interp_skip", "bilinear"))
    tr = TransitionConfig(channels=int(t["channels"]),
                          grid_shape=(int(t["ny"]), int(t["nx"])),
                          layers=int(t["layers"]), modes=int(t["modes"]),
                          width=int(t["width"]))
    params = {}
    shapes = doc.get("param_shapes", [""] * len(doc["param_names"]))
    for name, shape_txt in zip(doc["param_names"], shapes):
        arr = read_tensor(os.path.join(dir_path, "params", name + ".rpl"))
        if shape_txt:
            arr = arr.reshape(tuple(int(s) for s in str(shape_txt).split()))
        params[name] = ad.parameter(arr, name)
    return ModelState(params=params, encoder=enc, transition=tr,
                      seed=int(doc["seed"]), dtype=doc["dtype"])
