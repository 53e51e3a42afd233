"""Define-by-run reverse-mode differentiation over dense numpy arrays.

Every operation eagerly computes its forward value and records a backward
closure, so a forward pass *is* graph construction.  `backward(scalar)`
then accumulates adjoints into every reachable leaf with requires_grad.

Provided primitives: elementwise arithmetic, square/sqrt/exp, reductions,
circular 2D convolution, 1x1 channel mixing, nearest-neighbor upsampling,
circular shifts, coordinate gather/scatter-replace, Swish/GeLU, dropout,
real 2D FFT and inverse with complex values stored as trailing (re, im)
pairs, complex multiply with Fourier-mode truncation, channel concat/slice,
and stop_gradient.  Complex data only ever flows between the FFT ops and
the mode-mixing op.

Determinism: identical inputs, parameters and RNG seeds produce bit-identical
forward and backward results (all kernels are plain numpy calls in a fixed
order).
"""

from __future__ import annotations

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .errors import ContractError, NumericalError, ShapeError


class Tensor:
    """A node in the computation graph: a value plus an adjoint slot."""

    __slots__ = ("value", "grad", "parents", "bwd", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value)
        self.grad: Optional[np.ndarray] = None
        self.parents: Tuple["Tensor", ...] = ()
        self.bwd = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape}, grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def constant(x, name: str = "") -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), name=name)


def parameter(x, name: str = "") -> Tensor:
    t = Tensor(np.array(x), requires_grad=True, name=name)
    return t


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def _node(value, parents: Sequence[Tensor], bwd) -> Tensor:
    req = any(p.requires_grad for p in parents)
    t = Tensor(value)
    if req:
        t.requires_grad = True
        t.parents = tuple(parents)
        t.bwd = bwd
    return t


def _accum(p: Tensor, g: np.ndarray) -> None:
    if not p.requires_grad:
        return
    if p.grad is None:
        p.grad = g.copy() if isinstance(g, np.ndarray) and g.base is not None else np.asarray(g)
    else:
        p.grad = p.grad + g


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.value + b.value

    def bwd(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return _node(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.value - b.value

    def bwd(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return _node(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.value * b.value

    def bwd(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return _node(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.value / b.value

    def bwd(g):
        _accum(a, _unbroadcast(g / b.value, a.value.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _node(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = constant(a)

    def bwd(g):
        _accum(a, -g)

    return _node(-a.value, (a,), bwd)


def square(a) -> Tensor:
    a = constant(a)

    def bwd(g):
        _accum(a, g * (2.0 * a.value))

    return _node(a.value * a.value, (a,), bwd)


def sqrt(a) -> Tensor:
    a = constant(a)
    out = np.sqrt(a.value)

    def bwd(g):
        _accum(a, g * (0.5 / out))

    return _node(out, (a,), bwd)


def exp(a) -> Tensor:
    a = constant(a)
    out = np.exp(a.value)

    def bwd(g):
        _accum(a, g * out)

    return _node(out, (a,), bwd)


# -- reductions --------------------------------------------------------------

def _restore_dims(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sumt(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        _accum(a, _restore_dims(g, a.value.shape, axis, keepdims).astype(a.value.dtype, copy=True))

    return _node(out, (a,), bwd)


def meant(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size / out.size

    def bwd(g):
        gg = _restore_dims(g, a.value.shape, axis, keepdims) / count
        _accum(a, gg.astype(a.value.dtype, copy=False))

    return _node(out, (a,), bwd)


def norm2(a, axis=None) -> Tensor:
    """Euclidean norm over the given axes (default: all)."""
    return sqrt(sumt(square(a), axis=axis))


# -- activations and dropout --------------------------------------------------

def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # exp overflow on very negative x saturates to the correct limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def swish(a) -> Tensor:
    a = constant(a)
    s = sigmoid_np(a.value)
    out = a.value * s

    def bwd(g):
        _accum(a, g * (s + a.value * s * (1.0 - s)))

    return _node(out, (a,), bwd)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    a = constant(a)
    x = a.value
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _accum(a, g * (phi + x * pdf).astype(x.dtype, copy=False))

    return _node(out.astype(x.dtype, copy=False), (a,), bwd)


def dropout(a, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the mask is drawn once and reused in backward."""
    a = constant(a)
    if p <= 0.0:
        return a
    keep = (rng.random(a.value.shape) >= p).astype(a.value.dtype)
    scale = 1.0 / (1.0 - p)
    mask = keep * scale
    out = a.value * mask

    def bwd(g):
        _accum(a, g * mask)

    return _node(out, (a,), bwd)


def stop_gradient(a) -> Tensor:
    """Identity value with zero adjoint flow into the input."""
    a = constant(a)
    return Tensor(a.value)


def reshape(a, shape) -> Tensor:
    a = constant(a)
    orig = a.value.shape

    def bwd(g):
        _accum(a, g.reshape(orig))

    return _node(a.value.reshape(shape), (a,), bwd)


def cast(a, dtype) -> Tensor:
    a = constant(a)
    src = a.value.dtype
    out = a.value.astype(dtype)

    def bwd(g):
        _accum(a, g.astype(src))

    return _node(out, (a,), bwd)


# -- structural ops -----------------------------------------------------------

def roll(a, shift: int, axis: int) -> Tensor:
    a = constant(a)

    def bwd(g):
        _accum(a, np.roll(g, -shift, axis=axis))

    return _node(np.roll(a.value, shift, axis=axis), (a,), bwd)


def concat(parts: Iterable, axis: int = -3) -> Tensor:
    parts = [constant(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis % g.ndim] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _node(out, tuple(parts), bwd)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = constant(a)
    nd = a.value.ndim
    ax = axis % nd
    idx = [slice(None)] * nd
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        gg = np.zeros_like(a.value)
        gg[idx] = g
        _accum(a, gg)

    return _node(a.value[idx], (a,), bwd)


def crop2d(a, ny: int, nx: int) -> Tensor:
    """Keep the top-left (ny, nx) window of the last two axes."""
    a = constant(a)

    def bwd(g):
        gg = np.zeros_like(a.value)
        gg[..., :ny, :nx] = g
        _accum(a, gg)

    return _node(a.value[..., :ny, :nx], (a,), bwd)


def upsample_nearest(a, factor: int) -> Tensor:
    a = constant(a)
    out = np.repeat(np.repeat(a.value, factor, axis=-2), factor, axis=-1)

    def bwd(g):
        lead = g.shape[:-2]
        h, w = a.value.shape[-2:]
        gg = g.reshape(lead + (h, factor, w, factor)).sum(axis=(-3, -1))
        _accum(a, gg)

    return _node(out, (a,), bwd)


def gather_points(a, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Sample (..., H, W) at a coordinate list -> (..., s)."""
    a = constant(a)
    out = a.value[..., rows, cols]

    def bwd(g):
        gg = np.zeros_like(a.value)
        np.add.at(gg, (Ellipsis, rows, cols), g)
        _accum(a, gg)

    return _node(out, (a,), bwd)


def scatter_replace(a, rows: np.ndarray, cols: np.ndarray, v) -> Tensor:
    """Overwrite (..., H, W) entries at a coordinate list with v (..., s).

    The adjoint into `a` is zero at the replaced coordinates; the adjoint
    into `v` is the gradient sampled there.
    """
    a, v = constant(a), constant(v)
    out = a.value.copy()
    out[..., rows, cols] = v.value

    def bwd(g):
        ga = g.copy()
        ga[..., rows, cols] = 0.0
        _accum(a, ga)
        _accum(v, g[..., rows, cols])

    return _node(out, (a, v), bwd)


# -- conv / dense mixing ------------------------------------------------------

def _wrap_pad(x: np.ndarray, py: int, px: int) -> np.ndarray:
    a = np.concatenate([x[..., -py:, :], x, x[..., :py, :]], axis=-2)
    return np.concatenate([a[..., -px:], a, a[..., :px]], axis=-1)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Channel-major patch matrix (Ci*kh*kw, B*H*W) for a circular conv."""
    b, ci, h, wd = x.shape
    xp = _wrap_pad(x, kh // 2, kw // 2)
    cols = np.empty((ci, kh, kw, b, h, wd), x.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, u, v] = xp[:, :, u:u + h, v:v + wd].transpose(1, 0, 2, 3)
    return cols.reshape(ci * kh * kw, b * h * wd)


def _conv2d_forward(x: np.ndarray, w: np.ndarray):
    """Circular conv, stride 1, odd kernel. x (B,Ci,H,W), w (Co,Ci,kh,kw)."""
    b, ci, h, wd = x.shape
    co, ci2, kh, kw = w.shape
    if ci != ci2:
        raise ShapeError(f"conv channels mismatch: input {ci}, kernel {ci2}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv kernel must be odd")
    cols = _im2col(x, kh, kw)
    out = (w.reshape(co, -1) @ cols).reshape(co, b, h, wd)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), cols


def conv2d_circular(x, w, bias=None) -> Tensor:
    x, w = constant(x), constant(w)
    bias = constant(bias) if bias is not None else None
    out, cols = _conv2d_forward(x.value, w.value)
    if bias is not None:
        out = out + bias.value[None, :, None, None]
    parents = (x, w) if bias is None else (x, w, bias)
    kshape = w.value.shape
    b, co, h, wd = out.shape

    def bwd(g):
        if w.requires_grad:
            g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, -1)
            _accum(w, (g2 @ cols.T).reshape(kshape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            wt = np.ascontiguousarray(w.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            dx, _ = _conv2d_forward(g, wt)
            _accum(x, dx)

    return _node(out, parents, bwd)


def stencil_axis(x, offsets: Sequence[int], coeffs: np.ndarray, axis: int) -> Tensor:
    """Fused periodic stencil: sum_k coeffs[k] * roll(x, -offsets[k], axis).

    The adjoint is the stencil with negated offsets (same coefficients).
    """
    x = constant(x)
    v = x.value
    coeffs = np.asarray(coeffs, dtype=v.dtype)
    out = coeffs[0] * np.roll(v, -offsets[0], axis=axis)
    for off, c in zip(offsets[1:], coeffs[1:]):
        tmp = np.roll(v, -off, axis=axis)
        tmp *= c
        out += tmp

    def bwd(g):
        dx = coeffs[0] * np.roll(g, offsets[0], axis=axis)
        for off, c in zip(offsets[1:], coeffs[1:]):
            tmp = np.roll(g, off, axis=axis)
            tmp *= c
            dx += tmp
        _accum(x, dx)

    return _node(out, (x,), bwd)


def _cd4_val(v: np.ndarray, axis: int, order: int, h: float, flip: bool) -> np.ndarray:
    """4th-order central difference in difference form (exact 0 on constants)."""
    if order == 1:
        s = -1.0 if flip else 1.0
        d1 = np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)
        d2 = np.roll(v, -2, axis=axis) - np.roll(v, 2, axis=axis)
        out = 8.0 * d1
        out -= d2
        out *= s / (12.0 * h)
        return out
    c1 = (np.roll(v, -1, axis=axis) - v) + (np.roll(v, 1, axis=axis) - v)
    c2 = (np.roll(v, -2, axis=axis) - v) + (np.roll(v, 2, axis=axis) - v)
    out = 16.0 * c1
    out -= c2
    out *= 1.0 / (12.0 * h * h)
    return out


def central_diff4(x, axis: int, order: int, h: float) -> Tensor:
    """Differentiable 4th-order central difference along a periodic axis.

    order 1: (-f[+2] + 8 f[+1] - 8 f[-1] + f[-2]) / (12 h)
    order 2: (-f[+2] + 16 f[+1] - 30 f + 16 f[-1] - f[-2]) / (12 h^2)
    The adjoint is the same stencil (order 2) or its negation (order 1).
    """
    x = constant(x)
    out = _cd4_val(x.value, axis, order, h, flip=False)

    def bwd(g):
        _accum(x, _cd4_val(g, axis, order, h, flip=(order == 1)))

    return _node(out, (x,), bwd)


def channel_mix(x, w, bias=None) -> Tensor:
    """1x1 channel mixing: x (B,Ci,H,W), w (Co,Ci) -> (B,Co,H,W)."""
    x, w = constant(x), constant(w)
    bias = constant(bias) if bias is not None else None
    b, ci, h, wd = x.value.shape
    x2 = np.ascontiguousarray(x.value.transpose(0, 2, 3, 1)).reshape(-1, ci)
    out = x2 @ w.value.T
    co = w.value.shape[0]
    if bias is not None:
        out = out + bias.value
    out = out.reshape(b, h, wd, co).transpose(0, 3, 1, 2)
    parents = (x, w) if bias is None else (x, w, bias)

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, co)
        if w.requires_grad:
            _accum(w, g2.T @ x2)
        if bias is not None and bias.requires_grad:
            _accum(bias, g2.sum(axis=0))
        if x.requires_grad:
            dx = (g2 @ w.value).reshape(b, h, wd, ci).transpose(0, 3, 1, 2)
            _accum(x, np.ascontiguousarray(dx))

    return _node(np.ascontiguousarray(out), parents, bwd)


# -- Fourier ops --------------------------------------------------------------
# Complex arrays are carried as real arrays with a trailing (re, im) axis.
# Transforms on grids up to _DFT_MAX points per axis go through cached DFT
# matrices (BLAS); larger grids fall back to pocketfft.

_DFT_MAX = 64
_DFT_CACHE: dict = {}


def _dft_mats(h: int, w: int, ctype):
    key = (h, w, np.dtype(ctype).name)
    mats = _DFT_CACHE.get(key)
    if mats is None:
        wf = w // 2 + 1
        mh = np.arange(h)
        nw = np.arange(w)
        fh = np.exp(-2j * np.pi * np.outer(mh, mh) / h).astype(ctype)       # (h,h)
        eh = np.conj(fh)                                                     # e^{+i...}
        fwt = np.exp(-2j * np.pi * np.outer(nw, np.arange(wf)) / w).astype(ctype)  # (w,wf)
        cwt = np.conj(fwt).T.copy()                                          # (wf,w)
        dup = np.full(wf, 2.0)
        dup[0] = 1.0
        if w % 2 == 0:
            dup[-1] = 1.0
        gwt = (cwt * (dup / (h * w))[:, None]).astype(ctype)                 # (wf,w)
        mats = (fh, eh, fwt, cwt.astype(ctype), gwt)
        _DFT_CACHE[key] = mats
    return mats


def _ctype(dtype) -> type:
    return np.complex64 if np.dtype(dtype) == np.float32 else np.complex128


def _rfft2_val(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    if max(h, w) > _DFT_MAX:
        return np.fft.rfft2(x)
    fh, _, fwt, _, _ = _dft_mats(h, w, _ctype(x.dtype))
    return np.matmul(fh, np.matmul(x.astype(fh.dtype), fwt))


def _irfft2_val(xc: np.ndarray, h: int, w: int) -> np.ndarray:
    if max(h, w) > _DFT_MAX:
        return np.fft.irfft2(xc, s=(h, w))
    _, eh, _, _, gwt = _dft_mats(h, w, xc.dtype if xc.dtype.kind == "c" else _ctype(xc.dtype))
    return np.matmul(np.matmul(eh, xc), gwt).real


def _rfft2_adjoint(gc: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adjoint of the truncated real FFT: Re(sum_k g_k e^{+2pi i k.n/N})."""
    if max(h, w) > _DFT_MAX:
        full = np.zeros(gc.shape[:-2] + (h, w), dtype=np.complex128)
        full[..., :, : w // 2 + 1] = gc
        return np.fft.ifft2(full).real * (h * w)
    _, eh, _, cwt, _ = _dft_mats(h, w, gc.dtype if gc.dtype.kind == "c" else _ctype(gc.dtype))
    return np.matmul(np.matmul(eh, gc), cwt).real


def _pairs(z: np.ndarray, dtype) -> np.ndarray:
    out = np.empty(z.shape + (2,), dtype=dtype)
    out[..., 0] = z.real
    out[..., 1] = z.imag
    return out


def _complex(p: np.ndarray) -> np.ndarray:
    z = p[..., 0].astype(_ctype(p.dtype))
    z += 1j * p[..., 1]
    return z


def rfft2(a) -> Tensor:
    """Real 2D FFT of the last two axes -> (..., H, W//2+1, 2) re/im pairs."""
    a = constant(a)
    h, w = a.value.shape[-2:]
    out = _pairs(_rfft2_val(a.value), a.value.dtype)

    def bwd(g):
        dx = _rfft2_adjoint(_complex(g), h, w)
        _accum(a, dx.astype(a.value.dtype, copy=False))

    return _node(out, (a,), bwd)


def irfft2(a, shape: Tuple[int, int]) -> Tensor:
    """Inverse of rfft2: (..., H, W//2+1, 2) pairs -> real (..., H, W)."""
    a = constant(a)
    h, w = shape
    out = _irfft2_val(_complex(a.value), h, w).astype(a.value.dtype, copy=False)

    def bwd(g):
        gc = _rfft2_val(g)
        scale = np.full(w // 2 + 1, 2.0 / (h * w))
        scale[0] = 1.0 / (h * w)
        if w % 2 == 0:
            scale[-1] = 1.0 / (h * w)
        gc = gc * scale
        _accum(a, _pairs(gc, a.value.dtype))

    return _node(out, (a,), bwd)


def complex_mode_mul(a, w, modes: int) -> Tensor:
    """Complex channel mixing on a truncated block of Fourier modes.

    a: (B, Ci, H, Wf, 2) pairs from rfft2; w: (Ci, Co, 2*modes, modes, 2).
    Output modes outside |ky| < modes, kx < modes are zero.
    """
    a, w = constant(a), constant(w)
    bsz, ci, h, wf, _ = a.value.shape
    m = modes
    if 2 * m > h or m > wf:
        raise ShapeError(f"modes {m} too large for spectrum ({h}, {wf})")
    rows = np.r_[0:m, h - m:h]
    ctype = _ctype(a.value.dtype)
    ac = _complex(a.value)[:, :, rows, :m]            # (B, Ci, 2m, m)
    wc = _complex(w.value)                            # (Ci, Co, 2m, m)
    # batched over modes: (2m, m, B, Ci) @ (2m, m, Ci, Co)
    a_modes = np.ascontiguousarray(ac.transpose(2, 3, 0, 1))
    w_modes = np.ascontiguousarray(wc.transpose(2, 3, 0, 1))
    outk = np.matmul(a_modes, w_modes)                # (2m, m, B, Co)
    co = w.value.shape[1]
    out = np.zeros((bsz, co, h, wf), dtype=ctype)
    out[:, :, rows, :m] = outk.transpose(2, 3, 0, 1)

    def bwd(g):
        gc = _complex(g)[:, :, rows, :m]
        g_modes = np.ascontiguousarray(gc.transpose(2, 3, 0, 1))   # (2m,m,B,Co)
        if a.requires_grad:
            da_k = np.matmul(g_modes, np.conj(w_modes).transpose(0, 1, 3, 2))
            da = np.zeros((bsz, ci, h, wf), dtype=ctype)
            da[:, :, rows, :m] = da_k.transpose(2, 3, 0, 1)
            _accum(a, _pairs(da, a.value.dtype))
        if w.requires_grad:
            dw = np.matmul(np.conj(a_modes).transpose(0, 1, 3, 2), g_modes)
            _accum(w, _pairs(dw.transpose(2, 3, 0, 1), w.value.dtype))

    return _node(_pairs(out, a.value.dtype), (a, w), bwd)


# -- engine -------------------------------------------------------------------

def _topo(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad of every reachable leaf."""
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    order = _topo(root)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.bwd is not None and node.grad is not None:
            node.bwd(node.grad)
            if node is not root:
                node.grad = None  # free intermediate adjoints


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f, params: Sequence[Tensor], eps: float = 1e-6,
               max_probes: int = 200, seed: int = 0) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Probes a random subset of parameter coordinates (at most `max_probes`
    per parameter, capped at 5000 total).
    """
    zero_grads(params)
    out = f()
    if not np.all(np.isfinite(out.value)):
        raise NumericalError("non-finite output in grad_check")
    backward(out)
    ad_grads = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    zero_grads(params)

    rng = np.random.default_rng(seed)
    budget = 5000
    worst = 0.0
    for p, ga in zip(params, ad_grads):
        n = p.value.size
        k = min(max_probes, n, budget)
        if k <= 0:
            continue
        budget -= k
        flat_idx = rng.choice(n, size=k, replace=False) if k < n else np.arange(n)
        flat = p.value.reshape(-1)
        gflat = ga.reshape(-1)
        for idx in flat_idx:
            orig = flat[idx]
            flat[idx] = orig + eps
            f1 = float(f().value)
            flat[idx] = orig - eps
            f2 = float(f().value)
            flat[idx] = orig
            if not (np.isfinite(f1) and np.isfinite(f2)):
                raise NumericalError("non-finite probe in grad_check")
            fd = (f1 - f2) / (2.0 * eps)
            g = float(gflat[idx])
            rel = abs(g - fd) / max(abs(g), abs(fd), 1e-12)
            worst = max(worst, rel)
    return worst
