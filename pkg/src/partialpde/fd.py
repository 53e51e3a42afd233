"""Fourth-order periodic finite differences, RK4 stepping, and the PDE residual.

Everything here is written against the autodiff Tensor type, so the same
stencil/stepping code serves both the data generator (constants, no graph)
and the differentiable residual loss.  States are (..., C, H, W); the H axis
is y, the W axis is x, on the unit square with dx = 1/W, dy = 1/H.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import GridTooSmall, NumericalError


def _extent(x, axis: int) -> int:
    return ad.value_of(x).shape[axis]


def central_diff(f, axis: int, deriv_order: int, h: float) -> Tensor:
    """4th-order central difference along `axis` (periodic wrap).

    deriv_order 1: (-f[+2] + 8 f[+1] - 8 f[-1] + f[-2]) / (12 h)
    deriv_order 2: (-f[+2] + 16 f[+1] - 30 f + 16 f[-1] - f[-2]) / (12 h^2)
    where f[+k] is the value k grid points ahead along the axis.
    """
    if _extent(f, axis) < 5:
        raise GridTooSmall(f"axis extent {_extent(f, axis)} < 5 for 4th-order stencil")
    if deriv_order not in (1, 2):
        raise NumericalError(f"unsupported derivative order {deriv_order}")
    return ad.central_diff4(ad.constant(f), axis, deriv_order, h)


def ddx(f, dx: float) -> Tensor:
    return central_diff(f, -1, 1, dx)


def ddy(f, dy: float) -> Tensor:
    return central_diff(f, -2, 1, dy)


def d2dx2(f, dx: float) -> Tensor:
    return central_diff(f, -1, 2, dx)


def d2dy2(f, dy: float) -> Tensor:
    return central_diff(f, -2, 2, dy)


def laplacian(f, dx: float, dy: float) -> Tensor:
    """Sum of the 4th-order second-derivative stencils along x and y."""
    return d2dx2(f, dx) + d2dy2(f, dy)


@dataclass(frozen=True)
class StepContext:
    """Everything rk4 needs: the step width and the system's tendency function."""
    w: float
    dx: float
    dy: float
    system: object  # a system from pde_bank (needs .rhs, optional .post_step)


def rk4_step(ctx: StepContext, psi) -> Tensor:
    """One classical RK4 step of the autonomous tendency d(psi)/dt = P(psi).

    Systems may define post_step(psi_t, psi_raw) to enforce constraints on
    the stepped state (the incompressible-flow system projects velocity
    there); the default is the plain RK4 update.
    """
    psi = ad.constant(psi)
    w = ctx.w
    rhs = lambda s: ctx.system.rhs(s, ctx.dx, ctx.dy)
    k1 = rhs(psi)
    k2 = rhs(psi + (w / 2.0) * k1)
    k3 = rhs(psi + (w / 2.0) * k2)
    k4 = rhs(psi + w * k3)
    for i, k in enumerate((k1, k2, k3, k4)):
        if not np.all(np.isfinite(ad.value_of(k))):
            raise NumericalError(f"non-finite RK4 stage k{i + 1}")
    out = psi + (w / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    post = getattr(ctx.system, "post_step", None)
    if post is not None:
        out = post(psi, out, ctx)
    return out


def residual_F(ctx: StepContext, psi_t, psi_next) -> Tensor:
    """One-step discretization residual between two states tau = ctx.w apart.

    States use the system's IO channel convention; systems with distinct
    prognostic variables convert internally.  Zero (to roundoff) exactly when
    the pair was produced by rk4_step with the same context.
    """
    return residual_pair(ctx, psi_t, [psi_next])[0]


def residual_pair(ctx: StepContext, psi_t, targets) -> list:
    """Residuals of several candidate next-states against one shared RK4 step.

    Equivalent to [residual_F(ctx, psi_t, y) for y in targets] but evaluates
    the step from psi_t only once.
    """
    psi_t = ad.constant(psi_t)
    sys_ = ctx.system
    to_prog = getattr(sys_, "to_prognostic", None)
    extras = getattr(sys_, "residual_extras", None)
    stepped = rk4_step(ctx, to_prog(psi_t) if to_prog else psi_t)
    out = []
    for y in targets:
        y = ad.constant(y)
        pn = to_prog(y) if to_prog else y
        res = stepped - pn
        if extras is not None:
            res = ad.concat([res, extras(pn, ctx)], axis=-3)
        out.append(res)
    return out


def pde_loss(residual) -> Tensor:
    """Mean of squared residual entries (resolution-independent weighting).

    The reduction is done in float64 regardless of the residual's dtype so
    reported loss components combine exactly.
    """
    return ad.meant(ad.square(ad.cast(residual, np.float64)))


# -- spectral helpers ----------------------------------------------------------

def stencil_symbol_d1(n: int, h: float) -> np.ndarray:
    """Fourier symbol of the 4th-order first-derivative stencil (imag part)."""
    theta = 2.0 * np.pi * np.fft.fftfreq(n)
    return (8.0 * np.sin(theta) - np.sin(2.0 * theta)) / (6.0 * h)


def stencil_symbol_d2(n: int, h: float) -> np.ndarray:
    """Fourier symbol of the 4th-order second-derivative stencil (real)."""
    theta = 2.0 * np.pi * np.fft.fftfreq(n)
    return (-2.0 * np.cos(2.0 * theta) + 32.0 * np.cos(theta) - 30.0) / (12.0 * h * h)


def spectral_poisson(rhs, dx: float, dy: float):
    """Solve lap(p) = rhs on the periodic grid, where lap is the discrete
    4th-order Laplacian (`laplacian` above); the solution has zero mean.

    The right-hand side's mean is removed internally (solvability).
    Differentiable; returns an array when given an array.
    """
    was_array = not isinstance(rhs, ad.Tensor)
    rhs = ad.constant(rhs)
    dtype = rhs.value.dtype
    h, w = rhs.value.shape[-2:]
    sx = stencil_symbol_d2(w, dx)[: w // 2 + 1]
    sy = stencil_symbol_d2(h, dy)
    denom = (sy[:, None] + sx[None, :])
    denom[0, 0] = 1.0
    inv = (1.0 / denom).astype(dtype)
    inv[0, 0] = 0.0
    centered = rhs - ad.meant(rhs, axis=(-2, -1), keepdims=True)
    phat = ad.rfft2(centered) * inv[..., None]
    p = ad.irfft2(phat, (h, w))
    return p.value if was_array else p


def divergence(ux, uy, dx: float, dy: float) -> Tensor:
    """Discrete divergence with the 4th-order first-derivative stencils."""
    return ddx(ux, dx) + ddy(uy, dy)


def project_div_free(ux, uy, dx: float, dy: float) -> Tuple[Tensor, Tensor, Tensor]:
    """Remove the discretely-divergent part of a velocity field.

    Solves lap1(chi) = div(u) where lap1 is the composition of the
    first-derivative stencils (so the corrected field has exactly zero
    discrete divergence, mode by mode), and returns (ux', uy', chi).
    Differentiable; works on (..., H, W) Tensors or arrays.
    """
    ux = ad.constant(ux)
    uy = ad.constant(uy)
    dt_ = ux.value.dtype
    h, w = ux.value.shape[-2:]
    s1x = stencil_symbol_d1(w, dx)[: w // 2 + 1].astype(dt_)  # rfft keeps kx in [0, w//2]
    s1y = stencil_symbol_d1(h, dy).astype(dt_)
    lam_x = s1x[None, :] ** 2
    lam_y = (s1y ** 2)[:, None]
    denom = lam_x + lam_y                          # symbol of -lap1
    safe = denom.copy()
    safe[safe == 0.0] = 1.0
    inv = np.where(denom == 0.0, 0.0, -1.0 / safe).astype(dt_)

    div = divergence(ux, uy, dx, dy)
    dhat = ad.rfft2(div)                            # (..., H, Wf, 2)
    # lap1(chi) = div  ->  chi_hat = -div_hat / (s1x^2 + s1y^2), zero on the
    # stencil's null modes (their divergence contribution is already zero)
    chat = dhat * inv[..., None]
    # grad components in Fourier space: i*s1 * chi_hat  ->  (re,im) rotate
    def mul_i_s(p, s):
        re = ad.slice_axis(p, -1, 0, 1)
        im = ad.slice_axis(p, -1, 1, 2)
        return ad.concat([-1.0 * im * s[..., None], re * s[..., None]], axis=-1)

    gx_hat = mul_i_s(chat, s1x[None, :])
    gy_hat = mul_i_s(chat, s1y[:, None])
    ux_p = ux - ad.irfft2(gx_hat, (h, w))
    uy_p = uy - ad.irfft2(gy_hat, (h, w))
    chi = ad.irfft2(chat, (h, w))
    return ux_p, uy_p, chi
