"""Tendency evaluators for the five benchmark systems.

Each system exposes:
  id, channels           -- IO convention (what datasets and models carry)
  rhs(psi, dx, dy)       -- d(psi)/dt with 4th-order stencils, autonomous
plus optional hooks used by fd.rk4_step / fd.residual_F:
  to_prognostic / from_prognostic  -- change of variables for stepping
  post_step(psi_t, psi_raw, ctx)   -- constraint enforcement after a step
  residual_extras(psi_next, ctx)   -- extra residual channels

IO channel layouts: burgers (u); wave (phi, v) with v = d(phi)/dt; nse
(ux, uy, p); lswe (ux, uy, h); nswe (ux, uy, h) stepped internally in
conservative variables (h, h*ux, h*uy).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from . import fd
from .errors import ChannelError, NumericalError


def _ch(psi, i: int):
    return ad.slice_axis(psi, -3, i, i + 1)


def _check_channels(system, psi) -> None:
    c = ad.value_of(psi).shape[-3]
    if c != system.channels:
        raise ChannelError(f"{system.id} expects {system.channels} channels, got {c}")


@dataclass(frozen=True)
class BurgersSystem:
    nu: float = 0.02
    id: str = field(default="burgers", init=False)
    channels: int = field(default=1, init=False)

    def rhs(self, psi, dx, dy):
        _check_channels(self, psi)
        u = psi
        flux = 0.5 * ad.square(u)
        return -fd.ddx(flux, dx) - fd.ddy(flux, dy) + self.nu * fd.laplacian(u, dx, dy)

    def params(self) -> Dict[str, float]:
        return {"nu": self.nu}


@dataclass(frozen=True)
class WaveSystem:
    """Second-order wave equation as the first-order system (phi, v):
    d(phi)/dt = v, d(v)/dt = c^2 lap(phi).  The velocity field of the
    underlying physics is u = -grad(phi) (see `velocity`)."""

    c: float = 1.0
    id: str = field(default="wave", init=False)
    channels: int = field(default=2, init=False)

    def rhs(self, psi, dx, dy):
        _check_channels(self, psi)
        phi, v = _ch(psi, 0), _ch(psi, 1)
        dphi = v
        dv = (self.c * self.c) * fd.laplacian(phi, dx, dy)
        return ad.concat([dphi, dv], axis=-3)

    def velocity(self, phi, dx, dy):
        return ad.concat([-1.0 * fd.ddx(phi, dx), -1.0 * fd.ddy(phi, dy)], axis=-3)

    def params(self) -> Dict[str, float]:
        return {"c": self.c}


@dataclass(frozen=True, eq=False)
class NseSystem:
    """Incompressible flow with channels (ux, uy, p).

    The momentum tendency uses the stored pressure; rk4_step's post hook then
    projects the stepped velocity to zero discrete divergence and advances
    the pressure by the projection increment, so adjacent generated frames
    zero the one-step residual exactly.  An extra residual channel carries
    the discrete divergence of the target state (continuity).
    """

    rho: float = 1.0
    nu: float = 0.02
    fx: Optional[np.ndarray] = None
    fy: Optional[np.ndarray] = None
    id: str = field(default="nse", init=False)
    channels: int = field(default=3, init=False)

    def rhs(self, psi, dx, dy):
        _check_channels(self, psi)
        ux, uy, p = _ch(psi, 0), _ch(psi, 1), _ch(psi, 2)
        adv_x = ux * fd.ddx(ux, dx) + uy * fd.ddy(ux, dy)
        adv_y = ux * fd.ddx(uy, dx) + uy * fd.ddy(uy, dy)
        du = -1.0 * adv_x - (1.0 / self.rho) * fd.ddx(p, dx) + self.nu * fd.laplacian(ux, dx, dy)
        dv = -1.0 * adv_y - (1.0 / self.rho) * fd.ddy(p, dy) + self.nu * fd.laplacian(uy, dx, dy)
        if self.fx is not None:
            du = du + self.fx
        if self.fy is not None:
            dv = dv + self.fy
        dp = 0.0 * p
        return ad.concat([du, dv, dp], axis=-3)

    def pressure_from_velocity(self, ux, uy, dx, dy):
        """Pressure Poisson equation: lap(p) = -rho * div(u . grad u) + rho * div(f).

        For a discretely divergence-free velocity the viscous contribution
        drops out exactly (the stencils commute), so this is the consistent
        pressure of the projected state.
        """
        adv_x = ux * fd.ddx(ux, dx) + uy * fd.ddy(ux, dy)
        adv_y = ux * fd.ddx(uy, dx) + uy * fd.ddy(uy, dy)
        rhs = -self.rho * fd.divergence(adv_x, adv_y, dx, dy)
        if self.fx is not None:
            rhs = rhs + self.rho * fd.divergence(ad.constant(self.fx),
                                                 ad.constant(self.fy if self.fy is not None
                                                             else np.zeros_like(self.fx)),
                                                 dx, dy)
        return fd.spectral_poisson(rhs, dx, dy)

    def post_step(self, psi_t, psi_raw, ctx):
        ux, uy = _ch(psi_raw, 0), _ch(psi_raw, 1)
        ux_p, uy_p, _chi = fd.project_div_free(ux, uy, ctx.dx, ctx.dy)
        p_new = self.pressure_from_velocity(ux_p, uy_p, ctx.dx, ctx.dy)
        return ad.concat([ux_p, uy_p, p_new], axis=-3)

    def residual_extras(self, psi_next, ctx):
        ux, uy = _ch(psi_next, 0), _ch(psi_next, 1)
        return fd.divergence(ux, uy, ctx.dx, ctx.dy)

    def params(self) -> Dict[str, float]:
        return {"rho": self.rho, "nu": self.nu}


@dataclass(frozen=True)
class LsweSystem:
    H: float = 1.0
    f: float = 0.0
    g: float = 1.0
    id: str = field(default="lswe", init=False)
    channels: int = field(default=3, init=False)

    def rhs(self, psi, dx, dy):
        _check_channels(self, psi)
        ux, uy, h = _ch(psi, 0), _ch(psi, 1), _ch(psi, 2)
        du = self.f * uy - self.g * fd.ddx(h, dx)
        dv = -self.f * ux - self.g * fd.ddy(h, dy)
        dh = -self.H * (fd.ddx(ux, dx) + fd.ddy(uy, dy))
        return ad.concat([du, dv, dh], axis=-3)

    def params(self) -> Dict[str, float]:
        return {"H": self.H, "f": self.f, "g": self.g}


@dataclass(frozen=True, eq=False)
class NsweSystem:
    """Nonlinear shallow water in conservative variables (h, h*ux, h*uy).

    IO states carry (ux, uy, h); conversion happens at the step boundary.
    `z` is the (optionally uneven) bottom height field.
    """

    nu: float = 0.02
    f: float = 0.0
    g: float = 1.0
    z: Optional[np.ndarray] = None
    z_std: float = 0.0
    z_seed: int = 0
    id: str = field(default="nswe", init=False)
    channels: int = field(default=3, init=False)

    def to_prognostic(self, psi):
        ux, uy, h = _ch(psi, 0), _ch(psi, 1), _ch(psi, 2)
        return ad.concat([h, h * ux, h * uy], axis=-3)

    def from_prognostic(self, prog):
        h, hu, hv = _ch(prog, 0), _ch(prog, 1), _ch(prog, 2)
        return ad.concat([hu / h, hv / h, h], axis=-3)

    def rhs(self, prog, dx, dy):
        _check_channels(self, prog)
        h, hu, hv = _ch(prog, 0), _ch(prog, 1), _ch(prog, 2)
        u = hu / h
        v = hv / h
        half_gh2 = (0.5 * self.g) * ad.square(h)
        dh = -1.0 * fd.ddx(hu, dx) - fd.ddy(hv, dy)
        dhu = (-1.0 * fd.ddx(hu * u + half_gh2, dx) - fd.ddy(hu * v, dy)
               + self.nu * fd.laplacian(u, dx, dy) - self.f * v)
        dhv = (-1.0 * fd.ddx(hv * u, dx) - fd.ddy(hv * v + half_gh2, dy)
               + self.nu * fd.laplacian(v, dx, dy) + self.f * u)
        if self.z is not None:
            dhu = dhu + (self.g * h) * fd.ddx(ad.constant(self.z), dx)
            dhv = dhv + (self.g * h) * fd.ddy(ad.constant(self.z), dy)
        return ad.concat([dh, dhu, dhv], axis=-3)

    def params(self) -> Dict[str, float]:
        return {"nu": self.nu, "f": self.f, "g": self.g,
                "z_std": self.z_std, "z_seed": float(self.z_seed)}


class PerturbedSystem:
    """Wraps a system with a frozen zero-mean random field added to every
    tendency channel: a systematic model error, identical across calls."""

    def __init__(self, base, xi: np.ndarray):
        self.base = base
        self.xi = np.asarray(xi)
        self.id = base.id
        self.channels = base.channels

    def rhs(self, psi, dx, dy):
        return self.base.rhs(psi, dx, dy) + self.xi

    def params(self) -> Dict[str, float]:
        return self.base.params()

    def __getattr__(self, name):
        return getattr(self.base, name)


def perturb_spec(system, std: float, seed: int, shape) -> PerturbedSystem:
    """Attach a frozen GRF model-error field (mean 0, std `std`) to a system."""
    from .datagen import GRFConfig, sample_grf

    if std <= 0:
        raise NumericalError(f"perturbation std must be positive, got {std}")
    xi = sample_grf(shape, GRFConfig(mean=0.0, std=std, length_scale=0.25, seed=seed))
    return PerturbedSystem(system, xi)


_DEFAULTS = {
    "burgers": BurgersSystem,
    "wave": WaveSystem,
    "nse": NseSystem,
    "lswe": LsweSystem,
    "nswe": NsweSystem,
}


def make_system(system_id: str, params: Optional[Dict[str, float]] = None, grid_shape=None):
    """Build a system from its manifest id and flat parameter dict."""
    if system_id not in _DEFAULTS:
        raise ChannelError(f"unknown system id {system_id!r}")
    params = dict(params or {})
    if system_id == "nswe":
        z_std = float(params.pop("z_std", 0.0))
        z_seed = int(params.pop("z_seed", 0))
        z = None
        if z_std > 0:
            from .datagen import GRFConfig, sample_grf

            if grid_shape is None:
                raise ChannelError("nswe with uneven bottom needs grid_shape")
            z = sample_grf(grid_shape, GRFConfig(mean=0.0, std=z_std, length_scale=0.25,
                                                 seed=z_seed))
        return NsweSystem(z=z, z_std=z_std, z_seed=z_seed, **params)
    return _DEFAULTS[system_id](**params)
