import numpy as np
import pytest

from partialpde import autodiff as ad
from partialpde import fd
from partialpde.errors import GridTooSmall, NumericalError


def _sin_field(n):
    x = np.arange(n) / n
    return np.sin(2 * np.pi * x)[None, None, :].repeat(n, axis=1)


def test_constant_derivative_is_zero():
    f = np.full((1, 16, 16), 2.5)
    for order in (1, 2):
        for axis in (-1, -2):
            out = fd.central_diff(f, axis, order, 1 / 16).value
            np.testing.assert_array_equal(out, np.zeros_like(out))


def _max_err(n, order):
    f = _sin_field(n)
    d = fd.central_diff(f, -1, order, 1.0 / n).value
    x = np.arange(n) / n
    exact = 2 * np.pi * np.cos(2 * np.pi * x) if order == 1 else \
        -(2 * np.pi) ** 2 * np.sin(2 * np.pi * x)
    return np.abs(d - exact[None, None, :]).max()


@pytest.mark.parametrize("order", [1, 2])
def test_stencils_are_fourth_order(order):
    e32, e64, e128 = (_max_err(n, order) for n in (32, 64, 128))
    assert 14.0 <= e32 / e64 <= 18.0
    assert 14.0 <= e64 / e128 <= 18.0
    slope = np.log2(e32 / e64)
    assert 3.7 <= slope <= 4.3


def test_grid_too_small():
    with pytest.raises(GridTooSmall):
        fd.central_diff(np.zeros((1, 4, 4)), -1, 1, 0.25)


def test_laplacian_analytic():
    errs = []
    for n in (32, 64):
        x = np.arange(n) / n
        f = (np.sin(2 * np.pi * x)[:, None] * np.sin(2 * np.pi * x)[None, :])[None]
        lap = fd.laplacian(f, 1.0 / n, 1.0 / n).value
        errs.append(np.abs(lap - (-2 * (2 * np.pi) ** 2) * f).max())
    assert 14.0 <= errs[0] / errs[1] <= 18.0
    np.testing.assert_array_equal(fd.laplacian(np.full((1, 8, 8), 3.0), 1 / 8, 1 / 8).value,
                                  np.zeros((1, 8, 8)))


def test_laplacian_vs_div_grad_composition():
    # The two 4th-order operators (second-derivative stencil vs composed
    # first-derivative stencils) agree to O(h^4) on band-limited fields,
    # not to machine precision: they are distinct discretizations.
    from partialpde.datagen import GRFConfig, sample_grf

    n = 128
    f = sample_grf((n, n), GRFConfig(0.0, 1.0, 0.25, seed=5))[None]
    h = 1.0 / n
    lap = fd.laplacian(f, h, h).value
    comp = fd.divergence(fd.ddx(f, h), fd.ddy(f, h), h, h).value
    scale = np.abs(lap).max()
    assert np.abs(lap - comp).max() / scale <= 1e-5


class _Decay:
    id = "decay"
    channels = 1

    def rhs(self, psi, dx, dy):
        return -1.0 * psi


def test_rk4_zero_dynamics_is_identity():
    class Zero:
        id = "zero"
        channels = 1

        def rhs(self, psi, dx, dy):
            return 0.0 * psi

    psi = np.random.default_rng(0).standard_normal((1, 8, 8))
    ctx = fd.StepContext(w=0.3, dx=1 / 8, dy=1 / 8, system=Zero())
    np.testing.assert_array_equal(fd.rk4_step(ctx, psi).value, psi)


def test_rk4_one_step_matches_taylor():
    w = 0.01
    ctx = fd.StepContext(w=w, dx=1, dy=1, system=_Decay())
    out = fd.rk4_step(ctx, np.ones((1, 5, 5))).value[0, 0, 0]
    taylor = 1 - w + w ** 2 / 2 - w ** 3 / 6 + w ** 4 / 24
    assert abs(out - taylor) <= 1e-15


def test_rk4_global_fourth_order():
    def err(w):
        steps = int(round(1.0 / w))
        s = np.ones((1, 5, 5))
        ctx = fd.StepContext(w=w, dx=1, dy=1, system=_Decay())
        for _ in range(steps):
            s = fd.rk4_step(ctx, s)
        return abs(ad.value_of(s)[0, 0, 0] - np.exp(-1.0))

    ratio = err(0.02) / err(0.01)
    assert 2 ** 4 * 0.8 <= ratio <= 2 ** 5
    assert 3.8 <= np.log2(ratio) <= 4.2


def test_rk4_nan_reports_stage():
    class Bad:
        id = "bad"
        channels = 1

        def rhs(self, psi, dx, dy):
            return psi * np.nan

    with pytest.raises(NumericalError, match="k1"):
        fd.rk4_step(fd.StepContext(0.1, 1, 1, Bad()), np.ones((1, 5, 5)))


def test_residual_zero_for_generated_pair():
    from partialpde.systems import BurgersSystem
    from partialpde.datagen import GRFConfig, sample_grf

    sys_ = BurgersSystem()
    u0 = sample_grf((16, 16), GRFConfig(0.0, 0.3, 0.25, 1))[None]
    ctx = fd.StepContext(w=0.01, dx=1 / 16, dy=1 / 16, system=sys_)
    u1 = fd.rk4_step(ctx, u0)
    res = fd.residual_F(ctx, u0, u1.value).value
    assert np.abs(res).max() <= 1e-12


def test_residual_of_frozen_state_is_rk4_increment():
    from partialpde.systems import BurgersSystem
    from partialpde.datagen import GRFConfig, sample_grf

    sys_ = BurgersSystem()
    u0 = sample_grf((16, 16), GRFConfig(0.0, 0.3, 0.25, 2))[None]
    ctx = fd.StepContext(w=0.01, dx=1 / 16, dy=1 / 16, system=sys_)
    res = fd.residual_F(ctx, u0, u0).value
    inc = fd.rk4_step(ctx, u0).value - u0
    np.testing.assert_allclose(res, inc, atol=1e-15)
    assert np.abs(res).max() > 0


def test_pde_loss_values():
    assert float(fd.pde_loss(np.zeros((2, 4, 4))).value) == 0.0
    assert float(fd.pde_loss(np.ones((2, 4, 4))).value) == 1.0
    r = np.random.default_rng(3).standard_normal((3, 8, 8))
    expect = (r ** 2).sum() / r.size
    assert abs(float(fd.pde_loss(r).value) - expect) <= 1e-15


def test_spectral_poisson_roundtrip():
    n = 32
    x = np.arange(n) / n
    p0 = np.sin(2 * np.pi * x)[None, :].repeat(n, axis=0)[None]
    rhs = fd.laplacian(p0, 1 / n, 1 / n).value
    p = fd.spectral_poisson(rhs, 1 / n, 1 / n)
    assert np.abs(p - p0).max() <= 1e-10
    assert np.all(fd.spectral_poisson(np.zeros((1, 8, 8)), 1 / 8, 1 / 8) == 0.0)
    rnd = np.random.default_rng(4).standard_normal((1, 16, 16))
    sol = fd.spectral_poisson(rnd, 1 / 16, 1 / 16)
    assert abs(sol.mean()) <= 1e-14


def test_project_div_free_exact():
    rng = np.random.default_rng(5)
    ux = rng.standard_normal((2, 1, 16, 16))
    uy = rng.standard_normal((2, 1, 16, 16))
    pux, puy, chi = fd.project_div_free(ux, uy, 1 / 16, 1 / 16)
    div = fd.divergence(pux, puy, 1 / 16, 1 / 16).value
    assert np.abs(div).max() <= 1e-12
    # projection is idempotent
    p2x, p2y, _ = fd.project_div_free(pux, puy, 1 / 16, 1 / 16)
    assert np.abs(p2x.value - pux.value).max() <= 1e-12
