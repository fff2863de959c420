import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from wavesbl.exceptions import SegmentTooShortError
from wavesbl.solver import Snapshot
from wavesbl.synth import (
    add_noise, derivative_fields, second_time_derivative, smooth, spatial_derivatives,
)

from conftest import CASE1_VALUES


def _snap(u, x=None, t=None, bounds=None, y=None):
    u = np.asarray(u, dtype=float)
    x = np.arange(u.shape[0], dtype=float) if x is None else x
    t = np.arange(u.shape[-1], dtype=float) if t is None else t
    bounds = (0, len(t) - 1) if bounds is None else bounds
    return Snapshot(x, t, u, bounds, y=y)


# -- noise -------------------------------------------------------------------

def test_zero_noise_is_bit_equal(case1_snapshot):
    y = add_noise(case1_snapshot, 0.0, seed=1)
    assert np.array_equal(y.u, case1_snapshot.u)
    assert y.shape == case1_snapshot.shape


def test_noise_scale_follows_magnitude():
    s = _snap(np.full((1000, 1000), 2.0))
    xi = add_noise(s, 0.05, seed=3).u - 2.0
    assert np.std(xi) == pytest.approx(0.1, rel=0.01)


def test_noise_monte_carlo():
    s = _snap(np.ones((1000, 1000)))
    xi = add_noise(s, 0.01, seed=20240101).u - 1.0
    assert abs(xi.mean()) < 4e-5
    assert abs(xi.std() - 0.01) < 0.01 * 0.01


def test_noise_keeps_zeros(case1_snapshot):
    y = add_noise(case1_snapshot, 0.1, seed=0)
    assert np.all(y.u[0] == 0) and np.all(y.u[-1] == 0)


def test_noise_seeds(case1_snapshot):
    a = add_noise(case1_snapshot, 0.01, seed=5)
    b = add_noise(case1_snapshot, 0.01, seed=5)
    c = add_noise(case1_snapshot, 0.01, seed=6)
    assert np.array_equal(a.u, b.u)
    assert not np.array_equal(a.u, c.u)
    assert a.eta == 0.01 and a.seed == 5 and a.tag == "y"


def test_negative_noise_rejected(case1_snapshot):
    with pytest.raises(ValueError):
        add_noise(case1_snapshot, -0.1)


# -- time differences ---------------------------------------------------------

def test_quadratic_in_time_is_exact():
    t = np.linspace(0, 2, 41)
    s = _snap(np.tile(t ** 2, (5, 1)), t=t)
    assert np.allclose(second_time_derivative(s), 2.0, rtol=0, atol=1e-10)


def test_constant_field_has_zero_utt():
    s = _snap(np.full((4, 10), 3.7))
    assert np.all(second_time_derivative(s) == 0)


def test_time_refinement_order():
    errs = []
    for n in (50, 100):
        t = np.linspace(0, 2, n + 1)
        s = _snap(np.tile(np.sin(t), (3, 1)), t=t)
        errs.append(np.abs(second_time_derivative(s) + np.sin(t[1:-1])).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_segment_uses_its_own_step():
    # two segments with different steps; t^2 stays exact in each
    t = np.concatenate([np.linspace(0, 1, 11), np.linspace(1, 2, 5)[1:]])
    s = _snap(np.tile(t ** 2, (3, 1)), t=t, bounds=(0, 10, 14))
    assert np.allclose(second_time_derivative(s), 2.0, atol=1e-10)


def test_short_segment_raises():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    s = _snap(np.zeros((3, 4)), t=t, bounds=(0, 1, 3))
    with pytest.raises(SegmentTooShortError):
        second_time_derivative(s)


def test_no_spike_at_jumps(case1_snapshot, case1_path):
    s = case1_snapshot
    f = derivative_fields(s, {"u_xx"})
    m = np.asarray(CASE1_VALUES)[f.segment]
    resid = np.abs(f["u_tt"] - m * f["u_xx"] + np.sin(f["u"])).max(axis=0)
    b = np.asarray(s.segment_bounds)
    near = np.min(np.abs(f.t_index[:, None] - b[None, :]), axis=1) <= 1
    assert near.any()
    assert resid[near].max() <= 10 * np.median(resid[~near])
    # a stencil across a jump would spike by orders of magnitude
    dt = np.diff(s.t)
    u = s.u
    naive = (u[:, 2:] - 2 * u[:, 1:-1] + u[:, :-2]) / (dt[1:] * dt[:-1])
    spike = np.abs(naive[:, b[1:-1] - 1]).max()
    assert spike > 10 * np.median(np.abs(f["u_tt"]).max(axis=0))


# -- space differences --------------------------------------------------------

def test_quadratic_in_space():
    x = np.linspace(-1, 1, 21)
    s = _snap(np.tile((x ** 2)[:, None], (1, 5)), x=x)
    f = spatial_derivatives(s, {"u_x", "u_xx"})
    assert np.allclose(f["u_xx"], 2.0, atol=1e-9)
    assert np.allclose(f["u_x"], 2 * x[1:-1, None], atol=1e-12)


def test_linear_in_space():
    x = np.linspace(0, 3, 31)
    s = _snap(np.tile(x[:, None], (1, 5)), x=x)
    f = spatial_derivatives(s, {"u_x", "u_xx"})
    assert np.allclose(f["u_x"], 1.0, atol=1e-12)
    assert np.allclose(f["u_xx"], 0.0, atol=1e-9)


def test_sine_space_refinement():
    length = 10.0
    errs = []
    for dx in (0.025, 0.0125):
        x = np.linspace(0, length, int(round(length / dx)) + 1)
        u = np.tile(np.sin(np.pi * x / length)[:, None], (1, 3))
        f = spatial_derivatives(_snap(u, x=x), {"u_xx"})
        errs.append(np.abs(f["u_xx"] + (np.pi / length) ** 2 * f["u"]).max())
    assert errs[0] < (np.pi / length) ** 4 * 0.025 ** 2
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_laplacian_2d():
    x = np.linspace(0, 1, 11)
    u = (x[:, None] ** 2 + 3 * x[None, :] ** 2)[..., None] * np.ones(4)
    f = spatial_derivatives(_snap(u, x=x, y=x), {"lap", "u_y"})
    assert np.allclose(f["lap"], 8.0, atol=1e-8)
    assert np.allclose(f["u_y"], 6 * x[None, 1:-1, None], atol=1e-12)
    assert f.shape == (9, 9, 2)


def test_bad_requests():
    s = _snap(np.zeros((5, 5)))
    with pytest.raises(ValueError):
        spatial_derivatives(s, {"u_z"})
    with pytest.raises(ValueError):
        spatial_derivatives(s, {"u_y"})


def test_interior_shapes(case1_snapshot):
    f = derivative_fields(case1_snapshot, {"u_x", "u_xx"})
    nx, nt = case1_snapshot.shape
    assert f.shape == (nx - 2, nt - 2 - (case1_snapshot.n_segments - 1))
    assert all(np.isfinite(a).all() for a in f.arrays.values())


@given(arrays(np.float64, (6, 7), elements=st.floats(-10, 10)),
       arrays(np.float64, (6, 7), elements=st.floats(-10, 10)),
       st.floats(-3, 3), st.floats(-3, 3))
def test_operators_are_linear(y1, y2, a, b):
    x = np.linspace(0, 1, 6)
    t = np.linspace(0, 1, 7)
    which = {"u_x", "u_xx"}
    f1 = derivative_fields(_snap(y1, x, t, (0, 3, 6)), which)
    f2 = derivative_fields(_snap(y2, x, t, (0, 3, 6)), which)
    f12 = derivative_fields(_snap(a * y1 + b * y2, x, t, (0, 3, 6)), which)
    for key in ("u_x", "u_xx", "u_tt"):
        ref = a * f1[key] + b * f2[key]
        scale = 1 + np.abs(f1[key]).max() + np.abs(f2[key]).max()
        assert np.allclose(f12[key], ref, rtol=0, atol=1e-9 * scale)  # stencils divide by h^2


# -- smoothing ------------------------------------------------------------------

def test_smooth_is_time_only_and_keeps_boundaries(case1_snapshot):
    s = smooth(add_noise(case1_snapshot, 0.01, seed=1), 5)
    assert np.all(s.u[0] == 0) and np.all(s.u[-1] == 0)
    # a field constant in time is unchanged
    x = np.linspace(0, 1, 9)
    c = _snap(np.tile(np.sin(x)[:, None], (1, 12)), x=x)
    assert np.allclose(smooth(c, 3).u, c.u)


def test_smooth_window_must_be_odd(case1_snapshot):
    with pytest.raises(ValueError):
        smooth(case1_snapshot, 4)
    assert smooth(case1_snapshot, 1) is case1_snapshot


def test_smoothing_trims_segment_edges(case1_snapshot):
    raw = derivative_fields(case1_snapshot, {"u_xx"})
    f = derivative_fields(case1_snapshot, {"u_xx"}, smooth_window=5)
    b = np.asarray(case1_snapshot.segment_bounds)
    gap = np.min(np.abs(f.t_index[:, None] - b[None, :]), axis=1)
    assert gap.min() == 4
    assert f.shape[1] < raw.shape[1]
    assert f.meta["smooth_window"] == 5


def test_smoothing_too_wide_raises():
    t = np.linspace(0, 1, 9)
    s = _snap(np.zeros((4, 9)), t=t, bounds=(0, 4, 8))
    with pytest.raises(SegmentTooShortError):
        derivative_fields(s, {"u_xx"}, smooth_window=5)
