import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srdti.resample import (bspline3, bspline_coefficients, bspline_prefilter_1d, cubic_bspline_resample,
                            downsample_stack, resample_stack, sinc_downsample, trilinear_resample)
from srdti.volume import GeometryError, Grid, Volume

from conftest import random_stack

HR = dict(spacing=(1.25,) * 3, origin=(-40.0, -38.0, -41.5))


def _hr(data):
    return Volume(data, **HR)


def _world(grid, axis):
    return grid.axis_coords(axis)


def test_paper_resolution_pair():
    out = sinc_downsample(_hr(np.zeros((64, 64, 64))), (2.0, 2.0, 2.0))
    assert out.dims == (40, 40, 40)
    assert out.spacing == (2.0, 2.0, 2.0)
    assert np.allclose(out.center, _hr(np.zeros((64, 64, 64))).center, atol=1e-9)


def test_sinc_preserves_constants():
    out = sinc_downsample(_hr(np.full((64, 64, 64), 3.7)), (2, 2, 2))
    assert np.max(np.abs(out.data - 3.7)) < 1e-12


@pytest.mark.parametrize("mode", [1, 7, 19])
def test_sinc_reproduces_subnyquist_cosine(mode):
    v = _hr(np.zeros((64, 64, 64)))
    length = 64 * 1.25
    f = lambda x: np.cos(2 * np.pi * mode * (x - v.origin[0]) / length + 0.3)
    x = v.axis_coords(0)
    v = v.with_data(np.broadcast_to(f(x)[:, None, None], v.dims))
    out = sinc_downsample(v, (2, 2, 2))
    expected = f(out.axis_coords(0))[:, None, None]
    assert np.max(np.abs(out.data - expected)) < 1e-10


def _fft_crop_oracle(x, n_out, h_in, h_out):
    """Independent 1D reference: numpy FFT, crop to the target modes (Nyquist
    halved), phase-shift to the target voxel centers, evaluate."""
    n = len(x)
    c = np.fft.fft(x) / n
    half = n_out // 2
    k = np.arange(-half, half + 1)
    w = np.ones(len(k))
    if n_out % 2 == 0:
        w[0] = w[-1] = 0.5
    coef = c[k % n] * w
    shift = 0.5 * (h_out - h_in)          # first target center relative to first source center
    t = shift + np.arange(n_out) * h_out
    return (np.exp(2j * np.pi * np.outer(t, k) / (n * h_in)) @ coef).real


def test_sinc_matches_fft_oracle():
    rng = np.random.default_rng(0)
    for n, n_out in [(64, 40), (16, 10), (15, 9), (12, 7)]:
        h_out = n * 1.0 / n_out
        data = rng.standard_normal((n, 2, 3))
        out = sinc_downsample(Volume(data, (1.0, 1.0, 1.0)), (h_out, 1.0, 1.0))
        assert out.dims == (n_out, 2, 3)
        ref = _fft_crop_oracle(data[:, 1, 2], n_out, 1.0, h_out)
        assert np.max(np.abs(out.data[:, 1, 2] - ref)) < 1e-10


@given(st.integers(0, 2 ** 31), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=20, deadline=None)
def test_sinc_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    u, w = rng.standard_normal((2, 16, 12, 10))
    op = lambda d: sinc_downsample(Volume(d, (1.0, 1.0, 1.0)), (1.6, 1.5, 1.25)).data
    assert np.max(np.abs(op(a * u + b * w) - (a * op(u) + b * op(w)))) < 1e-10


def test_sinc_refuses_to_upsample():
    with pytest.raises(GeometryError):
        sinc_downsample(_hr(np.zeros((8, 8, 8))), (1.0, 2.0, 2.0))


def test_trilinear_midpoint():
    v = Volume(np.array([0.0, 1.0]).reshape(2, 1, 1), (2.0, 1.0, 1.0))
    target = Grid((1, 1, 1), (4.0, 1.0, 1.0), (0.0, 0.0, 0.0))     # center at x = 2 (between 1 and 3)
    assert trilinear_resample(v, target).data.item() == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("fn", [trilinear_resample, cubic_bspline_resample])
def test_upsamplers_reproduce_constants(fn):
    v = sinc_downsample(_hr(np.full((64, 64, 64), 0.42)), (2, 2, 2))
    out = fn(v, Grid.centered((64, 64, 64), (1.25,) * 3, v.center))
    assert np.max(np.abs(out.data - 0.42)) < 1e-12


def _ramp(v):
    x, y, z = np.meshgrid(*[v.axis_coords(a) for a in range(3)], indexing="ij")
    return 2 * x - y + 3 * z


def _interior(out, src, margin):
    """Target sample mask whose world position is >= margin source samples from every face."""
    sel = []
    for a in range(3):
        c = out.axis_coords(a)
        lo = src.axis_coords(a)[0] + margin * src.spacing[a]
        hi = src.axis_coords(a)[-1] - margin * src.spacing[a]
        sel.append((c >= lo) & (c <= hi))
    return np.ix_(*sel)


def test_trilinear_reproduces_world_ramp():
    src = Volume(np.zeros((10, 12, 9)), (2.0, 2.0, 2.0), (-10.0, -12.0, -9.0))
    src = src.with_data(_ramp(src))
    target = Grid.centered((16, 19, 14), (1.25,) * 3, src.center)
    out = trilinear_resample(src, target)
    sel = _interior(out, src, 0)
    assert np.max(np.abs(out.data[sel] - _ramp(out)[sel])) < 1e-10


def test_trilinear_clamps_outside_hull():
    src = Volume(np.arange(4.0).reshape(4, 1, 1), (1.0, 1.0, 1.0))
    out = trilinear_resample(src, Grid((2, 1, 1), (1.0, 1.0, 1.0), (-5.0, 0.0, 0.0)))
    assert np.array_equal(out.data.ravel(), [0.0, 0.0])


def test_cubic_interpolates_source_samples():
    src = Volume(np.random.default_rng(3).standard_normal((9, 7, 6)), (2.0, 1.0, 1.5), (1.0, 2.0, 3.0))
    out = cubic_bspline_resample(src, src)
    assert np.max(np.abs(out.data - src.data)) < 1e-8


def test_cubic_reproduces_ramp_at_interior_points():
    # the mirror boundary bends linear functions near the faces (error ~0.268^d); far
    # from them the interpolating cubic spline is exact on linears
    src = Volume(np.zeros((64, 64, 64)), (2.0,) * 3, (-64.0,) * 3)
    src = src.with_data(_ramp(src))
    out = cubic_bspline_resample(src, Grid.centered((31, 31, 31), (1.3,) * 3, src.center))
    sel = _interior(out, src, 18)
    assert out.data[sel].size > 1000
    assert np.max(np.abs(out.data[sel] - _ramp(out)[sel])) < 1e-10


def _dense_prefilter_oracle(data):
    """Solve the 3D interpolation conditions directly: kron of the 1D mirror-boundary
    B-spline collocation matrices."""
    mats = []
    for n in data.shape:
        a = np.zeros((n, n))
        for i in range(n):
            for k in range(i - 2, i + 3):
                j = abs(k) if k < n else 2 * (n - 1) - k
                a[i, j] += bspline3(i - k)
        mats.append(a)
    big = np.kron(np.kron(mats[0], mats[1]), mats[2])
    return np.linalg.solve(big, data.ravel()).reshape(data.shape)


def test_prefilter_matches_dense_solve():
    data = np.random.default_rng(7).standard_normal((9, 9, 9))
    assert np.max(np.abs(bspline_coefficients(data) - _dense_prefilter_oracle(data))) < 1e-8


def test_cubic_needs_four_samples():
    with pytest.raises(GeometryError, match="zero-pad"):
        bspline_prefilter_1d(np.zeros((3, 5)), axis=0)


@pytest.mark.parametrize("fn", [sinc_downsample])
def test_fov_center_preserved_by_all_operators(fn):
    v = Volume(np.random.default_rng(1).standard_normal((20, 18, 16)), (1.0, 1.1, 1.2), (3.0, -7.0, 11.0))
    low = fn(v, (1.7, 1.9, 2.3))
    assert np.allclose(low.center, v.center, atol=1e-9)
    for up in (trilinear_resample, cubic_bspline_resample):
        hr = up(low, Grid.centered(v.dims, v.spacing, low.center))
        assert np.allclose(hr.center, v.center, atol=1e-9)


def test_stack_helpers():
    s = random_stack(dims=(16, 16, 16), spacing=(1.25,) * 3)
    low = downsample_stack(s, (2.0, 2.0, 2.0))
    assert low.b0.dims == (10, 10, 10) and low.t1 is None and len(low.dwis) == 6
    up = resample_stack(low, "cubic", s.b0, t1=s.t1)
    assert up.b0.same_grid(s.b0) and up.t1 is s.t1
    with pytest.raises(ValueError, match="unknown interpolation"):
        resample_stack(low, "lanczos", s.b0)
