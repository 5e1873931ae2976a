import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srdti.volume import (BlockSpec, DwiStack, GeometryError, GradientTable, Grid, NormalizationError, Volume,
                          denormalize_stack, normalize_stack)

from conftest import random_stack


def test_volume_world_uses_voxel_centers():
    v = Volume(np.zeros((4, 5, 6)), (2.0, 1.0, 0.5), (10.0, 0.0, -1.0))
    assert np.allclose(v.world((0, 0, 0)), [11.0, 0.5, -0.75])
    assert np.allclose(v.world((3, 4, 5)), [17.0, 4.5, 1.75])
    assert np.allclose(v.fov, [8, 5, 3])
    assert np.allclose(v.center, [14.0, 2.5, 0.5])


def test_volume_is_immutable_copy():
    a = np.ones((2, 2, 2))
    v = Volume(a)
    a[0, 0, 0] = 5
    assert v.data[0, 0, 0] == 1
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 2


@pytest.mark.parametrize("data,spacing", [
    (np.zeros((2, 2)), (1, 1, 1)),
    (np.zeros((0, 2, 2)), (1, 1, 1)),
    (np.zeros((2, 2, 2)), (1, 0, 1)),
    (np.zeros((2, 2, 2)), (1, 1)),
])
def test_volume_rejects_bad_geometry(data, spacing):
    with pytest.raises(GeometryError):
        Volume(data, spacing)


def test_volume_equality_is_bitwise():
    v = Volume(np.arange(8.0).reshape(2, 2, 2), (1, 2, 3), (0, 0, 1))
    assert v == Volume(np.arange(8.0).reshape(2, 2, 2), (1, 2, 3), (0, 0, 1))
    assert v != v.with_data(v.data + 1e-15 * 8)
    assert v != Volume(v.data, (1, 2, 3), (0, 0, 1.0000001))


def test_grid_centered_preserves_center():
    g = Grid.centered((40, 40, 40), (2.0, 2.0, 2.0), (1.0, -2.0, 3.0))
    assert np.allclose(g.center, [1.0, -2.0, 3.0])


def test_gradient_table_invariants():
    GradientTable([[1, 0, 0], [0, 0, 0]], [1.0, 0.0])
    with pytest.raises(GeometryError):
        GradientTable([[0, 0, 0]], [1.0])
    with pytest.raises(GeometryError):
        GradientTable([[1.1, 0, 0]], [1.0])
    with pytest.raises(GeometryError):
        GradientTable([[1, 0, 0]], [1.0, 1.0])


def test_stack_members_share_grid():
    s = random_stack()
    other = Volume(np.zeros((8, 9, 10)), (1.0, 1.5, 2.0), (0, 0, 0))
    with pytest.raises(GeometryError):
        s.replace(t1=other)
    with pytest.raises(GeometryError):
        DwiStack(s.b0, s.dwis[:5], s.table)


def test_normalize_divides_by_b0_max():
    s = random_stack(seed=3)
    raw = s.replace(b0=s.b0.with_data(s.b0.data * 4000 / s.b0.data.max()),
                    dwis=tuple(d.with_data(d.data * 4000 / s.b0.data.max()) for d in s.dwis))
    norm, rec = normalize_stack(raw)
    assert rec.diffusion == pytest.approx(4000)
    assert norm.b0.data.max() == pytest.approx(1.0, abs=1e-15)
    assert norm.t1.data.max() == pytest.approx(1.0, abs=1e-15)


def test_normalize_is_idempotent_at_unit_scale():
    s, _ = normalize_stack(random_stack(seed=4))
    again, rec = normalize_stack(s)
    assert rec.diffusion == 1.0
    assert again.b0 == s.b0 and all(a == b for a, b in zip(again.dwis, s.dwis))


@given(st.integers(0, 10_000), st.floats(1e-3, 1e4))
@settings(max_examples=25, deadline=None)
def test_normalize_preserves_ratios_and_inverts(seed, scale):
    s = random_stack(seed=seed)
    s = s.replace(b0=s.b0.with_data(s.b0.data * scale), dwis=tuple(d.with_data(d.data * scale) for d in s.dwis))
    norm, rec = normalize_stack(s)
    for raw, n in zip(s.dwis, norm.dwis):
        assert np.allclose(n.data / norm.b0.data, raw.data / s.b0.data, rtol=1e-12, atol=0)
    back = denormalize_stack(norm, rec)
    assert np.allclose(back.b0.data, s.b0.data, rtol=1e-12)
    assert np.allclose(back.t1.data, s.t1.data, rtol=1e-12)


def test_normalize_rejects_empty_channels():
    s = random_stack()
    with pytest.raises(NormalizationError):
        normalize_stack(s.replace(b0=s.b0.with_data(np.zeros(s.b0.dims)),
                                  dwis=tuple(d.with_data(np.zeros(s.b0.dims)) for d in s.dwis)))
    with pytest.raises(NormalizationError):
        normalize_stack(s.replace(t1=s.t1.with_data(np.zeros(s.b0.dims))))


def test_block_spec_invariants():
    assert BlockSpec((24, 24, 24), (8, 8, 8)).stride == (16, 16, 16)
    for bad in [((4, 4, 4), (4, 0, 0)), ((4, 4, 4), (-1, 0, 0)), ((0, 4, 4), (0, 0, 0))]:
        with pytest.raises(GeometryError):
            BlockSpec(*bad)
