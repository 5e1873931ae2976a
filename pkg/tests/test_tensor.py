from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srdti.scheme import EncodingScheme
from srdti.tensor import (SingularDesignError, TensorField, axisymmetric_eigenvalues, axisymmetric_tensor,
                          canonical_sign, design_matrix, dti_maps, fit_tensor, jacobi_eigh, synthesize_dwi)
from srdti.volume import DwiStack, GradientTable, Volume


def _field(mats, s0=1.0):
    mats = np.asarray(mats, dtype=np.float64)
    shape = mats.shape[:-2]
    return TensorField.from_matrices(mats, Volume(np.full(shape, s0)))


def random_psd(n, seed=0):
    rng = np.random.default_rng(seed)
    q = np.linalg.qr(rng.standard_normal((n, 3, 3)))[0]
    lam = rng.uniform(0.0, 3.0, (n, 3))
    return np.einsum("nij,nj,nkj->nik", q, lam, q)


def test_design_matrix_rows():
    t = GradientTable([[1, 0, 0], np.array([1, 1, 0]) / np.sqrt(2), [0, 0, 0]], [1.0, 1.0, 0.0])
    A = design_matrix(t)
    assert np.allclose(A[0], [-1, 0, 0, 0, 0, 0, 1])
    assert np.allclose(A[1], [-0.5, -0.5, 0, -1, 0, 0, 1])
    assert np.array_equal(A[2], [0, 0, 0, 0, 0, 0, 1])


def test_singular_design_rejected():
    dirs = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1]] * 2, dtype=float)
    like = Volume(np.ones((2, 2, 2)))
    stack = DwiStack(like, tuple(like for _ in range(6)), GradientTable(dirs, np.ones(6)))
    with pytest.raises(SingularDesignError, match="rank"):
        fit_tensor(stack)


def test_fit_recovers_diagonal_tensor(scheme):
    f = _field(np.diag([1.7, 0.2, 0.2])[None, None, None])
    back = fit_tensor(synthesize_dwi(f, scheme))
    assert np.max(np.abs(back.components - f.components)) < 1e-9
    assert np.max(np.abs(back.s0.data - 1.0)) < 1e-9


def test_isotropic_signals_give_scaled_identity(scheme):
    lam = 0.9
    like = Volume(np.full((2, 2, 1), 0.8))
    dwis = tuple(like.with_data(np.full(like.dims, 0.8 * np.exp(-lam))) for _ in range(6))
    back = fit_tensor(DwiStack(like, dwis, scheme.table()))
    assert np.allclose(back.matrices(), lam * np.eye(3), atol=1e-9)


def test_background_voxels_give_zero_tensor(scheme):
    like = Volume(np.zeros((2, 2, 2)))
    with np.errstate(all="raise"):
        back = fit_tensor(DwiStack(like, tuple(like for _ in range(6)), scheme.table()))
    assert np.all(back.components == 0) and np.all(back.s0.data == 0)


def test_mask_zeroes_outside(scheme):
    f = _field(random_psd(8).reshape(2, 2, 2, 3, 3))
    stack = synthesize_dwi(f, scheme)
    mask = Volume(np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=float).reshape(2, 2, 2))
    back = fit_tensor(stack, mask)
    assert np.all(back.components[:, mask.data == 0] == 0)
    assert np.allclose(back.components[:, mask.data > 0], f.components[:, mask.data > 0], atol=1e-9)


def test_synthesis_closed_forms(scheme):
    s = synthesize_dwi(_field(np.eye(3)[None, None, None]), scheme)
    assert all(abs(d.data.item() - np.exp(-1)) < 1e-15 for d in s.dwis)
    z = synthesize_dwi(_field(np.zeros((1, 1, 1, 3, 3)), s0=0.6), scheme)
    assert all(d.data.item() == 0.6 for d in z.dwis)
    assert np.allclose(z.table.directions, scheme.directions)


def test_roundtrip_random_psd_fields(scheme):
    f = _field(random_psd(1000, seed=11).reshape(10, 10, 10, 3, 3))
    back = fit_tensor(synthesize_dwi(f, scheme))
    assert np.max(np.abs(back.components - f.components)) < 1e-9


def test_maps_of_isotropic_tensor():
    m = dti_maps(_field(0.9 * np.eye(3)[None, None, None]))
    assert m.fa.item() == 0
    assert m.md.item() == pytest.approx(0.9) and m.ad.item() == pytest.approx(0.9)
    assert m.rd.item() == pytest.approx(0.9)
    assert np.linalg.norm(m.v1[0, 0, 0]) == pytest.approx(1.0)


def test_maps_of_prolate_tensor():
    m = dti_maps(_field(np.diag([1.7, 0.2, 0.2])[None, None, None]))
    # FA evaluated exactly in rationals, then square-rooted
    lam = [Fraction(17, 10), Fraction(1, 5), Fraction(1, 5)]
    md = sum(lam) / 3
    fa2 = Fraction(3, 2) * sum((x - md) ** 2 for x in lam) / sum(x * x for x in lam)
    assert m.fa.item() == pytest.approx(float(fa2) ** 0.5, abs=1e-12)
    assert m.fa.item() == pytest.approx(0.8704, abs=5e-5)
    assert (m.md.item(), m.ad.item(), m.rd.item()) == pytest.approx((0.7, 1.7, 0.2), abs=1e-12)
    assert np.array_equal(m.v1[0, 0, 0], [1.0, 0.0, 0.0])


def test_jacobi_matches_reference_eigensolver():
    mats = random_psd(500, seed=2)
    vals, vecs = jacobi_eigh(mats)
    ref = np.linalg.eigvalsh(mats)[:, ::-1]
    assert np.max(np.abs(vals - ref)) < 1e-12
    recon = np.einsum("nij,nj,nkj->nik", vecs, vals, vecs)
    assert np.max(np.abs(recon - mats)) < 1e-11
    assert np.allclose(np.einsum("nji,njk->nik", vecs, vecs), np.eye(3), atol=1e-12)


def test_map_invariants_on_random_tensors():
    m = dti_maps(_field(random_psd(1000, seed=5).reshape(10, 10, 10, 3, 3)))
    assert np.all(m.ad >= m.md) and np.all(m.md >= m.rd)
    assert np.all((m.fa >= 0) & (m.fa <= 1 + 1e-12))
    assert np.allclose(np.linalg.norm(m.v1, axis=-1), 1.0, atol=1e-6)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_rotation_equivariance(seed):
    rng = np.random.default_rng(seed)
    lam = np.sort(rng.uniform(0.1, 3.0, 3))[::-1]
    lam[0] += 0.2                                   # keep V1 well defined
    D = np.diag(lam)
    R, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    R *= np.sign(np.linalg.det(R))
    a = dti_maps(_field(D[None, None, None]))
    b = dti_maps(_field((R @ D @ R.T)[None, None, None]))
    assert abs(a.fa.item() - b.fa.item()) < 1e-10
    assert abs(abs(np.dot(R @ a.v1[0, 0, 0], b.v1[0, 0, 0])) - 1) < 1e-10


def test_v1_scale_invariant():
    mats = random_psd(50, seed=9).reshape(50, 1, 1, 3, 3)
    a = dti_maps(_field(mats))
    b = dti_maps(_field(3.5 * mats))
    assert np.allclose(np.abs(np.sum(a.v1 * b.v1, axis=-1)), 1.0, atol=1e-9)


def test_canonical_sign_rule():
    v = canonical_sign(np.array([[0.1, -0.9, 0.3], [0.5, 0.2, 0.1]]))
    assert np.array_equal(v, [[-0.1, 0.9, -0.3], [0.5, 0.2, 0.1]])


def test_axisymmetric_inversion():
    fa, md = np.array([0.0, 0.2, 0.75, 0.99]), np.array([3.0, 0.8, 0.75, 1.0])
    lpar, lperp = axisymmetric_eigenvalues(fa, md)
    m = dti_maps(_field(axisymmetric_tensor(np.array([[1, 2, 3.0]] * 4), fa, md).reshape(4, 1, 1, 3, 3)))
    assert np.allclose(m.fa.ravel(), fa, atol=1e-12)
    assert np.allclose(m.md.ravel(), md, atol=1e-12)
    assert np.all(lpar >= lperp)
    with pytest.raises(ValueError):
        axisymmetric_eigenvalues(1.2, 1.0)


def test_scheme_table_is_accepted_in_place_of_scheme(scheme):
    f = _field(random_psd(4).reshape(2, 2, 1, 3, 3))
    a = synthesize_dwi(f, scheme)
    b = synthesize_dwi(f, scheme.table())
    assert all(x == y for x, y in zip(a.dwis, b.dwis))
    assert isinstance(scheme, EncodingScheme)
