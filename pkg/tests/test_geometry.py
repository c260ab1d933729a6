import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from offmanifold.geometry import (
    Rotation,
    SeededRng,
    Subspace,
    derive_seed,
    make_axis_subspace,
    on_subspace_residual,
    project,
    random_subspace,
    rotate_subspace,
    rotation_between,
    sample_gaussian_vector,
)
from offmanifold.tolerances import IDEMPOTENCE_ATOL, ORTHONORMAL_ATOL


def test_same_seed_same_stream():
    a = SeededRng(5).normal(10)
    b = SeededRng(5).normal(10)
    assert np.array_equal(a, b)


def test_children_are_independent_of_call_order():
    r = SeededRng(5)
    first = r.child("x").normal(3)
    r.normal(100)
    assert np.array_equal(first, r.child("x").normal(3))
    assert not np.array_equal(first, r.child("y").normal(3))


def test_derive_seed_is_64_bit():
    s = derive_seed(2**64 - 1, "label")
    assert 0 <= s < 2**64


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        SeededRng(-1)


def test_signs_are_plus_minus_one():
    s = SeededRng(0).signs(1000)
    assert set(np.unique(s)) == {-1, 1}


@pytest.mark.parametrize("d,l", [(2, 1), (10, 3), (64, 16), (50, 49)])
def test_random_subspace_is_orthonormal(d, l):
    sub = random_subspace(d, l, 3).check()
    full = sub.full_basis
    assert np.abs(full.T @ full - np.eye(d)).max() <= ORTHONORMAL_ATOL
    assert sub.dim == d - l and sub.codim == l


@pytest.mark.parametrize("d,l", [(1, 1), (5, 0), (5, 5)])
def test_bad_dimensions(d, l):
    with pytest.raises(ValueError):
        make_axis_subspace(d, l)


def test_subspace_rejects_mismatched_columns():
    with pytest.raises(ValueError):
        Subspace(np.eye(4)[:, :2], np.eye(4)[:, 2:3])


def test_check_catches_non_orthogonal_bases():
    bp = np.eye(3)[:, :2]
    bq = np.array([[1.0], [0.0], [0.0]])
    with pytest.raises(ValueError):
        Subspace(bp, bq).check()


@settings(max_examples=40, deadline=None)
@given(d=st.integers(2, 30), data=st.data())
def test_projection_properties(d, data):
    l = data.draw(st.integers(1, d - 1))
    seed = data.draw(st.integers(0, 2**32))
    sub = random_subspace(d, l, seed)
    x = SeededRng(seed + 1).normal((4, d))
    p, q = project(x, sub, "P"), project(x, sub, "perp")
    assert np.abs(p + q - x).max() <= 1e-10 * max(1.0, np.abs(x).max())
    assert np.abs(project(p, sub, "P") - p).max() <= IDEMPOTENCE_ATOL * max(1.0, np.abs(x).max()) * d
    assert np.abs(np.einsum("ij,ij->i", p, q)).max() <= 1e-10 * max(1.0, (x * x).sum())


def test_projection_of_single_vector_keeps_shape():
    sub = make_axis_subspace(5, 2)
    x = np.arange(5.0)
    assert np.array_equal(project(x, sub, "perp"), [0, 0, 0, 3, 4])
    assert np.array_equal(project(x, sub, "P"), [0, 1, 2, 0, 0])


def test_projection_rejects_bad_input():
    sub = make_axis_subspace(5, 2)
    with pytest.raises(ValueError):
        project(np.ones(4), sub)
    with pytest.raises(ValueError):
        project(np.ones(5), sub, "sideways")


def test_on_subspace_residual():
    sub = make_axis_subspace(4, 1)
    r = on_subspace_residual(np.array([[1.0, 0, 0, 0], [0, 0, 0, 0.5]]), sub)
    assert r[0] == 0.0 and r[1] == 0.5


def test_rotation_maps_subspace_onto_subspace():
    src = random_subspace(8, 3, 1)
    dst = random_subspace(8, 3, 2)
    rot = rotation_between(src, dst)
    moved = rotate_subspace(src, rot)
    x = SeededRng(0).normal((5, 3)) @ src.basis_perp.T
    y = rot.apply(x)
    assert np.abs(project(y, dst, "P")).max() < 1e-12 * 10
    assert np.allclose(moved.basis_p, dst.basis_p, atol=1e-12)


def test_rotation_rejects_non_orthogonal():
    with pytest.raises(ValueError):
        Rotation(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_rotation_between_dimension_mismatch():
    with pytest.raises(ValueError):
        rotation_between(make_axis_subspace(5, 2), make_axis_subspace(5, 1))


def test_subspace_json_round_trip(tmp_path):
    sub = random_subspace(9, 4, 11)
    path = tmp_path / "s.json"
    sub.save(path)
    back = Subspace.load(path)
    assert np.array_equal(back.basis_p, sub.basis_p)
    assert np.array_equal(back.basis_perp, sub.basis_perp)


def test_gaussian_vector():
    v = sample_gaussian_vector(200_000, 2.0, 0)
    assert abs(v.std() - 2.0) < 0.02
    with pytest.raises(ValueError):
        sample_gaussian_vector(3, 0.0, 0)
