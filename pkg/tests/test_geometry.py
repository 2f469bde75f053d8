import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ncreg.exceptions import DegenerateGeometryError, MeshNotClosedError
from ncreg.geometry import (
    FaceLocator,
    SphericalMesh,
    area_weights,
    barycentric_interpolate,
    locate_face,
    make_icosphere,
    sample_faces_and_points,
    sample_simplex,
    sample_sphere_uniform,
)


@pytest.fixture(scope="module")
def ico4():
    return make_icosphere(4)


def _single_face_mesh():
    v = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return SphericalMesh(v, [[0, 1, 2]])


# -- barycentric interpolation --------------------------------------------------


def test_interpolate_at_vertex():
    mesh = _single_face_mesh()
    assert barycentric_interpolate(mesh, [1.0, 2.0, 3.0], 0, mesh.vertices[0]) == pytest.approx(1.0)


def test_interpolate_at_centroid():
    mesh = _single_face_mesh()
    c = mesh.vertices.mean(axis=0)
    assert barycentric_interpolate(mesh, [0.0, 3.0, 6.0], 0, c) == pytest.approx(3.0)


def test_interpolate_interior_point():
    mesh = _single_face_mesh()
    p1, p2, p3 = mesh.vertices
    x = 0.2 * p1 + 0.3 * p2 + 0.5 * p3
    # direct oracle: solve x = a p1 + b p2 + c p3 for the weights
    direct = np.linalg.solve(mesh.vertices.T, x)
    assert direct @ [1.0, 2.0, 3.0] == pytest.approx(2.3, abs=1e-12)
    assert barycentric_interpolate(mesh, [1.0, 2.0, 3.0], 0, x) == pytest.approx(2.3, abs=1e-12)


def test_degenerate_face_rejected():
    p = np.array([1.0, 0.0, 0.0])
    with pytest.raises(DegenerateGeometryError):
        area_weights(p, p, p, p)
    with pytest.raises(DegenerateGeometryError):
        SphericalMesh([p, p, [0.0, 1.0, 0.0]], [[0, 1, 2]])


def test_area_weights_match_analytic_coordinates():
    rng = np.random.default_rng(0)
    tri = rng.normal(size=(10_000, 3, 3))
    w = sample_simplex(rng, 10_000)
    x = np.einsum("nk,nkd->nd", w, tri)
    got = area_weights(tri[:, 0], tri[:, 1], tri[:, 2], x)
    assert np.max(np.abs(got - w)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_interpolation_exact_for_affine_fields(seed):
    rng = np.random.default_rng(seed)
    tri = rng.normal(size=(3, 3))
    mesh = SphericalMesh(tri, [[0, 1, 2]])
    a, b = rng.normal(size=3), rng.normal()
    f = mesh.vertices @ a + b
    w = sample_simplex(rng)
    x = w @ mesh.vertices
    assert barycentric_interpolate(mesh, f, 0, x) == pytest.approx(x @ a + b, abs=1e-9)


# -- simplex sampling ------------------------------------------------------------


def test_simplex_sums_to_one():
    w = sample_simplex(np.random.default_rng(1), 1000)
    assert np.all(w >= 0)
    assert np.max(np.abs(w.sum(axis=1) - 1.0)) < 1e-12


def test_simplex_moments():
    w = sample_simplex(np.random.default_rng(2), 100_000)
    assert np.allclose(w.mean(axis=0), 1 / 3, atol=0.01)
    assert np.mean(w[:, 0] > 0.5) == pytest.approx(0.25, abs=0.01)


def test_simplex_marginals_are_beta_1_2():
    w = sample_simplex(np.random.default_rng(3), 100_000)
    for k in range(3):
        assert stats.kstest(w[:, k], stats.beta(1, 2).cdf).statistic < 0.01


# -- face sampling ---------------------------------------------------------------


def test_face_samples_shape_and_norm(ico4):
    batch = sample_faces_and_points(ico4, np.zeros(ico4.n_vertices), 4, 8, np.random.default_rng(0))
    assert len(batch) == 32
    assert np.allclose(np.linalg.norm(batch.sphere_points, axis=1), 1.0, atol=1e-12)


def test_face_samples_constant_targets(ico4):
    batch = sample_faces_and_points(ico4, np.full(ico4.n_vertices, 2.5), 16, 4, np.random.default_rng(0))
    assert np.allclose(batch.targets, 2.5, atol=1e-12)


def test_face_samples_affine_target_on_planar_point():
    mesh = _single_face_mesh()
    batch = sample_faces_and_points(mesh, mesh.vertices[:, 0], 5, 10, np.random.default_rng(0))
    assert np.allclose(batch.targets[:, 0], batch.planar_points[:, 0], atol=1e-12)
    expected = np.einsum("nk,kd->nd", batch.weights, mesh.vertices)
    assert np.allclose(batch.planar_points, expected, atol=1e-12)


def test_face_sampling_area_weighted():
    mesh = make_icosphere(1)
    areas = mesh.face_areas()
    batch = sample_faces_and_points(mesh, np.zeros(mesh.n_vertices), 200_000, 1, np.random.default_rng(5))
    freq = np.bincount(batch.face_index, minlength=mesh.n_faces) / len(batch)
    assert np.allclose(freq, areas / areas.sum(), atol=3e-3)


def test_face_sampling_uniform_flag():
    mesh = make_icosphere(1)
    batch = sample_faces_and_points(mesh, np.zeros(mesh.n_vertices), 200_000, 1,
                                    np.random.default_rng(5), face_weighting="uniform")
    freq = np.bincount(batch.face_index, minlength=mesh.n_faces) / len(batch)
    assert np.allclose(freq, 1 / mesh.n_faces, atol=3e-3)


def test_face_sampling_empty_mesh():
    mesh = SphericalMesh(np.eye(3), np.zeros((0, 3), dtype=int))
    with pytest.raises(ValueError):
        sample_faces_and_points(mesh, np.zeros(3), 1, 1, np.random.default_rng(0))


# -- sphere sampling --------------------------------------------------------------


def test_sphere_single_point():
    p = sample_sphere_uniform(1, np.random.default_rng(0))
    assert p.shape == (1, 3)
    assert np.linalg.norm(p) == pytest.approx(1.0)


def test_sphere_mean_and_hemisphere():
    p = sample_sphere_uniform(100_000, np.random.default_rng(1))
    assert np.linalg.norm(p.mean(axis=0)) < 0.02
    q = sample_sphere_uniform(10_000, np.random.default_rng(2))
    assert np.mean(q[:, 2] > 0) == pytest.approx(0.5, abs=0.02)


def test_fibonacci_lattice_is_deterministic():
    a = sample_sphere_uniform(500)
    assert np.array_equal(a, sample_sphere_uniform(500))
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)
    assert np.linalg.norm(a.mean(axis=0)) < 1e-2


# -- face location -----------------------------------------------------------------


def test_locate_vertex(ico4):
    face, w = locate_face(ico4, ico4.vertices[17])
    assert 17 in ico4.faces[face]
    assert np.max(w) == pytest.approx(1.0, abs=1e-6)


def test_locate_centroid(ico4):
    c = ico4.vertices[ico4.faces[123]].mean(axis=0)
    face, w = locate_face(ico4, c / np.linalg.norm(c))
    assert face == 123
    assert np.allclose(w, 1 / 3, atol=1e-6)


def test_locate_interpolates_smooth_field(ico4):
    q = sample_sphere_uniform(1000, np.random.default_rng(0))
    face, w = locate_face(ico4, q)
    vals = np.einsum("nk,nk->n", w, ico4.vertices[ico4.faces[face], 1])
    assert np.max(np.abs(vals - q[:, 1])) < 1e-2
    assert np.all(w >= -1e-9)


def test_locate_reproduces_vertex_values(ico4):
    f = np.random.default_rng(3).normal(size=ico4.n_vertices)
    face, w = FaceLocator(ico4).locate(ico4.vertices)
    vals = np.einsum("nk,nk->n", w, f[ico4.faces[face]])
    assert np.max(np.abs(vals - f)) < 1e-6


def test_locate_open_mesh_raises():
    mesh = _single_face_mesh()
    with pytest.raises(MeshNotClosedError):
        locate_face(mesh, np.array([-1.0, 0.0, 0.0]))


# -- icosphere ----------------------------------------------------------------------


@pytest.mark.parametrize("level, nv, nf", [(0, 12, 20), (4, 2562, 5120), (6, 40962, 81920)])
def test_icosphere_counts(level, nv, nf):
    mesh = make_icosphere(level)
    assert (mesh.n_vertices, mesh.n_faces) == (nv, nf)
    assert nv == 10 * 4**level + 2


@pytest.mark.parametrize("level", [2, 3, 4])
def test_icosphere_topology_and_edges(level):
    mesh = make_icosphere(level)
    assert mesh.euler_characteristic() == 2
    e = mesh.edges()
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    assert lengths.max() / lengths.min() < 1.3
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-12)


def test_icosphere_level_bounds():
    with pytest.raises(ValueError):
        make_icosphere(8)


def test_mesh_records_radii():
    v = 3.0 * make_icosphere(1).vertices
    mesh = SphericalMesh(v, make_icosphere(1).faces)
    assert np.allclose(mesh.radii, 3.0)
    assert np.array_equal(mesh.source_vertices, v)
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0)
