"""Unit-sphere primitives: meshes, barycentric interpolation, sampling and face lookup."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .exceptions import DegenerateGeometryError, MeshNotClosedError

DEGENERATE_AREA = 1e-12
WEIGHT_TOL = 1e-9


def normalize(points):
    """Project points (n, 3) radially onto the unit sphere."""
    points = np.asarray(points, dtype=np.float64)
    norms = np.linalg.norm(points, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateGeometryError("cannot project the origin onto the sphere")
    return points / norms


@dataclass(frozen=True, eq=False)
class SphericalMesh:
    """Triangle mesh with vertices on the unit sphere.

    Parameters
    ----------
    vertices : array-like of shape (n_vertices, 3)
        Vertex positions. Renormalized onto the unit sphere; the original
        radii are kept in ``radii`` so writers can reproduce the input.
    faces : array-like of shape (n_faces, 3)
        Integer vertex indices per triangle.
    """

    vertices: np.ndarray
    faces: np.ndarray
    radii: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True)
        f = np.array(self.faces, dtype=np.int64, copy=True)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must have shape (m, 3), got {f.shape}")
        if len(v) and not np.all(np.isfinite(v)):
            raise ValueError("vertices contain non-finite values")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise DegenerateGeometryError("face with repeated vertex index")
        if self.radii is None:
            radii = np.linalg.norm(v, axis=1)
            source = v.copy()
        else:
            radii = np.array(self.radii, dtype=np.float64, copy=True)
            source = None
        if np.any(radii == 0):
            raise DegenerateGeometryError("vertex at the origin")
        # leave exact unit vectors untouched so text round trips stay bit-exact
        off = np.abs(np.linalg.norm(v, axis=1) - 1.0) > 1e-12
        v[off] = v[off] / np.linalg.norm(v[off], axis=1, keepdims=True)
        if len(f):
            areas = face_areas(v, f)
            if np.any(areas <= 0):
                raise DegenerateGeometryError(f"{np.sum(areas <= 0)} faces with zero area")
        if source is None:
            source = v * radii[:, None]
        for arr in (v, f, radii, source):
            arr.setflags(write=False)
        object.__setattr__(self, "_source", source)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "radii", radii)

    @property
    def source_vertices(self):
        """Vertex positions as given, before projection onto the sphere."""
        return self._source

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def edges(self):
        """Unique undirected edges as an (n_edges, 2) array."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges()) + self.n_faces

    def face_areas(self):
        return face_areas(self.vertices, self.faces)

    def face_centroids(self):
        return self.vertices[self.faces].mean(axis=1)

    def neighbors(self):
        """Vertex pairs sharing an edge (same as :meth:`edges`)."""
        return self.edges()


def face_areas(vertices, faces):
    tri = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def _area(a, b, c):
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)


def area_weights(p1, p2, p3, x):
    """Normalized sub-triangle area weights of ``x`` in triangle (p1, p2, p3).

    Each weight is the area of the sub-triangle opposite the matching vertex
    divided by the sum of the three sub-areas. Broadcasts over leading axes.
    """
    a1 = _area(p2, p3, x)
    a2 = _area(p1, p3, x)
    a3 = _area(p1, p2, x)
    total = a1 + a2 + a3
    if np.any(total < DEGENERATE_AREA):
        raise DegenerateGeometryError("sub-triangle areas sum below 1e-12")
    return np.stack([a1, a2, a3], axis=-1) / total[..., None]


def barycentric_interpolate(mesh, features, face_index, point):
    """Area-weighted interpolation of vertex features at a point on a face.

    Parameters
    ----------
    mesh : SphericalMesh
    features : ndarray of shape (n_vertices,) or (n_vertices, n_f)
    face_index : int or ndarray of int
    point : ndarray of shape (3,) or (n, 3)
        Point(s) in (or numerically near) the plane of the face.

    Returns
    -------
    ndarray
        Interpolated feature vector(s).
    """
    features = np.asarray(features, dtype=np.float64)
    idx = mesh.faces[face_index]
    tri = mesh.vertices[idx]
    w = area_weights(tri[..., 0, :], tri[..., 1, :], tri[..., 2, :], np.asarray(point, dtype=np.float64))
    vals = features[idx]
    if features.ndim == 1:
        return np.sum(w * vals, axis=-1)
    return np.sum(w[..., None] * vals, axis=-2)


def sample_simplex(rng, size=None):
    """Uniform draws from the standard 2-simplex via sorted uniforms.

    Returns an array of shape ``(3,)`` or ``(size, 3)``.
    """
    shape = (2,) if size is None else (size, 2)
    u = np.sort(rng.random(shape), axis=-1)
    return np.stack([u[..., 0], u[..., 1] - u[..., 0], 1.0 - u[..., 1]], axis=-1)


@dataclass
class SampleBatch:
    """Training samples drawn on mesh faces.

    ``planar_points`` lie inside the triangles, ``sphere_points`` are their
    radial projections and ``targets`` the interpolated features at the
    planar points.
    """

    face_index: np.ndarray
    weights: np.ndarray
    planar_points: np.ndarray
    sphere_points: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.face_index)


class FaceSampler:
    """Draws faces (area-weighted or uniform) and barycentric points on them."""

    def __init__(self, mesh, features, face_weighting="area"):
        if mesh.n_faces == 0:
            raise ValueError("cannot sample from an empty mesh")
        if face_weighting not in ("area", "uniform"):
            raise ValueError(f"unknown face_weighting {face_weighting!r}")
        self.mesh = mesh
        self.features = np.asarray(features, dtype=np.float64).reshape(mesh.n_vertices, -1)
        self.face_weighting = face_weighting
        if face_weighting == "area":
            cdf = np.cumsum(mesh.face_areas())
            self._cdf = cdf / cdf[-1]
        else:
            self._cdf = None
        self._tri = mesh.vertices[mesh.faces]

    def sample(self, n_faces, points_per_face, rng):
        if n_faces < 1 or points_per_face < 1:
            raise ValueError("n_faces and points_per_face must be >= 1")
        if self._cdf is None:
            faces = rng.integers(0, self.mesh.n_faces, size=n_faces)
        else:
            faces = np.searchsorted(self._cdf, rng.random(n_faces), side="right")
            faces = np.minimum(faces, self.mesh.n_faces - 1)
        faces = np.repeat(faces, points_per_face)
        w = sample_simplex(rng, len(faces))
        n = len(faces)
        planar = np.empty((n, 3))
        sphere = np.empty((n, 3))
        targets = np.empty((n, self.features.shape[1]))
        min_total = _kernels.face_samples(
            self._tri[faces], self.features[self.mesh.faces[faces]], w, planar, sphere, targets
        )
        if min_total < DEGENERATE_AREA:
            raise DegenerateGeometryError("sub-triangle areas sum below 1e-12")
        return SampleBatch(faces, w, planar, sphere, targets)


def sample_faces_and_points(mesh, features, n_faces, points_per_face, rng, face_weighting="area"):
    """Sample ``n_faces * points_per_face`` points on mesh faces with targets."""
    return FaceSampler(mesh, features, face_weighting).sample(n_faces, points_per_face, rng)


def sample_sphere_uniform(n, rng=None):
    """Points on the unit sphere.

    With ``rng=None`` a deterministic Fibonacci lattice is returned, otherwise
    i.i.d. uniform points from normalized Gaussian vectors.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is not None:
        return normalize(rng.standard_normal((n, 3)))
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def make_icosphere(level):
    """Icosahedron subdivided ``level`` times, vertices projected to the sphere."""
    if not 0 <= level <= 7:
        raise ValueError("level must be in [0, 7]")
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = np.array([
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ], dtype=np.int64)
    v = normalize(np.array(verts, dtype=np.float64))
    for _ in range(level):
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mids = normalize(v[uniq[:, 0]] + v[uniq[:, 1]])
        m = len(faces)
        a = inverse[:m] + len(v)
        b = inverse[m:2 * m] + len(v)
        c = inverse[2 * m:] + len(v)
        v = np.vstack([v, mids])
        f0, f1, f2 = faces[:, 0], faces[:, 1], faces[:, 2]
        faces = np.concatenate([
            np.column_stack([f0, a, c]),
            np.column_stack([f1, b, a]),
            np.column_stack([f2, c, b]),
            np.column_stack([a, b, c]),
        ])
    return SphericalMesh(v, faces)


class FaceLocator:
    """Finds the face whose central projection contains a query direction.

    Candidates come from the nearest face centroids; queries that none of
    them contains fall back to an exhaustive scan.
    """

    def __init__(self, mesh, n_candidates=8):
        self.mesh = mesh
        self.n_candidates = min(n_candidates, mesh.n_faces)
        tri = mesh.vertices[mesh.faces]
        self._tri = tri
        p1, p2, p3 = tri[:, 0], tri[:, 1], tri[:, 2]
        # det(q, p2, p3) = q . (p2 x p3) etc. give unnormalized ray weights
        self._c = np.stack([np.cross(p2, p3), np.cross(p3, p1), np.cross(p1, p2)], axis=1)
        self._orient = np.sign(np.einsum("nd,nd->n", p1, self._c[:, 0]))
        self._tree = cKDTree(normalize(tri.mean(axis=1)))

    def _weights(self, q, faces):
        # q: (n, 3), faces: (n,) -> raw weights (n, 3) and containment mask
        c = self._c[faces]
        d = np.einsum("nd,nkd->nk", q, c)
        s = d.sum(axis=1)
        ok = (s * self._orient[faces]) > 0
        w = np.divide(d, s[:, None], out=np.full_like(d, -1.0), where=s[:, None] != 0)
        ok &= np.all(w >= -WEIGHT_TOL, axis=1)
        return w, ok

    def locate(self, points):
        """Return ``(face_index, weights)`` for query points of shape (n, 3)."""
        q = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(q)
        face = np.full(n, -1, dtype=np.int64)
        weights = np.zeros((n, 3))
        _, cand = self._tree.query(q, k=self.n_candidates)
        cand = np.asarray(cand).reshape(n, -1)
        pending = np.arange(n)
        for j in range(cand.shape[1]):
            if len(pending) == 0:
                break
            w, ok = self._weights(q[pending], cand[pending, j])
            hit = pending[ok]
            face[hit] = cand[hit, j]
            weights[hit] = w[ok]
            pending = pending[~ok]
        for i in pending:
            faces = np.arange(self.mesh.n_faces)
            w, ok = self._weights(np.broadcast_to(q[i], (len(faces), 3)), faces)
            if not np.any(ok):
                raise MeshNotClosedError(f"no face contains query direction {q[i]}")
            k = int(np.flatnonzero(ok)[0])
            face[i] = k
            weights[i] = w[k]
        weights = np.clip(weights, 0.0, None)
        weights /= weights.sum(axis=1, keepdims=True)
        return face, weights

    def ray_weights(self, points, faces):
        """Unclamped ray weights and their derivative w.r.t. the query.

        Returns ``w`` of shape (n, 3) and ``dw`` of shape (n, 3, 3) with
        ``dw[n, i, :] = d w_i / d q``.
        """
        q = np.asarray(points, dtype=np.float64)
        c = self._c[faces]
        d = np.einsum("nd,nkd->nk", q, c)
        s = d.sum(axis=1)
        w = d / s[:, None]
        normal = c.sum(axis=1)
        dw = (c - w[:, :, None] * normal[:, None, :]) / s[:, None, None]
        return w, dw


def locate_face(mesh, query, locator=None):
    """Locate the containing face and barycentric weights for query point(s)."""
    if locator is None:
        locator = FaceLocator(mesh)
    face, w = locator.locate(query)
    if np.ndim(query) == 1:
        return int(face[0]), w[0]
    return face, w
