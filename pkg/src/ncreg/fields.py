"""Feature fields on the sphere: a common interface over neural maps and meshes.

Every field exposes ``n_features``, ``values(points)`` and
``values_and_jacobian(points)``; the Jacobian has shape (n, n_features, 3).
``values_and_pullback`` returns the values and a function taking output
cotangents (n, n_features) to point cotangents (n, 3).
"""

import numpy as np

from .geometry import FaceLocator, SphericalMesh
from .neural_field import NeuralCorticalMap
from .validation import check_features, check_points


class _Field:
    def values_and_pullback(self, points):
        vals, jac = self.values_and_jacobian(points)
        return vals, lambda cot: np.einsum("nc,ncd->nd", cot, jac)


class NeuralField(_Field):
    """Field backed by a fitted :class:`NeuralCorticalMap`."""

    kind = "neural"

    def __init__(self, model):
        self.model = model
        self.n_features = model.n_outputs_

    def values(self, points):
        return self.model.predict(points)

    def values_and_jacobian(self, points):
        return self.model.predict_with_jacobian(points)

    def values_and_pullback(self, points):
        return self.model.predict_with_pullback(points)


class MeshField(_Field):
    """Piecewise-linear field interpolated on a spherical mesh.

    Queries are located by central projection onto the faces; the Jacobian is
    the exact derivative of the interpolant through that projection.
    """

    kind = "mesh"

    def __init__(self, mesh, features, locator=None):
        self.mesh = mesh
        self.features = check_features(features, mesh.n_vertices)
        self.n_features = self.features.shape[1]
        self.locator = locator if locator is not None else FaceLocator(mesh)

    def values(self, points):
        face, w = self.locator.locate(check_points(points))
        return np.einsum("nk,nkc->nc", w, self.features[self.mesh.faces[face]])

    def values_and_jacobian(self, points):
        q = check_points(points)
        face, _ = self.locator.locate(q)
        w, dw = self.locator.ray_weights(q, face)
        vals = self.features[self.mesh.faces[face]]
        return np.einsum("nk,nkc->nc", w, vals), np.einsum("nkc,nkd->ncd", vals, dw)


class RotatedField(_Field):
    """``base`` carried along by ``rotation``: value at p is base(R^T p)."""

    def __init__(self, base, rotation):
        self.base = base
        self.rotation = rotation
        self.n_features = base.n_features
        self.kind = getattr(base, "kind", "other")
        self._m = rotation.as_matrix()

    def values(self, points):
        return self.base.values(check_points(points) @ self._m)

    def values_and_jacobian(self, points):
        vals, jac = self.base.values_and_jacobian(check_points(points) @ self._m)
        return vals, jac @ self._m.T


class FunctionField(_Field):
    """Field from plain callables, mostly for analytic test cases.

    ``func`` maps (n, 3) points to (n, n_features); ``jac`` to
    (n, n_features, 3). Without ``jac`` the Jacobian is zero.
    """

    kind = "function"

    def __init__(self, func, n_features, jac=None):
        self.func = func
        self.jac = jac
        self.n_features = n_features

    def values(self, points):
        p = check_points(points)
        return np.asarray(self.func(p), dtype=np.float64).reshape(len(p), self.n_features)

    def values_and_jacobian(self, points):
        p = check_points(points)
        vals = self.values(p)
        if self.jac is None:
            return vals, np.zeros((len(p), self.n_features, 3))
        return vals, np.asarray(self.jac(p), dtype=np.float64).reshape(len(p), self.n_features, 3)


def constant_field(value):
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return FunctionField(lambda p: np.broadcast_to(value, (len(p), len(value))), len(value))


def as_field(obj):
    """Coerce a fitted map, a ``(mesh, features)`` pair or a field into a field."""
    if isinstance(obj, NeuralCorticalMap):
        return NeuralField(obj)
    if isinstance(obj, tuple) and len(obj) == 2 and isinstance(obj[0], SphericalMesh):
        return MeshField(*obj)
    if hasattr(obj, "values_and_jacobian") and hasattr(obj, "n_features"):
        if not hasattr(obj, "values_and_pullback"):
            return _Adapter(obj)
        return obj
    raise TypeError(f"cannot use {type(obj).__name__} as a feature field")


class _Adapter(_Field):
    """Adds the pullback to third-party objects with the basic interface."""

    def __init__(self, obj):
        self.obj = obj
        self.n_features = obj.n_features
        self.kind = getattr(obj, "kind", "other")

    def values(self, points):
        return self.obj.values(points)

    def values_and_jacobian(self, points):
        return self.obj.values_and_jacobian(points)
