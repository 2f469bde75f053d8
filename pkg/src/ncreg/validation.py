"""Input validation helpers used by the estimators."""

import numpy as np

from .exceptions import ShapeError


def check_points(points, *, unit=False, tol=1e-6):
    """Return points as a C-contiguous float64 array of shape (n, 3).

    A single point of shape (3,) is promoted to (1, 3). With ``unit=True``
    points must lie on the unit sphere within ``tol``.
    """
    arr = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=np.float64)))
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"expected points of shape (n, 3), got {np.shape(points)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points contain non-finite values")
    if unit and len(arr):
        err = np.max(np.abs(np.linalg.norm(arr, axis=1) - 1.0))
        if err > tol:
            raise ValueError(f"points must be unit-norm (max deviation {err:.3g})")
    return arr


def check_features(features, n_vertices):
    """Return features as a float64 (n_vertices, n_f) array."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"features must be 1-D or 2-D, got ndim={arr.ndim}")
    if arr.shape[0] != n_vertices:
        raise ShapeError(f"feature rows ({arr.shape[0]}) != vertex count ({n_vertices})")
    if not np.all(np.isfinite(arr)):
        raise ValueError("features contain non-finite values")
    return np.ascontiguousarray(arr)


def check_random_state(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
