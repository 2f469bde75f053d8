"""Synthetic cortex-like subjects on the sphere.

Feature channels are random sums of real spherical harmonics, standardized
to zero mean and unit variance over the generating mesh. Low degrees give
broad, sulc-like patterns; high degrees give curvature-like detail. The
parcellation is the spherical Voronoi partition of well-separated seeds.
"""

from __future__ import annotations

import numpy as np
from scipy.special import sph_harm_y

from .geometry import make_icosphere
from .io import FeatureMap, Parcellation
from .rotations import make_perturbation
from .validation import check_points

__all__ = ["SyntheticCortex", "synth_subject", "make_perturbation", "real_sph_harm"]


def real_sph_harm(degree, points):
    """Real spherical harmonics of one degree at unit points, shape (n, 2l+1)."""
    p = check_points(points)
    theta = np.arccos(np.clip(p[:, 2], -1.0, 1.0))
    phi = np.arctan2(p[:, 1], p[:, 0])
    cols = [sph_harm_y(degree, 0, theta, phi).real]
    for m in range(1, degree + 1):
        y = sph_harm_y(degree, m, theta, phi)
        cols.append(np.sqrt(2) * y.real)
        cols.append(np.sqrt(2) * y.imag)
    return np.stack(cols, axis=1)


def _pick_seeds(vertices, n_labels, rng):
    # greedy draw over shuffled vertices, relaxing the spacing until enough fit
    order = rng.permutation(len(vertices))
    cand = vertices[order]
    sep = np.cos(0.6 * np.sqrt(4 * np.pi / n_labels))
    while True:
        chosen = []
        closest = np.full(len(cand), -np.inf)
        for i in range(len(cand)):
            if closest[i] <= sep:
                chosen.append(i)
                if len(chosen) == n_labels:
                    return cand[chosen].copy()
                closest = np.maximum(closest, cand @ cand[i])
        sep = np.cos(0.9 * np.arccos(sep))


class SyntheticCortex:
    """Continuous synthetic subject: features and labels at any point.

    Parameters
    ----------
    degrees : sequence of int
        Maximum harmonic degree of each channel.
    n_labels : int
    level : int
        Icosphere level on which channels are standardized and parcel seeds
        are placed.
    seed : int
    """

    def __init__(self, degrees, n_labels=8, level=5, seed=0):
        degrees = [int(d) for d in degrees]
        if not degrees or min(degrees) < 1:
            raise ValueError("harmonic degrees must be >= 1")
        if n_labels < 2:
            raise ValueError("n_labels must be >= 2")
        self.degrees = degrees
        self.n_labels = int(n_labels)
        self.level = int(level)
        self.seed = seed
        rng = np.random.default_rng(seed)
        # power per degree falls off as 1/l, split evenly across the 2l+1 terms
        self.coefs = [
            [rng.standard_normal(2 * l + 1) * np.sqrt(1.0 / (l * (2 * l + 1))) for l in range(1, d + 1)]
            for d in degrees
        ]
        self.mesh = make_icosphere(self.level)
        self.label_seeds = _pick_seeds(self.mesh.vertices, self.n_labels, rng)
        raw = self._raw(self.mesh.vertices)
        self.mean_ = raw.mean(axis=0)
        self.scale_ = raw.std(axis=0)

    @property
    def n_features(self):
        return len(self.degrees)

    def _raw(self, points):
        p = check_points(points)
        out = np.zeros((len(p), len(self.degrees)))
        cache = {}
        for c, d in enumerate(self.degrees):
            for l in range(1, d + 1):
                if l not in cache:
                    cache[l] = real_sph_harm(l, p)
                out[:, c] += cache[l] @ self.coefs[c][l - 1]
        return out

    def features_at(self, points):
        return (self._raw(points) - self.mean_) / self.scale_

    def labels_at(self, points):
        return np.argmax(check_points(points) @ self.label_seeds.T, axis=1)

    def channel_names(self):
        return [f"deg{d}_{i}" for i, d in enumerate(self.degrees)]


def synth_subject(level, harmonic_degree, n_f, n_labels, seed, degrees=None):
    """Mesh, features and parcellation of a synthetic subject.

    ``degrees`` overrides the per-channel degrees (defaults to
    ``harmonic_degree`` for every channel).
    """
    if harmonic_degree < 1:
        raise ValueError("harmonic_degree must be >= 1")
    degrees = list(degrees) if degrees is not None else [harmonic_degree] * n_f
    if len(degrees) != n_f:
        raise ValueError("need one degree per channel")
    cortex = SyntheticCortex(degrees, n_labels=n_labels, level=level, seed=seed)
    mesh = cortex.mesh
    feats = FeatureMap(cortex.features_at(mesh.vertices), cortex.channel_names())
    labels = Parcellation(cortex.labels_at(mesh.vertices))
    return mesh, feats, labels
