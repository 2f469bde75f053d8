"""Alignment quality: feature MSE and correlation, Dice overlap, label transfer."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ShapeError, UndefinedStatisticError
from .geometry import FaceLocator
from .rotations import Rotation


def feature_mse_pcc(fixed, warped):
    """Per-channel mean squared error and Pearson correlation.

    Parameters
    ----------
    fixed, warped : array-like of shape (n,) or (n, n_f)

    Returns
    -------
    mse, pcc : ndarray of shape (n_f,)
    """
    a = np.asarray(fixed, dtype=np.float64)
    b = np.asarray(warped, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ValueError("need at least two samples")
    mse = np.mean((a - b) ** 2, axis=0)
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    na = np.sqrt(np.sum(da * da, axis=0))
    nb = np.sqrt(np.sum(db * db, axis=0))
    if np.any(na == 0) or np.any(nb == 0):
        raise UndefinedStatisticError("correlation undefined for a constant channel")
    pcc = np.clip(np.sum(da * db, axis=0) / (na * nb), -1.0, 1.0)
    return mse, pcc


def dice_score(labels_a, labels_b, label_set=None, average="macro"):
    """Dice overlap of two labelings.

    ``macro`` averages 2|A_l & B_l| / (|A_l| + |B_l|) over labels present in
    either labeling; ``micro`` pools the counts over labels first (which, for
    complete labelings, equals the fraction of agreeing vertices).
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    if label_set is None:
        label_set = np.union1d(a, b)
    inter, total = [], []
    for lab in label_set:
        in_a = a == lab
        in_b = b == lab
        size = in_a.sum() + in_b.sum()
        if size == 0:
            continue
        inter.append(2.0 * np.sum(in_a & in_b))
        total.append(float(size))
    if not total:
        raise UndefinedStatisticError("no label present in either labeling")
    inter, total = np.array(inter), np.array(total)
    if average == "macro":
        return float(np.mean(inter / total))
    if average == "micro":
        return float(inter.sum() / total.sum())
    raise ValueError("average must be 'macro' or 'micro'")


def transfer_labels(template_mesh, template_labels, subject_mesh, rotation, locator=None):
    """Labels on subject vertices read off the template after rotating.

    Subject vertex s takes the label of the template face vertex with the
    largest barycentric weight at ``rotation.apply(s)``.
    """
    labels = np.asarray(getattr(template_labels, "labels", template_labels))
    if len(labels) != template_mesh.n_vertices:
        raise ShapeError("one template label per template vertex required")
    locator = locator if locator is not None else FaceLocator(template_mesh)
    if not isinstance(rotation, Rotation):
        rotation = Rotation.from_matrix(np.asarray(rotation))
    face, w = locator.locate(rotation.apply(subject_mesh.vertices))
    nearest = template_mesh.faces[face, np.argmax(w, axis=1)]
    return labels[nearest]


@dataclass
class AlignmentReport:
    mse: list
    pcc: list
    dice: float
    rotation_error_deg: float = None
    timing: float = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mse = [float(x) for x in np.atleast_1d(self.mse)]
        self.pcc = [float(x) for x in np.atleast_1d(self.pcc)]
        if any(m < 0 for m in self.mse):
            raise ValueError("mse must be non-negative")
        if any(not -1 <= p <= 1 for p in self.pcc):
            raise ValueError("pcc must lie in [-1, 1]")
        if self.dice is not None and not 0 <= self.dice <= 1:
            raise ValueError("dice must lie in [0, 1]")

    def to_row(self):
        row = {f"mse_{i}": v for i, v in enumerate(self.mse)}
        row.update({f"pcc_{i}": v for i, v in enumerate(self.pcc)})
        row["dice"] = self.dice
        row["rotation_error_deg"] = self.rotation_error_deg
        row["timing"] = self.timing
        row.update(self.extra)
        return row


def config_hash(config):
    """Short stable hash of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def append_results(path, rows, config=None):
    """Append dict rows to a CSV, writing the header when the file is new.

    With ``config`` every row gains a ``config_hash`` column.
    """
    rows = [dict(r) for r in rows]
    if config is not None:
        h = config_hash(config)
        for r in rows:
            r["config_hash"] = h
    if not rows:
        return
    fields = list(rows[0])
    for r in rows[1:]:
        fields.extend(k for k in r if k not in fields)
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    if not new:
        # an existing file fixes the columns
        with open(path, newline="") as fh:
            fields = next(csv.reader(fh), fields)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        if new:
            writer.writeheader()
        writer.writerows(rows)
