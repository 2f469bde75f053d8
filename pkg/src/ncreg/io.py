"""Readers and writers for meshes, per-vertex features and parcellations.

Byte layouts
------------
FreeSurfer triangle surface (big-endian)::

    3 bytes   magic 0xFF 0xFF 0xFE
    n bytes   comment text ending with two newline bytes
    int32     vertex count
    int32     face count
    float32   x, y, z per vertex
    int32     three vertex indices per face

FreeSurfer curv "new format" (big-endian)::

    3 bytes   magic 0xFF 0xFF 0xFF
    int32     vertex count, face count, values per vertex (must be 1)
    float32   one value per vertex

Text formats: CSV with a header row of channel names and values written with
17 significant digits; OFF meshes; label files with one non-negative integer
per line.
"""

from __future__ import annotations

import io
import os
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, ShapeError, UnsupportedFormatError
from .geometry import SphericalMesh

SURF_MAGIC = b"\xff\xff\xfe"
CURV_MAGIC = b"\xff\xff\xff"
DEFAULT_COMMENT = "created by ncreg"


@dataclass(eq=False)
class FeatureMap:
    """Per-vertex feature values, one column per channel."""

    values: np.ndarray
    channel_names: list = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ShapeError(f"feature values must be 2-D, got ndim={v.ndim}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        self.values = np.ascontiguousarray(v)
        if self.channel_names is None:
            self.channel_names = [f"f{i}" for i in range(v.shape[1])]
        self.channel_names = [str(c) for c in self.channel_names]
        if len(self.channel_names) != v.shape[1]:
            raise ShapeError("one channel name per column required")

    @property
    def n_features(self):
        return self.values.shape[1]


@dataclass(eq=False)
class Parcellation:
    """Non-negative integer label per vertex."""

    labels: np.ndarray
    label_names: dict = field(default=None)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 1:
            raise ShapeError("labels must be 1-D")
        if lab.size and not np.issubdtype(lab.dtype, np.integer):
            if not np.all(lab == np.round(lab)):
                raise ValueError("labels must be integers")
        lab = lab.astype(np.int64)
        if np.any(lab < 0):
            raise ValueError("labels must be non-negative")
        self.labels = lab


@contextmanager
def _open(target, mode):
    if isinstance(target, (str, os.PathLike)):
        with open(target, mode) as fh:
            yield fh
    else:
        yield target


class _Reader:
    """Byte cursor that reports the offset of a short read."""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {what} at byte offset {self.pos}: need {n} bytes, "
                              f"{len(self.data) - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, count, what):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt, count=count)


def _read_bytes(source):
    with _open(source, "rb") as fh:
        return fh.read()


def read_freesurfer_surface(source, return_comment=False):
    """Parse a FreeSurfer triangle surface into a :class:`SphericalMesh`.

    Vertices are projected onto the unit sphere; their original radii stay
    available as ``mesh.radii``.
    """
    r = _Reader(_read_bytes(source))
    if r.take(3, "magic") != SURF_MAGIC:
        raise UnsupportedFormatError("not a FreeSurfer triangle surface (bad magic)")
    end = r.data.find(b"\n\n", r.pos)
    if end < 0:
        raise FormatError(f"truncated comment at byte offset {r.pos}: no terminator")
    comment = r.data[r.pos:end].decode("utf-8", errors="replace")
    r.pos = end + 2
    nv, nf = (int(x) for x in r.array(">i4", 2, "header counts"))
    if nv < 0 or nf < 0:
        raise FormatError(f"negative counts in header at byte offset {r.pos - 8}")
    verts = r.array(">f4", 3 * nv, "vertex block").reshape(nv, 3).astype(np.float64)
    faces = r.array(">i4", 3 * nf, "face block").reshape(nf, 3).astype(np.int64)
    mesh = SphericalMesh(verts, faces)
    return (mesh, comment) if return_comment else mesh


def write_freesurfer_surface(target, mesh, comment=DEFAULT_COMMENT):
    """Write ``mesh`` (with its original radii) as a FreeSurfer surface."""
    if "\n\n" in comment:
        raise ValueError("comment must not contain a blank line")
    buf = io.BytesIO()
    buf.write(SURF_MAGIC)
    buf.write(comment.encode("utf-8") + b"\n\n")
    buf.write(struct.pack(">2i", mesh.n_vertices, mesh.n_faces))
    buf.write(np.asarray(mesh.source_vertices, dtype=">f4").tobytes())
    buf.write(np.asarray(mesh.faces, dtype=">i4").tobytes())
    with _open(target, "wb") as fh:
        fh.write(buf.getvalue())


def read_freesurfer_curv(source, vertex_count=None, name="curv"):
    """Parse a single-channel curv file into a :class:`FeatureMap`."""
    r = _Reader(_read_bytes(source))
    if r.take(3, "magic") != CURV_MAGIC:
        raise UnsupportedFormatError("not a FreeSurfer curv file (bad magic)")
    vnum, _fnum, per_vertex = (int(x) for x in r.array(">i4", 3, "header"))
    if per_vertex != 1:
        raise UnsupportedFormatError(f"{per_vertex} values per vertex; only 1 is supported")
    if vertex_count is not None and vnum != vertex_count:
        raise ShapeError(f"curv file has {vnum} values, mesh has {vertex_count} vertices")
    if vnum < 0:
        raise FormatError("negative vertex count at byte offset 3")
    vals = r.array(">f4", vnum, "value block").astype(np.float64)
    return FeatureMap(vals, [name])


def write_freesurfer_curv(target, values, n_faces=0):
    vals = np.asarray(values, dtype=np.float64).ravel()
    buf = CURV_MAGIC + struct.pack(">3i", len(vals), n_faces, 1) + vals.astype(">f4").tobytes()
    with _open(target, "wb") as fh:
        fh.write(buf)


def _fmt(x):
    return "%.17g" % x


def _text_lines(source):
    with _open(source, "rb") as fh:
        data = fh.read()
    return data.decode("utf-8").splitlines()


def read_csv_features(source):
    """Read a CSV feature file (header row of channel names)."""
    lines = _text_lines(source)
    if not lines or not lines[0].strip():
        raise FormatError("line 1: missing header row")
    names = [c.strip() for c in lines[0].split(",")]
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(names):
            raise FormatError(f"line {i}: expected {len(names)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"line {i}: {exc}") from None
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    if not np.all(np.isfinite(values)):
        raise FormatError("non-finite feature value")
    return FeatureMap(values, names)


def write_csv_features(target, features):
    if not isinstance(features, FeatureMap):
        features = FeatureMap(features)
    out = [",".join(features.channel_names)]
    out.extend(",".join(_fmt(x) for x in row) for row in features.values)
    with _open(target, "wb") as fh:
        fh.write(("\n".join(out) + "\n").encode("utf-8"))


def read_off_mesh(source):
    """Read an OFF text mesh of triangles."""
    lines = [(i, ln.split("#")[0].strip()) for i, ln in enumerate(_text_lines(source), start=1)]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines or lines[0][1] != "OFF":
        raise FormatError("line 1: missing OFF header")
    try:
        nv, nf, _ = (int(x) for x in lines[1][1].split())
    except (IndexError, ValueError):
        raise FormatError(f"line {lines[1][0] if len(lines) > 1 else 2}: bad count line") from None
    if len(lines) < 2 + nv + nf:
        raise FormatError(f"line {lines[-1][0]}: file ends before {nv} vertices and {nf} faces")
    verts = np.empty((nv, 3))
    for k in range(nv):
        i, ln = lines[2 + k]
        try:
            xyz = [float(x) for x in ln.split()]
        except ValueError:
            raise FormatError(f"line {i}: bad vertex") from None
        if len(xyz) != 3:
            raise FormatError(f"line {i}: vertex needs 3 coordinates")
        verts[k] = xyz
    faces = np.empty((nf, 3), dtype=np.int64)
    for k in range(nf):
        i, ln = lines[2 + nv + k]
        try:
            idx = [int(x) for x in ln.split()]
        except ValueError:
            raise FormatError(f"line {i}: bad face") from None
        if len(idx) != 4 or idx[0] != 3:
            raise FormatError(f"line {i}: only triangles are supported")
        faces[k] = idx[1:]
    return SphericalMesh(verts, faces)


def write_off_mesh(target, mesh):
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    out.extend(" ".join(_fmt(x) for x in v) for v in mesh.source_vertices)
    out.extend(f"3 {a} {b} {c}" for a, b, c in mesh.faces)
    with _open(target, "wb") as fh:
        fh.write(("\n".join(out) + "\n").encode("utf-8"))


def read_labels(source, vertex_count=None):
    """Read one non-negative integer label per line."""
    labels = []
    for i, line in enumerate(_text_lines(source), start=1):
        s = line.strip()
        if not s:
            continue
        try:
            v = int(s)
        except ValueError:
            raise FormatError(f"line {i}: not an integer: {s!r}") from None
        if v < 0:
            raise FormatError(f"line {i}: negative label {v}")
        labels.append(v)
    if vertex_count is not None and len(labels) != vertex_count:
        raise ShapeError(f"{len(labels)} labels for {vertex_count} vertices")
    return Parcellation(np.array(labels, dtype=np.int64))


def write_labels(target, labels):
    lab = labels.labels if isinstance(labels, Parcellation) else Parcellation(labels).labels
    with _open(target, "wb") as fh:
        fh.write("".join(f"{int(v)}\n" for v in lab).encode("utf-8"))


def read_mesh(path):
    """Read a mesh choosing the format from the file contents."""
    with open(path, "rb") as fh:
        head = fh.read(3)
    if head == SURF_MAGIC:
        return read_freesurfer_surface(path)
    return read_off_mesh(path)


def read_features(path):
    """Read CSV features or a single curv file, chosen by contents."""
    with open(path, "rb") as fh:
        head = fh.read(3)
    if head == CURV_MAGIC:
        return read_freesurfer_curv(path, name=os.path.splitext(os.path.basename(path))[0])
    return read_csv_features(path)
