"""Neural cortical maps: hash-grid encoded MLPs fitted to spherical meshes."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .exceptions import NumericFaultError, ShapeError, UndefinedStatisticError, UnsupportedFormatError
from .geometry import FaceLocator, FaceSampler, SphericalMesh
from .validation import check_features, check_points, check_random_state

MAGIC = b"NCMAP1"


def level_resolutions(base_resolution, growth_factor, n_levels):
    """Grid resolution per level: ``floor(base * growth**level)``."""
    return np.array(
        [int(np.floor(base_resolution * growth_factor ** lv)) for lv in range(n_levels)],
        dtype=np.float64,
    )


class NeuralCorticalMap(RegressorMixin, BaseEstimator):
    """Continuous feature map on the unit sphere.

    A multiresolution hash encoding followed by a ReLU MLP, overfitted to the
    per-vertex features of one spherical mesh. Training draws points on mesh
    faces, uses the barycentric interpolant as target and minimizes the MSE
    with Adam.

    Parameters
    ----------
    n_levels, features_per_level, log2_table_size, base_resolution, growth_factor
        Hash encoding layout. Level ``l`` uses a grid of resolution
        ``floor(base_resolution * growth_factor**l)``.
    hidden_layers, hidden_width : int
        MLP size. Activations are ReLU, the output layer is linear.
    n_faces, points_per_face : int
        Faces drawn per step and points drawn per face.
    n_iter : int
        Adam steps.
    lr_tables, lr_mlp : float
        Learning rates for the hash tables and MLP parameters.
    beta1, beta2, epsilon : float
        Adam constants.
    face_weighting : {"area", "uniform"}
        Face selection distribution.
    random_state : int or None
    """

    def __init__(
        self,
        n_levels=12,
        features_per_level=2,
        log2_table_size=14,
        base_resolution=4,
        growth_factor=1.45,
        hidden_layers=2,
        hidden_width=64,
        n_faces=1024,
        points_per_face=4,
        n_iter=3000,
        lr_tables=1e-2,
        lr_mlp=1e-3,
        beta1=0.9,
        beta2=0.99,
        epsilon=1e-10,
        face_weighting="area",
        random_state=0,
    ):
        self.n_levels = n_levels
        self.features_per_level = features_per_level
        self.log2_table_size = log2_table_size
        self.base_resolution = base_resolution
        self.growth_factor = growth_factor
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.n_faces = n_faces
        self.points_per_face = points_per_face
        self.n_iter = n_iter
        self.lr_tables = lr_tables
        self.lr_mlp = lr_mlp
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.face_weighting = face_weighting
        self.random_state = random_state

    # -- setup -----------------------------------------------------------------

    def _validate_params(self):
        if self.n_levels < 1 or self.features_per_level < 1:
            raise ValueError("n_levels and features_per_level must be >= 1")
        if not 1 <= self.log2_table_size <= 30:
            raise ValueError("log2_table_size must be in [1, 30]")
        if self.growth_factor <= 1:
            raise ValueError("growth_factor must be > 1")
        if self.hidden_layers < 1 or self.hidden_width < 8:
            raise ValueError("need hidden_layers >= 1 and hidden_width >= 8")
        if self.n_faces < 1 or self.points_per_face < 1 or self.n_iter < 0:
            raise ValueError("sample counts must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    @property
    def encoding_dim(self):
        return self.n_levels * self.features_per_level

    def _initialize(self, n_outputs, rng):
        self._validate_params()
        self.resolutions_ = level_resolutions(self.base_resolution, self.growth_factor, self.n_levels)
        table_size = 2 ** self.log2_table_size
        self.tables_ = rng.uniform(-1e-4, 1e-4, size=(self.n_levels, table_size, self.features_per_level))
        sizes = [self.encoding_dim] + [self.hidden_width] * self.hidden_layers + [n_outputs]
        self.weights_ = []
        self.biases_ = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights_.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases_.append(np.zeros(fan_out))
        self.n_outputs_ = n_outputs

    def initialize(self, n_outputs=1):
        """Initialize parameters without training (useful for tests and stubs)."""
        self._initialize(n_outputs, check_random_state(self.random_state))
        self.loss_curve_ = []
        self.n_iter_ = 0
        self.channel_names_ = [f"f{i}" for i in range(n_outputs)]
        return self

    @property
    def n_parameters_(self):
        check_is_fitted(self, "tables_")
        return int(self.tables_.size + sum(w.size + b.size for w, b in zip(self.weights_, self.biases_)))

    # -- forward / backward ------------------------------------------------------

    def _encode(self, x):
        enc = np.empty((len(x), self.encoding_dim))
        _kernels.encode_only(x, self.tables_, self.resolutions_, enc)
        return enc

    def encode(self, points):
        """Hash-grid encoding of unit points, shape (n, n_levels * features_per_level)."""
        check_is_fitted(self, "tables_")
        return self._encode(check_points(points))

    def _mlp(self, enc, work=None):
        acts = [enc]
        h = enc
        for layer, (w, b) in enumerate(zip(self.weights_[:-1], self.biases_[:-1])):
            h = h @ w if work is None else np.matmul(h, w, out=work["h"][layer])
            _kernels.bias_relu(h, b)
            acts.append(h)
        out = h @ self.weights_[-1] if work is None else np.matmul(h, self.weights_[-1], out=work["out"])
        out += self.biases_[-1]
        return out, acts

    def _check_output(self, out):
        if not np.all(np.isfinite(out)):
            bad = [i for i, w in enumerate(self.weights_) if not np.all(np.isfinite(w))]
            raise NumericFaultError(f"non-finite network output (bad weight blocks: {bad})")

    def predict(self, points, batch_size=65536):
        """Feature values at unit points, shape (n, n_outputs)."""
        check_is_fitted(self, "tables_")
        x = check_points(points)
        out = np.empty((len(x), self.n_outputs_))
        for s in range(0, len(x), batch_size):
            out[s:s + batch_size] = self._mlp(self._encode(x[s:s + batch_size]))[0]
        self._check_output(out)
        return out

    def predict_with_jacobian(self, points):
        """Values (n, n_outputs) and input Jacobians (n, n_outputs, 3)."""
        check_is_fitted(self, "tables_")
        x = check_points(points)
        n = len(x)
        enc = np.empty((n, self.encoding_dim))
        denc = np.empty((n, self.encoding_dim, 3))
        _kernels.encode_with_jacobian(x, self.tables_, self.resolutions_, enc, denc)
        out, acts = self._mlp(enc)
        self._check_output(out)
        # one backward pass per output channel
        grad_enc = np.empty((self.n_outputs_, n, self.encoding_dim))
        for c in range(self.n_outputs_):
            g = np.repeat(self.weights_[-1][:, c][None, :], n, axis=0)
            for w, h in zip(reversed(self.weights_[:-1]), reversed(acts[1:])):
                _kernels.relu_backward(g, h)
                g = g @ w.T
            grad_enc[c] = g
        jac = np.empty((n, self.n_outputs_, 3))
        _kernels.contract_jacobian(grad_enc, denc, jac)
        return out, jac

    def predict_with_pullback(self, points):
        """Values and a function mapping output cotangents (n, n_outputs) to (n, 3).

        The pullback costs one backward pass regardless of the channel
        count, which is all a scalar energy needs.
        """
        check_is_fitted(self, "tables_")
        x = check_points(points)
        n = len(x)
        enc = np.empty((n, self.encoding_dim))
        denc = np.empty((n, self.encoding_dim, 3))
        _kernels.encode_with_jacobian(x, self.tables_, self.resolutions_, enc, denc)
        out, acts = self._mlp(enc)
        self._check_output(out)

        def pullback(cotangent):
            g = np.asarray(cotangent, dtype=np.float64).reshape(n, self.n_outputs_) @ self.weights_[-1].T
            for w, h in zip(reversed(self.weights_[:-1]), reversed(acts[1:])):
                _kernels.relu_backward(g, h)
                g = g @ w.T
            res = np.empty((n, 1, 3))
            _kernels.contract_jacobian(g[None], denc, res)
            return res[:, 0, :]

        return out, pullback

    def input_jacobian(self, points):
        """Derivative of the outputs w.r.t. the input point, shape (n, n_outputs, 3)."""
        return self.predict_with_jacobian(points)[1]

    def _loss_and_grads(self, x, targets, work=None):
        if work is None:
            work = self._workspace(len(x))
        idx, wts, enc = work["idx"], work["w"], work["enc"]
        _kernels.encode(x, self.tables_, self.resolutions_, idx, wts, enc)
        out, acts = self._mlp(enc, work)
        resid = np.subtract(out, targets, out=work["resid"])
        loss = float(np.vdot(resid, resid)) / resid.size
        delta = np.multiply(resid, 2.0 / resid.size, out=work["resid"])
        gw, gb = work["gw"], work["gb"]
        for layer in range(len(self.weights_) - 1, -1, -1):
            np.matmul(acts[layer].T, delta, out=gw[layer])
            np.sum(delta, axis=0, out=gb[layer])
            delta = np.matmul(delta, self.weights_[layer].T, out=work["delta"][layer])
            if layer > 0:
                _kernels.relu_backward(delta, acts[layer])
        _kernels.scatter_table_grad(idx, wts, delta, work["gtab"])
        return loss, work["gtab"], gw, gb

    def _workspace(self, n):
        """Preallocated arrays for one training batch size."""
        sizes = [self.encoding_dim] + [w.shape[1] for w in self.weights_]
        return {
            "idx": np.empty((n, self.n_levels, 8), dtype=np.int64),
            "w": np.empty((n, self.n_levels, 8)),
            "enc": np.empty((n, self.encoding_dim)),
            "h": [np.empty((n, k)) for k in sizes[1:-1]],
            "out": np.empty((n, self.n_outputs_)),
            "resid": np.empty((n, self.n_outputs_)),
            "delta": [np.empty((n, k)) for k in sizes[:-1]],
            "gw": [np.empty_like(w) for w in self.weights_],
            "gb": [np.empty_like(b) for b in self.biases_],
            "gtab": np.zeros_like(self.tables_),
        }

    def loss_and_gradients(self, points, targets):
        """MSE over the batch and its exact gradient w.r.t. every parameter block.

        Returns ``(loss, grads)`` where ``grads`` maps ``"tables"``,
        ``"W0"``, ``"b0"``, ... to arrays shaped like the parameters.
        """
        check_is_fitted(self, "tables_")
        x = check_points(points)
        t = np.asarray(targets, dtype=np.float64).reshape(len(x), -1)
        if len(x) == 0:
            raise ValueError("empty batch")
        loss, gtab, gw, gb = self._loss_and_grads(x, t)
        grads = {"tables": gtab.copy()}
        for i, (w, b) in enumerate(zip(gw, gb)):
            grads[f"W{i}"] = w.copy()
            grads[f"b{i}"] = b.copy()
        return loss, grads

    def parameter_blocks(self):
        """Named views on the parameters, matching :meth:`loss_and_gradients`."""
        check_is_fitted(self, "tables_")
        blocks = {"tables": self.tables_}
        for i, (w, b) in enumerate(zip(self.weights_, self.biases_)):
            blocks[f"W{i}"] = w
            blocks[f"b{i}"] = b
        return blocks

    # -- training ----------------------------------------------------------------

    def fit(self, mesh, features):
        """Fit the map to per-vertex ``features`` of ``mesh``.

        Parameters
        ----------
        mesh : SphericalMesh
        features : array-like of shape (n_vertices,) or (n_vertices, n_f), or FeatureMap
        """
        if not isinstance(mesh, SphericalMesh):
            raise TypeError("mesh must be a SphericalMesh")
        names = getattr(features, "channel_names", None)
        if names is not None:
            features = features.values
        feats = check_features(features, mesh.n_vertices)
        rng = check_random_state(self.random_state)
        self._initialize(feats.shape[1], rng)
        sampler = FaceSampler(mesh, feats, self.face_weighting)
        n = self.n_faces * self.points_per_face
        work = self._workspace(n)

        params = [self.tables_] + self.weights_ + self.biases_
        rates = [self.lr_tables] + [self.lr_mlp] * (len(self.weights_) + len(self.biases_))
        moments = [(np.zeros(p.size), np.zeros(p.size)) for p in params]
        losses = np.empty(self.n_iter)
        for it in range(self.n_iter):
            batch = sampler.sample(self.n_faces, self.points_per_face, rng)
            loss, gtab, gw, gb = self._loss_and_grads(batch.sphere_points, batch.targets, work)
            if not np.isfinite(loss):
                raise NumericFaultError(f"non-finite training loss at iteration {it}", iteration=it)
            losses[it] = loss
            for p, g, (m, v), lr in zip(params, [gtab] + gw + gb, moments, rates):
                _kernels.adam_update(
                    p.reshape(-1), g.reshape(-1), m, v,
                    lr, self.beta1, self.beta2, self.epsilon, it + 1,
                )
        self.loss_curve_ = losses.tolist()
        self.n_iter_ = self.n_iter
        self.channel_names_ = list(names) if names is not None else [f"f{i}" for i in range(feats.shape[1])]
        return self

    # -- persistence ---------------------------------------------------------------

    def to_bytes(self):
        """Serialize to the versioned little-endian model format."""
        check_is_fitted(self, "tables_")
        config = {
            "params": self.get_params(),
            "n_outputs": int(self.n_outputs_),
            "n_iter_trained": int(getattr(self, "n_iter_", 0)),
            "blocks": [[name, list(arr.shape)] for name, arr in self.parameter_blocks().items()],
            "n_parameters": self.n_parameters_,
            "channel_names": getattr(self, "channel_names_", None),
        }
        header = json.dumps(config, sort_keys=True).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        for arr in self.parameter_blocks().values():
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        if data[:len(MAGIC)] != MAGIC:
            raise UnsupportedFormatError(f"unsupported model version tag {data[:len(MAGIC)]!r}")
        off = len(MAGIC)
        try:
            (hlen,) = struct.unpack_from("<I", data, off)
            config = json.loads(data[off + 4:off + 4 + hlen].decode("utf-8"))
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise UnsupportedFormatError(f"corrupted model header: {exc}") from None
        off += 4 + hlen
        model = cls(**config["params"])
        model._validate_params()
        model.resolutions_ = level_resolutions(model.base_resolution, model.growth_factor, model.n_levels)
        arrays = {}
        for name, shape in config["blocks"]:
            count = int(np.prod(shape))
            if off + 8 * count > len(data):
                raise UnsupportedFormatError(f"truncated parameter block {name!r}")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
            off += 8 * count
        n_layers = model.hidden_layers + 1
        model.tables_ = np.ascontiguousarray(arrays["tables"])
        model.weights_ = [np.ascontiguousarray(arrays[f"W{i}"]) for i in range(n_layers)]
        model.biases_ = [np.ascontiguousarray(arrays[f"b{i}"]) for i in range(n_layers)]
        model.n_outputs_ = config["n_outputs"]
        model.n_iter_ = config["n_iter_trained"]
        model.loss_curve_ = []
        model.channel_names_ = config.get("channel_names") or [f"f{i}" for i in range(model.n_outputs_)]
        return model

    def save(self, path):
        data = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
        return len(data)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass(frozen=True)
class FidelityResult:
    """Least-squares fit ``prediction = slope * target + intercept``."""

    slope: float
    intercept: float
    r2: float


def regression_fidelity(target, prediction):
    """Regress prediction on target; zero-variance predictions give ``r2 = 0``."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(prediction, dtype=np.float64)
    tc = t - t.mean()
    stt = float(tc @ tc)
    if stt <= 0:
        raise UndefinedStatisticError("target has zero variance; regression undefined")
    pc = p - p.mean()
    slope = float(tc @ pc) / stt
    intercept = float(p.mean() - slope * t.mean())
    spp = float(pc @ pc)
    if spp <= 0:
        return FidelityResult(slope, intercept, 0.0)
    resid = pc - slope * tc
    r2 = 1.0 - float(resid @ resid) / spp
    return FidelityResult(slope, intercept, r2)


def evaluate_fit_fidelity(model, eval_mesh, reference_mesh, reference_features, locator=None):
    """Per-channel regression of model outputs on interpolated reference values.

    Targets at the vertices of ``eval_mesh`` come from barycentric
    interpolation on ``reference_mesh``; predictions from ``model.predict``.
    """
    feats = check_features(reference_features, reference_mesh.n_vertices)
    if locator is None:
        locator = FaceLocator(reference_mesh)
    face, w = locator.locate(eval_mesh.vertices)
    targets = np.einsum("nk,nkc->nc", w, feats[reference_mesh.faces[face]])
    pred = np.asarray(model.predict(eval_mesh.vertices), dtype=np.float64).reshape(len(targets), -1)
    if pred.shape[1] != targets.shape[1]:
        raise ShapeError(f"model outputs {pred.shape[1]} channels, reference has {targets.shape[1]}")
    return [regression_fidelity(targets[:, c], pred[:, c]) for c in range(targets.shape[1])]
