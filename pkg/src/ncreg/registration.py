"""Rigid registration on the sphere with stall detection and annealed restarts.

The energy between a fixed field F and a moving field M for a rotation R is
the mean over sample points and channels of ``(F(p) - M(R p))**2``. It is
minimized with Adam over a rotation parametrization. When the loss settles
near its moving average the current solution is recorded as a local minimum
and the parameters are reset: never (``"none"``), unconditionally to a random
rotation (``"random"``) or through a Metropolis test with a cooling
temperature (``"sa"``). The recorded minimum with the lowest loss on a
separate validation point set is returned.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import NumericFaultError, ShapeError
from .fields import MeshField, as_field
from .geometry import sample_sphere_uniform
from .rotations import Rotation, euler_to_matrix, get_parametrization, sample_rotation
from .validation import check_points

RESET_STRATEGIES = ("none", "random", "sa")


def _check_pair(fixed, moving):
    if fixed.n_features != moving.n_features:
        raise ShapeError(f"feature count mismatch: fixed {fixed.n_features}, moving {moving.n_features}")


def energy(fixed, moving, rotation, points, fixed_values=None):
    """Mean squared feature difference between F(p) and M(R p)."""
    fixed, moving = as_field(fixed), as_field(moving)
    _check_pair(fixed, moving)
    p = check_points(points)
    if len(p) == 0:
        raise ValueError("need at least one point")
    f = fixed.values(p) if fixed_values is None else fixed_values
    r = rotation.as_matrix() if isinstance(rotation, Rotation) else np.asarray(rotation)
    d = f - moving.values(p @ r.T)
    return float(np.mean(d * d))


def energy_gradient(fixed, moving, parametrization, theta, points, fixed_values=None):
    """Energy and its gradient w.r.t. the rotation parameters ``theta``."""
    fixed, moving = as_field(fixed), as_field(moving)
    _check_pair(fixed, moving)
    p = check_points(points)
    f = fixed.values(p) if fixed_values is None else fixed_values
    return _energy_and_grad(moving, get_parametrization(parametrization), theta, p, f)


def _energy_and_grad(moving, param, theta, points, fixed_values):
    rotated = param.apply(theta, points)
    vals, pullback = moving.values_and_pullback(rotated)
    resid = vals - fixed_values
    loss = float(np.mean(resid * resid))
    # d loss / d (R p_i), then chain through the parametrization
    g_point = pullback(resid * (2.0 / resid.size))
    jrot = param.point_jacobian(theta, points)
    return loss, np.einsum("nd,ndk->k", g_point, jrot)


class _Objective:
    """Fixed-field values cached on training and validation points."""

    def __init__(self, fixed, moving, param, train_points, val_points):
        _check_pair(fixed, moving)
        self.fixed = fixed
        self.moving = moving
        self.param = param
        self.set_train_points(train_points)
        self.val_points = val_points
        self.val_values = fixed.values(val_points)

    def set_train_points(self, points):
        self.train_points = points
        self.train_values = self.fixed.values(points)

    def loss_and_grad(self, theta):
        return _energy_and_grad(self.moving, self.param, theta, self.train_points, self.train_values)

    def _loss(self, matrix, points, values):
        d = values - self.moving.values(points @ matrix.T)
        return float(np.mean(d * d))

    def train_loss(self, rotation):
        return self._loss(_as_matrix(rotation, self.param), self.train_points, self.train_values)

    def val_loss(self, rotation):
        return self._loss(_as_matrix(rotation, self.param), self.val_points, self.val_values)


def _as_matrix(rotation, param):
    if isinstance(rotation, Rotation):
        return rotation.as_matrix()
    return param.matrix(rotation)


@dataclass
class DescentResult:
    theta: np.ndarray
    losses: list
    stalled: bool


class _Descent:
    """Adam on rotation parameters with moving-average stall detection.

    The loss of step t is compared with the mean of the previous ``window``
    losses; ``t_diff`` consecutive steps within ``stall_tol`` declare a stall.
    The parameters returned are those at which the last loss was evaluated.
    """

    def __init__(self, objective, theta, *, learning_rate, beta1, beta2, epsilon,
                 window, stall_tol, t_diff, max_steps, resample=None):
        self.obj = objective
        self.param = objective.param
        self.theta = self.param.project(np.array(theta, dtype=np.float64))
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = epsilon
        self.window = window
        self.stall_tol = stall_tol
        self.t_diff = t_diff
        self.max_steps = max_steps
        self.resample = resample
        self.m = np.zeros_like(self.theta)
        self.v = np.zeros_like(self.theta)
        self.t = 0
        self.history = []

    def run(self):
        """Step until a stall or ``max_steps`` steps in this call."""
        losses = []
        count = 0
        for _ in range(self.max_steps):
            if self.resample is not None:
                self.obj.set_train_points(self.resample())
            loss, grad = self.obj.loss_and_grad(self.theta)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NumericFaultError(f"non-finite registration loss at step {self.t}", iteration=self.t)
            if len(self.history) >= self.window:
                ref = np.mean(self.history[-self.window:])
                count = count + 1 if abs(loss - ref) < self.stall_tol else 0
            self.history.append(loss)
            losses.append(loss)
            if count >= self.t_diff:
                return DescentResult(self.theta.copy(), losses, True)
            self.t += 1
            self.m = self.beta1 * self.m + (1 - self.beta1) * grad
            self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
            mhat = self.m / (1 - self.beta1 ** self.t)
            vhat = self.v / (1 - self.beta2 ** self.t)
            self.theta = self.param.project(self.theta - self.lr * mhat / (np.sqrt(vhat) + self.eps))
        # final parameters were never evaluated: score them so the trace matches
        loss, _ = self.obj.loss_and_grad(self.theta)
        losses.append(loss)
        self.history.append(loss)
        return DescentResult(self.theta.copy(), losses, False)


def metropolis_accept(delta, temperature, rng):
    """Acceptance test: strictly better always, strictly worse with exp(-delta/T)."""
    if delta < 0:
        return True
    if delta > 0:
        return bool(rng.random() < np.exp(-delta / temperature))
    return False


def sa_reset(objective, current, current_loss, temperature, rng, *, n_trials=5, t_min=1e-4,
             alpha=0.9, sampler="uniform_angle"):
    """One annealed reset event.

    Up to ``n_trials`` random rotations are tried against ``current_loss``;
    the first accepted one is returned. When every draw is rejected the
    current parameters come back unchanged. The temperature is then cooled by
    ``alpha`` unless it is already at or below ``t_min``.

    Parameters
    ----------
    objective : callable
        Maps a :class:`Rotation` to its training energy.
    current : Rotation
        Parameters at the stall.
    current_loss : float
        Their training energy.

    Returns
    -------
    next_rotation : Rotation
    accepted : bool
    next_temperature : float
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    nxt, accepted = current, False
    for _ in range(n_trials):
        r = sample_rotation(rng, sampler)
        if metropolis_accept(objective(r) - current_loss, temperature, rng):
            nxt, accepted = r, True
            break
    if temperature > t_min:
        temperature = alpha * temperature
    return nxt, accepted, temperature


@dataclass
class RestartRecord:
    index: int
    start: list
    end: list
    train_loss: float
    val_loss: float
    best_val_loss: float
    origin: str
    steps: int
    stalled: bool
    temperature: float


@dataclass
class RegistrationResult:
    """Outcome of one registration run."""

    rotation: Rotation
    best_val_loss: float
    best_train_loss: float
    best_index: int
    loss_trace: list
    restarts: list
    temperature_trace: list
    wall_time: float
    n_steps: int
    seeds: dict
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        out = asdict(self)
        out["rotation"] = self.rotation.to_list()
        out["restarts"] = [asdict(r) for r in self.restarts]
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["rotation"] = Rotation(np.asarray(d["rotation"]))
        d["restarts"] = [RestartRecord(**r) for r in d["restarts"]]
        return cls(**d)


class NCReg(BaseEstimator):
    """Rotation-only registration of a moving feature field onto a fixed one.

    ``fit(fixed, moving)`` estimates R such that ``moving(R p)`` matches
    ``fixed(p)``. Either field may be a fitted :class:`NeuralCorticalMap`, a
    ``(mesh, features)`` tuple or any object with the field interface.

    Parameters
    ----------
    n_points, n_val_points : int
        Training and validation sample sizes on the sphere.
    n_iter : int
        Number of descents (local minima recorded) for the random and
        annealed strategies.
    max_steps : int
        Step cap per descent.
    learning_rate, beta1, beta2, epsilon : float
        Adam constants for the rotation parameters.
    window, stall_tol, t_diff
        Stall detection: ``t_diff`` consecutive steps whose loss is within
        ``stall_tol`` of the mean of the previous ``window`` losses.
    reset : {"none", "random", "sa"}
    T0, T_min, alpha_T, n_T_iter
        Annealing schedule and draws per reset event.
    parametrization : {"quaternion", "axis_angle", "euler", "six_d"}
    sampler : {"uniform_angle", "haar"}
        Distribution of reset rotations.
    resample : bool
        Draw fresh training points every step instead of a fixed set.
    init : Rotation or None
        Starting rotation, identity by default.
    random_state : int
    """

    def __init__(
        self,
        n_points=4096,
        n_val_points=2048,
        n_iter=100,
        max_steps=300,
        learning_rate=0.05,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        window=10,
        stall_tol=1e-4,
        t_diff=5,
        reset="sa",
        T0=0.05,
        T_min=1e-4,
        alpha_T=0.9,
        n_T_iter=5,
        parametrization="quaternion",
        sampler="uniform_angle",
        resample=False,
        init=None,
        random_state=0,
    ):
        self.n_points = n_points
        self.n_val_points = n_val_points
        self.n_iter = n_iter
        self.max_steps = max_steps
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.window = window
        self.stall_tol = stall_tol
        self.t_diff = t_diff
        self.reset = reset
        self.T0 = T0
        self.T_min = T_min
        self.alpha_T = alpha_T
        self.n_T_iter = n_T_iter
        self.parametrization = parametrization
        self.sampler = sampler
        self.resample = resample
        self.init = init
        self.random_state = random_state

    def _validate_params(self):
        if self.reset not in RESET_STRATEGIES:
            raise ValueError(f"reset must be one of {RESET_STRATEGIES}")
        if not 0 < self.alpha_T < 1:
            raise ValueError("alpha_T must lie in (0, 1)")
        if self.T_min <= 0 or self.T0 <= 0:
            raise ValueError("temperatures must be positive")
        if self.n_T_iter < 1 or self.window < 1 or self.t_diff < 1:
            raise ValueError("n_T_iter, window and t_diff must be >= 1")
        if self.n_points < 1 or self.n_val_points < 1 or self.n_iter < 1 or self.max_steps < 1:
            raise ValueError("counts must be >= 1")
        get_parametrization(self.parametrization)

    def config_echo(self):
        params = self.get_params()
        if isinstance(params["init"], Rotation):
            params["init"] = params["init"].to_list()
        return params

    def fit(self, fixed, moving):
        self._validate_params()
        start_time = time.perf_counter()
        fixed, moving = as_field(fixed), as_field(moving)
        param = get_parametrization(self.parametrization)
        seq = np.random.SeedSequence(self.random_state)
        train_seq, val_seq, reset_seq = seq.spawn(3)
        train_rng = np.random.default_rng(train_seq)
        reset_rng = np.random.default_rng(reset_seq)
        train_points = sample_sphere_uniform(self.n_points, train_rng)
        val_points = sample_sphere_uniform(self.n_val_points, np.random.default_rng(val_seq))
        objective = _Objective(fixed, moving, param, train_points, val_points)
        resample = (lambda: sample_sphere_uniform(self.n_points, train_rng)) if self.resample else None

        def new_descent(theta):
            return _Descent(
                objective, theta,
                learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
                epsilon=self.epsilon, window=self.window, stall_tol=self.stall_tol,
                t_diff=self.t_diff, max_steps=self.max_steps, resample=resample,
            )

        init = self.init if self.init is not None else Rotation.identity()
        descent = new_descent(param.from_rotation(init))
        budget = 1 if self.reset == "none" else self.n_iter
        temperature = self.T0
        origin = "init"
        records, trace, temps = [], [], [temperature]
        best = (np.inf, None, None, -1)
        n_steps = 0
        for k in range(budget):
            start_theta = descent.theta.copy()
            out = descent.run()
            n_steps += len(out.losses)
            trace.extend(out.losses)
            train_loss = out.losses[-1]
            val_loss = objective.val_loss(out.theta)
            if val_loss < best[0]:
                best = (val_loss, out.theta.copy(), train_loss, k)
            records.append(RestartRecord(
                index=k,
                start=param.to_rotation(start_theta).to_list(),
                end=param.to_rotation(out.theta).to_list(),
                train_loss=train_loss,
                val_loss=val_loss,
                best_val_loss=best[0],
                origin=origin,
                steps=len(out.losses),
                stalled=out.stalled,
                temperature=temperature,
            ))
            if k == budget - 1:
                break
            if self.reset == "random":
                descent = new_descent(param.from_rotation(sample_rotation(reset_rng, self.sampler)))
                origin = "random"
            else:
                cand, accepted, temperature = sa_reset(
                    objective.train_loss, param.to_rotation(out.theta), train_loss, temperature, reset_rng,
                    n_trials=self.n_T_iter, t_min=self.T_min, alpha=self.alpha_T, sampler=self.sampler,
                )
                temps.append(temperature)
                if not accepted:
                    # keep the optimizer state so the descent resumes where it stalled
                    origin = "continue"
                else:
                    descent = new_descent(param.from_rotation(cand))
                    origin = "sa"

        self.result_ = RegistrationResult(
            rotation=param.to_rotation(best[1]),
            best_val_loss=float(best[0]),
            best_train_loss=float(best[2]),
            best_index=int(best[3]),
            loss_trace=[float(x) for x in trace],
            restarts=records,
            temperature_trace=[float(t) for t in temps],
            wall_time=time.perf_counter() - start_time,
            n_steps=n_steps,
            seeds={"random_state": self.random_state, "entropy": int(seq.entropy)},
            config=self.config_echo(),
        )
        self.rotation_ = self.result_.rotation
        self.train_points_ = train_points
        self.val_points_ = val_points
        return self

    def transform(self, points):
        """Map fixed-space points into moving space: ``R p``."""
        check_is_fitted(self, "rotation_")
        return check_points(points) @ self.rotation_.as_matrix().T


def nc_reg(fixed, moving, **config):
    """Register with any field pair; returns the :class:`RegistrationResult`."""
    return NCReg(**config).fit(fixed, moving).result_


def interp_reg(fixed_mesh, fixed_features, moving_mesh, moving_features, **config):
    """Baseline: the same algorithm with both fields interpolated on meshes."""
    return NCReg(**config).fit(MeshField(fixed_mesh, fixed_features), MeshField(moving_mesh, moving_features)).result_


def euler_grid(step_deg):
    """Z-Y-X Euler grid: yaw and roll over [0, 360), pitch over [-90, 90] inclusive."""
    if step_deg < 5:
        raise ValueError("grid step must be >= 5 degrees")
    yaw = np.arange(0.0, 360.0 - 1e-9, step_deg)
    pitch = np.linspace(-90.0, 90.0, int(round(180.0 / step_deg)) + 1)
    roll = np.arange(0.0, 360.0 - 1e-9, step_deg)
    return np.array([(a, b, c) for a in yaw for b in pitch for c in roll])


class EulerGridOracle:
    """Exhaustive energy search over a Z-Y-X Euler grid for one moving field.

    The moving field is evaluated at every rotated point once; any number
    of fixed-value sets on the same points can then be scored against the
    whole grid.

    Parameters
    ----------
    moving : field
    grid_step_degrees : float
        Grid spacing, at least 5 degrees.
    points : array-like of shape (n, 3)
    chunk : int
        Rotations evaluated per batch.
    """

    def __init__(self, moving, grid_step_degrees, points, chunk=32):
        self.moving = as_field(moving)
        self.points = check_points(points)
        self.angles = np.radians(euler_grid(grid_step_degrees))
        self.chunk = chunk
        mats = np.array([euler_to_matrix(a) for a in self.angles])
        n, c = len(self.points), self.moving.n_features
        self.values = np.empty((len(mats), n, c))
        for s in range(0, len(mats), chunk):
            block = mats[s:s + chunk]
            rotated = np.einsum("rij,nj->rni", block, self.points).reshape(-1, 3)
            self.values[s:s + chunk] = self.moving.values(rotated).reshape(len(block), n, c)

    @property
    def n_rotations(self):
        return len(self.angles)

    def energies(self, fixed_values):
        """Energy of every grid rotation, shape (n_rotations,)."""
        f = np.asarray(fixed_values, dtype=np.float64).reshape(self.values.shape[1:])
        out = np.empty(self.n_rotations)
        for s in range(0, self.n_rotations, self.chunk):
            d = self.values[s:s + self.chunk] - f[None]
            out[s:s + self.chunk] = np.mean(d * d, axis=(1, 2))
        return out

    def search(self, fixed_values):
        """Grid minimizer as ``(rotation, energy)``."""
        e = self.energies(fixed_values)
        k = int(np.argmin(e))
        return Rotation.from_euler(*self.angles[k]), float(e[k])


def brute_force_oracle(fixed, moving, grid_step_degrees, points, fixed_values=None):
    """Exhaustive energy minimization over a Z-Y-X Euler grid.

    Returns ``(best_rotation, best_energy, n_evaluated)``.
    """
    fixed, moving = as_field(fixed), as_field(moving)
    _check_pair(fixed, moving)
    p = check_points(points)
    f = fixed.values(p) if fixed_values is None else fixed_values
    oracle = EulerGridOracle(moving, grid_step_degrees, p)
    rot, e = oracle.search(f)
    return rot, e, oracle.n_rotations
