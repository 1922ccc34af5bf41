"""Closed-loop neural control of the Chua circuit, plus the manual R-C sweep.

Every ``control_interval`` integration steps the network reads a scaled
observation ``[v1, v2, i_l, v1 - ref]``, its two sigmoid outputs set the
coupling-resistor multiplier and an injected current ``u`` on the v1 node,
and the plant runs one interval under that actuation.  The network then
learns online from the tracking error ``e = v1 - ref`` at the end of the
interval: ``dv1/do`` is estimated by re-running the same interval with each
output nudged by ``sensitivity_eps``, the output error signal is
``e * dv1/do`` (the gradient of ``0.5 * e**2``) and one SGD step follows.

Actuator maps are neutral at ``o = 0.5``: the multiplier is piecewise linear
through ``(0, lo)``, ``(0.5, 1)``, ``(1, hi)`` and ``u = u_max * (2*o - 1)``,
so an all-zero network leaves the plant untouched.
"""
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import _kernels
from .analysis import OrbitClassification, Verdict, classify_orbit, lyapunov_flow
from .ann import MLP, TrainConfig, backprop_grad, forward, init_weights, sgd_update
from .dynamics import ChuaParams, ChuaSystem, chua_equilibria
from .exceptions import ConfigurationError, DivergenceError
from .integrate import IntegratorConfig, Trajectory, simulate


# --------------------------------------------------------------------------
# Objectives
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Setpoint:
    v1_star: float

    def reference(self, t):
        return self.v1_star


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    frequency: float

    def __post_init__(self):
        if not (self.amplitude > 0 and self.frequency > 0):
            raise ConfigurationError("sinusoid amplitude and frequency must be positive")

    def reference(self, t):
        return self.amplitude * math.sin(2.0 * math.pi * self.frequency * t)


@dataclass(frozen=True)
class PlantEquilibrium:
    """Setpoint at ``chua_equilibria(params)[index]`` (0 = origin, 1/2 = outer pair)."""

    index: int = 1

    def resolve(self, params):
        eqs = chua_equilibria(params)
        if not 0 <= self.index < len(eqs):
            raise ConfigurationError(
                f"plant has {len(eqs)} equilibria, index {self.index} is invalid")
        return Setpoint(eqs[self.index].v1)

    def reference(self, t):
        raise ConfigurationError("resolve a PlantEquilibrium against plant parameters first")


ControlObjective = Union[Setpoint, Sinusoid, PlantEquilibrium]


def resolve_objective(objective, params):
    return objective.resolve(params) if isinstance(objective, PlantEquilibrium) else objective


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservationScaling:
    """Affine map ``(raw - center) / scale`` for ``[v1, v2, i_l, error]``."""

    center: tuple = (0.0, 0.0, 0.0, 0.0)
    scale: tuple = (3.0, 0.5, 3e-3, 3.0)

    def __post_init__(self):
        if len(self.center) != 4 or len(self.scale) != 4 or min(self.scale) <= 0:
            raise ConfigurationError("observation scaling needs 4 centers and 4 positive scales")

    def apply(self, raw):
        return (np.asarray(raw, dtype=float) - np.asarray(self.center)) / np.asarray(self.scale)

    def invert(self, scaled):
        return np.asarray(scaled, dtype=float) * np.asarray(self.scale) + np.asarray(self.center)


@dataclass(frozen=True)
class ControllerConfig:
    net_shape: tuple = (4, 8, 2)
    control_interval: int = 50
    learning_rate: float = 0.03
    r_mult_bounds: tuple = (0.95, 1.05)
    u_max: float = 1e-3
    sensitivity_eps: float = 1e-3
    seed: int = 0
    init_scale: float = 0.5
    zero_output_layer: bool = True
    dt: float = 1e-6
    record_stride: int = 1
    snapshot_every: int = 100
    divergence_bound: float = 1e3
    scaling: ObservationScaling = field(default_factory=ObservationScaling)

    def __post_init__(self):
        shape = tuple(int(n) for n in self.net_shape)
        if len(shape) < 2 or shape[0] != 4 or shape[-1] != 2 or min(shape) < 1:
            raise ConfigurationError(f"net_shape must be 4-...-2, got {self.net_shape}")
        object.__setattr__(self, "net_shape", shape)
        if self.control_interval < 1:
            raise ConfigurationError("control_interval must be >= 1")
        lo, hi = self.r_mult_bounds
        if not 0 < lo <= 1.0 <= hi:
            raise ConfigurationError(f"R multiplier bounds must satisfy 0 < lo <= 1 <= hi, "
                                     f"got {self.r_mult_bounds}")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if not self.u_max > 0:
            raise ConfigurationError("u_max must be positive")
        if not 0 < self.sensitivity_eps < 0.5:
            raise ConfigurationError("sensitivity_eps must lie in (0, 0.5)")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.record_stride < 1 or self.control_interval % self.record_stride:
            raise ConfigurationError("record_stride must divide control_interval")
        if self.snapshot_every < 1:
            raise ConfigurationError("snapshot_every must be >= 1")


# --------------------------------------------------------------------------
# Observation / actuation
# --------------------------------------------------------------------------

def build_observation(state, objective, t, scaling=ObservationScaling()):
    """Scaled network input ``[v1, v2, i_l, v1 - ref(t)]``."""
    v1, v2, i_l = (float(c) for c in state)
    return scaling.apply([v1, v2, i_l, v1 - objective.reference(t)])


def r_multiplier(o, bounds):
    lo, hi = bounds
    o = min(max(float(o), 0.0), 1.0)
    if o < 0.5:
        return lo + (1.0 - lo) * (2.0 * o)
    return 1.0 + (hi - 1.0) * (2.0 * o - 1.0)


def actuate(net_output, base, config):
    """Map the two network outputs to ``(params with R_eff, u)``, clamped to the bounds."""
    o1, o2 = (float(v) for v in net_output)
    r_eff = base.r_coupling * r_multiplier(o1, config.r_mult_bounds)
    o2 = min(max(o2, 0.0), 1.0)
    u = config.u_max * (2.0 * o2 - 1.0)
    return base.with_(r_coupling=r_eff), u


def _run_interval(params, u, state, config):
    p = params.as_array(u)
    scale = np.asarray(ChuaSystem.state_scale)
    n = config.control_interval
    return _kernels.integrate(_kernels.CHUA, p, state, config.dt, n, 0, 1,
                              config.divergence_bound, scale)


def estimate_sensitivity(state, net_output, base, config, eps=None):
    """Finite-difference ``dv1/do`` over one control interval.

    Each output is nudged towards the middle of (0, 1) by ``eps`` so the
    perturbed value never leaves the actuator range.
    """
    eps = config.sensitivity_eps if eps is None else eps
    state = np.asarray(state, dtype=float)
    o = np.asarray(net_output, dtype=float)
    params, u = actuate(o, base, config)
    nominal, _, status, _ = _run_interval(params, u, state, config)
    if status != _kernels.OK:
        raise DivergenceError("plant diverged during sensitivity estimate")
    v1 = nominal[-1, 0]
    sens = np.empty(2)
    for j in range(2):
        d = eps if o[j] <= 0.5 else -eps
        shifted = o.copy()
        shifted[j] += d
        p_j, u_j = actuate(shifted, base, config)
        seg, _, status, _ = _run_interval(p_j, u_j, state, config)
        if status != _kernels.OK:
            raise DivergenceError("plant diverged during sensitivity estimate")
        sens[j] = (seg[-1, 0] - v1) / d
    return sens


# --------------------------------------------------------------------------
# Closed loop
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedLoopResult:
    """Recorded closed-loop run.

    ``control_times[k]`` is the start of interval ``k``; ``r_eff[k]``/``u[k]``
    were applied during it and ``error_series[k]`` is ``v1 - ref`` at its end
    (``error_times[k]``).  ``baseline_errors`` are the neutral-actuation
    plant's errors at the same instants.
    """

    trajectory: Trajectory
    control_times: np.ndarray
    r_eff: np.ndarray
    u: np.ndarray
    error_times: np.ndarray
    error_series: np.ndarray
    baseline_errors: np.ndarray
    uncontrolled_baseline_rms: float
    weight_snapshots: list
    final_net: MLP
    objective: object
    diverged: bool = False

    @property
    def control_history(self):
        return np.column_stack([self.r_eff, self.u])

    def to_table(self):
        """Per-interval rows ``t, v1, v2, i_l, r_eff, u, error`` at interval ends."""
        n = len(self.error_series)
        stride = len(self.trajectory) // max(n, 1) if n else 1
        states = self.trajectory.states[stride - 1::stride][:n]
        cols = ("t", "v1", "v2", "i_l", "r_eff", "u", "error")
        return cols, np.column_stack([self.error_times[:len(states)], states,
                                      self.r_eff[:len(states)], self.u[:len(states)],
                                      self.error_series[:len(states)]])


def initial_controller_net(config):
    net = init_weights(config.net_shape,
                       TrainConfig(learning_rate=max(config.learning_rate, 1e-12),
                                   seed=config.seed, init_scale=config.init_scale),
                       output_activation="sigmoid")
    if config.zero_output_layer:
        weights = net.weights[:-1] + (np.zeros_like(net.weights[-1]),)
        biases = net.biases[:-1] + (np.zeros_like(net.biases[-1]),)
        net = MLP(weights, biases, "sigmoid")
    return net


def _final_quarter_rms(errors):
    q = max(1, len(errors) // 4)
    tail = np.asarray(errors[-q:], dtype=float)
    return float(np.sqrt(np.mean(tail ** 2)))


def run_closed_loop(base, initial, objective, config=ControllerConfig(), duration=0.04,
                    net=None):
    """Run the adaptive loop for ``duration`` seconds; see the module docstring.

    Plant divergence ends the run early and returns a result with
    ``diverged=True`` holding the partial history.  Non-finite network
    weights raise :class:`DivergenceError`.
    """
    objective = resolve_objective(objective, base)
    n_int = int(round(duration / (config.dt * config.control_interval)))
    if n_int < 100:
        raise ConfigurationError(f"duration covers {n_int} control intervals, need >= 100")
    net = initial_controller_net(config) if net is None else net
    n_per = config.control_interval
    stride = config.record_stride
    s = np.array(initial, dtype=float)

    rec_states, control_times, r_effs, us = [], [], [], []
    errors, error_times = [], []
    snapshots = [(0, net)]
    diverged = False
    for k in range(n_int):
        t_start = (k * n_per) * config.dt
        obs = build_observation(s, objective, t_start, config.scaling)
        fp = forward(net, obs)
        params, u = actuate(fp.output, base, config)
        seg, n_rec, status, _ = _run_interval(params, u, s, config)
        control_times.append(t_start)
        r_effs.append(params.r_coupling)
        us.append(u)
        if status != _kernels.OK:
            rec_states.append(seg[:n_rec][stride - 1::stride])
            diverged = True
            break
        rec_states.append(seg[stride - 1::stride])
        s_new = seg[-1].copy()
        t_end = ((k + 1) * n_per) * config.dt
        e = s_new[0] - objective.reference(t_end)
        errors.append(e)
        error_times.append(t_end)
        if config.learning_rate > 0:
            try:
                sens = estimate_sensitivity(s, fp.output, base, config)
            except DivergenceError:
                sens = np.zeros(2)
            grads = backprop_grad(net, obs, e * sens, cache=fp)
            try:
                net = sgd_update(net, grads, config.learning_rate)
            except DivergenceError as exc:
                raise DivergenceError(f"controller weights became non-finite in interval {k}",
                                      step=k) from exc
        if (k + 1) % config.snapshot_every == 0:
            snapshots.append((k + 1, net))
        s = s_new

    states = np.concatenate(rec_states) if rec_states else np.empty((0, 3))
    steps = stride * np.arange(1, len(states) + 1)
    traj = Trajectory(steps * config.dt, states, "chua", ChuaSystem.columns,
                      diverged=diverged, is_flow=True, state_scale=ChuaSystem.state_scale)

    baseline_errors = _baseline_errors(base, initial, objective, config, n_int)
    q = max(1, len(errors) // 4)
    base_tail = baseline_errors[len(errors) - q:len(errors)] if errors else baseline_errors
    baseline_rms = float(np.sqrt(np.mean(np.asarray(base_tail) ** 2))) if len(base_tail) else math.nan
    return ClosedLoopResult(traj, np.array(control_times), np.array(r_effs), np.array(us),
                            np.array(error_times), np.array(errors), baseline_errors,
                            baseline_rms, snapshots, net, objective, diverged)


def _baseline_errors(base, initial, objective, config, n_int):
    n_per = config.control_interval
    cfg = IntegratorConfig(dt=config.dt, n_steps=n_int * n_per, stride=n_per,
                           divergence_bound=config.divergence_bound)
    try:
        traj = simulate(ChuaSystem(base), initial, cfg)
    except DivergenceError as exc:
        traj = exc.partial
    refs = np.array([objective.reference(t) for t in traj.times])
    return traj.states[:, 0] - refs


@dataclass(frozen=True)
class ControlMetrics:
    rms_error_final_quarter: float
    suppression_ratio: float
    post_control_classification: OrbitClassification
    valid: bool = True


def evaluate_control(result, tol_fp=1e-3, lyapunov_hook=None):
    """Final-quarter RMS error, its ratio to the uncontrolled baseline, and a verdict."""
    if result.diverged:
        return ControlMetrics(math.nan, math.nan,
                              OrbitClassification(Verdict.DIVERGENT), valid=False)
    rms = _final_quarter_rms(result.error_series)
    base = result.uncontrolled_baseline_rms
    if base > 0:
        ratio = rms / base
    else:
        ratio = 0.0 if rms == 0 else math.inf
    verdict = classify_orbit(result.trajectory.tail(0.25), tol_fp=tol_fp,
                             lyapunov_hook=lyapunov_hook, window=1.0)
    return ControlMetrics(rms, ratio, verdict)


# --------------------------------------------------------------------------
# Manual R-C sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    r_values: np.ndarray
    c1_values: np.ndarray
    classifications: list  # row-major: classifications[i][j] for (r_values[i], c1_values[j])
    exponents: np.ndarray

    def verdicts(self):
        return [[c.verdict for c in row] for row in self.classifications]

    def to_table(self):
        rows = []
        for i, r in enumerate(self.r_values):
            for j, c1 in enumerate(self.c1_values):
                rows.append((r, c1, str(self.classifications[i][j]), self.exponents[i, j]))
        return ("r", "c1", "verdict", "lambda"), rows


DEFAULT_SWEEP_SIM = IntegratorConfig(dt=1e-6, n_steps=130_000, transient_steps=100_000)


def _grid(lo_hi, n):
    lo, hi = lo_hi
    if not (lo > 0 and hi >= lo):
        raise ConfigurationError(f"sweep range must be positive and ordered, got {lo_hi}")
    return np.linspace(lo, hi, n) if n > 1 else np.array([float(lo)])


def classify_cell(params, initial=(0.1, 0.0, 0.0), per_cell_sim=DEFAULT_SWEEP_SIM,
                  lyapunov_steps=100_000):
    """Simulate one plant and return ``(classification, largest exponent per ms)``."""
    system = ChuaSystem(params)
    try:
        traj = simulate(system, initial, per_cell_sim)
    except DivergenceError as exc:
        return classify_orbit(exc.partial), math.nan
    lyap_cfg = IntegratorConfig(dt=per_cell_sim.dt, n_steps=lyapunov_steps,
                                divergence_bound=per_cell_sim.divergence_bound)
    try:
        lam = lyapunov_flow(system, traj.states[-1], lyap_cfg).exponent
    except DivergenceError:
        return OrbitClassification(Verdict.DIVERGENT), math.nan
    return classify_orbit(traj, lyapunov_hook=lambda _: lam), lam


def rc_sweep(base, r_range, c1_range, grid, per_cell_sim=DEFAULT_SWEEP_SIM,
             initial=(0.1, 0.0, 0.0), lyapunov_steps=100_000):
    """Classify the uncontrolled plant over an ``n x m`` grid of (R, C1).

    Every cell starts from the same ``initial`` state; divergent cells are
    recorded as Divergent and the sweep continues.
    """
    n, m = grid
    if n < 1 or m < 1:
        raise ConfigurationError(f"grid must be at least 1x1, got {grid}")
    r_values = _grid(r_range, n)
    c1_values = _grid(c1_range, m)
    rows = []
    exponents = np.full((n, m), math.nan)
    for i, r in enumerate(r_values):
        row = []
        for j, c1 in enumerate(c1_values):
            cls, lam = classify_cell(base.with_(r_coupling=float(r), c1=float(c1)), initial,
                                     per_cell_sim, lyapunov_steps)
            row.append(cls)
            exponents[i, j] = lam
        rows.append(row)
    return SweepResult(r_values, c1_values, rows, exponents)


# --------------------------------------------------------------------------
# Estimator facade
# --------------------------------------------------------------------------

class ANNChaosController(BaseEstimator):
    """scikit-learn style wrapper around :func:`run_closed_loop`.

    ``fit(X)`` runs the adaptive loop from the initial plant state ``X``
    (shape ``(3,)`` or ``(1, 3)``); ``predict(X)`` maps plant states to the
    actuation ``[R_eff, u]`` the learned network would apply.
    """

    def __init__(self, plant=None, objective=None, net_shape=(4, 8, 2), control_interval=50,
                 learning_rate=0.03, r_mult_bounds=(0.95, 1.05), u_max=1e-3,
                 sensitivity_eps=1e-3, init_scale=0.5, dt=1e-6, duration=0.04,
                 random_state=0):
        self.plant = plant
        self.objective = objective
        self.net_shape = net_shape
        self.control_interval = control_interval
        self.learning_rate = learning_rate
        self.r_mult_bounds = r_mult_bounds
        self.u_max = u_max
        self.sensitivity_eps = sensitivity_eps
        self.init_scale = init_scale
        self.dt = dt
        self.duration = duration
        self.random_state = random_state

    def _controller_config(self):
        return ControllerConfig(net_shape=self.net_shape, control_interval=self.control_interval,
                                learning_rate=self.learning_rate,
                                r_mult_bounds=tuple(self.r_mult_bounds), u_max=self.u_max,
                                sensitivity_eps=self.sensitivity_eps, seed=self.random_state,
                                init_scale=self.init_scale, dt=self.dt)

    def fit(self, X=(0.1, 0.0, 0.0), y=None):
        x0 = check_array(np.atleast_2d(X)).ravel()
        if x0.shape != (3,):
            raise ValueError(f"initial state must have 3 components, got {x0.shape}")
        plant = self.plant if self.plant is not None else ChuaParams()
        objective = self.objective if self.objective is not None else PlantEquilibrium(1)
        self.config_ = self._controller_config()
        self.result_ = run_closed_loop(plant, x0, objective, self.config_, self.duration)
        self.net_ = self.result_.final_net
        self.metrics_ = evaluate_control(self.result_)
        self.plant_ = plant
        self.n_features_in_ = 3
        return self

    def predict(self, X, t=None):
        check_is_fitted(self, "net_")
        X = check_array(X)
        times = np.zeros(len(X)) if t is None else np.broadcast_to(np.asarray(t, float), (len(X),))
        out = np.empty((len(X), 2))
        for k, (row, tk) in enumerate(zip(X, times)):
            obs = build_observation(row, self.result_.objective, tk, self.config_.scaling)
            params, u = actuate(forward(self.net_, obs).output, self.plant_, self.config_)
            out[k] = params.r_coupling, u
        return out

    def score(self, X=None, y=None):
        """Negative suppression ratio of the fitted run (higher is better)."""
        check_is_fitted(self, "metrics_")
        return -self.metrics_.suppression_ratio
