"""Fixed-step RK4 integration with transient skipping and divergence guards."""
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .exceptions import ConfigurationError, DivergenceError


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    n_steps: int
    transient_steps: int = 0
    stride: int = 1
    divergence_bound: float = 1e6

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not (self.n_steps > self.transient_steps >= 0):
            raise ConfigurationError(
                f"need n_steps > transient_steps >= 0, got {self.n_steps}, {self.transient_steps}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if not self.divergence_bound > 0:
            raise ConfigurationError(f"divergence_bound must be positive, got {self.divergence_bound}")

    @property
    def n_records(self):
        return (self.n_steps - self.transient_steps) // self.stride


@dataclass(frozen=True)
class Trajectory:
    """Recorded samples of one run.

    ``states[k]`` is the state at ``times[k]``.  ``diverged`` marks the partial
    record attached to a :class:`DivergenceError`.
    """

    times: np.ndarray
    states: np.ndarray
    system_tag: str
    columns: tuple
    diverged: bool = False
    is_flow: bool = False
    state_scale: tuple = None

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ConfigurationError("times and states differ in length")
        if self.state_scale is None:
            dim = self.states.shape[1] if self.states.ndim == 2 else 1
            object.__setattr__(self, "state_scale", (1.0,) * dim)

    def _replace(self, **changes):
        return replace(self, **changes)

    def __len__(self):
        return len(self.times)

    def column(self, name):
        return self.states[:, self.columns.index(name)]

    def tail(self, fraction):
        """Last ``fraction`` of the samples as a new trajectory."""
        start = len(self) - max(1, int(round(len(self) * fraction)))
        return self._replace(times=self.times[start:], states=self.states[start:])

    def scaled_states(self):
        return self.states / np.asarray(self.state_scale, dtype=float)

    def to_table(self):
        header = ("t",) + tuple(self.columns)
        return header, np.column_stack([self.times, self.states])


def rk4_step(deriv_fn, state, dt):
    """One classical Runge-Kutta step of the autonomous flow ``deriv_fn``."""
    s = np.asarray(state, dtype=float)
    k1 = np.asarray(deriv_fn(s), dtype=float)
    k2 = np.asarray(deriv_fn(s + 0.5 * dt * k1), dtype=float)
    k3 = np.asarray(deriv_fn(s + 0.5 * dt * k2), dtype=float)
    k4 = np.asarray(deriv_fn(s + dt * k3), dtype=float)
    out = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite value in RK4 step")
    return out


def _record_times(config, n, t0=0.0):
    steps = config.transient_steps + config.stride * np.arange(1, n + 1)
    return t0 + steps * config.dt


def simulate(system, initial_state, config, t0=0.0):
    """Integrate ``system`` from ``initial_state`` and return a :class:`Trajectory`.

    Built-in systems (those exposing ``kernel_id``) run in the compiled loop;
    anything else with a ``deriv(state)`` method uses :func:`rk4_step`.
    Raises :class:`DivergenceError` (with ``.step`` and ``.partial``) when the
    scaled state norm exceeds ``config.divergence_bound`` or turns non-finite.
    """
    s0 = np.array(initial_state, dtype=float)
    if s0.ndim != 1 or not np.all(np.isfinite(s0)):
        raise ConfigurationError(f"initial state must be a finite vector, got {initial_state!r}")
    scale = np.asarray(system.state_scale, dtype=float)
    kernel_id = getattr(system, "kernel_id", None)
    if kernel_id is not None:
        states, n_rec, status, fail_step = _kernels.integrate(
            kernel_id, system.kernel_params(), s0, float(config.dt), int(config.n_steps),
            int(config.transient_steps), int(config.stride), float(config.divergence_bound), scale)
    else:
        states, n_rec, status, fail_step = _python_integrate(system, s0, config, scale)

    traj = Trajectory(_record_times(config, n_rec, t0), states[:n_rec], system.tag,
                      tuple(system.columns), diverged=status != _kernels.OK, is_flow=True,
                      state_scale=tuple(float(v) for v in scale))
    if status != _kernels.OK:
        raise DivergenceError(
            f"{system.tag}: state norm exceeded {config.divergence_bound:g} at step {fail_step}",
            step=fail_step, partial=traj)
    return traj


def _python_integrate(system, s0, config, scale):
    out = np.empty((config.n_records, s0.size))
    s = s0
    j = 0
    for k in range(1, config.n_steps + 1):
        try:
            s = rk4_step(system.deriv, s, config.dt)
        except DivergenceError:
            return out, j, _kernels.DIVERGED, k
        if not np.linalg.norm(s / scale) <= config.divergence_bound:
            return out, j, _kernels.DIVERGED, k
        if k > config.transient_steps and (k - config.transient_steps) % config.stride == 0:
            out[j] = s
            j += 1
    return out, j, _kernels.OK, 0
