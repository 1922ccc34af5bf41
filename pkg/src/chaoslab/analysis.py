"""Chaos diagnostics: bifurcation scans, Lyapunov exponents, orbit verdicts."""
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import LogisticParams, logistic_step
from .exceptions import ConfigurationError, DivergenceError, DomainError, InsufficientDataError
from .integrate import IntegratorConfig, rk4_step


# --------------------------------------------------------------------------
# Logistic bifurcation diagram
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BifurcationDiagram:
    mu_values: np.ndarray
    orbit_samples: np.ndarray  # shape (n_mu, n_samples)

    def column(self, mu):
        """Samples recorded at the grid value nearest to ``mu``."""
        return self.orbit_samples[int(np.argmin(np.abs(self.mu_values - mu)))]

    def cluster_counts(self, tol=1e-6):
        return np.array([count_clusters(row, tol) for row in self.orbit_samples])

    def to_table(self):
        n_samples = self.orbit_samples.shape[1]
        mu = np.repeat(self.mu_values, n_samples)
        return ("mu", "x"), np.column_stack([mu, self.orbit_samples.ravel()])


def count_clusters(samples, tol=1e-6):
    """Number of groups in ``samples`` separated by gaps wider than ``tol``."""
    s = np.sort(np.asarray(samples, dtype=float))
    if s.size == 0:
        return 0
    return int(np.count_nonzero(np.diff(s) > tol)) + 1


def _iterate_logistic(mu, x, n):
    # same operation order as dynamics.logistic_step, vectorised over mu
    for _ in range(n):
        x = mu * x * (1.0 - x)
    return x


def bifurcation_scan(mu_min, mu_max, n_mu, transient=1000, n_samples=200, x0=0.1):
    """Post-transient logistic orbits on an evenly spaced mu grid."""
    if not (0.0 <= mu_min < mu_max <= 4.0):
        raise DomainError(f"need 0 <= mu_min < mu_max <= 4, got [{mu_min}, {mu_max}]")
    if n_mu < 1 or n_samples < 1 or transient < 0:
        raise DomainError("n_mu and n_samples must be positive, transient non-negative")
    if not 0.0 <= x0 <= 1.0:
        raise DomainError(f"x0 must lie in [0, 1], got {x0}")
    mu = np.linspace(mu_min, mu_max, n_mu)
    x = _iterate_logistic(mu, np.full(n_mu, float(x0)), transient)
    samples = np.empty((n_mu, n_samples))
    for k in range(n_samples):
        x = mu * x * (1.0 - x)
        samples[:, k] = x
    return BifurcationDiagram(mu, samples)


def logistic_cluster_count(mu, transient=10_000, n_samples=256, x0=0.1, tol=1e-6):
    """Cluster count of the post-transient orbit at a single ``mu``."""
    LogisticParams(mu)
    x = _iterate_logistic(float(mu), float(x0), transient)
    samples = np.empty(n_samples)
    for k in range(n_samples):
        x = mu * x * (1.0 - x)
        samples[k] = x
    return count_clusters(samples, tol)


def first_period_doubling(mu_lo=2.8, mu_hi=3.2, resolution=0.02, **count_kw):
    """Bracket the 1 -> 2 cluster transition by bisection; returns its midpoint.

    ``mu_lo`` must show a single cluster and ``mu_hi`` at least two.
    """
    if logistic_cluster_count(mu_lo, **count_kw) != 1:
        raise DomainError(f"mu_lo={mu_lo} is not in the fixed-point regime")
    if logistic_cluster_count(mu_hi, **count_kw) < 2:
        raise DomainError(f"mu_hi={mu_hi} has not doubled yet")
    lo, hi = mu_lo, mu_hi
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if logistic_cluster_count(mid, **count_kw) == 1:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# Lyapunov exponents
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovEstimate:
    exponent: float
    n_used: int
    convergence_series: np.ndarray
    evidence: dict = field(default_factory=dict)


def lyapunov_map(params, x0=0.3, transient=1000, n=100_000):
    """Orbit average of ln|mu*(1 - 2x)| for the logistic map.

    Iterates hitting x = 0.5 exactly (derivative zero) are skipped and counted
    in ``evidence["skipped"]``.
    """
    if not 0.0 < x0 < 1.0:
        raise DomainError(f"x0 must lie in (0, 1), got {x0}")
    if n < 1:
        raise DomainError("n must be positive")
    x = x0
    for _ in range(transient):
        x = logistic_step(x, params)
    terms = np.empty(n)
    used = 0
    skipped = 0
    mu = params.mu
    for _ in range(n):
        slope = abs(mu * (1.0 - 2.0 * x))
        if slope == 0.0:
            skipped += 1
        else:
            terms[used] = math.log(slope)
            used += 1
        x = logistic_step(x, params)
    if used == 0:
        raise DomainError("every iterate had zero derivative")
    running = np.cumsum(terms[:used]) / np.arange(1, used + 1)
    return LyapunovEstimate(float(running[-1]), used, running, {"skipped": skipped})


def lyapunov_flow(system, state0, config, renorm_interval=10, delta0=1e-8, discard=0.1):
    """Largest Lyapunov exponent of a flow by two-trajectory renormalisation.

    The fiducial orbit runs ``config.transient_steps`` steps first; then a
    copy offset by ``delta0`` (scaled units) is evolved alongside and pulled
    back to distance ``delta0`` every ``renorm_interval`` steps.  The first
    ``discard`` fraction of periods is dropped while the offset aligns with
    the unstable direction.  The result is per ``system.time_scale``.
    """
    if not delta0 > 0:
        raise ConfigurationError(f"delta0 must be positive, got {delta0}")
    if renorm_interval < 1:
        raise ConfigurationError(f"renorm_interval must be >= 1, got {renorm_interval}")
    if not 0.0 <= discard < 1.0:
        raise ConfigurationError(f"discard must lie in [0, 1), got {discard}")
    s0 = np.array(state0, dtype=float)
    scale = np.asarray(system.state_scale, dtype=float)
    if getattr(system, "kernel_id", None) is not None:
        logs, n_periods, status, fail_step = _kernels.benettin(
            system.kernel_id, system.kernel_params(), s0, float(config.dt),
            int(config.transient_steps), int(config.n_steps), int(renorm_interval),
            float(delta0), scale, float(config.divergence_bound))
    else:
        logs, n_periods, status, fail_step = _python_benettin(
            system, s0, config, renorm_interval, delta0, scale)
    if status != _kernels.OK:
        raise DivergenceError(f"{system.tag}: fiducial orbit diverged at step {fail_step}",
                              step=fail_step)
    start = int(discard * n_periods)
    used = logs[start:n_periods]
    if used.size == 0:
        raise InsufficientDataError("run too short for a single renormalisation period")
    period = renorm_interval * config.dt / system.time_scale
    running = np.cumsum(used) / (period * np.arange(1, used.size + 1))
    return LyapunovEstimate(float(running[-1]), int(used.size), running,
                            {"renorm_interval": renorm_interval, "delta0": delta0,
                             "discarded_periods": start})


def _python_benettin(system, s0, config, every, delta0, scale):
    n_periods = (config.n_steps - config.transient_steps) // every
    logs = np.empty(n_periods)
    s = s0
    for k in range(1, config.transient_steps + 1):
        s = rk4_step(system.deriv, s, config.dt)
    q = s + delta0 / math.sqrt(s.size) * scale
    for j in range(n_periods):
        for _ in range(every):
            s = rk4_step(system.deriv, s, config.dt)
            q = rk4_step(system.deriv, q, config.dt)
        if not np.linalg.norm(s / scale) <= config.divergence_bound:
            return logs, j, _kernels.DIVERGED, config.transient_steps + (j + 1) * every
        d = float(np.linalg.norm((q - s) / scale))
        logs[j] = math.log(d / delta0)
        q = s + (q - s) * (delta0 / d)
    return logs, n_periods, _kernels.OK, 0


def flow_lyapunov_hook(system, dt, n_steps, transient_steps=0, **kw):
    """Build a ``lyapunov_hook`` for :func:`classify_orbit`.

    The hook restarts the estimator from the trajectory's last sample.
    """
    config = IntegratorConfig(dt=dt, n_steps=n_steps, transient_steps=transient_steps)

    def hook(traj):
        return lyapunov_flow(system, traj.states[-1], config, **kw).exponent

    return hook


# --------------------------------------------------------------------------
# Orbit classification
# --------------------------------------------------------------------------

class Verdict(str, enum.Enum):
    FIXED_POINT = "FixedPoint"
    PERIODIC = "Periodic"
    CHAOTIC = "Chaotic"
    DIVERGENT = "Divergent"


@dataclass(frozen=True)
class OrbitClassification:
    verdict: Verdict
    period: int = None
    evidence: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict is Verdict.PERIODIC and not (self.period and self.period >= 1):
            raise ConfigurationError("a periodic verdict needs period >= 1")

    def __str__(self):
        if self.verdict is Verdict.PERIODIC:
            return f"Periodic{{{self.period}}}"
        return self.verdict.value


def _section_points(states):
    """Upward crossings of column 0 through its mean, linearly interpolated."""
    c = states[:, 0]
    level = c.mean()
    idx = np.flatnonzero((c[:-1] < level) & (c[1:] >= level))
    if idx.size == 0:
        return np.empty((0, states.shape[1]))
    w = ((level - c[idx]) / (c[idx + 1] - c[idx]))[:, None]
    return states[idx] + w * (states[idx + 1] - states[idx])


def _return_residuals(points, spread, max_period):
    """``res[p-1]`` = worst lag-p mismatch relative to ``spread`` (inf if unknown)."""
    res = np.full(max_period, np.inf)
    for p in range(1, max_period + 1):
        if points.shape[0] < p + 2:
            break
        res[p - 1] = np.max(np.abs(points[p:] - points[:-p])) / spread
    return res


def classify_orbit(traj, tol_fp=1e-6, tol_period=1e-3, lyapunov_hook=None,
                   max_period=64, strobe="auto", window=0.5, min_samples=1000,
                   chaos_threshold=1e-3):
    """Label a post-transient trajectory FixedPoint, Periodic{p}, Chaotic or Divergent.

    Works on the last ``window`` fraction in scaled units.  Periods are the
    smallest lag with a near-return within ``tol_period`` of the window's
    spread; ``strobe`` picks the sequence being matched: raw ``"samples"``
    or ``"section"`` points (upward mean crossings of the first coordinate).
    ``"auto"`` uses sections for flows.  When nothing repeats, the hook's
    exponent decides: above ``chaos_threshold`` (or no hook) is Chaotic,
    otherwise the best-matching lag is reported as an approximate period
    (or FixedPoint when the window never recrosses its mean).
    """
    if traj.diverged:
        return OrbitClassification(Verdict.DIVERGENT, evidence={"samples": len(traj)})
    if len(traj) < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} samples, got {len(traj)}")
    if strobe == "auto":
        strobe = "section" if traj.is_flow else "samples"
    if strobe not in ("samples", "section"):
        raise ConfigurationError(f"unknown strobe {strobe!r}")

    states = traj.tail(window).scaled_states()
    if states.ndim == 1:
        states = states[:, None]
    std = float(states.std(axis=0).max())
    evidence = {"std": std, "strobe": strobe}
    if std < tol_fp:
        return OrbitClassification(Verdict.FIXED_POINT, evidence=evidence)

    spread = float(np.ptp(states, axis=0).max())
    points = _section_points(states) if strobe == "section" else states
    residuals = _return_residuals(points, spread, max_period)
    evidence["strobe_points"] = int(points.shape[0])
    hits = np.flatnonzero(residuals <= tol_period)
    if hits.size:
        p = int(hits[0]) + 1
        evidence["residual"] = float(residuals[p - 1])
        return OrbitClassification(Verdict.PERIODIC, period=p, evidence=evidence)

    lam = lyapunov_hook(traj) if lyapunov_hook is not None else None
    evidence["lyapunov"] = lam
    if lam is None or lam > chaos_threshold:
        return OrbitClassification(Verdict.CHAOTIC, evidence=evidence)
    if not np.isfinite(residuals).any():
        # no recurrence at all and no positive exponent: still settling
        evidence["approximate"] = True
        return OrbitClassification(Verdict.FIXED_POINT, evidence=evidence)
    p = int(np.argmin(residuals)) + 1
    evidence.update(residual=float(residuals[p - 1]), approximate=True)
    return OrbitClassification(Verdict.PERIODIC, period=p, evidence=evidence)


# --------------------------------------------------------------------------
# Double scroll
# --------------------------------------------------------------------------

def double_scroll_metric(traj, threshold=1.1, column="v1"):
    """Count alternations of ``column`` between excursions above +threshold and below -threshold."""
    if not threshold > 0:
        raise ConfigurationError(f"threshold must be positive, got {threshold}")
    v = traj.column(column) if column in traj.columns else traj.states[:, 0]
    side = np.zeros(v.shape, dtype=np.int8)
    side[v > threshold] = 1
    side[v < -threshold] = -1
    visits = side[side != 0]
    if visits.size < 2:
        return 0
    return int(np.count_nonzero(visits[1:] != visits[:-1]))
