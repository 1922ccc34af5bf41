"""Lorenz flow, Chua circuit and logistic map as pure functions.

Each system is described by an immutable parameter record.  The derivative
functions are thin validated wrappers around the compiled right-hand sides in
:mod:`chaoslab._kernels`, so the Python API and the integration loops share a
single implementation of every formula.

The ``*System`` classes bundle a parameter record with the metadata the
integrator and the analysis code need (column names, scaling used for
divergence guards and Lyapunov distances).
"""
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import _kernels
from .exceptions import DomainError


def _require_finite(values, what):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} must be finite, got {values!r}")
    return arr


# --------------------------------------------------------------------------
# Lorenz
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        _require_finite([self.sigma, self.rho, self.beta], "Lorenz parameters")

    def as_array(self):
        return np.array([self.sigma, self.rho, self.beta], dtype=float)

    def fixed_points(self):
        """Origin plus the symmetric pair C+/C- (only when rho > 1)."""
        pts = [LorenzState(0.0, 0.0, 0.0)]
        if self.rho > 1.0 and self.beta > 0.0:
            a = math.sqrt(self.beta * (self.rho - 1.0))
            pts.append(LorenzState(a, a, self.rho - 1.0))
            pts.append(LorenzState(-a, -a, self.rho - 1.0))
        return pts


class LorenzState(NamedTuple):
    x: float
    y: float
    z: float


def lorenz_deriv(state, params):
    """Return ``(sigma*(y-x), x*(rho-z)-y, x*y-beta*z)`` as an array."""
    s = _require_finite(state, "Lorenz state")
    if s.shape != (3,):
        raise DomainError(f"Lorenz state must have 3 components, got {s.shape}")
    out = np.empty(3)
    _kernels.lorenz_rhs(s, params.as_array(), out)
    return out


# --------------------------------------------------------------------------
# Chua
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseLinearDiode:
    """Three-segment odd i-v characteristic of Chua's diode.

    ``ga`` is the slope (S) for ``|v| < bp``, ``gb`` the slope outside.
    """

    ga: float = -0.757e-3
    gb: float = -0.409e-3
    bp: float = 1.1

    def __post_init__(self):
        _require_finite([self.ga, self.gb, self.bp], "diode parameters")
        if self.bp <= 0:
            raise DomainError(f"breakpoint must be positive, got {self.bp}")


# R = 1800 ohm verified chaotic (double scroll) by tests/test_analysis.py
@dataclass(frozen=True)
class ChuaParams:
    c1: float = 10e-9
    c2: float = 100e-9
    l: float = 18e-3
    r_coupling: float = 1800.0
    r_inductor: float = 12.0
    diode: PiecewiseLinearDiode = field(default_factory=PiecewiseLinearDiode)

    def __post_init__(self):
        _require_finite([self.c1, self.c2, self.l, self.r_coupling, self.r_inductor],
                        "Chua parameters")
        for name in ("c1", "c2", "l", "r_coupling"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.r_inductor < 0:
            raise DomainError(f"r_inductor must be non-negative, got {self.r_inductor}")

    def as_array(self, u=0.0):
        d = self.diode
        return np.array([self.c1, self.c2, self.l, self.r_coupling, self.r_inductor,
                         d.ga, d.gb, d.bp, u], dtype=float)

    def with_(self, **changes):
        return replace(self, **changes)


class ChuaState(NamedTuple):
    v1: float
    v2: float
    i_l: float


def chua_diode_current(v, diode):
    """Current through the diode at voltage ``v``: ``gb*v + (ga-gb)/2*(|v+bp|-|v-bp|)``."""
    v = float(_require_finite(v, "diode voltage"))
    return _kernels.diode_current(v, diode.ga, diode.gb, diode.bp)


def chua_deriv(state, params, u=0.0):
    """Time derivatives (V/s, V/s, A/s) of the Chua state with control current ``u``."""
    s = _require_finite(state, "Chua state")
    if s.shape != (3,):
        raise DomainError(f"Chua state must have 3 components, got {s.shape}")
    _require_finite(u, "control current")
    out = np.empty(3)
    _kernels.chua_rhs(s, params.as_array(u), out)
    return out


def chua_equilibria(params):
    """Equilibria of the uncontrolled circuit: origin first, then +/- outer pair.

    At rest ``di/dt = 0`` gives ``v2 = -r*I`` and ``dv2/dt = 0`` gives
    ``I = -v1/(R + r)``; ``dv1/dt = 0`` then reduces to
    ``i_diode(v1) + v1/(R + r) = 0``, which is linear on the outer segment.
    """
    d = params.diode
    total = params.r_coupling + params.r_inductor
    eqs = [ChuaState(0.0, 0.0, 0.0)]
    denom = d.gb + 1.0 / total
    if denom != 0.0:
        v1 = -(d.ga - d.gb) * d.bp / denom
        if v1 > d.bp:
            i_l = -v1 / total
            v2 = -params.r_inductor * i_l
            eqs.append(ChuaState(v1, v2, i_l))
            eqs.append(ChuaState(-v1, -v2, -i_l))
    return eqs


# --------------------------------------------------------------------------
# Logistic map
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LogisticParams:
    mu: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and 0.0 <= self.mu <= 4.0):
            raise DomainError(f"mu must lie in [0, 4], got {self.mu}")


def logistic_step(x, params):
    """One iterate ``mu*x*(1-x)`` of the logistic map on [0, 1]."""
    if not (math.isfinite(x) and 0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x}")
    return params.mu * x * (1.0 - x)


# --------------------------------------------------------------------------
# System bundles consumed by integrate/analysis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LorenzSystem:
    params: LorenzParams = field(default_factory=LorenzParams)

    tag = "lorenz"
    columns = ("x", "y", "z")
    kernel_id = _kernels.LORENZ
    state_scale = (1.0, 1.0, 1.0)
    time_scale = 1.0

    def deriv(self, state):
        return lorenz_deriv(state, self.params)

    def kernel_params(self):
        return self.params.as_array()


@dataclass(frozen=True)
class ChuaSystem:
    """Chua circuit with a constant injected current ``u`` (amperes).

    Scaling: volts for v1/v2, milliamperes for the inductor current and
    milliseconds for time, so Lyapunov exponents come out per ms.
    """

    params: ChuaParams = field(default_factory=ChuaParams)
    u: float = 0.0

    tag = "chua"
    columns = ("v1", "v2", "i_l")
    kernel_id = _kernels.CHUA
    state_scale = (1.0, 1.0, 1e-3)
    time_scale = 1e-3

    def deriv(self, state):
        return chua_deriv(state, self.params, self.u)

    def kernel_params(self):
        return self.params.as_array(self.u)


@dataclass(frozen=True)
class FlowSystem:
    """Arbitrary autonomous flow ``deriv(state) -> rates`` (pure-Python path)."""

    fn: object
    dim: int
    tag: str = "flow"
    columns: tuple = None
    state_scale: tuple = None
    time_scale: float = 1.0

    def __post_init__(self):
        if self.columns is None:
            object.__setattr__(self, "columns", tuple(f"s{i}" for i in range(self.dim)))
        if self.state_scale is None:
            object.__setattr__(self, "state_scale", (1.0,) * self.dim)

    def deriv(self, state):
        return np.asarray(self.fn(state), dtype=float)


def scaled_deriv(system, state):
    """Derivative expressed in the system's scaled units (state/time scales)."""
    scale = np.asarray(system.state_scale)
    return system.deriv(state) * system.time_scale / scale
