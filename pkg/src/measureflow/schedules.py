"""Time-dependent parameter triplets (alpha, beta, gamma) for the
variational acceleration flow family, with derivatives, an optimal-scaling
check, and time dilation.

All schedules carry analytic derivative callables; finite differences are
reserved for tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .errors import InvalidArgument, ScheduleDomainError


@dataclass(frozen=True)
class Schedule:
    alpha: Callable[[float], float]
    beta: Callable[[float], float]
    gamma: Callable[[float], float]
    alpha_dot: Callable[[float], float]
    beta_dot: Callable[[float], float]
    gamma_dot: Callable[[float], float]
    name: str = "custom"
    t_min: float = 0.0  # open lower endpoint of the time domain

    def sample(self, t: float) -> "ScheduleSample":
        if self.t_min > 0.0 and t <= 0.0:
            raise ScheduleDomainError(
                f"schedule '{self.name}' sampled at t={t!r}, domain is t > 0"
            )
        a, b, g = self.alpha(t), self.beta(t), self.gamma(t)
        ad, bd, gd = self.alpha_dot(t), self.beta_dot(t), self.gamma_dot(t)
        return ScheduleSample(
            t=t,
            alpha=a,
            beta=b,
            gamma=g,
            alpha_dot=ad,
            beta_dot=bd,
            gamma_dot=gd,
        )


@dataclass(frozen=True)
class ScheduleSample:
    t: float
    alpha: float
    beta: float
    gamma: float
    alpha_dot: float
    beta_dot: float
    gamma_dot: float

    @property
    def damping(self) -> float:
        return self.gamma_dot - self.alpha_dot

    @property
    def force_scale(self) -> float:
        return math.exp(2 * self.alpha + self.beta)

    @property
    def rate_scale(self) -> float:
        return math.exp(self.beta)


def nesterov_schedule() -> Schedule:
    """alpha = log(2/t), beta = log(t^2/4), gamma = 2 log t.

    Damping is 3/t and the force scale is identically 1, so the velocity
    equation reads vdot = -(3/t) v - grad."""
    return Schedule(
        alpha=lambda t: math.log(2.0 / t),
        beta=lambda t: math.log(t * t / 4.0),
        gamma=lambda t: 2.0 * math.log(t),
        alpha_dot=lambda t: -1.0 / t,
        beta_dot=lambda t: 2.0 / t,
        gamma_dot=lambda t: 2.0 / t,
        name="nesterov",
        t_min=1e-300,
    )


def exponential_schedule() -> Schedule:
    """alpha = 0, beta = t, gamma = t: unit damping, force scale e^t."""
    return Schedule(
        alpha=lambda t: 0.0,
        beta=lambda t: float(t),
        gamma=lambda t: float(t),
        alpha_dot=lambda t: 0.0,
        beta_dot=lambda t: 1.0,
        gamma_dot=lambda t: 1.0,
        name="exponential",
        t_min=-math.inf,
    )


def mirror_schedule(r: float) -> Schedule:
    """alpha = log(r/t), beta = 2 log(t/r), gamma = r log t.

    gamma is chosen so gamma_dot = r/t = e^alpha exactly, which the dual
    (mirror-variable) flow requires."""
    if not r > 0:
        raise InvalidArgument(f"r must be positive, got {r}")
    return Schedule(
        alpha=lambda t: math.log(r / t),
        beta=lambda t: 2.0 * math.log(t / r),
        gamma=lambda t: r * math.log(t),
        alpha_dot=lambda t: -1.0 / t,
        beta_dot=lambda t: 2.0 / t,
        gamma_dot=lambda t: r / t,
        name=f"mirror(r={r})",
        t_min=1e-300,
    )


def check_optimal_scaling(s: Schedule, grid):
    """Check beta_dot <= e^alpha and gamma_dot = e^alpha on a grid.

    Returns (True, None) on pass, or (False, (t, message)) naming the first
    violating grid point.
    """
    grid = list(grid)
    if not grid:
        raise InvalidArgument("empty grid")
    for t in grid:
        samp = s.sample(t)
        ea = math.exp(samp.alpha)
        if samp.beta_dot > ea + 1e-9:
            return False, (t, f"beta_dot={samp.beta_dot!r} exceeds e^alpha={ea!r} at t={t!r}")
        if abs(samp.gamma_dot - ea) > 1e-9 * max(1.0, ea):
            return False, (t, f"gamma_dot={samp.gamma_dot!r} != e^alpha={ea!r} at t={t!r}")
    return True, None


def time_dilate(s: Schedule, tau, tau_dot, tau_ddot=None, name=None) -> Schedule:
    """Reparameterize time t -> tau(t).

    The dilated triplet is alpha~(t) = alpha(tau) + log(tau_dot),
    beta~ = beta(tau), gamma~ = gamma(tau). Derivatives follow by the chain
    rule; alpha~_dot additionally needs tau_ddot/tau_dot, which defaults to
    a central difference of tau_dot when not supplied.
    """
    if tau_ddot is None:
        def tau_ddot(t, _td=tau_dot):
            h = 1e-6 * max(1.0, abs(t))
            return (_td(t + h) - _td(t - h)) / (2 * h)

    def _td(t):
        td = tau_dot(t)
        if not td > 0:
            raise ScheduleDomainError(f"tau_dot({t!r}) = {td!r} is not positive")
        return td

    def _guard(f):
        # validate tau_dot before touching the base schedule so a decreasing
        # tau raises a domain error rather than a math error in the base
        def wrapped(t):
            _td(t)
            return f(tau(t))
        return wrapped

    return Schedule(
        alpha=lambda t: math.log(_td(t)) + s.alpha(tau(t)),
        beta=_guard(s.beta),
        gamma=_guard(s.gamma),
        alpha_dot=lambda t: s.alpha_dot(tau(t)) * _td(t) + tau_ddot(t) / _td(t),
        beta_dot=lambda t: s.beta_dot(tau(t)) * _td(t),
        gamma_dot=lambda t: s.gamma_dot(tau(t)) * _td(t),
        name=name or f"{s.name}∘tau",
        t_min=s.t_min,
    )


def power_dilation(s: Schedule, p: float) -> Schedule:
    """Dilate with tau(t) = t^(p/2); p = 2 is the identity."""
    if not p > 0:
        raise InvalidArgument(f"p must be positive, got {p}")
    q = p / 2.0
    return time_dilate(
        s,
        tau=lambda t: t**q,
        tau_dot=lambda t: q * t ** (q - 1.0),
        tau_ddot=lambda t: q * (q - 1.0) * t ** (q - 2.0),
        name=f"{s.name}^(p={p})",
    )
