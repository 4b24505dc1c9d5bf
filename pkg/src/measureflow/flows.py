"""Drift fields on phase space for each flow family.

Each builder returns a ``DriftField`` whose ``rhs(t, y)`` acts on the flat
state layout [positions, velocities] (each an (N, d) block, row-major).
The plain gradient flow uses positions only. With a single particle every
drift reduces exactly to the corresponding ordinary differential equation
on Euclidean space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ensemble import EmpiricalMeasure, PhaseEnsemble, x_marginal
from .errors import InvalidArgument, ScaleOverflow
from .functionals import ObjectiveFunctional
from .schedules import Schedule

_LOG_LIMIT = math.log(1e300)


def _safe_exp(expo: float, t: float) -> float:
    """exp with a clean abort once the result would exceed 1e300."""
    if expo > _LOG_LIMIT:
        raise ScaleOverflow(f"drift coefficient e^{expo!r} overflows at t={t!r}")
    return math.exp(expo)


@dataclass
class DriftField:
    family: str
    rhs: Callable[[float, np.ndarray], np.ndarray]
    n: int
    dim: int
    phase: bool  # True when the state carries velocities
    form: Optional[str] = None

    def pack(self, e: PhaseEnsemble) -> np.ndarray:
        if self.phase:
            return np.concatenate([e.positions.ravel(), e.velocities.ravel()])
        return e.positions.ravel().copy()

    def unpack(self, y: np.ndarray, time=0.0) -> PhaseEnsemble:
        nd = self.n * self.dim
        pos = y[:nd].reshape(self.n, self.dim)
        vel = y[nd:].reshape(self.n, self.dim) if self.phase else np.zeros_like(pos)
        return PhaseEnsemble(positions=pos, velocities=vel, time=time)


def _grad(F: ObjectiveFunctional, X: np.ndarray) -> np.ndarray:
    return F.witness_gradient(EmpiricalMeasure(points=X))


def wgf_drift(F: ObjectiveFunctional, n: int, d: int) -> DriftField:
    """Steepest-descent flow: xdot = -grad of the first variation."""

    def rhs(t, y):
        X = y.reshape(n, d)
        return -_grad(F, X).ravel()

    return DriftField(family="wgf", rhs=rhs, n=n, dim=d, phase=False)


def _check_form(form):
    if form not in ("damped", "undamped"):
        raise InvalidArgument(f"form must be 'damped' or 'undamped', got {form!r}")


def heavy_ball_drift(F: ObjectiveFunctional, n: int, d: int, a: float,
                     form: str = "damped") -> DriftField:
    """Momentum flow with constant damping a.

    damped:   xdot = v,           vdot = -a v - grad
    undamped: xdot = e^(-a t) v,  vdot = -e^(a t) grad
    The two are related by v -> e^(-a t) v.
    """
    if not a > 0:
        raise InvalidArgument(f"a must be positive, got {a}")
    _check_form(form)
    nd = n * d

    def rhs(t, y):
        X = y[:nd].reshape(n, d)
        V = y[nd:].reshape(n, d)
        G = _grad(F, X)
        if form == "damped":
            return np.concatenate([V.ravel(), (-a * V - G).ravel()])
        return np.concatenate([(math.exp(-a * t) * V).ravel(),
                               (-math.exp(a * t) * G).ravel()])

    return DriftField(family="heavy_ball", rhs=rhs, n=n, dim=d, phase=True, form=form)


def vaf_drift(F: ObjectiveFunctional, n: int, d: int, s: Schedule,
              form: str = "damped") -> DriftField:
    """Variational acceleration flow for a schedule (alpha, beta, gamma).

    damped:   xdot = v, vdot = -(gamma_dot - alpha_dot) v - e^(2 alpha + beta) grad
    undamped: xdot = e^(alpha - gamma) v, vdot = -e^(alpha + beta + gamma) grad
    Related by v -> e^(alpha - gamma) v. Aborts with a scale-overflow once
    a drift coefficient exceeds the representable range.
    """
    _check_form(form)
    nd = n * d

    def rhs(t, y):
        samp = s.sample(t)
        X = y[:nd].reshape(n, d)
        V = y[nd:].reshape(n, d)
        G = _grad(F, X)
        if form == "damped":
            fs = _safe_exp(2 * samp.alpha + samp.beta, t)
            return np.concatenate([V.ravel(), (-samp.damping * V - fs * G).ravel()])
        cx = _safe_exp(samp.alpha - samp.gamma, t)
        cv = _safe_exp(samp.alpha + samp.beta + samp.gamma, t)
        return np.concatenate([(cx * V).ravel(), (-cv * G).ravel()])

    return DriftField(family="vaf", rhs=rhs, n=n, dim=d, phase=True, form=form)


def kalman_drift(F: ObjectiveFunctional, n: int, d: int, a: float,
                 lam: float) -> DriftField:
    """Covariance-preconditioned momentum flow.

    xdot^i = e^(-a t) (Cov(X) + lam I) v^i
    vdot^i = -e^(-a t) M_V (x^i - mean(X)) - e^(a t) grad(x^i)
    with M_V = (1/N) sum_j v^j v^j^T.
    """
    if not a > 0:
        raise InvalidArgument(f"a must be positive, got {a}")
    if lam < 0:
        raise InvalidArgument(f"lambda must be >= 0, got {lam}")
    nd = n * d

    def rhs(t, y):
        X = y[:nd].reshape(n, d)
        V = y[nd:].reshape(n, d)
        G = _grad(F, X)
        xb = X.mean(axis=0)
        Xc = X - xb
        C = Xc.T @ Xc / n + lam * np.eye(d)
        MV = V.T @ V / n
        ea = math.exp(-a * t)
        eat = math.exp(a * t)
        xdot = ea * (V @ C.T)
        vdot = -ea * (Xc @ MV.T) - eat * G
        return np.concatenate([xdot.ravel(), vdot.ravel()])

    return DriftField(family="kalman", rhs=rhs, n=n, dim=d, phase=True)


def stein_drift(F: ObjectiveFunctional, n: int, d: int, a: float,
                bandwidth: float) -> DriftField:
    """Kernel-averaged momentum flow with a Gaussian kernel
    k(x, y) = exp(-||x - y||^2 / (2 bandwidth^2)), so k(x, x) = 1.

    xdot^i = e^(-a t) (1/N) sum_j k(x^i, x^j) v^j
    vdot^i = -e^(-a t) (1/N) sum_j <v^i, v^j> grad_x k(x^i, x^j) - e^(a t) grad(x^i)
    """
    if not a > 0:
        raise InvalidArgument(f"a must be positive, got {a}")
    if not bandwidth > 0:
        raise InvalidArgument(f"bandwidth must be positive, got {bandwidth}")
    nd = n * d
    bw2 = bandwidth**2

    def rhs(t, y):
        X = y[:nd].reshape(n, d)
        V = y[nd:].reshape(n, d)
        G = _grad(F, X)
        diff = X[:, None, :] - X[None, :, :]  # (N, N, d)
        K = np.exp(-np.sum(diff * diff, axis=2) / (2 * bw2))  # (N, N)
        ea = math.exp(-a * t)
        eat = math.exp(a * t)
        xdot = ea * (K @ V) / n
        # grad_x k(x^i, x^j) = -(x^i - x^j)/bw^2 * k
        vv = V @ V.T  # <v^i, v^j>
        gradk = -(diff / bw2) * K[:, :, None]
        vdot = -ea * np.einsum("ij,ijd->id", vv, gradk) / n - eat * G
        return np.concatenate([xdot.ravel(), vdot.ravel()])

    return DriftField(family="stein", rhs=rhs, n=n, dim=d, phase=True)


def identity_mirror():
    """Mirror maps of the quadratic potential psi = ||.||^2 / 2."""
    return (lambda x: x, lambda z: z)


def bregman_drift(F: ObjectiveFunctional, n: int, d: int, s: Schedule,
                  mirror=None, check_points=None) -> DriftField:
    """Primal-dual mirror flow; the state is (X, Z) with Z the dual variable.

    xdot^i = e^alpha (grad psi*(z^i) - x^i),  zdot^i = -e^(alpha+beta) grad(x^i)

    Requires a schedule with gamma_dot = e^alpha. When sample points are
    supplied, the mirror maps are verified mutually inverse on them at
    construction (tolerance 1e-8).
    """
    if mirror is None:
        mirror = identity_mirror()
    grad_psi, grad_psi_star = mirror
    if check_points is not None:
        pts = np.atleast_2d(np.asarray(check_points, dtype=float))
        back = np.asarray(grad_psi_star(np.asarray(grad_psi(pts))))
        if np.max(np.abs(back - pts)) > 1e-8:
            raise InvalidArgument("mirror maps are not mutually inverse on the sample points")
    nd = n * d

    def rhs(t, y):
        samp = s.sample(t)
        ea = _safe_exp(samp.alpha, t)
        eab = _safe_exp(samp.alpha + samp.beta, t)
        X = y[:nd].reshape(n, d)
        Z = y[nd:].reshape(n, d)
        G = _grad(F, X)
        xdot = ea * (np.asarray(grad_psi_star(Z)) - X)
        zdot = -eab * G
        return np.concatenate([xdot.ravel(), zdot.ravel()])

    return DriftField(family="bregman", rhs=rhs, n=n, dim=d, phase=True)
