import math

import numpy as np
import pytest

from measureflow.ensemble import EmpiricalMeasure, init_gaussian
from measureflow.errors import InvalidArgument, ScaleOverflow
from measureflow.flows import (
    bregman_drift,
    heavy_ball_drift,
    kalman_drift,
    stein_drift,
    vaf_drift,
    wgf_drift,
)
from measureflow.functionals import QuadraticPotential, make_spd_matrix
from measureflow.integrator import IntegratorConfig, integrate_flat
from measureflow.schedules import exponential_schedule, mirror_schedule, nesterov_schedule


def quad(d=2, seed=1, b=None):
    return QuadraticPotential(A=make_spd_matrix(d, 0.5, 2.0, seed),
                              b=np.zeros(d) if b is None else np.asarray(b, float))


class ZeroGradient:
    """Constant functional: zero witness gradient everywhere."""

    dim = 1
    known_optimum = 0.0

    def evaluate(self, rho):
        return 0.0

    def witness_gradient(self, rho, at=None):
        pts = rho.points if at is None else at.points
        return np.zeros_like(pts)


# --- gradient flow ------------------------------------------------------------

def test_wgf_single_particle():
    F = QuadraticPotential(A=np.eye(2), b=np.zeros(2))
    drift = wgf_drift(F, 1, 2)
    assert np.allclose(drift.rhs(0.0, np.array([1.0, 0.0])), [-1.0, 0.0])
    assert np.allclose(drift.rhs(0.0, np.zeros(2)), 0.0)


def test_wgf_particles_decoupled_for_potentials():
    F = quad(2, seed=2, b=[0.5, -0.5])
    drift = wgf_drift(F, 2, 2)
    y = np.array([1.0, 2.0, -3.0, 0.7])
    full = drift.rhs(0.0, y).reshape(2, 2)
    for i in range(2):
        single = wgf_drift(F, 1, 2).rhs(0.0, y.reshape(2, 2)[i])
        assert np.allclose(full[i], single)


def test_wgf_state_has_no_velocity_slots():
    drift = wgf_drift(quad(), 3, 2)
    assert not drift.phase
    e = init_gaussian(3, 2, 0)
    assert drift.pack(e).size == 6


# --- heavy ball ---------------------------------------------------------------

def test_heavy_ball_zero_gradient_hand_values():
    drift = heavy_ball_drift(ZeroGradient(), 1, 1, a=0.5)
    got = drift.rhs(0.0, np.array([0.3, 1.0]))
    assert np.allclose(got, [1.0, -0.5])


def test_heavy_ball_single_particle_matches_plain_ode():
    F = quad(2, seed=3, b=[0.1, 0.2])
    a = 0.7
    drift = heavy_ball_drift(F, 1, 2, a=a)
    y = np.array([1.0, -1.0, 0.4, 0.9])
    x, v = y[:2], y[2:]
    want = np.concatenate([v, -a * v - F.A @ (x - F.b)])
    assert np.array_equal(drift.rhs(2.3, y), want)


def test_heavy_ball_forms_position_drift_agrees_at_time_zero():
    F = quad()
    y = np.array([1.0, -1.0, 0.4, 0.9])
    d1 = heavy_ball_drift(F, 1, 2, a=0.5, form="damped")
    d2 = heavy_ball_drift(F, 1, 2, a=0.5, form="undamped")
    # at t=0 the velocity rescaling is the identity, so the position drift
    # (and the force part of the velocity drift) coincide
    assert np.allclose(d1.rhs(0.0, y)[:2], d2.rhs(0.0, y)[:2])
    assert np.allclose(d1.rhs(0.0, y)[2:] + 0.5 * y[2:], d2.rhs(0.0, y)[2:])


def test_heavy_ball_validation():
    with pytest.raises(InvalidArgument):
        heavy_ball_drift(quad(), 1, 2, a=0.0)
    with pytest.raises(InvalidArgument):
        heavy_ball_drift(quad(), 1, 2, a=0.5, form="sideways")


# --- variational acceleration -------------------------------------------------

def test_vaf_nesterov_hand_values():
    F = quad(2, seed=4)
    drift = vaf_drift(F, 1, 2, nesterov_schedule())
    y = np.array([1.0, 2.0, 0.5, -0.5])
    x, v = y[:2], y[2:]
    want = np.concatenate([v, -1.5 * v - F.A @ x])
    assert np.allclose(drift.rhs(2.0, y), want)


def test_vaf_exponential_at_origin():
    F = quad(2, seed=5)
    drift = vaf_drift(F, 1, 2, exponential_schedule())
    y = np.array([1.0, 2.0, 0.5, -0.5])
    x, v = y[:2], y[2:]
    want = np.concatenate([v, -v - F.A @ x])
    assert np.allclose(drift.rhs(0.0, y), want)


def test_vaf_overflow_guard():
    drift = vaf_drift(quad(), 1, 2, exponential_schedule())
    with pytest.raises(ScaleOverflow):
        drift.rhs(800.0, np.ones(4))


def test_vaf_overflow_status_in_integrator():
    drift = vaf_drift(quad(), 1, 2, exponential_schedule())
    cfg = IntegratorConfig(rtol=1e-2, atol=1e-2, t_start=780.0, t_end=790.0)
    rec = integrate_flat(drift.rhs, np.ones(4), cfg)
    assert rec.status == "scale-overflow"


# --- covariance-preconditioned flow -------------------------------------------

def test_kalman_single_particle_closed_form():
    F = quad(2, seed=6, b=[0.3, -0.7])
    a, lam, t = 0.5, 0.3, 1.2
    drift = kalman_drift(F, 1, 2, a=a, lam=lam)
    y = np.array([0.5, -1.0, 2.0, 1.0])
    x, v = y[:2], y[2:]
    want = np.concatenate([
        math.exp(-a * t) * lam * v,
        -math.exp(a * t) * (F.A @ (x - F.b)),
    ])
    assert np.allclose(drift.rhs(t, y), want, atol=1e-15)


def test_kalman_zero_covariance_freezes_positions():
    F = quad()
    drift = kalman_drift(F, 3, 2, a=0.5, lam=0.0)
    X = np.tile([1.0, 2.0], 3)
    V = np.arange(6.0)
    got = drift.rhs(0.7, np.concatenate([X, V]))
    assert np.allclose(got[:6], 0.0)


def test_kalman_zero_velocities_pure_force():
    F = quad(2, seed=7)
    drift = kalman_drift(F, 3, 2, a=0.5, lam=0.1)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 2))
    got = drift.rhs(0.4, np.concatenate([X.ravel(), np.zeros(6)]))
    G = F.witness_gradient(EmpiricalMeasure(points=X))
    assert np.allclose(got[6:].reshape(3, 2), -math.exp(0.2) * G)


def test_kalman_validation():
    with pytest.raises(InvalidArgument):
        kalman_drift(quad(), 1, 2, a=0.5, lam=-1.0)


# --- kernel-averaged flow -----------------------------------------------------

def test_stein_single_particle_closed_form():
    F = quad(2, seed=8, b=[0.1, 0.1])
    a, t = 0.5, 1.2
    drift = stein_drift(F, 1, 2, a=a, bandwidth=1.3)
    y = np.array([0.5, -1.0, 2.0, 1.0])
    x, v = y[:2], y[2:]
    want = np.concatenate([math.exp(-a * t) * v, -math.exp(a * t) * (F.A @ (x - F.b))])
    assert np.allclose(drift.rhs(t, y), want, atol=1e-15)


def test_stein_zero_velocities():
    F = quad(2, seed=9)
    drift = stein_drift(F, 3, 2, a=0.5, bandwidth=1.0)
    rng = np.random.default_rng(1)
    X = rng.standard_normal((3, 2))
    got = drift.rhs(0.0, np.concatenate([X.ravel(), np.zeros(6)]))
    assert np.allclose(got[:6], 0.0)
    G = F.witness_gradient(EmpiricalMeasure(points=X))
    assert np.allclose(got[6:].reshape(3, 2), -G)


def test_stein_flat_kernel_limit_averages_velocities():
    F = ZeroGradient()
    drift = stein_drift(F, 4, 1, a=0.5, bandwidth=1e6)
    rng = np.random.default_rng(2)
    X = rng.standard_normal(4)
    V = rng.standard_normal(4)
    got = drift.rhs(0.0, np.concatenate([X, V]))
    assert np.allclose(got[:4], V.mean(), atol=1e-6)


def test_stein_validation():
    with pytest.raises(InvalidArgument):
        stein_drift(quad(), 1, 2, a=0.5, bandwidth=0.0)


# --- primal-dual mirror flow --------------------------------------------------

def test_bregman_identity_mirror_hand_values():
    F = quad(2, seed=10)
    s = mirror_schedule(2.0)
    drift = bregman_drift(F, 1, 2, s)
    t = 1.5
    samp = s.sample(t)
    y = np.array([0.4, -0.2, 1.0, 2.0])
    x, z = y[:2], y[2:]
    want = np.concatenate([
        math.exp(samp.alpha) * (z - x),
        -math.exp(samp.alpha + samp.beta) * (F.A @ x),
    ])
    assert np.allclose(drift.rhs(t, y), want)


def test_bregman_stationary_when_dual_matches_and_no_force():
    drift = bregman_drift(ZeroGradient(), 2, 1, mirror_schedule(1.0))
    X = np.array([0.3, -0.8])
    got = drift.rhs(1.0, np.concatenate([X, X]))
    assert np.allclose(got, 0.0)


def test_bregman_mirror_inverse_check():
    bad = (lambda x: 2 * x, lambda z: 3 * z)  # not mutually inverse
    with pytest.raises(InvalidArgument):
        bregman_drift(quad(), 2, 2, mirror_schedule(2.0), mirror=bad,
                      check_points=np.ones((2, 2)))
    good = (lambda x: 2 * x, lambda z: z / 2)
    bregman_drift(quad(), 2, 2, mirror_schedule(2.0), mirror=good,
                  check_points=np.ones((2, 2)))


# --- structural invariants ----------------------------------------------------

def test_permutation_equivariance():
    F = quad(2, seed=11)
    n = 5
    rng = np.random.default_rng(3)
    X = rng.standard_normal((n, 2))
    V = rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    for make in (lambda: heavy_ball_drift(F, n, 2, a=0.5),
                 lambda: vaf_drift(F, n, 2, nesterov_schedule()),
                 lambda: kalman_drift(F, n, 2, a=0.5, lam=0.1),
                 lambda: stein_drift(F, n, 2, a=0.5, bandwidth=1.0)):
        drift = make()
        y = np.concatenate([X.ravel(), V.ravel()])
        yp = np.concatenate([X[perm].ravel(), V[perm].ravel()])
        base = drift.rhs(1.0, y)
        permuted = drift.rhs(1.0, yp)
        assert np.allclose(permuted[: n * 2].reshape(n, 2),
                           base[: n * 2].reshape(n, 2)[perm], atol=1e-12)
        assert np.allclose(permuted[n * 2:].reshape(n, 2),
                           base[n * 2:].reshape(n, 2)[perm], atol=1e-12)


def test_translation_equivariance_potential_flows():
    d = 2
    c = np.array([1.5, -2.0])
    A = make_spd_matrix(d, 0.5, 2.0, 12)
    F0 = QuadraticPotential(A=A, b=np.zeros(d))
    Fc = QuadraticPotential(A=A, b=c)
    rng = np.random.default_rng(4)
    X = rng.standard_normal((3, d))
    V = rng.standard_normal((3, d))
    y0 = np.concatenate([X.ravel(), V.ravel()])
    yc = np.concatenate([(X + c).ravel(), V.ravel()])
    d0 = heavy_ball_drift(F0, 3, d, a=0.5)
    dc = heavy_ball_drift(Fc, 3, d, a=0.5)
    assert np.allclose(d0.rhs(0.0, y0), dc.rhs(0.0, yc), atol=1e-12)
