"""Objective functionals over empirical measures.

Every functional exposes two operations used by all flows:

* ``evaluate(rho)`` -- the objective value at an empirical measure, and
* ``witness_gradient(rho, at)`` -- the spatial gradient of the first
  variation, evaluated at the given query points (defaulting to the
  support of ``rho`` itself).

The KL objective is kernel-regularized so that it is well defined on
empirical measures; its value omits the unknown additive normalizing
constant, so only gaps against a reference value are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .ensemble import EmpiricalMeasure
from .errors import InvalidArgument


def _as_measure(rho) -> EmpiricalMeasure:
    if isinstance(rho, EmpiricalMeasure):
        return rho
    return EmpiricalMeasure(points=np.atleast_2d(np.asarray(rho, dtype=float)))


class ObjectiveFunctional:
    """Base class; subclasses set ``kind`` and implement the two operations."""

    kind: str = "abstract"
    known_optimum: Optional[float] = None

    def _check_dim(self, rho: EmpiricalMeasure):
        if rho.dim != self.dim:
            raise InvalidArgument(
                f"{self.kind}: expected point dimension {self.dim}, got {rho.dim}"
            )

    def evaluate(self, rho) -> float:
        raise NotImplementedError

    def witness_gradient(self, rho, at=None) -> np.ndarray:
        raise NotImplementedError


def evaluate(functional: ObjectiveFunctional, rho) -> float:
    return functional.evaluate(rho)


def witness_gradient(functional: ObjectiveFunctional, rho, at=None) -> np.ndarray:
    return functional.witness_gradient(rho, at)


@dataclass
class QuadraticPotential(ObjectiveFunctional):
    """Potential energy of V(x) = 1/2 <x - b, A (x - b)> with A symmetric
    positive definite. The strong-convexity modulus (smallest eigenvalue of
    A) is recorded at construction."""

    A: np.ndarray
    b: np.ndarray
    kind: str = field(default="quadratic", init=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise InvalidArgument(f"A must be square, got shape {self.A.shape}")
        if self.b.shape != (self.A.shape[0],):
            raise InvalidArgument(
                f"b shape {self.b.shape} incompatible with A shape {self.A.shape}"
            )
        if not np.allclose(self.A, self.A.T, atol=1e-12, rtol=0):
            raise InvalidArgument("A must be symmetric (tolerance 1e-12)")
        eigvals = np.linalg.eigvalsh(self.A)
        if eigvals[0] <= 0:
            raise InvalidArgument(f"A must be positive definite, min eigenvalue {eigvals[0]}")
        self.modulus = float(eigvals[0])
        # optimum: Dirac at b, V(b) = 0
        self.known_optimum = 0.0

    @property
    def dim(self):
        return self.A.shape[0]

    def evaluate(self, rho) -> float:
        rho = _as_measure(rho)
        self._check_dim(rho)
        z = rho.points - self.b
        return 0.5 * float(np.mean(np.einsum("nd,de,ne->n", z, self.A, z)))

    def witness_gradient(self, rho, at=None) -> np.ndarray:
        at = _as_measure(rho if at is None else at)
        self._check_dim(at)
        return (at.points - self.b) @ self.A


@dataclass
class LogSumExpPotential(ObjectiveFunctional):
    """Potential energy of V(x) = h * log sum_i exp((<w_i, x> - q_i) / h),
    evaluated with max-subtraction so small h does not overflow."""

    W: np.ndarray
    q: np.ndarray
    h: float
    kind: str = field(default="logsumexp", init=False)

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if self.W.shape[0] < 1:
            raise InvalidArgument("need at least one row in W")
        if self.q.shape != (self.W.shape[0],):
            raise InvalidArgument(f"q shape {self.q.shape} != ({self.W.shape[0]},)")
        if not self.h > 0:
            raise InvalidArgument(f"h must be positive, got {self.h}")

    @property
    def dim(self):
        return self.W.shape[1]

    def _logits(self, points):
        return (points @ self.W.T - self.q) / self.h  # (N, M)

    def evaluate(self, rho) -> float:
        rho = _as_measure(rho)
        self._check_dim(rho)
        logits = self._logits(rho.points)
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1))
        return float(np.mean(self.h * lse))

    def softmax_weights(self, points) -> np.ndarray:
        logits = self._logits(np.atleast_2d(points))
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def witness_gradient(self, rho, at=None) -> np.ndarray:
        at = _as_measure(rho if at is None else at)
        self._check_dim(at)
        return self.softmax_weights(at.points) @ self.W


@dataclass
class BlobKL(ObjectiveFunctional):
    """Kernel-regularized KL divergence against a target with log-density
    -g (up to normalization): mean_i [ln((K * rho)(X^i)) + g(X^i)] with the
    Gaussian kernel of bandwidth epsilon. Pairwise sums are dense O(N^2)."""

    log_density: Callable[[np.ndarray], np.ndarray]  # g, vectorized over rows
    log_density_gradient: Callable[[np.ndarray], np.ndarray]  # grad g
    epsilon: float
    dim: int
    kind: str = field(default="blob_kl", init=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgument(f"epsilon must be positive, got {self.epsilon}")
        if self.dim < 1:
            raise InvalidArgument(f"dim must be >= 1, got {self.dim}")

    def _kernel_matrix(self, xs, ys):
        # K(x - y) for all pairs; (len(xs), len(ys))
        d = self.dim
        eps2 = self.epsilon**2
        sq = np.sum((xs[:, None, :] - ys[None, :, :]) ** 2, axis=2)
        return (2 * np.pi * eps2) ** (-d / 2) * np.exp(-sq / (2 * eps2))

    def _densities(self, rho: EmpiricalMeasure):
        # s_j = (1/N) sum_k K(X^j - X^k)
        K = self._kernel_matrix(rho.points, rho.points)
        return K, K.mean(axis=1)

    def evaluate(self, rho) -> float:
        rho = _as_measure(rho)
        self._check_dim(rho)
        _, s = self._densities(rho)
        g = np.asarray(self.log_density(rho.points), dtype=float).reshape(rho.n)
        return float(np.mean(np.log(s) + g))

    def witness_gradient(self, rho, at=None) -> np.ndarray:
        rho = _as_measure(rho)
        self._check_dim(rho)
        eps2 = self.epsilon**2
        if at is None:
            # query points are the support itself: one kernel matrix suffices,
            # giving grad_i = (1/N) sum_j grad K(X^i - X^j) (1/s_i + 1/s_j) + grad g
            K, s = self._densities(rho)
            diff = rho.points[:, None, :] - rho.points[None, :, :]
            gradK = -(diff / eps2) * K[:, :, None]
            inv = 1.0 / s
            term = np.mean(gradK * (inv[:, None, None] + inv[None, :, None]), axis=1)
            gg = np.asarray(self.log_density_gradient(rho.points), dtype=float)
            return term + gg.reshape(rho.points.shape)
        _, s = self._densities(rho)
        at = _as_measure(at)
        self._check_dim(at)
        diff = at.points[:, None, :] - rho.points[None, :, :]  # (Nq, N, d)
        Kq = self._kernel_matrix(at.points, rho.points)  # (Nq, N)
        # density seen from the query points
        s_at = Kq.mean(axis=1)
        # grad K(r) = -(r / eps^2) K(r); first-variation gradient at x is
        # grad(K*rho)(x)/(K*rho)(x) + (1/N) sum_j grad K(x - X^j)/s_j + grad g(x)
        gradK = -(diff / eps2) * Kq[:, :, None]  # (Nq, N, d)
        term = gradK.mean(axis=1) / s_at[:, None] + np.mean(
            gradK / s[None, :, None], axis=1
        )
        gg = np.asarray(self.log_density_gradient(at.points), dtype=float).reshape(at.points.shape)
        return term + gg


@dataclass
class TwoLayerNetLoss(ObjectiveFunctional):
    """Mean-field two-layer ReLU regression loss. A particle packs one
    neuron z = (alpha, beta, w, bias) so the particle dimension is dx + 3.

    E[rho] = (1/(2P)) sum_p (y_p - g(x_p, rho))^2 with
    g(x, rho) = mean_i [alpha_i relu(w_i . x + bias_i) + beta_i].
    """

    data_x: np.ndarray  # (P, dx)
    data_y: np.ndarray  # (P,)
    kind: str = field(default="two_layer_net", init=False)

    def __post_init__(self):
        self.data_x = np.atleast_2d(np.asarray(self.data_x, dtype=float))
        self.data_y = np.atleast_1d(np.asarray(self.data_y, dtype=float))
        if self.data_x.shape[0] < 1:
            raise InvalidArgument("need at least one data point")
        if self.data_y.shape != (self.data_x.shape[0],):
            raise InvalidArgument(
                f"data_y shape {self.data_y.shape} != ({self.data_x.shape[0]},)"
            )

    @property
    def dim(self):
        return self.data_x.shape[1] + 3

    def _unpack(self, points):
        dx = self.data_x.shape[1]
        alpha = points[:, 0]
        beta = points[:, 1]
        w = points[:, 2 : 2 + dx]
        bias = points[:, 2 + dx]
        return alpha, beta, w, bias

    def predict(self, rho) -> np.ndarray:
        """Network output g(x_p, rho) on the training inputs."""
        rho = _as_measure(rho)
        self._check_dim(rho)
        alpha, beta, w, bias = self._unpack(rho.points)
        pre = self.data_x @ w.T + bias  # (P, N)
        act = np.maximum(pre, 0.0)
        return (act * alpha).mean(axis=1) + beta.mean()

    def evaluate(self, rho) -> float:
        rho = _as_measure(rho)
        r = self.predict(rho) - self.data_y
        return 0.5 * float(np.mean(r * r))

    def mse(self, rho) -> float:
        r = self.predict(rho) - self.data_y
        return float(np.mean(r * r))

    def witness_gradient(self, rho, at=None) -> np.ndarray:
        rho = _as_measure(rho)
        resid = self.predict(rho) - self.data_y  # (P,)
        at = _as_measure(rho if at is None else at)
        self._check_dim(at)
        alpha, _, w, bias = self._unpack(at.points)
        pre = self.data_x @ w.T + bias  # (P, N)
        act = np.maximum(pre, 0.0)
        # subgradient convention: relu'(0) = 0
        dact = (pre > 0).astype(float)
        P = self.data_x.shape[0]
        g_alpha = resid @ act / P  # (N,)
        g_beta = np.full(at.points.shape[0], resid.mean())
        g_w = ((resid[:, None] * dact).T @ self.data_x) * alpha[:, None] / P  # (N, dx)
        g_bias = (resid @ dact) * alpha / P  # (N,)
        return np.column_stack([g_alpha, g_beta, g_w, g_bias])


def make_spd_matrix(d, eig_min, eig_max, seed) -> np.ndarray:
    """Random SPD matrix U^T D U with log-uniform spectrum on
    [eig_min, eig_max] and U Haar-orthogonal (QR of a Gaussian matrix with
    the R diagonal sign-corrected)."""
    if not 0 < eig_min <= eig_max:
        raise InvalidArgument(f"need 0 < eig_min <= eig_max, got [{eig_min}, {eig_max}]")
    if d < 1:
        raise InvalidArgument(f"d must be >= 1, got {d}")
    rng = np.random.default_rng(seed)
    diag = np.exp(rng.uniform(np.log(eig_min), np.log(eig_max), size=d))
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    A = Q.T @ (diag[:, None] * Q)
    return 0.5 * (A + A.T)


def quadratic_log_density(A, b):
    """Callable pair (g, grad g) for g(x) = 1/2 <x-b, A(x-b)>, for use as a
    blob-KL target."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    def g(x):
        z = np.atleast_2d(x) - b
        return 0.5 * np.einsum("nd,de,ne->n", z, A, z)

    def grad_g(x):
        return (np.atleast_2d(x) - b) @ A

    return g, grad_g


def logsumexp_log_density(W, q, h):
    """Callable pair (g, grad g) for the log-sum-exp potential, for use as
    a blob-KL target."""
    pot = LogSumExpPotential(W=W, q=q, h=h)

    def g(x):
        x = np.atleast_2d(x)
        logits = pot._logits(x)
        m = logits.max(axis=1, keepdims=True)
        return h * (m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1)))

    def grad_g(x):
        return pot.softmax_weights(np.atleast_2d(x)) @ pot.W

    return g, grad_g
