"""Adaptive Dormand-Prince 5(4) integration of particle drift fields.

The integrator operates on flat state vectors; flows supply a function
``rhs(t, y)`` plus pack/unpack helpers. Controller: RMS error norm against
atol + rtol * max(|y_old|, |y_new|), accept when norm <= 1, step factor
clamp(0.9 * norm^(-1/5), 0.2, 10). Output at requested times comes from the
5th-order pair's 4th-order dense interpolant, so accepted steps need not
land on record times. Counters include rejected attempts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import InvalidArgument, NonFiniteDrift, ScaleOverflow

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4

# dense-output weights for the 4th-order continuous extension
_D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)


@dataclass
class IntegratorConfig:
    rtol: float = 1e-6
    atol: float = 1e-6
    t_start: float = 0.0
    t_end: float = 1.0
    max_steps: int = 10**7
    initial_step: Optional[float] = None  # None -> heuristic
    safety: float = 0.9
    shrink: float = 0.2
    growth: float = 10.0
    record_times: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidArgument(f"rtol/atol must be positive, got {self.rtol}, {self.atol}")
        if not self.t_start < self.t_end:
            raise InvalidArgument(f"need t_start < t_end, got [{self.t_start}, {self.t_end}]")
        if self.max_steps < 1:
            raise InvalidArgument(f"max_steps must be >= 1, got {self.max_steps}")
        if self.record_times is not None:
            rt = [float(t) for t in self.record_times]
            if rt != sorted(rt):
                raise InvalidArgument("record_times must be sorted")
            if rt and (rt[0] < self.t_start - 1e-12 or rt[-1] > self.t_end + 1e-12):
                raise InvalidArgument("record_times must lie within [t_start, t_end]")
            self.record_times = rt


@dataclass
class RunRecord:
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    counts: List[tuple] = field(default_factory=list)  # (accepted, rejected) at each record time
    accepted_steps: int = 0
    rejected_steps: int = 0
    status: str = "completed"

    @property
    def total_steps(self) -> int:
        return self.accepted_steps + self.rejected_steps


def _error_norm(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def initial_step_heuristic(rhs, t0, y0, cfg: IntegratorConfig) -> float:
    """Classical two-evaluation starting-step estimate; falls back to
    (t_end - t_start)/100 when the drift vanishes."""
    span = cfg.t_end - cfg.t_start
    f0 = np.asarray(rhs(t0, y0), dtype=float)
    scale = cfg.atol + cfg.rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    if d1 == 0.0:
        return span / 100.0
    h0 = 0.01 * d0 / d1 if d0 > 1e-5 else 1e-6
    h0 = min(h0, span)
    y1 = y0 + h0 * f0
    f1 = np.asarray(rhs(t0 + h0, y1), dtype=float)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    return float(min(100 * h0, h1, span))


class _DenseSegment:
    """Quartic interpolant on one accepted step [t0, t0 + h]."""

    def __init__(self, t0, h, y0, y1, k, f_new):
        ydiff = y1 - y0
        self.t0 = t0
        self.h = h
        self.r1 = y0
        self.r2 = ydiff
        self.r3 = h * k[0] - ydiff
        self.r4 = ydiff - h * f_new - self.r3
        self.r5 = h * (k.T @ _D)

    def __call__(self, t):
        s = (t - self.t0) / self.h
        s1 = 1.0 - s
        return self.r1 + s * (self.r2 + s1 * (self.r3 + s * (self.r4 + s1 * self.r5)))


def integrate_flat(rhs, y0, cfg: IntegratorConfig,
                   callback: Optional[Callable] = None) -> RunRecord:
    """Integrate ``ydot = rhs(t, y)`` for a flat state vector.

    ``callback(t, y)``, when given, runs after each accepted step and may
    return False to stop early with status "completed". ScaleOverflow from
    the rhs stops the run with status "scale-overflow"; hitting max_steps
    gives "max-steps". Requested record times are filled by dense output as
    the integration passes them.
    """
    y = np.array(y0, dtype=float).ravel()
    t = cfg.t_start
    record_times = list(cfg.record_times) if cfg.record_times is not None else [cfg.t_start, cfg.t_end]
    rec = RunRecord()
    next_rec = 0

    def emit_from_segment(seg):
        nonlocal next_rec
        while next_rec < len(record_times) and record_times[next_rec] <= seg.t0 + seg.h + 1e-14:
            tr = record_times[next_rec]
            rec.times.append(tr)
            rec.states.append(seg(min(tr, seg.t0 + seg.h)))
            rec.counts.append((rec.accepted_steps, rec.rejected_steps))
            next_rec += 1

    def check_finite(f, tq):
        if not np.all(np.isfinite(f)):
            idx = int(np.argmin(np.isfinite(f)))
            raise NonFiniteDrift(tq, idx)

    try:
        f0 = np.asarray(rhs(t, y), dtype=float)
    except ScaleOverflow:
        rec.status = "scale-overflow"
        return rec
    check_finite(f0, t)

    # record the initial state if requested
    while next_rec < len(record_times) and record_times[next_rec] <= t + 1e-14:
        rec.times.append(record_times[next_rec])
        rec.states.append(y.copy())
        rec.counts.append((0, 0))
        next_rec += 1

    h = cfg.initial_step if cfg.initial_step is not None else initial_step_heuristic(rhs, t, y, cfg)
    h = min(h, cfg.t_end - t)

    k = np.empty((7, y.size))
    while t < cfg.t_end - 1e-14:
        if rec.total_steps >= cfg.max_steps:
            rec.status = "max-steps"
            return rec
        h = min(h, cfg.t_end - t)
        k[0] = f0
        try:
            for i in range(1, 7):
                yi = y + h * (k[:i].T @ _A[i])
                k[i] = rhs(t + _C[i] * h, yi)
                check_finite(k[i], t + _C[i] * h)
        except ScaleOverflow:
            rec.status = "scale-overflow"
            return rec
        y_new = y + h * (k.T @ _B5)
        err = h * (k.T @ _E)
        norm = _error_norm(err, y, y_new, cfg.rtol, cfg.atol)
        if norm <= 1.0:
            rec.accepted_steps += 1
            seg = _DenseSegment(t, h, y, y_new, k.copy(), k[6])
            emit_from_segment(seg)
            t = t + h
            y = y_new
            f0 = k[6].copy()  # FSAL: last stage is the next first stage
            if callback is not None and callback(t, y) is False:
                break
        else:
            rec.rejected_steps += 1
        factor = cfg.safety * norm ** -0.2 if norm > 0 else cfg.growth
        h = h * min(cfg.growth, max(cfg.shrink, factor))

    # flush any remaining record times at the final state
    while next_rec < len(record_times):
        rec.times.append(record_times[next_rec])
        rec.states.append(y.copy())
        rec.counts.append((rec.accepted_steps, rec.rejected_steps))
        next_rec += 1
    return rec


def integrate_fixed_step(rhs, y0, t_start, t_end, h) -> np.ndarray:
    """Fixed-step 5th-order stepping (controller bypassed); returns y(t_end).
    Used to verify the method's convergence order."""
    y = np.array(y0, dtype=float).ravel()
    t = t_start
    k = np.empty((7, y.size))
    n = int(round((t_end - t_start) / h))
    for _ in range(n):
        k[0] = rhs(t, y)
        for i in range(1, 7):
            k[i] = rhs(t + _C[i] * h, y + h * (k[:i].T @ _A[i]))
        y = y + h * (k.T @ _B5)
        t += h
    return y
