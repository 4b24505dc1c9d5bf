"""Experiment orchestration: problem generation, method comparison runs,
optimum estimation, gap traces, and step-count sweeps.

Default scales are reduced so a full comparison finishes in minutes; the
``paper_scale`` flag restores the full problem dimensions. All runs from
one spec share the same Gaussian initial ensemble (the plain gradient flow
uses its positions only), so the methods are directly comparable.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .ensemble import PhaseEnsemble, init_gaussian, kinetic_energy, x_marginal
from .errors import InvalidArgument
from .functionals import (
    BlobKL,
    LogSumExpPotential,
    ObjectiveFunctional,
    QuadraticPotential,
    TwoLayerNetLoss,
    logsumexp_log_density,
    make_spd_matrix,
    quadratic_log_density,
)
from .flows import (
    DriftField,
    bregman_drift,
    heavy_ball_drift,
    kalman_drift,
    stein_drift,
    vaf_drift,
    wgf_drift,
)
from .integrator import IntegratorConfig, RunRecord, integrate_flat
from .schedules import (
    Schedule,
    exponential_schedule,
    mirror_schedule,
    nesterov_schedule,
    power_dilation,
)

METHODS = ("WGF", "HB", "Nes", "Exp", "Kalman", "Stein", "Bregman")

PROBLEMS = (
    "quadratic_potential",
    "logsumexp_potential",
    "blob_kl_quadratic",
    "blob_kl_logsumexp",
    "two_layer_net",
)


@dataclass
class ExperimentSpec:
    problem: str = "quadratic_potential"
    methods: Sequence[str] = ("WGF", "HB", "Nes", "Exp")
    n_particles: int = 50
    dim: int = 10
    seed: int = 0
    horizon: float = 40.0
    t_start: float = 1e-2
    rtol: float = 1e-6
    atol: float = 1e-6
    max_steps: int = 10**7
    n_record: int = 400
    a: float = 0.5  # heavy-ball / kalman / stein damping constant
    eig_min: float = 1e-5
    eig_max: float = 1.0
    b_scale: float = 10.0  # b ~ N(0, b_scale^2 I)
    lse_terms: int = 1000
    lse_h: float = 20.0
    epsilon: float = 1.0  # kernel bandwidth of the regularized KL
    kalman_lambda: float = 1e-3
    stein_bandwidth: float = 1.0
    bregman_r: float = 2.0
    dilation_power: Optional[float] = None  # tau(t) = t^(p/2) applied to Nes
    n_data: int = 500  # training points for the network loss
    diagnostics: Sequence[str] = ()

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise InvalidArgument(f"unknown problem {self.problem!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InvalidArgument(f"unknown methods {bad}")
        if self.n_particles < 1 or self.dim < 1:
            raise InvalidArgument("n_particles and dim must be >= 1")
        if not self.t_start < self.horizon:
            raise InvalidArgument("need t_start < horizon")


def paper_scale_spec(spec: ExperimentSpec) -> ExperimentSpec:
    """Replace the reduced dimensions with the full-scale ones."""
    full = {
        "quadratic_potential": dict(dim=500, n_particles=100),
        "logsumexp_potential": dict(dim=200, n_particles=100, lse_terms=1000, lse_h=20.0),
        "blob_kl_quadratic": dict(dim=20, n_particles=1600, eig_min=1e-4,
                                  b_scale=math.sqrt(10.0)),
        "blob_kl_logsumexp": dict(dim=10, n_particles=1600, lse_terms=200, lse_h=10.0),
        "two_layer_net": dict(dim=1, n_particles=200, n_data=500),
    }[spec.problem]
    return replace(spec, **full)


def generate_problem(spec: ExperimentSpec) -> ObjectiveFunctional:
    """Build the objective for a spec, using a seeded generator throughout."""
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    if spec.problem == "quadratic_potential":
        A = make_spd_matrix(d, spec.eig_min, spec.eig_max, spec.seed)
        b = spec.b_scale * rng.standard_normal(d)
        return QuadraticPotential(A=A, b=b)
    if spec.problem == "logsumexp_potential":
        W = rng.standard_normal((spec.lse_terms, d))
        q = rng.standard_normal(spec.lse_terms)
        return LogSumExpPotential(W=W, q=q, h=spec.lse_h)
    if spec.problem == "blob_kl_quadratic":
        A = make_spd_matrix(d, spec.eig_min, spec.eig_max, spec.seed)
        b = spec.b_scale * rng.standard_normal(d)
        g, grad_g = quadratic_log_density(A, b)
        return BlobKL(log_density=g, log_density_gradient=grad_g,
                      epsilon=spec.epsilon, dim=d)
    if spec.problem == "blob_kl_logsumexp":
        W = rng.standard_normal((spec.lse_terms, d))
        q = rng.standard_normal(spec.lse_terms)
        g, grad_g = logsumexp_log_density(W, q, spec.lse_h)
        return BlobKL(log_density=g, log_density_gradient=grad_g,
                      epsilon=spec.epsilon, dim=d)
    # two_layer_net: regression of sin(pi x) from uniform samples on [-1, 1]
    xs = rng.uniform(-1.0, 1.0, size=(spec.n_data, d))
    ys = np.sin(np.pi * xs[:, 0])
    return TwoLayerNetLoss(data_x=xs, data_y=ys)


def particle_dim(spec: ExperimentSpec) -> int:
    return spec.dim + 3 if spec.problem == "two_layer_net" else spec.dim


def build_drift(method: str, F: ObjectiveFunctional, spec: ExperimentSpec) -> DriftField:
    n, d = spec.n_particles, particle_dim(spec)
    if method == "WGF":
        return wgf_drift(F, n, d)
    if method == "HB":
        return heavy_ball_drift(F, n, d, a=spec.a, form="damped")
    if method == "Nes":
        s = nesterov_schedule()
        if spec.dilation_power is not None:
            s = power_dilation(s, spec.dilation_power)
        return vaf_drift(F, n, d, s, form="damped")
    if method == "Exp":
        return vaf_drift(F, n, d, exponential_schedule(), form="damped")
    if method == "Kalman":
        return kalman_drift(F, n, d, a=spec.a, lam=spec.kalman_lambda)
    if method == "Stein":
        return stein_drift(F, n, d, a=spec.a, bandwidth=spec.stein_bandwidth)
    if method == "Bregman":
        return bregman_drift(F, n, d, mirror_schedule(spec.bregman_r))
    raise InvalidArgument(f"unknown method {method!r}")


def method_schedule(method: str, spec: ExperimentSpec) -> Optional[Schedule]:
    if method == "Nes":
        s = nesterov_schedule()
        return power_dilation(s, spec.dilation_power) if spec.dilation_power is not None else s
    if method == "Exp":
        return exponential_schedule()
    if method == "Bregman":
        return mirror_schedule(spec.bregman_r)
    return None


def initial_state(method: str, spec: ExperimentSpec, drift: DriftField) -> np.ndarray:
    e0 = init_gaussian(spec.n_particles, particle_dim(spec), spec.seed)
    if method == "Bregman":
        # dual variable starts at the mirror image shifted by the scaled
        # velocity, so the run matches the momentum flow it linearizes
        s = mirror_schedule(spec.bregman_r).sample(spec.t_start)
        Z = e0.positions + math.exp(-s.gamma) * e0.velocities
        return np.concatenate([e0.positions.ravel(), Z.ravel()])
    return drift.pack(e0)


@dataclass
class GapTrace:
    method: str
    times: np.ndarray
    energy: np.ndarray
    gap: np.ndarray  # filled once the reference optimum is known
    kinetic: np.ndarray
    lyapunov: np.ndarray
    accepted: np.ndarray
    rejected: np.ndarray
    status: str
    e_star: float = math.nan
    e_star_provenance: str = "pending"


def _method_horizon(method: str, spec: ExperimentSpec):
    # schedules singular at the origin cannot start at t = 0
    needs_positive_start = method in ("Nes", "Bregman")
    t0 = spec.t_start if needs_positive_start else 0.0
    return t0, spec.horizon


def run_method(method: str, F: ObjectiveFunctional, spec: ExperimentSpec,
               lyap_fn=None) -> GapTrace:
    """Integrate one method and evaluate the trace at the record times.
    ``lyap_fn(t, ensemble)``, when given, fills the lyapunov column."""
    drift = build_drift(method, F, spec)
    t0, t1 = _method_horizon(method, spec)
    record = np.linspace(t0, t1, spec.n_record)
    cfg = IntegratorConfig(rtol=spec.rtol, atol=spec.atol, t_start=t0, t_end=t1,
                           max_steps=spec.max_steps, record_times=record.tolist())
    y0 = initial_state(method, spec, drift)
    rec = integrate_flat(drift.rhs, y0, cfg)

    times, energy, kin, lyap = [], [], [], []
    for t, y in zip(rec.times, rec.states):
        e = drift.unpack(y, time=t)
        times.append(t)
        energy.append(F.evaluate(x_marginal(e)))
        kin.append(kinetic_energy(e) if drift.phase else 0.0)
        lyap.append(lyap_fn(t, e) if lyap_fn is not None else math.nan)
    counts = rec.counts[: len(times)]
    return GapTrace(
        method=method,
        times=np.array(times),
        energy=np.array(energy),
        gap=np.full(len(times), math.nan),
        kinetic=np.array(kin),
        lyapunov=np.array(lyap),
        accepted=np.array([c[0] for c in counts]),
        rejected=np.array([c[1] for c in counts]),
        status=rec.status,
    )


def estimate_E_star(traces: Sequence[GapTrace], functional: ObjectiveFunctional):
    """Reference optimum: analytic when the functional knows one, otherwise
    the best energy observed over all runs."""
    if functional.known_optimum is not None:
        return functional.known_optimum, "analytic"
    vals = [float(np.min(tr.energy)) for tr in traces if len(tr.energy)]
    if not vals:
        raise InvalidArgument("no completed runs to estimate the optimum from")
    return min(vals), "estimated"


def _thread_count() -> int:
    env = os.environ.get("WFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidArgument(f"WFLOW_THREADS must be an integer, got {env!r}")
    return min(4, os.cpu_count() or 1)


def run_comparison(spec: ExperimentSpec, out_dir: Optional[str] = None) -> Dict[str, GapTrace]:
    """Run every requested method from shared initial conditions, fill in
    gaps against the shared reference optimum, and optionally write one CSV
    per method plus a combined summary."""
    F = generate_problem(spec)
    lyap_fns = {m: _lyapunov_fn(m, F, spec) for m in spec.methods}
    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        futures = {m: pool.submit(run_method, m, F, spec, lyap_fns[m])
                   for m in spec.methods}
        traces = {m: f.result() for m, f in futures.items()}
    e_star, provenance = estimate_E_star(list(traces.values()), F)
    for tr in traces.values():
        tr.e_star = e_star
        tr.e_star_provenance = provenance
        tr.gap = tr.energy - e_star
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for m, tr in traces.items():
            write_trace_csv(tr, os.path.join(out_dir, f"trace_{m}.csv"))
        write_summary(traces, os.path.join(out_dir, "summary.txt"))
    return traces


def _lyapunov_fn(method: str, F: ObjectiveFunctional, spec: ExperimentSpec):
    """Per-method Lyapunov diagnostic against the Dirac target at the
    minimizer; only available when the spec requests diagnostics and the
    functional has an analytic minimizer (quadratic). Momentum methods get
    their flow's diagnostic, the plain gradient flow the bare gap."""
    if not spec.diagnostics or not isinstance(F, QuadraticPotential):
        return None
    from .transport import lyapunov_hb_convex, lyapunov_vaf

    e_star = F.known_optimum
    sched = method_schedule(method, spec)
    if method == "HB":
        return lambda t, e: lyapunov_hb_convex(e, spec.a, F, F.b, e_star).value
    if sched is not None and method != "Bregman":
        return lambda t, e: lyapunov_vaf(e, sched, t, F, F.b, e_star).value
    return lambda t, e: F.evaluate(x_marginal(e)) - e_star


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_trace_csv(tr: GapTrace, path: str):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "energy", "gap", "kinetic", "lyapunov",
                    "accepted_steps", "rejected_steps", "status"])
        for i in range(len(tr.times)):
            w.writerow([
                _fmt(tr.times[i]), _fmt(tr.energy[i]), _fmt(tr.gap[i]),
                _fmt(tr.kinetic[i]), _fmt(tr.lyapunov[i]),
                int(tr.accepted[i]), int(tr.rejected[i]), tr.status,
            ])


def write_summary(traces: Dict[str, GapTrace], path: str):
    lines = []
    for m, tr in sorted(traces.items()):
        final_gap = tr.gap[-1] if len(tr.gap) else math.nan
        lines.append(
            f"{m}: final_gap={_fmt(final_gap)} accepted={int(tr.accepted[-1]) if len(tr.accepted) else 0} "
            f"rejected={int(tr.rejected[-1]) if len(tr.rejected) else 0} status={tr.status} "
            f"E_star={_fmt(tr.e_star)} ({tr.e_star_provenance})"
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def sweep_steps_vs_tolerance(spec: ExperimentSpec, gap_levels: Sequence[float],
                             traces: Optional[Dict[str, GapTrace]] = None):
    """Total attempted steps until the recorded gap first drops below each
    level. Returns rows (method, gap_level, total_steps) with math.inf when
    a level is never reached within the horizon."""
    levels = [float(g) for g in gap_levels]
    if not levels or any(g <= 0 for g in levels):
        raise InvalidArgument("gap_levels must be positive")
    if levels != sorted(levels, reverse=True) or len(set(levels)) != len(levels):
        raise InvalidArgument("gap_levels must be strictly decreasing")
    if traces is None:
        traces = run_comparison(spec)
    rows = []
    for m in spec.methods:
        tr = traces[m]
        total = tr.accepted + tr.rejected
        for level in levels:
            hit = np.nonzero(tr.gap < level)[0]
            rows.append((m, level, int(total[hit[0]]) if hit.size else math.inf))
    return rows


def write_sweep_csv(rows, path: str):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "gap_level", "total_steps"])
        for m, level, steps in rows:
            w.writerow([m, _fmt(level), "inf" if math.isinf(steps) else int(steps)])


def fit_rate(times, gaps, t_lo, t_hi, log_time=False, floor=0.0):
    """Least-squares slope of log(gap) against t (or log t) on a window,
    ignoring samples at or below the floor."""
    times = np.asarray(times, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    mask = (times >= t_lo) & (times <= t_hi) & (gaps > floor)
    if mask.sum() < 2:
        raise InvalidArgument("fewer than two usable samples in the fit window")
    x = np.log(times[mask]) if log_time else times[mask]
    y = np.log(gaps[mask])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)
