"""Command-line entry point.

Subcommands:
  run <config.toml>    comparison run: per-method CSV traces, summary.txt,
                       and a gap-vs-time SVG
  sweep <config.toml>  step-count-vs-gap-level table plus a log-log SVG
  verify               built-in invariant suite, one pass/fail line each

Exit codes: 0 success, 1 bad config or failed verify, 2 run finished but a
method stopped with a non-completed status.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # stdlib from 3.11; use the backport before that
    import tomli as tomllib
from dataclasses import fields

import numpy as np

from . import experiments
from .errors import InvalidArgument
from .experiments import ExperimentSpec, paper_scale_spec


class ConfigError(Exception):
    pass


_TOP_KEYS = {"seed", "output_dir", "diagnostics", "gap_levels",
             "problem", "methods", "integrator"}
_PROBLEM_KEYS = {"kind", "dim", "n_particles", "eig_min", "eig_max", "b_scale",
                 "lse_terms", "lse_h", "epsilon", "n_data"}
_METHOD_KEYS = {"list", "a", "kalman_lambda", "stein_bandwidth", "bregman_r",
                "dilation_power", "t_start"}
_INTEGRATOR_KEYS = {"rtol", "atol", "t_end", "max_steps", "n_record"}


def _find_key_line(text: str, key: str) -> int:
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped.startswith(key) and stripped[len(key):].lstrip().startswith("="):
            return lineno
    return 0


def _reject_unknown(table: dict, allowed: set, section: str, text: str):
    for key in table:
        if key not in allowed:
            line = _find_key_line(text, key)
            where = f"line {line}" if line else "unknown line"
            raise ConfigError(f"{where}: unknown key {key!r} in {section}")


def load_config(path: str) -> tuple:
    """Parse a run config; returns (spec, output_dir, gap_levels)."""
    with open(path, "rb") as f:
        text = f.read().decode("utf-8", errors="replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc

    _reject_unknown(data, _TOP_KEYS, "top level", text)
    problem = data.get("problem", {})
    methods = data.get("methods", {})
    integ = data.get("integrator", {})
    _reject_unknown(problem, _PROBLEM_KEYS, "[problem]", text)
    _reject_unknown(methods, _METHOD_KEYS, "[methods]", text)
    _reject_unknown(integ, _INTEGRATOR_KEYS, "[integrator]", text)

    kwargs = {}
    if "kind" in problem:
        kwargs["problem"] = problem["kind"]
    for key in ("dim", "n_particles", "eig_min", "eig_max", "b_scale",
                "lse_terms", "lse_h", "epsilon", "n_data"):
        if key in problem:
            kwargs[key] = problem[key]
    if "list" in methods:
        kwargs["methods"] = tuple(methods["list"])
    for key in ("a", "kalman_lambda", "stein_bandwidth", "bregman_r",
                "dilation_power", "t_start"):
        if key in methods:
            kwargs[key] = methods[key]
    if "t_end" in integ:
        kwargs["horizon"] = integ["t_end"]
    for key in ("rtol", "atol", "max_steps", "n_record"):
        if key in integ:
            kwargs[key] = integ[key]
    if "seed" in data:
        kwargs["seed"] = data["seed"]
    if "diagnostics" in data:
        kwargs["diagnostics"] = tuple(data["diagnostics"])
    try:
        spec = ExperimentSpec(**kwargs)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc
    if "methods" in data and not spec.methods:
        raise ConfigError("method list is empty")
    return spec, data.get("output_dir", "out"), data.get("gap_levels")


# --- SVG emission -----------------------------------------------------------

_SVG_W, _SVG_H = 640, 480
_MARGIN = 60
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _svg_line_chart(series, x_label, y_label, log_x=False):
    """series: list of (name, xs, ys) with ys plotted on a log axis.
    Returns stable SVG text: fixed viewBox, one polyline per series."""
    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            if y > 0 and (not log_x or x > 0) and math.isfinite(x) and math.isfinite(y):
                pts.append((math.log10(x) if log_x else x, math.log10(y)))
    if not pts:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    else:
        x_lo = min(p[0] for p in pts)
        x_hi = max(p[0] for p in pts)
        y_lo = min(p[1] for p in pts)
        y_hi = max(p[1] for p in pts)
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_hi = y_lo + 1.0

    def sx(x):
        return _MARGIN + (x - x_lo) / (x_hi - x_lo) * (_SVG_W - 2 * _MARGIN)

    def sy(y):
        return _SVG_H - _MARGIN - (y - y_lo) / (y_hi - y_lo) * (_SVG_H - 2 * _MARGIN)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_SVG_W - 2 * _MARGIN}" '
        f'height="{_SVG_H - 2 * _MARGIN}" fill="none" stroke="black"/>',
        f'<text x="{_SVG_W // 2}" y="{_SVG_H - 15}" text-anchor="middle">{x_label}</text>',
        f'<text x="18" y="{_SVG_H // 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_SVG_H // 2})">{y_label}</text>',
    ]
    for idx, (name, xs, ys) in enumerate(series):
        coords = []
        for x, y in zip(xs, ys):
            if y > 0 and (not log_x or x > 0) and math.isfinite(x) and math.isfinite(y):
                px = sx(math.log10(x) if log_x else x)
                py = sy(math.log10(y))
                coords.append(f"{px:.2f},{py:.2f}")
        color = _COLORS[idx % len(_COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(coords)}"/>')
        out.append(
            f'<text x="{_SVG_W - _MARGIN + 5}" y="{_MARGIN + 15 * (idx + 1)}" '
            f'fill="{color}">{name}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _write_in(out_dir, name, content):
    path = os.path.abspath(os.path.join(out_dir, name))
    root = os.path.abspath(out_dir)
    if os.path.commonpath([path, root]) != root:
        raise ConfigError(f"artifact path {name!r} escapes the output directory")
    with open(path, "w") as f:
        f.write(content)
    return path


def cmd_run(args) -> int:
    try:
        spec, out_dir, _ = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.paper_scale:
        spec = paper_scale_spec(spec)
    os.makedirs(out_dir, exist_ok=True)
    traces = experiments.run_comparison(spec, out_dir=out_dir)
    series = [(m, traces[m].times, traces[m].gap) for m in spec.methods]
    _write_in(out_dir, "gap.svg", _svg_line_chart(series, "t", "optimality gap"))
    bad = [m for m, tr in traces.items() if tr.status != "completed"]
    for m in spec.methods:
        tr = traces[m]
        print(f"{m}: status={tr.status} final_gap={tr.gap[-1] if len(tr.gap) else math.nan:.6g}")
    return 2 if bad else 0


def cmd_sweep(args) -> int:
    try:
        spec, out_dir, gap_levels = load_config(args.config)
        if not gap_levels:
            raise ConfigError("sweep requires a nonempty gap_levels list")
        levels = [float(g) for g in gap_levels]
        if levels != sorted(levels, reverse=True) or len(set(levels)) != len(levels):
            line = _find_key_line(open(args.config).read(), "gap_levels")
            raise ConfigError(f"line {line}: gap_levels must be strictly decreasing")
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.paper_scale:
        spec = paper_scale_spec(spec)
    os.makedirs(out_dir, exist_ok=True)
    traces = experiments.run_comparison(spec, out_dir=out_dir)
    rows = experiments.sweep_steps_vs_tolerance(spec, levels, traces=traces)
    experiments.write_sweep_csv(rows, os.path.join(out_dir, "sweep.csv"))
    series = []
    for m in spec.methods:
        xs = [lvl for mm, lvl, st in rows if mm == m and math.isfinite(st)]
        ys = [st for mm, lvl, st in rows if mm == m and math.isfinite(st)]
        series.append((m, xs, ys))
    _write_in(out_dir, "sweep.svg",
              _svg_line_chart(series, "gap level", "total steps", log_x=True))
    for m, lvl, st in rows:
        print(f"{m} @ {lvl:g}: {'unreached' if math.isinf(st) else int(st)} steps")
    bad = [m for m, tr in traces.items() if tr.status != "completed"]
    return 2 if bad else 0


# --- verify suite -----------------------------------------------------------

def _verify_checks(blob_gradient_sign=+1.0):
    """Yields (name, callable) pairs; each callable returns True on pass.
    ``blob_gradient_sign`` exists for harness sensitivity tests: flipping it
    must make the finite-difference check fail."""
    from .ensemble import EmpiricalMeasure, PhaseEnsemble, init_gaussian
    from .flows import heavy_ball_drift, vaf_drift, wgf_drift
    from .functionals import BlobKL, QuadraticPotential, make_spd_matrix
    from .integrator import IntegratorConfig, integrate_flat
    from .schedules import nesterov_schedule
    from .transport import lyapunov_hb_convex, lyapunov_hb_energy, w2_squared

    def dirac_consistency():
        # one particle under the momentum flow follows the plain ODE
        F = QuadraticPotential(A=np.array([[2.0, 0.3], [0.3, 1.0]]), b=np.zeros(2))
        drift = heavy_ball_drift(F, 1, 2, a=0.5)
        y = np.array([1.0, -1.0, 0.2, 0.1])
        got = drift.rhs(0.0, y)
        x, v = y[:2], y[2:]
        want = np.concatenate([v, -0.5 * v - F.A @ x])
        return bool(np.allclose(got, want, atol=0, rtol=0))

    def pushforward_equivalence():
        F = QuadraticPotential(A=make_spd_matrix(2, 0.5, 2.0, 7), b=np.zeros(2))
        e0 = init_gaussian(4, 2, 11)
        a = 0.8
        cfg = IntegratorConfig(rtol=1e-9, atol=1e-9, t_start=0.0, t_end=10.0,
                               record_times=np.linspace(0, 10, 50).tolist())
        damped = heavy_ball_drift(F, 4, 2, a=a, form="damped")
        undamped = heavy_ball_drift(F, 4, 2, a=a, form="undamped")
        r1 = integrate_flat(damped.rhs, damped.pack(e0), cfg)
        r2 = integrate_flat(undamped.rhs, undamped.pack(e0), cfg)
        worst = max(
            np.max(np.abs(y1[:8] - y2[:8]))
            for y1, y2 in zip(r1.states, r2.states)
        )
        return worst < 1e-5

    def lyapunov_monotone():
        F = QuadraticPotential(A=make_spd_matrix(4, 0.2, 1.0, 3), b=np.ones(4))
        e0 = init_gaussian(16, 4, 5)
        a = 0.5
        drift = heavy_ball_drift(F, 16, 4, a=a)
        cfg = IntegratorConfig(rtol=1e-8, atol=1e-8, t_start=0.0, t_end=20.0,
                               record_times=np.linspace(0, 20, 100).tolist())
        rec = integrate_flat(drift.rhs, drift.pack(e0), cfg)
        vals = []
        for t, y in zip(rec.times, rec.states):
            e = drift.unpack(y, time=t)
            vals.append(lyapunov_hb_energy(e, a, F, 0.0).value)
        slack = 1e-7 * vals[0]
        return all(vals[i + 1] <= vals[i] + slack for i in range(len(vals) - 1))

    def fd_gradients():
        rng = np.random.default_rng(2)
        F = BlobKL(log_density=lambda x: 0.5 * np.sum(x * x, axis=1),
                   log_density_gradient=lambda x: np.array(x),
                   epsilon=1.0, dim=2)
        X = rng.standard_normal((8, 2))
        G = blob_gradient_sign * F.witness_gradient(EmpiricalMeasure(points=X))
        eta = 1e-5
        for i in range(8):
            for j in range(2):
                Xp, Xm = X.copy(), X.copy()
                Xp[i, j] += eta
                Xm[i, j] -= eta
                fd = (F.evaluate(Xp) - F.evaluate(Xm)) / (2 * eta)
                if abs(fd - G[i, j] / 8) > 1e-4 * max(1.0, abs(fd)):
                    return False
        return True

    def w2_oracle():
        import itertools
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(2, 6))
            mu = EmpiricalMeasure(points=rng.standard_normal((n, 2)))
            nu = EmpiricalMeasure(points=rng.standard_normal((n, 2)))
            got, _ = w2_squared(mu, nu)
            best = min(
                np.mean(np.sum((mu.points - nu.points[list(p)]) ** 2, axis=1))
                for p in itertools.permutations(range(n))
            )
            if abs(got - best) > 1e-12:
                return False
        return True

    yield "dirac-consistency", dirac_consistency
    yield "pushforward-equivalence", pushforward_equivalence
    yield "lyapunov-monotonicity", lyapunov_monotone
    yield "finite-difference-gradients", fd_gradients
    yield "w2-assignment-oracle", w2_oracle


def cmd_verify(args) -> int:
    sign = -1.0 if getattr(args, "inject_blob_sign_error", False) else +1.0
    ok = True
    for name, check in _verify_checks(blob_gradient_sign=sign):
        passed = check()
        ok = ok and passed
        print(f"{name}: {'pass' if passed else 'FAIL'}")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="measureflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="comparison run from a TOML config")
    p_run.add_argument("config")
    p_run.add_argument("--paper-scale", action="store_true",
                       help="use the full problem dimensions")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="steps-vs-gap-level sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--paper-scale", action="store_true")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the built-in invariant suite")
    p_verify.add_argument("--inject-blob-sign-error", action="store_true",
                          help=argparse.SUPPRESS)
    p_verify.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
