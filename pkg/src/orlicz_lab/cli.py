"""Command-line experiment runner.

``orlicz-lab <stage> --config <path> [--out <dir>] [--seed <u64>]`` runs
one stage (or ``all``) and writes ``summary.json`` plus one CSV family
per stage.  ``orlicz-lab report <dir> [--baseline <json>]`` renders the
tables.  Exit codes: 0 pass, 1 assertion failure, 2 config error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, experiments, nfunc
from .aharmonic import SolveError
from .config import STAGES, ConfigError, load_config, validate
from .corpus import kink_field, perturbed_affine
from .excess import ExcessError, almost_harmonicity_defect, decay_curve, regular_scan, smallness_check
from .fespace import Ball, MeshError, build_mesh, export_field_csv
from .liptrunc import TruncationError
from .minimize import (DirichletProblem, IntegrandError, SolverError, boundary_field, make_perturbed,
                       solve)
from .rng import SplitMix64

__all__ = ["main", "run", "StageOutcome", "EXIT_OK", "EXIT_ASSERT", "EXIT_CONFIG", "EXIT_SOLVER"]

log = logging.getLogger("orlicz_lab")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
THREADS_ENV = "ORLICZ_LAB_THREADS"


def _clean(x):
    """JSON-safe scalars: numpy to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


@dataclass
class StageOutcome:
    stage: str
    checks: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    status: str = "pass"
    message: str = ""

    def check(self, family, name, value, passed, bound):
        self.checks.append({"family": family, "name": name, "value": value,
                            "bound": bound, "passed": bool(passed)})

    @property
    def failed(self):
        return [c for c in self.checks if not c["passed"]]

    @property
    def exit_code(self):
        return {"pass": EXIT_OK, "fail": EXIT_ASSERT, "config-error": EXIT_CONFIG,
                "solver-failure": EXIT_SOLVER, "error": EXIT_ASSERT}[self.status]

    def as_dict(self):
        return _clean({"status": self.status, "exit_code": self.exit_code,
                       "message": self.message, "checks": self.checks,
                       "constants": self.constants, "artifacts": self.artifacts})


class _Writer:
    """Single writer for every artifact of a run."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)

    def csv(self, outcome, name, header, rows):
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])
        outcome.artifacts.append(name)
        return path

    def field(self, outcome, name, u):
        export_field_csv(u, self.out / name)
        outcome.artifacts.append(name)

    def json(self, name, payload):
        path = self.out / name
        path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")
        return path


def stage_seeds(seed):
    """One child seed per stage, drawn from the single root generator."""
    draws = SplitMix64(seed).next_u64(len(STAGES))
    return {name: int(s) for name, s in zip(STAGES, draws)}


# ---------------------------------------------------------------- helpers

def _phi(kind, p):
    return nfunc.make_catalog("quadratic") if kind == "quadratic" or (
        kind == "power" and p == 2) else nfunc.make_catalog(kind, p)


def _integrand(cfg):
    return make_perturbed(_phi("power", cfg.integrand_p), cfg.eps)


def _data_field(cfg, mesh, seed):
    tag = cfg.boundary_tag
    if tag == "perturbed-affine":
        Q = np.reshape(cfg.coeffs, (2, 2)) if len(cfg.coeffs) == 4 else None
        return perturbed_affine(mesh, Q, cfg.amp, cfg.profile)
    if tag == "kink":
        return kink_field(mesh, seed=seed)
    return boundary_field(mesh, tag, cfg.coeffs)


def _minimizer(cfg, out, writer, seed, tag):
    mesh = build_mesh(cfg.L, cfg.h)
    f = _integrand(cfg)
    problem = DirichletProblem(f, mesh, _data_field(cfg, mesh, seed))
    try:
        res = solve(problem)
    except SolverError as exc:
        if exc.result is not None:
            writer.csv(out, f"{tag}_history.csv", ["iteration", "energy", "residual"],
                       exc.result.history)
        raise
    return f, res


# ---------------------------------------------------------------- stages

def stage_nfunc(cfg, seed, writer):
    out = StageOutcome("nfunc-check")
    if cfg.phi_suite == "acceptance":
        phis = {name: experiments.catalog_phi(name) for name in experiments.ACCEPTANCE_PHIS}
    else:
        phi = _phi(cfg.phi_kind, cfg.phi_p)
        phis = {phi.label: phi}
    s_young, s_ham1, s_ham2 = (int(v) for v in SplitMix64(seed).next_u64(3))
    nrows, hrows, srows = [], [], []
    for name, phi in phis.items():
        m = experiments.nfunc_suite(phi, cfg.samples, s_young)
        out.check("young", f"{name} young_min", m.young_min, m.young_min >= -1e-9, ">= -1e-9")
        out.check("young", f"{name} young_equality_max", m.young_equality_max,
                  m.young_equality_max <= 1e-6, "<= 1e-6")
        out.check("conjugate", f"{name} biconjugation_max", m.biconjugation_max,
                  m.biconjugation_max <= 1e-6, "<= 1e-6")
        out.check("conjugate", f"{name} pre_inequalities", float(m.pre_inequalities),
                  m.pre_inequalities, "== 1")
        lo, hi = m.bracket
        ok = lo <= m.conj_ratio_lo and m.conj_ratio_hi <= hi
        out.check("conjugate", f"{name} conj_ratio_lo", m.conj_ratio_lo, ok, f">= {lo:.4g}")
        out.check("conjugate", f"{name} conj_ratio_hi", m.conj_ratio_hi, ok, f"<= {hi:.4g}")
        ch = m.characteristics
        for key, val in (("young_min", m.young_min), ("young_equality_max", m.young_equality_max),
                         ("biconjugation_max", m.biconjugation_max),
                         ("conj_ratio_lo", m.conj_ratio_lo), ("conj_ratio_hi", m.conj_ratio_hi),
                         ("ratio_lo", ch.ratio_lo), ("ratio_hi", ch.ratio_hi),
                         ("delta2_phi", ch.delta2_phi), ("delta2_conj", ch.delta2_conj)):
            nrows.append([name, key, float(val)])
        out.constants[name] = {"ratio_lo": ch.ratio_lo, "ratio_hi": ch.ratio_hi,
                               "delta2_phi": ch.delta2_phi, "delta2_conj": ch.delta2_conj}

        a = experiments.hammer_suite(phi, cfg.pairs, s_ham1)
        b = experiments.hammer_suite(phi, cfg.pairs, s_ham2)
        for k in range(3):
            rname = f"r{k + 1}"
            inside = 1e-2 <= a.lo[k] and a.hi[k] <= 1e2
            out.check("hammer", f"{name} {rname} min", a.lo[k], inside, ">= 0.01")
            out.check("hammer", f"{name} {rname} max", a.hi[k], inside, "<= 100")
            stab = max(a.spread[k] / b.spread[k], b.spread[k] / a.spread[k])
            out.check("hammer", f"{name} {rname} spread", a.spread[k], stab <= 1.25,
                      f"reseed ratio {stab:.3f} <= 1.25")
            hrows.append([name, rname, float(a.lo[k]), float(a.hi[k]), float(a.spread[k]),
                          float(b.spread[k]), float(stab)])

        sh = experiments.shift_suite(phi)
        ok = all(math.isfinite(v) for v in (sh.c_large, sh.c_small, sh.c_scaling))
        out.check("shift", f"{name} c", sh.c, ok, "finite")
        out.check("shift", f"{name} c_scaling", sh.c_scaling, sh.c_scaling <= sh.c,
                  f"<= c = {sh.c:.4g}")
        srows.append([name, float(sh.c_large), float(sh.c_small), float(sh.c_scaling)])
    writer.csv(out, "nfunc.csv", ["phi", "quantity", "value"], nrows)
    writer.csv(out, "hammer.csv", ["phi", "ratio", "min", "max", "spread", "spread_reseed",
                                   "reseed_ratio"], hrows)
    writer.csv(out, "shift.csv", ["phi", "c_large", "c_small", "c_scaling"], srows)
    return out


def stage_minimize(cfg, seed, writer):
    out = StageOutcome("minimize")
    f, res = _minimizer(cfg, out, writer, seed, "minimize")
    writer.csv(out, "minimize.csv", ["iteration", "energy", "residual"], res.history)
    writer.field(out, "solution.csv", res.u)
    energies = [e for _, e, _ in res.history]
    out.check("solver", "residual", res.residual, res.converged, "<= 1e-9")
    out.check("solver", "energy_decrease", energies[-1] - energies[0],
              energies[-1] <= energies[0] * (1 + 1e-12), "<= 0")
    out.constants.update(iterations=res.iterations, energy=res.energy, K=f.K, beta=f.beta)
    return out


def stage_excess_scan(cfg, seed, writer):
    out = StageOutcome("excess-scan")
    if cfg.boundary_tag == "kink":
        mesh = build_mesh(cfg.L, cfg.h)
        u = kink_field(mesh, seed=seed)
        phi = nfunc.make_catalog("quadratic")
    else:
        f, res = _minimizer(cfg, out, writer, seed, "excess_scan")
        u, phi = res.u, f.phi
    delta = cfg.delta[0]
    pts = regular_scan(u, cfg.grid_step, cfg.scan_radii, phi, delta)
    writer.csv(out, "scan.csv", ["x", "y", "proxy", "margin"],
               [[p.x, p.y, p.proxy, p.margin] for p in pts])
    proxy = np.array([p.proxy for p in pts])
    out.check("scan", "proxy_finite", float(np.isfinite(proxy).all()),
              np.isfinite(proxy).all(), "== 1")
    out.constants.update(points=len(pts), regular_fraction=float(
        np.mean([p.margin <= delta for p in pts])), proxy_median=float(np.median(proxy)))
    if cfg.boundary_tag == "kink":
        r = experiments.classify_kink(pts, 0.03, cfg.scan_radii, u.mesh.h)
        out.check("scan", "kink_min_over_median", r.kink_min / r.smooth_median,
                  r.kink_min > 10 * r.smooth_median, "> 10")
        out.check("scan", "smooth_max_over_median", r.smooth_max / r.smooth_median,
                  r.smooth_max < 10 * r.smooth_median, "< 10")
    return out


def stage_decay(cfg, seed, writer):
    out = StageOutcome("decay")
    f, res = _minimizer(cfg, out, writer, seed, "decay")
    u = res.u
    base = Ball(tuple(cfg.center), cfg.radii[0] / 2)
    for d in cfg.delta:
        sm = smallness_check(u, base, d, f.phi)
        out.check("decay", f"smallness delta={d:g}", sm.margin, sm.holds, f"<= {d:g}")
    defect = almost_harmonicity_defect(u, base, f, cfg.delta[0], seed=seed)
    out.check("decay", "defect_eps", defect.eps, defect.eps <= cfg.max_defect,
              f"<= {cfg.max_defect:g}")
    curve = decay_curve(u, tuple(cfg.center), cfg.radii, cfg.beta, f.phi)
    thr = cfg.slope_threshold
    out.check("decay", "fitted_slope", curve.fitted_slope,
              not curve.flagged and curve.fitted_slope >= thr, f">= {thr:g}")
    writer.csv(out, "decay.csv", ["radius", "excess", "fitted_slope"],
               [[float(r), float(v), curve.fitted_slope] for r, v in zip(curve.radii, curve.values)])
    out.constants.update(tau_ratios={f"{t:g}": v for t, v in curve.tau_ratios.items()},
                         dropped_radii=list(curve.dropped), target_slope=2 * cfg.beta)
    return out


def stage_truncate(cfg, seed, writer):
    out = StageOutcome("truncate-demo")
    gamma = None if cfg.gamma == "auto" else cfg.gamma
    rows = experiments.truncation_suite(cfg.h, cfg.m0, gamma, cfg.psi_p, cfg.L)
    table = []
    for r in rows:
        tag = f"{r.case} {r.psi} m0={r.m0}"
        out.check("truncation", f"{tag} e1", r.e1, r.e1 <= 8.0, "<= 8")
        out.check("truncation", f"{tag} e2", r.e2, r.e2 <= r.pigeonhole_sum * (1 + 1e-12),
                  "<= pigeonhole_sum")
        out.check("truncation", f"{tag} pigeonhole_sum", r.pigeonhole_sum,
                  r.pigeonhole_sum <= cfg.pigeonhole_cap, f"<= {cfg.pigeonhole_cap:g}")
        out.check("truncation", f"{tag} e3", r.e3, r.e3 <= 10.0, "<= 10")
        out.check("truncation", f"{tag} idempotent", float(r.idempotent), r.idempotent, "== 1")
        table.append([r.case, r.psi, r.m0, r.lam, r.e1, r.e2, r.e3, r.pigeonhole_sum,
                      r.bad_triangles, int(r.idempotent)])
    writer.csv(out, "truncation.csv", ["case", "psi", "m0", "lambda", "e1", "e2", "e3",
                                       "pigeonhole_sum", "bad_triangles", "idempotent"], table)
    return out


def stage_aharmonic(cfg, seed, writer):
    out = StageOutcome("aharmonic-check")
    errors, factors = experiments.solver_convergence(cfg.refine, cfg.L)
    rows = [[h, e, (factors[k - 1] if k else float("nan"))]
            for k, (h, e) in enumerate(zip(cfg.refine, errors))]
    writer.csv(out, "aharmonic.csv", ["h", "grad_error", "factor"], rows)
    for h, fac in zip(cfg.refine[1:], factors):
        out.check("aharmonic", f"factor h={h:.4g}", fac, 1.6 <= fac <= 2.4, "in [1.6, 2.4]")
    for name, A in experiments.probe_tensors().items():
        out.check("aharmonic", f"kappa {name}", A.kappa, A.kappa > 0, "> 0")
    probes = experiments.decay_probe_suite(h=cfg.probe_h, seed=seed)
    taus = (0.5, 0.25, 0.125)
    prow = []
    for name, arr in probes.items():
        for k, row in enumerate(arr):
            spread = float(row.max() / row.min())
            out.check("aharmonic", f"probe {name} field {k}", spread, spread <= 2.0, "<= 2")
            prow.extend([name, k, t, float(v)] for t, v in zip(taus, row))
    writer.csv(out, "probe.csv", ["tensor", "field", "tau", "ratio"], prow)
    return out


STAGE_FUNCS = {
    "nfunc-check": stage_nfunc,
    "minimize": stage_minimize,
    "excess-scan": stage_excess_scan,
    "decay": stage_decay,
    "truncate-demo": stage_truncate,
    "aharmonic-check": stage_aharmonic,
}


def _run_stage(name, cfg, seed, writer):
    try:
        out = STAGE_FUNCS[name](cfg, seed, writer)
        if out.failed:
            out.status = "fail"
            out.message = f"{len(out.failed)} check(s) failed"
    except (SolverError, SolveError) as exc:
        out = StageOutcome(name, status="solver-failure", message=str(exc))
    except (ExcessError, MeshError, IntegrandError, nfunc.NFunctionError) as exc:
        out = StageOutcome(name, status="config-error", message=str(exc))
    except TruncationError as exc:
        out = StageOutcome(name, status="fail", message=str(exc))
    except Exception as exc:  # noqa: BLE001 - recorded in the failure manifest
        log.exception("stage %s crashed", name)
        out = StageOutcome(name, status="error", message=f"{type(exc).__name__}: {exc}")
    return out


def _prior_stages(path, summary):
    """Stages kept from an earlier run into the same directory with the same config."""
    try:
        old = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return {}
    same = all(old.get(k) == summary[k] for k in ("tool", "version", "seed", "config"))
    return dict(old.get("stages", {})) if same else {}


def run(cfg, stage="all"):
    """Run ``stage`` (or every stage) and return ``(exit_code, summary)``."""
    writer = _Writer(cfg.out)
    names = STAGES if stage == "all" else (stage,)
    seeds = stage_seeds(cfg.seed)
    summary = {"tool": "orlicz-lab", "version": __version__, "stage": stage, "seed": cfg.seed,
               "config": _clean(cfg.as_dict()), "stages": {}}
    prior = _prior_stages(writer.out / "summary.json", summary)
    summary["stages"].update(prior)
    failures = []
    code = EXIT_OK
    for name in names:
        t0 = time.perf_counter()
        out = _run_stage(name, cfg, seeds[name], writer)
        log.info("%s: %s in %.1fs", name, out.status, time.perf_counter() - t0)
        summary["stages"][name] = out.as_dict()
        if out.status != "pass":
            failures.append({"stage": name, "status": out.status, "message": out.message,
                             "failed_checks": out.failed})
        code = max(code, out.exit_code)
        # rewritten after every stage so partial runs keep their results
        summary["exit_code"] = max([code] + [st["exit_code"] for k, st in prior.items()
                                             if k not in names])
        writer.json("summary.json", summary)
    if failures:
        writer.json("failures.json", {"exit_code": code, "failures": failures})
    return code, summary


def _threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {raw!r}")
    return n


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="orlicz-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log stage timings")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "all"):
        p = sub.add_parser(name, parents=[common],
                           help=f"run the {name} stage" if name != "all" else "run every stage")
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out", help="output directory (overrides run.out)")
        p.add_argument("--seed", type=_u64, help="root seed (overrides run.seed)")
    rp = sub.add_parser("report", parents=[common], help="summarize a run directory")
    rp.add_argument("run_dir")
    rp.add_argument("--baseline", help="summary.json of a reference run")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "report":
        from .report import report_main
        return report_main(args.run_dir, args.baseline)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        validate(cfg)
        threads = _threads()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with threadpool_limits(limits=threads):
        code, summary = run(cfg, args.command)
    for name, st in summary["stages"].items():
        line = f"{name}: {st['status']}"
        if st["message"]:
            line += f" ({st['message']})"
        print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
