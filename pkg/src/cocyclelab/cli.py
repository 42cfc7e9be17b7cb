"""Command-line front end.

Exit codes: 0 completed with every check passing, 2 completed with a
meaningful negative verdict (obstruction, refusal, counterexample confirmed,
divergent holonomy, non-conformal periodic data), 1 operational error or a
failed numerical check.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from fractions import Fraction

import numpy as np

from . import base_dynamics as bd
from . import conformal_geometry as cg
from . import invariant_structures as inv
from . import spectral
from .cocycles import ShearRotationCocycle, build_shear_rotation, holder_estimate
from .config import EXPERIMENTS, PARAMS, build_base, build_cocycle, load_config
from .errors import CocycleLabError, ConfigError, ConvergenceError, RecoveryRefused
from .fields import field_from_dict

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2


def _fmt(v):
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


class Output:
    """Collects CSV tables and summary lines; writes them in one place."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.summary = []
        os.makedirs(out_dir, exist_ok=True)

    def table(self, name, header, rows):
        with open(os.path.join(self.out_dir, name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])

    def put(self, key, value):
        self.summary.append(f"{key}={_fmt(value)}")

    def write_summary(self):
        with open(os.path.join(self.out_dir, "summary.txt"), "w") as fh:
            fh.write("\n".join(self.summary) + "\n")


def _seed_point(cfg, f):
    p = cfg.param("point")
    return bd.dense_seed(f.k) if p is None else bd.canonical(np.array(p, dtype=float))


# ---------------------------------------------------------------------------
# experiments; each returns an exit code


def exp_periodic_scan(cfg, f, c, out, workers):
    scan = spectral.periodic_scan(c, f, cfg.param("max_period"), workers=workers, cap=cfg.param("cap"))
    rows, points = [], []
    for i, d in enumerate(scan.data):
        rows.append([i, d.orbit.period, np.sort(np.abs(d.eigenvalues))[::-1], d.K_p, d.norm_max,
                     d.diagonalizable, d.equal_moduli, d.separation])
        for p in d.orbit.orbit:
            points.append([i, d.orbit.period] + list(p))
    out.table("periodic_data.csv",
              ["orbit_id", "period", "eigenvalue_moduli", "K_p", "norm_max", "diagonalizable",
               "equal_moduli", "separation"], rows)
    out.table("periodic_points.csv", ["orbit_id", "period"] + [f"x{j + 1}" for j in range(f.k)], points)
    out.put("base_dynamics.periodic_points.orbits", len(scan.data))
    out.put("spectral.periodic_scan.sup_K_p", scan.sup_K)
    out.put("spectral.periodic_scan.sup_norm_max", scan.sup_norm)
    out.put("spectral.periodic_scan.checklist_pass", scan.checklist_pass)
    out.put("spectral.periodic_scan.indeterminate",
            sum(d.diagonalizable == "indeterminate" for d in scan.data))
    if scan.checklist_pass:
        out.put("cli.verdict", "periodic data conformal")
        return EXIT_OK
    out.put("cli.verdict", "periodic data not conformal")
    return EXIT_NEGATIVE


def exp_exponents(cfg, f, c, out, workers):
    x = _seed_point(cfg, f)
    ly = spectral.lyapunov_extremes(c, f, x, cfg.param("T"), stride=cfg.param("stride"))
    out.table("exponents.csv", ["n", "lambda_plus", "lambda_minus"], ly.convergence_trace)
    out.put("spectral.lyapunov_extremes.lambda_plus", ly.lambda_plus)
    out.put("spectral.lyapunov_extremes.lambda_minus", ly.lambda_minus)
    out.put("spectral.lyapunov_extremes.orbit_length", ly.orbit_length)
    ok = ly.lambda_plus >= ly.lambda_minus
    out.put("spectral.lyapunov_extremes.ordered", ok)
    return EXIT_OK if ok else EXIT_ERROR


def exp_distortion_growth(cfg, f, c, out, workers):
    rng = np.random.default_rng(cfg.seed)
    samples = np.vstack([bd.dense_seed(f.k)[None, :], rng.random((cfg.param("samples"), f.k))])
    fit = spectral.pinching_rate(c, f, samples, max(cfg.param("n_max"), 20))
    out.table("distortion_growth.csv", ["n", "sup_log_K"], fit.table.tolist())
    out.put("spectral.pinching_rate.gamma", fit.gamma)
    for eps, C in sorted(fit.c_eps.items()):
        out.put(f"spectral.pinching_rate.C_eps[{eps}]", C)
    return EXIT_OK


def _structure_rows(grid, values, radii):
    return [list(x) + cg.to_upper(v)[1:] + [r] for x, v, r in zip(grid, values, radii)]


def _structure_header(k, d):
    iu = np.triu_indices(d)
    return [f"x{j + 1}" for j in range(k)] + [f"c{i}{j}" for i, j in zip(*iu)] + ["radius"]


def _recover(cfg, f, c, out):
    report = inv.recover_invariant_structure(
        c, f, resolution=cfg.param("resolution"), depth=cfg.param("depth"), tol=cfg.param("tol"),
        K_bound=cfg.param("K_bound"), probe_horizon=cfg.param("probe_horizon"),
        residual_samples=cfg.param("residual_samples"), seed=cfg.seed)
    sf = report.field
    out.table("structure_field.csv", _structure_header(f.k, c.d),
              _structure_rows(sf.grid, sf.values, report.radii))
    key = "invariant_structures.recover_invariant_structure"
    out.put(f"{key}.depth", sf.depth)
    out.put(f"{key}.resolution", sf.resolution)
    out.put(f"{key}.invariance_residual", report.invariance_residual)
    out.put(f"{key}.invariance_residual_samples", report.residual_samples)
    out.put(f"{key}.invariance_residual_interpolated", report.invariance_residual_interpolated)
    out.put(f"{key}.center_movement_half_depth", report.center_movement)
    out.put(f"{key}.holder_beta", report.holder_fit[0])
    out.put(f"{key}.holder_const", report.holder_fit[1])
    out.put(f"{key}.radius_max", report.radius_stats["max"])
    out.put(f"{key}.covering_radius", sf.covering_radius)
    ok = report.invariance_residual <= cfg.param("residual_tol")
    if hasattr(c, "invariant_structure"):
        err = float(np.max(cg.dist(sf.values, c.invariant_structure(sf.grid))))
        out.put(f"{key}.distance_to_known_structure", err)
        ok = ok and err <= cfg.param("distance_tol")
    out.put(f"{key}.passed", ok)
    return report, ok


def _refusal(out, exc):
    out.put("invariant_structures.recover_invariant_structure.refused", True)
    out.put("invariant_structures.recover_invariant_structure.witness_x", list(exc.point))
    out.put("invariant_structures.recover_invariant_structure.witness_n", exc.n)
    out.put("invariant_structures.recover_invariant_structure.witness_K", exc.distortion)
    out.put("cli.verdict", "refused: orbit structure sets unbounded")
    return EXIT_NEGATIVE


def exp_recover(cfg, f, c, out, workers):
    try:
        _, ok = _recover(cfg, f, c, out)
    except RecoveryRefused as exc:
        return _refusal(out, exc)
    out.put("cli.verdict", "recovered" if ok else "recovery residual above tolerance")
    return EXIT_OK if ok else EXIT_ERROR


def exp_renormalize(cfg, f, c, out, workers):
    try:
        report, ok = _recover(cfg, f, c, out)
    except RecoveryRefused as exc:
        return _refusal(out, exc)
    rn = inv.renormalize_to_isometry(report, T=cfg.param("livsic_T"), max_period=cfg.param("max_period"),
                                     obstruction_tol=cfg.param("obstruction_tol"),
                                     extension=cfg.param("extension"))
    key = "invariant_structures.renormalize_to_isometry"
    out.put(f"{key}.conformality_defect", rn.conformality_defect)
    if rn.obstruction is not None:
        ob = rn.obstruction
        out.put(f"{key}.obstruction_period", ob.orbit.period)
        out.put(f"{key}.obstruction_point", list(ob.orbit.point))
        out.put(f"{key}.obstruction_product", ob.product)
        out.put("cli.verdict", "conformal but not isometric (periodic obstruction)")
        return EXIT_NEGATIVE
    sf = report.field
    out.table("isometric_metric.csv", _structure_header(f.k, c.d)[:-1] + ["phi"],
              [list(x) + cg.to_upper(g)[1:] + [p] for x, g, p in zip(sf.grid, rn.metric, rn.phi)])
    out.put(f"{key}.livsic_residual", rn.livsic.residual)
    out.put(f"{key}.isometry_residual", rn.isometry_residual)
    passed = ok and rn.isometry_residual <= cfg.param("isometry_tol")
    out.put(f"{key}.passed", passed)
    out.put("cli.verdict", "isometric metric found" if passed else "isometry residual above tolerance")
    return EXIT_OK if passed else EXIT_ERROR


def exp_counterexample(cfg, f, c, out, workers):
    if not isinstance(c, ShearRotationCocycle):
        raise ConfigError("cocycle.kind", "the counterexample experiment needs kind: shear_rotation")
    key = "cocycles.build_shear_rotation"
    out.put(f"{key}.eps", c.eps)
    out.put(f"{key}.seg_len", len(c.segment))
    out.put(f"{key}.max_period", c.max_period)
    out.put(f"{key}.margin", c.margin)
    out.put(f"{key}.corrected_orbits", len(c.corrected))
    scan = spectral.periodic_scan(c, f, c.max_period, workers=workers)
    rows = [[i, d.orbit.period, np.sort(np.abs(d.eigenvalues))[::-1], d.K_p, d.diagonalizable,
             d.unit_moduli, d.separation] for i, d in enumerate(scan.data)]
    out.table("periodic_data.csv", ["orbit_id", "period", "eigenvalue_moduli", "K_p",
                                    "diagonalizable", "unit_moduli", "separation"], rows)
    periodic_ok = all(d.diagonalizable == "yes" and d.unit_moduli for d in scan.data)
    out.put("spectral.periodic_scan.orbits", len(scan.data))
    out.put("spectral.periodic_scan.all_diagonalizable_unit_moduli", periodic_ok)
    z = c.segment[0]
    n_top = min(cfg.param("n_max") if "n_max" in cfg.params else 150, len(c.segment) - 1)
    prof = spectral.distortion_profile(c, f, z, n_top)[:, 0]
    growth = []
    worst = 0.0
    for n in range(n_top + 1):
        s = n * c.eps
        formula = ((s + math.sqrt(s * s + 4)) / 2) ** 2
        K = math.exp(prof[n])
        err = abs(K - formula) / formula
        worst = max(worst, err)
        growth.append([n, K, formula, err])
    out.table("growth.csv", ["n", "K", "shear_formula", "relative_error"], growth)
    threshold = cfg.param("growth_threshold")
    crossing = next((n for n, K, _, _ in growth if K > threshold), None)
    out.put("spectral.qc_distortion.max_relative_error_vs_shear", worst)
    out.put("spectral.qc_distortion.first_n_above_threshold", crossing if crossing is not None else "none")
    out.put("spectral.qc_distortion.K_at_last_n", growth[-1][1])
    growth_ok = worst <= cfg.param("growth_tol") and crossing is not None
    confirmed = periodic_ok and growth_ok
    out.put("cli.counterexample_confirmed", confirmed)
    if confirmed:
        out.put("cli.verdict", "counterexample confirmed: conformal periodic data, unbounded distortion")
        return EXIT_NEGATIVE
    out.put("cli.verdict", "counterexample not confirmed")
    return EXIT_ERROR


def exp_livsic(cfg, f, c, out, workers):
    spec = cfg.param("a")
    if spec is None or spec == "stretch":
        a = inv.conformal_stretch(c)
    else:
        if isinstance(spec, dict) and spec.get("type") == "coboundary":
            from .cocycles import CoboundaryField
            a = CoboundaryField(field_from_dict(spec["phi"]), f)
        else:
            a = field_from_dict(spec)
    sol = inv.livsic_solve(a, f, T=cfg.param("livsic_T"), resolution=cfg.param("resolution"),
                           max_period=cfg.param("max_period"),
                           obstruction_tol=cfg.param("obstruction_tol"),
                           extension=cfg.param("extension"))
    key = "invariant_structures.livsic_solve"
    if sol.obstruction is not None:
        ob = sol.obstruction
        out.put(f"{key}.obstruction_period", ob.orbit.period)
        out.put(f"{key}.obstruction_point", list(ob.orbit.point))
        out.put(f"{key}.obstruction_product", ob.product)
        out.put("cli.verdict", "not a coboundary (periodic obstruction)")
        return EXIT_NEGATIVE
    out.table("livsic.csv", [f"x{j + 1}" for j in range(f.k)] + ["phi"],
              [list(x) + [p] for x, p in zip(sol.grid, sol.phi)])
    out.put(f"{key}.orbit_length", sol.orbit_length)
    out.put(f"{key}.coverage", sol.coverage)
    out.put(f"{key}.residual", sol.residual)
    ok = sol.residual <= cfg.param("residual_tol")
    out.put(f"{key}.passed", ok)
    out.put("cli.verdict", "coboundary solved" if ok else "residual above tolerance")
    return EXIT_OK if ok else EXIT_ERROR


def exp_holonomy(cfg, f, c, out, workers):
    x = _seed_point(cfg, f)
    side = cfg.param("side")
    n_max = cfg.param("n_max") if "n_max" in cfg.params else 200
    rows = []
    key = "invariant_structures.holonomy_limit"
    try:
        for delta in cfg.param("deltas"):
            h = inv.holonomy_limit(c, f, x, delta=float(delta), n_max=n_max, side=side)
            rows.append([delta, h.steps, h.distance_to_identity, h.distance_to_identity / delta,
                         inv.decay_rate(h.increments)])
    except ConvergenceError as exc:
        out.put(f"{key}.diverged", True)
        out.put(f"{key}.last_increment", exc.gap)
        out.put("cli.verdict", "holonomy did not converge")
        return EXIT_NEGATIVE
    out.table("holonomy.csv", ["delta", "steps", "norm_H_minus_I", "ratio", "decay_rate"], rows)
    d = np.array([r[0] for r in rows], dtype=float)
    e = np.array([r[2] for r in rows], dtype=float)
    if len(rows) >= 2 and np.all(e > 0):
        slope = float(np.polyfit(np.log(d), np.log(e), 1)[0])
    else:
        slope = math.nan
    C = max(r[3] for r in rows) if rows else math.nan
    out.put(f"{key}.fitted_exponent", slope)
    out.put(f"{key}.constant", C)
    out.put(f"{key}.side", side)
    out.put("cli.verdict", "holonomy converged")
    return EXIT_OK


RUNNERS = {
    "periodic-scan": exp_periodic_scan,
    "exponents": exp_exponents,
    "distortion-growth": exp_distortion_growth,
    "recover": exp_recover,
    "renormalize": exp_renormalize,
    "counterexample": exp_counterexample,
    "livsic": exp_livsic,
    "holonomy": exp_holonomy,
}


def run(config_path, out_dir, experiment=None, workers=1, seed=None):
    cfg = load_config(config_path)
    if experiment is not None:
        cfg.experiment = experiment
    if seed is not None:
        cfg.seed = seed
    f = build_base(cfg)
    c = build_cocycle(cfg, f)
    out = Output(out_dir)
    out.put("cli.experiment", cfg.experiment)
    out.put("cli.seed", cfg.seed)
    out.put("base_dynamics.ToralAutomorphism.kappa", f.kappa)
    code = RUNNERS[cfg.experiment](cfg, f, c, out, workers)
    out.put("cli.exit_code", code)
    out.write_summary()
    return code


def validate(config_path, seed=None):
    """Check a config without running it; returns (exit code, report lines)."""
    cfg = load_config(config_path)
    seed = cfg.seed if seed is None else seed
    f = build_base(cfg)
    c = build_cocycle(cfg, f)
    lines = [
        "cli.validate.config=ok",
        f"base_dynamics.ToralAutomorphism.kappa={_fmt(f.kappa)}",
        f"base_dynamics.ToralAutomorphism.anosov_constant={_fmt(f.anosov_constant)}",
        f"cocycles.kind={c.kind}",
        f"cocycles.d={c.d}",
    ]
    fit = holder_estimate(c, 200, rng=seed, k=f.k)
    lines.append(f"cocycles.holder_estimate.beta={_fmt(fit.beta)}")
    lines.append(f"cocycles.holder_estimate.const={_fmt(fit.const)}")
    P = cfg.param("max_period")
    total = sum(bd.count_fixed_points(f, n) for n in range(1, P + 1))
    cap = cfg.param("cap")
    lines.append(f"base_dynamics.periodic_points.total_up_to_max_period={total}")
    lines.append(f"base_dynamics.periodic_points.cap_ok={_fmt(total <= cap * P)}")
    res, depth = cfg.param("resolution"), cfg.param("depth")
    cost = {
        "periodic-scan": total * P,
        "exponents": cfg.param("T"),
        "distortion-growth": 2 * cfg.param("samples") * max(cfg.param("n_max"), 20),
        "recover": res ** f.k * (4 * depth + 2 * cfg.param("probe_horizon")),
        "renormalize": res ** f.k * (6 * depth + 2 * cfg.param("probe_horizon")) + cfg.param("livsic_T"),
        "counterexample": total * P + 150,
        "livsic": cfg.param("livsic_T") + res ** f.k * 20,
        "holonomy": len(cfg.param("deltas")) * 200,
    }[cfg.experiment]
    lines.append(f"cli.validate.estimated_matrix_products={cost}")
    return EXIT_OK, lines


def build_parser():
    parser = argparse.ArgumentParser(prog="cocyclelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the configured experiment")
    p_run.add_argument("experiment", nargs="?", choices=EXPERIMENTS,
                       help="override the experiment named in the config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out-dir", default="out")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None)
    p_val = sub.add_parser("validate", help="check a config and estimate its cost")
    p_val.add_argument("--config", required=True)
    p_val.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            if args.workers < 1:
                raise ConfigError("--workers", "must be at least 1")
            return run(args.config, args.out_dir, args.experiment, args.workers, args.seed)
        code, lines = validate(args.config, args.seed)
        print("\n".join(lines))
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (CocycleLabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
