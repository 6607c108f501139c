"""Command-line front end: the convolution solver plus the experiment harness.

Exit codes: 0 success, 1 usage or config parse error, 2 invariant violation,
3 well-behavedness refusal, 4 solver failure.  The JSON summary goes to
stdout; CSV rows go to --out (or the config's output_path).
"""

from __future__ import annotations

import argparse
import json
import re
import sys

from freesub import freeconv, measures, mclab, rmt

DENSITY_COLUMNS = ["E", "rho", "im_s_alpha", "im_s_beta", "k_re", "k_im",
                   "converged", "iterations", "residual"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # values like "-3:3:121" or "-0.5:0.5" are data, not flags
        self._negative_number_matcher = re.compile(r"^-\d")

    def error(self, message):
        raise UsageError(message)


def parse_measure_literal(text: str) -> measures.SpectralMeasure:
    """Inline form of the JSON measure builders:

    point_mass:C | semicircle:VAR[,N] | two_point:A,B[,P] | atoms:L@W,L@W,...
    """
    kind, _, params = text.partition(":")
    try:
        if kind == "point_mass":
            return measures.point_mass(float(params))
        if kind == "semicircle":
            parts = params.split(",")
            n = int(parts[1]) if len(parts) > 1 else 10_000
            return measures.semicircle(float(parts[0]), n)
        if kind == "two_point":
            parts = [float(p) for p in params.split(",")]
            p = parts[2] if len(parts) > 2 else 0.5
            return measures.two_point(parts[0], parts[1], p)
        if kind == "atoms":
            locs, wts = [], []
            for item in params.split(","):
                loc, _, w = item.partition("@")
                locs.append(float(loc))
                wts.append(float(w) if w else 1.0)
            return measures.make_atoms(locs, wts)
    except UsageError:
        raise
    except Exception as exc:
        raise UsageError(f"bad measure literal {text!r}: {exc}") from exc
    raise UsageError(f"unknown measure kind in {text!r}")


def _parse_grid(text: str):
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}, expected LO:HI:COUNT") from exc
    if count < 1:
        raise UsageError("grid needs at least one point")
    if count == 1:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + k * step for k in range(count)]


def _parse_interval(text: str):
    try:
        lo, hi = (float(p) for p in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"bad interval {text!r}, expected LO:HI") from exc
    return lo, hi


def _density_rows(points):
    rows = []
    for p in points:
        d, s = p.diagnostics, p.solution
        rows.append({
            "E": p.e, "rho": p.rho,
            "im_s_alpha": d.im_s_alpha_limit if d else float("nan"),
            "im_s_beta": d.im_s_beta_limit if d else float("nan"),
            "k_re": d.k_value.real if d else float("nan"),
            "k_im": d.k_value.imag if d else float("nan"),
            "converged": s.converged if s else False,
            "iterations": s.iterations if s else -1,
            "residual": s.residual_norm if s else float("nan"),
        })
    return rows


def cmd_convolve(args) -> dict:
    mu_a = parse_measure_literal(args.a)
    mu_b = parse_measure_literal(args.b)
    grid = _parse_grid(args.grid)
    points = freeconv.density(mu_a, mu_b, grid, args.eta_floor)
    rows = _density_rows(points)
    if args.out:
        mclab.write_csv(rows, args.out)
    failures = [p.error for p in points if p.error]
    return {"command": "convolve", "n_points": len(rows),
            "n_failed": len(failures), "failures": failures[:5],
            "out": args.out}


def cmd_diagnose(args) -> dict:
    mu_a = parse_measure_literal(args.a)
    mu_b = parse_measure_literal(args.b)
    lo, hi = _parse_interval(args.interval)
    report = freeconv.is_well_behaved(mu_a, mu_b, (lo, hi), args.probes)
    points = []
    for e, diag in report.points:
        if diag is None:
            points.append({"E": e, "error": "solver failure"})
        else:
            points.append({"E": e, "k_re": diag.k_value.real,
                           "k_im": diag.k_value.imag,
                           "im_s_alpha": diag.im_s_alpha_limit,
                           "im_s_beta": diag.im_s_beta_limit,
                           "well_behaved": diag.well_behaved})
    out = {"command": "diagnose", "interval": [lo, hi],
           "all_pass": report.all_pass, "points": points}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2)
    return out


def _experiment_config(args) -> mclab.ExperimentConfig:
    if args.config:
        cfg = mclab.ExperimentConfig.from_json_file(args.config)
    else:
        cfg = mclab.ExperimentConfig()
    cfg.experiment = args.command
    if args.a:
        cfg.measure_a = _literal_to_json(args.a)
    if args.b:
        cfg.measure_b = _literal_to_json(args.b)
    if args.n is not None:
        cfg.n_list = [args.n]
    if args.samples is not None:
        cfg.n_samples = args.samples
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.output_path = args.out
    return cfg


def _literal_to_json(text: str) -> dict:
    mu = parse_measure_literal(text)
    return {"atoms": [[float(l), float(w)]
                      for l, w in zip(mu.locations, mu.weights)]}


def cmd_experiment(args) -> dict:
    cfg = _experiment_config(args)
    runner = mclab.RUNNERS[args.command]
    rows, summary = runner(cfg)
    if cfg.output_path:
        mclab.write_csv(rows, cfg.output_path)
        summary["out"] = cfg.output_path
    return summary


_EXPERIMENT_HELP = {
    "simulate": "Monte-Carlo resolvent averages and empirical shifts at fixed z.\n"
                "CSV: n, z_re, z_im, mean_m_*, mean_f_a_*, mean_f_b_*, im_s_a, im_s_b,\n"
                "     var_m, offnorm, trace_defect, disc_defect, n_samples, seed, wall_time_s",
    "residual-scaling": "Spectral norm of the subordination error matrix across n_list.\n"
                        "CSV: n, z_re, z_im, n_samples, r_opnorm, trace_defect, disc_defect,\n"
                        "     seed, wall_time_s; summary carries the log-log slope.",
    "im-s-floor": "Imaginary parts of the empirical shifts across (n, z).\n"
                  "CSV: n, z_re, z_im, im_s_a, im_s_b, mc_se, tol, flag_below,\n"
                  "     trace_defect, disc_defect, n_samples, seed, wall_time_s",
    "concentration": "Sample std of m_H and f_B across n_list (slope ~ -1).\n"
                     "CSV: n, z_re, z_im, std_m, std_f_b, trace_defect, disc_defect,\n"
                     "     n_samples, seed, wall_time_s",
    "local-law": "Eigenvalue count in [E-eta*, E+eta*], eta* = coeff*n^(-1/8), vs rho(E).\n"
                 "CSV: n, e, eta_star, count_mean, count_std, rho_boxplus, rel_error,\n"
                 "     n_draws, seed, wall_time_s",
    "delocalization": "Largest |v_a(i)|^2 over the interval vs the n^(-1/8) log n bound.\n"
                      "CSV: n, interval_lo, interval_hi, max_coord_sq, bound, well_behaved,\n"
                      "     pass, n_draws, draws_hit, seed, wall_time_s",
    "diagonality": "Off-diagonal max of E[G] vs sample count (slope ~ -1/2).\n"
                   "CSV: n, n_samples, offnorm, trace_defect, disc_defect, seed, wall_time_s",
    "haar-check": "Haar sampler moments: unitarity defect, E|u11|^2 = 1/n, E[u11*u12] = 0.\n"
                  "CSV: statistic, value_re, value_im, target, se, n_sigma, pass, n,\n"
                  "     n_samples, seed, wall_time_s",
}


def build_parser() -> _Parser:
    p = _Parser(prog="freesub",
                description="Free additive convolution by subordination, and "
                            "Monte-Carlo experiments on H = A + U B U*.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convolve", help="density of mu_a boxplus mu_b on a grid",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="CSV columns: " + ", ".join(DENSITY_COLUMNS) +
                              "\nrho is a density (mass per unit length); E in spectrum units.")
    c.add_argument("--a", required=True, help="measure literal, e.g. semicircle:1")
    c.add_argument("--b", required=True, help="measure literal, e.g. point_mass:0")
    c.add_argument("--grid", required=True, help="LO:HI:COUNT evaluation grid")
    c.add_argument("--eta-floor", type=float, default=1e-6,
                   help="boundary approach Im z (default 1e-6)")
    c.add_argument("--out", help="CSV output path")
    c.set_defaults(func=cmd_convolve)

    d = sub.add_parser("diagnose", help="smoothness/genericity report on an interval",
                       epilog="JSON report: per-probe k(E), Im S limits, well_behaved.")
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    d.add_argument("--interval", required=True, help="LO:HI")
    d.add_argument("--probes", type=int, default=11)
    d.add_argument("--out", help="JSON output path")
    d.set_defaults(func=cmd_diagnose)

    for name in ("simulate", "residual-scaling", "im-s-floor", "concentration",
                 "local-law", "delocalization", "diagonality", "haar-check"):
        e = sub.add_parser(name, help=_EXPERIMENT_HELP[name].splitlines()[0],
                           formatter_class=argparse.RawDescriptionHelpFormatter,
                           epilog=_EXPERIMENT_HELP[name])
        e.add_argument("--config", help="ExperimentConfig JSON file")
        e.add_argument("--a", help="override measure_a (inline literal)")
        e.add_argument("--b", help="override measure_b (inline literal)")
        e.add_argument("--n", type=int, help="override n_list with a single size")
        e.add_argument("--samples", type=int, help="override n_samples")
        e.add_argument("--seed", type=int, help="override master_seed")
        e.add_argument("--workers", type=int, help="thread fan-out cap")
        e.add_argument("--out", help="CSV output path override")
        e.set_defaults(func=cmd_experiment)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        summary = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except rmt.InvariantViolationError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except mclab.NotWellBehavedError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 3
    except (freeconv.SolverError, rmt.ShiftBelowAxisError,
            mclab.EmptyIntervalError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 4
    print(json.dumps(summary, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
