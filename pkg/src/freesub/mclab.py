"""Desk-scale Monte-Carlo experiments on the rotated-sum ensembles.

Each runner takes an ExperimentConfig and returns (rows, summary): rows are
plain dicts with a fixed per-experiment schema (written as CSV), the summary
carries fitted slopes, pass flags, seeds and versions (written as JSON).
Identical configs produce identical rows except for the wall_time_s column,
regardless of worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy

import freesub
from freesub import freeconv, measures, rmt
from freesub.rmt import derive_seed

__all__ = [
    "ExperimentConfig",
    "NotWellBehavedError",
    "EmptyIntervalError",
    "run_residual_scaling",
    "run_im_s_floor",
    "run_concentration",
    "run_local_law",
    "run_delocalization",
    "run_diagonality",
    "run_simulate",
    "run_haar_check",
    "fit_loglog",
    "write_csv",
    "RUNNERS",
]


class NotWellBehavedError(Exception):
    """The measure pair fails the smoothness/genericity hypothesis on the
    probed window; the experiment refuses to run."""


class EmptyIntervalError(Exception):
    """No eigenvalue fell in the probe interval in any draw."""


@dataclass
class ExperimentConfig:
    experiment: str = ""
    measure_a: dict = field(default_factory=lambda: {"two_point": {"a": -1.0, "b": 1.0}})
    measure_b: dict = field(default_factory=lambda: {"two_point": {"a": -1.0, "b": 1.0}})
    n_list: list = field(default_factory=lambda: [200, 400, 800])
    m_list: list = field(default_factory=lambda: [100, 400, 1600])
    z: list = field(default_factory=lambda: [0.0, 1.0])
    z_list: Optional[list] = None
    e_center: float = 0.0
    eta_star_coeff: float = 3.0
    interval: list = field(default_factory=lambda: [-0.5, 0.5])
    n_samples: int = 200
    n_draws: int = 20
    n_probe: int = 7
    master_seed: int = 1
    workers: Optional[int] = None  # None: use available parallelism
    eta_floor: float = 1e-6
    output_path: Optional[str] = None
    skip_well_behaved_check: bool = False
    # acceptance thresholds (data, not code)
    slope_window: list = field(default_factory=lambda: [-1.4, -0.6])
    offnorm_slope_window: list = field(default_factory=lambda: [-0.7, -0.3])
    max_rel_error: float = 0.10
    floor_scale_c: float = 1.0

    def __post_init__(self):
        if not self.n_list:
            raise ValueError("n_list must be nonempty")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError("n_list must be ascending")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json_file(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def z_complex(self) -> complex:
        return complex(self.z[0], self.z[1])

    def z_list_complex(self) -> list:
        if self.z_list is None:
            return [self.z_complex()]
        return [complex(p[0], p[1]) for p in self.z_list]

    def measures(self):
        return (measures.measure_from_json(self.measure_a),
                measures.measure_from_json(self.measure_b))

    def effective_workers(self) -> int:
        if self.workers is not None and self.workers >= 1:
            return self.workers
        return os.cpu_count() or 1


def fit_loglog(xs, ys) -> tuple:
    """Least-squares slope and R^2 of log y against log x; (nan, nan) when
    fewer than two strictly positive points are available."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan"), float("nan")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), r2


def _versions():
    return {"freesub": freesub.__version__, "numpy": np.__version__,
            "scipy": scipy.__version__}


def _base_summary(cfg, **extra):
    out = {"experiment": cfg.experiment, "master_seed": cfg.master_seed,
           "versions": _versions()}
    out.update(extra)
    return out


def _wb_gate(cfg, mu_a, mu_b, window):
    """Well-behavedness refusal (smoothness + genericity on the probed window;
    a single point when the window degenerates)."""
    n_probe = 1 if window[0] == window[1] else cfg.n_probe
    report = freeconv.is_well_behaved(mu_a, mu_b, window, n_probe)
    if not report.all_pass and not cfg.skip_well_behaved_check:
        raise NotWellBehavedError(
            f"measure pair not well-behaved on [{window[0]:g}, {window[1]:g}]")
    return report


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def run_residual_scaling(cfg: ExperimentConfig):
    """||R(z)|| across n_list at fixed z, plus the fitted log-log slope."""
    mu_a, mu_b = cfg.measures()
    z = cfg.z_complex()
    rows = []
    for i, n in enumerate(cfg.n_list):
        t0 = time.perf_counter()
        seed = derive_seed(cfg.master_seed, i)
        ens = rmt.build_ensemble(mu_a, mu_b, n)
        avg = rmt.mc_averages(ens, z, cfg.n_samples, seed, workers=cfg.effective_workers())
        _, r_opnorm = rmt.subordination_residual(avg, ens)
        rows.append({
            "n": n, "z_re": z.real, "z_im": z.imag, "n_samples": cfg.n_samples,
            "r_opnorm": r_opnorm,
            "trace_defect": avg.trace_defect, "disc_defect": avg.disc_defect,
            "seed": seed, "wall_time_s": time.perf_counter() - t0,
        })
    slope, r2 = fit_loglog([r["n"] for r in rows], [r["r_opnorm"] for r in rows])
    lo, hi = cfg.slope_window
    summary = _base_summary(cfg, slope=slope, r2=r2,
                            slope_window=[lo, hi], slope_pass=(lo <= slope <= hi))
    return rows, summary


def run_im_s_floor(cfg: ExperimentConfig):
    """Im S_A, Im S_B across (n, z); values below the noise+theory floor are
    flagged as data, never fatal."""
    mu_a, mu_b = cfg.measures()
    rows = []
    idx = 0
    for n in cfg.n_list:
        ens = rmt.build_ensemble(mu_a, mu_b, n)
        for z in cfg.z_list_complex():
            t0 = time.perf_counter()
            seed = derive_seed(cfg.master_seed, idx)
            idx += 1
            avg = rmt.mc_averages(ens, z, cfg.n_samples, seed, workers=cfg.effective_workers())
            s_a, s_b = rmt.empirical_subordination(avg)
            # delta-method standard error of the ratio -f/m
            se_m = math.sqrt(avg.var_m / cfg.n_samples)
            se_fa = math.sqrt(avg.var_f_a / cfg.n_samples)
            se_fb = math.sqrt(avg.var_f_b / cfg.n_samples)
            am = abs(avg.mean_m)
            se_sa = se_fa / am + abs(s_a) * se_m / am
            se_sb = se_fb / am + abs(s_b) * se_m / am
            eta = z.imag
            tol = max(10.0 * max(se_sa, se_sb),
                      cfg.floor_scale_c / (n * eta ** 7))
            below = (s_a.imag < -tol) or (s_b.imag < -tol)
            rows.append({
                "n": n, "z_re": z.real, "z_im": z.imag,
                "im_s_a": s_a.imag, "im_s_b": s_b.imag,
                "mc_se": max(se_sa, se_sb), "tol": tol, "flag_below": below,
                "trace_defect": avg.trace_defect, "disc_defect": avg.disc_defect,
                "n_samples": cfg.n_samples, "seed": seed,
                "wall_time_s": time.perf_counter() - t0,
            })
    worst = min(min(r["im_s_a"], r["im_s_b"]) for r in rows)
    summary = _base_summary(cfg, n_flagged=sum(r["flag_below"] for r in rows),
                            worst_im_s=worst)
    return rows, summary


def run_concentration(cfg: ExperimentConfig):
    """Sample std of m_H and f_B across n_list; slope of std(m) vs n."""
    if cfg.n_samples < 100:
        raise ValueError("concentration needs n_samples >= 100")
    mu_a, mu_b = cfg.measures()
    z = cfg.z_complex()
    rows = []
    for i, n in enumerate(cfg.n_list):
        t0 = time.perf_counter()
        seed = derive_seed(cfg.master_seed, i)
        ens = rmt.build_ensemble(mu_a, mu_b, n)
        avg = rmt.mc_averages(ens, z, cfg.n_samples, seed, workers=cfg.effective_workers())
        rows.append({
            "n": n, "z_re": z.real, "z_im": z.imag,
            "std_m": math.sqrt(avg.var_m), "std_f_b": math.sqrt(avg.var_f_b),
            "trace_defect": avg.trace_defect, "disc_defect": avg.disc_defect,
            "n_samples": cfg.n_samples, "seed": seed,
            "wall_time_s": time.perf_counter() - t0,
        })
    slope, r2 = fit_loglog([r["n"] for r in rows], [r["std_m"] for r in rows])
    lo, hi = cfg.slope_window
    summary = _base_summary(cfg, slope=slope, r2=r2,
                            slope_window=[lo, hi], slope_pass=(lo <= slope <= hi))
    return rows, summary


def run_local_law(cfg: ExperimentConfig):
    """Normalized eigenvalue count in the window [E - eta*, E + eta*] with
    eta* = coeff * n^(-1/8), against the solver density rho(E)."""
    mu_a, mu_b = cfg.measures()
    E = cfg.e_center
    _wb_gate(cfg, mu_a, mu_b, (E, E))
    rho = freeconv.density(mu_a, mu_b, [E], cfg.eta_floor)[0].rho
    rows = []
    for i, n in enumerate(cfg.n_list):
        t0 = time.perf_counter()
        seed = derive_seed(cfg.master_seed, i)
        ens = rmt.build_ensemble(mu_a, mu_b, n)
        eta_star = cfg.eta_star_coeff * n ** (-0.125)
        counts = []
        for d in range(cfg.n_draws):
            sd = rmt.spectral_data(ens, derive_seed(seed, d), want_vectors=False)
            counts.append(rmt.local_count(sd, E, eta_star))
        count_mean = float(np.mean(counts))
        rows.append({
            "n": n, "e": E, "eta_star": eta_star,
            "count_mean": count_mean, "count_std": float(np.std(counts)),
            "rho_boxplus": rho,
            "rel_error": abs(count_mean - rho) / rho,
            "n_draws": cfg.n_draws, "seed": seed,
            "wall_time_s": time.perf_counter() - t0,
        })
    worst = max(r["rel_error"] for r in rows)
    summary = _base_summary(cfg, rho_boxplus=rho, max_rel_error=worst,
                            rel_error_pass=worst < cfg.max_rel_error)
    return rows, summary


def run_delocalization(cfg: ExperimentConfig):
    """Largest squared eigenvector coordinate over the interval, aggregated by
    max over draws, against the n^(-1/8) log n envelope."""
    mu_a, mu_b = cfg.measures()
    lo, hi = float(cfg.interval[0]), float(cfg.interval[1])
    report = _wb_gate(cfg, mu_a, mu_b, (lo, hi))
    rows = []
    for i, n in enumerate(cfg.n_list):
        t0 = time.perf_counter()
        seed = derive_seed(cfg.master_seed, i)
        ens = rmt.build_ensemble(mu_a, mu_b, n)
        best = float("nan")
        hits = 0
        for d in range(cfg.n_draws):
            sd = rmt.spectral_data(ens, derive_seed(seed, d), window=(lo, hi))
            res = rmt.delocalization_max(sd, (lo, hi))
            if not res.empty:
                hits += 1
                best = res.max_coord_sq if math.isnan(best) else max(best, res.max_coord_sq)
        if hits == 0:
            raise EmptyIntervalError(
                f"no eigenvalue in [{lo:g}, {hi:g}] in any of {cfg.n_draws} draws at n={n}")
        bound = n ** (-0.125) * math.log(n)
        rows.append({
            "n": n, "interval_lo": lo, "interval_hi": hi,
            "max_coord_sq": best, "bound": bound,
            "well_behaved": report.all_pass,
            "pass": report.all_pass and best <= bound,
            "n_draws": cfg.n_draws, "draws_hit": hits, "seed": seed,
            "wall_time_s": time.perf_counter() - t0,
        })
    maxima = [r["max_coord_sq"] for r in rows]
    summary = _base_summary(
        cfg, all_pass=all(r["pass"] for r in rows),
        strictly_decreasing=all(b < a for a, b in zip(maxima, maxima[1:])),
        well_behaved=report.all_pass)
    return rows, summary


def run_diagonality(cfg: ExperimentConfig):
    """Off-diagonal max of E[G] against the sample count; slope ~ -1/2."""
    mu_a, mu_b = cfg.measures()
    z = cfg.z_complex()
    n = cfg.n_list[0]
    ens = rmt.build_ensemble(mu_a, mu_b, n)
    rows = []
    for i, m_count in enumerate(cfg.m_list):
        t0 = time.perf_counter()
        seed = derive_seed(cfg.master_seed, i)
        avg = rmt.mc_averages(ens, z, m_count, seed, workers=cfg.effective_workers())
        rows.append({
            "n": n, "n_samples": m_count,
            "offnorm": rmt.diagonality_offnorm(avg),
            "trace_defect": avg.trace_defect, "disc_defect": avg.disc_defect,
            "seed": seed, "wall_time_s": time.perf_counter() - t0,
        })
    slope, r2 = fit_loglog([r["n_samples"] for r in rows],
                           [r["offnorm"] for r in rows])
    lo, hi = cfg.offnorm_slope_window
    summary = _base_summary(cfg, slope=slope, r2=r2,
                            slope_window=[lo, hi], slope_pass=(lo <= slope <= hi))
    return rows, summary


def run_simulate(cfg: ExperimentConfig):
    """One Monte-Carlo average per (n, z): means, variances, empirical shifts."""
    mu_a, mu_b = cfg.measures()
    rows = []
    idx = 0
    for n in cfg.n_list:
        ens = rmt.build_ensemble(mu_a, mu_b, n)
        for z in cfg.z_list_complex():
            t0 = time.perf_counter()
            seed = derive_seed(cfg.master_seed, idx)
            idx += 1
            avg = rmt.mc_averages(ens, z, cfg.n_samples, seed, workers=cfg.effective_workers())
            s_a, s_b = rmt.empirical_subordination(avg)
            rows.append({
                "n": n, "z_re": z.real, "z_im": z.imag,
                "mean_m_re": avg.mean_m.real, "mean_m_im": avg.mean_m.imag,
                "mean_f_a_re": avg.mean_f_a.real, "mean_f_a_im": avg.mean_f_a.imag,
                "mean_f_b_re": avg.mean_f_b.real, "mean_f_b_im": avg.mean_f_b.imag,
                "im_s_a": s_a.imag, "im_s_b": s_b.imag,
                "var_m": avg.var_m, "offnorm": rmt.diagonality_offnorm(avg),
                "trace_defect": avg.trace_defect, "disc_defect": avg.disc_defect,
                "n_samples": cfg.n_samples, "seed": seed,
                "wall_time_s": time.perf_counter() - t0,
            })
    summary = _base_summary(cfg, n_rows=len(rows))
    return rows, summary


def run_haar_check(cfg: ExperimentConfig):
    """Haar sampler diagnostics: worst unitarity defect and the two moment
    checks E|u11|^2 = 1/n and E[u11 u12] = 0 (no conjugate)."""
    n = cfg.n_list[0]
    M = cfg.n_samples
    t0 = time.perf_counter()
    u11_sq = np.empty(M)
    u11_u12 = np.empty(M, dtype=complex)
    worst_defect = 0.0
    for k in range(M):
        u = rmt.sample_haar_unitary(n, derive_seed(cfg.master_seed, k))
        u11_sq[k] = abs(u[0, 0]) ** 2
        u11_u12[k] = u[0, 0] * u[0, 1] if n > 1 else 0.0
        if k < 1000:
            worst_defect = max(worst_defect, rmt.unitarity_defect(u))
    dt = time.perf_counter() - t0

    se_sq = float(u11_sq.std(ddof=1) / math.sqrt(M))
    mean_sq = float(u11_sq.mean())
    se_cross = float(np.sqrt(np.var(u11_u12.real, ddof=1) + np.var(u11_u12.imag, ddof=1))
                     / math.sqrt(M))
    mean_cross = complex(u11_u12.mean())
    rows = [
        {"statistic": "unitarity_defect_max", "value_re": worst_defect, "value_im": 0.0,
         "target": 0.0, "se": 0.0, "n_sigma": 0.0,
         "pass": worst_defect <= 1e-12, "n": n, "n_samples": min(M, 1000),
         "seed": cfg.master_seed, "wall_time_s": dt},
        {"statistic": "abs_u11_sq", "value_re": mean_sq, "value_im": 0.0,
         "target": 1.0 / n, "se": se_sq,
         "n_sigma": abs(mean_sq - 1.0 / n) / se_sq,
         "pass": abs(mean_sq - 1.0 / n) <= 3 * se_sq, "n": n, "n_samples": M,
         "seed": cfg.master_seed, "wall_time_s": dt},
        {"statistic": "u11_u12", "value_re": mean_cross.real, "value_im": mean_cross.imag,
         "target": 0.0, "se": se_cross,
         "n_sigma": abs(mean_cross) / se_cross if se_cross else 0.0,
         "pass": abs(mean_cross) <= 3 * se_cross, "n": n, "n_samples": M,
         "seed": cfg.master_seed, "wall_time_s": dt},
    ]
    summary = _base_summary(cfg, all_pass=all(r["pass"] for r in rows))
    return rows, summary


RUNNERS = {
    "residual-scaling": run_residual_scaling,
    "im-s-floor": run_im_s_floor,
    "concentration": run_concentration,
    "local-law": run_local_law,
    "delocalization": run_delocalization,
    "diagonality": run_diagonality,
    "simulate": run_simulate,
    "haar-check": run_haar_check,
}


def write_csv(rows: list, path: str):
    """Fixed-order CSV with round-trip float formatting."""
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v
                        for v in (row[c] for c in cols)])
