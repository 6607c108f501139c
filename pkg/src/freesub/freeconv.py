"""Subordination-system solver for the free additive convolution.

For measures mu_a, mu_b with Stieltjes transforms m_a, m_b, solves

    F(s1, s2) = ( (z+s1+s2)^{-1} + m_a(z+s2),
                  (z+s1+s2)^{-1} + m_b(z+s1) ) = 0

by a damped Newton iteration with the explicit 2x2 Jacobian, then recovers
m(z) = -1/(z+s1+s2).  The branch analytic at infinity is selected by
continuation in eta = Im z, starting high with the asymptotic initializer
s1 -> -mean(mu_a), s2 -> -mean(mu_b) and warm-starting on the way down.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from freesub import measures
from freesub.measures import SpectralMeasure, stieltjes, stieltjes_deriv

__all__ = [
    "SolverOptions",
    "SubordinationSolution",
    "PointDiagnostics",
    "DensityPoint",
    "WellBehavedReport",
    "SolverError",
    "MaxIterationsError",
    "SingularJacobianError",
    "DomainEscapeError",
    "solve_point",
    "default_eta_schedule",
    "continuation_path",
    "density",
    "genericity",
    "is_well_behaved",
]

_DET_FLOOR = 1e-14
_MAX_HALVINGS = 30


class SolverError(Exception):
    """Base class for subordination-solver failures."""

    def __init__(self, message, z=None, eta_failed=None):
        super().__init__(message)
        self.z = z
        self.eta_failed = eta_failed


class MaxIterationsError(SolverError):
    pass


class SingularJacobianError(SolverError):
    pass


class DomainEscapeError(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-12
    max_iter: int = 200
    eta_floor: float = 1e-6
    eta_ratio: float = 0.5
    genericity_threshold: float = 1e-3
    smoothness_threshold: float = 1e-3

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "SolverOptions":
        return cls(**json.loads(text))


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class SubordinationSolution:
    """One solved point: m = m_boxplus(z), the two shifts, and convergence
    metadata.  m*(z+s_alpha+s_beta) = -1 holds by construction."""

    z: complex
    m: complex
    s_alpha: complex
    s_beta: complex
    residual_norm: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class PointDiagnostics:
    k_value: complex
    im_s_alpha_limit: float
    im_s_beta_limit: float
    well_behaved: bool


@dataclass(frozen=True)
class DensityPoint:
    e: float
    rho: float
    diagnostics: Optional[PointDiagnostics]
    solution: Optional[SubordinationSolution]
    error: Optional[str] = None


@dataclass(frozen=True)
class WellBehavedReport:
    points: list
    all_pass: bool


def _system(mu_a, mu_b, z, s1, s2):
    w = z + s1 + s2
    inv = 1.0 / w
    f1 = inv + stieltjes(mu_a, z + s2)
    f2 = inv + stieltjes(mu_b, z + s1)
    return f1, f2


def _residual_norm(f1, f2):
    return math.hypot(abs(f1), abs(f2))


def solve_point(mu_a: SpectralMeasure, mu_b: SpectralMeasure, z: complex,
                init: tuple, opts: SolverOptions = DEFAULT_OPTIONS) -> SubordinationSolution:
    """Damped Newton solve of the subordination system at one point z (Im z > 0).

    Raises MaxIterationsError, SingularJacobianError, or DomainEscapeError on
    failure; see `continuation_path` for a robust driver with default inits.

    The upper half-plane is the primary domain; Im z < 0 runs the identical
    iteration mirrored below the axis (solutions there are the conjugates of
    the ones above, which the invariant tests exercise).
    """
    if z.imag == 0:
        raise ValueError("solve_point requires Im z != 0")
    half = 1.0 if z.imag > 0 else -1.0

    if mu_a.n_atoms == 1 and mu_b.n_atoms == 1:
        # delta_a boxplus delta_b = delta_{a+b}: exact shift answer
        a, b = mu_a.locations[0], mu_b.locations[0]
        s1, s2 = -a, -b
        f1, f2 = _system(mu_a, mu_b, z, s1, s2)
        m = -1.0 / (z + s1 + s2)
        return SubordinationSolution(z, m, complex(s1), complex(s2),
                                     _residual_norm(f1, f2), 0, True)

    s1, s2 = complex(init[0]), complex(init[1])
    if half * (z + s1).imag <= 0 or half * (z + s2).imag <= 0:
        raise DomainEscapeError(f"initial point outside analyticity domain at z={z}", z=z)

    f1, f2 = _system(mu_a, mu_b, z, s1, s2)
    res = _residual_norm(f1, f2)
    for it in range(1, opts.max_iter + 1):
        if res <= opts.tol:
            return _finish(mu_a, mu_b, z, s1, s2, res, it - 1, opts)

        w = z + s1 + s2
        p = 1.0 / (w * w)
        da = stieltjes_deriv(mu_a, z + s2)
        db = stieltjes_deriv(mu_b, z + s1)
        # J = [[-p, -p + da], [-p + db, -p]]
        det = (da + db) * p - da * db
        if abs(det) < _DET_FLOOR:
            raise SingularJacobianError(
                f"|det J| = {abs(det):.3e} below {_DET_FLOOR} at z={z}", z=z)
        # Cramer for J delta = F:
        #   delta1 = ( J22*f1 - J12*f2)/det, delta2 = (-J21*f1 + J11*f2)/det
        d1 = (-p * f1 - (-p + da) * f2) / det
        d2 = (-(-p + db) * f1 + (-p) * f2) / det

        lam = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            t1, t2 = s1 - lam * d1, s2 - lam * d2
            if half * (z + t1).imag > 0 and half * (z + t2).imag > 0:
                g1, g2 = _system(mu_a, mu_b, z, t1, t2)
                new_res = _residual_norm(g1, g2)
                if new_res <= res:
                    break
            lam *= 0.5
        else:
            raise DomainEscapeError(
                f"damping failed after {_MAX_HALVINGS} halvings at z={z}", z=z)
        s1, s2, f1, f2, res = t1, t2, g1, g2, new_res

    if res <= opts.tol:
        return _finish(mu_a, mu_b, z, s1, s2, res, opts.max_iter, opts)
    raise MaxIterationsError(
        f"no convergence in {opts.max_iter} iterations at z={z} (residual {res:.3e})", z=z)


def _finish(mu_a, mu_b, z, s1, s2, res, iterations, opts):
    half = 1.0 if z.imag > 0 else -1.0
    m = -1.0 / (z + s1 + s2)
    tol = 10.0 * max(res, 1e-15)
    if half * m.imag <= 0:
        raise DomainEscapeError(f"converged to non-physical branch at z={z}", z=z)
    if half * s1.imag < -tol or half * s2.imag < -tol:
        raise DomainEscapeError(
            f"converged with Im shift < -10*residual at z={z}: "
            f"Im s = ({s1.imag:.3e}, {s2.imag:.3e})", z=z)
    return SubordinationSolution(z, m, s1, s2, res, iterations, True)


def default_eta_schedule(mu_a: SpectralMeasure, mu_b: SpectralMeasure,
                         eta_target: float, ratio: float = 0.5) -> list:
    """Geometric schedule from 4*(K_a + K_b) down to eta_target."""
    if eta_target <= 0:
        raise ValueError("eta_target must be positive")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    top = 4.0 * (mu_a.support_bound + mu_b.support_bound)
    top = max(top, 2.0 * eta_target, 1.0)
    sched = []
    eta = top
    while eta > eta_target:
        sched.append(eta)
        eta *= ratio
    sched.append(eta_target)
    return sched


def continuation_path(mu_a: SpectralMeasure, mu_b: SpectralMeasure, E: float,
                      eta_schedule: Sequence[float],
                      opts: SolverOptions = DEFAULT_OPTIONS) -> SubordinationSolution:
    """Track the solution branch analytic at infinity down to the target eta.

    The first (largest) point is initialized from the asymptotic expansion,
    s_alpha = -mean(mu_a), s_beta = -mean(mu_b); each later point warm-starts
    from the previous solution.  Convergence from the asymptotic initializer
    is only guaranteed when the schedule starts high (the default schedule
    starts at 4*(K_a+K_b)).
    """
    etas = [float(e) for e in eta_schedule]
    if not etas or any(e <= 0 for e in etas):
        raise ValueError("eta_schedule must be positive")
    if any(b >= a for a, b in zip(etas, etas[1:])):
        raise ValueError("eta_schedule must be strictly decreasing")

    init = (-measures.mean(mu_a), -measures.mean(mu_b))
    sol = None
    for eta in etas:
        z = complex(E, eta)
        try:
            sol = solve_point(mu_a, mu_b, z, init, opts)
        except SolverError as exc:
            exc.eta_failed = eta
            raise
        init = (sol.s_alpha, sol.s_beta)
    return sol


def genericity(mu_a: SpectralMeasure, mu_b: SpectralMeasure, E: float,
               sol: SubordinationSolution,
               opts: SolverOptions = DEFAULT_OPTIONS) -> PointDiagnostics:
    """Stability diagnostics at a boundary point E from a converged solution
    at z = E + i*eta_floor:

        k(E) = 1/m_a'(z+s_beta) + 1/m_b'(z+s_alpha) - (z+s_alpha+s_beta)^2,

    the Jacobian-determinant expression whose non-vanishing makes the system
    stable, plus the boundary imaginary parts of the two shifts.
    """
    if not sol.converged:
        raise ValueError("genericity needs a converged solution")
    if abs(sol.z.real - E) > 1e-12:
        raise ValueError(f"solution was computed at Re z = {sol.z.real}, not E = {E}")
    da = stieltjes_deriv(mu_a, sol.z + sol.s_beta)
    db = stieltjes_deriv(mu_b, sol.z + sol.s_alpha)
    k = 1.0 / da + 1.0 / db - (sol.z + sol.s_alpha + sol.s_beta) ** 2
    im_a = sol.s_alpha.imag
    im_b = sol.s_beta.imag
    well = (abs(k) > opts.genericity_threshold
            and im_a > opts.smoothness_threshold
            and im_b > opts.smoothness_threshold)
    return PointDiagnostics(k, im_a, im_b, well)


def density(mu_a: SpectralMeasure, mu_b: SpectralMeasure, grid: Sequence[float],
            eta_floor: Optional[float] = None,
            opts: SolverOptions = DEFAULT_OPTIONS) -> list:
    """rho(E) = Im m(E + i*eta_floor)/pi on a grid, with per-point diagnostics.

    Solver failures are reported in-row (rho = nan, error message) and do not
    abort the remaining grid points.
    """
    if eta_floor is None:
        eta_floor = opts.eta_floor
    if eta_floor <= 0:
        raise ValueError("eta_floor must be positive")
    sched = default_eta_schedule(mu_a, mu_b, eta_floor, opts.eta_ratio)
    out = []
    for E in grid:
        try:
            sol = continuation_path(mu_a, mu_b, float(E), sched, opts)
            diag = genericity(mu_a, mu_b, float(E), sol, opts)
            out.append(DensityPoint(float(E), sol.m.imag / math.pi, diag, sol))
        except SolverError as exc:
            out.append(DensityPoint(float(E), float("nan"), None, None,
                                    error=f"{type(exc).__name__}: {exc}"))
    return out


def is_well_behaved(mu_a: SpectralMeasure, mu_b: SpectralMeasure,
                    interval: tuple, n_probe: int = 11,
                    opts: SolverOptions = DEFAULT_OPTIONS) -> WellBehavedReport:
    """Probe smoothness + genericity at n_probe evenly spaced points of the
    interval; all_pass only if every probe converged and is well-behaved."""
    lo, hi = float(interval[0]), float(interval[1])
    if hi < lo:
        raise ValueError("empty interval")
    probes = np.linspace(lo, hi, n_probe)
    points = []
    all_pass = True
    for E in probes:
        pts = density(mu_a, mu_b, [E], opts.eta_floor, opts)[0]
        if pts.error is not None or pts.diagnostics is None:
            points.append((float(E), None))
            all_pass = False
        else:
            points.append((float(E), pts.diagnostics))
            all_pass = all_pass and pts.diagnostics.well_behaved
    return WellBehavedReport(points, all_pass)
