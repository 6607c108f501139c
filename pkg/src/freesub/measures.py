"""Compactly supported probability measures as weighted atoms.

Everything downstream (the subordination solver, the matrix ensembles) works
with the same atomic representation: a continuous law enters through its
quantile discretization, which keeps the Stieltjes calculus exact and the
Levy distance exactly computable.

Sign convention, used globally:

    m(z) = sum_k w_k / (lambda_k - z),

so that Im m(z) > 0 whenever Im z > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "SpectralMeasure",
    "make_atoms",
    "point_mass",
    "two_point",
    "semicircle",
    "quantile_discretize",
    "stieltjes",
    "stieltjes_deriv",
    "cdf",
    "quantile",
    "mean",
    "levy_distance",
    "measure_from_json",
]

# Atoms closer than this are merged (guards against near-duplicate quantiles
# produced by root-finding).
MERGE_TOL = 1e-12

_WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SpectralMeasure:
    """Atomic probability measure: strictly increasing locations, positive
    weights summing to one, and a support bound K >= max|location|."""

    locations: np.ndarray
    weights: np.ndarray
    support_bound: float

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)
        if loc.ndim != 1 or w.shape != loc.shape or loc.size == 0:
            raise ValueError("locations/weights must be equal-length 1-d arrays")
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(w))):
            raise ValueError("non-finite atom data")
        if np.any(w <= 0):
            raise ValueError("all weights must be positive")
        if abs(w.sum() - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        if np.any(np.diff(loc) <= 0):
            raise ValueError("locations must be strictly increasing")
        if self.support_bound < np.max(np.abs(loc)):
            raise ValueError("support_bound smaller than max |location|")
        loc.setflags(write=False)
        w.setflags(write=False)

    @cached_property
    def cum_weights(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        c.setflags(write=False)
        return c

    @property
    def n_atoms(self) -> int:
        return self.locations.size

    def __repr__(self):  # keep huge discretizations readable
        return (f"SpectralMeasure(n_atoms={self.n_atoms}, "
                f"support_bound={self.support_bound:g})")


def make_atoms(locations: Sequence[float], weights: Sequence[float]) -> SpectralMeasure:
    """Build a measure from raw atoms: sorts, merges duplicates (within
    ``MERGE_TOL``), and normalizes the weights to total mass one."""
    loc = np.asarray(locations, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if loc.size == 0:
        raise ValueError("empty atom list")
    if loc.shape != w.shape:
        raise ValueError("locations and weights must have equal length")
    if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(w))):
        raise ValueError("non-finite atom data")
    if np.any(w < 0):
        raise ValueError("negative weight")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive total mass")

    order = np.argsort(loc, kind="stable")
    loc, w = loc[order], w[order]
    merged_loc, merged_w = [loc[0]], [w[0]]
    for x, wx in zip(loc[1:], w[1:]):
        if x - merged_loc[-1] <= MERGE_TOL:
            merged_w[-1] += wx
        else:
            merged_loc.append(x)
            merged_w.append(wx)
    loc = np.array(merged_loc)
    w = np.array(merged_w)
    keep = w > 0
    loc, w = loc[keep], w[keep]
    w = w / w.sum()
    return SpectralMeasure(loc, w, float(np.max(np.abs(loc))))


def point_mass(c: float) -> SpectralMeasure:
    return make_atoms([c], [1.0])


def two_point(a: float, b: float, p: float = 0.5) -> SpectralMeasure:
    """p*delta_a + (1-p)*delta_b."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return make_atoms([a, b], [p, 1.0 - p])


def quantile_discretize(cdf_inverse: Callable[[float], float], n_atoms: int) -> SpectralMeasure:
    """Atoms at the midpoint quantiles cdf_inverse((k - 1/2)/n), k = 1..n,
    weight 1/n each (duplicates merged)."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    probs = (np.arange(1, n_atoms + 1) - 0.5) / n_atoms
    loc = np.array([float(cdf_inverse(p)) for p in probs])
    if not np.all(np.isfinite(loc)):
        raise ValueError("quantile function returned a non-finite value")
    return make_atoms(loc, np.full(n_atoms, 1.0 / n_atoms))


def _semicircle_cdf(x: float, variance: float) -> float:
    r = 2.0 * math.sqrt(variance)
    if x <= -r:
        return 0.0
    if x >= r:
        return 1.0
    return (0.5 + x * math.sqrt(4.0 * variance - x * x) / (4.0 * math.pi * variance)
            + math.asin(x / r) / math.pi)


def semicircle(variance: float, n_atoms: int = 10_000) -> SpectralMeasure:
    """Quantile discretization of the semicircle law on [-2 sqrt(v), 2 sqrt(v)]."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    r = 2.0 * math.sqrt(variance)

    def inv(p: float) -> float:
        return brentq(lambda x: _semicircle_cdf(x, variance) - p, -r, r,
                      xtol=1e-14, rtol=8.9e-16)

    mu = quantile_discretize(inv, n_atoms)
    # the exact support bound, not just max|atom|
    return SpectralMeasure(mu.locations, mu.weights, r)


def stieltjes(mu: SpectralMeasure, z: complex) -> complex:
    """m(z) = sum w_k/(lambda_k - z); valid off the support."""
    d = mu.locations - z
    if np.any(d == 0):
        raise ValueError(f"z = {z} coincides with an atom")
    return complex(np.sum(mu.weights / d))


def stieltjes_deriv(mu: SpectralMeasure, z: complex) -> complex:
    """m'(z) = sum w_k/(lambda_k - z)^2, the exact derivative."""
    d = mu.locations - z
    if np.any(d == 0):
        raise ValueError(f"z = {z} coincides with an atom")
    return complex(np.sum(mu.weights / (d * d)))


def mean(mu: SpectralMeasure) -> float:
    return float(np.dot(mu.weights, mu.locations))


def cdf(mu: SpectralMeasure, x: float) -> float:
    """Right-continuous distribution function F(x) = mu((-inf, x])."""
    idx = np.searchsorted(mu.locations, x, side="right")
    return 0.0 if idx == 0 else float(mu.cum_weights[idx - 1])


def quantile(mu: SpectralMeasure, p: float) -> float:
    """Generalized inverse F^{-1}(p) = inf{x : F(x) >= p} for p in (0, 1]."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    idx = np.searchsorted(mu.cum_weights, p, side="left")
    return float(mu.locations[min(idx, mu.n_atoms - 1)])


# ---------------------------------------------------------------------------
# Levy distance
# ---------------------------------------------------------------------------

def _cdf_at(locs, cumw, x):
    """F evaluated at the points x (vectorized, right-continuous)."""
    idx = np.searchsorted(locs, x, side="right")
    out = np.zeros(np.shape(idx), dtype=float)
    nz = idx > 0
    out[nz] = cumw[np.asarray(idx)[nz] - 1]
    return out


def _cdf_left(locs, cumw, x):
    """Left limits F(x-)."""
    idx = np.searchsorted(locs, x, side="left")
    out = np.zeros(np.shape(idx), dtype=float)
    nz = idx > 0
    out[nz] = cumw[np.asarray(idx)[nz] - 1]
    return out


def _levy_feasible(x1, c1, x2, c2, s, slack=1e-12):
    """Does F2(x-s)-s <= F1(x) <= F2(x+s)+s hold for all x?

    Both sides are step functions, so the supremum of each defect is attained
    on the finite set of jump-induced probe points checked here.
    """
    bound = s + slack
    # sup_x [F1(x) - F2(x+s)]: right after jumps of F1, just before jumps of F2(.+s)
    if np.any(_cdf_at(x1, c1, x1) - _cdf_at(x2, c2, x1 + s) > bound):
        return False
    if np.any(_cdf_left(x1, c1, x2 - s) - _cdf_left(x2, c2, x2) > bound):
        return False
    # sup_x [F2(x-s) - F1(x)]
    if np.any(_cdf_at(x2, c2, x2) - _cdf_at(x1, c1, x2 + s) > bound):
        return False
    if np.any(_cdf_left(x2, c2, x1 - s) - _cdf_left(x1, c1, x1) > bound):
        return False
    return True


def _close_diffs(u, v, center, width):
    """All values u_i - v_j inside [center-width, center+width]; both arrays
    sorted, O((|u|+|v|) log) without forming the full product set."""
    lo = np.searchsorted(v, u - center - width)
    hi = np.searchsorted(v, u - center + width, side="right")
    hit = np.nonzero(hi > lo)[0]
    out = [u[i] - v[lo[i]:hi[i]] for i in hit]
    return np.concatenate(out) if out else np.empty(0)


def levy_distance(mu1: SpectralMeasure, mu2: SpectralMeasure) -> float:
    """Exact Levy distance between two atomic measures.

    d_L = inf{s >= 0 : F2(x-s)-s <= F1(x) <= F2(x+s)+s for all x}.

    Feasibility in s is monotone, so a bisection brackets the optimum; the
    optimum itself is always a jump-location difference or a cumulative-weight
    difference, and the bracket is snapped onto the smallest feasible such
    candidate, giving the exact value.
    """
    x1, c1 = mu1.locations, mu1.cum_weights
    x2, c2 = mu2.locations, mu2.cum_weights
    if _levy_feasible(x1, c1, x2, c2, 0.0, slack=0.0):
        return 0.0

    hi = max(1.0, float(x1[-1] - x2[0]), float(x2[-1] - x1[0]))
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _levy_feasible(x1, c1, x2, c2, mid):
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13:
            break

    width = max(1e-9, 4 * (hi - lo))
    cands = []
    aug1 = np.concatenate(([0.0], c1))
    aug2 = np.concatenate(([0.0], c2))
    for u, v in ((x1, x2), (x2, x1), (aug1, aug2), (aug2, aug1)):
        d = _close_diffs(np.asarray(u), np.asarray(v), hi, width)
        cands.append(d[d >= 0.0])
    cands = np.unique(np.concatenate(cands))
    if cands.size == 0:
        return float(hi)
    # feasibility is monotone in s: find the first feasible candidate
    lo_i, hi_i = 0, cands.size - 1
    if not _levy_feasible(x1, c1, x2, c2, float(cands[hi_i])):
        return float(hi)
    if _levy_feasible(x1, c1, x2, c2, float(cands[0])):
        return float(cands[0])
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if _levy_feasible(x1, c1, x2, c2, float(cands[mid])):
            hi_i = mid
        else:
            lo_i = mid
    return float(cands[hi_i])


# ---------------------------------------------------------------------------
# JSON measure literals
# ---------------------------------------------------------------------------

def measure_from_json(obj) -> SpectralMeasure:
    """Build a measure from its JSON literal form.

    Supported: {"atoms": [[loc, w], ...]}, {"point_mass": c},
    {"two_point": {"a": a, "b": b, "p": p}},
    {"semicircle": {"variance": v, "n": N}}.
    """
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ValueError(f"measure literal must be a single-key object, got {obj!r}")
    kind, spec = next(iter(obj.items()))
    if kind == "atoms":
        pairs = list(spec)
        return make_atoms([p[0] for p in pairs], [p[1] for p in pairs])
    if kind == "point_mass":
        return point_mass(float(spec))
    if kind == "two_point":
        return two_point(float(spec["a"]), float(spec["b"]),
                         float(spec.get("p", 0.5)))
    if kind == "semicircle":
        return semicircle(float(spec["variance"]), int(spec.get("n", 10_000)))
    raise ValueError(f"unknown measure kind {kind!r}")
