"""Randomly rotated matrix sums H = A + U B U* and their resolvent statistics.

A is kept diagonal throughout (its eigenbasis is the working basis, in which
the Haar-averaged resolvent is exactly diagonal), so G_A at any shifted
argument is available in closed form.  Per-sample quantities:

    m_H  = N^-1 Tr G_H,   f_A = N^-1 Tr(A G_H),   f_B = N^-1 Tr(U B U* G_H),

with the exact trace identity f_A + f_B = 1 + z m_H on every draw.  The
empirical subordination shifts are S_A = -E[f_A]/E[m_H], S_B = -E[f_B]/E[m_H].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.linalg.blas import zherk

from freesub.measures import SpectralMeasure, quantile

__all__ = [
    "Ensemble",
    "ResolventSample",
    "EnsembleAverages",
    "SpectralData",
    "DelocalizationResult",
    "InvariantViolationError",
    "ShiftBelowAxisError",
    "derive_seed",
    "sample_haar_unitary",
    "build_ensemble",
    "resolvent_from_unitary",
    "resolvent_sample",
    "mc_averages",
    "empirical_subordination",
    "mean_delta",
    "subordination_residual",
    "diagnostics_delta",
    "diagonality_offnorm",
    "spectral_data",
    "local_count",
    "delocalization_max",
]

IDENTITY_TOL = 1e-10        # trace identity / disc membership defect ceiling
_EIG_RESIDUAL_TOL = 1e-9


class InvariantViolationError(Exception):
    """An exact identity failed beyond numerical tolerance."""


class ShiftBelowAxisError(Exception):
    """Im(z + S_B) <= 0: the empirical shift left the upper half-plane."""


def derive_seed(master_seed: int, index: int) -> int:
    """Deterministic, order-independent 64-bit per-sample seed."""
    ss = np.random.SeedSequence((int(master_seed) & (2**63 - 1), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def sample_haar_unitary(n: int, seed: int) -> np.ndarray:
    """Exact Haar-distributed U(n) sample.

    Complex Ginibre matrix, QR, then each column of Q is multiplied by the
    unit phase that makes the corresponding diagonal entry of R real and
    positive.  Without the phase correction plain QR is *not* Haar.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    g = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def unitarity_defect(u: np.ndarray) -> float:
    n = u.shape[0]
    return float(np.max(np.abs(u.conj().T @ u - np.eye(n))))


def rotated_diagonal(u: np.ndarray, d: np.ndarray) -> np.ndarray:
    """U diag(d) U* for real d, via two rank-k Hermitian updates (zherk),
    measurably cheaper than the generic triple product at large N."""
    n = u.shape[0]
    w = np.zeros((n, n), dtype=complex, order="F")
    for mask, sign in ((d > 0, 1.0), (d < 0, -1.0)):
        if np.any(mask):
            p = np.asfortranarray(u[:, mask] * np.sqrt(sign * d[mask]))
            w = zherk(sign, p, beta=1.0, c=w, overwrite_c=1)
    # zherk fills the upper triangle only
    iu = np.triu_indices(n, 1)
    w[iu[1], iu[0]] = np.conj(w[iu])
    return w


@dataclass(frozen=True)
class Ensemble:
    """Deterministic diagonal spectra for the two summands."""

    a_diag: np.ndarray
    b_diag: np.ndarray
    n: int
    k_bound: float

    def __post_init__(self):
        a = np.asarray(self.a_diag, dtype=float)
        b = np.asarray(self.b_diag, dtype=float)
        object.__setattr__(self, "a_diag", a)
        object.__setattr__(self, "b_diag", b)
        if a.shape != (self.n,) or b.shape != (self.n,):
            raise ValueError("a_diag and b_diag must have length n")
        hi = max(np.max(np.abs(a)), np.max(np.abs(b)))
        if hi > self.k_bound:
            raise ValueError(f"spectrum exceeds k_bound: {hi} > {self.k_bound}")
        a.setflags(write=False)
        b.setflags(write=False)


def build_ensemble(mu_a: SpectralMeasure, mu_b: SpectralMeasure, n: int) -> Ensemble:
    """Spectra at the midpoint quantiles (k - 1/2)/n of each measure, so the
    empirical spectral measures converge to mu_a, mu_b in Levy distance."""
    if n < 1:
        raise ValueError("n must be >= 1")
    probs = (np.arange(1, n + 1) - 0.5) / n
    a = np.array([quantile(mu_a, p) for p in probs])
    b = np.array([quantile(mu_b, p) for p in probs])
    return Ensemble(a, b, n, max(mu_a.support_bound, mu_b.support_bound))


def _check_scalar_identities(z, m, f_a, f_b, what):
    eta = z.imag
    trace_defect = abs(f_a + f_b - 1.0 - z * m)
    disc_defect = max(0.0, abs(m - 0.5j / eta) - 0.5 / eta)
    if trace_defect > IDENTITY_TOL:
        raise InvariantViolationError(
            f"trace identity defect {trace_defect:.3e} on {what} at z={z}")
    if disc_defect > IDENTITY_TOL:
        raise InvariantViolationError(
            f"disc membership defect {disc_defect:.3e} on {what} at z={z}")
    if m.imag <= 0:
        raise InvariantViolationError(f"Im m = {m.imag:.3e} <= 0 on {what} at z={z}")
    return trace_defect, disc_defect


@dataclass(frozen=True)
class ResolventSample:
    """Per-draw resolvent functionals at one z; construction re-checks the
    exact trace identity and disc membership."""

    z: complex
    m_h: complex
    f_a: complex
    f_b: complex
    g_diag: np.ndarray
    g_full: Optional[np.ndarray]
    seed: int
    trace_defect: float = field(init=False)
    disc_defect: float = field(init=False)

    def __post_init__(self):
        td, dd = _check_scalar_identities(self.z, self.m_h, self.f_a, self.f_b,
                                          "sample")
        object.__setattr__(self, "trace_defect", td)
        object.__setattr__(self, "disc_defect", dd)
        if abs(self.m_h - np.mean(self.g_diag)) > IDENTITY_TOL:
            raise InvariantViolationError("m_h != mean(g_diag)")


@dataclass(frozen=True)
class EnsembleAverages:
    """Monte-Carlo averages at one z.  Beyond the plain means this carries the
    mixed accumulators mean(m*G) and mean(f_B*G), which let the exact
    error-term identity be evaluated in a single pass over samples."""

    z: complex
    n_samples: int
    mean_m: complex
    mean_f_a: complex
    mean_f_b: complex
    mean_g: np.ndarray
    var_m: float
    master_seed: int
    var_f_a: float = 0.0
    var_f_b: float = 0.0
    mean_mg: Optional[np.ndarray] = None
    mean_fg: Optional[np.ndarray] = None
    trace_defect: float = field(init=False)
    disc_defect: float = field(init=False)

    def __post_init__(self):
        td, dd = _check_scalar_identities(self.z, self.mean_m, self.mean_f_a,
                                          self.mean_f_b, "ensemble average")
        object.__setattr__(self, "trace_defect", td)
        object.__setattr__(self, "disc_defect", dd)
        n = self.mean_g.shape[0]
        if abs(self.mean_m - np.trace(self.mean_g) / n) > IDENTITY_TOL:
            raise InvariantViolationError("mean_m != Tr(mean_g)/N")


def resolvent_from_unitary(ens: Ensemble, z: complex, u: np.ndarray,
                           seed: int = -1, keep_full: bool = False) -> ResolventSample:
    """Resolvent functionals for one explicit rotation (tests force U = I here)."""
    if z.imag <= 0:
        raise ValueError("resolvent requires Im z > 0")
    n = ens.n
    b_rot = rotated_diagonal(u, ens.b_diag)
    h = b_rot.copy()
    h[np.diag_indices(n)] += ens.a_diag
    g = np.linalg.solve(h - z * np.eye(n), np.eye(n, dtype=complex))
    g_diag = np.diagonal(g).copy()
    m_h = complex(g_diag.mean())
    f_a = complex(np.dot(ens.a_diag, g_diag) / n)
    f_b = complex(np.sum(b_rot * g.T) / n)
    if keep_full and np.linalg.norm(g, 2) > 1.0 / z.imag + IDENTITY_TOL:
        raise InvariantViolationError("resolvent norm exceeds 1/Im z")
    return ResolventSample(z, m_h, f_a, f_b, g_diag,
                           g.copy() if keep_full else None, seed)


def resolvent_sample(ens: Ensemble, z: complex, seed: int,
                     keep_full: bool = False) -> ResolventSample:
    u = sample_haar_unitary(ens.n, seed)
    return resolvent_from_unitary(ens, z, u, seed=seed, keep_full=keep_full)


def _sample_arrays(ens, z, seed):
    """Raw per-sample results for the averaging loop (full G returned)."""
    n = ens.n
    u = sample_haar_unitary(n, seed)
    b_rot = rotated_diagonal(u, ens.b_diag)
    h = b_rot.copy()
    h[np.diag_indices(n)] += ens.a_diag
    g = np.linalg.solve(h - z * np.eye(n), np.eye(n, dtype=complex))
    g_diag = np.diagonal(g)
    m_h = complex(g_diag.mean())
    f_a = complex(np.dot(ens.a_diag, g_diag) / n)
    f_b = complex(np.sum(b_rot * g.T) / n)
    _check_scalar_identities(z, m_h, f_a, f_b, f"sample (seed {seed})")
    return g, m_h, f_a, f_b


def mc_averages(ens: Ensemble, z: complex, n_samples: int, master_seed: int,
                workers: int = 1) -> EnsembleAverages:
    """Arithmetic means of (m, f_A, f_B, G) plus the mixed accumulators, over
    per-sample seeds derived from (master_seed, index).

    With workers > 1 samples run on a thread pool (the dense solves release
    the GIL); the reduction consumes results in index order, so output is
    bit-identical regardless of worker count.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if z.imag <= 0:
        raise ValueError("mc_averages requires Im z > 0")
    n = ens.n
    g_sum = np.zeros((n, n), dtype=complex)
    mg_sum = np.zeros((n, n), dtype=complex)
    fg_sum = np.zeros((n, n), dtype=complex)
    ms = np.empty(n_samples, dtype=complex)
    fas = np.empty(n_samples, dtype=complex)
    fbs = np.empty(n_samples, dtype=complex)

    def reduce_one(idx, result):
        g, m_h, f_a, f_b = result
        np.add(g_sum, g, out=g_sum)
        np.add(mg_sum, m_h * g, out=mg_sum)
        np.add(fg_sum, f_b * g, out=fg_sum)
        ms[idx], fas[idx], fbs[idx] = m_h, f_a, f_b

    seeds = [derive_seed(master_seed, k) for k in range(n_samples)]
    if workers <= 1:
        for k, seed in enumerate(seeds):
            reduce_one(k, _sample_arrays(ens, z, seed))
    else:
        window = max(2 * workers, 4)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pending = {}
            next_submit = 0
            for k in range(n_samples):
                while next_submit < n_samples and len(pending) < window:
                    pending[next_submit] = pool.submit(
                        _sample_arrays, ens, z, seeds[next_submit])
                    next_submit += 1
                reduce_one(k, pending.pop(k).result())

    M = n_samples
    mean_m = complex(ms.mean())
    mean_fa = complex(fas.mean())
    mean_fb = complex(fbs.mean())
    if M > 1:
        var_m = float(np.sum(np.abs(ms - mean_m) ** 2) / (M - 1))
        var_fa = float(np.sum(np.abs(fas - mean_fa) ** 2) / (M - 1))
        var_fb = float(np.sum(np.abs(fbs - mean_fb) ** 2) / (M - 1))
    else:
        var_m = var_fa = var_fb = 0.0
    return EnsembleAverages(z, M, mean_m, mean_fa, mean_fb, g_sum / M,
                            var_m, master_seed, var_fa, var_fb,
                            mg_sum / M, fg_sum / M)


def empirical_subordination(avg: EnsembleAverages) -> tuple:
    """(S_A, S_B) = (-E[f_A]/E[m], -E[f_B]/E[m]); checks the exact identity
    S_A + S_B = -z - 1/E[m]."""
    s_a = -avg.mean_f_a / avg.mean_m
    s_b = -avg.mean_f_b / avg.mean_m
    defect = abs(s_a + s_b + avg.z + 1.0 / avg.mean_m)
    if defect > IDENTITY_TOL:
        raise InvariantViolationError(f"subordination sum identity defect {defect:.3e}")
    return s_a, s_b


def mean_delta(avg: EnsembleAverages, ens: Ensemble) -> np.ndarray:
    """Sample average of the per-draw error matrix

        Delta = (E[m] - m) G_H - G_A(z) (f_B - E[f_B]) G_H,

    assembled from the streaming accumulators (so no per-sample storage)."""
    if avg.mean_mg is None or avg.mean_fg is None:
        raise ValueError("averages lack the mixed accumulators")
    ga_z = 1.0 / (ens.a_diag - avg.z)
    cov_mg = avg.mean_mg - avg.mean_m * avg.mean_g
    cov_fg = avg.mean_fg - avg.mean_f_b * avg.mean_g
    return -cov_mg - ga_z[:, None] * cov_fg


def subordination_residual(avg: EnsembleAverages, ens: Ensemble,
                           direct: bool = False) -> tuple:
    """Error matrix R(z) = E[G_H](z) - G_A(z + S_B(z)) and its spectral norm.

    The default estimator evaluates R through the exact rewriting

        R = (1/E[m]) (A - z) G_A(z + S_B) E[Delta],

    whose sampling error inherits the O(1/N) size of Delta itself; the plain
    mean-difference (`direct=True`) estimates the same matrix but its noise
    floor is O(1/sqrt(n_samples)), independent of N.
    """
    _, s_b = empirical_subordination(avg)
    zp = avg.z + s_b
    if zp.imag <= 0:
        raise ShiftBelowAxisError(
            f"Im(z + S_B) = {zp.imag:.3e} <= 0 at z={avg.z}, N={ens.n}")
    ga_shift = 1.0 / (ens.a_diag - zp)
    if direct:
        r = avg.mean_g - np.diag(ga_shift)
    else:
        prefac = (ens.a_diag - avg.z) * ga_shift / avg.mean_m
        r = prefac[:, None] * mean_delta(avg, ens)
    return r, float(np.linalg.norm(r, 2))


@dataclass(frozen=True)
class DeltaDiagnostics:
    delta: np.ndarray
    psi: np.ndarray
    delta_norm: float
    psi_norm: float


def diagnostics_delta(sample: ResolventSample, avg: EnsembleAverages,
                      ens: Ensemble) -> DeltaDiagnostics:
    """Per-draw error matrix Delta and Psi = (1/E[m])(A - z) Delta.

    The draw's Delta is its own one-sample estimate of E[Delta]; average the
    `delta` matrices over draws (or use `mean_delta`) for the ensemble value.
    """
    if sample.g_full is None:
        raise ValueError("diagnostics_delta needs a sample with g_full retained")
    g = sample.g_full
    ga_z = 1.0 / (ens.a_diag - sample.z)
    delta = (avg.mean_m - sample.m_h) * g \
        - (sample.f_b - avg.mean_f_b) * (ga_z[:, None] * g)
    psi = ((ens.a_diag - sample.z) / avg.mean_m)[:, None] * delta
    return DeltaDiagnostics(delta, psi,
                            float(np.linalg.norm(delta, 2)),
                            float(np.linalg.norm(psi, 2)))


def diagonality_offnorm(avg: EnsembleAverages) -> float:
    """Largest off-diagonal magnitude of E[G]; exactly diagonal in the Haar
    limit when A is diagonal."""
    off = avg.mean_g.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.max(np.abs(off)))


@dataclass(frozen=True)
class SpectralData:
    """Eigenvalues (ascending) and, optionally, orthonormal eigenvectors.

    `window` marks a subset decomposition restricted to eigenvalues in the
    given interval (only those pairs are present)."""

    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray]
    window: Optional[tuple] = None

    def __post_init__(self):
        w = np.asarray(self.eigenvalues, dtype=float)
        object.__setattr__(self, "eigenvalues", w)
        if w.size and np.any(np.diff(w) < 0):
            raise InvariantViolationError("eigenvalues not ascending")


def _validate_eigh(h, w, v, h_norm):
    resid = h @ v - v * w
    if np.linalg.norm(resid, axis=0).max() > _EIG_RESIDUAL_TOL * max(h_norm, 1.0):
        raise InvariantViolationError("eigenpair residual above tolerance")
    gram = v.conj().T @ v
    if np.max(np.abs(gram - np.eye(v.shape[1]))) > _EIG_RESIDUAL_TOL:
        raise InvariantViolationError("eigenvectors not orthonormal")


def spectral_data(ens: Ensemble, seed: int, want_vectors: bool = True,
                  window: Optional[tuple] = None,
                  validate: bool = True) -> SpectralData:
    """Eigendecomposition of one sampled H = A + U B U*.

    want_vectors=False computes eigenvalues only; window=(lo, hi) restricts
    the decomposition to eigenpairs inside the interval (cheaper at large N).
    """
    n = ens.n
    u = sample_haar_unitary(n, seed)
    h = rotated_diagonal(u, ens.b_diag)
    h[np.diag_indices(n)] += ens.a_diag
    if window is not None:
        lo, hi = float(window[0]), float(window[1])
        w, v = scipy.linalg.eigh(h, subset_by_value=(lo, hi), driver="evr")
        if validate and w.size:
            _validate_eigh(h, w, v, np.abs(ens.a_diag).max() + np.abs(ens.b_diag).max())
        return SpectralData(w, v, (lo, hi))
    if not want_vectors:
        return SpectralData(np.linalg.eigvalsh(h), None)
    w, v = np.linalg.eigh(h)
    if validate:
        _validate_eigh(h, w, v, float(np.abs(w).max()))
    return SpectralData(w, v)


def local_count(spec: SpectralData, E: float, eta_star: float) -> float:
    """Normalized eigenvalue count in the closed window [E - eta*, E + eta*]:
    #{|lambda - E| <= eta*}/(2 eta* N)."""
    if eta_star <= 0:
        raise ValueError("eta_star must be positive")
    if spec.window is not None:
        raise ValueError("local_count needs the complete spectrum")
    n = spec.eigenvalues.size
    count = int(np.count_nonzero(np.abs(spec.eigenvalues - E) <= eta_star))
    return count / (2.0 * eta_star * n)


@dataclass(frozen=True)
class DelocalizationResult:
    max_coord_sq: float
    argmax: Optional[tuple]
    empty: bool


def delocalization_max(spec: SpectralData, interval: tuple) -> DelocalizationResult:
    """max |v_a(i)|^2 over eigenvectors with eigenvalue in the interval; an
    empty interval is flagged rather than raised."""
    if spec.eigenvectors is None:
        raise ValueError("delocalization_max needs eigenvectors")
    lo, hi = float(interval[0]), float(interval[1])
    if hi < lo:
        raise ValueError("empty interval")
    mask = (spec.eigenvalues >= lo) & (spec.eigenvalues <= hi)
    if not np.any(mask):
        return DelocalizationResult(float("nan"), None, True)
    coords = np.abs(spec.eigenvectors[:, mask]) ** 2
    i, a_local = np.unravel_index(np.argmax(coords), coords.shape)
    a_global = int(np.nonzero(mask)[0][a_local])
    return DelocalizationResult(float(coords[i, a_local]), (a_global, int(i)), False)
