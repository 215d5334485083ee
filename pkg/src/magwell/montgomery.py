"""Band-function analysis for the one-parameter operator family

    Q(alpha, beta) = -d^2/dt^2 + (beta t^{k+1}/(k+1) - alpha)^2

on the line: scaling reduction to beta=1, minimization of the lowest band
lambda_0(alpha, 1) over alpha, eigenvalue derivatives in alpha, the
stationarity and norm identities satisfied at the minimum, non-degeneracy
criteria for the second derivative, and profile exports.

Everything reduces to converged 1D eigenpairs from `sl_engine`; quadratures
use the plain spacing-weighted sum on the converged grid, which is exactly
the discrete Hellmann-Feynman pairing of the assembled matrix (so the
stationarity residual of a polished minimizer is at rounding level, not at
grid level).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .sl_engine import (
    ConfiningPotential,
    ConvergenceError,
    Grid1D,
    SolverError,
    Spectrum1D,
    TridiagonalOperator,
    _eigenvalues_only,
    assemble,
    eigenvalue_converged,
    lowest_eigenpairs,
)

GOLDEN_ALPHA_TOL = 1e-6          # alpha resolution of the golden-section stage
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ModelParams:
    """One member of the operator family: (k, alpha, beta)."""

    k: int
    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.k, (int, np.integer)) and self.k >= 1):
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.beta == 0:
            raise ValueError("beta must be nonzero")


def family_potential(k: int, alpha: float, beta: float = 1.0) -> ConfiningPotential:
    """The confining potential (beta t^{k+1}/(k+1) - alpha)^2."""

    def V(t):
        return (beta * t ** (k + 1) / (k + 1) - alpha) ** 2

    return ConfiningPotential(V)


def reduce_to_unit_beta(params: ModelParams) -> tuple[float, float]:
    """Map (k, alpha, beta) to the equivalent (alpha', beta'=|beta|) problem.

    beta < 0 is removed first: for even k the substitution t -> -t flips the
    sign of t^{k+1} (so beta -> -beta at the same alpha), while for odd k
    t^{k+1} is even and the global sign flip of the linear expression gives
    lambda(alpha, beta) = lambda(-alpha, -beta) instead.
    """
    alpha, beta = params.alpha, params.beta
    if beta < 0:
        beta = -beta
        if params.k % 2 == 1:
            alpha = -alpha
    return alpha, beta


def lambda_m(params: ModelParams, m: int, tol: float = 1e-8) -> float:
    """m-th eigenvalue of Q(alpha, beta) via the exact scaling reduction

        lambda(alpha, beta) = beta^{2/(k+2)} lambda(beta^{-1/(k+2)} alpha, 1)

    for beta > 0 (a unitary dilation, hence valid for every eigenvalue).
    """
    alpha, beta = reduce_to_unit_beta(params)
    k = params.k
    scale = beta ** (2.0 / (k + 2))
    alpha1 = beta ** (-1.0 / (k + 2)) * alpha
    value, _ = eigenvalue_converged(family_potential(k, alpha1), m, tol / scale)
    return scale * value


def lambda_m_direct(params: ModelParams, m: int, tol: float = 1e-8) -> float:
    """m-th eigenvalue computed with beta kept inside the potential.

    Bypasses the scaling reduction; exists so the scaling relation can be
    verified against an independent route.
    """
    alpha, beta = reduce_to_unit_beta(params)
    value, _ = eigenvalue_converged(family_potential(params.k, alpha, beta), m, tol)
    return value


# ---------------------------------------------------------------------------
# fixed-grid discrete band function helpers

def _discrete_lambda0(k: int, alpha: float, op_grid: Grid1D) -> float:
    op = assemble(family_potential(k, alpha), op_grid)
    return float(_eigenvalues_only(op, 1)[0])


def _discrete_hf(k: int, alpha: float, grid: Grid1D) -> tuple[float, float, Spectrum1D]:
    """(d lambda_0/d alpha, lambda_0, spectrum) of the discrete operator.

    The spacing-weighted quadrature of the Hellmann-Feynman integrand is the
    exact alpha-derivative of the discrete eigenvalue.
    """
    op = assemble(family_potential(k, alpha), grid)
    spec = lowest_eigenpairs(op, 1)
    u = spec.eigenfunctions[0]
    t = grid.interior_points()
    w = t ** (k + 1) / (k + 1) - alpha
    hf = -2.0 * float(np.sum(w * u * u) * grid.spacing)
    return hf, float(spec.eigenvalues[0]), spec


def dlambda_dalpha(k: int, alpha: float, tol: float = 1e-8) -> float:
    """d lambda_0 / d alpha at (k, alpha, beta=1) by the Hellmann-Feynman
    quadrature -2 * integral of (t^{k+1}/(k+1) - alpha) u0^2 over the
    converged grid."""
    _, spec = eigenvalue_converged(family_potential(k, alpha), 0, tol)
    hf, _, _ = _discrete_hf(k, alpha, spec.grid)
    return hf


def _alpha_derivative_solve(k: int, alpha: float, op: TridiagonalOperator,
                            spectrum: Spectrum1D, rtol: float = 1e-9
                            ) -> tuple[np.ndarray, float]:
    """Solve (T - lambda_0) w = 2(t^{k+1}/(k+1) - alpha) u0 on span{u0}^perp.

    Returns (w = du0/dalpha on the grid, relative residual). The system is
    made nonsingular by the tiny inverse-iteration shift; the u0 component
    excited through that shift is projected away, and one step of iterative
    refinement removes the rest.
    """
    grid = op.grid
    dt = grid.spacing
    t = grid.interior_points()
    u = spectrum.eigenfunctions[0]
    lam = float(spectrum.eigenvalues[0])
    w = t ** (k + 1) / (k + 1) - alpha
    rhs = 2.0 * w * u
    rhs -= (np.sum(rhs * u) * dt) * u

    n = op.size
    ab = np.zeros((3, n))
    ab[0, 1:] = op.offdiagonal
    ab[1, :] = op.diagonal - (lam + 1e-10 * abs(lam))
    ab[2, :-1] = op.offdiagonal
    x = solve_banded((1, 1), ab, rhs)
    x -= (np.sum(x * u) * dt) * u
    for _ in range(2):
        r = rhs - (op.matvec(x) - lam * x)
        dx = solve_banded((1, 1), ab, r)
        x += dx
        x -= (np.sum(x * u) * dt) * u
    resid = float(np.linalg.norm(op.matvec(x) - lam * x - rhs)
                  / np.linalg.norm(rhs))
    if resid > rtol:
        raise SolverError(f"reduced-resolvent solve stalled: residual {resid:.2e}")
    return x, resid


def _d2_on_grid(k: int, alpha: float, grid: Grid1D) -> tuple[float, np.ndarray, Spectrum1D]:
    """Discrete second derivative of the band function on a fixed grid,
    through the reduced-resolvent route:  2 - 4 <w u0, du0/dalpha>."""
    op = assemble(family_potential(k, alpha), grid)
    spec = lowest_eigenpairs(op, 1)
    x, _ = _alpha_derivative_solve(k, alpha, op, spec)
    t = grid.interior_points()
    u = spec.eigenfunctions[0]
    w = t ** (k + 1) / (k + 1) - alpha
    d2 = 2.0 - 4.0 * float(np.sum(w * u * x) * grid.spacing)
    return d2, x, spec


def d2lambda_dalpha2(k: int, alpha: float, tol: float = 1e-6) -> float:
    """Second alpha-derivative of the lowest band at (k, alpha, beta=1).

    Primary route: solve the reduced-resolvent equation for du0/dalpha on
    the orthogonal complement of u0 (valid at any alpha once the parallel
    component is projected out) and evaluate 2 - 4 * integral of
    (t^{k+1}/(k+1) - alpha) u0 du0/dalpha.

    A mandatory cross-check differences the discrete Hellmann-Feynman
    derivative on the same grid (step 1e-3); a mismatch beyond 10 * tol
    raises, since both routes compute the same discrete quantity.
    """
    _, spec = eigenvalue_converged(family_potential(k, alpha), 0, tol)
    grid = spec.grid
    d2, _, _ = _d2_on_grid(k, alpha, grid)
    delta = 1e-3
    hf_p, _, _ = _discrete_hf(k, alpha + delta, grid)
    hf_m, _, _ = _discrete_hf(k, alpha - delta, grid)
    d2_fd = (hf_p - hf_m) / (2.0 * delta)
    if abs(d2 - d2_fd) > 10.0 * tol:
        raise SolverError(
            f"second-derivative cross-check failed: resolvent {d2:.8f} vs "
            f"finite difference {d2_fd:.8f}")
    return d2


# ---------------------------------------------------------------------------
# band minimization

@dataclass(frozen=True)
class MinimizerReport:
    """Converged facts about the band minimum for one k."""

    k: int
    alpha_min: float
    nu_hat: float
    lambda1: float
    lambda2: float
    d2: float
    d2_lower_bound: float
    condik_holds: bool
    condik_margin: float
    condik_odd_holds: Optional[bool]
    condik_odd_margin: Optional[float]
    norm_identity_residual: float
    hf_residual: float
    local_minima_scan: tuple[tuple[float, float], ...]

    def validate(self, alpha_tol: float = 1e-4, hf_tol: float = 1e-5) -> None:
        if self.nu_hat < 0:
            raise SolverError(f"nu_hat negative: {self.nu_hat}")
        if not self.lambda1 > self.nu_hat:
            raise SolverError("lambda1 must exceed nu_hat")
        if self.hf_residual > hf_tol:
            raise SolverError(f"stationarity residual too large: {self.hf_residual:.2e}")
        if self.k % 2 == 0 and abs(self.alpha_min) > alpha_tol:
            raise SolverError(
                f"even k={self.k} expected alpha_min ~ 0, got {self.alpha_min}")

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha_min": self.alpha_min,
            "nu_hat": self.nu_hat,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "d2": self.d2,
            "d2_lower_bound": self.d2_lower_bound,
            "condik_holds": self.condik_holds,
            "condik_margin": self.condik_margin,
            "condik_odd_holds": self.condik_odd_holds,
            "condik_odd_margin": self.condik_odd_margin,
            "norm_identity_residual": self.norm_identity_residual,
            "hf_residual": self.hf_residual,
            "local_minima_scan": [list(p) for p in self.local_minima_scan],
        }


@dataclass(frozen=True)
class MinimizerState:
    """MinimizerReport plus the converged grid data the report came from."""

    report: MinimizerReport
    spectrum: Spectrum1D          # three eigenpairs at alpha_min on the final grid
    du0_dalpha: np.ndarray        # eigenvector alpha-derivative on the same grid
    d2_resolvent_residual: float


def _newton_polish(k: int, alpha: float, grid: Grid1D,
                   max_steps: int = 8) -> float:
    """Drive the discrete Hellmann-Feynman derivative to rounding level on a
    fixed grid. Quadratic flatness makes plain golden section stall near the
    minimum; Newton on the analytic derivative does not."""
    g, _, _ = _discrete_hf(k, alpha, grid)
    g_eps, _, _ = _discrete_hf(k, alpha + 1e-4, grid)
    slope = (g_eps - g) / 1e-4
    for _ in range(max_steps):
        if slope <= 0:
            break
        step = -g / slope
        alpha += step
        g, _, _ = _discrete_hf(k, alpha, grid)
        if abs(step) < 1e-13 or abs(g) < 1e-12:
            break
    return alpha


def _golden_section(f: Callable[[float], float], a: float, b: float,
                    xtol: float) -> float:
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > xtol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def scan_range(k: int) -> tuple[float, float]:
    """Generous bracketing range for the band minimum."""
    return -1.0, 2.0 + k


def minimize_alpha(k: int, tol: float = 1e-6, scan_points: int = 40) -> MinimizerReport:
    return minimizer_state(k, tol, scan_points).report


_STATE_CACHE: dict[tuple[int, float, int], MinimizerState] = {}


def minimizer_state(k: int, tol: float = 1e-6, scan_points: int = 40) -> MinimizerState:
    """Locate the band minimum and populate every derived quantity.

    Stages: coarse scan of lambda_0(alpha, 1) over the bracketing range;
    golden-section refinement (alpha tolerance 1e-6) of every bracketed
    local minimum on a frozen reference grid; Newton polish of the global
    minimizer against the discrete Hellmann-Feynman derivative; final
    re-convergence of nu_hat, lambda_1, lambda_2 at tol/10 and evaluation of
    the identities and non-degeneracy data on the final grid.

    Results are cached per (k, tol, scan_points); states are immutable.
    """
    key = (k, float(tol), scan_points)
    if key in _STATE_CACHE:
        return _STATE_CACHE[key]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")

    lo, hi = scan_range(k)
    alphas = np.linspace(lo, hi, scan_points)
    scan_tol = max(tol, 1e-5)
    vals = np.array([
        eigenvalue_converged(family_potential(k, a), 0, scan_tol)[0]
        for a in alphas
    ])
    i_min = int(np.argmin(vals))
    if i_min in (0, scan_points - 1):
        raise ConvergenceError(
            f"band minimum at scan boundary alpha={alphas[i_min]:.3f}; "
            "scan range too small")

    # frozen reference grid at the scan minimizer
    _, ref_spec = eigenvalue_converged(family_potential(k, alphas[i_min]), 0,
                                       min(tol, 1e-6) / 10.0)
    ref_grid = ref_spec.grid

    def band(a: float) -> float:
        return _discrete_lambda0(k, a, ref_grid)

    brackets = [i for i in range(1, scan_points - 1)
                if vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]]
    local_minima = []
    for i in brackets:
        a_loc = _golden_section(band, alphas[i - 1], alphas[i + 1], GOLDEN_ALPHA_TOL)
        a_loc = _newton_polish(k, a_loc, ref_grid)
        lam_loc, _ = eigenvalue_converged(family_potential(k, a_loc), 0, tol)
        local_minima.append((float(a_loc), float(lam_loc)))
    alpha_min = min(local_minima, key=lambda p: p[1])[0]

    # final grid at tol/10, then re-polish the minimizer on it
    nu_hat, fine_spec = eigenvalue_converged(family_potential(k, alpha_min), 0,
                                             tol / 10.0)
    fine_grid = fine_spec.grid
    alpha_min = _newton_polish(k, alpha_min, fine_grid)
    nu_hat, _ = eigenvalue_converged(family_potential(k, alpha_min), 0, tol / 10.0)
    lam1, _ = eigenvalue_converged(family_potential(k, alpha_min), 1, tol / 10.0)
    lam2, spec = eigenvalue_converged(family_potential(k, alpha_min), 2, tol / 10.0,
                                      m_count=3)
    grid = spec.grid
    op = assemble(family_potential(k, alpha_min), grid)

    t = grid.interior_points()
    dt = grid.spacing
    u0 = spec.eigenfunctions[0]
    w = t ** (k + 1) / (k + 1) - alpha_min
    hf_residual = abs(-2.0 * float(np.sum(w * u0 * u0) * dt))
    norm_residual = abs(float(np.sum(w * w * u0 * u0) * dt) - nu_hat / (k + 2))

    du0, solve_resid = _alpha_derivative_solve(k, alpha_min, op, spec)
    d2 = 2.0 - 4.0 * float(np.sum(w * u0 * du0) * dt)

    bound = 2.0 * ((k + 2) * lam1 - (k + 6) * nu_hat) / ((k + 2) * (lam1 - nu_hat))
    margin = (k + 2) * lam1 - (k + 6) * nu_hat
    if k % 2 == 1:
        odd_margin = (k + 2) * lam2 - (k + 6) * nu_hat
        condik_odd_holds, condik_odd_margin = bool(odd_margin > 0), float(odd_margin)
    else:
        condik_odd_holds, condik_odd_margin = None, None

    report = MinimizerReport(
        k=k,
        alpha_min=float(alpha_min),
        nu_hat=float(nu_hat),
        lambda1=float(lam1),
        lambda2=float(lam2),
        d2=float(d2),
        d2_lower_bound=float(bound),
        condik_holds=bool(margin > 0),
        condik_margin=float(margin),
        condik_odd_holds=condik_odd_holds,
        condik_odd_margin=condik_odd_margin,
        norm_identity_residual=float(norm_residual),
        hf_residual=float(hf_residual),
        local_minima_scan=tuple(local_minima),
    )
    report.validate()
    state = MinimizerState(report=report, spectrum=spec, du0_dalpha=du0,
                           d2_resolvent_residual=solve_resid)
    _STATE_CACHE[key] = state
    return state


# ---------------------------------------------------------------------------
# identities and criteria

@dataclass(frozen=True)
class IdentityReport:
    k: int
    stationarity_residual: float      # |integral (t^{k+1}/(k+1)-alpha_min) u0^2|
    norm_residual: float              # | ||w u0||^2 - nu_hat/(k+2) |
    tol: float

    @property
    def passed(self) -> bool:
        return (self.stationarity_residual < self.tol
                and self.norm_residual < self.tol)


def verify_identities(k: int, tol: float = 1e-5) -> IdentityReport:
    """Residuals of the stationarity and norm identities at the minimum.

    Both are evaluated from the converged eigenfunction; the norm identity
    compares the quadrature of ((t^{k+1}/(k+1) - alpha_min) u0)^2 against
    nu_hat/(k+2). Residuals are always reported; `passed` applies tol.
    """
    st = minimizer_state(k)
    return IdentityReport(
        k=k,
        stationarity_residual=st.report.hf_residual,
        norm_residual=st.report.norm_identity_residual,
        tol=tol,
    )


@dataclass(frozen=True)
class NondegeneracyReport:
    k: int
    condik_holds: bool
    condik_margin: float
    condik_odd_holds: Optional[bool]
    condik_odd_margin: Optional[float]
    d2_lower_bound: float
    d2: float


def nondegeneracy_check(k: int, tol: float = 1e-3) -> NondegeneracyReport:
    """Evaluate the non-degeneracy criterion (k+2) lambda_1 > (k+6) nu_hat,
    its odd-k refinement with lambda_2, and the induced lower bound for the
    second derivative of the band function. Raises if the computed second
    derivative undercuts the bound by more than tol (the bound's derivation
    forbids that)."""
    st = minimizer_state(k)
    r = st.report
    if r.condik_holds and r.d2 < r.d2_lower_bound - tol:
        raise SolverError(
            f"k={k}: d2 {r.d2:.6f} below its lower bound {r.d2_lower_bound:.6f}")
    return NondegeneracyReport(
        k=k,
        condik_holds=r.condik_holds,
        condik_margin=r.condik_margin,
        condik_odd_holds=r.condik_odd_holds,
        condik_odd_margin=r.condik_odd_margin,
        d2_lower_bound=r.d2_lower_bound,
        d2=r.d2,
    )


# ---------------------------------------------------------------------------
# profiles and asymptotic regimes

@dataclass(frozen=True)
class ProfileTable:
    """Sampled band profile with its quadratic approximation at the minimum."""

    k: int
    alpha: np.ndarray
    lambda0: np.ndarray
    lambda_quad: np.ndarray
    alpha_min: float
    nu_hat: float
    d2: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "lambda0", "lambda_quad"])
            for a, l0, lq in zip(self.alpha, self.lambda0, self.lambda_quad):
                w.writerow([repr(float(a)), repr(float(l0)), repr(float(lq))])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "k": self.k,
                "alpha_min": self.alpha_min,
                "nu_hat": self.nu_hat,
                "d2": self.d2,
                "rows": [[float(a), float(l), float(q)] for a, l, q in
                         zip(self.alpha, self.lambda0, self.lambda_quad)],
            }, fh, indent=2, sort_keys=True)


def profile(k: int, alpha_range: tuple[float, float], n_samples: int,
            tol: float = 1e-6) -> ProfileTable:
    """Tabulate lambda_0(alpha, 1) and the quadratic approximation

        lambda_quad(alpha) = nu_hat + (d2/2) (alpha - alpha_min)^2

    over alpha_range. lambda_quad(alpha_min) equals nu_hat by construction.
    """
    st = minimizer_state(k)
    r = st.report
    alphas = np.linspace(alpha_range[0], alpha_range[1], n_samples)
    lam = np.array([
        eigenvalue_converged(family_potential(k, a), 0, tol)[0] for a in alphas
    ])
    quad = r.nu_hat + 0.5 * r.d2 * (alphas - r.alpha_min) ** 2
    return ProfileTable(k=k, alpha=alphas, lambda0=lam, lambda_quad=quad,
                        alpha_min=r.alpha_min, nu_hat=r.nu_hat, d2=r.d2)


def large_alpha_prediction(k: int, alpha: float) -> float:
    """Leading semiclassical growth of the band for alpha -> +infinity.

    The potential wells sit at t* with t*^{k+1}/(k+1) = alpha; the harmonic
    frequency there is t*^k, giving

        lambda_0(alpha, 1) ~ ((k+1) alpha)^{k/(k+1)}.
    """
    return ((k + 1) * alpha) ** (k / (k + 1))


@dataclass(frozen=True)
class LargeAlphaRow:
    alpha: float
    lambda0: float
    predicted: float

    @property
    def ratio(self) -> float:
        return self.lambda0 / self.predicted


def large_alpha_check(k: int, alpha_list: Sequence[float],
                      tol: float = 1e-6) -> list[LargeAlphaRow]:
    """Ratio of the computed band to its large-alpha asymptotic growth law,
    for odd k and increasing alpha. The approach to 1 is monotone over a
    well-chosen list; callers assert the loose 10% window at alpha = 50."""
    if k % 2 == 0:
        raise ValueError("large-alpha growth check applies to odd k")
    rows = []
    for a in alpha_list:
        lam, _ = eigenvalue_converged(family_potential(k, a), 0, tol)
        rows.append(LargeAlphaRow(alpha=float(a), lambda0=float(lam),
                                  predicted=large_alpha_prediction(k, a)))
    return rows
