"""Converged eigenpairs of 1D Schrodinger operators -u'' + V(t) u with a
confining potential V, on an adaptively truncated interval.

The discrete operator is the second-order central-difference Laplacian plus
the sampled potential, with Dirichlet conditions at +-L. Eigenvalues of the
discrete matrix come from Sturm-sequence bisection (LAPACK stebz), and
eigenvectors from inverse iteration. Continuum eigenvalues are obtained by
doubling L until the Dirichlet truncation is negligible (Agmon decay makes
the error exponentially small once V exceeds the energy level) and halving
the spacing with Richardson extrapolation until successive extrapolants
agree.

All containers are immutable after construction and every operation is a
pure function, so parameter sweeps may call into this module concurrently.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal, solve_banded


class SolverError(Exception):
    """Base class for numerical failures in this package."""


class AssemblyError(SolverError):
    """The potential produced non-finite samples."""


class ConvergenceError(SolverError):
    """Adaptive refinement ran out of budget.

    Carries the last two eigenvalue estimates so callers can judge how far
    the iteration got.
    """

    def __init__(self, message: str, estimates: tuple[float, float] | None = None):
        super().__init__(message)
        self.estimates = estimates


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on [-half_width, half_width], endpoints included."""

    half_width: float
    n_points: int

    def __post_init__(self):
        if not (self.half_width > 0):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.n_points < 16:
            raise ValueError(f"n_points must be >= 16, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    def points(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n_points)

    def interior_points(self) -> np.ndarray:
        return self.points()[1:-1]


@dataclass(frozen=True)
class ConfiningPotential:
    """Evaluation rule t -> V(t) plus the caller's growth declaration.

    `confining=True` asserts V(t) -> +inf as |t| -> inf; the adaptive
    truncation relies on it and refuses potentials without the witness.
    """

    func: Callable[[np.ndarray], np.ndarray]
    confining: bool = True

    def __call__(self, t):
        return np.asarray(self.func(np.asarray(t, dtype=float)), dtype=float)


def as_potential(potential) -> ConfiningPotential:
    if isinstance(potential, ConfiningPotential):
        return potential
    return ConfiningPotential(potential)


@dataclass(frozen=True)
class TridiagonalOperator:
    """Symmetric tridiagonal matrix acting on interior grid values."""

    diagonal: np.ndarray
    offdiagonal: np.ndarray
    grid: Grid1D

    def __post_init__(self):
        self.diagonal.setflags(write=False)
        self.offdiagonal.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.diagonal)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diagonal * v
        out[:-1] += self.offdiagonal * v[1:]
        out[1:] += self.offdiagonal * v[:-1]
        return out

    def norm_bound(self) -> float:
        """Infinity-norm bound, used for eigenvalue noise floors."""
        return float(np.max(np.abs(self.diagonal)) + 2.0 * np.max(np.abs(self.offdiagonal)))


@dataclass(frozen=True)
class Spectrum1D:
    """Low eigenpairs of a discrete 1D operator.

    Eigenvalues are those of the discrete matrix (ascending, simple);
    eigenfunctions (rows) live on the interior points and carry discrete
    L2 norm 1, i.e. spacing * sum(u^2) == 1. `convergence_estimate` holds a
    per-eigenvalue error indication against the continuum operator where
    available (plain residuals for a fixed-grid solve).
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    grid: Grid1D
    convergence_estimate: np.ndarray = field(default=None)

    def __post_init__(self):
        if np.any(np.diff(self.eigenvalues) <= 0):
            raise SolverError("eigenvalues not strictly increasing; "
                              "1D confining operators have simple spectrum")
        self.eigenvalues.setflags(write=False)
        self.eigenfunctions.setflags(write=False)

    def to_csv(self, path) -> None:
        """Columns t, u_0(t), ..., u_m(t), boundary zeros included."""
        t = self.grid.points()
        m = self.eigenfunctions.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"u_{i}" for i in range(m)])
            full = np.zeros((m, len(t)))
            full[:, 1:-1] = self.eigenfunctions
            for j in range(len(t)):
                w.writerow([repr(t[j])] + [repr(full[i, j]) for i in range(m)])

    def to_json_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "half_width": self.grid.half_width,
            "n_points": self.grid.n_points,
            "convergence_estimate": [float(v) for v in self.convergence_estimate]
            if self.convergence_estimate is not None else None,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def assemble(potential, grid: Grid1D) -> TridiagonalOperator:
    """Central-difference discretization of -d^2/dt^2 + V on the grid interior.

    Dirichlet conditions at +-half_width. Raises AssemblyError if V returns
    a non-finite sample, reporting the offending t.
    """
    pot = as_potential(potential)
    ti = grid.interior_points()
    v = pot(ti)
    bad = ~np.isfinite(v)
    if np.any(bad):
        where = ti[bad][:5]
        raise AssemblyError(f"potential non-finite at t={where.tolist()}")
    dt = grid.spacing
    diag = 2.0 / dt**2 + v
    off = np.full(len(ti) - 1, -1.0 / dt**2)
    return TridiagonalOperator(diag, off, grid)


def sturm_count(operator: TridiagonalOperator, energy: float) -> int:
    """Number of eigenvalues strictly below `energy`.

    Sign-change count of the Sturm sequence, evaluated through the stable
    LDL^T pivot recurrence.
    """
    d = operator.diagonal
    e2 = operator.offdiagonal**2
    tiny = np.finfo(float).tiny
    count = 0
    q = d[0] - energy
    if q < 0:
        count += 1
    for i in range(1, len(d)):
        if q == 0.0:
            q = tiny
        q = d[i] - energy - e2[i - 1] / q
        if q < 0:
            count += 1
    return count


def _eigenvalues_only(operator: TridiagonalOperator, m_count: int) -> np.ndarray:
    if m_count > operator.size:
        raise SolverError(f"requested {m_count} eigenvalues from operator of size "
                          f"{operator.size}")
    try:
        vals = eigvalsh_tridiagonal(operator.diagonal, operator.offdiagonal,
                                    select="i", select_range=(0, m_count - 1),
                                    lapack_driver="stebz")
    except Exception as exc:  # LAPACK reported a bisection failure
        raise SolverError(f"Sturm bisection failed: {exc}") from exc
    return np.sort(vals)


def _inverse_iteration(operator: TridiagonalOperator, eigenvalue: float,
                       sweeps: int = 3) -> np.ndarray:
    """Eigenvector by inverse iteration; shift nudged off the eigenvalue."""
    n = operator.size
    shift = eigenvalue + 1e-10 * abs(eigenvalue) + 1e-300
    ab = np.zeros((3, n))
    ab[0, 1:] = operator.offdiagonal
    ab[1, :] = operator.diagonal - shift
    ab[2, :-1] = operator.offdiagonal
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(sweeps):
        v = solve_banded((1, 1), ab, v)
        v /= np.linalg.norm(v)
    dt = operator.grid.spacing
    v /= np.sqrt(np.sum(v * v) * dt)
    if v[int(np.argmax(np.abs(v)))] < 0:
        v = -v
    return v


def lowest_eigenpairs(operator: TridiagonalOperator, m_count: int,
                      tol: float = 1e-12) -> Spectrum1D:
    """The m_count smallest eigenpairs of the discrete operator.

    Eigenvalues via Sturm-sequence bisection, eigenvectors via inverse
    iteration, normalized to discrete L2 norm 1. `convergence_estimate`
    holds the eigenpair residuals |T u - lambda u| relative to |u|.
    """
    if m_count < 1:
        raise ValueError("m_count must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    vals = _eigenvalues_only(operator, m_count)
    vecs = np.empty((m_count, operator.size))
    resid = np.empty(m_count)
    dt = operator.grid.spacing
    for i, lam in enumerate(vals):
        v = _inverse_iteration(operator, lam)
        # two-fold Gram-Schmidt against lower states guards near-degeneracies
        for j in range(i):
            v -= (np.sum(v * vecs[j]) * dt) * vecs[j]
        nv = np.sqrt(np.sum(v * v) * dt)
        v /= nv
        vecs[i] = v
        resid[i] = np.linalg.norm(operator.matvec(v) - lam * v) / np.linalg.norm(v)
    return Spectrum1D(vals, vecs, operator.grid, resid)


def boundary_mass(spectrum: Spectrum1D, fraction: float = 0.9) -> float:
    """Discrete L2 mass of the highest computed eigenfunction beyond
    fraction * half_width; the Dirichlet truncation-quality indicator."""
    t = spectrum.grid.interior_points()
    u = spectrum.eigenfunctions[-1]
    edge = np.abs(t) > fraction * spectrum.grid.half_width
    return float(np.sum(u[edge] ** 2) * spectrum.grid.spacing)


def _initial_half_width(pot: ConfiningPotential, m: int,
                        probe_points: int = 257) -> float:
    """Smallest L with V(+-L) >= 4 * rough level estimate.

    Doubles from L=1 to bracket the crossing, then bisects down to it; a
    needlessly large box would put enormous potential samples on the wall
    and raise the floating-point noise floor of the eigenvalue bisection.
    """
    L = 1.0
    lam = None
    for _ in range(60):
        grid = Grid1D(L, probe_points)
        lam = _eigenvalues_only(assemble(pot, grid), m + 1)[m]
        wall = min(float(pot(-L)), float(pot(L)))
        if wall >= 4.0 * max(lam, 0.25):
            break
        L *= 2.0
    else:
        raise ConvergenceError("could not find a confining box; is V confining?")
    if L == 1.0:
        return L
    target = 4.0 * max(lam, 0.25)
    lo, hi = L / 2.0, L
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if min(float(pot(-mid)), float(pot(mid))) >= target:
            hi = mid
        else:
            lo = mid
    return 1.02 * hi


def eigenvalue_converged(potential, m: int, tol: float,
                         m_count: Optional[int] = None,
                         probe_points: int = 513,
                         max_refinements: int = 12) -> tuple[float, Spectrum1D]:
    """m-th eigenvalue of the continuum operator -u'' + V u on the line.

    Doubles the truncation half-width until the wall exceeds the level and
    the boundary eigenfunction mass drops below tol^2, then halves the
    spacing with Richardson extrapolation until successive extrapolants
    differ by less than tol (or by less than the floating-point noise floor
    of the discrete eigenproblem, whichever is larger).

    Returns (extrapolated eigenvalue, Spectrum1D on the finest grid). The
    spectrum tracks max(m_count, m+1) eigenpairs; its convergence_estimate
    is the distance from each discrete eigenvalue to its extrapolant plus
    the final extrapolant increment.
    """
    pot = as_potential(potential)
    if not pot.confining:
        raise ValueError("potential lacks the confining declaration")
    if tol <= 0:
        raise ValueError("tol must be positive")
    track = max(m_count or 0, m + 1)

    L = _initial_half_width(pot, m)
    for _ in range(24):
        grid = Grid1D(L, probe_points)
        spec = lowest_eigenpairs(assemble(pot, grid), track)
        lam = spec.eigenvalues[m]
        wall = min(float(pot(-L)), float(pot(L)))
        if wall >= lam + 1.0 and boundary_mass(spec) < max(tol**2, 1e-26):
            break
        L *= 2.0
    else:
        raise ConvergenceError("half-width doubling exhausted",
                               estimates=(float(lam), float(lam)))

    n = probe_points
    op = assemble(pot, Grid1D(L, n))
    prev = _eigenvalues_only(op, track)
    prev_R = None
    for _ in range(max_refinements):
        n = 2 * (n - 1) + 1
        op = assemble(pot, Grid1D(L, n))
        cur = _eigenvalues_only(op, track)
        lam_R = (4.0 * cur - prev) / 3.0
        noise = 32.0 * np.finfo(float).eps * op.norm_bound()
        if prev_R is not None:
            step = float(np.max(np.abs(lam_R - prev_R)))
            if step < max(tol, noise):
                spec = lowest_eigenpairs(op, track)
                est = np.abs(lam_R - cur) + step
                spec = Spectrum1D(spec.eigenvalues, spec.eigenfunctions,
                                  spec.grid, est)
                return float(lam_R[m]), spec
        prev_R = lam_R
        prev = cur
    raise ConvergenceError(
        f"spacing refinement exhausted at n={n}",
        estimates=(float(prev_R[m]), float(lam_R[m])))


def count_sign_changes(u: np.ndarray, floor: float = 1e-8) -> int:
    """Interior sign changes of a discrete eigenfunction, ignoring samples
    below floor * max|u| (where the decaying tail is pure noise)."""
    v = u[np.abs(u) > floor * np.max(np.abs(u))]
    s = np.sign(v)
    return int(np.sum(s[1:] != s[:-1]))


@dataclass(frozen=True)
class ParityResult:
    label: str            # "even" | "odd" | "none"
    residual: float


def parity_classify(spectrum: Spectrum1D,
                    residual_cap: float = 1e-6) -> list[ParityResult]:
    """Classify each eigenfunction as even or odd under t -> -t.

    The caller asserts the potential is even. For each eigenfunction the
    reflection residual min over s in {+1,-1} of |u(-t) - s u(t)| decides the
    label; if both residuals exceed `residual_cap` the state is labelled
    "none" (non-even potential or degenerate numerics).
    """
    out = []
    for u in spectrum.eigenfunctions:
        rev = u[::-1]
        scale = np.sqrt(np.sum(u * u))
        r_even = np.linalg.norm(rev - u) / scale
        r_odd = np.linalg.norm(rev + u) / scale
        if min(r_even, r_odd) > residual_cap:
            out.append(ParityResult("none", float(min(r_even, r_odd))))
        elif r_even <= r_odd:
            out.append(ParityResult("even", float(r_even)))
        else:
            out.append(ParityResult("odd", float(r_odd)))
    return out
