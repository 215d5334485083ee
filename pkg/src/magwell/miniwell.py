"""Effective operator of a non-degenerate miniwell: a second-scale magnetic
well formed where the field intensity along the vanishing hypersurface
attains its minimum.

Given pointwise geometric data at the miniwell (the field coefficient
vector, its first derivatives, the Hessian of its squared norm, the next
Taylor coefficient of the vector potential, and first-order metric data),
this module assembles the quadratic model operator

    K = c_omega * Delta_par + Delta_perp + sigma^T Omega sigma + A

acting on R^{n-1}, where Delta_par is the (negative) second derivative
along the distinguished direction e_omega, Delta_perp the Laplacian on its
orthogonal complement, Omega a symmetric matrix built from the miniwell
curvature, and A a constant (complex when the well sits at a nonzero
critical alpha and the field divergence does not vanish).

Both spectral branches are provided: the non-degenerate branch (c_omega>0)
has the anisotropic-oscillator point spectrum, the degenerate branch
(c_omega=0) a half line starting at the bottom of a reduced oscillator.
A direct finite-difference diagonalization serves as the validation oracle.
"""
from __future__ import annotations

import heapq
import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .sl_engine import ConvergenceError, SolverError, Spectrum1D
from .montgomery import MinimizerReport, MinimizerState

GRADIENT_TOL = 1e-8     # rejection threshold for the minimum condition


@dataclass(frozen=True)
class MiniwellGeometry:
    """Pointwise data of the field and metric at the miniwell.

    Vectors have length n-1 and matrices are (n-1) x (n-1); indices follow
    [component j, coordinate r] for `domega01`. `domega_div` is accepted as
    an independent input (it equals trace(domega01) for data derived from an
    actual field; leaving it None uses that trace).
    """

    n: int
    omega01: np.ndarray
    domega01: np.ndarray
    hess_abs2: np.ndarray
    omega02: np.ndarray = None
    gdot00: float = 0.0
    gdot0j: np.ndarray = None
    gdotjl: np.ndarray = None
    gamma00: float = 0.0
    gammaj0: np.ndarray = None
    domega_div: Optional[float] = None

    def __post_init__(self):
        d = self.n - 1
        if self.n < 2:
            raise ValueError(f"ambient dimension must be >= 2, got {self.n}")

        def arr(name, value, shape, default=0.0):
            if value is None:
                value = np.full(shape, default)
            value = np.asarray(value, dtype=float)
            if value.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {value.shape}")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
            return value

        w = arr("omega01", self.omega01, (d,))
        D = arr("domega01", self.domega01, (d, d))
        H = arr("hess_abs2", self.hess_abs2, (d, d))
        arr("omega02", self.omega02, (d,))
        arr("gdot0j", self.gdot0j, (d,))
        arr("gdotjl", self.gdotjl, (d, d))
        arr("gammaj0", self.gammaj0, (d,))

        if not np.linalg.norm(w) > 0:
            raise ValueError("omega01 must be nonzero at a miniwell")
        grad = D.T @ w
        scale = max(1.0, float(np.max(np.abs(D)) * np.max(np.abs(w))))
        if np.max(np.abs(grad)) > GRADIENT_TOL * scale:
            raise ValueError(
                "geometry violates the minimum condition: sum_j "
                f"d_omega01[j,r] * omega01[j] = {grad.tolist()} != 0")
        if np.max(np.abs(H - H.T)) > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise ValueError("hess_abs2 must be symmetric")
        if np.any(np.linalg.eigvalsh(H) <= 0):
            raise ValueError("hess_abs2 must be positive definite "
                             "(non-degenerate miniwell)")

    @property
    def omega_min(self) -> float:
        return float(np.linalg.norm(self.omega01))

    @property
    def e_omega(self) -> np.ndarray:
        return self.omega01 / self.omega_min

    @property
    def divergence(self) -> float:
        if self.domega_div is not None:
            return float(self.domega_div)
        return float(np.trace(self.domega01))

    @classmethod
    def from_json(cls, source) -> "MiniwellGeometry":
        """Load from a JSON document with exactly these field names."""
        if isinstance(source, (str, bytes)) or hasattr(source, "read"):
            data = json.load(open(source)) if isinstance(source, (str, bytes)) \
                else json.load(source)
        else:
            data = dict(source)
        known = {"n", "omega01", "domega01", "hess_abs2", "omega02", "gdot00",
                 "gdot0j", "gdotjl", "gamma00", "gammaj0", "domega_div"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown geometry fields: {sorted(unknown)}")
        return cls(**data)

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "omega01": self.omega01.tolist(),
            "domega01": self.domega01.tolist(),
            "hess_abs2": self.hess_abs2.tolist(),
            "omega02": self.omega02.tolist(),
            "gdot00": self.gdot00,
            "gdot0j": self.gdot0j.tolist(),
            "gdotjl": self.gdotjl.tolist(),
            "gamma00": self.gamma00,
            "gammaj0": self.gammaj0.tolist(),
            "domega_div": self.domega_div,
        }


def flat_model_geometry(omega_min: float, curvature_abs2: float) -> MiniwellGeometry:
    """Geometry of the flat 2D validation model: one surface direction, the
    curvature of |omega|^2 at the minimum, and every metric correction zero."""
    return MiniwellGeometry(
        n=2,
        omega01=np.array([omega_min]),
        domega01=np.zeros((1, 1)),
        hess_abs2=np.array([[curvature_abs2]]),
    )


# ---------------------------------------------------------------------------
# 1D moments of the fiber ground state

@dataclass(frozen=True)
class Moments1D:
    """Quadratures of the fiber ground state entering the constant A."""

    m_tau_upp: float      # integral tau u0''(tau) u0(tau)
    m_mixed: float        # integral (tau^{k+2}/(k+2)) (tau^{k+1}/(k+1)-alpha) u0^2
    m_tau_sq: float       # integral tau (tau^{k+1}/(k+1)-alpha)^2 u0^2


def moments_1d(k: int, alpha_min: float, u0: Spectrum1D,
               du0_dalpha: Optional[np.ndarray] = None) -> Moments1D:
    """Evaluate the three 1D moments on the converged grid of `u0`.

    The second derivative of the ground state uses the same central stencil
    as the assembled operator (Dirichlet ghosts beyond the walls), so the
    moment is consistent with the discrete eigenproblem. `du0_dalpha` is
    accepted for signature parity with the derivative state; the three
    moments do not involve it.
    """
    grid = u0.grid
    t = grid.interior_points()
    dt = grid.spacing
    u = u0.eigenfunctions[0]
    upp = np.zeros_like(u)
    upp[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dt**2
    upp[0] = (u[1] - 2.0 * u[0]) / dt**2
    upp[-1] = (u[-2] - 2.0 * u[-1]) / dt**2
    w = t ** (k + 1) / (k + 1) - alpha_min
    return Moments1D(
        m_tau_upp=float(np.sum(t * upp * u) * dt),
        m_mixed=float(np.sum((t ** (k + 2) / (k + 2)) * w * u * u) * dt),
        m_tau_sq=float(np.sum(t * w * w * u * u) * dt),
    )


# ---------------------------------------------------------------------------
# the operator K

def build_Omega(geometry: MiniwellGeometry, k: int,
                minimizer_report: MinimizerReport) -> np.ndarray:
    """Potential matrix of K:

        Omega = w^{-(2k+2)/(k+2)} [ nu_hat/(2(k+2)) Hess(|omega|^2)
                                    + alpha_min^2 D^T D ]

    with w the field minimum and D the derivative matrix of the field
    coefficients. Symmetric by construction; positive definite whenever the
    Hessian is.
    """
    w = geometry.omega_min
    pref = w ** (-(2.0 * k + 2.0) / (k + 2.0))
    nu = minimizer_report.nu_hat
    am = minimizer_report.alpha_min
    D = geometry.domega01
    om = pref * (nu / (2.0 * (k + 2)) * geometry.hess_abs2 + am**2 * (D.T @ D))
    if np.max(np.abs(om - om.T)) > 1e-10 * max(1.0, np.max(np.abs(om))):
        raise SolverError("Omega came out non-symmetric; geometry input is bad")
    return 0.5 * (om + om.T)


def build_A(geometry: MiniwellGeometry, k: int,
            minimizer_report: MinimizerReport, moments: Moments1D) -> complex:
    """The constant term of K (four contributions):

        A = -gdot00 * m_tau_upp
            + i w^{-1} div(omega01) alpha_min
            + 2 w^{-2} <omega01, omega02> m_mixed
            + w^{-2} (omega01^T gdotjl omega01) m_tau_sq.

    The imaginary part is exactly the divergence term; metric Christoffel
    inputs contribute nothing (their pairings vanish by the normalization
    and stationarity of the fiber ground state).
    """
    w = geometry.omega_min
    am = minimizer_report.alpha_min
    a = -geometry.gdot00 * moments.m_tau_upp
    a += 2.0 * w**-2 * float(geometry.omega01 @ geometry.omega02) * moments.m_mixed
    a += w**-2 * float(geometry.omega01 @ geometry.gdotjl @ geometry.omega01) \
        * moments.m_tau_sq
    return complex(a, w**-1 * geometry.divergence * am)


@dataclass(frozen=True)
class EffectiveOperatorK:
    """Assembled miniwell operator: kinetic weight along e_omega, potential
    matrix, constant term, and the family data it came from."""

    c_omega: float
    e_omega: np.ndarray
    Omega: np.ndarray
    A_const: complex
    alpha_min: float
    k: int

    def __post_init__(self):
        self.e_omega.setflags(write=False)
        self.Omega.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.e_omega)

    def kinetic_matrix(self) -> np.ndarray:
        """M = I + (c_omega - 1) e e^T in the ambient frame; positive
        definite iff c_omega > 0. Realized without choosing a basis
        completion, which keeps every spectral output frame-invariant."""
        e = self.e_omega
        return np.eye(self.dim) + (self.c_omega - 1.0) * np.outer(e, e)


def build_effective_operator(geometry: MiniwellGeometry, k: int,
                             state: Optional[MinimizerState] = None
                             ) -> EffectiveOperatorK:
    """Assemble K for the given geometry, pulling band-minimum data (and the
    1D moments) from a minimizer state (computed on demand if omitted)."""
    if state is None:
        from .montgomery import minimizer_state
        state = minimizer_state(k)
    r = state.report
    mom = moments_1d(k, r.alpha_min, state.spectrum, state.du0_dalpha)
    return EffectiveOperatorK(
        c_omega=0.5 * r.d2,
        e_omega=geometry.e_omega,
        Omega=build_Omega(geometry, k, r),
        A_const=build_A(geometry, k, r, mom),
        alpha_min=r.alpha_min,
        k=k,
    )


@dataclass(frozen=True)
class KSpectrum:
    """Spectrum of K: discrete levels in the non-degenerate branch, or the
    half-line bottom in the degenerate one."""

    branch: str                       # "nondegenerate" | "degenerate"
    levels: Optional[np.ndarray]      # ascending, non-degenerate branch
    bottom: Optional[float]           # half-line edge, degenerate branch
    imag_A_warning: bool

    def to_json_dict(self) -> dict:
        return {
            "branch": self.branch,
            "levels": None if self.levels is None else
            [float(v) for v in self.levels],
            "bottom": self.bottom,
            "imag_A_warning": self.imag_A_warning,
        }


def _oscillator_levels(freqs: np.ndarray, offset: float, count: int) -> np.ndarray:
    """Ascending sums offset + sum_j (2 n_j + 1) freqs_j by best-first
    lattice expansion; degeneracies are listed with multiplicity."""
    d = len(freqs)
    start = (0,) * d
    heap = [(offset + float(np.sum(freqs)), start)]
    seen = {start}
    out = []
    while heap and len(out) < count:
        e, idx = heapq.heappop(heap)
        out.append(e)
        for j in range(d):
            nxt = idx[:j] + (idx[j] + 1,) + idx[j + 1:]
            if nxt not in seen:
                seen.add(nxt)
                heapq.heappush(heap, (e + 2.0 * freqs[j], nxt))
    return np.array(out)


def _check_imag(kop: EffectiveOperatorK) -> bool:
    if abs(kop.A_const.imag) > 1e-8:
        warnings.warn(
            f"K has a complex constant (Im A = {kop.A_const.imag:.3e}); "
            "energies use Re(A) only", stacklevel=3)
        return True
    return False


def spectrum_K(kop: EffectiveOperatorK, count: int = 8) -> KSpectrum:
    """Spectrum of K.

    Non-degenerate branch (c_omega > 0): substitute sigma = M^{1/2} y to get
    the isotropic-kinetic oscillator with potential matrix M^{1/2} Omega
    M^{1/2}; levels are Re(A) + sum_j (2 n_j + 1) sqrt(mu_j) over its
    eigenvalues mu_j, enumerated ascending.

    Degenerate branch (c_omega = 0): K splits as a quadratic potential along
    the Omega-orthogonal complement direction of e_2..e_{n-1} tensor a
    reduced oscillator on those directions, so the spectrum is the half line
    starting at Re(A) + bottom of the reduced oscillator.
    """
    if kop.c_omega < 0:
        raise SolverError("c_omega < 0 contradicts minimality of the band")
    warn = _check_imag(kop)
    mu_all = np.linalg.eigvalsh(kop.Omega)
    if np.any(mu_all <= 0):
        raise SolverError("Omega must be positive definite")
    a_re = kop.A_const.real
    if kop.c_omega > 0:
        e = kop.e_omega
        msqrt = np.eye(kop.dim) + (np.sqrt(kop.c_omega) - 1.0) * np.outer(e, e)
        mu = np.linalg.eigvalsh(msqrt @ kop.Omega @ msqrt)
        levels = _oscillator_levels(np.sqrt(mu), a_re, count)
        return KSpectrum("nondegenerate", levels, float(levels[0]), warn)
    # degenerate: reduced oscillator on the orthonormal completion of e_omega
    d = kop.dim
    if d == 1:
        bottom = a_re
    else:
        basis = _orthonormal_complement(kop.e_omega)
        omega_red = basis.T @ kop.Omega @ basis
        bottom = a_re + float(np.sum(np.sqrt(np.linalg.eigvalsh(omega_red))))
    return KSpectrum("degenerate", None, bottom, warn)


def _orthonormal_complement(e: np.ndarray) -> np.ndarray:
    """Columns: an orthonormal basis of e^perp. Any completion works; every
    spectral quantity built from it is invariant under the choice."""
    d = len(e)
    full = np.eye(d) - np.outer(e, e)
    q, r = np.linalg.qr(full)
    cols = [q[:, i] for i in range(d) if abs(r[i, i]) > 1e-10]
    return np.column_stack(cols)


def omega_orthogonal_direction(kop: EffectiveOperatorK) -> np.ndarray:
    """The degenerate-branch distinguished vector: orthogonal to the
    completion directions with respect to the bilinear form Omega, i.e.
    parallel to Omega^{-1} e_omega."""
    v = np.linalg.solve(kop.Omega, kop.e_omega)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# validation oracle

@dataclass(frozen=True)
class OracleBox:
    """Dirichlet tensor box for the direct discretization of K; the half
    width may be per-axis (anisotropic wells want narrow fast axes)."""

    half_width: float | tuple[float, ...]
    n_points: int | tuple[int, ...]

    def axes(self, dim: int) -> tuple[tuple[float, ...], tuple[int, ...]]:
        L = self.half_width if isinstance(self.half_width, tuple) \
            else (self.half_width,) * dim
        n = self.n_points if isinstance(self.n_points, tuple) \
            else (self.n_points,) * dim
        if len(L) != dim or len(n) != dim:
            raise ValueError("box specification does not match the dimension")
        return L, n


def _fd_levels(kop: EffectiveOperatorK, count: int,
               Ls: tuple[float, ...], ns: tuple[int, ...]) -> np.ndarray:
    """Lowest levels of K discretized with central differences on the box;
    the mixed kinetic term uses the tensor cross stencil."""
    M = kop.kinetic_matrix()
    a_re = kop.A_const.real

    def axis(L, n):
        x = np.linspace(-L, L, n)[1:-1]
        dx = 2.0 * L / (n - 1)
        m = len(x)
        one = np.ones(m)
        D2 = sp.diags([one[:-1], -2.0 * one, one[:-1]], [-1, 0, 1]) / dx**2
        D1 = sp.diags([-one[:-1], one[:-1]], [-1, 1]) / (2.0 * dx)
        return x, D2, D1

    if kop.dim == 1:
        x, D2, _ = axis(Ls[0], ns[0])
        H = (-M[0, 0] * D2 + sp.diags(kop.Omega[0, 0] * x**2)).tocsc()
    elif kop.dim == 2:
        x1, D2a, D1a = axis(Ls[0], ns[0])
        x2, D2b, D1b = axis(Ls[1], ns[1])
        Ia = sp.identity(len(x1))
        Ib = sp.identity(len(x2))
        Xa = sp.diags(x1)
        Xb = sp.diags(x2)
        H = (-M[0, 0] * sp.kron(D2a, Ib) - M[1, 1] * sp.kron(Ia, D2b)
             - 2.0 * M[0, 1] * sp.kron(D1a, D1b)
             + kop.Omega[0, 0] * sp.kron(Xa @ Xa, Ib)
             + kop.Omega[1, 1] * sp.kron(Ia, Xb @ Xb)
             + 2.0 * kop.Omega[0, 1] * sp.kron(Xa, Xb)).tocsc()
    else:
        raise ValueError("direct discretization is feasible for dim <= 2 only")
    k_want = min(count + 4, H.shape[0] - 2)
    v0 = np.full(H.shape[0], 1.0 / np.sqrt(H.shape[0]))  # deterministic start
    vals = eigsh(H, k=k_want, sigma=0, which="LM", v0=v0,
                 return_eigenvectors=False)
    return np.sort(vals)[:count] + a_re


def spectrum_K_oracle(kop: EffectiveOperatorK, count: int,
                      grid: Optional[OracleBox] = None) -> np.ndarray:
    """Directly diagonalize K on a truncated box and Richardson-extrapolate
    over one spacing halving. Independent of the closed-form route; the two
    must agree to 1e-4 on feasible cases.

    Raises ConvergenceError when the pair of grids is too coarse for the
    extrapolation to be trustworthy.
    """
    if grid is None:
        # size each axis from the turning ellipse of an upper bound for the
        # count-th level, plus a few ground widths; the spacing target keeps
        # the Richardson pair inside its asymptotic regime (finer in 1D
        # where nodes are nearly free)
        msqrt = np.eye(kop.dim) + (np.sqrt(max(kop.c_omega, 1e-12)) - 1.0) \
            * np.outer(kop.e_omega, kop.e_omega)
        w = np.sqrt(np.linalg.eigvalsh(msqrt @ kop.Omega @ msqrt))
        e_top = abs(kop.A_const.real) + float(np.sum(w)) \
            + 2.0 * count * float(np.max(w))
        margin = 4.0 / np.sqrt(max(float(np.min(w)), 1e-6))
        inv_diag = np.diag(np.linalg.inv(kop.Omega))
        target = 0.05 if kop.dim == 1 else 0.09
        Ls, ns = [], []
        for j in range(kop.dim):
            L = float(np.sqrt(e_top * inv_diag[j]) + margin)
            Ls.append(L)
            ns.append(int(np.ceil(2.0 * L / target)) + 1)
        grid = OracleBox(half_width=tuple(Ls), n_points=tuple(ns))
    Ls, ns = grid.axes(kop.dim)
    v1 = _fd_levels(kop, count, Ls, ns)
    v2 = _fd_levels(kop, count, Ls, tuple(2 * (n - 1) + 1 for n in ns))
    gap = float(np.max(np.abs(v2 - v1)))
    if gap > 0.5:
        raise ConvergenceError(
            f"oracle grid too coarse: spacing-halving moved levels by {gap:.3f}",
            estimates=(float(v1[0]), float(v2[0])))
    return (4.0 * v2 - v1) / 3.0
