"""Semiclassical predictions from the band minimum and the miniwell levels:
two-term quasimode energies, two-sided bounds for the ground energy, spectral
gap windows, and power-law fits for measured data.

Exponent conventions, for vanishing order k and semiclassical parameter h:
the leading energy scale is h^{(2k+2)/(k+2)}, the miniwell splitting scale
h^{(2k+3)/(k+2)}, the ground-bound error h^{(6k+8)/(3(k+2))}, and the
quasimode residual h^{(4k+7)/(2(k+2))}. Every forecast keeps these exact
rationals; the proofs only assert the existence of the accompanying
constants, so those are configuration here (defaults 1), optionally fitted
from measured sweeps.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np


def leading_exponent(k: int) -> Fraction:
    return Fraction(2 * k + 2, k + 2)


def splitting_exponent(k: int) -> Fraction:
    return Fraction(2 * k + 3, k + 2)


def bound_error_exponent(k: int) -> Fraction:
    return Fraction(6 * k + 8, 3 * (k + 2))


def residual_exponent(k: int) -> Fraction:
    return Fraction(4 * k + 7, 2 * (k + 2))


def quasimode_energy(h: float, k: int, omega_min: float, lambda_level: float,
                     nu_hat: Optional[float] = None) -> float:
    """Two-term quasimode energy

        z(h) = nu_hat * omega_min^{2/(k+2)} h^{(2k+2)/(k+2)}
               + lambda_level * h^{(2k+3)/(k+2)}.

    `nu_hat` defaults to the computed band minimum for this k.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if nu_hat is None:
        from .montgomery import minimizer_state
        nu_hat = minimizer_state(k).report.nu_hat
    lead = nu_hat * omega_min ** (2.0 / (k + 2)) * h ** float(leading_exponent(k))
    return lead + lambda_level * h ** float(splitting_exponent(k))


def ground_energy_bounds(h: float, k: int, omega_min: float, C: float = 1.0,
                         nu_hat: Optional[float] = None) -> tuple[float, float]:
    """Two-sided bounds for the ground energy:

        leading -+ C h^{(6k+8)/(3(k+2))},

    the error exponent strictly exceeding the leading one (checked here for
    the concrete k, so the interval is genuinely higher order).
    """
    if h <= 0 or C < 0:
        raise ValueError("need h > 0 and C >= 0")
    assert bound_error_exponent(k) > leading_exponent(k)
    if nu_hat is None:
        from .montgomery import minimizer_state
        nu_hat = minimizer_state(k).report.nu_hat
    lead = nu_hat * omega_min ** (2.0 / (k + 2)) * h ** float(leading_exponent(k))
    err = C * h ** float(bound_error_exponent(k))
    return lead - err, lead + err


def gap_intervals(h: float, k: int, omega_min: float,
                  K_levels: Sequence[float], N: int, c_res: float = 1.0,
                  nu_hat: Optional[float] = None) -> list[tuple[float, float]]:
    """Predicted spectral gaps between consecutive quasimode energies.

    Each open interval (z_m, z_{m+1}) is shrunk on both sides by the
    quasimode residual margin r(h) = c_res * h^{(4k+7)/(2(k+2))}; a pair of
    levels closer than 2 r(h) (in splitting units) yields no predictable gap
    and is dropped with a warning.
    """
    levels = np.asarray(K_levels, dtype=float)
    if len(levels) < N + 1:
        raise ValueError(f"need at least {N + 1} ascending levels, got {len(levels)}")
    if np.any(np.diff(levels) <= 0):
        raise ValueError("K levels must be strictly ascending")
    r = c_res * h ** float(residual_exponent(k))
    out = []
    for m in range(N):
        z_lo = quasimode_energy(h, k, omega_min, levels[m], nu_hat=nu_hat)
        z_hi = quasimode_energy(h, k, omega_min, levels[m + 1], nu_hat=nu_hat)
        if z_hi - z_lo <= 2.0 * r:
            warnings.warn(
                f"levels {m},{m + 1} too close at h={h:g}: gap "
                f"{z_hi - z_lo:.3e} <= 2 r(h) = {2 * r:.3e}; interval dropped",
                stacklevel=2)
            continue
        out.append((z_lo + r, z_hi - r))
    return out


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    coefficient: float
    r_squared: float


def exponent_fit(h_list: Sequence[float], energy_list: Sequence[float]) -> ExponentFit:
    """Least-squares power law through log(energy) = log(c) + p log(h).

    Requires at least 4 samples spanning a decade in h and positive
    energies.
    """
    h = np.asarray(h_list, dtype=float)
    e = np.asarray(energy_list, dtype=float)
    if len(h) < 4:
        raise ValueError("need at least 4 samples")
    if np.max(h) / np.min(h) < 10.0 - 1e-9:
        raise ValueError("h must span at least one decade")
    if np.any(e <= 0):
        raise ValueError("energies must be positive")
    x = np.log(h)
    y = np.log(e)
    A = np.column_stack([x, np.ones_like(x)])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    slope, intercept = coef
    yhat = A @ coef
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ExponentFit(exponent=float(slope), coefficient=float(np.exp(intercept)),
                       r_squared=r2)


@dataclass(frozen=True)
class GapForecast:
    """Per-h quasimode energies, ground bounds, and predicted gap windows."""

    k: int
    omega_min: float
    nu_hat: float
    K_levels: tuple[float, ...]
    h_values: tuple[float, ...]
    z: np.ndarray                       # shape (len(h), len(levels))
    lower_bounds: tuple[float, ...]
    upper_bounds: tuple[float, ...]
    gap_windows: tuple[tuple[tuple[float, float], ...], ...]
    error_constant: float
    residual_constant: float

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "k": self.k,
                "omega_min": self.omega_min,
                "nu_hat": self.nu_hat,
                "K_levels": list(self.K_levels),
                "h_values": list(self.h_values),
                "z": [[float(v) for v in row] for row in self.z],
                "lower_bounds": list(self.lower_bounds),
                "upper_bounds": list(self.upper_bounds),
                "gap_windows": [[list(g) for g in row] for row in self.gap_windows],
                "error_constant": self.error_constant,
                "residual_constant": self.residual_constant,
            }, fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        n_lev = len(self.K_levels)
        n_gap = max((len(row) for row in self.gap_windows), default=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["h"] + [f"z_{m}" for m in range(n_lev)]
            for i in range(n_gap):
                head += [f"gap_lo_{i}", f"gap_hi_{i}"]
            w.writerow(head)
            for i, h in enumerate(self.h_values):
                row = [repr(float(h))] + [repr(float(v)) for v in self.z[i]]
                for g in self.gap_windows[i]:
                    row += [repr(g[0]), repr(g[1])]
                row += [""] * (len(head) - len(row))
                w.writerow(row)


def build_forecast(k: int, omega_min: float, K_levels: Sequence[float],
                   h_values: Sequence[float], C: float = 1.0,
                   c_res: float = 1.0,
                   nu_hat: Optional[float] = None) -> GapForecast:
    """Assemble the full forecast over an h sweep."""
    if nu_hat is None:
        from .montgomery import minimizer_state
        nu_hat = minimizer_state(k).report.nu_hat
    levels = tuple(float(v) for v in K_levels)
    hs = tuple(float(h) for h in h_values)
    z = np.array([[quasimode_energy(h, k, omega_min, lam, nu_hat=nu_hat)
                   for lam in levels] for h in hs])
    lo, hi, gaps = [], [], []
    for h in hs:
        b = ground_energy_bounds(h, k, omega_min, C, nu_hat=nu_hat)
        lo.append(b[0])
        hi.append(b[1])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gaps.append(tuple(gap_intervals(h, k, omega_min, levels,
                                            len(levels) - 1, c_res,
                                            nu_hat=nu_hat)))
    return GapForecast(
        k=k, omega_min=omega_min, nu_hat=float(nu_hat), K_levels=levels,
        h_values=hs, z=z, lower_bounds=tuple(lo), upper_bounds=tuple(hi),
        gap_windows=tuple(gaps), error_constant=C, residual_constant=c_res,
    )
