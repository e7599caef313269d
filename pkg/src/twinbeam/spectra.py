"""Spectral models and pulse profiles for the temporal-squeezing relation.

A SpectrumModel provides the two-sided cross-spectral densities
(S_p, S_c, S_pc) of the probe/conjugate photon-flux fluctuations together
with the white shot-noise levels (SN_p, SN_c).  The normalized
intensity-difference spectrum is

    S_diff(w) = (S_p + S_c - 2 S_pc) / (SN_p + SN_c).

The Lorentzian-difference family is realized with both beams at shot
noise (S_p = S_c = SN = 1) and all squeezing carried by the cross term
S_pc = 1 - S_diff, which keeps the 2x2 spectral matrix positive
semidefinite for any floor value in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InsufficientGridCoverage, InvalidParameter, NotPositiveSemidefinite

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LorentzianDiff:
    """S_diff(w) = 1 - (1 - nr0) * gamma^2 / (gamma^2 + w^2)."""

    nr0: float
    gamma: float  # HWHM in rad/s

    def __post_init__(self):
        if not 0.0 < self.nr0 <= 1.0:
            raise InvalidParameter(f"nr0 must lie in (0, 1], got {self.nr0}")
        if self.gamma <= 0:
            raise InvalidParameter(f"gamma must be > 0, got {self.gamma}")

    def s_diff(self, omega: np.ndarray) -> np.ndarray:
        omega = np.asarray(omega, dtype=np.float64)
        lor = self.gamma ** 2 / (self.gamma ** 2 + omega ** 2)
        return 1.0 - (1.0 - self.nr0) * lor

    def csd(self, omega: np.ndarray):
        """(S_p, S_c, S_pc) at the given frequencies."""
        omega = np.asarray(omega, dtype=np.float64)
        ones = np.ones_like(omega)
        s_pc = (1.0 - self.nr0) * self.gamma ** 2 / (self.gamma ** 2 + omega ** 2)
        return ones, ones.copy(), s_pc

    def shot_levels(self) -> tuple[float, float]:
        return 1.0, 1.0

    def correlation_time(self) -> float:
        # exp(-gamma*tau) envelope; 12/gamma leaves < 1e-5 residual
        return 12.0 / self.gamma

    def validate(self) -> None:
        pass  # positive semidefinite by construction

    def to_json(self) -> dict:
        return {"kind": "LorentzianDiff", "nr0": self.nr0, "gamma": self.gamma}


@dataclass(frozen=True)
class Tabulated:
    """Cross-spectral densities tabulated on a frequency grid (rad/s).

    Evaluation clamps to the edge values outside the grid, so a flat model
    needs only two grid points.
    """

    omega: np.ndarray
    s_p: np.ndarray
    s_c: np.ndarray
    s_pc: np.ndarray
    sn_p: float
    sn_c: float

    def __post_init__(self):
        for name in ("omega", "s_p", "s_c", "s_pc"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
        n = self.omega.size
        if n < 2 or np.any(np.diff(self.omega) <= 0):
            raise InvalidParameter("omega grid must be strictly increasing with >= 2 points")
        if any(getattr(self, k).size != n for k in ("s_p", "s_c", "s_pc")):
            raise InvalidParameter("spectra must match the omega grid length")
        if self.sn_p + self.sn_c <= 0:
            raise InvalidParameter("shot-noise levels must sum to a positive value")

    def validate(self) -> None:
        if np.any(self.s_p < 0) or np.any(self.s_c < 0):
            raise NotPositiveSemidefinite("negative auto-spectrum value")
        if np.any(self.s_p * self.s_c < self.s_pc ** 2 * (1 - 1e-12)):
            raise NotPositiveSemidefinite("S_p*S_c >= S_pc^2 fails on the grid")

    def s_diff(self, omega: np.ndarray) -> np.ndarray:
        sp, sc, spc = self.csd(omega)
        return (sp + sc - 2.0 * spc) / (self.sn_p + self.sn_c)

    def csd(self, omega: np.ndarray):
        omega = np.abs(np.asarray(omega, dtype=np.float64))
        sp = np.interp(omega, self.omega, self.s_p)
        sc = np.interp(omega, self.omega, self.s_c)
        spc = np.interp(omega, self.omega, self.s_pc)
        return sp, sc, spc

    def shot_levels(self) -> tuple[float, float]:
        return self.sn_p, self.sn_c

    def correlation_time(self) -> float:
        # narrowest tabulated feature is bounded by the grid span
        span = self.omega[-1] - self.omega[0]
        return 12.0 * TWO_PI / max(span, 1e-300)

    def to_json(self) -> dict:
        return {
            "kind": "Tabulated",
            "omega": self.omega.tolist(),
            "s_p": self.s_p.tolist(),
            "s_c": self.s_c.tolist(),
            "s_pc": self.s_pc.tolist(),
            "sn_p": self.sn_p,
            "sn_c": self.sn_c,
        }


SpectrumModel = Union[LorentzianDiff, Tabulated]


def flat_diff_model(s_diff_value: float) -> Tabulated:
    """Both beams at shot noise, frequency-independent difference spectrum."""
    if not 0.0 < s_diff_value <= 1.0:
        raise InvalidParameter(f"flat S_diff must lie in (0, 1], got {s_diff_value}")
    grid = np.array([0.0, 1.0])
    pc = np.full(2, 1.0 - s_diff_value)
    return Tabulated(omega=grid, s_p=np.ones(2), s_c=np.ones(2), s_pc=pc,
                     sn_p=1.0, sn_c=1.0)


def white_uncorrelated_model() -> Tabulated:
    """Two independent shot-noise-limited beams (the coherent reference)."""
    grid = np.array([0.0, 1.0])
    return Tabulated(omega=grid, s_p=np.ones(2), s_c=np.ones(2),
                     s_pc=np.zeros(2), sn_p=1.0, sn_c=1.0)


def spectrum_from_json(d: dict) -> SpectrumModel:
    kind = d.get("kind")
    if kind == "LorentzianDiff":
        return LorentzianDiff(nr0=float(d["nr0"]), gamma=float(d["gamma"]))
    if kind == "Tabulated":
        return Tabulated(
            omega=np.asarray(d["omega"], dtype=float),
            s_p=np.asarray(d["s_p"], dtype=float),
            s_c=np.asarray(d["s_c"], dtype=float),
            s_pc=np.asarray(d["s_pc"], dtype=float),
            sn_p=float(d["sn_p"]),
            sn_c=float(d["sn_c"]),
        )
    raise InvalidParameter(f"unknown spectrum kind {kind!r}")


# ---------------------------------------------------------------------------
# Pulse profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectPulse:
    """Flat-top intensity profile of duration T seconds."""

    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise InvalidParameter("pulse duration must be > 0")

    def abs_f_squared(self, omega: np.ndarray) -> np.ndarray:
        """|F(w)|^2 = T^2 sinc^2(w T / 2), sinc(u) = sin(u)/u."""
        u = np.asarray(omega, dtype=np.float64) * self.duration / 2.0
        return self.duration ** 2 * np.sinc(u / np.pi) ** 2

    def f_squared_total(self) -> float:
        """Analytic integral of |F|^2 over all frequencies: 2 pi T."""
        return TWO_PI * self.duration

    def tail_fraction(self, omega_max: float) -> float:
        """Upper bound on the |F|^2 mass beyond +-omega_max."""
        u = omega_max * self.duration / 2.0
        return 1.0 / (np.pi * u) if u > 0 else 1.0

    def window(self, dt: float) -> np.ndarray:
        n = int(round(self.duration / dt))
        if n < 2:
            raise InvalidParameter("dt too coarse for the pulse duration")
        return np.ones(n)

    def support(self) -> float:
        return self.duration

    def to_json(self) -> dict:
        return {"kind": "Rect", "duration": self.duration}


@dataclass(frozen=True)
class GaussianPulse:
    """Gaussian intensity profile with the given FWHM in seconds."""

    t_fwhm: float

    def __post_init__(self):
        if self.t_fwhm <= 0:
            raise InvalidParameter("t_fwhm must be > 0")

    @property
    def _tau(self) -> float:
        return self.t_fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))

    def abs_f_squared(self, omega: np.ndarray) -> np.ndarray:
        tau = self._tau
        w = np.asarray(omega, dtype=np.float64)
        return TWO_PI * tau ** 2 * np.exp(-(w * tau) ** 2)

    def f_squared_total(self) -> float:
        return 2.0 * np.pi ** 1.5 * self._tau

    def tail_fraction(self, omega_max: float) -> float:
        from scipy.special import erfc
        return float(erfc(omega_max * self._tau))

    def window(self, dt: float) -> np.ndarray:
        half = 4.0 * self.t_fwhm
        t = np.arange(-half, half + dt / 2, dt)
        return np.exp(-4.0 * np.log(2.0) * (t / self.t_fwhm) ** 2)

    def support(self) -> float:
        return 8.0 * self.t_fwhm

    def to_json(self) -> dict:
        return {"kind": "Gaussian", "t_fwhm": self.t_fwhm}


PulseProfile = Union[RectPulse, GaussianPulse]


def pulse_from_json(d: dict) -> PulseProfile:
    kind = d.get("kind")
    if kind == "Rect":
        return RectPulse(duration=float(d["duration"]))
    if kind == "Gaussian":
        return GaussianPulse(t_fwhm=float(d["t_fwhm"]))
    raise InvalidParameter(f"unknown pulse kind {kind!r}")


def pulse_filter(pulse: PulseProfile, grid: np.ndarray) -> np.ndarray:
    """Sample the normalized frequency filter G(w) on a symmetric grid.

    G(w) = |F(w)|^2 / integral of |F|^2; the grid must be symmetric about
    zero and capture at least 99.9% of the |F|^2 mass, else
    InsufficientGridCoverage is raised.  The trapezoid integral of the
    returned samples equals 1 to within 1e-6.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise InvalidParameter("grid must be strictly increasing with >= 3 points")
    if abs(grid[0] + grid[-1]) > 1e-9 * max(abs(grid[0]), abs(grid[-1])):
        raise InvalidParameter("grid must be symmetric about zero")
    f2 = pulse.abs_f_squared(grid)
    mass = np.trapezoid(f2, grid)
    if mass < 0.999 * pulse.f_squared_total():
        raise InsufficientGridCoverage(
            f"grid captures {mass / pulse.f_squared_total():.6f} of the filter mass, "
            "need >= 0.999"
        )
    return f2 / mass


# ---------------------------------------------------------------------------
# 2x2 spectral coloring
# ---------------------------------------------------------------------------

def coloring_matrix(s_p: np.ndarray, s_c: np.ndarray, s_pc: np.ndarray):
    """Closed-form PSD square root of [[S_p, S_pc], [S_pc, S_c]] per bin.

    Returns (L11, L12, L22) with L symmetric and L @ L = M.  Raises
    NotPositiveSemidefinite when any bin fails the PSD conditions.
    """
    s_p = np.asarray(s_p, dtype=np.float64)
    s_c = np.asarray(s_c, dtype=np.float64)
    s_pc = np.asarray(s_pc, dtype=np.float64)
    scale = np.maximum(s_p * s_c, 1e-300)
    det = s_p * s_c - s_pc ** 2
    if np.any(s_p < 0) or np.any(s_c < 0) or np.any(det < -1e-12 * scale):
        raise NotPositiveSemidefinite("cross-spectral matrix is not PSD on the grid")
    s = np.sqrt(np.clip(det, 0.0, None))
    t = np.sqrt(s_p + s_c + 2.0 * s)
    safe_t = np.where(t > 0, t, 1.0)
    l11 = np.where(t > 0, (s_p + s) / safe_t, 0.0)
    l22 = np.where(t > 0, (s_c + s) / safe_t, 0.0)
    l12 = np.where(t > 0, s_pc / safe_t, 0.0)
    return l11, l12, l22
