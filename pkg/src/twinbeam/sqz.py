"""Spatial noise-ratio (squeezing) analysis and its spectral counterpart.

The spatial statistic per acquisition is Var(D) / Mean(S) over super-pixels
with D = (P1 - P2) - (C1 - C2) and S = P1 + P2 + C1 + C2; unity marks the
shot-noise limit, values below one spatial squeezing.  The spectral side
predicts the same ratio as the pulse-filtered integral of the normalized
intensity-difference spectrum and is validated here by a time-domain
Monte Carlo oracle built on the trace generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import simgen
from .errors import DegenerateInput, InvalidParameter
from .spectra import (
    PulseProfile,
    SpectrumModel,
    pulse_filter,
)
from .stackio import AcquisitionSet, AnalysisRegion, bin_superpixels, crop


@dataclass(frozen=True)
class NrPoint:
    """Ensemble noise ratio at one super-pixel size."""

    bin_k: int
    nr: float
    sem: float
    background_corrected: bool

    def to_json(self) -> dict:
        return {"k": self.bin_k, "nr": self.nr, "sem": self.sem,
                "corrected": self.background_corrected}


def noise_ratio(
    acq: AcquisitionSet,
    region: AnalysisRegion,
    bin_k: int,
    background_correct: bool = False,
    gain: float = 1.0,
) -> float:
    """Var(D)/Mean(S) over super-pixels for one prepared acquisition.

    Frames must already be registered (far field: conjugate rotated
    first).  Background correction subtracts the background frame from
    each signal frame, so the shot-noise denominator counts only
    photoelectrons attributable to the beams.  ``gain`` rescales raw
    camera counts to photoelectrons before the statistics; the ratio is
    gain-sensitive, unlike plain correlation analysis.
    """
    if gain <= 0:
        raise InvalidParameter("gain must be > 0")
    frames = [acq.probe_f1, acq.probe_f2, acq.conj_f1, acq.conj_f2]
    if background_correct and acq.has_background():
        bg = [acq.bg_probe, acq.bg_probe, acq.bg_conj, acq.bg_conj]
        frames = [f - b for f, b in zip(frames, bg)]
    cropped = [crop(np.asarray(f, dtype=np.float64) / gain, region) for f in frames]
    p1, p2, c1, c2 = (bin_superpixels(f, bin_k) for f in cropped)
    if p1.size < 2:
        raise InvalidParameter(
            f"bin {bin_k} leaves {p1.size} super-pixels, need >= 2")
    d = (p1 - p2) - (c1 - c2)
    s = p1 + p2 + c1 + c2
    mean_s = float(s.mean())
    var_d = float(d.var(ddof=1))
    if mean_s <= 0:
        if var_d == 0.0:
            raise DegenerateInput("no counts in the analysis region")
        raise DegenerateInput("non-positive mean total counts")
    return var_d / mean_s


def nr_curve(
    acqs: Sequence[AcquisitionSet],
    region: AnalysisRegion,
    bins: Sequence[int],
    background_correct: bool = False,
    gain: float = 1.0,
) -> list[NrPoint]:
    """Ensemble mean noise ratio and its standard error per super-pixel size."""
    if len(acqs) < 2:
        raise InvalidParameter("need at least 2 acquisitions for the ensemble")
    if not bins:
        raise InvalidParameter("empty bin list")
    points = []
    for k in bins:
        values = np.array([
            noise_ratio(a, region, k, background_correct, gain) for a in acqs
        ])
        points.append(NrPoint(
            bin_k=int(k),
            nr=float(values.mean()),
            sem=float(values.std(ddof=1) / math.sqrt(values.size)),
            background_corrected=background_correct,
        ))
    return points


def nr_to_db(nr: float) -> float:
    """Noise ratio to decibels of squeezing (positive dB = squeezing)."""
    if nr <= 0:
        raise InvalidParameter("noise ratio must be > 0")
    return -10.0 * math.log10(nr)


def db_to_nr(db: float) -> float:
    """Exact inverse of nr_to_db."""
    return 10.0 ** (-db / 10.0)


def apply_detection_loss(nr: float, eta: float) -> float:
    """Beam-splitter loss model: NR -> 1 - eta (1 - NR)."""
    if not 0.0 <= eta <= 1.0:
        raise InvalidParameter("eta must lie in [0, 1]")
    if nr < 0:
        raise InvalidParameter("noise ratio must be >= 0")
    return 1.0 - eta * (1.0 - nr)


# ---------------------------------------------------------------------------
# Spectral prediction and its time-domain oracle
# ---------------------------------------------------------------------------

_PREDICT_RTOL = 1e-6
_TAIL_TARGET = 1e-5


def _grid_span(pulse: PulseProfile) -> float:
    """Frequency span capturing all but ~1e-5 of the filter mass."""
    lo, hi = 1.0, 1e30
    if pulse.tail_fraction(lo) <= _TAIL_TARGET:
        return lo
    while pulse.tail_fraction(hi) > _TAIL_TARGET:  # pragma: no cover
        hi *= 10.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if pulse.tail_fraction(mid) > _TAIL_TARGET:
            lo = mid
        else:
            hi = mid
    return hi


def spectral_nr_predict(
    model: Union[SpectrumModel, Sequence[SpectrumModel]],
    pulse: PulseProfile,
    return_info: bool = False,
):
    """Predicted noise ratio: integral of G(w) S_diff(w), averaged over the
    per-pixel models when a sequence is given.

    The trapezoid grid is refined until successive estimates agree to
    1e-6 relative; the filter is renormalized on the same grid so a flat
    difference spectrum reproduces its floor value exactly.
    """
    models = list(model) if isinstance(model, (list, tuple)) else [model]
    for m in models:
        if hasattr(m, "validate"):
            m.validate()
    span = _grid_span(pulse)
    n = 1 << 15
    prev = None
    value = None
    while n <= (1 << 22):
        grid = np.linspace(-span, span, n + 1)
        g = pulse_filter(pulse, grid)
        per_pixel = [float(np.trapezoid(g * m.s_diff(grid), grid)) for m in models]
        value = float(np.mean(per_pixel))
        if prev is not None and abs(value - prev) <= _PREDICT_RTOL * max(abs(value), 1e-30):
            if return_info:
                return value, {"grid_points": n + 1, "omega_max": span}
            return value
        prev = value
        n *= 2
    if return_info:  # pragma: no cover
        return value, {"grid_points": n // 2 + 1, "omega_max": span, "converged": False}
    return value


def time_domain_nr(
    model: SpectrumModel,
    pulse: PulseProfile,
    sim: simgen.TemporalSimParams,
) -> tuple[float, float]:
    """Monte Carlo noise ratio from synthesized correlated traces.

    Per trial: color a trace pair to the model, integrate both traces over
    the pulse window in two frames separated by the frame gap, and form
    the frame-differenced beam difference.  The statistic is normalized by
    the coherent-state reference, i.e. the same discrete window sums
    evaluated in closed form for two independent white beams at the
    model's shot-noise levels.
    """
    window = pulse.window(sim.dt)
    n_win = window.size
    if sim.duration < pulse.support():
        raise InvalidParameter("duration must cover the pulse window")
    gap_samples = int(round(sim.frame_gap / sim.dt))
    if gap_samples < n_win:
        raise InvalidParameter("frame_gap must be >= the pulse window span")

    margin = model.correlation_time() if hasattr(model, "correlation_time") else 0.0
    span = sim.frame_gap + sim.duration + margin
    traces = simgen.simulate_temporal_traces(sim, min_duration=span)

    sn_p, sn_c = model.shot_levels()
    var_cs = 2.0 * (sn_p + sn_c) * float(window @ window) * sim.dt
    if var_cs <= 0:
        raise InvalidParameter("coherent reference variance is not positive")

    stats = np.empty(sim.n_trials)
    for i, (xp, xc) in enumerate(traces):
        np1 = float(window @ xp[:n_win]) * sim.dt
        np2 = float(window @ xp[gap_samples:gap_samples + n_win]) * sim.dt
        nc1 = float(window @ xc[:n_win]) * sim.dt
        nc2 = float(window @ xc[gap_samples:gap_samples + n_win]) * sim.dt
        d = (np1 - np2) - (nc1 - nc2)
        stats[i] = d * d / var_cs
    nr = float(stats.mean())
    sem = float(stats.std(ddof=1) / math.sqrt(sim.n_trials))
    return nr, sem


@dataclass(frozen=True)
class SpectralReport:
    prediction: float
    oracle_nr: float
    oracle_sem: float
    grid_points: int
    omega_max: float

    @property
    def agrees(self) -> bool:
        return abs(self.prediction - self.oracle_nr) <= 3.0 * self.oracle_sem

    def to_json(self) -> dict:
        return {
            "prediction": self.prediction,
            "oracle_nr": self.oracle_nr,
            "oracle_sem": self.oracle_sem,
            "grid_points": self.grid_points,
            "omega_max_rad_per_s": self.omega_max,
            "agreement_3sem": self.agrees,
        }


def spectral_report(
    model: SpectrumModel,
    pulse: PulseProfile,
    sim: simgen.TemporalSimParams,
) -> SpectralReport:
    """Prediction plus time-domain oracle with a 3-standard-error verdict."""
    prediction, info = spectral_nr_predict(model, pulse, return_info=True)
    oracle, sem = time_domain_nr(model, pulse, sim)
    return SpectralReport(
        prediction=prediction,
        oracle_nr=oracle,
        oracle_sem=sem,
        grid_points=info["grid_points"],
        omega_max=info["omega_max"],
    )
