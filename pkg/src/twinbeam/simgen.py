"""Seeded Monte Carlo generators: spatial twin-beam acquisitions and
stationary correlated photocurrent traces.

The spatial generator is a photon-pair model: pair counts are Poisson,
pair geometry carries the position (anti-)correlations, and detection is
independent Bernoulli thinning per beam.  This produces genuine
sub-shot-noise difference statistics without any tuning knobs.

Determinism contract: every acquisition/frame/trial draws from its own
RNG stream keyed by (seed, acquisition index, frame index), so results
are bit-identical for a given parameter set regardless of how the work
is scheduled across threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np
from scipy import special

from ._backend import deposit
from .errors import InvalidParameter
from .spectra import SpectrumModel, coloring_matrix, spectrum_from_json
from .stackio import AcquisitionSet, Mode

# frame-index keys for the per-acquisition RNG streams
_FRAME_KEYS = (0, 1)
_BG_KEY = 2


@dataclass(frozen=True)
class GaussianProfile:
    """Gaussian mean beam profile (continuous positions, pixels)."""

    center: tuple[float, float]
    sigma_px: tuple[float, float]

    def __post_init__(self):
        sx, sy = self.sigma_px
        if sx <= 0 or sy <= 0:
            raise InvalidParameter("beam sigma_px must be > 0")

    def sample(self, rng: np.random.Generator, n: int, width: int, height: int):
        xs = rng.normal(self.center[0], self.sigma_px[0], n)
        ys = rng.normal(self.center[1], self.sigma_px[1], n)
        return xs, ys

    def pixel_mass(self, width: int, height: int) -> np.ndarray:
        """Probability mass per pixel (separable closed form)."""
        def axis_mass(n, c, s):
            edges = np.arange(n + 1, dtype=np.float64)
            cdf = 0.5 * (1.0 + special.erf((edges - c) / (s * np.sqrt(2.0))))
            return np.diff(cdf)
        mx = axis_mass(width, self.center[0], self.sigma_px[0])
        my = axis_mass(height, self.center[1], self.sigma_px[1])
        return np.outer(my, mx)

    def to_json(self) -> dict:
        return {"kind": "Gaussian", "center": list(self.center),
                "sigma_px": list(self.sigma_px)}


@dataclass(frozen=True)
class FlatProfile:
    """Uniform mean beam profile over the full frame."""

    def sample(self, rng: np.random.Generator, n: int, width: int, height: int):
        return rng.uniform(0.0, width, n), rng.uniform(0.0, height, n)

    def pixel_mass(self, width: int, height: int) -> np.ndarray:
        return np.full((height, width), 1.0 / (width * height))

    def to_json(self) -> dict:
        return {"kind": "Flat"}


MeanProfile = Union[GaussianProfile, FlatProfile]


def profile_from_json(d: dict) -> MeanProfile:
    kind = d.get("kind")
    if kind == "Gaussian":
        cx, cy = d["center"]
        s = d["sigma_px"]
        sx, sy = (s, s) if np.isscalar(s) else s
        return GaussianProfile(center=(float(cx), float(cy)),
                               sigma_px=(float(sx), float(sy)))
    if kind == "Flat":
        return FlatProfile()
    raise InvalidParameter(f"unknown profile kind {kind!r}")


@dataclass(frozen=True)
class SimParams:
    """Parameters of the spatial twin-beam simulation.

    The mean profile describes the probe beam; the conjugate distribution
    follows from the pair construction (mirrored in the far field).
    jitter_sigma is the per-axis standard deviation of the conjugate
    position relative to its ideal partner position, in pixels.
    """

    mode: Mode
    width: int
    height: int
    mean_profile: MeanProfile
    pairs_per_frame: float
    jitter_sigma: tuple[float, float]
    eta_p: float = 1.0
    eta_c: float = 1.0
    bg_rate: float = 0.0
    n_acquisitions: int = 1
    seed: int = 0

    def __post_init__(self):
        js = self.jitter_sigma
        if np.isscalar(js):
            js = (float(js), float(js))
        else:
            js = (float(js[0]), float(js[1]))
        object.__setattr__(self, "jitter_sigma", js)
        if self.width < 1 or self.height < 1:
            raise InvalidParameter("frame dimensions must be >= 1")
        if not (0.0 <= self.eta_p <= 1.0 and 0.0 <= self.eta_c <= 1.0):
            raise InvalidParameter("detection efficiencies must lie in [0, 1]")
        if self.pairs_per_frame < 0:
            raise InvalidParameter("pairs_per_frame must be >= 0")
        if js[0] < 0 or js[1] < 0:
            raise InvalidParameter("jitter_sigma must be >= 0")
        if self.bg_rate < 0:
            raise InvalidParameter("bg_rate must be >= 0")
        if self.n_acquisitions < 0:
            raise InvalidParameter("n_acquisitions must be >= 0")

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "width": self.width,
            "height": self.height,
            "mean_profile": self.mean_profile.to_json(),
            "pairs_per_frame": self.pairs_per_frame,
            "jitter_sigma": list(self.jitter_sigma),
            "eta_p": self.eta_p,
            "eta_c": self.eta_c,
            "bg_rate": self.bg_rate,
            "n_acquisitions": self.n_acquisitions,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SimParams":
        js = d["jitter_sigma"]
        return cls(
            mode=Mode(d["mode"]),
            width=int(d["width"]),
            height=int(d["height"]),
            mean_profile=profile_from_json(d["mean_profile"]),
            pairs_per_frame=float(d["pairs_per_frame"]),
            jitter_sigma=tuple(js) if not np.isscalar(js) else (float(js),) * 2,
            eta_p=float(d.get("eta_p", 1.0)),
            eta_c=float(d.get("eta_c", 1.0)),
            bg_rate=float(d.get("bg_rate", 0.0)),
            n_acquisitions=int(d.get("n_acquisitions", 1)),
            seed=int(d.get("seed", 0)),
        )


def _stream(seed: int, acq: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(acq, key)))


def _pair_frame(params: SimParams, rng: np.random.Generator):
    """One (probe, conjugate) frame pair from the photon-pair model."""
    w, h = params.width, params.height
    k = int(rng.poisson(params.pairs_per_frame))
    xs, ys = params.mean_profile.sample(rng, k, w, h)
    ex = rng.normal(0.0, params.jitter_sigma[0], k)
    ey = rng.normal(0.0, params.jitter_sigma[1], k)
    if params.mode == Mode.FAR_FIELD:
        # continuous mirror about the frame center maps pixel (x, y) onto
        # pixel (W-1-x, H-1-y), the rotate180 partner cell
        xc = (w - xs) + ex
        yc = (h - ys) + ey
    else:
        xc = xs + ex
        yc = ys + ey
    keep_p = rng.random(k) < params.eta_p
    keep_c = rng.random(k) < params.eta_c
    probe = deposit(xs[keep_p], ys[keep_p], h, w)
    conj = deposit(xc[keep_c], yc[keep_c], h, w)
    if params.bg_rate > 0:
        probe = probe + rng.poisson(params.bg_rate, (h, w))
        conj = conj + rng.poisson(params.bg_rate, (h, w))
    return probe, conj


def _coherent_frame(params: SimParams, rng: np.random.Generator):
    """One frame pair of two independent Poisson fields (equal profiles)."""
    w, h = params.width, params.height
    frames = []
    for _ in range(2):
        k = int(rng.poisson(params.pairs_per_frame))
        xs, ys = params.mean_profile.sample(rng, k, w, h)
        frames.append(deposit(xs, ys, h, w))
    if params.bg_rate > 0:
        frames[0] = frames[0] + rng.poisson(params.bg_rate, (h, w))
        frames[1] = frames[1] + rng.poisson(params.bg_rate, (h, w))
    return frames[0], frames[1]


def _background_frames(params: SimParams, acq: int):
    rng = _stream(params.seed, acq, _BG_KEY)
    h, w = params.height, params.width
    if params.bg_rate > 0:
        return (rng.poisson(params.bg_rate, (h, w)).astype(np.float64),
                rng.poisson(params.bg_rate, (h, w)).astype(np.float64))
    return np.zeros((h, w)), np.zeros((h, w))


def _one_acquisition(params: SimParams, acq: int, frame_fn) -> AcquisitionSet:
    p1, c1 = frame_fn(params, _stream(params.seed, acq, _FRAME_KEYS[0]))
    p2, c2 = frame_fn(params, _stream(params.seed, acq, _FRAME_KEYS[1]))
    bgp, bgc = _background_frames(params, acq)
    return AcquisitionSet(probe_f1=p1, probe_f2=p2, conj_f1=c1, conj_f2=c2,
                          bg_probe=bgp, bg_conj=bgc)


def _run(params: SimParams, frame_fn, threads: int) -> list[AcquisitionSet]:
    indices = range(params.n_acquisitions)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda a: _one_acquisition(params, a, frame_fn), indices))
    return [_one_acquisition(params, a, frame_fn) for a in indices]


def simulate_acquisitions(params: SimParams, threads: int = 1) -> list[AcquisitionSet]:
    """Generate correlated twin-beam acquisitions from the pair model.

    Per frame: K ~ Poisson(pairs_per_frame) pairs; the probe photon is
    drawn from the mean profile, the conjugate sits at the probe position
    (near field) or its mirror through the frame center (far field) plus
    Gaussian jitter; each photon is detected independently with its beam
    efficiency; Poisson background adds per pixel.  Background frames hold
    only the Poisson background (probe seed off).
    """
    return _run(params, _pair_frame, threads)


def simulate_coherent_pair(params: SimParams, threads: int = 1) -> list[AcquisitionSet]:
    """Generate the shot-noise-limit calibration: two independent Poisson
    fields with identical mean profiles (detection efficiencies ignored)."""
    return _run(params, _coherent_frame, threads)


def expected_nr(eta_p: float, eta_c: float) -> float:
    """Asymptotic noise ratio of the pair model at binning >> jitter, bg = 0.

    Bernoulli thinning of Poisson pairs gives
    NR = 1 - 2 eta_p eta_c / (eta_p + eta_c); the (0, 0) limit is 1.
    """
    if not (0.0 <= eta_p <= 1.0 and 0.0 <= eta_c <= 1.0):
        raise InvalidParameter("efficiencies must lie in [0, 1]")
    if eta_p + eta_c == 0.0:
        return 1.0
    return 1.0 - 2.0 * eta_p * eta_c / (eta_p + eta_c)


def pair_split_axis_prob(sigma: float, k: int) -> float:
    """Probability that a pair straddles a super-pixel boundary along one axis.

    The probe position is uniform within the k-wide cell and the partner
    is displaced by N(0, sigma^2), so
    P(same cell) = E[(1 - |e|/k)+] and this returns its complement.
    A perimeter effect: it decays only like sigma/k, not like a Gaussian
    tail, which is what sets the super-pixel size needed to reach the
    thinning floor.
    """
    if k < 1:
        raise InvalidParameter("k must be >= 1")
    if sigma == 0.0:
        return 0.0
    kappa = k / sigma
    same = special.erf(kappa / np.sqrt(2.0)) - \
        (2.0 * sigma / (k * np.sqrt(2.0 * np.pi))) * (1.0 - np.exp(-kappa ** 2 / 2.0))
    return float(1.0 - same)


def expected_nr_binned(eta_p: float, eta_c: float,
                       sigma_jx: float, sigma_jy: float, k: int) -> float:
    """Pair-model noise ratio at finite super-pixel size k.

    Pairs split across super-pixels lose their cancellation, so
    NR(k) = 1 - (2 eta_p eta_c / (eta_p + eta_c)) * P_same_x * P_same_y.
    Large-region, many-super-pixel limit; finite-sample corrections and
    beam-profile edge effects are not included.
    """
    floor = 1.0 - expected_nr(eta_p, eta_c)
    px = 1.0 - pair_split_axis_prob(sigma_jx, k)
    py = 1.0 - pair_split_axis_prob(sigma_jy, k)
    return 1.0 - floor * px * py


# ---------------------------------------------------------------------------
# Temporal traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalSimParams:
    """Parameters for the stationary correlated trace generator."""

    spectrum: SpectrumModel
    dt: float
    duration: float
    frame_gap: float
    n_trials: int
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidParameter("dt must be > 0")
        if self.duration < 16 * self.dt:
            raise InvalidParameter("duration must be much larger than dt")
        if self.frame_gap < self.duration:
            raise InvalidParameter("frame_gap must be >= duration")
        if self.n_trials < 1:
            raise InvalidParameter("n_trials must be >= 1")

    def to_json(self) -> dict:
        return {
            "spectrum": self.spectrum.to_json(),
            "dt": self.dt,
            "duration": self.duration,
            "frame_gap": self.frame_gap,
            "n_trials": self.n_trials,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TemporalSimParams":
        return cls(
            spectrum=spectrum_from_json(d["spectrum"]),
            dt=float(d["dt"]),
            duration=float(d["duration"]),
            frame_gap=float(d["frame_gap"]),
            n_trials=int(d["n_trials"]),
            seed=int(d.get("seed", 0)),
        )


def _trace_length(duration: float, dt: float) -> int:
    return 1 << max(4, math.ceil(math.log2(duration / dt)))


def synthesize_trace_pairs(
    spectrum: SpectrumModel,
    dt: float,
    n_samples: int,
    n_trials: int,
    seed: int,
    chunk: int = 64,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (trace_p, trace_c) pairs colored to the cross-spectral model.

    Frequency-domain coloring: two independent real white-noise vectors are
    transformed, multiplied per rFFT bin by the closed-form matrix square
    root of [[S_p, S_pc], [S_pc, S_c]] scaled by 1/sqrt(dt), and inverse
    transformed.  The result is a circularly stationary, zero-mean, jointly
    Gaussian pair whose per-bin spectra match the model exactly.

    Trial t draws from the stream keyed (seed, t), so any chunking or
    threading yields identical traces.
    """
    if hasattr(spectrum, "validate"):
        spectrum.validate()
    omega = 2.0 * np.pi * np.fft.rfftfreq(n_samples, dt)
    s_p, s_c, s_pc = spectrum.csd(omega)
    l11, l12, l22 = coloring_matrix(s_p, s_c, s_pc)
    root_dt = np.sqrt(dt)
    done = 0
    while done < n_trials:
        m = min(chunk, n_trials - done)
        whites = np.empty((m, 2, n_samples))
        for i in range(m):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(done + i,)))
            whites[i, 0] = rng.standard_normal(n_samples)
            whites[i, 1] = rng.standard_normal(n_samples)
        w1 = np.fft.rfft(whites[:, 0, :], axis=1)
        w2 = np.fft.rfft(whites[:, 1, :], axis=1)
        xp = np.fft.irfft((l11 * w1 + l12 * w2) / root_dt, n=n_samples, axis=1)
        xc = np.fft.irfft((l12 * w1 + l22 * w2) / root_dt, n=n_samples, axis=1)
        for i in range(m):
            yield xp[i], xc[i]
        done += m


def simulate_temporal_traces(
    params: TemporalSimParams,
    min_duration: float | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield stationary, zero-mean, jointly Gaussian (dn_p(t), dn_c(t)) pairs.

    The sample count is forced to a power of two covering at least
    `duration` (or `min_duration` when a consumer needs a longer span,
    e.g. to place two detection windows a frame gap apart).
    """
    span = params.duration if min_duration is None else max(params.duration, min_duration)
    n = _trace_length(span, params.dt)
    return synthesize_trace_pairs(params.spectrum, params.dt, n,
                                  params.n_trials, params.seed)
