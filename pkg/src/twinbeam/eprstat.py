"""Position/momentum uncertainty products, violation confidence and the
inseparability check.

Fitted pixel widths convert to physical uncertainties via the imaging
geometry (near field: sigma * s / M meters; far field: 2 pi sigma s /
(lambda f) in units of hbar per meter).  The uncertainty product is then
quoted in hbar^2 and compared against the 1/4 bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import specorr
from .errors import InvalidParameter, NonConvergedFit
from .gfit import GaussFitResult, fit_gaussian2d
from .stackio import AcquisitionSet, Mode, OpticsConfig


def delta_r(sigma_px: float, optics: OpticsConfig) -> float:
    """Position uncertainty in meters from a near-field fitted width."""
    if optics.mode != Mode.NEAR_FIELD:
        raise InvalidParameter("delta_r needs a NearField OpticsConfig")
    return sigma_px * optics.pixel_size_s / optics.magnification_M


def delta_p_hbar(sigma_px: float, optics: OpticsConfig) -> float:
    """Momentum uncertainty in hbar / meter from a far-field fitted width."""
    if optics.mode != Mode.FAR_FIELD:
        raise InvalidParameter("delta_p_hbar needs a FarField OpticsConfig")
    return (2.0 * math.pi * sigma_px * optics.pixel_size_s
            / (optics.wavelength_lambda * optics.focal_f))


@dataclass(frozen=True)
class EprAxisResult:
    """Uncertainty product and its confidence statistics along one axis.

    ``product`` is Delta^2 r * Delta^2 p in hbar^2; ``confidence`` is the
    number of standard deviations (of the chosen CI level) separating the
    product from the 1/4 bound.
    """

    axis: str
    delta_r_m: float
    delta_p_per_m_hbar: float
    product_hbar2: float
    delta68: float
    delta95: float
    confidence: float
    ci_level: int
    violation: bool
    significant: bool

    def to_json(self) -> dict:
        return {
            "axis": self.axis,
            "delta_r_m": self.delta_r_m,
            "delta_p_per_m_hbar": self.delta_p_per_m_hbar,
            "product_hbar2": self.product_hbar2,
            "delta68": self.delta68,
            "delta95": self.delta95,
            "C": self.confidence,
            "ci_level": self.ci_level,
            "violation": self.violation,
            "significant": self.significant,
        }


def product_from_widths(
    sigma_near: float, ci_near: float,
    sigma_far: float, ci_far: float,
    near_optics: OpticsConfig, far_optics: OpticsConfig,
    axis: str = "x",
    ci_level: int = 68,
) -> EprAxisResult:
    """Uncertainty product from fitted widths and their CI half-widths.

    The half-widths must be quoted at the requested ci_level; the other
    level is derived via the fixed 1.96 ratio.
    """
    if ci_level not in (68, 95):
        raise InvalidParameter("ci_level must be 68 or 95")
    if sigma_near <= 0 or sigma_far <= 0:
        raise InvalidParameter("fitted widths must be positive")
    dr = delta_r(sigma_near, near_optics)
    dp = delta_p_hbar(sigma_far, far_optics)
    product = (dr * dp) ** 2
    rel = math.sqrt((ci_near / sigma_near) ** 2 + (ci_far / sigma_far) ** 2)
    delta_at_level = 2.0 * product * rel
    if ci_level == 68:
        d68 = delta_at_level
        d95 = 1.96 * delta_at_level
    else:
        d95 = delta_at_level
        d68 = delta_at_level / 1.96
    chosen = d68 if ci_level == 68 else d95
    confidence = abs(0.25 - product) / chosen if chosen > 0 else math.inf
    violation = product < 0.25
    return EprAxisResult(
        axis=axis,
        delta_r_m=dr,
        delta_p_per_m_hbar=dp,
        product_hbar2=product,
        delta68=d68,
        delta95=d95,
        confidence=confidence,
        ci_level=ci_level,
        violation=violation,
        significant=violation and confidence > 5.0,
    )


def epr_product(
    near_fit: GaussFitResult,
    far_fit: GaussFitResult,
    near_optics: OpticsConfig,
    far_optics: OpticsConfig,
    axis: str = "x",
    ci_level: int = 68,
) -> EprAxisResult:
    """Uncertainty product along one axis from converged near/far fits."""
    for fit, label in ((near_fit, "near-field fit"), (far_fit, "far-field fit")):
        if not fit.converged:
            raise NonConvergedFit(f"{label} did not converge")
    name = {"x": "sigma_x", "y": "sigma_y"}.get(axis)
    if name is None:
        raise InvalidParameter(f"axis must be 'x' or 'y', got {axis!r}")
    ci_of = (lambda f: f.ci68_for(name)) if ci_level == 68 else (lambda f: f.ci95_for(name))
    return product_from_widths(
        sigma_near=getattr(near_fit.model, name),
        ci_near=ci_of(near_fit),
        sigma_far=getattr(far_fit.model, name),
        ci_far=ci_of(far_fit),
        near_optics=near_optics,
        far_optics=far_optics,
        axis=axis,
        ci_level=ci_level,
    )


def check_significance(result: EprAxisResult) -> bool:
    """True iff the product violates the bound by more than 5 sigma."""
    return result.product_hbar2 < 0.25 and result.confidence > 5.0


@dataclass(frozen=True)
class InseparabilityResult:
    value: float
    entangled: bool

    def to_json(self) -> dict:
        return {"I": self.value, "entangled": self.entangled}


def inseparability(nr_near: float, nr_far: float) -> InseparabilityResult:
    """Sum of the normalized position-difference and momentum-sum variances.

    The pair is entangled when the sum is strictly below 2.
    """
    if nr_near < 0 or nr_far < 0:
        raise InvalidParameter("noise ratios must be >= 0")
    total = nr_near + nr_far
    return InseparabilityResult(value=total, entangled=total < 2.0)


# ---------------------------------------------------------------------------
# Confidence-versus-image-count statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfidenceEntry:
    n_images: int
    mean_c: float
    sd_c: float
    n_groups: int
    mean_product: float


@dataclass(frozen=True)
class ConfidenceCurve:
    """Group-wise violation confidence versus images per group.

    fitted_a0 is the coefficient of the C = A0 sqrt(N) model (group
    confidence grows with the square root of the image count because the
    product's standard deviation shrinks like 1/sqrt(N));
    scaling_exponent is the free-slope check on log mean C vs log N.
    """

    axis: str
    entries: tuple[ConfidenceEntry, ...]
    fitted_a0: float
    scaling_exponent: float
    n_failed_groups: int

    def to_json(self) -> dict:
        return {
            "axis": self.axis,
            "entries": [
                {"N": e.n_images, "mean_C": e.mean_c, "sd_C": e.sd_c,
                 "n_groups": e.n_groups, "mean_product_hbar2": e.mean_product}
                for e in self.entries
            ],
            "A0": self.fitted_a0,
            "scaling_exponent": self.scaling_exponent,
            "n_failed_groups": self.n_failed_groups,
        }


def fit_scaling(entries: Sequence[ConfidenceEntry]) -> tuple[float, float]:
    """Closed-form A0 for C = A0 sqrt(N), plus the log-log slope."""
    usable = [e for e in entries if e.n_groups > 0 and e.mean_c > 0]
    if len(usable) < 2:
        raise InvalidParameter("need at least two usable curve entries")
    c = np.array([e.mean_c for e in usable])
    n = np.array([e.n_images for e in usable], dtype=np.float64)
    a0 = float((c * np.sqrt(n)).sum() / n.sum())
    slope = float(np.polyfit(np.log(n), np.log(c), 1)[0])
    return a0, slope


def confidence_curve(
    near_acqs: Sequence[AcquisitionSet],
    far_acqs: Sequence[AcquisitionSet],
    group_sizes: Sequence[int],
    near_optics: OpticsConfig,
    far_optics: OpticsConfig,
    axis: str = "x",
    config_near: Optional[specorr.XcorrConfig] = None,
    config_far: Optional[specorr.XcorrConfig] = None,
    ci_level: int = 68,
) -> ConfidenceCurve:
    """Run the full analysis on disjoint consecutive acquisition groups.

    For each N in group_sizes the acquisitions split into floor(total / N)
    groups; each group is accumulated, fitted and converted to a product
    and a confidence value.  Registration and the per-acquisition
    correlation statistics are computed once from the full ensemble and
    reused across groups.
    """
    total = min(len(near_acqs), len(far_acqs))
    if total < 1:
        raise InvalidParameter("need acquisitions in both fields")
    for n in group_sizes:
        if n < 1 or n > total:
            raise InvalidParameter(f"group size {n} exceeds the {total} acquisitions")
    config_near = config_near or specorr.XcorrConfig(mode=Mode.NEAR_FIELD)
    config_far = config_far or specorr.XcorrConfig(mode=Mode.FAR_FIELD)

    prep_near, info_near = specorr.prepare_acquisitions(
        near_acqs[:total], config_near.mode, config_near.crop_size, config_near.max_shift)
    prep_far, info_far = specorr.prepare_acquisitions(
        far_acqs[:total], config_far.mode, config_far.crop_size, config_far.max_shift)
    stats_near = specorr.per_acquisition_stats(prep_near, info_near, config_near)
    stats_far = specorr.per_acquisition_stats(prep_far, info_far, config_far)

    def group_result(stats, config, lo, hi):
        cmap = specorr.accumulate_stats(stats[lo:hi], specorr.Normalization.COVARIANCE,
                                        config.crop_size, config.conj_select)
        return fit_gaussian2d(cmap.values)

    entries = []
    failed = 0
    for n in group_sizes:
        n_groups = total // n
        c_values = []
        products = []
        for g in range(n_groups):
            lo, hi = g * n, (g + 1) * n
            try:
                near_fit = group_result(stats_near, config_near, lo, hi)
                far_fit = group_result(stats_far, config_far, lo, hi)
                res = epr_product(near_fit, far_fit, near_optics, far_optics,
                                  axis=axis, ci_level=ci_level)
            except Exception:
                failed += 1
                continue
            c_values.append(res.confidence)
            products.append(res.product_hbar2)
        if c_values:
            c_arr = np.array(c_values)
            entries.append(ConfidenceEntry(
                n_images=n,
                mean_c=float(c_arr.mean()),
                sd_c=float(c_arr.std(ddof=1)) if c_arr.size > 1 else 0.0,
                n_groups=len(c_values),
                mean_product=float(np.mean(products)),
            ))
        else:
            entries.append(ConfidenceEntry(n_images=n, mean_c=float("nan"),
                                           sd_c=float("nan"), n_groups=0,
                                           mean_product=float("nan")))
    a0, slope = fit_scaling(entries)
    return ConfidenceCurve(axis=axis, entries=tuple(entries), fitted_a0=a0,
                           scaling_exponent=slope, n_failed_groups=failed)
