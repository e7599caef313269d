"""Pure NumPy implementations of the hot kernels.

Same contracts as the compiled ``twinbeam._kernels`` extension; used when
the extension is unavailable or disabled via TWINBEAM_FORCE_PYTHON=1.
"""

import numpy as np


def xcorr_cross(probe: np.ndarray, conj: np.ndarray) -> np.ndarray:
    """Valid-mode raw cross products.

    out[dy, dx] = sum over the conj-sized window of
    probe[dy:dy+Hc, dx:dx+Wc] * conj.  Direct evaluation, one dot product
    per lag.
    """
    probe = np.ascontiguousarray(probe, dtype=np.float64)
    conj = np.ascontiguousarray(conj, dtype=np.float64)
    hc, wc = conj.shape
    ho = probe.shape[0] - hc + 1
    wo = probe.shape[1] - wc + 1
    flat = conj.ravel()
    out = np.empty((ho, wo), dtype=np.float64)
    for dy in range(ho):
        for dx in range(wo):
            out[dy, dx] = np.dot(probe[dy:dy + hc, dx:dx + wc].ravel(), flat)
    return out


def deposit(xs: np.ndarray, ys: np.ndarray, height: int, width: int) -> np.ndarray:
    """Accumulate photons at continuous positions into a pixel-count image.

    A photon at (x, y) increments pixel (floor(y), floor(x)); positions
    outside the frame are dropped.
    """
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    ok = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    flat = np.bincount(iy[ok] * width + ix[ok], minlength=height * width)
    return flat.reshape(height, width).astype(np.float64)
