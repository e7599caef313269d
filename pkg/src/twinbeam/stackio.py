"""Image-stack data model, bit-exact TBIM file I/O and elementary raster ops.

The TBIM container is deliberately tiny: a fixed little-endian header
followed by the raw payload, row-major within each frame and frame-major
across the stack.  Raw synthetic photoelectron counts are stored as f32
(counts are small integers), differenced/fluctuation data as f64.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Optional, Union

import numpy as np
from scipy import ndimage

from .errors import (
    BadMagic,
    InvalidBin,
    InvalidDimensions,
    InvalidParameter,
    RegionOutOfBounds,
    TruncatedPayload,
    UnknownDtype,
    UnsupportedVersion,
)

# Reduced Planck constant, J*s.  Criterion math is done in units of hbar;
# this constant only labels reports.
HBAR = 1.054571817e-34

TBIM_MAGIC = b"TBIM"
TBIM_VERSION = 1
# magic(4) version(u2) dtype(u2) width(u4) height(u4) n_frames(u4)
# pixel_size_s(f8) frame_interval(f8) exposure(f8)
_HEADER_STRUCT = struct.Struct("<4sHHIIIddd")
TBIM_HEADER_SIZE = _HEADER_STRUCT.size  # 44 bytes

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class Mode(str, Enum):
    """Imaging plane: source position (near) or transverse momentum (far)."""

    NEAR_FIELD = "NearField"
    FAR_FIELD = "FarField"


@dataclass(frozen=True)
class FrameStack:
    """A stack of 2D pixel-count frames plus acquisition geometry.

    Parameters
    ----------
    data : ndarray, shape (n_frames, height, width)
        Pixel values in photoelectron counts.  float32 for raw counts,
        float64 for signed differenced data.
    pixel_size_s : float
        Linear pixel size in meters (> 0).
    frame_interval : float
        Delay between consecutive frames in seconds.
    exposure : float
        Exposure time per frame in seconds.
    """

    data: np.ndarray
    pixel_size_s: float
    frame_interval: float = 0.0
    exposure: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise InvalidDimensions(f"expected (n_frames, height, width), got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if self.pixel_size_s <= 0:
            raise InvalidParameter("pixel_size_s must be > 0")
        object.__setattr__(self, "data", _readonly(arr))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def frame(self, i: int) -> np.ndarray:
        return self.data[i]

    def validate_raw(self) -> None:
        """Raw (undifferenced) stacks must hold only finite, non-negative values."""
        if not np.all(np.isfinite(self.data)):
            raise InvalidParameter("raw stack contains non-finite values")
        if np.any(self.data < 0):
            raise InvalidParameter("raw stack contains negative counts")


@dataclass(frozen=True)
class AcquisitionSet:
    """The four analysis frames of one acquisition plus optional backgrounds.

    probe_f1/probe_f2 and conj_f1/conj_f2 are the two consecutive frames of
    the probe and conjugate images.  Background frames, when present, were
    produced with the probe seed off.
    """

    probe_f1: np.ndarray
    probe_f2: np.ndarray
    conj_f1: np.ndarray
    conj_f2: np.ndarray
    bg_probe: Optional[np.ndarray] = None
    bg_conj: Optional[np.ndarray] = None

    def __post_init__(self):
        frames = {
            "probe_f1": self.probe_f1,
            "probe_f2": self.probe_f2,
            "conj_f1": self.conj_f1,
            "conj_f2": self.conj_f2,
        }
        if self.bg_probe is not None:
            frames["bg_probe"] = self.bg_probe
        if self.bg_conj is not None:
            frames["bg_conj"] = self.bg_conj
        shape = None
        for name, f in frames.items():
            f = np.asarray(f)
            if f.ndim != 2:
                raise InvalidDimensions(f"{name} must be 2D, got shape {f.shape}")
            if shape is None:
                shape = f.shape
            elif f.shape != shape:
                raise InvalidDimensions(
                    f"{name} has shape {f.shape}, expected {shape} shared by all members"
                )
            object.__setattr__(self, name, _readonly(f))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probe_f1.shape

    def has_background(self) -> bool:
        return self.bg_probe is not None and self.bg_conj is not None


@dataclass(frozen=True)
class OpticsConfig:
    """Physical constants converting fitted pixel widths to position/momentum.

    Near field needs the imaging (de)magnification M; far field needs the
    Fourier-lens focal length and the wavelength.
    """

    mode: Mode
    pixel_size_s: float
    magnification_M: Optional[float] = None
    focal_f: Optional[float] = None
    wavelength_lambda: Optional[float] = None
    hbar: float = HBAR

    def __post_init__(self):
        if self.pixel_size_s <= 0:
            raise InvalidParameter("pixel_size_s must be > 0")
        if self.mode == Mode.NEAR_FIELD:
            if self.magnification_M is None or self.magnification_M <= 0:
                raise InvalidParameter("NearField requires magnification_M > 0")
        elif self.mode == Mode.FAR_FIELD:
            if self.focal_f is None or self.focal_f <= 0:
                raise InvalidParameter("FarField requires focal_f > 0")
            if self.wavelength_lambda is None or self.wavelength_lambda <= 0:
                raise InvalidParameter("FarField requires wavelength_lambda > 0")
        else:  # pragma: no cover
            raise InvalidParameter(f"unknown mode {self.mode!r}")

    def to_json(self) -> dict:
        d = {
            "mode": self.mode.value,
            "pixel_size_s": self.pixel_size_s,
            "hbar": self.hbar,
        }
        if self.magnification_M is not None:
            d["magnification_M"] = self.magnification_M
        if self.focal_f is not None:
            d["focal_f"] = self.focal_f
        if self.wavelength_lambda is not None:
            d["wavelength_lambda"] = self.wavelength_lambda
        return d

    @classmethod
    def from_json(cls, d: dict) -> "OpticsConfig":
        return cls(
            mode=Mode(d["mode"]),
            pixel_size_s=float(d["pixel_size_s"]),
            magnification_M=d.get("magnification_M"),
            focal_f=d.get("focal_f"),
            wavelength_lambda=d.get("wavelength_lambda"),
            hbar=float(d.get("hbar", HBAR)),
        )


@dataclass(frozen=True)
class AnalysisRegion:
    """A rectangular pixel region (x0, y0, width, height)."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidParameter("region width/height must be >= 1")
        if self.x0 < 0 or self.y0 < 0:
            raise RegionOutOfBounds(f"region offset ({self.x0}, {self.y0}) is negative")

    def check_inside(self, frame_shape: tuple[int, int]) -> None:
        h, w = frame_shape
        if self.x0 + self.width > w or self.y0 + self.height > h:
            raise RegionOutOfBounds(
                f"region {self} does not fit inside frame of shape {(h, w)}"
            )

    def to_json(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "width": self.width, "height": self.height}

    @classmethod
    def from_json(cls, d: dict) -> "AnalysisRegion":
        return cls(int(d["x0"]), int(d["y0"]), int(d["width"]), int(d["height"]))


# ---------------------------------------------------------------------------
# TBIM I/O
# ---------------------------------------------------------------------------

_PathOrFile = Union[str, "io.IOBase", BinaryIO]


def _u32_checked(value: int, name: str) -> int:
    if not 0 < value <= 0xFFFFFFFF:
        raise InvalidDimensions(f"{name}={value} does not fit the header (u32, nonzero)")
    return value


def write_stack(stack: FrameStack, destination: _PathOrFile) -> int:
    """Serialize a FrameStack to the TBIM container.

    Returns the number of bytes written.  Round-trips bit-exactly through
    :func:`read_stack` for both payload dtypes.
    """
    dtype = np.dtype(stack.data.dtype).newbyteorder("<")
    code = _CODE_FOR_KIND.get(np.dtype(stack.data.dtype))
    if code is None:  # constructor normally prevents this
        raise UnknownDtype(f"cannot serialize dtype {stack.data.dtype}")
    header = _HEADER_STRUCT.pack(
        TBIM_MAGIC,
        TBIM_VERSION,
        code,
        _u32_checked(stack.width, "width"),
        _u32_checked(stack.height, "height"),
        _u32_checked(stack.n_frames, "n_frames"),
        stack.pixel_size_s,
        stack.frame_interval,
        stack.exposure,
    )
    payload = np.ascontiguousarray(stack.data, dtype=dtype).tobytes()

    if isinstance(destination, str):
        with open(destination, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    else:
        destination.write(header)
        destination.write(payload)
    return len(header) + len(payload)


def read_stack(source: _PathOrFile) -> FrameStack:
    """Read a TBIM container; exact inverse of :func:`write_stack`."""
    if isinstance(source, str):
        with open(source, "rb") as fh:
            blob = fh.read()
    else:
        blob = source.read()

    if len(blob) < 4 or blob[:4] != TBIM_MAGIC:
        raise BadMagic(f"not a TBIM stream (leading bytes {blob[:4]!r})")
    if len(blob) < TBIM_HEADER_SIZE:
        raise TruncatedPayload(f"header needs {TBIM_HEADER_SIZE} bytes, got {len(blob)}")
    (_, version, code, width, height, n_frames,
     pixel_size_s, frame_interval, exposure) = _HEADER_STRUCT.unpack_from(blob)
    if version != TBIM_VERSION:
        raise UnsupportedVersion(f"TBIM version {version}, expected {TBIM_VERSION}")
    dtype = _DTYPE_CODES.get(code)
    if dtype is None:
        raise UnknownDtype(f"dtype code {code}")
    if min(width, height, n_frames) == 0:
        raise InvalidDimensions("header declares a zero dimension")

    expected = width * height * n_frames * dtype.itemsize
    got = len(blob) - TBIM_HEADER_SIZE
    if got != expected:
        raise TruncatedPayload(f"payload has {got} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype=dtype, offset=TBIM_HEADER_SIZE).reshape(
        n_frames, height, width
    )
    return FrameStack(
        data=data.astype(dtype.newbyteorder("=")),
        pixel_size_s=pixel_size_s,
        frame_interval=frame_interval,
        exposure=exposure,
    )


# ---------------------------------------------------------------------------
# Raster operations
# ---------------------------------------------------------------------------

def crop(frame: np.ndarray, region: AnalysisRegion) -> np.ndarray:
    """Copy the given region out of a 2D frame."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise InvalidDimensions(f"crop expects a 2D frame, got shape {frame.shape}")
    region.check_inside(frame.shape)
    return frame[region.y0:region.y0 + region.height,
                 region.x0:region.x0 + region.width].copy()


def rotate180(frame: np.ndarray) -> np.ndarray:
    """Rotate a 2D frame by 180 degrees: out[y, x] = in[H-1-y, W-1-x]."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise InvalidDimensions(f"rotate180 expects a 2D frame, got shape {frame.shape}")
    return frame[::-1, ::-1].copy()


def bin_superpixels(frame: np.ndarray, k: int) -> np.ndarray:
    """Sum k x k pixel blocks into super-pixels.

    Output shape is (H // k, W // k); trailing rows/columns beyond the
    largest multiple of k are discarded.
    """
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise InvalidDimensions(f"bin_superpixels expects a 2D frame, got shape {frame.shape}")
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidBin(f"bin size must be a positive integer, got {k!r}")
    h2, w2 = frame.shape[0] // k, frame.shape[1] // k
    if h2 == 0 or w2 == 0:
        raise InvalidBin(f"bin size {k} exceeds frame shape {frame.shape}")
    trimmed = frame[:h2 * k, :w2 * k]
    return trimmed.reshape(h2, k, w2, k).sum(axis=(1, 3))


def smoothed_peak(frame: np.ndarray, box: int = 5) -> tuple[int, int]:
    """Locate the intensity maximum of a frame after a box-filter smooth.

    A plain argmax is noise-sensitive, so the frame is smoothed with a
    box x box mean filter (zero padding) first.  Ties resolve to the
    smallest row-major index.  Returns (x, y).
    """
    frame = np.asarray(frame, dtype=np.float64)
    smooth = ndimage.uniform_filter(frame, size=box, mode="constant")
    idx = int(np.argmax(smooth))
    y, x = divmod(idx, frame.shape[1])
    return x, y


def center_region_on_peak(frame: np.ndarray, width: int, height: int) -> AnalysisRegion:
    """Build a width x height region centered on the smoothed intensity peak.

    The offset is clamped so the region always fits inside the frame.
    """
    frame = np.asarray(frame)
    if height > frame.shape[0] or width > frame.shape[1]:
        raise RegionOutOfBounds(
            f"region {width}x{height} larger than frame {frame.shape}"
        )
    px, py = smoothed_peak(frame)
    x0 = min(max(px - width // 2, 0), frame.shape[1] - width)
    y0 = min(max(py - height // 2, 0), frame.shape[0] - height)
    return AnalysisRegion(x0=x0, y0=y0, width=width, height=height)


def shift_frame(frame: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer-shift a frame, filling vacated pixels with zeros.

    out[y, x] = in[y - dy, x - dx] where defined; zero elsewhere.
    """
    frame = np.asarray(frame)
    out = np.zeros_like(frame)
    h, w = frame.shape
    xs_src = slice(max(0, -dx), min(w, w - dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_dst = slice(max(0, dx), min(w, w + dx))
    ys_dst = slice(max(0, dy), min(h, h + dy))
    out[ys_dst, xs_dst] = frame[ys_src, xs_src]
    return out


def stack_to_acquisitions(
    probe: FrameStack,
    conj: FrameStack,
    bg_probe: Optional[FrameStack] = None,
    bg_conj: Optional[FrameStack] = None,
) -> list[AcquisitionSet]:
    """Slice two-frames-per-acquisition stacks into AcquisitionSets.

    Signal stacks hold 2*n frames ordered (acq0 f1, acq0 f2, acq1 f1, ...);
    background stacks hold one frame per acquisition.
    """
    if probe.n_frames != conj.n_frames or probe.n_frames % 2:
        raise InvalidDimensions(
            f"signal stacks need matching even frame counts, got "
            f"{probe.n_frames} and {conj.n_frames}"
        )
    n = probe.n_frames // 2
    for bg, name in ((bg_probe, "bg_probe"), (bg_conj, "bg_conj")):
        if bg is not None and bg.n_frames != n:
            raise InvalidDimensions(f"{name} has {bg.n_frames} frames, expected {n}")
    out = []
    for i in range(n):
        out.append(AcquisitionSet(
            probe_f1=probe.data[2 * i],
            probe_f2=probe.data[2 * i + 1],
            conj_f1=conj.data[2 * i],
            conj_f2=conj.data[2 * i + 1],
            bg_probe=None if bg_probe is None else bg_probe.data[i],
            bg_conj=None if bg_conj is None else bg_conj.data[i],
        ))
    return out


def acquisitions_to_stacks(
    acqs: list[AcquisitionSet],
    pixel_size_s: float,
    frame_interval: float = 0.0,
    exposure: float = 0.0,
    dtype=np.float32,
) -> dict[str, FrameStack]:
    """Pack AcquisitionSets back into TBIM-ready stacks (inverse of slicing)."""
    if not acqs:
        raise InvalidParameter("need at least one acquisition")
    meta = dict(pixel_size_s=pixel_size_s, frame_interval=frame_interval, exposure=exposure)
    probe = np.stack([f for a in acqs for f in (a.probe_f1, a.probe_f2)]).astype(dtype)
    conj = np.stack([f for a in acqs for f in (a.conj_f1, a.conj_f2)]).astype(dtype)
    stacks = {
        "probe": FrameStack(data=probe, **meta),
        "conjugate": FrameStack(data=conj, **meta),
    }
    if all(a.has_background() for a in acqs):
        stacks["background_probe"] = FrameStack(
            data=np.stack([a.bg_probe for a in acqs]).astype(dtype), **meta)
        stacks["background_conjugate"] = FrameStack(
            data=np.stack([a.bg_conj for a in acqs]).astype(dtype), **meta)
    return stacks


def load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
