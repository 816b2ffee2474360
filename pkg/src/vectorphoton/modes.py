"""Transverse spatial modes sampled on a pixel grid.

All fields are evaluated at the waist plane (z = 0) and normalized so that
the sum of ``|u|**2`` over pixels is one. Coordinates follow the
half-pixel convention: the default grid center is ``((w - 1) / 2, (h - 1) / 2)``,
which keeps reflection symmetries pixel-exact on even and odd grids alike.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import special
from PIL import Image

from .errors import ConfigurationError, DegenerateInputError

NORM_TOL = 1e-9
MIN_GRID_PX = 16


@dataclass(frozen=True)
class GridSpec:
    """Pixel grid of the simulated camera chip."""

    width_px: int
    height_px: int
    pixel_pitch: float = 1.0
    center: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if int(self.width_px) != self.width_px or int(self.height_px) != self.height_px:
            raise ConfigurationError("grid dimensions must be integers")
        if self.width_px < MIN_GRID_PX or self.height_px < MIN_GRID_PX:
            raise ConfigurationError(
                f"grid must be at least {MIN_GRID_PX}x{MIN_GRID_PX} pixels, "
                f"got {self.width_px}x{self.height_px}"
            )
        if not self.pixel_pitch > 0:
            raise ConfigurationError("pixel_pitch must be positive")
        if self.center is None:
            object.__setattr__(
                self, "center", ((self.width_px - 1) / 2.0, (self.height_px - 1) / 2.0)
            )
        else:
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def shape(self):
        """Array shape ``(rows, cols)``."""
        return (self.height_px, self.width_px)

    @property
    def min_extent(self):
        return min(self.width_px, self.height_px) * self.pixel_pitch

    def coordinates(self):
        """Return ``(x, y)`` arrays in length units relative to the grid center."""
        cx, cy = self.center
        x = (np.arange(self.width_px) - cx) * self.pixel_pitch
        y = (np.arange(self.height_px) - cy) * self.pixel_pitch
        return np.meshgrid(x, y)

    def polar(self):
        x, y = self.coordinates()
        return np.hypot(x, y), np.arctan2(y, x)


def default_waist(grid: GridSpec) -> float:
    """Waist such that modes up to order 2 keep > 99.9 % of their energy on-grid."""
    return grid.min_extent / 6.0


@dataclass(frozen=True)
class ComplexField:
    """Normalized complex scalar amplitude of one transverse mode."""

    grid: GridSpec
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != self.grid.shape:
            raise ConfigurationError(
                f"amplitude array shape {amps.shape} does not match grid {self.grid.shape}"
            )
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise ConfigurationError(f"field is not L2-normalized (sum |u|^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def intensity(self):
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class ModeLabel:
    """Declarative description of a spatial mode.

    ``kind`` is ``"LG"`` (uses ``l``, ``p``), ``"HG"`` (uses ``m``, ``n``) or
    ``"custom"`` (uses ``name`` only). ``waist`` of ``None`` means
    :func:`default_waist` of whatever grid the mode is built on.
    """

    kind: str
    l: int = 0
    p: int = 0
    m: int = 0
    n: int = 0
    waist: Optional[float] = None
    name: Optional[str] = None

    def __post_init__(self):
        kind = self.kind.upper() if self.kind.lower() != "custom" else "custom"
        if kind not in ("LG", "HG", "custom"):
            raise ConfigurationError(f"unknown mode kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.p < 0 or self.m < 0 or self.n < 0:
            raise ConfigurationError("mode indices p, m, n must be non-negative")
        if self.waist is not None and not self.waist > 0:
            raise ConfigurationError("waist must be positive")

    @classmethod
    def lg(cls, l, p=0, waist=None):
        return cls("LG", l=int(l), p=int(p), waist=waist)

    @classmethod
    def hg(cls, m, n, waist=None):
        return cls("HG", m=int(m), n=int(n), waist=waist)

    def __str__(self):
        if self.kind == "LG":
            return f"LG(l={self.l},p={self.p})"
        if self.kind == "HG":
            return f"HG({self.m},{self.n})"
        return f"Custom({self.name})"


def _resolve_waist(label: ModeLabel, grid: GridSpec) -> float:
    w = default_waist(grid) if label.waist is None else float(label.waist)
    if 4.0 * w > grid.min_extent:
        raise ConfigurationError(
            f"waist {w} does not fit the grid: 4*waist must be <= {grid.min_extent}"
        )
    return w


def _normalized(grid, amps):
    norm = np.sqrt(np.sum(np.abs(amps) ** 2))
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateInputError("field has zero (or non-finite) total power")
    return ComplexField(grid, amps / norm)


def make_lg(label: ModeLabel, grid: GridSpec) -> ComplexField:
    """Laguerre-Gauss mode LG_{l,p} with azimuthal phase ``exp(i l theta)``."""
    if label.kind != "LG":
        raise ConfigurationError(f"make_lg needs an LG label, got {label}")
    w = _resolve_waist(label, grid)
    r, theta = grid.polar()
    al = abs(label.l)
    rho2 = 2.0 * r**2 / w**2
    radial = (np.sqrt(rho2) ** al) * special.eval_genlaguerre(label.p, al, rho2) * np.exp(-rho2 / 2)
    amps = radial * np.exp(1j * label.l * theta)
    if label.l != 0:
        # arctan2 is arbitrary at r = 0; the radial factor already vanishes there
        amps = np.where(r == 0, 0.0, amps)
    return _normalized(grid, amps)


def make_hg(label: ModeLabel, grid: GridSpec) -> ComplexField:
    """Hermite-Gauss mode HG_{m,n}; real-valued at the waist."""
    if label.kind != "HG":
        raise ConfigurationError(f"make_hg needs an HG label, got {label}")
    w = _resolve_waist(label, grid)
    x, y = grid.coordinates()
    sx = np.sqrt(2.0) * x / w
    sy = np.sqrt(2.0) * y / w
    amps = (
        special.eval_hermite(label.m, sx)
        * special.eval_hermite(label.n, sy)
        * np.exp(-(x**2 + y**2) / w**2)
    )
    return _normalized(grid, amps.astype(complex))


def make_custom(amplitude_map, phase_map, grid: GridSpec, name="custom") -> ComplexField:
    """Field ``amplitude_map * exp(i * phase_map)``, normalized."""
    amp = np.asarray(amplitude_map, dtype=float)
    phase = np.asarray(phase_map, dtype=float)
    if amp.shape != grid.shape or phase.shape != grid.shape:
        raise ConfigurationError(
            f"custom maps {amp.shape}/{phase.shape} do not match grid {grid.shape}"
        )
    if np.any(amp < 0) or not np.all(np.isfinite(amp)) or not np.all(np.isfinite(phase)):
        raise ConfigurationError("amplitude map must be finite and non-negative, phase finite")
    if not np.any(amp > 0):
        raise DegenerateInputError("amplitude map is all zero")
    return _normalized(grid, amp * np.exp(1j * phase))


def make_mode(label: ModeLabel, grid: GridSpec) -> ComplexField:
    if label.kind == "LG":
        return make_lg(label, grid)
    if label.kind == "HG":
        return make_hg(label, grid)
    raise ConfigurationError("custom modes need explicit maps; use make_custom")


def mode_overlap(f1: ComplexField, f2: ComplexField) -> complex:
    """Discrete inner product ``sum(conj(f1) * f2)``."""
    if f1.grid != f2.grid:
        raise ConfigurationError("cannot overlap fields sampled on different grids")
    return complex(np.vdot(f1.amplitudes, f2.amplitudes))


def square_ramp_maps(grid: GridSpec, side_px: int, rising=True, phase_sign=1.0, margin=0.1):
    """Amplitude and phase maps for one arm of the tailored square beam.

    Inside a centered square of ``side_px`` pixels the intensity ramps
    linearly across the columns (left to right if ``rising``) and the phase
    ramps linearly down the rows, ``phase_sign * pi * (v - 1/2)`` with ``v``
    the fractional row position. The ramp is held flat within ``margin`` of
    each lateral edge, so that one arm is fully dark there.
    """
    if side_px < 2 or side_px > min(grid.width_px, grid.height_px):
        raise ConfigurationError(f"square side {side_px} does not fit grid {grid.shape}")
    if not 0 <= margin < 0.5:
        raise ConfigurationError("margin must lie in [0, 0.5)")
    h, w = grid.shape
    x0 = int(round(grid.center[0] - (side_px - 1) / 2.0))
    y0 = int(round(grid.center[1] - (side_px - 1) / 2.0))
    u = (np.arange(side_px) + 0.5) / side_px
    ramp = np.clip((u - margin) / (1.0 - 2.0 * margin), 0.0, 1.0)
    if not rising:
        ramp = 1.0 - ramp
    amp = np.zeros((h, w))
    phase = np.zeros((h, w))
    amp[y0:y0 + side_px, x0:x0 + side_px] = np.sqrt(ramp)[None, :]
    phase[y0:y0 + side_px, x0:x0 + side_px] = (phase_sign * np.pi * (u - 0.5))[:, None]
    return amp, phase


def load_map(path, kind="amplitude"):
    """Read a custom amplitude or phase map from CSV or PGM.

    PGM gray levels are scaled to ``[0, 1]`` for amplitudes and to
    ``[0, 2*pi)`` for phases (``maxval + 1`` maps to ``2*pi``). CSV values are
    taken verbatim, one row of the file per pixel row.
    """
    path = Path(path)
    if kind not in ("amplitude", "phase"):
        raise ConfigurationError(f"unknown map kind {kind!r}")
    suffix = path.suffix.lower()
    if suffix == ".csv":
        with open(path, newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        data = np.array(rows, dtype=float)
        if data.ndim != 2:
            raise ConfigurationError(f"{path}: CSV rows have unequal lengths")
        return data
    if suffix in (".pgm", ".pnm"):
        with Image.open(path) as img:
            maxval = 65535 if img.mode in ("I", "I;16", "I;16B") else 255
            data = np.asarray(img, dtype=float)
        if kind == "amplitude":
            return data / maxval
        return data * (2.0 * np.pi / (maxval + 1))
    raise ConfigurationError(f"{path}: unsupported map format {suffix!r} (use .csv or .pgm)")
