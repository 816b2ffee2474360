"""Region-wise Stokes tomography with ellipse maps and singularity detection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw
from skimage.measure import find_contours, points_in_poly

from .errors import (
    ConfigurationError,
    IncompleteTomographyError,
    InsufficientResolutionError,
    UnpolarizedRegionError,
)
from .modes import GridSpec

ANALYZERS = ("H", "V", "D", "A", "R", "L")
L_LINE_THRESHOLD = 0.1
DOP_MIN = 0.2
C_POINT_TOL = 1e-3

CLASS_COLORS = {
    "linear": (40, 90, 255),
    "right": (230, 30, 30),
    "left": (20, 190, 40),
}


@dataclass(frozen=True)
class RegionGrid:
    """Square tiles of ``region_px`` pixels.

    ``origin=None`` places tile boundaries symmetrically about the grid
    center (for even grids the center falls on a tile corner). ``step``
    smaller than ``region_px`` gives overlapping sliding windows; the default
    is non-overlapping tiling. Partial tiles at the edges are dropped.
    """

    region_px: int = 10
    origin: Optional[Tuple[int, int]] = None
    step: Optional[int] = None

    def __post_init__(self):
        if int(self.region_px) != self.region_px or self.region_px < 1:
            raise ConfigurationError("region_px must be a positive integer")
        if self.step is not None and not 1 <= self.step:
            raise ConfigurationError("step must be a positive integer")

    @property
    def stride(self):
        return self.region_px if self.step is None else int(self.step)

    def layout(self, grid: GridSpec):
        """Return ``(ox, oy, nx, ny)``: tile origin and number of tiles."""
        s = self.stride
        if self.origin is None:
            ox = (grid.width_px // 2) % s
            oy = (grid.height_px // 2) % s
        else:
            ox, oy = (int(v) for v in self.origin)
        nx = (grid.width_px - ox - self.region_px) // s + 1
        ny = (grid.height_px - oy - self.region_px) // s + 1
        if nx < 1 or ny < 1:
            raise ConfigurationError(f"no {self.region_px}-px tile fits the grid from origin {(ox, oy)}")
        return ox, oy, nx, ny

    def shape(self, grid):
        _, _, nx, ny = self.layout(grid)
        return (ny, nx)

    def sum(self, image: np.ndarray) -> np.ndarray:
        """Sum an image (or a stack of images on the last two axes) over each tile."""
        image = np.asarray(image)
        h, w = image.shape[-2:]
        grid = GridSpec(w, h)
        ox, oy, nx, ny = self.layout(grid)
        r, s = self.region_px, self.stride
        if s == r:
            block = image[..., oy:oy + ny * r, ox:ox + nx * r]
            block = block.reshape(block.shape[:-2] + (ny, r, nx, r))
            return block.sum(axis=(-3, -1))
        integral = np.zeros(image.shape[:-2] + (h + 1, w + 1), dtype=np.result_type(image, float))
        integral[..., 1:, 1:] = image.cumsum(-2).cumsum(-1)
        y0 = oy + s * np.arange(ny)
        x0 = ox + s * np.arange(nx)
        Y0, X0 = np.meshgrid(y0, x0, indexing="ij")
        return (
            integral[..., Y0 + r, X0 + r] - integral[..., Y0, X0 + r]
            - integral[..., Y0 + r, X0] + integral[..., Y0, X0]
        )

    def centers(self, grid: GridSpec):
        """Tile centers ``(xc, yc)`` in pixel coordinates, each of shape ``(ny, nx)``."""
        ox, oy, nx, ny = self.layout(grid)
        half = (self.region_px - 1) / 2.0
        xc = ox + self.stride * np.arange(nx) + half
        yc = oy + self.stride * np.arange(ny) + half
        return np.meshgrid(xc, yc)

    def slices(self, grid: GridSpec, iy: int, ix: int):
        ox, oy, _, _ = self.layout(grid)
        y0, x0 = oy + iy * self.stride, ox + ix * self.stride
        return (slice(y0, y0 + self.region_px), slice(x0, x0 + self.region_px))

    def index_map(self, grid: GridSpec) -> np.ndarray:
        """Per-pixel tile index (row-major), ``-1`` outside tiles. Non-overlapping only."""
        if self.stride != self.region_px:
            raise ConfigurationError("index_map is defined for non-overlapping tiles only")
        ox, oy, nx, ny = self.layout(grid)
        out = -np.ones(grid.shape, dtype=int)
        r = self.region_px
        ids = np.arange(nx * ny).reshape(ny, nx)
        out[oy:oy + ny * r, ox:ox + nx * r] = np.kron(ids, np.ones((r, r), dtype=int))
        return out


def stokes_from_intensities(ih, iv, id_, ia, ir, il):
    """Six-setting Stokes estimate and Poisson standard deviations.

    Returns ``(S, sigma)``, each of shape ``(4,) + shape(ih)``.
    """
    ih, iv, id_, ia, ir, il = (np.asarray(v, dtype=float) for v in (ih, iv, id_, ia, ir, il))
    total = ih + iv + id_ + ia + ir + il
    s = np.stack([total / 3.0, ih - iv, id_ - ia, ir - il])
    sigma = np.sqrt(np.stack([total / 9.0, ih + iv, id_ + ia, ir + il]))
    return s, sigma


@dataclass(frozen=True)
class StokesMap:
    """Per-region Stokes vectors in count units.

    ``intensities`` keeps the six region sums (order H, V, D, A, R, L) so
    that derived quantities can be propagated exactly.
    """

    grid: GridSpec
    regions: RegionGrid
    s: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    intensities: np.ndarray = field(repr=False)
    trigger: str = ""

    @property
    def shape(self):
        return self.s.shape[1:]

    @property
    def photons(self):
        return self.intensities.sum(axis=0)

    def normalized(self):
        """``(S1, S2, S3) / S0`` and first-order standard deviations."""
        s0 = self.s[0]
        with np.errstate(invalid="ignore", divide="ignore"):
            norm = self.s[1:] / s0
            # d(Sk/S0)/dI_j = c_kj / S0 - Sk / (3 S0^2)
            coeff = np.array([[1, -1, 0, 0, 0, 0], [0, 0, 1, -1, 0, 0], [0, 0, 0, 0, 1, -1]], dtype=float)
            var = np.zeros_like(norm)
            for k in range(3):
                for j in range(6):
                    grad = coeff[k, j] / s0 - self.s[k + 1] / (3.0 * s0**2)
                    var[k] += grad**2 * self.intensities[j]
        return norm, np.sqrt(var)


def stokes_reconstruct(images, regions: RegionGrid, trigger="") -> StokesMap:
    """Reconstruct a :class:`StokesMap` from six analyzer images.

    ``images`` maps analyzer labels to count (or mean) images, or is a
    :class:`~vectorphoton.imaging.CoincidenceImageStack` together with ``trigger``.
    """
    if hasattr(images, "images"):
        stack = images
        images = {a: img.counts for (t, a), img in stack.images.items() if t == trigger}
    missing = [a for a in ANALYZERS if a not in images]
    if missing:
        raise IncompleteTomographyError(f"tomography for trigger {trigger!r} lacks analyzer(s) {missing}")
    first = np.asarray(images["H"])
    grid = GridSpec(first.shape[1], first.shape[0])
    sums = np.stack([regions.sum(np.asarray(images[a], dtype=float)) for a in ANALYZERS])
    s, sigma = stokes_from_intensities(*sums)
    return StokesMap(grid, regions, s, sigma, sums, trigger)


@dataclass(frozen=True)
class EllipseParams:
    psi: float
    chi: float
    cls: str
    dop: float
    c_point_candidate: bool


def ellipse_params(stokes, l_line_threshold=L_LINE_THRESHOLD, dop_min=DOP_MIN) -> EllipseParams:
    """Polarization ellipse of one region from ``(S0, S1, S2, S3)``.

    ``psi`` is the orientation in ``[0, pi)`` and ``chi`` the ellipticity
    angle; positive ``S3`` (more R than L) is right-handed.
    """
    s0, s1, s2, s3 = (float(v) for v in stokes)
    pol = np.sqrt(s1**2 + s2**2 + s3**2)
    if pol <= 0 or s0 <= 0:
        raise UnpolarizedRegionError("region has no polarized component")
    dop = pol / s0
    if dop < dop_min:
        raise UnpolarizedRegionError(f"degree of polarization {dop:.3f} below {dop_min}")
    psi = (0.5 * np.arctan2(s2, s1)) % np.pi
    chi = 0.5 * np.arcsin(np.clip(s3 / pol, -1.0, 1.0))
    return EllipseParams(psi, chi, _classify(s0, s3, l_line_threshold), dop,
                         bool(np.hypot(s1, s2) <= C_POINT_TOL * pol))


def _classify(s0, s3, threshold):
    if abs(s3) <= threshold * s0:
        return "linear"
    return "right" if s3 > 0 else "left"


@dataclass(frozen=True)
class EllipseMap:
    """Per-region ellipse parameters; ``cls`` is one of ``linear``, ``right``,
    ``left``, ``unpolarized`` or ``dark``."""

    psi: np.ndarray = field(repr=False)
    chi: np.ndarray = field(repr=False)
    cls: np.ndarray = field(repr=False)
    dop: np.ndarray = field(repr=False)

    @property
    def valid(self):
        return np.isin(self.cls, ("linear", "right", "left"))


def ellipse_map(smap: StokesMap, l_line_threshold=L_LINE_THRESHOLD, dop_min=DOP_MIN,
                intensity_floor=0.0) -> EllipseMap:
    """Vectorized :func:`ellipse_params` over a map.

    Regions with ``S0`` at or below ``intensity_floor * max(S0)`` are ``dark``.
    """
    s0, s1, s2, s3 = smap.s
    pol = np.sqrt(s1**2 + s2**2 + s3**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        dop = np.where(s0 > 0, pol / s0, 0.0)
        chi = 0.5 * np.arcsin(np.clip(np.where(pol > 0, s3 / pol, 0.0), -1, 1))
    psi = (0.5 * np.arctan2(s2, s1)) % np.pi
    cls = np.where(np.abs(s3) <= l_line_threshold * s0, "linear", np.where(s3 > 0, "right", "left"))
    cls = np.where(dop < dop_min, "unpolarized", cls)
    dark = (s0 <= 0) | (s0 <= intensity_floor * np.max(s0, initial=0.0))
    cls = np.where(dark, "dark", cls).astype("<U11")
    return EllipseMap(psi, chi, cls, dop)


@dataclass
class SingularitySet:
    """C-points ``(x, y, index)`` in pixel coordinates and L-line polylines."""

    c_points: List[Tuple[float, float, float]]
    l_lines: List[np.ndarray]

    @property
    def closed(self):
        return [bool(len(line) > 2 and np.allclose(line[0], line[-1])) for line in self.l_lines]

    def to_dict(self):
        return {
            "c_points": [{"x": float(x), "y": float(y), "index": float(i)} for x, y, i in self.c_points],
            "l_lines": [
                {"closed": c, "points": np.round(line, 4).tolist()}
                for line, c in zip(self.l_lines, self.closed)
            ],
        }


def _wrap_half_pi(d):
    """Wrap orientation differences into ``[-pi/2, pi/2)``."""
    return (d + np.pi / 2) % np.pi - np.pi / 2


def orientation_winding(psi_loop) -> float:
    """Index (winding of ``psi`` in units of 2*pi) along a closed loop of orientations."""
    psi_loop = np.asarray(psi_loop, dtype=float)
    d = _wrap_half_pi(np.diff(np.append(psi_loop, psi_loop[0])))
    return float(np.sum(d) / (2 * np.pi))


def find_singularities(emap: EllipseMap, smap: StokesMap, intensity_fraction=0.01) -> SingularitySet:
    """Locate C-points (half-integer windings of ``psi`` around 2x2 region
    plaquettes) and L-lines (zero contours of ``S3``) on bright regions."""
    if emap.psi.shape != smap.shape:
        raise ConfigurationError("ellipse and Stokes maps are on different region grids")
    ny, nx = smap.shape
    if ny < 3 or nx < 3:
        raise InsufficientResolutionError(f"need at least 3x3 regions, got {ny}x{nx}")
    s0, s1, s2, s3 = smap.s
    valid = emap.valid & (s0 > intensity_fraction * np.max(s0, initial=0.0))
    oriented = valid & (np.hypot(s1, s2) > 0)
    xc, yc = smap.regions.centers(smap.grid)

    psi = emap.psi
    # corners in positive-angle order for x right / y down: (0,0) (1,0) (1,1) (0,1)
    corners = [psi[:-1, :-1], psi[:-1, 1:], psi[1:, 1:], psi[1:, :-1]]
    ok = oriented[:-1, :-1] & oriented[:-1, 1:] & oriented[1:, 1:] & oriented[1:, :-1]
    total = np.zeros_like(corners[0])
    for k in range(4):
        total += _wrap_half_pi(corners[(k + 1) % 4] - corners[k])
    index = np.round(total / np.pi) / 2.0
    c_points = []
    for iy, ix in zip(*np.nonzero(ok & (np.abs(index) == 0.5))):
        cx = xc[iy:iy + 2, ix:ix + 2].mean()
        cy = yc[iy:iy + 2, ix:ix + 2].mean()
        c_points.append((float(cx), float(cy), float(index[iy, ix])))

    with np.errstate(invalid="ignore", divide="ignore"):
        s3n = np.where(valid, s3 / s0, 0.0)
    l_lines = []
    if np.any(valid):
        step = smap.regions.stride
        x0, y0 = xc[0, 0], yc[0, 0]
        for contour in find_contours(s3n, 0.0, mask=valid):
            xy = np.column_stack([x0 + contour[:, 1] * step, y0 + contour[:, 0] * step])
            l_lines.append(xy)
    return SingularitySet(c_points, l_lines)


def encircles(polyline, point) -> bool:
    """True if a closed polyline ``(N, 2)`` in ``(x, y)`` contains ``point``."""
    return bool(points_in_poly(np.asarray([point], dtype=float), np.asarray(polyline))[0])


def render_pattern(emap: EllipseMap, smap: StokesMap, intensity=None, stride=1, scale=2) -> np.ndarray:
    """RGB raster: gray intensity underlay with ellipse glyphs per region.

    ``stride`` draws every n-th region in each direction. Glyph colors
    follow ``CLASS_COLORS`` by ellipse class. Returns a ``uint8`` array
    of shape ``(rows*scale, cols*scale, 3)``.
    """
    grid = smap.grid
    if intensity is None:
        intensity = np.zeros(grid.shape)
    intensity = np.asarray(intensity, dtype=float)
    peak = intensity.max(initial=0.0)
    gray = np.zeros(grid.shape, dtype=np.uint8) if peak <= 0 else (255 * intensity / peak).astype(np.uint8)
    img = Image.fromarray(gray, mode="L").convert("RGB")
    if scale != 1:
        img = img.resize((grid.width_px * scale, grid.height_px * scale), Image.NEAREST)
    draw = ImageDraw.Draw(img)
    xc, yc = smap.regions.centers(grid)
    a = 0.45 * smap.regions.stride * max(1, stride) * scale
    t = np.linspace(0, 2 * np.pi, 25)
    valid = emap.valid
    for iy in range(0, valid.shape[0], stride):
        for ix in range(0, valid.shape[1], stride):
            if not valid[iy, ix]:
                continue
            psi, chi = emap.psi[iy, ix], emap.chi[iy, ix]
            b = a * abs(np.tan(chi))
            cx, cy = (xc[iy, ix] + 0.5) * scale, (yc[iy, ix] + 0.5) * scale
            px = cx + a * np.cos(t) * np.cos(psi) - b * np.sin(t) * np.sin(psi)
            py = cy + a * np.cos(t) * np.sin(psi) + b * np.sin(t) * np.cos(psi)
            color = CLASS_COLORS[str(emap.cls[iy, ix])]
            draw.line(list(zip(px.tolist(), py.tolist())), fill=color, width=max(1, scale // 2))
    return np.asarray(img)


def save_image(rgb: np.ndarray, path) -> None:
    """Write an RGB raster as PNG or PPM (chosen by suffix)."""
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)
