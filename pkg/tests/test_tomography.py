import numpy as np
import pytest

from vectorphoton.errors import (
    ConfigurationError,
    IncompleteTomographyError,
    InsufficientResolutionError,
    UnpolarizedRegionError,
)
from vectorphoton.imaging import DetectorModel, acquire_stack, expected_counts, sample_image
from vectorphoton.modes import GridSpec, make_custom, square_ramp_maps
from vectorphoton.state import JonesVector, build_state, conditional_field
from vectorphoton.tomography import (
    ANALYZERS,
    RegionGrid,
    encircles,
    ellipse_map,
    ellipse_params,
    find_singularities,
    orientation_winding,
    render_pattern,
    stokes_from_intensities,
    stokes_reconstruct,
)

from conftest import SQRT_HALF, lg_state, uniform_field

D = JonesVector.named("D")


def noiseless_stack(state, trigger, det=None):
    det = det or DetectorModel()
    return {a: expected_counts(state, trigger, a, det) for a in ANALYZERS}


def oracle_normalized(state, trigger, regions):
    field, _ = conditional_field(state, JonesVector.named(trigger))
    s = regions.sum(field.stokes())
    with np.errstate(invalid="ignore", divide="ignore"):
        return s[1:] / s[0], s[0]


def test_pure_h_example():
    s, sigma = stokes_from_intensities(1000, 0, 500, 500, 500, 500)
    assert np.allclose(s, [1000, 1000, 0, 0])
    assert np.allclose(sigma, [np.sqrt(3000) / 3, np.sqrt(1000), np.sqrt(1000), np.sqrt(1000)])


def test_missing_analyzer():
    imgs = {a: np.ones((20, 20)) for a in "HVDAR"}
    with pytest.raises(IncompleteTomographyError, match="L"):
        stokes_reconstruct(imgs, RegionGrid(5))


def test_region_grid_centered_layout(grid256):
    rg = RegionGrid(10)
    assert rg.layout(grid256) == (8, 8, 24, 24)
    xc, yc = rg.centers(grid256)
    assert np.allclose(xc[0, 11:13], [122.5, 132.5])
    assert RegionGrid(10, origin=(0, 0)).layout(grid256) == (0, 0, 25, 25)


def test_region_sum_and_sliding_window():
    rng = np.random.default_rng(0)
    img = rng.random((40, 50))
    rg = RegionGrid(6, origin=(1, 2), step=3)
    sums = rg.sum(img)
    grid = GridSpec(50, 40)
    for iy in range(sums.shape[0]):
        for ix in range(sums.shape[1]):
            assert sums[iy, ix] == pytest.approx(img[rg.slices(grid, iy, ix)].sum())
    tiles = RegionGrid(5, origin=(0, 0))
    assert tiles.sum(img).sum() == pytest.approx(img.sum())
    with pytest.raises(ConfigurationError):
        RegionGrid(0)


def test_radial_positive_x_axis_is_horizontal(radial_state, grid256):
    # tile rows centered on the x axis
    rg = RegionGrid(10, origin=(8, 3))
    smap = stokes_reconstruct(noiseless_stack(radial_state, D), rg)
    norm, _ = smap.normalized()
    xc, yc = rg.centers(grid256)
    iy, ix = 12, 15
    assert yc[iy, ix] == 127.5 and xc[iy, ix] > 160
    assert norm[0, iy, ix] > 0.95


@pytest.mark.parametrize("trigger", ["D", "H", "L", "A"])
def test_noiseless_round_trip(trigger, grid256):
    st = lg_state(grid256, 0, 1, a=0.6, phi=0.4)
    rg = RegionGrid(10)
    smap = stokes_reconstruct(noiseless_stack(st, JonesVector.named(trigger)), rg)
    norm, _ = smap.normalized()
    oracle, s0 = oracle_normalized(st, trigger, rg)
    bright = s0 > 1e-12
    assert np.max(np.abs(norm[:, bright] - oracle[:, bright])) < 1e-6


def test_ellipse_examples():
    e = ellipse_params([1, 1, 0, 0])
    assert (e.psi, e.chi, e.cls) == (0.0, 0.0, "linear")
    e = ellipse_params([1, 0, 0, -1])
    assert e.chi == pytest.approx(-np.pi / 4)
    assert e.cls == "left" and e.c_point_candidate
    e = ellipse_params([1, 0, 1, 0])
    assert e.psi == pytest.approx(np.pi / 4) and e.cls == "linear"
    assert ellipse_params([1, 0, 0.3, 0.5]).cls == "right"
    with pytest.raises(UnpolarizedRegionError):
        ellipse_params([1, 0, 0, 0])
    with pytest.raises(UnpolarizedRegionError):
        ellipse_params([1, 0.1, 0, 0])


def test_ellipse_map_classes(radial_state):
    rg = RegionGrid(10)
    smap = stokes_reconstruct(noiseless_stack(radial_state, D), rg)
    emap = ellipse_map(smap, intensity_floor=0.05)
    assert set(np.unique(emap.cls)) <= {"linear", "dark"}
    assert np.all(emap.psi >= 0) and np.all(emap.psi < np.pi)


def test_uniform_pattern_has_no_singularities(grid64):
    u = uniform_field(grid64)
    st = build_state(1.0, 0.0, 0, (u, JonesVector.named("H")), (u, JonesVector.named("V")))
    smap = stokes_reconstruct(noiseless_stack(st, JonesVector.named("H")), RegionGrid(8))
    sing = find_singularities(ellipse_map(smap), smap)
    assert sing.c_points == [] and sing.l_lines == []


def test_insufficient_resolution(grid64):
    st = lg_state(grid64)
    smap = stokes_reconstruct(noiseless_stack(st, D), RegionGrid(30))
    with pytest.raises(InsufficientResolutionError):
        find_singularities(ellipse_map(smap), smap)


def test_poincare_singularities(poincare_state, grid256):
    rg = RegionGrid(10)
    smap = stokes_reconstruct(noiseless_stack(poincare_state, D), rg)
    sing = find_singularities(ellipse_map(smap), smap)
    assert len(sing.c_points) == 1
    x, y, index = sing.c_points[0]
    assert np.hypot(x - 127.5, y - 127.5) <= 10
    assert abs(index) == 0.5
    assert len(sing.l_lines) == 1 and sing.closed[0]
    assert encircles(sing.l_lines[0], (x, y))
    # the L-line sits where both arms are equally bright: r = w / sqrt(2)
    r = np.hypot(sing.l_lines[0][:, 0] - 127.5, sing.l_lines[0][:, 1] - 127.5)
    assert abs(np.median(r) - (256 / 6) / np.sqrt(2)) < 3


def test_h_trigger_poincare_is_uniform(poincare_state):
    smap = stokes_reconstruct(noiseless_stack(poincare_state, JonesVector.named("H")), RegionGrid(10))
    emap = ellipse_map(smap, intensity_floor=0.02)
    assert set(np.unique(emap.cls)) <= {"right", "dark"}
    assert find_singularities(emap, smap).c_points == []


def test_square_beam_horizontal_l_line(grid256):
    a1, p1 = square_ramp_maps(grid256, 160, rising=True, phase_sign=1.0)
    a2, p2 = square_ramp_maps(grid256, 160, rising=False, phase_sign=-1.0)
    st = build_state(SQRT_HALF, SQRT_HALF, 0, (make_custom(a1, p1, grid256), JonesVector.named("H")),
                     (make_custom(a2, p2, grid256), JonesVector.named("V")))
    smap = stokes_reconstruct(noiseless_stack(st, D), RegionGrid(10))
    sing = find_singularities(ellipse_map(smap), smap)
    # the central L-line may join the one-arm margin columns into one contour
    pts = np.concatenate(sing.l_lines)
    row = pts[np.abs(pts[:, 1] - 127.5) < 1.0]
    assert np.ptp(row[:, 0]) > 120


def test_winding_conservation(poincare_state):
    rg = RegionGrid(10)
    smap = stokes_reconstruct(noiseless_stack(poincare_state, D), rg)
    emap = ellipse_map(smap)
    sing = find_singularities(emap, smap)
    xc, yc = rg.centers(smap.grid)

    def ring(i0, i1, j0, j1):
        path = [(i0, j) for j in range(j0, j1)] + [(i, j1) for i in range(i0, i1)]
        path += [(i1, j) for j in range(j1, j0, -1)] + [(i, j0) for i in range(i1, i0, -1)]
        return path

    for box in [(10, 13, 10, 13), (9, 14, 9, 14), (2, 6, 3, 8)]:
        path = ring(*box)
        wind = orientation_winding([emap.psi[i, j] for i, j in path])
        inside = sum(
            idx for x, y, idx in sing.c_points
            if xc[0, box[2]] < x < xc[0, box[3]] and yc[box[0], 0] < y < yc[box[1], 0]
        )
        assert wind == pytest.approx(inside, abs=1e-9)
        assert (2 * wind) == pytest.approx(round(2 * wind))


def test_physicality_under_sampling(radial_state):
    rg = RegionGrid(10)
    det = DetectorModel(seed=0)
    stack = acquire_stack(radial_state, [(D, a) for a in ANALYZERS], det)
    smap = stokes_reconstruct(stack, rg, trigger="D")
    keep = smap.photons >= 100
    pol = np.sqrt(np.sum(smap.s[1:] ** 2, axis=0))
    sd = np.sqrt(np.sum(smap.sigma[1:] ** 2, axis=0))
    violate = pol - smap.s[0] > 3 * sd
    assert np.mean(violate[keep]) < 0.01


def test_estimator_variance_matches_propagation(grid64):
    st = lg_state(grid64, 0, 1)
    rg = RegionGrid(8)
    det = DetectorModel(exposure_photons=2e5)
    means = {a: expected_counts(st, D, a, det) for a in ANALYZERS}
    vals, sigmas = [], []
    for seed in range(200):
        imgs = {a: sample_image(m, seed * 6 + k).counts for k, (a, m) in enumerate(means.items())}
        norm, sd = stokes_reconstruct(imgs, rg).normalized()
        vals.append(norm[0])
        sigmas.append(sd[0])
    vals, sigmas = np.array(vals), np.array(sigmas)
    photons = stokes_reconstruct(means, rg).photons
    keep = photons >= 400
    ratio = vals.std(axis=0, ddof=1)[keep] / np.sqrt(np.mean(sigmas**2, axis=0))[keep]
    assert keep.sum() > 10
    assert np.all(np.abs(ratio - 1) < 0.2)


def test_render_pattern(radial_state, grid64):
    rg = RegionGrid(10)
    smap = stokes_reconstruct(noiseless_stack(radial_state, D), rg)
    emap = ellipse_map(smap, intensity_floor=0.05)
    img = render_pattern(emap, smap, radial_state.intensity(), scale=2)
    assert img.shape == (512, 512, 3) and img.dtype == np.uint8
    blue = (img[..., 2] > 200) & (img[..., 0] < 100)
    assert blue.sum() > 500

    u = uniform_field(grid64)
    flat = build_state(1.0, 0.0, 0, (u, JonesVector.named("H")), (u, JonesVector.named("V")))
    fmap = stokes_reconstruct(noiseless_stack(flat, JonesVector.named("H")), RegionGrid(8))
    img = render_pattern(ellipse_map(fmap), fmap, scale=4)
    rows = np.nonzero(((img[..., 2] > 200) & (img[..., 0] < 100)).any(axis=1))[0]
    cols = np.nonzero(((img[..., 2] > 200) & (img[..., 0] < 100)).any(axis=0))[0]
    assert np.ptp(cols) > 5 * len(np.unique(rows // 32))

    dark = stokes_reconstruct({a: np.zeros((64, 64)) for a in ANALYZERS}, RegionGrid(8))
    img = render_pattern(ellipse_map(dark), dark, np.zeros((64, 64)))
    assert img.max() == 0
