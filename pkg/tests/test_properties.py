"""Property tests for the model invariants on small grids."""

from functools import lru_cache

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from vectorphoton.config import parse_config
from vectorphoton.entanglement import (
    CorrelationEstimate,
    chsh_eval,
    correlation,
    criterion_map,
    default_plan,
    horodecki_chsh,
    oracle_criterion_map,
    oracle_frame_field,
    rotate_frame,
    steering_eval,
    tensor_criterion_value,
    witness_eval,
)
from vectorphoton.imaging import DetectorModel, acquire_stack, expected_counts
from vectorphoton.modes import GridSpec, ModeLabel, make_mode
from vectorphoton.state import (
    JonesVector,
    build_state,
    concurrence_map,
    conditional_field,
    conditional_stokes,
    joint_probability,
    local_correlation_tensor,
    theoretical_correlation,
)
from vectorphoton.tomography import (
    ANALYZERS,
    RegionGrid,
    ellipse_map,
    find_singularities,
    orientation_winding,
    stokes_reconstruct,
)
GRID = GridSpec(32, 32)
PROPS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

angles = st.floats(0, 2 * np.pi, allow_nan=False)
unit = st.floats(0.05, 0.95)


@lru_cache(maxsize=None)
def mode(kind, i, j):
    label = ModeLabel.lg(i, j) if kind == "lg" else ModeLabel.hg(i, j)
    return make_mode(label, GRID)


@st.composite
def jones(draw):
    theta = draw(st.floats(0, np.pi))
    phase = draw(angles)
    return JonesVector(np.cos(theta / 2), np.sin(theta / 2) * np.exp(1j * phase))


@st.composite
def states(draw, noise=True):
    l1 = draw(st.integers(-2, 2))
    l2 = draw(st.integers(-2, 2).filter(lambda v: v != l1))
    pol1 = draw(jones())
    a2 = draw(unit)
    return build_state(np.sqrt(a2), np.sqrt(1 - a2), draw(angles),
                       (mode("lg", l1, 0), pol1), (mode("lg", l2, 0), pol1.orthogonal()),
                       noise=draw(st.floats(0, 0.5)) if noise else 0.0)


def random_su2(rng_angles):
    a, b, c = rng_angles
    return np.array([[np.cos(a) * np.exp(1j * b), -np.sin(a) * np.exp(-1j * c)],
                     [np.sin(a) * np.exp(1j * c), np.cos(a) * np.exp(-1j * b)]])


# modes ---------------------------------------------------------------------

@PROPS
@given(st.sampled_from(["lg", "hg"]), st.integers(0, 3), st.integers(0, 2))
def test_modes_normalized(kind, i, j):
    i = i if kind == "hg" else i - 1
    assert np.sum(mode(kind, i, j).intensity) == pytest.approx(1.0, abs=1e-9)


@PROPS
@given(st.integers(0, 3), st.integers(0, 3))
def test_hg_parity(m, n):
    u = mode("hg", m, n).amplitudes
    assert np.allclose(u[:, ::-1], (-1) ** m * u, atol=1e-12)
    assert np.allclose(u[::-1, :], (-1) ** n * u, atol=1e-12)


# state ---------------------------------------------------------------------

@PROPS
@given(states(), jones(), jones(), st.integers(0, 31), st.integers(0, 31))
def test_conditional_field_consistency(state, trigger, analyzer, x, y):
    try:
        field, herald = conditional_field(state, trigger)
    except Exception:
        assume(False)
    pure = abs(analyzer.inner(JonesVector(1, 0)) * field.jones_h[y, x]
               + analyzer.inner(JonesVector(0, 1)) * field.jones_v[y, x]) ** 2
    pure_herald = (herald - state.noise * 0.5) / (1 - state.noise) if state.noise < 1 else 0.0
    expected = (1 - state.noise) * pure_herald * pure + state.noise * 0.25 * state.intensity()[y, x]
    assert joint_probability(state, trigger, analyzer, (x, y)) == pytest.approx(expected, abs=1e-9)


@PROPS
@given(states(), jones())
def test_trigger_completeness(state, trigger):
    total = np.zeros(GRID.shape)
    for t in (trigger, trigger.orthogonal()):
        for a in (JonesVector(1, 0), JonesVector(0, 1)):
            total += joint_probability(state, t, a)
    assert np.allclose(total, state.intensity(), atol=1e-9)


@PROPS
@given(states(noise=False), angles)
def test_concurrence_phase_invariant(state, phi):
    other = build_state(state.a, state.b, phi, (state.arm1.field, state.arm1.pol), (state.arm2.field, state.arm2.pol))
    c0, c1 = concurrence_map(state), concurrence_map(other)
    ok = np.isfinite(c0)
    assert np.allclose(c0[ok], c1[ok], atol=1e-12)


@PROPS
@given(states(noise=False), jones(), jones(), st.tuples(angles, angles, angles))
def test_correlation_rotation_invariance(state, trigger, analyzer, rot):
    u = random_su2(rot)
    turn = lambda p: JonesVector.from_array(u @ p.as_array())
    rotated = build_state(state.a, state.b, state.phi, (state.arm1.field, turn(state.arm1.pol)),
                          (state.arm2.field, turn(state.arm2.pol)))
    region = (slice(8, 24), slice(4, 20))
    e0 = theoretical_correlation(state, region, (trigger.stokes(), analyzer.stokes()))
    e1 = theoretical_correlation(rotated, region, (trigger.stokes(), turn(analyzer).stokes()))
    assert -1 <= e0 <= 1
    assert e1 == pytest.approx(e0, abs=1e-9)


# imaging -------------------------------------------------------------------

@PROPS
@given(states(), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_qe_rescales_means_and_leaves_estimators(state, qe1, qe2):
    rg = RegionGrid(8)
    plan = default_plan("witness", state)
    d1, d2 = DetectorModel(quantum_efficiency=qe1), DetectorModel(quantum_efficiency=qe2)
    t, a = plan.required_settings()[0]
    m1, m2 = expected_counts(state, t, a, d1), expected_counts(state, t, a, d2)
    assert np.allclose(m1 * qe2, m2 * qe1, rtol=1e-12, atol=1e-12)
    v1 = criterion_map(acquire_stack(state, plan.required_settings(), d1, sample=False), plan, rg).value
    v2 = criterion_map(acquire_stack(state, plan.required_settings(), d2, sample=False), plan, rg).value
    ok = np.isfinite(v1)
    assert np.allclose(v1[ok], v2[ok], atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(states(), st.integers(0, 2**64 - 1))
def test_stack_determinism(state, seed):
    plan = [(JonesVector.named("D"), JonesVector.named(a)) for a in "HVR"]
    s1 = acquire_stack(state, plan, DetectorModel(seed=seed))
    s2 = acquire_stack(state, plan, DetectorModel(seed=seed), jobs=3)
    for key in s1.keys():
        assert np.array_equal(s1[key].counts, s2[key].counts)


# tomography ----------------------------------------------------------------

@PROPS
@given(states(), jones())
def test_tomography_round_trip(state, trigger):
    try:
        conditional_field(state, trigger)
    except Exception:
        assume(False)
    rg = RegionGrid(4)
    det = DetectorModel()
    smap = stokes_reconstruct({a: expected_counts(state, trigger, a, det) for a in ANALYZERS}, rg)
    oracle = rg.sum(conditional_stokes(state, trigger))
    norm, _ = smap.normalized()
    bright = oracle[0] > 1e-9 * oracle[0].max()
    assert np.max(np.abs(norm[:, bright] - oracle[1:, bright] / oracle[0, bright])) < 1e-6


@PROPS
@given(unit, angles, st.sampled_from(["D", "A", "L"]), st.integers(0, 5), st.integers(0, 5),
       st.integers(2, 6), st.integers(2, 6))
def test_winding_conservation(a2, phi, trig, i0, j0, h, w):
    state = build_state(np.sqrt(a2), np.sqrt(1 - a2), phi, (mode("lg", 0, 0), JonesVector.named("R")),
                        (mode("lg", 1, 0), JonesVector.named("L")))
    rg = RegionGrid(2)
    smap = stokes_reconstruct({a: expected_counts(state, JonesVector.named(trig), a, DetectorModel())
                               for a in ANALYZERS}, rg)
    emap = ellipse_map(smap, intensity_floor=0.0)
    sing = find_singularities(emap, smap, intensity_fraction=0.0)
    i1, j1 = i0 + h, j0 + w
    assume(i1 < smap.shape[0] and j1 < smap.shape[1])
    path = [(i0, j) for j in range(j0, j1)] + [(i, j1) for i in range(i0, i1)]
    path += [(i1, j) for j in range(j1, j0, -1)] + [(i, j0) for i in range(i1, i0, -1)]
    # the loop must stay off L-lines, where psi is still defined but S3 changes sign
    assume(all(emap.valid[i, j] for i, j in path))
    xc, yc = rg.centers(smap.grid)
    wind = orientation_winding([emap.psi[i, j] for i, j in path])
    inside = sum(idx for x, y, idx in sing.c_points
                 if xc[0, j0] < x < xc[0, j1] and yc[i0, 0] < y < yc[i1, 0])
    assert wind == pytest.approx(inside, abs=1e-9)
    assert 2 * wind == pytest.approx(round(2 * wind))


# entanglement --------------------------------------------------------------

counts = st.integers(0, 10**6)


@PROPS
@given(counts, counts, counts, counts)
def test_correlation_bounded(npp, npm, nmp, nmm):
    assume(npp + npm + nmp + nmm > 0)
    c = correlation(npp, npm, nmp, nmm)
    assert -1 <= c.value <= 1 and c.sigma >= 0 and c.photons == npp + npm + nmp + nmm


@PROPS
@given(st.floats(0, 1), angles, st.sampled_from([("H", "V"), ("R", "L"), ("D", "A")]))
def test_concurrence_link(a2, phase, pols):
    p1, p2 = (JonesVector.named(p) for p in pols)
    c1, c2 = np.sqrt(a2), np.sqrt(1 - a2) * np.exp(1j * phase)
    conc = 2 * abs(c1 * c2)
    tensor = local_correlation_tensor(c1, c2, p1, p2)
    angle = -phase
    assert tensor_criterion_value(default_plan("witness", pols=(p1, p2)), tensor, angle) == pytest.approx(
        1 + 2 * conc, abs=1e-9)
    assert tensor_criterion_value(default_plan("steering", pols=(p1, p2)), tensor, angle) == pytest.approx(
        1 + 2 * conc**2, abs=1e-9)
    assert horodecki_chsh(tensor) == pytest.approx(2 * np.sqrt(1 + conc**2), abs=1e-9)


@PROPS
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(0, 0.2))
def test_criteria_nonnegative_sigma(values, sigma):
    corrs = [CorrelationEstimate(v, sigma, 1000) for v in values]
    for ev, n in ((witness_eval, 3), (steering_eval, 3), (chsh_eval, 4)):
        out = ev(corrs[:n])
        assert out.sigma >= 0 and out.value >= 0


@PROPS
@given(angles, angles, st.sampled_from(["witness", "steering", "chsh"]))
def test_rotate_frame_additive(g1, g2, name):
    plan = default_plan(name, pols=(JonesVector.named("R"), JonesVector.named("L")))
    two = rotate_frame(rotate_frame(plan, g1), g2)
    one = rotate_frame(plan, g1 + g2)
    for (t1, a1), (t2, a2) in zip(two.terms(two.frame_rotation), one.terms(one.frame_rotation)):
        assert np.allclose(t1, t2) and np.allclose(a1, a2, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(states())
def test_hierarchy_on_random_states(state):
    rg = RegionGrid(4)
    field = oracle_frame_field(state, rg)
    values = {n: oracle_criterion_map(state, rotate_frame(default_plan(n, state), field), rg).value
              for n in ("witness", "steering", "chsh")}
    ok = np.isfinite(values["witness"])
    assert np.all(values["steering"][ok & (values["chsh"] > 2 + 1e-9)] > 1)
    assert np.all(values["witness"][ok & (values["steering"] > 1 + 1e-9)] > 1)


# config --------------------------------------------------------------------

@PROPS
@given(st.integers(0, 2**64 - 1), st.integers(1, 40), st.floats(0, 1), st.floats(0, 2 * np.pi))
def test_config_round_trip(seed, regions, a, phi):
    text = (f"seed: {seed}\nregions: {regions}\ngrid: {{width: 64, height: 64}}\n"
            "arms:\n  - {mode: {kind: LG, l: 1}, polarization: R}\n  - {mode: {kind: LG, l: -1}, polarization: L}\n"
            f"state: {{a: {a!r}, phi: {phi!r}}}\n")
    cfg = parse_config(text)
    again = parse_config(cfg.dump())
    assert again.to_dict() == cfg.to_dict()
    assert again.state_params() == cfg.state_params()
