"""Correlation estimators and per-region entanglement criteria.

Settings are unit Stokes vectors (``+`` outcome); the ``-`` outcome is the
antipodal polarization. A correlation term needs four coincidence images,
``(t+, a+), (t+, a-), (t-, a+), (t-, a-)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, InsufficientDataError
from .imaging import CoincidenceImageStack
from .state import (
    DARK_NORM,
    HybridBiphotonState,
    JonesVector,
    axis_vector,
    local_state_vectors,
    reference_correlation_tensor,
    stokes_label,
    _PAIR_OPS,
)
from .tomography import RegionGrid

CRITERIA = ("witness", "steering", "chsh")
BOUNDS = {"witness": 1.0, "steering": 1.0, "chsh": 2.0}
MIN_PHOTONS = 100
N_SIGMA = 3.0
ORACLE_TOL = 1e-9

NONCLASSICAL = "nonclassical"
CLASSICAL = "classical"
INSUFFICIENT = "insufficient-data"

S3_AXIS = np.array([0.0, 0.0, 1.0])


def rotate_stokes(vec, axis, angle):
    """Rotate a Stokes vector about ``axis`` by ``angle`` (Rodrigues)."""
    vec = np.asarray(vec, dtype=float)
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    c, s = np.cos(angle), np.sin(angle)
    return vec * c + np.cross(k, vec) * s + k * np.dot(k, vec) * (1 - c)


def _clean(vec):
    vec = np.asarray(vec, dtype=float)
    vec = vec / np.linalg.norm(vec)
    # snap rounding noise so labels and image keys stay stable
    vec = np.where(np.abs(vec) < 1e-12, 0.0, vec)
    return vec


@dataclass(frozen=True)
class MeasurementPlan:
    """Settings for one criterion.

    For ``witness`` and ``steering`` the trigger and analyzer lists hold the
    three paired axes. For ``chsh`` they hold ``(alpha, alpha')`` and
    ``(beta, beta')``. ``frame_rotation`` rotates every analyzer setting about
    ``frame_axis`` on the Poincare sphere; it is a scalar or a per-region
    array. About the default R/L axis a sphere angle ``g`` is a real-space
    polarizer rotation by ``g / 2``.
    """

    criterion: str
    trigger_settings: Tuple[np.ndarray, ...]
    analyzer_settings: Tuple[np.ndarray, ...]
    frame_rotation: Union[float, np.ndarray] = 0.0
    frame_axis: np.ndarray = field(default_factory=lambda: S3_AXIS.copy())

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigurationError(f"unknown criterion {self.criterion!r}")
        trig = tuple(_clean(axis_vector(v)) for v in self.trigger_settings)
        ana = tuple(_clean(axis_vector(v)) for v in self.analyzer_settings)
        need = 2 if self.criterion == "chsh" else 3
        if len(trig) != need or len(ana) != need:
            raise ConfigurationError(
                f"{self.criterion} needs {need} trigger and {need} analyzer settings, "
                f"got {len(trig)} and {len(ana)}"
            )
        if self.criterion != "chsh":
            gram = np.array([[abs(np.dot(u, v)) for v in trig] for u in trig])
            if not np.allclose(gram, np.eye(3), atol=1e-9):
                raise ConfigurationError("witness/steering trigger axes must be mutually unbiased")
        rot = self.frame_rotation
        if np.ndim(rot) == 0:
            if not np.isfinite(rot):
                raise ConfigurationError("frame rotation must be finite")
            rot = float(rot)
        else:
            rot = np.asarray(rot, dtype=float)
            if not np.all(np.isfinite(rot)):
                raise ConfigurationError("frame rotation field must be finite")
        object.__setattr__(self, "trigger_settings", trig)
        object.__setattr__(self, "analyzer_settings", ana)
        object.__setattr__(self, "frame_rotation", rot)
        object.__setattr__(self, "frame_axis", _clean(self.frame_axis))

    @property
    def bound(self):
        return BOUNDS[self.criterion]

    def frame_angles(self):
        """Distinct frame-rotation angles in use (sorted)."""
        return np.unique(np.atleast_1d(self.frame_rotation))

    def terms(self, angle=0.0):
        """``(trigger, analyzer)`` Stokes vectors of every correlation term."""
        ana = [_clean(rotate_stokes(v, self.frame_axis, angle)) if angle else v for v in self.analyzer_settings]
        trig = self.trigger_settings
        if self.criterion == "chsh":
            return [(trig[0], ana[0]), (trig[1], ana[0]), (trig[0], ana[1]), (trig[1], ana[1])]
        return list(zip(trig, ana))

    def required_pairs(self):
        """Labels of every ``(trigger, analyzer)`` image the plan needs."""
        pairs = []
        for angle in self.frame_angles():
            for t, a in self.terms(angle):
                for ts in (t, -t):
                    for as_ in (a, -a):
                        key = (stokes_label(ts), stokes_label(as_))
                        if key not in pairs:
                            pairs.append(key)
        return pairs

    def required_settings(self):
        """Jones ``(trigger, analyzer)`` pairs for acquisition, in plan order."""
        out, seen = [], set()
        for angle in self.frame_angles():
            for t, a in self.terms(angle):
                for ts in (t, -t):
                    for as_ in (a, -a):
                        key = (stokes_label(ts), stokes_label(as_))
                        if key not in seen:
                            seen.add(key)
                            out.append((JonesVector.from_stokes(ts), JonesVector.from_stokes(as_)))
        return out


def _best_trigger_plane(tref):
    # prefer trigger axes whose reference partner is a linear (polarizer) setting
    mapped = [tref.T @ e for e in np.eye(3)]
    order = sorted(range(3), key=lambda k: (round(abs(mapped[k][2]), 9), k))
    return sorted(order[:2])


def default_plan(criterion: str, state: HybridBiphotonState = None, pols=None) -> MeasurementPlan:
    """Settings tuned to the maximally entangled state with this state's arms.

    Witness and steering pair the trigger axes H/V, D/A, R/L with their
    perfectly correlated analyzer partners. CHSH uses two trigger axes whose
    partners are linear polarizers (H and D triggers for H/V arms; D and R
    triggers for circular arms) and the analyzer pair that reaches
    ``2 sqrt(2)`` under ``S = E(a,b) - E(a',b) + E(a,b') + E(a',b')``.
    The arm polarizations come from ``state`` or from ``pols = (pol1, pol2)``.
    """
    pol1, pol2 = (state.arm1.pol, state.arm2.pol) if pols is None else pols
    tref = reference_correlation_tensor(pol1, pol2)
    if criterion in ("witness", "steering"):
        trig = list(np.eye(3))
        ana = [tref.T @ a for a in trig]
        return MeasurementPlan(criterion, trig, ana, frame_axis=pol1.stokes())
    if criterion == "chsh":
        i, j = _best_trigger_plane(tref)
        a, a2 = np.eye(3)[i], np.eye(3)[j]
        b = tref.T @ (a - a2)
        b2 = tref.T @ (a + a2)
        return MeasurementPlan("chsh", [a, a2], [b, b2], frame_axis=pol1.stokes())
    raise ConfigurationError(f"unknown criterion {criterion!r}")


def chsh_plan_from_angles(alpha, alpha_p, beta, beta_p) -> MeasurementPlan:
    """CHSH plan from real-space linear polarizer angles (radians)."""
    vec = lambda ang: np.array([np.cos(2 * ang), np.sin(2 * ang), 0.0])
    return MeasurementPlan("chsh", [vec(alpha), vec(alpha_p)], [vec(beta), vec(beta_p)])


def rotate_frame(plan: MeasurementPlan, angle, axis=None) -> MeasurementPlan:
    """Rotate the analyzer frame by ``angle`` (scalar or per-region field).

    Angles add to any rotation already on the plan; trigger settings are
    untouched.
    """
    if np.ndim(angle) == 0 and not np.isfinite(angle):
        raise ConfigurationError("frame rotation must be finite")
    total = np.asarray(plan.frame_rotation) + np.asarray(angle, dtype=float)
    if np.ndim(total) == 0:
        total = float(total)
    kwargs = {"frame_rotation": total}
    if axis is not None:
        kwargs["frame_axis"] = axis_vector(axis)
    return replace(plan, **kwargs)


def oracle_frame_field(state: HybridBiphotonState, regions: RegionGrid, bins: Optional[int] = None):
    """Per-region frame angles that undo the local relative phase of the arms.

    The angle is ``-arg(sum conj(amp1) * amp2)`` over each tile, applied
    about the first arm's polarization axis (the R/L axis for circularly
    polarized arms, where it equals twice the local ellipse orientation seen
    under a D trigger). ``bins`` quantizes the angles to that many frames
    so a finite set of analyzer settings covers the whole beam.
    """
    u1, u2 = state.amplitudes()
    coherence = regions.sum((np.conj(u1) * u2).real) + 1j * regions.sum((np.conj(u1) * u2).imag)
    angle = -np.angle(coherence)
    angle = np.where(np.abs(coherence) < DARK_NORM, 0.0, angle)
    if bins:
        step = 2 * np.pi / int(bins)
        angle = (np.round(angle / step) % int(bins)) * step
    return angle


@dataclass(frozen=True)
class CorrelationEstimate:
    value: np.ndarray
    sigma: np.ndarray
    photons: np.ndarray


def correlation(npp, npm, nmp, nmm) -> CorrelationEstimate:
    """Normalized correlation ``E = (N++ + N-- - N+- - N-+) / N`` from counts.

    Poisson propagation gives ``sigma^2 = 4 (N++ + N--)(N+- + N-+) / N^3``.
    Arrays are handled elementwise; empty array entries yield NaN. A scalar
    call with no photons raises :class:`InsufficientDataError`.
    """
    npp, npm, nmp, nmm = (np.asarray(v, dtype=float) for v in (npp, npm, nmp, nmm))
    same = npp + nmm
    diff = npm + nmp
    total = same + diff
    if total.ndim == 0 and total <= 0:
        raise InsufficientDataError("correlation has no contributing photons")
    with np.errstate(invalid="ignore", divide="ignore"):
        value = (same - diff) / total
        sigma = np.sqrt(4.0 * same * diff / total**3)
    return CorrelationEstimate(value, sigma, total)


@dataclass
class CriterionMap:
    """Criterion evaluation, per region (arrays) or for a single region (scalars)."""

    criterion: str
    value: np.ndarray
    sigma: np.ndarray
    bound: float
    photons_min: np.ndarray
    verdict: np.ndarray
    regions: Optional[RegionGrid] = None
    grid: object = None

    @property
    def nonclassical(self):
        return np.asarray(self.verdict) == NONCLASSICAL


def _verdict(value, sigma, bound, photons_min, min_photons=MIN_PHOTONS, n_sigma=N_SIGMA):
    value, sigma, photons_min = (np.asarray(v, dtype=float) for v in (value, sigma, photons_min))
    bad = ~np.isfinite(value) | ~np.isfinite(sigma) | ~(photons_min > min_photons)
    with np.errstate(invalid="ignore"):
        hit = value > bound + n_sigma * sigma
    out = np.where(bad, INSUFFICIENT, np.where(hit, NONCLASSICAL, CLASSICAL))
    return out if out.ndim else str(out)


def _combine(criterion, value, sigma, photons, **kw):
    bound = BOUNDS[criterion]
    verdict = _verdict(value, sigma, bound, photons, **kw)
    if np.ndim(value) == 0:
        value, sigma, photons = float(value), float(sigma), float(photons)
    return CriterionMap(criterion, value, sigma, bound, photons, verdict)


def _photons_min(corrs):
    return np.min(np.stack([np.asarray(c.photons, dtype=float) for c in corrs]), axis=0)


def witness_eval(corrs: Sequence[CorrelationEstimate], **kw) -> CriterionMap:
    """``W = |E_xx| + |E_yy| + |E_zz|``; separable states give at most 1."""
    if len(corrs) != 3:
        raise ConfigurationError("witness needs three correlation estimates")
    value = sum(np.abs(c.value) for c in corrs)
    sigma = np.sqrt(sum(np.asarray(c.sigma) ** 2 for c in corrs))
    return _combine("witness", value, sigma, _photons_min(corrs), **kw)


def steering_eval(corrs: Sequence[CorrelationEstimate], **kw) -> CriterionMap:
    """``S_St = E_xx^2 + E_yy^2 + E_zz^2``; bound 1."""
    if len(corrs) != 3:
        raise ConfigurationError("steering needs three correlation estimates")
    value = sum(np.asarray(c.value) ** 2 for c in corrs)
    sigma = np.sqrt(sum((2 * np.asarray(c.value) * np.asarray(c.sigma)) ** 2 for c in corrs))
    return _combine("steering", value, sigma, _photons_min(corrs), **kw)


def chsh_eval(corrs: Sequence[CorrelationEstimate], **kw) -> CriterionMap:
    """``S = |E(a,b) - E(a',b) + E(a,b') + E(a',b')|``; local realism gives at most 2."""
    if len(corrs) != 4:
        raise ConfigurationError("CHSH needs four correlation estimates")
    e1, e2, e3, e4 = (np.asarray(c.value) for c in corrs)
    value = np.abs(e1 - e2 + e3 + e4)
    sigma = np.sqrt(sum(np.asarray(c.sigma) ** 2 for c in corrs))
    return _combine("chsh", value, sigma, _photons_min(corrs), **kw)


EVALUATORS = {"witness": witness_eval, "steering": steering_eval, "chsh": chsh_eval}


def _angle_field(plan, shape):
    rot = plan.frame_rotation
    if np.ndim(rot) == 0:
        return np.full(shape, float(rot))
    if rot.shape != shape:
        raise ConfigurationError(f"frame rotation field shape {rot.shape} does not match region map {shape}")
    return rot


def region_correlations(stack: CoincidenceImageStack, plan: MeasurementPlan, regions: RegionGrid):
    """Per-term :class:`CorrelationEstimate` maps of ``plan`` on a stack."""
    missing = [p for p in plan.required_pairs() if p not in stack]
    if missing:
        raise ConfigurationError(f"stack lacks settings required by the {plan.criterion} plan: {missing}")
    shape = regions.shape(stack.grid)
    angles = _angle_field(plan, shape)
    nterms = 4 if plan.criterion == "chsh" else 3
    counts = np.zeros((nterms, 4) + shape)
    summed = {}
    for angle in plan.frame_angles():
        sel = angles == angle
        for k, (t, a) in enumerate(plan.terms(angle)):
            for m, (ts, as_) in enumerate(((t, a), (t, -a), (-t, a), (-t, -a))):
                key = (stokes_label(ts), stokes_label(as_))
                if key not in summed:
                    summed[key] = regions.sum(np.asarray(stack[key].counts, dtype=float))
                counts[k, m][sel] = summed[key][sel]
    return [correlation(*counts[k]) for k in range(nterms)]


def criterion_map(stack: CoincidenceImageStack, plan: MeasurementPlan, regions: RegionGrid, **kw) -> CriterionMap:
    """Evaluate ``plan`` on every region of a coincidence stack."""
    corrs = region_correlations(stack, plan, regions)
    out = EVALUATORS[plan.criterion](corrs, **kw)
    out.regions, out.grid = regions, stack.grid
    return out


def region_correlation_tensors(state: HybridBiphotonState, regions: RegionGrid):
    """Exact per-region correlation matrices ``(ny, nx, 3, 3)`` and region intensities.

    Dark regions get NaN matrices.
    """
    psi = local_state_vectors(state)
    per_pixel = np.einsum("yxa,ijab,yxb->ijyx", np.conj(psi), _PAIR_OPS, psi).real
    summed = regions.sum(per_pixel)
    intensity = regions.sum(state.intensity())
    with np.errstate(invalid="ignore", divide="ignore"):
        tensors = (1.0 - state.noise) * summed / intensity
    tensors = np.where(intensity > DARK_NORM, tensors, np.nan)
    return np.moveaxis(tensors, (0, 1), (-2, -1)), intensity


def oracle_correlations(state: HybridBiphotonState, plan: MeasurementPlan, regions: RegionGrid):
    """Noiseless correlation values per term, shape ``(nterms, ny, nx)``."""
    tensors, intensity = region_correlation_tensors(state, regions)
    shape = intensity.shape
    angles = _angle_field(plan, shape)
    nterms = 4 if plan.criterion == "chsh" else 3
    out = np.full((nterms,) + shape, np.nan)
    for angle in np.unique(angles):
        sel = angles == angle
        for k, (t, a) in enumerate(plan.terms(angle)):
            out[k][sel] = np.einsum("i,nij,j->n", t, tensors[sel], a)
    return out, intensity


def oracle_criterion_map(state: HybridBiphotonState, plan: MeasurementPlan, regions: RegionGrid) -> CriterionMap:
    """Exact criterion values per region; verdict is ``value > bound``.

    Dark regions are ``insufficient-data``.
    """
    values, intensity = oracle_correlations(state, plan, regions)
    corrs = [CorrelationEstimate(v, np.zeros_like(v), np.full(v.shape, np.inf)) for v in values]
    out = EVALUATORS[plan.criterion](corrs, min_photons=-1)
    bright = np.isfinite(out.value)
    out.verdict = np.where(
        ~bright, INSUFFICIENT, np.where(out.value > out.bound + ORACLE_TOL, NONCLASSICAL, CLASSICAL)
    )
    out.regions, out.grid = regions, state.grid
    return out


def tensor_criterion_value(plan: MeasurementPlan, tensor, angle=0.0) -> float:
    """Exact criterion value of ``plan`` on a single correlation matrix."""
    values = [float(t @ np.asarray(tensor) @ a) for t, a in plan.terms(angle)]
    if plan.criterion == "witness":
        return sum(abs(v) for v in values)
    if plan.criterion == "steering":
        return sum(v * v for v in values)
    e1, e2, e3, e4 = values
    return abs(e1 - e2 + e3 + e4)


def horodecki_chsh(tensor) -> float:
    """Maximal CHSH value ``2 sqrt(m1 + m2)`` over all settings, with ``m1, m2``
    the two largest eigenvalues of ``T^T T``."""
    tensor = np.asarray(tensor, dtype=float)
    eig = np.sort(np.linalg.eigvalsh(tensor.T @ tensor))[::-1]
    return float(2.0 * np.sqrt(max(eig[0] + eig[1], 0.0)))


def optimal_chsh_plan(tensor) -> MeasurementPlan:
    """CHSH settings reaching :func:`horodecki_chsh` for a correlation matrix."""
    tensor = np.asarray(tensor, dtype=float)
    u, sv, vt = np.linalg.svd(tensor)
    theta = np.arctan2(sv[1], sv[0])
    # S = 2 (sin(theta) sv1 + cos(theta) sv0), maximal at tan(theta) = sv1 / sv0
    c, s = np.cos(theta), np.sin(theta)
    a = c * u[:, 0] + s * u[:, 1]
    a2 = c * u[:, 0] - s * u[:, 1]
    b = tensor.T @ (a - a2)
    b2 = tensor.T @ (a + a2)
    if np.linalg.norm(b) < 1e-12 or np.linalg.norm(b2) < 1e-12:
        b = b2 = vt[0]
    return MeasurementPlan("chsh", [a, a2], [b, b2])
