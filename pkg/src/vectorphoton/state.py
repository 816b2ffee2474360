"""Hybrid polarization / vector-mode biphoton state and its exact predictions.

The state is

    |psi> = a |H>|u1, pol1> + exp(i phi) b |V>|u2, pol2>

where the first ket is the trigger photon's polarization and ``u1``, ``u2``
are the transverse modes of the vector photon. Everything downstream
(sampled images, Stokes maps, criterion estimates) is checked against the
closed-form quantities computed here.

Polarization conventions
------------------------
``R = (H - iV)/sqrt(2)``, ``L = (H + iV)/sqrt(2)``, ``D = (H + V)/sqrt(2)``,
``A = (H - V)/sqrt(2)``. Stokes vectors are ``(S1, S2, S3)`` with
``S1 = I_H - I_V``, ``S2 = I_D - I_A``, ``S3 = I_R - I_L``. The three
Pauli axes used by the entanglement criteria are ``z = H/V``, ``x = D/A`` and
``y = R/L``; each axis observable is ``|+><+| - |-><-|`` with the first
listed polarization as the ``+`` outcome, so the ``y`` observable equals
``-sigma_y`` of the textbook matrices under this handedness choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DarkPixelError, HeraldImpossibleError
from .modes import ComplexField, GridSpec

JONES_TOL = 1e-12
DARK_NORM = 1e-30
_SQ2 = np.sqrt(0.5)

_NAMED = {
    "H": (1.0, 0.0),
    "V": (0.0, 1.0),
    "D": (_SQ2, _SQ2),
    "A": (_SQ2, -_SQ2),
    "R": (_SQ2, -1j * _SQ2),
    "L": (_SQ2, 1j * _SQ2),
}

# Stokes-basis operators s1 = sigma_z, s2 = sigma_x, s3 = |R><R| - |L><L|.
STOKES_OPERATORS = np.array(
    [
        [[1, 0], [0, -1]],
        [[0, 1], [1, 0]],
        [[0, 1j], [-1j, 0]],
    ],
    dtype=complex,
)

PAULI_AXES = {"z": np.array([1.0, 0.0, 0.0]), "x": np.array([0.0, 1.0, 0.0]), "y": np.array([0.0, 0.0, 1.0])}


def axis_vector(axis) -> np.ndarray:
    """Unit Stokes vector from a Pauli-axis name or polarization name; 3-vectors pass through normalized."""
    if isinstance(axis, str):
        if axis in PAULI_AXES:
            return PAULI_AXES[axis].copy()
        return JonesVector.named(axis).stokes()
    if isinstance(axis, JonesVector):
        return axis.stokes()
    vec = np.asarray(axis, dtype=float)
    if vec.shape != (3,):
        raise ConfigurationError(f"setting must be a Stokes 3-vector, got shape {vec.shape}")
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ConfigurationError("setting vector has zero length")
    return vec / norm


@dataclass(frozen=True)
class JonesVector:
    """Normalized pure polarization state ``c_h |H> + c_v |V>``."""

    c_h: complex
    c_v: complex

    def __post_init__(self):
        ch, cv = complex(self.c_h), complex(self.c_v)
        norm = abs(ch) ** 2 + abs(cv) ** 2
        if abs(norm - 1.0) > JONES_TOL:
            raise ConfigurationError(f"Jones vector not normalized (|c_h|^2+|c_v|^2 = {norm!r})")
        object.__setattr__(self, "c_h", ch)
        object.__setattr__(self, "c_v", cv)

    @classmethod
    def named(cls, name: str) -> "JonesVector":
        try:
            return cls(*_NAMED[name.upper()])
        except KeyError:
            raise ConfigurationError(
                f"unknown polarization {name!r}; expected one of {sorted(_NAMED)}"
            ) from None

    @classmethod
    def linear(cls, angle: float) -> "JonesVector":
        """Linear polarization at real-space angle ``angle`` (radians) from H."""
        return cls(np.cos(angle), np.sin(angle))

    @classmethod
    def from_stokes(cls, stokes) -> "JonesVector":
        s1, s2, s3 = axis_vector(stokes)
        theta = np.arccos(np.clip(s1, -1.0, 1.0))
        phase = -np.arctan2(s3, s2)
        return cls(np.cos(theta / 2), np.sin(theta / 2) * np.exp(1j * phase))

    @classmethod
    def from_array(cls, vec) -> "JonesVector":
        vec = np.asarray(vec, dtype=complex)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ConfigurationError("zero Jones vector")
        vec = vec / norm
        return cls(vec[0], vec[1])

    def as_array(self) -> np.ndarray:
        return np.array([self.c_h, self.c_v], dtype=complex)

    def inner(self, other: "JonesVector") -> complex:
        """``<self|other>``."""
        return np.conj(self.c_h) * other.c_h + np.conj(self.c_v) * other.c_v

    def stokes(self) -> np.ndarray:
        cross = np.conj(self.c_h) * self.c_v
        return np.array(
            [abs(self.c_h) ** 2 - abs(self.c_v) ** 2, 2 * cross.real, -2 * cross.imag]
        )

    def orthogonal(self) -> "JonesVector":
        """The orthogonal state (antipode on the Poincare sphere)."""
        return JonesVector(-np.conj(self.c_v), np.conj(self.c_h))

    @property
    def label(self) -> str:
        return stokes_label(self.stokes())


def stokes_label(stokes) -> str:
    """Canonical, deterministic label of a polarization setting."""
    vec = np.asarray(stokes, dtype=float)
    for name, (ch, cv) in _NAMED.items():
        if np.allclose(vec, JonesVector(ch, cv).stokes(), atol=1e-9):
            return name
    if abs(vec[2]) < 1e-9:
        deg = np.degrees(0.5 * np.arctan2(vec[1], vec[0]))
        deg = round(float(deg), 4)
        return f"P({0.0 if deg == 0 else deg:+.4f})"
    parts = []
    for v in vec:
        v = round(float(v), 6)
        parts.append(f"{0.0 if v == 0 else v:+.6f}")
    return "S(" + ",".join(parts) + ")"


@dataclass(frozen=True)
class Arm:
    field: ComplexField
    pol: JonesVector


@dataclass(frozen=True)
class HybridBiphotonState:
    """Validated record of the two-arm hybrid state.

    ``noise`` mixes in white polarization noise with weight ``noise``:
    ``rho = (1 - noise) |psi><psi| + noise * I_pol / 4`` at every pixel, with
    the spatial intensity left unchanged.
    """

    a: float
    b: float
    phi: float
    arm1: Arm
    arm2: Arm
    noise: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.arm1.field.grid

    def amplitudes(self):
        """Pixel maps of the two branch amplitudes ``a u1`` and ``e^{i phi} b u2``."""
        return (
            self.a * self.arm1.field.amplitudes,
            np.exp(1j * self.phi) * self.b * self.arm2.field.amplitudes,
        )

    def intensity(self) -> np.ndarray:
        """Unconditioned vector-photon intensity ``a^2 |u1|^2 + b^2 |u2|^2``."""
        return self.a**2 * self.arm1.field.intensity + self.b**2 * self.arm2.field.intensity

    def arm_unitary(self) -> np.ndarray:
        """2x2 unitary whose columns are the arm polarizations (maps H->pol1, V->pol2)."""
        return np.column_stack([self.arm1.pol.as_array(), self.arm2.pol.as_array()])


def build_state(a, b, phi, arm1, arm2, noise=0.0) -> HybridBiphotonState:
    """Validate and assemble a hybrid state.

    ``arm1``/``arm2`` are :class:`Arm` records or ``(field, pol)`` pairs.
    """
    arm1 = arm1 if isinstance(arm1, Arm) else Arm(*arm1)
    arm2 = arm2 if isinstance(arm2, Arm) else Arm(*arm2)
    a, b, phi, noise = float(a), float(b), float(phi), float(noise)
    if a < 0 or b < 0:
        raise ConfigurationError("amplitudes a and b must be non-negative")
    if abs(a**2 + b**2 - 1.0) > 1e-9:
        raise ConfigurationError(f"a^2 + b^2 = {a**2 + b**2!r}, must equal 1")
    if abs(arm1.pol.inner(arm2.pol)) > JONES_TOL:
        raise ConfigurationError(
            f"arm polarizations {arm1.pol.label} and {arm2.pol.label} are not orthogonal"
        )
    if arm1.field.grid != arm2.field.grid:
        raise ConfigurationError("arm fields are sampled on different grids")
    if not 0.0 <= noise <= 1.0:
        raise ConfigurationError("noise weight must lie in [0, 1]")
    return HybridBiphotonState(a, b, phi, arm1, arm2, noise)


@dataclass(frozen=True)
class VectorPhotonField:
    """Two-component transverse polarization field of the vector photon."""

    grid: GridSpec
    jones_h: np.ndarray = field(repr=False)
    jones_v: np.ndarray = field(repr=False)

    @property
    def intensity(self):
        return np.abs(self.jones_h) ** 2 + np.abs(self.jones_v) ** 2

    def stokes(self) -> np.ndarray:
        """Per-pixel Stokes parameters, shape ``(4, rows, cols)``."""
        cross = np.conj(self.jones_h) * self.jones_v
        ih, iv = np.abs(self.jones_h) ** 2, np.abs(self.jones_v) ** 2
        return np.stack([ih + iv, ih - iv, 2 * cross.real, -2 * cross.imag])


def conditional_field(state: HybridBiphotonState, trigger: JonesVector):
    """Vector-photon field heralded by a trigger detection in ``trigger``.

    Returns ``(field, heralding_probability)``. The field is the pure-state
    part; white noise (if any) only enters the heralding probability and
    :func:`conditional_stokes`.
    """
    u1, u2 = state.amplitudes()
    c1 = np.conj(trigger.c_h)
    c2 = np.conj(trigger.c_v)
    p1, p2 = state.arm1.pol, state.arm2.pol
    jh = c1 * u1 * p1.c_h + c2 * u2 * p2.c_h
    jv = c1 * u1 * p1.c_v + c2 * u2 * p2.c_v
    pure = float(np.sum(np.abs(jh) ** 2 + np.abs(jv) ** 2))
    prob = (1.0 - state.noise) * pure + state.noise * 0.5
    if pure < DARK_NORM:
        raise HeraldImpossibleError(
            f"trigger {trigger.label} cannot herald a vector photon from this state", prob
        )
    scale = 1.0 / np.sqrt(pure)
    return VectorPhotonField(state.grid, jh * scale, jv * scale), prob


def conditional_stokes(state: HybridBiphotonState, trigger: JonesVector) -> np.ndarray:
    """Per-pixel joint Stokes maps ``(4, rows, cols)`` for one trigger outcome.

    Unnormalized: ``S0`` sums to the heralding probability. Includes noise.
    """
    u1, u2 = state.amplitudes()
    c1, c2 = np.conj(trigger.c_h), np.conj(trigger.c_v)
    p1, p2 = state.arm1.pol, state.arm2.pol
    jh = c1 * u1 * p1.c_h + c2 * u2 * p2.c_h
    jv = c1 * u1 * p1.c_v + c2 * u2 * p2.c_v
    pure = VectorPhotonField(state.grid, jh, jv).stokes()
    out = (1.0 - state.noise) * pure
    out[0] += state.noise * 0.5 * state.intensity()
    return out


@dataclass(frozen=True)
class LocalTwoQubitState:
    """Two-qubit polarization state at one pixel, ``amp1 |H,pol1> + amp2 |V,pol2>``.

    Amplitudes are stored raw; ``norm`` is the local intensity.
    """

    pixel: tuple
    amplitude_1: complex
    amplitude_2: complex
    norm: float

    def normalized(self) -> "LocalTwoQubitState":
        if self.norm < DARK_NORM:
            raise DarkPixelError(f"pixel {self.pixel} is dark")
        s = 1.0 / np.sqrt(self.norm)
        return LocalTwoQubitState(self.pixel, self.amplitude_1 * s, self.amplitude_2 * s, 1.0)


def _check_pixel(grid: GridSpec, pixel):
    x, y = pixel
    if not (0 <= x < grid.width_px and 0 <= y < grid.height_px):
        raise ConfigurationError(f"pixel {pixel} lies outside the {grid.width_px}x{grid.height_px} grid")
    return int(x), int(y)


def local_two_qubit(state: HybridBiphotonState, pixel) -> LocalTwoQubitState:
    """Local polarization state of the pair at pixel ``(x, y)``."""
    x, y = _check_pixel(state.grid, pixel)
    u1, u2 = state.amplitudes()
    a1, a2 = complex(u1[y, x]), complex(u2[y, x])
    norm = abs(a1) ** 2 + abs(a2) ** 2
    if norm < DARK_NORM:
        raise DarkPixelError(f"pixel {(x, y)} carries no intensity")
    return LocalTwoQubitState((x, y), a1, a2, norm)


def local_concurrence(local: LocalTwoQubitState) -> float:
    """Concurrence ``2 |amp1 amp2|`` of the normalized local pure state."""
    if local.norm < DARK_NORM:
        raise DarkPixelError(f"concurrence undefined at dark pixel {local.pixel}")
    return float(min(1.0, 2.0 * abs(local.amplitude_1 * local.amplitude_2) / local.norm))


def concurrence_map(state: HybridBiphotonState) -> np.ndarray:
    """Per-pixel concurrence of the pure part; NaN at dark pixels."""
    u1, u2 = state.amplitudes()
    norm = np.abs(u1) ** 2 + np.abs(u2) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        conc = 2.0 * np.abs(u1 * u2) / norm
    return np.where(norm < DARK_NORM, np.nan, np.minimum(conc, 1.0))


def joint_probability(state: HybridBiphotonState, trigger: JonesVector, analyzer: JonesVector, pixel=None):
    """Probability of a coincidence with ``trigger`` and ``analyzer`` at a pixel.

    With ``pixel=None`` the full probability map is returned.
    """
    u1, u2 = state.amplitudes()
    t_h, t_v = np.conj(trigger.c_h), np.conj(trigger.c_v)
    k1 = t_h * analyzer.inner(state.arm1.pol)
    k2 = t_v * analyzer.inner(state.arm2.pol)
    if pixel is not None:
        x, y = _check_pixel(state.grid, pixel)
        u1, u2 = u1[y, x], u2[y, x]
        intensity = state.intensity()[y, x]
    else:
        intensity = state.intensity()
    pure = np.abs(k1 * u1 + k2 * u2) ** 2
    prob = (1.0 - state.noise) * pure + state.noise * 0.25 * intensity
    return float(prob) if pixel is not None else prob


def local_state_vectors(state: HybridBiphotonState) -> np.ndarray:
    """Unnormalized local two-qubit state vectors, shape ``(rows, cols, 4)``.

    Basis order is ``|trigger> (x) |vector photon>`` with H/V on both sides.
    """
    u1, u2 = state.amplitudes()
    p1, p2 = state.arm1.pol.as_array(), state.arm2.pol.as_array()
    psi = np.zeros(state.grid.shape + (4,), dtype=complex)
    psi[..., 0:2] = u1[..., None] * p1
    psi[..., 2:4] = u2[..., None] * p2
    return psi


def _stokes_pair_operators():
    ops = np.empty((3, 3, 4, 4), dtype=complex)
    for i in range(3):
        for j in range(3):
            ops[i, j] = np.kron(STOKES_OPERATORS[i], STOKES_OPERATORS[j])
    return ops


_PAIR_OPS = _stokes_pair_operators()


def correlation_tensor(state: HybridBiphotonState, region=None) -> np.ndarray:
    """Intensity-weighted correlation matrix ``T_ij = <s_i (x) s_j>`` over a region.

    ``region`` is a boolean mask, a ``(row_slice, col_slice)`` tuple, a list of
    ``(x, y)`` pixels, or ``None`` for the whole grid. Rows index the trigger
    photon's Stokes axis, columns the vector photon's.
    """
    psi = local_state_vectors(state)
    intensity = state.intensity()
    sel_psi, sel_int = _select(psi, intensity, region)
    total = float(np.sum(sel_int))
    if total < DARK_NORM:
        raise DarkPixelError("region carries no intensity")
    raw = np.einsum("na,ijab,nb->ij", np.conj(sel_psi), _PAIR_OPS, sel_psi).real
    return (1.0 - state.noise) * raw / total


def _select(psi, intensity, region):
    if region is None:
        return psi.reshape(-1, 4), intensity.ravel()
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return psi[region], intensity[region]
    if isinstance(region, tuple) and len(region) == 2 and all(isinstance(s, slice) for s in region):
        return psi[region].reshape(-1, 4), intensity[region].ravel()
    pix = np.asarray(region, dtype=int).reshape(-1, 2)
    return psi[pix[:, 1], pix[:, 0]], intensity[pix[:, 1], pix[:, 0]]


def theoretical_correlation(state: HybridBiphotonState, region, basis_pair) -> float:
    """Exact ``<A (x) B>`` over a region for a pair of settings.

    ``basis_pair`` entries may be Pauli-axis names (``"x"``, ``"y"``, ``"z"``),
    polarization names (``"R"`` means the R/L axis) or Stokes 3-vectors.
    """
    t_axis, a_axis = (axis_vector(b) for b in basis_pair)
    tensor = correlation_tensor(state, region)
    return float(np.clip(t_axis @ tensor @ a_axis, -1.0, 1.0))


def local_correlation_tensor(amp1, amp2, pol1: JonesVector, pol2: JonesVector) -> np.ndarray:
    """Correlation matrix of the pure local state ``amp1 |H,pol1> + amp2 |V,pol2>``."""
    psi = np.concatenate([amp1 * pol1.as_array(), amp2 * pol2.as_array()])
    norm = float(np.vdot(psi, psi).real)
    if norm < DARK_NORM:
        raise DarkPixelError("local state has zero norm")
    return np.einsum("a,ijab,b->ij", np.conj(psi), _PAIR_OPS, psi).real / norm


def reference_correlation_tensor(pol1: JonesVector, pol2: JonesVector) -> np.ndarray:
    """Correlation matrix of ``(|H,pol1> + |V,pol2>)/sqrt(2)``.

    Equal amplitudes and zero relative phase: the default measurement
    settings are tuned to this state.
    """
    return local_correlation_tensor(1.0, 1.0, pol1, pol2)


def relative_phase_map(state: HybridBiphotonState) -> np.ndarray:
    """Local phase ``arg(amp2 / amp1)`` of the second branch relative to the first."""
    u1, u2 = state.amplitudes()
    return np.angle(u2 * np.conj(u1))
