"""Declarative scene configuration (YAML) and its validation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from .errors import ConfigurationError, VectorPhotonError
from .imaging import DetectorModel
from .modes import (
    GridSpec,
    ModeLabel,
    load_map,
    make_custom,
    make_mode,
    square_ramp_maps,
)
from .state import JonesVector, build_state
from .tomography import RegionGrid

FRAME_MODES = ("global", "oracle")


@dataclass
class Diagnostic:
    path: str
    reason: str
    fatal: bool = False

    def __str__(self):
        return f"{self.path}: {self.reason}"


@dataclass
class SceneConfig:
    """Parsed scene. ``raw`` is the canonical nested dict; ``base_dir``
    resolves relative custom-map paths."""

    raw: Dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)

    # convenience accessors -------------------------------------------------
    @property
    def name(self) -> str:
        return self.raw.get("name", "scene")

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def region_px(self) -> int:
        return int(self.raw.get("regions", 10))

    @property
    def triggers(self) -> List[str]:
        return list(self.raw.get("triggers", []))

    @property
    def analyzers(self) -> List[str]:
        return list(self.raw.get("analyzers", ["H", "V", "D", "A", "R", "L"]))

    @property
    def criteria(self) -> List[Dict[str, Any]]:
        return list(self.raw.get("criteria", []))

    @property
    def render(self) -> Dict[str, Any]:
        return dict(self.raw.get("render", {}))

    def grid(self) -> GridSpec:
        g = self.raw.get("grid", {})
        center = g.get("center")
        return GridSpec(int(g.get("width", 256)), int(g.get("height", 256)),
                        float(g.get("pixel_pitch", 1.0)), tuple(center) if center else None)

    def regions(self) -> RegionGrid:
        return RegionGrid(self.region_px)

    def detector(self) -> DetectorModel:
        d = self.raw.get("detector", {})
        return DetectorModel(
            quantum_efficiency=float(d.get("quantum_efficiency", 0.2)),
            dark_count_rate=float(d.get("dark_count_rate", 0.0)),
            exposure_photons=float(d.get("exposure_photons", 5e5)),
            seed=self.seed,
        )

    def state_params(self):
        st = self.raw.get("state", {})
        a = float(st.get("a", np.sqrt(0.5)))
        b = float(st["b"]) if "b" in st else float(np.sqrt(max(0.0, 1.0 - a * a)))
        return a, b, float(st.get("phi", 0.0)), float(st.get("noise", 0.0))

    def build_field(self, index: int, grid: GridSpec):
        mode = dict(self.raw["arms"][index]["mode"])
        kind = str(mode.get("kind", "")).lower()
        if kind in ("lg", "hg"):
            label = ModeLabel(kind, l=int(mode.get("l", 0)), p=int(mode.get("p", 0)),
                              m=int(mode.get("m", 0)), n=int(mode.get("n", 0)),
                              waist=mode.get("waist"))
            return make_mode(label, grid)
        if kind == "custom":
            amp = load_map(self.base_dir / mode["amplitude"], "amplitude")
            phase = (load_map(self.base_dir / mode["phase"], "phase")
                     if mode.get("phase") else np.zeros(grid.shape))
            return make_custom(amp, phase, grid, name=str(mode["amplitude"]))
        if kind == "square_ramp":
            amp, phase = square_ramp_maps(
                grid, int(mode["side"]), rising=bool(mode.get("rising", True)),
                phase_sign=float(mode.get("phase_sign", 1.0)), margin=float(mode.get("margin", 0.1)),
            )
            return make_custom(amp, phase, grid, name="square_ramp")
        raise ConfigurationError(f"unknown mode kind {mode.get('kind')!r}")

    def build_state(self):
        grid = self.grid()
        a, b, phi, noise = self.state_params()
        arms = []
        for i in range(2):
            pol = JonesVector.named(str(self.raw["arms"][i]["polarization"]))
            arms.append((self.build_field(i, grid), pol))
        return build_state(a, b, phi, arms[0], arms[1], noise=noise)

    # serialization ---------------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)

    def with_overrides(self, seed=None, region_px=None) -> "SceneConfig":
        raw = self.to_dict()
        if seed is not None:
            raw["seed"] = int(seed)
        if region_px is not None:
            raw["regions"] = int(region_px)
        return SceneConfig(raw, self.base_dir)


def preset_names() -> List[str]:
    root = resources.files("vectorphoton") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config_path(ref) -> Path:
    """A filesystem path, or the name of a bundled preset."""
    path = Path(ref)
    if path.exists():
        return path
    preset = resources.files("vectorphoton") / "presets" / f"{ref}.yaml"
    if preset.is_file():
        return Path(str(preset))
    raise ConfigurationError(f"config {ref!r} is neither a file nor a preset ({', '.join(preset_names())})")


def parse_config(text: str, base_dir=None) -> SceneConfig:
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping at top level")
    return SceneConfig(raw, Path(base_dir) if base_dir else Path.cwd())


def load_config(ref) -> SceneConfig:
    path = resolve_config_path(ref)
    return parse_config(path.read_text(), path.parent)


def frame_spec(criterion: Dict[str, Any]) -> Dict[str, Any]:
    """Normalized frame declaration of a criterion entry."""
    frame = dict(criterion.get("frame", {"mode": "global"}))
    frame.setdefault("mode", "global")
    if frame["mode"] == "global":
        frame.setdefault("angles_deg", [frame.pop("angle_deg", 0.0)])
    else:
        frame.setdefault("bins", 16)
    return frame


def _diag_structure(raw, out: List[Diagnostic]):
    for key in ("grid", "arms", "state"):
        if key not in raw:
            out.append(Diagnostic(key, "missing required section"))
    arms = raw.get("arms", [])
    if not isinstance(arms, list) or len(arms) != 2:
        out.append(Diagnostic("arms", "exactly two arms are required"))
    else:
        for i, arm in enumerate(arms):
            if not isinstance(arm, dict) or "mode" not in arm or "polarization" not in arm:
                out.append(Diagnostic(f"arms[{i}]", "needs 'mode' and 'polarization'"))
                continue
            kind = str(arm["mode"].get("kind", "")).lower()
            if kind not in ("lg", "hg", "custom", "square_ramp"):
                out.append(Diagnostic(f"arms[{i}].mode.kind", f"unknown mode kind {arm['mode'].get('kind')!r}"))
            try:
                JonesVector.named(str(arm["polarization"]))
            except ConfigurationError as exc:
                out.append(Diagnostic(f"arms[{i}].polarization", str(exc)))
    st = raw.get("state", {}) or {}
    try:
        a = float(st.get("a", np.sqrt(0.5)))
        b = float(st["b"]) if "b" in st else float(np.sqrt(max(0.0, 1 - a * a)))
        if a < 0 or b < 0:
            out.append(Diagnostic("state", "a and b must be non-negative"))
        if abs(a * a + b * b - 1.0) > 1e-9:
            out.append(Diagnostic("state", f"normalization violated: a^2 + b^2 = {a * a + b * b:.6g} != 1"))
        noise = float(st.get("noise", 0.0))
        if not 0 <= noise <= 1:
            out.append(Diagnostic("state.noise", "must lie in [0, 1]"))
    except (TypeError, ValueError) as exc:
        out.append(Diagnostic("state", f"non-numeric parameter: {exc}"))
    if isinstance(arms, list) and len(arms) == 2:
        try:
            p1 = JonesVector.named(str(arms[0]["polarization"]))
            p2 = JonesVector.named(str(arms[1]["polarization"]))
            if abs(p1.inner(p2)) > 1e-12:
                out.append(Diagnostic("arms.polarization",
                                      f"arm polarizations {p1.label} and {p2.label} are not orthogonal"))
        except (ConfigurationError, KeyError, TypeError):
            pass
    for key in ("triggers", "analyzers"):
        for i, name in enumerate(raw.get(key, []) or []):
            try:
                JonesVector.named(str(name))
            except ConfigurationError as exc:
                out.append(Diagnostic(f"{key}[{i}]", str(exc)))
    regions = raw.get("regions", 10)
    if not isinstance(regions, int) or regions < 1:
        out.append(Diagnostic("regions", "must be a positive integer"))
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        out.append(Diagnostic("seed", "must be an unsigned 64-bit integer"))
    for i, crit in enumerate(raw.get("criteria", []) or []):
        name = crit.get("name") if isinstance(crit, dict) else None
        if name not in ("witness", "steering", "chsh"):
            out.append(Diagnostic(f"criteria[{i}].name", f"unknown criterion {name!r}"))
            continue
        frame = crit.get("frame", {}) or {}
        if frame.get("mode", "global") not in FRAME_MODES:
            out.append(Diagnostic(f"criteria[{i}].frame.mode", f"must be one of {FRAME_MODES}"))


def validate_config(ref) -> List[Diagnostic]:
    """Diagnostics for a config file; empty iff the scene is runnable."""
    try:
        path = resolve_config_path(ref)
        text = path.read_text()
        cfg = parse_config(text, path.parent)
    except (OSError, yaml.YAMLError, ConfigurationError) as exc:
        return [Diagnostic("<file>", f"cannot read config: {exc}", fatal=True)]
    return validate_scene(cfg)


def validate_scene(cfg: SceneConfig) -> List[Diagnostic]:
    out: List[Diagnostic] = []
    _diag_structure(cfg.raw, out)
    if out:
        return out
    checks = [
        ("grid", cfg.grid),
        ("detector", cfg.detector),
        ("regions", lambda: cfg.regions().layout(cfg.grid())),
        ("arms", cfg.build_state),
    ]
    for path, fn in checks:
        try:
            fn()
        except (VectorPhotonError, OSError, KeyError, TypeError, ValueError) as exc:
            out.append(Diagnostic(path, str(exc)))
    return out
