"""Triggered single-photon camera: mean images, Poisson sampling, stacks on disk."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from PIL import Image

from .errors import ConfigurationError
from .modes import GridSpec
from .state import HybridBiphotonState, JonesVector, joint_probability

PGM_MAX = 65535


@dataclass(frozen=True)
class DetectorModel:
    """Camera and exposure parameters.

    ``exposure_photons`` is the number of photon pairs offered to the
    apparatus during one setting's accumulation. A coincidence image then
    holds ``exposure_photons * quantum_efficiency * P(trigger, analyzer, pixel)``
    counts on average, so rarely heralded settings receive fewer photons.
    """

    quantum_efficiency: float = 0.2
    dark_count_rate: float = 0.0
    exposure_photons: float = 5e5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.quantum_efficiency <= 1:
            raise ConfigurationError("quantum_efficiency must lie in (0, 1]")
        if self.dark_count_rate < 0:
            raise ConfigurationError("dark_count_rate must be non-negative")
        if self.exposure_photons < 0 or not np.isfinite(self.exposure_photons):
            raise ConfigurationError("exposure_photons must be finite and non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class CoincidenceImage:
    grid: GridSpec
    counts: np.ndarray = field(repr=False)
    trigger: str
    analyzer: str

    @property
    def key(self):
        return (self.trigger, self.analyzer)


@dataclass
class CoincidenceImageStack:
    """Images keyed by ``(trigger label, analyzer label)``.

    ``sampled`` is False when the stack holds noiseless mean images.
    """

    images: Dict[Tuple[str, str], CoincidenceImage]
    detector: DetectorModel
    sampled: bool = True

    def __post_init__(self):
        grids = {img.grid for img in self.images.values()}
        if len(grids) > 1:
            raise ConfigurationError("all images in a stack must share one grid")

    @property
    def grid(self):
        return next(iter(self.images.values())).grid

    def __getitem__(self, key):
        return self.images[key]

    def __contains__(self, key):
        return key in self.images

    def keys(self):
        return self.images.keys()

    def counts(self, trigger, analyzer) -> np.ndarray:
        return self.images[(_label(trigger), _label(analyzer))].counts

    def missing(self, pairs):
        return [p for p in pairs if (_label(p[0]), _label(p[1])) not in self.images]


def _label(setting) -> str:
    if isinstance(setting, JonesVector):
        return setting.label
    if isinstance(setting, str):
        return setting if setting.startswith("S(") else JonesVector.named(setting).label
    return JonesVector.from_stokes(setting).label


def _jones(setting) -> JonesVector:
    if isinstance(setting, JonesVector):
        return setting
    if isinstance(setting, str):
        return JonesVector.named(setting)
    return JonesVector.from_stokes(setting)


def expected_counts(state: HybridBiphotonState, trigger, analyzer, detector: DetectorModel) -> np.ndarray:
    """Noiseless mean count image for one (trigger, analyzer) setting."""
    prob = joint_probability(state, _jones(trigger), _jones(analyzer))
    # P already carries the heralding probability; an impossible herald gives zeros
    return detector.exposure_photons * detector.quantum_efficiency * prob + detector.dark_count_rate


def sample_image(mean, seed, grid=None, trigger="", analyzer="") -> CoincidenceImage:
    """Draw independent Poisson counts for every pixel of ``mean``."""
    mean = np.asarray(mean, dtype=float)
    if np.any(mean < 0) or not np.all(np.isfinite(mean)):
        raise ConfigurationError("mean image must be finite and non-negative")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(mean).astype(np.int64)
    if grid is None:
        grid = GridSpec(mean.shape[1], mean.shape[0])
    return CoincidenceImage(grid, counts, trigger, analyzer)


def plan_seeds(master_seed: int, n: int):
    """Per-entry RNG seeds derived from the master seed and plan index."""
    children = np.random.SeedSequence(int(master_seed)).spawn(n)
    return [int(c.generate_state(2, dtype=np.uint32).view(np.uint64)[0]) for c in children]


def acquire_stack(state, plan, detector: DetectorModel, sample=True, jobs=1) -> CoincidenceImageStack:
    """Acquire one image per ``(trigger, analyzer)`` entry of ``plan``.

    With ``sample=False`` the stack holds the mean images themselves.
    """
    plan = list(plan)
    if not plan:
        raise ConfigurationError("measurement plan is empty")
    keys = [(_label(t), _label(a)) for t, a in plan]
    dupes = sorted({k for k in keys if keys.count(k) > 1})
    if dupes:
        raise ConfigurationError(f"duplicate plan entries: {dupes}")
    seeds = plan_seeds(detector.seed, len(plan))
    grid = state.grid

    def one(i):
        t, a = plan[i]
        mean = expected_counts(state, t, a, detector)
        if not sample:
            return CoincidenceImage(grid, mean, *keys[i])
        img = sample_image(mean, seeds[i], grid)
        return CoincidenceImage(grid, img.counts, *keys[i])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            images = list(pool.map(one, range(len(plan))))
    else:
        images = [one(i) for i in range(len(plan))]
    return CoincidenceImageStack({img.key: img for img in images}, detector, sampled=sample)


def _safe_name(label: str) -> str:
    return (
        label.replace("S(", "S_").replace(")", "").replace(",", "_").replace("+", "p").replace("-", "m").replace(".", "d")
    )


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_stack(stack: CoincidenceImageStack, directory) -> Path:
    """Write images plus ``manifest.json`` into ``directory``.

    Sampled counts go to 16-bit PGM; noiseless mean images, which are not
    integers, go to ``.npy``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for (trig, ana), img in sorted(stack.images.items()):
        stem = f"t_{_safe_name(trig)}__a_{_safe_name(ana)}"
        if stack.sampled:
            counts = np.asarray(img.counts)
            if counts.max(initial=0) > PGM_MAX:
                raise ConfigurationError(
                    f"image {trig}/{ana} exceeds the 16-bit PGM range ({counts.max()} counts)"
                )
            fname = stem + ".pgm"
            Image.fromarray(counts.astype(np.uint16)).save(directory / fname)
        else:
            fname = stem + ".npy"
            np.save(directory / fname, np.asarray(img.counts, dtype=float))
        entries.append(
            {"trigger": trig, "analyzer": ana, "file": fname, "sha256": sha256_file(directory / fname)}
        )
    grid = stack.grid
    manifest = {
        "grid": {"width_px": grid.width_px, "height_px": grid.height_px,
                 "pixel_pitch": grid.pixel_pitch, "center": list(grid.center)},
        "detector": asdict(stack.detector),
        "sampled": stack.sampled,
        "seed": stack.detector.seed,
        "images": entries,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_stack(directory, verify=True) -> CoincidenceImageStack:
    """Read a stack written by :func:`save_stack`; the manifest is authoritative."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    g = manifest["grid"]
    grid = GridSpec(g["width_px"], g["height_px"], g["pixel_pitch"], tuple(g["center"]))
    images = {}
    for entry in manifest["images"]:
        path = directory / entry["file"]
        if verify and sha256_file(path) != entry["sha256"]:
            raise ConfigurationError(f"checksum mismatch for {path}")
        if path.suffix == ".npy":
            counts = np.load(path)
        else:
            with Image.open(path) as im:
                counts = np.asarray(im, dtype=np.int64)
        key = (entry["trigger"], entry["analyzer"])
        images[key] = CoincidenceImage(grid, counts, *key)
    return CoincidenceImageStack(images, DetectorModel(**manifest["detector"]), manifest["sampled"])
