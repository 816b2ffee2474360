"""End-to-end run: state, acquisition, tomography, singularities, criteria, manifest."""

from __future__ import annotations

import csv
import json
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
from scipy import stats

from . import __version__
from .config import SceneConfig, frame_spec
from .entanglement import (
    CRITERIA,
    EVALUATORS,
    INSUFFICIENT,
    NONCLASSICAL,
    CorrelationEstimate,
    MeasurementPlan,
    chsh_plan_from_angles,
    default_plan,
    oracle_correlations,
    oracle_frame_field,
    region_correlations,
    rotate_frame,
)
from .errors import ConfigurationError, StageError, VectorPhotonError
from .imaging import acquire_stack, load_stack, save_stack, sha256_file
from .state import JonesVector, conditional_stokes
from .tomography import (
    ANALYZERS,
    DOP_MIN,
    L_LINE_THRESHOLD,
    RegionGrid,
    ellipse_map,
    find_singularities,
    render_pattern,
    save_image,
    stokes_reconstruct,
)

VERDICT_COLORS = {
    "witness": (139, 0, 0),
    "steering": (255, 128, 128),
    "chsh": (30, 80, 220),
}
CLASSICAL_COLOR = (200, 200, 200)
INSUFFICIENT_COLOR = (25, 25, 25)

FLOAT_FMT = ".12g"
SIGMA_LIMIT = 3.0
MIN_PHOTONS = 100


@dataclass
class RunManifest:
    run_dir: Path
    config: dict
    version: str
    timings: Dict[str, float] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    sampled: bool = True

    def to_dict(self):
        return {
            "version": self.version,
            "sampled": self.sampled,
            "config": self.config,
            "timings_s": {k: round(v, 6) for k, v in self.timings.items()},
            "files": dict(sorted(self.files.items())),
        }

    def write(self):
        path = Path(self.run_dir) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


@dataclass
class CriterionJob:
    name: str
    tag: str
    plan: MeasurementPlan

    @property
    def stem(self):
        return f"{self.name}_{self.tag}"


def _fmt(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), FLOAT_FMT)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def trigger_tag(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label)


def criterion_jobs(cfg: SceneConfig, state, regions: RegionGrid) -> List[CriterionJob]:
    """Expand the config's criteria entries into concrete plans."""
    jobs = []
    for entry in cfg.criteria:
        name = entry["name"]
        if name not in CRITERIA:
            raise ConfigurationError(f"unknown criterion {name!r}")
        if name == "chsh" and "angles_deg" in entry:
            base = chsh_plan_from_angles(*np.radians(entry["angles_deg"]))
        else:
            base = default_plan(name, state)
        frame = frame_spec(entry)
        if frame["mode"] == "oracle":
            angles = oracle_frame_field(state, regions, frame.get("bins"))
            jobs.append(CriterionJob(name, entry.get("tag", "oracle"), rotate_frame(base, angles)))
        else:
            for deg in frame["angles_deg"]:
                plan = rotate_frame(base, np.radians(deg)) if deg else base
                jobs.append(CriterionJob(name, entry.get("tag", f"g{float(deg):g}"), plan))
    stems = [j.stem for j in jobs]
    if len(set(stems)) != len(stems):
        raise ConfigurationError(f"criterion outputs collide: {stems}")
    return jobs


def acquisition_plan(cfg: SceneConfig, jobs: List[CriterionJob]):
    """Union of tomography settings and every criterion's settings, first-seen order."""
    plan, seen = [], set()

    def add(t, a):
        key = (t.label, a.label)
        if key not in seen:
            seen.add(key)
            plan.append((t, a))

    for t in cfg.triggers:
        for a in cfg.analyzers:
            add(JonesVector.named(t), JonesVector.named(a))
    for job in jobs:
        for t, a in job.plan.required_settings():
            add(t, a)
    return plan


def verdict_raster(verdict, regions, grid, color) -> np.ndarray:
    """Region verdicts painted onto the pixel grid."""
    img = np.zeros(grid.shape + (3,), dtype=np.uint8)
    verdict = np.asarray(verdict)
    for iy in range(verdict.shape[0]):
        for ix in range(verdict.shape[1]):
            v = verdict[iy, ix]
            c = color if v == NONCLASSICAL else INSUFFICIENT_COLOR if v == INSUFFICIENT else CLASSICAL_COLOR
            img[regions.slices(grid, iy, ix)] = c
    return img


def hierarchy_raster(verdicts: Dict[str, np.ndarray], regions, grid) -> np.ndarray:
    """Overlay of nonclassical regions, weakest criterion painted first."""
    img = np.zeros(grid.shape + (3,), dtype=np.uint8)
    img[...] = CLASSICAL_COLOR
    for name in ("witness", "steering", "chsh"):
        if name not in verdicts:
            continue
        v = np.asarray(verdicts[name])
        for iy, ix in zip(*np.nonzero(v == NONCLASSICAL)):
            img[regions.slices(grid, iy, ix)] = VERDICT_COLORS[name]
    return img


def _stokes_rows(smap, emap, regions, grid):
    xc, yc = regions.centers(grid)
    photons = smap.photons
    ny, nx = smap.shape
    for iy in range(ny):
        for ix in range(nx):
            yield (
                ix, iy, xc[iy, ix], yc[iy, ix],
                *smap.s[:, iy, ix], *smap.sigma[:, iy, ix], photons[iy, ix],
                emap.psi[iy, ix], emap.chi[iy, ix], emap.cls[iy, ix], emap.dop[iy, ix],
            )


STOKES_HEADER = ["ix", "iy", "x", "y", "S0", "S1", "S2", "S3",
                 "sigma_S0", "sigma_S1", "sigma_S2", "sigma_S3", "photons",
                 "psi", "chi", "class", "dop"]


def _criterion_rows(cmap, corrs, regions, grid):
    xc, yc = regions.centers(grid)
    ny, nx = np.shape(cmap.value)
    for iy in range(ny):
        for ix in range(nx):
            terms = []
            for c in corrs:
                terms += [c.value[iy, ix], c.sigma[iy, ix], c.photons[iy, ix]]
            yield (ix, iy, xc[iy, ix], yc[iy, ix], cmap.value[iy, ix], cmap.sigma[iy, ix],
                   cmap.bound, cmap.photons_min[iy, ix], cmap.verdict[iy, ix], *terms)


def criterion_header(nterms):
    head = ["ix", "iy", "x", "y", "value", "sigma", "bound", "photons_min", "verdict"]
    for k in range(nterms):
        head += [f"E{k + 1}", f"sigma_E{k + 1}", f"N{k + 1}"]
    return head


def evaluate_criterion(stack, plan: MeasurementPlan, regions: RegionGrid):
    """Criterion map plus its per-term correlation estimates."""
    corrs = region_correlations(stack, plan, regions)
    cmap = EVALUATORS[plan.criterion](corrs)
    cmap.regions, cmap.grid = regions, stack.grid
    return cmap, corrs


class _Stages:
    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    def __call__(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kw)
        except StageError:
            raise
        except (VectorPhotonError, OSError, ValueError, KeyError, TypeError) as exc:
            raise StageError(name, exc) from exc
        self.manifest.timings[name] = self.manifest.timings.get(name, 0.0) + time.perf_counter() - t0
        return out


def _snapshot_config(cfg: SceneConfig, out: Path) -> SceneConfig:
    # copy custom map files into the run so the snapshot resolves from there
    raw = cfg.to_dict()
    for i, arm in enumerate(raw.get("arms", [])):
        mode = arm.get("mode", {})
        if str(mode.get("kind", "")).lower() != "custom":
            continue
        for key in ("amplitude", "phase"):
            if not mode.get(key):
                continue
            src = cfg.base_dir / mode[key]
            rel = Path("maps") / f"arm{i}_{key}{src.suffix}"
            (out / "maps").mkdir(exist_ok=True)
            shutil.copyfile(src, out / rel)
            mode[key] = rel.as_posix()
    return SceneConfig(raw, out)


def run_pipeline(cfg: SceneConfig, out_dir=None, sample=True, jobs=1) -> RunManifest:
    """Run every stage and write outputs under ``out_dir``.

    Returns the manifest after writing it; a failing stage raises
    :class:`StageError` and no manifest is written.
    """
    out = Path(out_dir or cfg.raw.get("output", f"runs/{cfg.name}"))
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "manifest.json"
    if stale.exists():
        stale.unlink()
    manifest = RunManifest(out, cfg.to_dict(), __version__, sampled=bool(sample))
    stage = _Stages(manifest)

    state = stage("state", cfg.build_state)
    grid = state.grid
    regions = stage("regions", lambda: (cfg.regions(), cfg.regions().layout(grid))[0])
    jobs_ = stage("plan", criterion_jobs, cfg, state, regions)
    plan = stage("plan", acquisition_plan, cfg, jobs_)
    if not plan:
        raise StageError("plan", ConfigurationError("nothing to acquire: no triggers and no criteria"))
    stack = stage("acquire", acquire_stack, state, plan, cfg.detector(), sample=sample, jobs=jobs)
    stage("acquire", save_stack, stack, out / "stack")
    snap = _snapshot_config(cfg, out)
    manifest.config = snap.to_dict()
    (out / "config.yaml").write_text(snap.dump())

    tomo = cfg.raw.get("tomography", {}) or {}
    floor = float(tomo.get("intensity_floor", 0.02))
    render = cfg.render

    def tomography():
        (out / "tomography").mkdir(exist_ok=True)
        maps = {}
        for t in cfg.triggers:
            label = JonesVector.named(t).label
            if any((label, a) not in stack for a in ANALYZERS):
                continue
            smap = stokes_reconstruct(stack, regions, trigger=label)
            emap = ellipse_map(smap, tomo.get("l_line_threshold", L_LINE_THRESHOLD),
                               tomo.get("dop_min", DOP_MIN), intensity_floor=floor)
            tag = trigger_tag(label)
            write_csv(out / "tomography" / f"stokes_{tag}.csv", STOKES_HEADER,
                      _stokes_rows(smap, emap, regions, grid))
            intensity = sum(np.asarray(stack[(label, a)].counts, dtype=float) for a in ("H", "V"))
            rgb = render_pattern(emap, smap, intensity, stride=int(render.get("stride", 1)),
                                 scale=int(render.get("scale", 2)))
            save_image(rgb, out / "tomography" / f"pattern_{tag}.png")
            maps[label] = (smap, emap)
        return maps

    maps = stage("tomography", tomography)

    def singularities():
        report = {}
        for label, (smap, emap) in maps.items():
            report[label] = find_singularities(emap, smap).to_dict()
        (out / "singularities.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    if maps:
        stage("singularities", singularities)

    def criteria():
        (out / "criteria").mkdir(exist_ok=True)
        by_tag: Dict[str, Dict[str, np.ndarray]] = {}
        for job in jobs_:
            cmap, corrs = evaluate_criterion(stack, job.plan, regions)
            write_csv(out / "criteria" / f"{job.stem}.csv", criterion_header(len(corrs)),
                      _criterion_rows(cmap, corrs, regions, grid))
            save_image(verdict_raster(cmap.verdict, regions, grid, VERDICT_COLORS[job.name]), out / "criteria" / f"{job.stem}.png")
            by_tag.setdefault(job.tag, {})[job.name] = cmap.verdict
        for tag, verdicts in by_tag.items():
            if len(verdicts) > 1:
                save_image(hierarchy_raster(verdicts, regions, grid), out / "criteria" / f"hierarchy_{tag}.png")

    if jobs_:
        stage("criteria", criteria)

    for path in sorted(out.rglob("*")):
        if path.is_file() and path != out / "manifest.json":
            manifest.files[path.relative_to(out).as_posix()] = sha256_file(path)
    manifest.write()
    return manifest


# ---------------------------------------------------------------------------
# oracle comparison


@dataclass
class ComparisonReport:
    run_dir: Path
    sampled: bool
    checksum_failures: List[str] = field(default_factory=list)
    stokes_max_residual: float = 0.0
    stokes_fraction_within: float = 1.0
    correlation_max_residual: float = 0.0
    correlation_fraction_within: float = 1.0
    criteria: Dict[str, Dict[str, float]] = field(default_factory=dict)
    n_stokes: int = 0
    n_correlations: int = 0

    @property
    def passed(self) -> bool:
        if self.checksum_failures:
            return False
        if not self.sampled:
            return self.stokes_max_residual < 1e-6 and self.correlation_max_residual < 1e-6
        return self.stokes_fraction_within >= 0.99 and self.correlation_fraction_within >= 0.99

    def summary(self) -> str:
        lines = [f"run: {self.run_dir}", f"sampled: {self.sampled}"]
        if self.checksum_failures:
            lines.append("checksum failures: " + ", ".join(self.checksum_failures))
        if self.sampled:
            lines.append(f"stokes residuals within {SIGMA_LIMIT:g} sigma: "
                         f"{100 * self.stokes_fraction_within:.2f}% of {self.n_stokes}")
            lines.append(f"correlation residuals within {SIGMA_LIMIT:g} sigma: "
                         f"{100 * self.correlation_fraction_within:.2f}% of {self.n_correlations}")
        else:
            lines.append(f"max relative Stokes residual: {self.stokes_max_residual:.3e}")
            lines.append(f"max correlation residual: {self.correlation_max_residual:.3e}")
        for stem, rec in sorted(self.criteria.items()):
            line = f"{stem}: max |value - oracle| = {rec['max_abs']:.3e}"
            if self.sampled:
                line += f", within {SIGMA_LIMIT:g} sigma = {100 * rec['fraction_within']:.2f}%"
            lines.append(line)
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _column(rows, name, shape):
    out = np.full(shape, np.nan)
    for r in rows:
        out[int(r["iy"]), int(r["ix"])] = float(r[name])
    return out


def _within(delta, sigma, keep):
    delta, sigma = delta[keep], sigma[keep]
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(delta == 0, 0.0, np.abs(delta) / sigma)
    return z <= SIGMA_LIMIT


def _binomial_within(e_run, n, e_oracle):
    """Exact counterpart of a 3-sigma test for a correlation estimate.

    Given the term total ``n``, the anti-correlated count is binomial with
    ``q = (1 - E) / 2``. The two-sided tail probability of the observed count
    is compared with that of a normal deviate at 3 sigma, which stays valid
    when ``|E|`` is close to 1 and the minority outcome is rare.
    """
    alpha = 2.0 * stats.norm.sf(SIGMA_LIMIT)
    n = np.nan_to_num(n).astype(np.int64)
    diff = np.rint(n * (1.0 - np.nan_to_num(e_run)) / 2.0)
    q = np.clip((1.0 - np.nan_to_num(e_oracle)) / 2.0, 0.0, 1.0)
    lower = stats.binom.cdf(diff, n, q)
    upper = stats.binom.sf(diff - 1, n, q)
    return np.minimum(1.0, 2.0 * np.minimum(lower, upper)) >= alpha


def compare_to_oracle(run_dir) -> ComparisonReport:
    """Recompute noiseless oracle quantities for a finished run and report residuals.

    Noiseless runs are judged on maximal residuals. Sampled runs are judged
    on the fraction of residuals inside three standard deviations (regions
    above 100 photons): Stokes components are scaled by the Poisson spread
    the oracle predicts, correlations use the exact binomial tail.
    Criterion values are reported against their plug-in sigma.
    """
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        raise ConfigurationError(f"no manifest.json in {run_dir}")
    manifest = json.loads(mpath.read_text())
    report = ComparisonReport(run_dir, bool(manifest["sampled"]))
    for rel, digest in manifest["files"].items():
        path = run_dir / rel
        if not path.exists() or sha256_file(path) != digest:
            report.checksum_failures.append(rel)
    if report.checksum_failures:
        return report

    cfg = SceneConfig(manifest["config"], run_dir)
    state = cfg.build_state()
    grid = state.grid
    regions = cfg.regions()
    shape = regions.shape(grid)
    det = cfg.detector()
    gain = det.exposure_photons * det.quantum_efficiency
    dark_region = det.dark_count_rate * regions.region_px**2

    ok, worst, n = [], 0.0, 0
    for t in cfg.triggers:
        label = JonesVector.named(t).label
        path = run_dir / "tomography" / f"stokes_{trigger_tag(label)}.csv"
        if not path.exists():
            continue
        rows = read_csv(path)
        s_run = np.stack([_column(rows, k, shape) for k in ("S0", "S1", "S2", "S3")])
        photons = _column(rows, "photons", shape)
        s_or = gain * regions.sum(conditional_stokes(state, JonesVector.named(t)))
        s_or[0] += 2.0 * dark_region
        bright = s_or[0] > 0
        if not report.sampled:
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = np.abs(s_run - s_or) / s_or[0]
            if np.any(bright):
                worst = max(worst, float(np.nanmax(rel[:, bright])))
        else:
            # oracle-predicted Poisson spread: var(S1..S3) = S0, var(S0) = S0 / 3
            sd = np.sqrt(np.stack([s_or[0] / 3.0, s_or[0], s_or[0], s_or[0]]))
            keep = photons > MIN_PHOTONS
            for k in range(4):
                ok.append(_within(s_run[k] - s_or[k], sd[k], keep))
    report.stokes_max_residual = worst
    if ok:
        flat = np.concatenate(ok)
        report.n_stokes = int(flat.size)
        report.stokes_fraction_within = float(flat.mean()) if flat.size else 1.0

    ok, worst = [], 0.0
    jobs = criterion_jobs(cfg, state, regions)
    for job in jobs:
        path = run_dir / "criteria" / f"{job.stem}.csv"
        if not path.exists():
            continue
        rows = read_csv(path)
        values, intensity = oracle_correlations(state, job.plan, regions)
        # background counts dilute every correlation uniformly
        with np.errstate(invalid="ignore", divide="ignore"):
            values = values * (gain * intensity / (gain * intensity + 4.0 * dark_region))
        corr_or = [CorrelationEstimate(v, np.zeros_like(v), np.full(v.shape, np.inf)) for v in values]
        crit_or = EVALUATORS[job.name](corr_or, min_photons=-1).value
        photons = _column(rows, "photons_min", shape)
        keep = photons > MIN_PHOTONS if report.sampled else np.isfinite(crit_or)
        for k, v in enumerate(values, start=1):
            e_run = _column(rows, f"E{k}", shape)
            if report.sampled:
                ok.append(_binomial_within(e_run, _column(rows, f"N{k}", shape), v)[keep])
            elif np.any(keep):
                worst = max(worst, float(np.nanmax(np.abs(e_run - v)[keep])))
        value = _column(rows, "value", shape)
        sigma = _column(rows, "sigma", shape)
        delta = np.abs(value - crit_or)[keep]
        report.criteria[job.stem] = {
            "max_abs": float(np.nanmax(delta)) if delta.size else 0.0,
            "fraction_within": float(_within(value - crit_or, sigma, keep).mean()) if delta.size else 1.0,
        }
    report.correlation_max_residual = worst
    if ok:
        flat = np.concatenate(ok)
        report.n_correlations = int(flat.size)
        report.correlation_fraction_within = float(flat.mean()) if flat.size else 1.0
    return report


def render_run(run_dir, stride=None, scale=None) -> List[Path]:
    """Re-render pattern and verdict images of a finished run into ``run_dir/render``."""
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        raise ConfigurationError(f"no manifest.json in {run_dir}")
    manifest = json.loads(mpath.read_text())
    cfg = SceneConfig(manifest["config"], run_dir)
    stack = load_stack(run_dir / "stack")
    grid = stack.grid
    regions = cfg.regions()
    tomo = cfg.raw.get("tomography", {}) or {}
    render = cfg.render
    stride = int(stride or render.get("stride", 1))
    scale = int(scale or render.get("scale", 2))
    dest = run_dir / "render"
    dest.mkdir(exist_ok=True)
    written = []
    for t in cfg.triggers:
        label = JonesVector.named(t).label
        if any((label, a) not in stack for a in ANALYZERS):
            continue
        smap = stokes_reconstruct(stack, regions, trigger=label)
        emap = ellipse_map(smap, tomo.get("l_line_threshold", L_LINE_THRESHOLD), tomo.get("dop_min", DOP_MIN),
                           intensity_floor=float(tomo.get("intensity_floor", 0.02)))
        intensity = sum(np.asarray(stack[(label, a)].counts, dtype=float) for a in ("H", "V"))
        path = dest / f"pattern_{trigger_tag(label)}.png"
        save_image(render_pattern(emap, smap, intensity, stride=stride, scale=scale), path)
        written.append(path)
    for csv_path in sorted((run_dir / "criteria").glob("*.csv")) if (run_dir / "criteria").exists() else []:
        name = csv_path.stem.split("_")[0]
        rows = read_csv(csv_path)
        shape = regions.shape(grid)
        verdict = np.empty(shape, dtype=object)
        for r in rows:
            verdict[int(r["iy"]), int(r["ix"])] = r["verdict"]
        path = dest / f"{csv_path.stem}.png"
        save_image(verdict_raster(verdict, regions, grid, VERDICT_COLORS[name]), path)
        written.append(path)
    return written
