"""End-to-end runs: configuration, stage functions and the run-directory layout.

Run directory layout::

    config.json
    captures/      white + capture_XX images with JSON sidecars, scene.json
    calibration/   grid.json
    decoded/       capture_XX/ light field containers
    n{count}/      registration/shifts.json, fused/, deconv/, superres/, report/
    timings.json

Every stage reads its inputs back from disk, so resuming from cached
upstream outputs gives the same numbers as a run from scratch.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import calibrate, fusion, io, metrics, register, restore, sensorsim
from .core import LensletGrid, LightField, ShiftSchedule, default_lytro_schedule, schedule_subset
from .errors import ConfigurationError, DomainError, LFError

STAGES = ("simulate", "calibrate", "decode", "register", "fuse", "deconv", "superres", "evaluate")
EXIT_CODES = {
    "config": 2,
    "simulate": 10,
    "calibrate": 11,
    "decode": 12,
    "register": 13,
    "fuse": 14,
    "deconv": 15,
    "superres": 16,
    "evaluate": 17,
    "report": 18,
}


class StageError(LFError):
    """Failure inside a pipeline stage; ``stage`` selects the exit code."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.stage, 1)


@dataclass
class SceneSpec:
    kind: str = "natural_image"
    seed: int = 0
    pixel_um: float = 1.0
    margin_um: float = 40.0
    correlation_um: float = 80.0
    slope: float = 2.0
    disparity_um: float = 0.0
    max_freq_cycles_per_mm: float = 160.0
    n_bands: int = 16
    value: float = 0.5
    ramp: tuple[float, float, float] = (0.0005, 0.0005, 0.2)


@dataclass
class GridSpec:
    rows: int = 64
    cols: int = 64
    rotation_rad: float = 0.0
    pitch_u_um: float = 14.0
    row_pitch_v_um: float = 12.12
    pixel_pitch_um: float = 1.4
    full_sensor: bool = True  # the 378 x 328 lenses on a 3280 x 3280 sensor; rows/cols ignored

    def build(self) -> LensletGrid:
        if self.full_sensor:
            return LensletGrid(rotation_rad=self.rotation_rad)
        return LensletGrid.for_lens_count(
            self.rows, self.cols, pitch_u_um=self.pitch_u_um, row_pitch_v_um=self.row_pitch_v_um,
            pixel_pitch_um=self.pixel_pitch_um, rotation_rad=self.rotation_rad,
        )


@dataclass
class RestoreSpec:
    method: str = "richardson_lucy"  # or "wiener", "none"
    psf_sigma_px: float | None = None  # None: capture PSF expressed in fused pixels
    iterations: int = 20
    noise_to_signal: float = 1e-3


@dataclass
class MetricsSpec:
    threshold: float = 0.1
    border_px: int = 8


@dataclass
class PipelineConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    capture: sensorsim.CaptureConfig = field(default_factory=sensorsim.CaptureConfig)
    angular_size: tuple[int, int] = (7, 7)
    captures: tuple[int, ...] = (16,)
    use_calibration: bool = True
    shift_source: str = "register"  # "register", "commanded" or "actual"
    registration: register.RegistrationConfig = field(default_factory=register.RegistrationConfig)
    fusion: fusion.FusionConfig = field(default_factory=fusion.FusionConfig)
    restore: RestoreSpec = field(default_factory=RestoreSpec)
    superres: restore.SrConfig | None = None
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.shift_source not in ("register", "commanded", "actual"):
            raise ConfigurationError(f"unknown shift_source {self.shift_source!r}")
        if self.restore.method not in ("richardson_lucy", "wiener", "none"):
            raise ConfigurationError(f"unknown restore method {self.restore.method!r}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        for c in self.captures:
            if c not in (1, 2, 4, 8, 16):
                raise ConfigurationError(f"unsupported capture count {c}")
        self.angular_size = tuple(int(v) for v in self.angular_size)
        self.captures = tuple(int(v) for v in self.captures)

    def effective_capture(self) -> sensorsim.CaptureConfig:
        return replace(self.capture, rng_seed=self.seed)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "schema_version": 1,
            "type": "PipelineConfig",
            "scene": asdict(self.scene),
            "grid": asdict(self.grid),
            "capture": self.capture.to_dict(),
            "angular_size": list(self.angular_size),
            "captures": list(self.captures),
            "use_calibration": self.use_calibration,
            "shift_source": self.shift_source,
            "registration": self.registration.to_dict(),
            "fusion": self.fusion.to_dict(),
            "restore": asdict(self.restore),
            "superres": None if self.superres is None else self.superres.to_dict(),
            "metrics": asdict(self.metrics),
            "seed": self.seed,
            "threads": self.threads,
        }
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PipelineConfig:
        d = dict(d)
        if d.pop("schema_version", 1) != 1 or d.pop("type", "PipelineConfig") != "PipelineConfig":
            raise ConfigurationError("not a version-1 PipelineConfig document")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        try:
            if "scene" in d:
                sc = dict(d["scene"])
                if "ramp" in sc:
                    sc["ramp"] = tuple(sc["ramp"])
                kw["scene"] = SceneSpec(**sc)
            if "grid" in d:
                kw["grid"] = GridSpec(**d["grid"])
            if "capture" in d:
                kw["capture"] = sensorsim.CaptureConfig.from_dict(d["capture"])
            if "registration" in d:
                kw["registration"] = register.RegistrationConfig.from_dict(d["registration"])
            if "fusion" in d:
                kw["fusion"] = fusion.FusionConfig.from_dict(d["fusion"])
            if "restore" in d:
                kw["restore"] = RestoreSpec(**d["restore"])
            if d.get("superres") is not None:
                kw["superres"] = restore.SrConfig.from_dict(d["superres"])
            if "metrics" in d:
                kw["metrics"] = MetricsSpec(**d["metrics"])
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
        for k in ("angular_size", "captures"):
            if k in d:
                kw[k] = tuple(d[k])
        for k in ("use_calibration", "shift_source", "seed", "threads"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)

    def digest(self, *sections: str) -> str:
        d = self.to_dict()
        d.pop("threads")
        part = {k: d[k] for k in sections} if sections else d
        return hashlib.sha1(json.dumps(part, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path) -> PipelineConfig:
    try:
        return PipelineConfig.from_dict(io.read_json(path))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


# ----------------------------------------------------------------------------- scene


def build_scene(cfg: PipelineConfig, grid: LensletGrid, schedule: ShiftSchedule) -> sensorsim.SceneModel:
    s = cfg.scene
    origin, extent = sensorsim.scene_bounds_for(grid, schedule.shifts_um, margin_um=s.margin_um)
    if s.kind == "natural_image":
        return sensorsim.make_natural_scene(extent, origin, s.pixel_um, s.seed, s.correlation_um, s.slope,
                                            s.disparity_um)
    if s.kind == "test_chart":
        return sensorsim.make_test_chart(s.max_freq_cycles_per_mm, extent, origin, pixel_um=s.pixel_um,
                                         n_bands=s.n_bands, texture_seed=s.seed)
    if s.kind == "constant":
        return sensorsim.constant_scene(s.value, extent, origin, s.pixel_um)
    if s.kind == "linear_ramp":
        a, b, c = s.ramp
        return sensorsim.linear_ramp_scene(a, b, c, extent, origin, s.pixel_um)
    raise ConfigurationError(f"unknown scene kind {s.kind!r}")


class Run:
    """A pipeline run rooted at ``root``; stage methods are idempotent and cached."""

    def __init__(self, root, cfg: PipelineConfig):
        self.root = Path(root)
        self.cfg = cfg
        self.grid = cfg.grid.build()
        self.full_schedule = default_lytro_schedule()
        self._scene: sensorsim.SceneModel | None = None
        self.timings: dict[str, float] = {}

    @property
    def scene(self) -> sensorsim.SceneModel:
        if self._scene is None:
            self._scene = build_scene(self.cfg, self.grid, self.full_schedule)
        return self._scene

    def count_dir(self, count: int) -> Path:
        return self.root / f"n{count}"

    # cache bookkeeping: each stage writes a stamp holding the digest of its inputs
    def _fresh(self, stamp: Path, key: str) -> bool:
        return stamp.exists() and io.read_json(stamp).get("key") == key

    def _stamp(self, stamp: Path, key: str) -> None:
        io.write_json(stamp, {"key": key})

    def _timed(self, name: str, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
        return out

    def save_timings(self) -> None:
        path = self.root / "timings.json"
        old = io.read_json(path) if path.exists() else {}
        old.update({k: round(v, 6) for k, v in self.timings.items()})
        io.write_json(path, old)

    # ------------------------------------------------------------------ simulate
    def labels_for(self, counts) -> list[int]:
        labels: set[int] = set()
        for c in counts:
            labels.update(self.subset(c).labels)
        return sorted(labels)

    def simulate(self, counts=(16,)) -> Path:
        """Write the white image and every capture used by the subsets of ``counts``."""
        out = self.root / "captures"
        key = self.cfg.digest("scene", "grid", "capture", "angular_size", "seed")
        labels = self.labels_for(counts)
        stamp = out / "stage.json"
        if stamp.exists():
            old = io.read_json(stamp)
            if old.get("key") == key and set(labels) <= set(old.get("labels", [])):
                return out

        def work():
            tmp = io.atomic_dir(out)
            try:
                cap_cfg = self.cfg.effective_capture()
                by_label = dict(zip(self.full_schedule.labels, self.full_schedule.shifts_um))
                io.write_capture(tmp, "white", sensorsim.render_white_image(self.grid, cap_cfg))
                scene = self.scene

                def one(label):
                    cap = sensorsim.simulate_capture(scene, self.grid, by_label[label], cap_cfg, label,
                                                     self.cfg.angular_size)
                    io.write_capture(tmp, f"capture_{label:02d}", cap)

                if self.cfg.threads > 1:
                    with ThreadPoolExecutor(self.cfg.threads) as ex:
                        list(ex.map(one, labels))
                else:
                    for label in labels:
                        one(label)
                io.write_json(tmp / "schedule.json", self.full_schedule.to_dict())
                io.write_json(tmp / "grid_truth.json", self.grid.to_dict())
                io.write_json(tmp / "scene.json", {
                    "kind": scene.kind,
                    "chart": None if scene.chart is None else scene.chart.to_dict(),
                    "origin_um": list(scene.origin_um),
                    "extent_um": list(scene.extent_um),
                })
                io.write_json(tmp / "stage.json", {"key": key, "labels": labels})
            except BaseException:
                shutil.rmtree(tmp, ignore_errors=True)
                raise
            io.commit_dir(tmp, out)

        self._stage("simulate", work)
        return out

    # ----------------------------------------------------------------- calibrate
    def calibrate(self) -> LensletGrid:
        out = self.root / "calibration"
        path = out / "grid.json"
        key = self.cfg.digest("scene", "grid", "capture", "angular_size", "seed", "use_calibration")
        if not self._fresh(out / "stage.json", key):

            def work():
                out.mkdir(parents=True, exist_ok=True)
                truth = LensletGrid.from_dict(io.read_json(self.root / "captures" / "grid_truth.json"))
                if self.cfg.use_calibration:
                    white = io.read_capture(self.root / "captures", "white")
                    centers = calibrate.detect_centers(white, truth.pitch_px)
                    grid = calibrate.fit_grid(centers, truth.pixel_pitch_um, white.shape, truth.pitch_px)
                    if (grid.rows, grid.cols) != (truth.rows, truth.cols):
                        raise ConfigurationError(
                            f"calibration found {grid.rows}x{grid.cols} lenses, expected {truth.rows}x{truth.cols}"
                        )
                else:
                    grid = truth
                io.write_json(path, grid.to_dict())
                self._stamp(out / "stage.json", key)

            self._stage("calibrate", work)
        return LensletGrid.from_dict(io.read_json(path))

    # -------------------------------------------------------------------- decode
    def decode(self, labels) -> dict[int, Path]:
        base = self.root / "decoded"
        grid = None
        paths = {}
        key = self.cfg.digest("scene", "grid", "capture", "angular_size", "seed", "use_calibration")
        for label in labels:
            out = base / f"capture_{label:02d}"
            paths[label] = out
            if self._fresh(out / "stage.json", key):
                continue
            if grid is None:
                grid = self.calibrate()

            def work(label=label, out=out, grid=grid):
                raw = io.read_capture(self.root / "captures", f"capture_{label:02d}")
                lf = calibrate.decode(raw, grid, self.cfg.angular_size)
                io.save_lightfield(out, lf)
                self._stamp(out / "stage.json", key)

            self._stage("decode", work)
        return paths

    def load_decoded(self, labels) -> list[LightField]:
        paths = self.decode(labels)
        return [io.load_lightfield(paths[label]) for label in labels]

    # ------------------------------------------------------------------ register
    def subset(self, count: int) -> ShiftSchedule:
        return schedule_subset(self.full_schedule, count, self.grid)

    def register(self, count: int) -> list[tuple[float, float]]:
        out = self.count_dir(count) / "registration"
        path = out / "shifts.json"
        key = self.cfg.digest("scene", "grid", "capture", "angular_size", "seed", "use_calibration",
                              "shift_source", "registration") + f":{count}"
        if not self._fresh(out / "stage.json", key):
            sub = self.subset(count)
            labels = list(sub.labels)
            lfs = self.load_decoded(labels)

            def work():
                out.mkdir(parents=True, exist_ok=True)
                grid = self.calibrate()
                rows = []
                ref = lfs[0]
                ref_raw = io.read_json(self.root / "captures" / f"capture_{labels[0]:02d}.json")
                for label, lf, shift in zip(labels, lfs, sub.shifts_um):
                    raw = io.read_json(self.root / "captures" / f"capture_{label:02d}.json")
                    entry: dict[str, Any] = {"label": label, "commanded_um": list(shift),
                                             "actual_um": raw["actual_shift_um"]}
                    if self.cfg.shift_source == "register":
                        if label == labels[0]:
                            d = (0.0, 0.0)
                        else:
                            est = register.estimate_lf_shift(ref, lf, self.cfg.registration, threads=self.cfg.threads)
                            d = est.shift
                            entry["estimate"] = est.to_dict()
                    else:
                        src = np.asarray(shift if self.cfg.shift_source == "commanded" else raw["actual_shift_um"])
                        if self.cfg.shift_source == "actual":
                            src = src - np.asarray(ref_raw["actual_shift_um"])
                        else:
                            src = src - np.asarray(sub.shifts_um[0])
                        v = grid.vector_to_lattice_frame(src)
                        d = (float(v[0] / ref.pitch_x_um), float(v[1] / ref.pitch_y_um))
                    entry["shift_px"] = [float(d[0]), float(d[1])]
                    rows.append(entry)
                io.write_json(path, {"schema_version": 1, "type": "Registration", "count": count,
                                     "source": self.cfg.shift_source, "captures": rows})
                self._stamp(out / "stage.json", key)

            self._stage("register", work)
        doc = io.read_json(path)
        return [tuple(r["shift_px"]) for r in doc["captures"]]

    # ---------------------------------------------------------------------- fuse
    def fuse(self, count: int) -> Path:
        out = self.count_dir(count) / "fused"
        key = self.cfg.digest("scene", "grid", "capture", "angular_size", "seed", "use_calibration",
                              "shift_source", "registration", "fusion") + f":{count}"
        if self._fresh(out / "stage.json", key):
            return out
        shifts = self.register(count)
        labels = list(self.subset(count).labels)
        lfs = self.load_decoded(labels)

        def work():
            grid = self.calibrate()
            t0 = time.perf_counter()
            fused = fusion.fuse(lfs, shifts, grid, self.cfg.fusion, threads=self.cfg.threads)
            self.timings[f"interpolate_n{count}"] = time.perf_counter() - t0
            io.save_lightfield(out, fused)
            self._stamp(out / "stage.json", key)

        self._stage("fuse", work)
        return out

    # -------------------------------------------------------------------- deconv
    def psf_for(self, lf: LightField) -> restore.PsfModel:
        spec = self.cfg.restore
        sigma = spec.psf_sigma_px
        if sigma is None:
            sigma = self.cfg.capture.psf_sigma_um / np.sqrt(lf.pitch_x_um * lf.pitch_y_um)
        return restore.PsfModel("gaussian", sigma_px=float(sigma))

    def deconv(self, count: int) -> Path:
        out = self.count_dir(count) / "deconv"
        key = self.cfg.digest("scene", "grid", "capture", "angular_size", "seed", "use_calibration",
                              "shift_source", "registration", "fusion", "restore") + f":{count}"
        if self._fresh(out / "stage.json", key):
            return out
        src = self.fuse(count)

        def work():
            lf = io.load_lightfield(src)
            spec = self.cfg.restore
            psf = self.psf_for(lf)
            nv, nu = lf.angular_size

            def one(job):
                v, u = job
                img = np.clip(lf.data[v, u], 0.0, None)
                if spec.method == "richardson_lucy":
                    return restore.richardson_lucy(img, psf, spec.iterations)
                if spec.method == "wiener":
                    return restore.wiener_deconvolve(img, psf, spec.noise_to_signal)
                return img.copy()

            jobs = [(v, u) for v in range(nv) for u in range(nu)]
            if self.cfg.threads > 1:
                with ThreadPoolExecutor(self.cfg.threads) as ex:
                    res = list(ex.map(one, jobs))
            else:
                res = [one(j) for j in jobs]
            data = np.clip(np.stack(res).reshape(lf.data.shape), 0.0, 1.0)
            out_lf = replace(lf, data=data, provenance=lf.provenance + [f"deconv({spec.method})"])
            io.save_lightfield(out, out_lf)
            self._stamp(out / "stage.json", key)

        self._stage("deconv", work)
        return out

    # ------------------------------------------------------------------ superres
    def superres(self, count: int) -> Path | None:
        """MAP super-resolution of the reference capture's perspectives (baseline)."""
        if self.cfg.superres is None:
            return None
        out = self.count_dir(count) / "superres"
        key = self.cfg.digest("scene", "grid", "capture", "angular_size", "seed", "use_calibration",
                              "registration", "superres") + f":{count}"
        if self._fresh(out / "stage.json", key):
            return out
        label = self.subset(count).labels[0]
        (lf,) = self.load_decoded([label])

        def work():
            tmp = io.atomic_dir(out)
            images, shifts = perspective_stack(lf, self.cfg.registration)
            res = restore.bayesian_sr(images, shifts, self.cfg.superres, return_trace=True)
            np.save(tmp / "center.npy", res.image)
            io.write_pgm16(tmp / "center.pgm", res.image)
            with open(tmp / "costs.csv", "w") as fh:
                fh.write("iteration,cost\n")
                for i, c in enumerate(res.costs):
                    fh.write(f"{i},{c!r}\n")
            io.write_json(tmp / "superres.json", {"step_size": res.step_size, "shifts_px": [list(s) for s in shifts]})
            self._stamp(tmp / "stage.json", key)
            io.commit_dir(tmp, out)

        self._stage("superres", work)
        return out

    # ------------------------------------------------------------------ evaluate
    def truth_for(self, lf: LightField) -> np.ndarray:
        grid = self.calibrate()
        pos = grid.from_lattice_frame(lf.pixel_positions())
        return self.scene.sample(pos, self.cfg.capture.psf_sigma_um)

    def evaluate(self, count: int) -> list[metrics.ResolutionReport]:
        out = self.count_dir(count) / "report"
        path = out / "report.json"
        key = self.cfg.digest() + f":{count}"
        if not self._fresh(out / "stage.json", key):
            fused_dir = self.fuse(count)
            deconv_dir = self.deconv(count)
            sr_dir = self.superres(count)

            def work():
                out.mkdir(parents=True, exist_ok=True)
                fused = io.load_lightfield(fused_dir)
                deconv = io.load_lightfield(deconv_dir)
                (ref,) = self.load_decoded([self.subset(count).labels[0]])
                e = max(1, self.cfg.fusion.enhancement)
                images = {
                    "fused": fused.center_perspective(),
                    "deconv": deconv.center_perspective(),
                    "bicubic": restore.cubic_upsample(ref.center_perspective(), e),
                }
                if sr_dir is not None:
                    images["superres"] = np.load(sr_dir / "center.npy")
                reports = [self._report(f"n{count}-{name}", img, fused, count) for name, img in images.items()]
                io.write_json(path, {"schema_version": 1, "type": "ReportSet", "count": count,
                                     "reports": [r.to_dict() for r in reports]})
                write_reports_csv(out / "report.csv", reports)
                with open(out / "contrast.csv", "w") as fh:
                    fh.write("config_label,frequency_cycles_per_mm,contrast\n")
                    for r in reports:
                        for f, c in r.contrast_curve:
                            fh.write(f"{r.config_label},{f!r},{c!r}\n")
                self._stamp(out / "stage.json", key)

            self._stage("evaluate", work)
        return [metrics.ResolutionReport.from_dict(r) for r in io.read_json(path)["reports"]]

    def _report(self, label: str, img: np.ndarray, fused: LightField, count: int) -> metrics.ResolutionReport:
        rep = metrics.ResolutionReport(label, extra={"count": count, "shape": list(img.shape)})
        ms = self.cfg.metrics
        if img.shape == fused.spatial_size:
            truth = np.clip(self.truth_for(fused.with_provenance("truth")), 0.0, 1.0)
            # keep at least the 11x11 Gaussian SSIM window on tiny grids
            b = min(ms.border_px, max(0, (min(img.shape) - 11) // 2))
            crop = (slice(b, -b or None), slice(b, -b or None))
            rep.psnr_db = metrics.psnr(np.clip(img[crop], 0.0, 1.0), truth[crop])
            rep.ssim = metrics.ssim(np.clip(img[crop], 0.0, 1.0), truth[crop])
            # deconvolution aims at the unblurred scene, so score that too
            sharp = np.clip(self.scene.sample(self.calibrate().from_lattice_frame(fused.pixel_positions())), 0.0, 1.0)
            rep.extra["psnr_unblurred_db"] = metrics.psnr(np.clip(img[crop], 0.0, 1.0), sharp[crop])
        if self.scene.chart is not None:
            grid = self.calibrate()
            origin = grid.from_lattice_frame(np.asarray(fused.origin_um))
            try:
                curve = metrics.contrast_profile(img, self.scene.chart, (fused.pitch_x_um, fused.pitch_y_um),
                                                 tuple(origin))
            except DomainError as exc:
                # too few samples per band: cutoff stays None
                rep.extra["cutoff_error"] = str(exc)
                return rep
            rep.contrast_curve = curve.as_pairs()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", metrics.CutoffWarning)
                rep.cutoff_cycles_per_mm = metrics.frequency_cutoff(curve, ms.threshold)
        return rep

    # --------------------------------------------------------------------- drive
    def _stage(self, name: str, fn) -> None:
        try:
            self._timed(name, fn)
        except StageError:
            raise
        except Exception as exc:  # tag every failure with the stage it happened in
            raise StageError(name, exc) from exc

    def run(self, counts=None) -> dict[int, list[metrics.ResolutionReport]]:
        self.root.mkdir(parents=True, exist_ok=True)
        io.write_json(self.root / "config.json", self.cfg.to_dict())
        counts = tuple(counts or self.cfg.captures)
        self.simulate(counts)
        self.calibrate()
        results = {c: self.evaluate(c) for c in counts}
        self.save_timings()
        return results


def perspective_stack(lf: LightField, reg_cfg: register.RegistrationConfig):
    """Center perspective first, then the others, each with its shift relative to the center."""
    cv, cu = lf.center_index
    nv, nu = lf.angular_size
    ref = lf.data[cv, cu]
    images, shifts = [ref], [(0.0, 0.0)]
    for v in range(nv):
        for u in range(nu):
            if (v, u) == (cv, cu):
                continue
            images.append(lf.data[v, u])
            shifts.append(register.phase_correlate(ref, lf.data[v, u], reg_cfg.upsample, reg_cfg.window,
                                                   reg_cfg.lowpass))
    return images, shifts


REPORT_COLUMNS = ("config_label", "count", "psnr_db", "ssim", "cutoff_cycles_per_mm")


def write_reports_csv(path, reports, timings: dict[str, float] | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for r in reports:
            vals = [r.config_label, r.extra.get("count"), r.psnr_db, r.ssim, r.cutoff_cycles_per_mm]
            fh.write(",".join("" if v is None else (f"{v!r}" if isinstance(v, float) else str(v)) for v in vals) + "\n")


METHODS = ("fused", "deconv", "bicubic", "superres")


def aggregate_reports(run_dirs, out_dir) -> tuple[list[dict[str, Any]], list[str]]:
    """Collect every run's reports and timings into ``summary.csv`` plus charts.

    One row per run and capture count, with PSNR, SSIM and cutoff columns
    per method. Returns the rows and the run directories without reports.
    """
    rows: list[dict[str, Any]] = []
    missing: list[str] = []
    for d in run_dirs:
        d = Path(d)
        found = sorted(d.glob("n*/report/report.json"), key=lambda p: int(p.parts[-3][1:]))
        if not found:
            missing.append(str(d))
            continue
        timings = io.read_json(d / "timings.json") if (d / "timings.json").exists() else {}
        for path in found:
            doc = io.read_json(path)
            count = doc["count"]
            row: dict[str, Any] = {"run": str(d), "count": count,
                                   "interpolate_s": timings.get(f"interpolate_n{count}")}
            for r in doc["reports"]:
                m = r["config_label"].rsplit("-", 1)[-1]
                row[f"psnr_db_{m}"] = r.get("psnr_db")
                row[f"ssim_{m}"] = r.get("ssim")
                row[f"cutoff_{m}"] = r.get("cutoff_cycles_per_mm")
                if m == "fused":
                    row["contrast_curve"] = r.get("contrast_curve", [])
            rows.append(row)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["run", "count", "interpolate_s"]
    cols += [f"{k}_{m}" for m in METHODS for k in ("psnr_db", "ssim", "cutoff")]
    with open(out / "summary.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_csv_cell(r.get(c)) for c in cols) + "\n")
    if rows:
        _plot_summary(rows, out)
    return rows, missing


def _csv_cell(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _plot_summary(rows, out: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = [r for r in rows if r.get("contrast_curve")]
    if curves:
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for r in curves:
            f, c = zip(*r["contrast_curve"])
            ax.plot(f, c, label=f"{r['count']} captures")
        ax.set_xlabel("frequency [cycles/mm]")
        ax.set_ylabel("contrast")
        ax.legend(fontsize=7)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / "contrast_curves.png", dpi=120, metadata={"Software": None})
        plt.close(fig)
    for key, ylabel, name in (("cutoff_fused", "cutoff [cycles/mm]", "cutoff_vs_count.png"),
                              ("interpolate_s", "interpolation time [s]", "interpolation_time_vs_count.png"),
                              ("psnr_db_fused", "PSNR [dB]", "psnr_vs_count.png")):
        pts = sorted((r["count"], r[key]) for r in rows if r.get(key) is not None)
        if not pts:
            continue
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-")
        ax.set_xscale("log", base=2)
        ax.set_xticks([1, 2, 4, 8, 16], labels=["1", "2", "4", "8", "16"])
        ax.set_xlabel("captures fused")
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / name, dpi=120, metadata={"Software": None})
        plt.close(fig)
