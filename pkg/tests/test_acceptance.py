"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``; the summary lines are
also repeated at the end of every pytest run that includes this file.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from oracles import float_violations
from simkit import crop

from lfmicroscan import io
from lfmicroscan.calibrate import decode
from lfmicroscan.cli import main
from lfmicroscan.core import LensletGrid, LightField, default_lytro_schedule, schedule_subset
from lfmicroscan.delaunay import delaunay_triangulate
from lfmicroscan.fusion import FusionConfig, GridInterpolator, RegularGrid, fuse
from lfmicroscan.metrics import contrast_profile, frequency_cutoff, psnr
from lfmicroscan.pipeline import GridSpec, PipelineConfig, SceneSpec, perspective_stack
from lfmicroscan.register import RegistrationConfig, estimate_lf_shift
from lfmicroscan.restore import PsfModel, SrConfig, SrProblem, bayesian_sr, blur, cubic_upsample, richardson_lucy
from lfmicroscan.sensorsim import (
    CaptureConfig,
    make_natural_scene,
    make_test_chart,
    scene_bounds_for,
    simulate_capture,
    simulate_sequence,
)

RESULTS: list[str] = []

TABLE = [
    (0.00, 0.00), (0.00, -3.03), (0.00, -6.06), (0.00, -9.09),
    (0.00, -12.12), (0.00, -15.15), (0.00, -18.18), (0.00, -21.21),
    (3.50, -21.21), (3.50, -18.18), (3.50, -15.15), (3.50, -12.12),
    (3.50, -9.09), (3.50, -6.06), (3.50, -3.03), (3.50, 0.00),
]


def verdict(number: int, name: str, ok: bool, detail: str, t0: float) -> None:
    line = f"CRITERION {number} {name}: {'PASS' if ok else 'FAIL'} ({detail}; {time.perf_counter() - t0:.1f} s)"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line


def lattice_shifts(shifts_um, grid):
    s = np.asarray(shifts_um, dtype=float)
    return [tuple(v) for v in (s - s[0]) / (grid.pitch_u_um, grid.row_pitch_v_um)]


def test_c1_geometry_fidelity():
    t0 = time.perf_counter()
    g = LensletGrid()
    s = default_lytro_schedule()
    checks = {
        "pitch": g.pitch_u_um == 14.0,
        "row_pitch": g.row_pitch_v_um == 12.12,
        "sensor": g.sensor_shape_px == (3280, 3280),
        "lenses": (g.rows, g.cols) == (378, 328),
        "table": list(s.shifts_um) == TABLE and s.labels == tuple(range(1, 17)),
    }
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    verdict(1, "geometry", not failed and elapsed < 1.0, f"failed={failed or 'none'}", t0)


def test_c2_dimensional_claim():
    t0 = time.perf_counter()
    grid = LensletGrid.for_lens_count(64, 64)
    sched = default_lytro_schedule()
    z = LightField(np.zeros((7, 7, 64, 64)), 14.0, 12.12)
    lfs = [decode_stub(grid, z)] * 16
    f = fuse(lfs, lattice_shifts(sched.shifts_um, grid), grid, FusionConfig(enhancement=4))
    full = FusionConfig(enhancement=4).output_grid(LightField(np.zeros((7, 7, 378, 328)), 14.0, 12.12))
    ok = f.spatial_size == (256, 256) and f.angular_size == (7, 7) and full.shape == (1512, 1312)
    verdict(2, "dimensions", ok, f"scaled {f.spatial_size}, full {full.shape}, angular {f.angular_size}", t0)


def decode_stub(grid, lf):
    # light field whose lens samples sit at the nominal lens centers
    pos = grid.to_lattice_frame(grid.centers_um().reshape(-1, 2)).reshape(grid.rows, grid.cols, 2)
    return LightField(lf.data, lf.pitch_x_um, lf.pitch_y_um, lens_data=lf.data, lens_positions_um=pos)


def test_c3_registration_accuracy():
    t0 = time.perf_counter()
    grid = LensletGrid.for_lens_count(64, 64)
    sched = default_lytro_schedule()
    hits, worst = 0, 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        label = int(rng.integers(2, 17))
        shift = sched.shifts_um[label - 1]
        origin, extent = scene_bounds_for(grid, [(0.0, 0.0), shift], 40.0)
        scene = make_natural_scene(extent, origin, 1.0, trial, correlation_um=80.0, slope=2.0, disparity_um=1.0)
        cfg = CaptureConfig(psf_sigma_um=1.5, noise_sigma=0.01, actuation_error_um=0.3, rng_seed=trial)
        ref = simulate_capture(scene, grid, (0.0, 0.0), cfg, capture_index=1)
        mov = simulate_capture(scene, grid, shift, cfg, capture_index=label)
        est = estimate_lf_shift(decode(ref, grid), decode(mov, grid))
        true = np.subtract(mov.actual_shift_um, ref.actual_shift_um) / (14.0, 12.12)
        err = float(np.max(np.abs(np.subtract((est.dx_px, est.dy_px), true))))
        worst = max(worst, err)
        hits += err <= 0.05
    elapsed = time.perf_counter() - t0
    verdict(3, "registration", hits >= 95 and elapsed < 120, f"{hits}/100 within 0.05 px, worst {worst:.3f}", t0)


def test_c4_delaunay_correctness():
    t0 = time.perf_counter()
    bad_sets, worst_affine = 0, 0.0
    for k in range(50):
        rng = np.random.default_rng(1000 + k)
        n = int(rng.integers(3, 501))
        pts = rng.random((n, 2)) * 100.0
        tri = delaunay_triangulate(pts)
        bad_sets += float_violations(tri) > 0
        a, b, c = rng.uniform(-2, 2, 3)
        grid = RegularGrid((41, 41), (2.5, 2.5), (0.0, 0.0))
        interp = GridInterpolator(pts, grid, extrapolation="none")
        est = interp.apply(a * pts[:, 0] + b * pts[:, 1] + c, fill=np.nan)
        xy = grid.coords()
        truth = (a * xy[..., 0] + b * xy[..., 1] + c).reshape(grid.shape)
        m = interp.valid_mask
        if m.any():
            worst_affine = max(worst_affine, float(np.abs(est[m] - truth[m]).max()))
    elapsed = time.perf_counter() - t0
    ok = bad_sets == 0 and worst_affine <= 1e-9 and elapsed < 60
    verdict(4, "delaunay", ok, f"{bad_sets} sets with violations, affine error {worst_affine:.1e}", t0)


def test_c5_resolution_gain_trend():
    t0 = time.perf_counter()
    grid = LensletGrid.for_lens_count(128, 128)
    sched = default_lytro_schedule()
    origin, extent = scene_bounds_for(grid, sched.shifts_um, margin_um=30.0)
    scene = make_test_chart(160.0, extent, origin, pixel_um=0.5, n_bands=16)
    cfg = CaptureConfig(psf_sigma_um=1.5, noise_sigma=0.0, actuation_error_um=0.0)
    lfs = {r.capture_index: decode(r, grid) for r in simulate_sequence(scene, grid, sched, cfg)}
    cutoffs = {}
    for count in (1, 2, 4, 8, 16):
        sub = schedule_subset(sched, count, grid)
        f = fuse([lfs[k] for k in sub.labels], lattice_shifts(sub.shifts_um, grid), grid, FusionConfig(enhancement=4))
        origin_um = grid.from_lattice_frame(np.asarray(f.origin_um))
        curve = contrast_profile(f.center_perspective(), scene.chart, (f.pitch_x_um, f.pitch_y_um), tuple(origin_um))
        cutoffs[count] = frequency_cutoff(curve, 0.1)
    vals = [cutoffs[c] for c in (1, 2, 4, 8, 16)]
    monotone = all(b >= a for a, b in zip(vals, vals[1:]))
    ratio = cutoffs[16] / cutoffs[1]
    elapsed = time.perf_counter() - t0
    detail = "cutoffs " + ", ".join(f"{c}:{v:.1f}" for c, v in cutoffs.items()) + f", ratio {ratio:.2f}"
    verdict(5, "resolution trend", monotone and ratio >= 2.0 and elapsed < 600, detail, t0)


def test_c6_ordering_claim():
    t0 = time.perf_counter()
    grid = LensletGrid.for_lens_count(48, 48)
    sched = default_lytro_schedule()
    origin, extent = scene_bounds_for(grid, sched.shifts_um, margin_um=40.0)
    scene = make_natural_scene(extent, origin, 0.5, 1, correlation_um=80.0, slope=2.0, disparity_um=1.0)
    cfg = CaptureConfig(psf_sigma_um=1.5, noise_sigma=0.005, actuation_error_um=0.0)
    lfs = [decode(r, grid) for r in simulate_sequence(scene, grid, sched, cfg)]
    fused = fuse(lfs, lattice_shifts(sched.shifts_um, grid), grid, FusionConfig(enhancement=4))
    truth = crop(scene.sample(grid.from_lattice_frame(fused.pixel_positions()), 1.5))
    ref = lfs[0]
    images, shifts = perspective_stack(ref, RegistrationConfig())
    sr = bayesian_sr(images, shifts, SrConfig(prior_weight=0.01, iterations=300, upscale_factor=4))
    p_bicubic = psnr(crop(cubic_upsample(ref.center_perspective(), 4)), truth)
    p_sr = psnr(crop(sr), truth)
    p_fused = psnr(crop(fused.center_perspective()), truth)
    elapsed = time.perf_counter() - t0
    ok = p_sr - p_bicubic >= 0.5 and p_fused - p_sr >= 0.5 and elapsed < 600
    verdict(6, "ordering", ok, f"bicubic {p_bicubic:.2f} dB, SR {p_sr:.2f} dB, fused {p_fused:.2f} dB", t0)


def test_c7_restoration_numerics():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    flux_err = 0.0
    for it in (1, 10, 30):
        x = make_natural_scene((63.0, 63.0), (0, 0), 1.0, it, correlation_um=6.0, slope=1.5).image
        y = blur(x, PsfModel(sigma_px=1.5)) + 0.02 * rng.random(x.shape)
        out = richardson_lucy(y, PsfModel(sigma_px=1.5), it)
        flux_err = max(flux_err, abs(out.sum() - y.sum()) / y.sum())
    grad_err = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        ims = [r.random((8, 8)) for _ in range(3)]
        shifts = [(0.0, 0.0)] + [tuple(r.uniform(-0.5, 0.5, 2)) for _ in range(2)]
        prob = SrProblem(ims, shifts, 2, prior_weight=float(r.uniform(0, 0.5)))
        x = r.random(prob.hr_shape).ravel()  # 16 x 16 unknowns
        g = prob.gradient(x)
        h = 1e-5
        fd = np.array([(prob.cost(x + h * e) - prob.cost(x - h * e)) / (2 * h) for e in np.eye(x.size)])
        grad_err = max(grad_err, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    r = np.random.default_rng(3)
    ims = [r.random((16, 16)) for _ in range(4)]
    shifts = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)]
    costs = np.asarray(bayesian_sr(ims, shifts, SrConfig(prior_weight=0.05, iterations=80, upscale_factor=2),
                                   return_trace=True).costs)
    monotone = bool(np.all(np.diff(costs) <= 1e-12 * costs[0]))
    elapsed = time.perf_counter() - t0
    ok = flux_err <= 1e-6 and grad_err <= 1e-5 and monotone and elapsed < 120
    verdict(7, "restoration", ok, f"flux {flux_err:.1e}, gradient {grad_err:.1e}, cost monotone {monotone}", t0)


def _tree(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "timings.json"}


def test_c8_determinism(tmp_path):
    t0 = time.perf_counter()
    # natural scene so the registration stage runs on estimated shifts
    cfg = PipelineConfig(grid=GridSpec(rows=32, cols=32, full_sensor=False),
                         scene=SceneSpec(disparity_um=1.0), captures=(1, 2, 4, 8, 16), seed=5)
    cfg = replace(cfg, capture=replace(cfg.capture, noise_sigma=0.01, actuation_error_um=0.3))
    path = tmp_path / "cfg.json"
    io.write_json(path, cfg.to_dict())
    codes = [main(["pipeline", "--config", str(path), "--out", str(tmp_path / name), "--threads", threads])
             for name, threads in (("a", "1"), ("b", "1"), ("c", "4"))]
    trees = {name: _tree(tmp_path / name) for name in "abc"}
    outputs = [k for k in trees["a"] if k.endswith(("data.npy", "report.json", ".pgm"))]
    same_ab = all(trees["a"][k] == trees["b"].get(k) for k in outputs)
    same_ac = all(trees["a"][k] == trees["c"].get(k) for k in outputs)
    ok = codes == [0, 0, 0] and same_ab and same_ac and trees["a"].keys() == trees["c"].keys()
    verdict(8, "determinism", ok, f"{len(outputs)} output files, rerun equal {same_ab}, threads equal {same_ac}", t0)

