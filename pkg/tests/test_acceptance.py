"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Every criterion runs at its stated tolerance and runtime budget. The summary
also appears in the pytest terminal report under "acceptance criteria".
"""

import math
import struct
import time

import numpy as np
import pytest

from conftest import record_acceptance
from ctfkit.background import RadialProfile, lp_background
from ctfkit.cli import main
from ctfkit.ctf_model import DefocusParams, MicroscopeParams, ctf_grid, polar_grid
from ctfkit.fit_zeros import fit_zeros
from ctfkit.mrc import read_mrc, write_mrc
from ctfkit.pipeline import PipelineConfig, process_one, run_pipeline
from ctfkit.report import reports_from_json, reports_from_tsv, reports_to_json, reports_to_tsv
from ctfkit.spectral import classic_estimate, multitaper_estimate, periodogram, plan_blocks
from ctfkit.steerable import build_basis, denoise_spectrum
from ctfkit.synth import SynthSpec, synth_micrograph, synth_movie
from ctfkit.tapers import _dpss_cached, dpss_1d, multitapers, sinc_kernel
from oracles import brute_dft_periodogram, lp_background_linprog
from test_mrc import DTYPES, hand_built

pytestmark = pytest.mark.slow

PIXEL = 1.34


def _angle_error_deg(a, b):
    diff = (a - b) % math.pi
    return math.degrees(min(diff, math.pi - diff))


def _finish(number, checks, elapsed, budget):
    checks = dict(checks)
    checks["runtime"] = (elapsed < budget, f"{elapsed:.1f}s < {budget}s")
    passed = all(ok for ok, _ in checks.values())
    detail = "; ".join(f"{name} {'ok' if ok else 'FAIL'} ({text})" for name, (ok, text) in checks.items())
    record_acceptance(number, passed, detail)
    assert passed, detail


def test_criterion_01_periodogram_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_rel, worst_parseval = 0.0, 0.0
    for _ in range(50):
        block = rng.standard_normal((16, 16))
        mine = periodogram(block)
        ref = brute_dft_periodogram(block)
        worst_rel = max(worst_rel, float(np.max(np.abs(mine - ref)) / np.max(np.abs(ref))))
        parseval = abs(mine.mean() - np.sum(block**2) / 256) / (np.sum(block**2) / 256)
        worst_parseval = max(worst_parseval, parseval)
    _finish(1, {
        "brute DFT": (worst_rel <= 1e-9, f"max rel {worst_rel:.1e}"),
        "Parseval": (worst_parseval <= 1e-9, f"max rel {worst_parseval:.1e}"),
    }, time.perf_counter() - start, 5)


def test_criterion_02_dpss_suite():
    start = time.perf_counter()
    checks = {}
    for k in (128, 512):
        for count, d in ((4, 2), (16, 4)):
            ts = dpss_1d(k, count)
            ortho = float(np.max(np.abs(ts.vectors @ ts.vectors.T - np.eye(ts.count))))
            mat = sinc_kernel(k, ts.bandwidth)
            resid = max(float(np.max(np.abs(mat @ t - lam * t))) for lam, t in zip(ts.eigenvalues, ts.vectors))
            first = ts.vectors.copy()
            _dpss_cached.cache_clear()
            again = dpss_1d(k, count).vectors
            signs = all(row[np.flatnonzero(np.abs(row) > 1e-12 * np.abs(row).max())[0]] > 0 for row in again)
            w = multitapers(k, count).tapers.reshape(count, -1)
            ortho2 = float(np.max(np.abs(w @ w.T - np.eye(count))))
            ok = (ts.count == d and ortho <= 1e-10 and ortho2 <= 1e-10 and resid <= 1e-8 * k
                  and np.array_equal(first, again) and signs)
            checks[f"K={k} L={count}"] = (ok, f"d={ts.count} orth {max(ortho, ortho2):.0e} res {resid:.0e}")
    _finish(2, checks, time.perf_counter() - start, 30)


def test_criterion_03_variance_ordering():
    start = time.perf_counter()
    size, k, count, trials = 128, 32, 4, 100
    plan = plan_blocks((size, size), k, overlap=0.0)
    tapers = multitapers(k, count)
    rng = np.random.default_rng(303)
    pg, bart, mt = [], [], []
    for _ in range(trials):
        img = rng.standard_normal((size, size))
        pg.append(periodogram(img[:k, :k] - img[:k, :k].mean()))
        bart.append(classic_estimate(img, plan))
        mt.append(multitaper_estimate(img, plan, tapers))
    v_pg, v_bart, v_mt = (np.var(np.stack(x), axis=0) for x in (pg, bart, mt))
    ordered = float(np.mean((v_mt <= v_bart) & (v_bart <= v_pg)))
    interior = v_pg > 0
    ratio = float(np.median(v_mt[interior] / v_pg[interior]))
    target = 1 / (count * plan.count)
    _finish(3, {
        "ordering": (ordered >= 0.95, f"{ordered:.3f} of grid points"),
        "ratio": (target / 2 <= ratio <= 2 * target, f"median {ratio:.4f} vs 1/(LB) = {target:.4f}"),
    }, time.perf_counter() - start, 120)


def _lp_constraints_ok(bg, values, tol=1e-9):
    scale = max(1.0, float(values.max()))
    upper = np.all(bg <= values + tol * scale)
    convex = np.all(bg[:-2] + bg[2:] - 2 * bg[1:-1] >= -tol * scale)
    return bool(upper and convex and np.all(bg >= -tol))


def test_criterion_04_lp_background():
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    feasible, worst = True, 0.0
    for _ in range(20):
        values = rng.uniform(0, 10, 10) * np.exp(-np.arange(10) / 4)
        bg = lp_background(RadialProfile(values, 32)).values
        feasible &= _lp_constraints_ok(bg, values)
        ref = lp_background_linprog(values).sum()
        worst = max(worst, abs(bg.sum() - ref) / max(abs(ref), 1e-300))
    unchanged = 0.0
    for _ in range(20):
        i = np.arange(10.0)
        values = rng.uniform(0, 5) + rng.uniform(-1, 0) * i + rng.uniform(0.05, 0.5) * i**2
        values -= min(values.min(), 0.0)
        bg = lp_background(RadialProfile(values, 32)).values
        feasible &= _lp_constraints_ok(bg, values)
        unchanged = max(unchanged, float(np.max(np.abs(bg - values)) / values.max()))
    _finish(4, {
        "constraints": (bool(feasible), "upper, convex, non-negative to 1e-9"),
        "LP oracle": (worst <= 1e-7, f"max rel objective diff {worst:.1e}"),
        "convex unchanged": (unchanged <= 1e-9, f"max rel change {unchanged:.1e}"),
    }, time.perf_counter() - start, 10)


def test_criterion_05_steerable_projection(mic):
    start = time.perf_counter()
    k = 512
    basis = build_basis(k, (-2, 0, 2), 3 / 8)
    r, alpha = polar_grid(k)
    disk = r <= 3 / 8
    rng = np.random.default_rng(505)

    field = rng.standard_normal((k, k))
    once = basis.project(field)
    idem = float(np.max(np.abs(basis.project(once) - once)) / np.max(np.abs(once)))

    ring = np.exp(-(((r - 0.15) / 0.03) ** 2))
    leak = max(float(np.linalg.norm(basis.project(ring * np.cos(m * alpha + 0.3))) / np.linalg.norm(ring))
               for m in (1, 3, 4, 5, 6, 8))

    mean = 15000.0
    ratios = [0.0, 1 / 60, 1 / 30, 1 / 20, 1 / 15]
    errors = []
    for ratio in ratios:
        d = DefocusParams(mean * (1 + ratio), mean * (1 - ratio), 0.4)
        target = np.abs(ctf_grid(mic, d, k)) * disk
        recon = np.sqrt(denoise_spectrum(target**2, basis))
        errors.append(float(np.linalg.norm((recon - target)[disk]) / np.linalg.norm(target[disk])))
    monotone = all(b >= a for a, b in zip(errors, errors[1:]))
    worst_recon = max(errors)
    _finish(5, {
        "idempotence": (idem <= 1e-8, f"{idem:.1e}"),
        "annihilation": (leak <= 1e-6, f"k in 1,3,4,5,6,8 leak {leak:.1e}"),
        "reconstruction": (worst_recon <= 0.01,
                           "rel err " + ", ".join(f"{e:.3f}" for e in errors) + " for ratio 0..1/15"),
        "monotone": (monotone, "error non-decreasing over the sweep"),
    }, time.perf_counter() - start, 60)


def _zero_ring_distance_px(ring, mic, d, size):
    """Radial distance (pixels) of ring pixels from the analytic zero of their order."""
    g1, g2 = ring.g1, ring.g2
    alpha = np.arctan2(g2, g1)
    total = d.df1 + d.df2 + (d.df1 - d.df2) * np.cos(2 * (alpha - d.alpha_f))
    p2 = mic.pixel_size**2
    a = math.pi * mic.wavelength * total / (2 * p2)
    b = math.pi * mic.wavelength**3 * mic.cs / (2 * p2 * p2)
    target = math.pi * ring.order - mic.w
    r2 = (a - np.sqrt(a * a - 4 * b * target)) / (2 * b) if b > 0 else target / a
    return np.abs(np.hypot(g1, g2) - np.sqrt(r2)) * size


def test_criterion_06_zero_crossing_round_trip():
    start = time.perf_counter()
    mic = MicroscopeParams.from_settings(300, 2.7, 0.1, PIXEL)
    rng = np.random.default_rng(606)
    k = 512
    r, _ = polar_grid(k)
    worst_px, min_rings, worst_df, worst_ang, failures = 0.0, 99, 0.0, 0.0, 0
    for _ in range(20):
        mean, ratio, ang = rng.uniform(8000, 35000), rng.uniform(0, 0.1), rng.uniform(0, math.pi)
        d = DefocusParams(mean * (1 + ratio), mean * (1 - ratio), ang)
        spec = np.where(r <= 3 / 8, ctf_grid(mic, d, k) ** 2, 1.0)
        try:
            fit = fit_zeros(spec, mic)
        except Exception:
            failures += 1
            continue
        min_rings = min(min_rings, len(fit.rings))
        for ring in fit.rings:
            worst_px = max(worst_px, float(np.max(_zero_ring_distance_px(ring, mic, d, k))))
        est = fit.defocus
        worst_df = max(worst_df, abs(est.df1 / d.df1 - 1), abs(est.df2 / d.df2 - 1))
        if ratio >= 0.02:
            worst_ang = max(worst_ang, _angle_error_deg(est.alpha_f, d.alpha_f))
    _finish(6, {
        "fits": (failures == 0, f"{20 - failures}/20 succeeded"),
        "ring distance": (worst_px <= 1.0, f"max {worst_px:.2f} px"),
        "rings": (min_rings >= 3, f"min {min_rings} rings"),
        "defocus": (worst_df <= 1e-3, f"max rel {worst_df:.1e}"),
        "angle": (worst_ang <= 0.5, f"max {worst_ang:.3f} deg"),
    }, time.perf_counter() - start, 120)


def _single_block_config(**kwargs):
    return PipelineConfig(pixel_size=PIXEL, block_sizes=(512,), tapers=(4,), **kwargs)


def test_criterion_07_correlation_recovery():
    start = time.perf_counter()
    config = _single_block_config(record_timing=False)
    mic = config.mic
    rng = np.random.default_rng(707)
    worst_mean, worst_astig, worst_ang, score_ok = 0.0, 0.0, 0.0, True
    for i in range(20):
        # the relative astigmatism tolerance is undefined at zero astigmatism, so ratios start at 0.02
        mean, ratio, ang = rng.uniform(10000, 30000), rng.uniform(0.02, 0.1), rng.uniform(0, math.pi)
        d = DefocusParams(mean * (1 + ratio), mean * (1 - ratio), ang)
        img = synth_micrograph(SynthSpec(mic, d, size=4096, snr=1.0, seed=7000 + i))
        report, estimates = process_one((i, img), config)
        del img
        assert report.status == "ok", report.error
        est = estimates[512]
        worst_mean = max(worst_mean, abs(report.mean_defocus / d.mean_defocus - 1))
        worst_astig = max(worst_astig, abs(report.astigmatism - d.astigmatism) / d.astigmatism)
        worst_ang = max(worst_ang, _angle_error_deg(report.alpha_f, d.alpha_f))
        score_ok &= est.fit_score >= est.grid_score
    _finish(7, {
        "mean defocus": (worst_mean <= 0.01, f"max rel {worst_mean:.2e}"),
        "astigmatism": (worst_astig <= 0.10, f"max rel {worst_astig:.3f}"),
        "angle": (worst_ang <= 5.0, f"max {worst_ang:.2f} deg"),
        "P_cc": (bool(score_ok), "returned >= grid point on all 20"),
    }, time.perf_counter() - start, 900)


def test_criterion_08_movie_vs_sum():
    start = time.perf_counter()
    movie_cfg = _single_block_config(movie=True, drop_first_frame=False, record_timing=False)
    sum_cfg = _single_block_config(movie=False, record_timing=False)
    mic = movie_cfg.mic
    rng = np.random.default_rng(808)
    worst = 0.0
    for i in range(5):
        mean, ratio, ang = rng.uniform(10000, 30000), rng.uniform(0, 0.05), rng.uniform(0, math.pi)
        d = DefocusParams(mean * (1 + ratio), mean * (1 - ratio), ang)
        spec = SynthSpec(mic, d, size=2048, snr=0.1, seed=8000 + i)
        stack = np.stack(synth_movie(spec, 20))
        movie = run_pipeline(movie_cfg, [stack])[0]
        summed = run_pipeline(sum_cfg, [stack])[0]
        del stack
        assert movie.status == summed.status == "ok"
        worst = max(worst, abs(movie.mean_defocus - summed.mean_defocus))
    _finish(8, {
        "defocus difference": (worst <= 100.0, f"max {worst:.1f} A over 5 movies"),
    }, time.perf_counter() - start, 600)


def test_criterion_09_throughput_and_determinism(tmp_path):
    start_all = time.perf_counter()
    mic = MicroscopeParams.from_settings(300, 2.7, 0.1, PIXEL)
    img = synth_micrograph(SynthSpec(mic, DefocusParams(16000, 15000, 1.0), size=4096, seed=909))
    t0 = time.perf_counter()
    report, _ = process_one((0, img), _single_block_config())
    one = time.perf_counter() - t0
    del img
    paths = []
    for i in range(8):
        d = DefocusParams(12000 + 1500 * i, 11500 + 1500 * i, 0.3 * i)
        path = tmp_path / f"m{i}.mrc"
        write_mrc(path, synth_micrograph(SynthSpec(mic, d, size=2048, seed=910 + i)).astype(np.float32),
                  pixel_size=PIXEL)
        paths.append(path)
    serial = reports_to_json(run_pipeline(_single_block_config(record_timing=False), paths))
    parallel = reports_to_json(run_pipeline(_single_block_config(record_timing=False, workers=8), paths))
    checks = {
        "4096^2 run": (report.status == "ok" and one < 60, f"{one:.1f}s < 60s"),
        "1 vs 8 workers": (serial == parallel, "bitwise-equal JSON" if serial == parallel else "differ"),
    }
    _finish(9, checks, time.perf_counter() - start_all, 600)


def test_criterion_10_mrc_and_reports(tmp_path):
    start = time.perf_counter()
    exact = True
    for mode, dtype in DTYPES.items():
        for nz in (1, 3):
            rng = np.random.default_rng(mode * 10 + nz)
            if mode == 2:
                data = rng.standard_normal((nz, 6, 5)).astype(dtype)
            else:
                info = np.iinfo(dtype)
                data = rng.integers(info.min, info.max, (nz, 6, 5), endpoint=True).astype(dtype)
            path = tmp_path / f"mode{mode}_{nz}.mrc"
            path.write_bytes(hand_built(5, 6, nz, mode, data.tobytes(), nsymbt=64 * (nz - 1)))
            arr, _ = read_mrc(path)
            expected = data[0] if nz == 1 else data
            exact &= arr.shape == expected.shape and np.array_equal(arr, expected.astype(float))

    mic = MicroscopeParams.from_settings(300, 2.7, 0.1, PIXEL)
    good = []
    for i in range(2):
        path = tmp_path / f"good{i}.mrc"
        img = synth_micrograph(SynthSpec(mic, DefocusParams(15000 + 3000 * i, 14500 + 3000 * i, 0.5),
                                         size=1024, seed=1000 + i))
        write_mrc(path, img.astype(np.float32), pixel_size=PIXEL)
        good.append(str(path))
    corrupt = tmp_path / "corrupt.mrc"
    raw = bytearray(open(good[0], "rb").read(4096))
    raw[208:212] = b"JUNK"
    corrupt.write_bytes(bytes(raw))

    common = ["--pixel-size", str(PIXEL), "--block-sizes", "256", "--no-timing"]
    code_alone = main(["estimate", "--input", *good, *common, "--out", str(tmp_path / "alone")])
    code_mixed = main(["estimate", "--input", good[0], str(corrupt), good[1], *common,
                       "--out", str(tmp_path / "mixed"), "--format", "tsv"])
    alone = reports_from_json((tmp_path / "alone" / "ctf_report.json").read_text())
    mixed = reports_from_tsv((tmp_path / "mixed" / "ctf_report.tsv").read_text())
    mixed_good = [r for r in mixed if r.status == "ok"]
    unaffected = len(mixed_good) == 2 and all(
        a.file_id == b.file_id and a.df1 == b.df1 and a.df2 == b.df2
        and math.isclose(a.alpha_f, b.alpha_f, rel_tol=1e-14, abs_tol=1e-15)
        for a, b in zip(alone, mixed_good))

    json_rt = reports_from_json(reports_to_json(mixed)) == mixed
    tsv_text = reports_to_tsv(mixed)
    tsv_rt = reports_to_tsv(reports_from_tsv(tsv_text)) == tsv_text
    _finish(10, {
        "MRC fixtures": (bool(exact), "modes 0/1/2/6, single and stack"),
        "round trips": (json_rt and tsv_rt, "JSON and TSV"),
        "isolation": (code_alone == 0 and code_mixed == 2 and unaffected and mixed[1].status == "error",
                      f"exit codes {code_alone}/{code_mixed}, good files unchanged"),
    }, time.perf_counter() - start, 300)


def test_hand_built_fixture_layout():
    # guards the fixture builder itself: fields land at the MRC2014 word offsets
    raw = hand_built(3, 2, 1, 6, b"\0" * 12, nsymbt=8)
    assert struct.unpack_from("<4i", raw, 0) == (3, 2, 1, 6)
    assert struct.unpack_from("<i", raw, 92) == (8,)
    assert raw[208:212] == b"MAP "
