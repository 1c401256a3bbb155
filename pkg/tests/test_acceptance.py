"""End-to-end acceptance checks.

Each test records one ``Criterion N: PASS|FAIL ...`` line that the
terminal summary prints in order, then asserts. Thresholds are the stated
ones; several runs take minutes and are marked slow.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import optimize, stats

from mixsim import _kernels
from mixsim.channel import ChannelSet, rng_stream, sample_channel_batch, tail_exponent
from mixsim.cli import _grid, preset, run_experiment, RunSpec
from mixsim.grouping import group_algorithm1, verify_norm_floor
from mixsim.montecarlo import ExperimentConfig, fit_slope, simulate
from mixsim.subspace import projector_orth, sequential_project
from mixsim.transceiver import (c_constant, delta_solution, group_rates_exact, maxmin_beam,
                                mrt_outage_closed_form, prop1_lower_bounds,
                                saturation_caps, zf_directions)

from conftest import ACCEPTANCE_LINES, crandn


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"Criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def test_criterion_01_sequential_projection():
    r = rng_stream(101, "c1", 0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        N = int(r.integers(2, 9))
        n_stages = int(r.integers(1, 5))
        # total columns below N keeps every stage full rank
        sizes = [int(r.integers(1, max(2, (N - 1) // n_stages + 1))) for _ in range(n_stages)]
        while sum(sizes) >= N:
            sizes[int(np.argmax(sizes))] -= 1
        stages = [crandn(r, N, s) for s in sizes if s > 0]
        x = crandn(r, N)
        direct = projector_orth(np.hstack(stages)) @ x
        seq = sequential_project(x, stages)
        worst = max(worst, np.linalg.norm(seq - direct) / np.linalg.norm(x))
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-10 and dt < 5,
           f"max rel err {worst:.2e} (<= 1e-10), {dt:.2f} s (< 5 s)")


def test_criterion_02_norm_floor():
    r = rng_stream(102, "c2", 0)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(10_000):
        cs = ChannelSet(crandn(r, 4, 4))
        bad += len(verify_norm_floor(group_algorithm1(cs, 0.9), cs, slack=1e-9).violations)
    dt = time.perf_counter() - t0
    record(2, bad == 0 and dt < 120, f"{bad} violations in 1e4 sets, {dt:.1f} s (< 120 s)")


def test_criterion_03_power_split_values():
    want = {2: (0.2071, 0.7929), 3: (0.0429, 0.1642, 0.7929),
            4: (0.0089, 0.0340, 0.1642, 0.7929)}
    err = max(abs(a - b) for L, w in want.items()
              for a, b in zip(delta_solution(L, 1.5, 2), w))
    # the quoted caps follow from the four-decimal factors
    caps = saturation_caps(want[4])[1:]
    cap_err = max(abs(a - b) for a, b in zip(caps, (2.2691, 2.2713, 2.2716)))
    cap2 = abs(saturation_caps(want[2])[1] - 2.2716)
    ok = err <= 1e-3 and cap_err <= 1e-3 and cap2 <= 1e-3
    record(3, ok, f"delta err {err:.1e}, cap err {max(cap_err, cap2):.1e} (<= 1e-3); "
                  f"caps {', '.join(f'{c:.4f}' for c in caps)}")


def test_criterion_04_c_constant():
    got = {L: c_constant(L) for L in (1, 2, 3, 4, 10)}
    want = {1: 1, 2: 2, 3: 3, 4: 128, 10: 800}
    record(4, got == want, f"c = {got}")


def test_criterion_05_bound_dominance():
    r = rng_stream(105, "c5", 0)
    violations = certified = 0
    n = 10_000
    for _ in range(n):
        L = int(r.integers(2, 4))
        N = int(r.choice([2, 4]))
        G = crandn(r, N, L)
        G = G[:, np.argsort(-np.linalg.norm(G, axis=0), kind="stable")]
        n2 = np.sum(np.abs(G) ** 2, axis=0)
        w, _, ok = maxmin_beam(G / np.sqrt(n2), r)
        d = delta_solution(L, 1.5, 2)
        P = 10 ** r.uniform(0, 4)
        if ok:
            certified += 1
            rates = group_rates_exact(G, w, d, P)
            violations += int(np.any(rates < prop1_lower_bounds(n2, d, P) - 1e-9))
    frac = certified / n
    record(5, violations == 0 and frac >= 0.99,
           f"{violations} bound violations, certificate rate {frac:.4f} (>= 0.99)")


def _brute_force_maxmin(V, r, n=10 ** 6):
    best, arg = -1.0, None
    for _ in range(n // 250_000):
        W = crandn(r, 2, 250_000)
        W /= np.linalg.norm(W, axis=0)
        vals = np.min(np.abs(V.conj().T @ W) ** 2, axis=0)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, arg = float(vals[i]), W[:, i]

    def neg(x):
        w = np.array([math.cos(x[0]), math.sin(x[0]) * np.exp(1j * x[1])])
        return -np.min(np.abs(V.conj().T @ w) ** 2)

    phase = arg[0] / abs(arg[0]) if abs(arg[0]) > 0 else 1.0
    a = arg / phase
    x0 = [math.acos(min(1.0, abs(a[0]))), float(np.angle(a[1]))]
    res = optimize.minimize(neg, x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    return max(best, -res.fun)


@pytest.mark.slow
def test_criterion_06_maxmin_vs_brute_force():
    r = rng_stream(106, "c6", 0)
    t0 = time.perf_counter()
    worst = 1.0
    for i in range(100):
        L = 2 + i % 2
        V = crandn(r, 2, L)
        V /= np.linalg.norm(V, axis=0)
        _, got, _ = maxmin_beam(V, r)
        worst = min(worst, got / _brute_force_maxmin(V, r))
    dt = time.perf_counter() - t0
    record(6, worst >= 0.98 and dt < 300,
           f"worst achieved/oracle {worst:.5f} (>= 0.98), {dt:.0f} s (< 300 s)")


MRT_GRIDS = {1: _grid(17, 1, 37), 2: _grid(6, 1, 15), 3: _grid(2, 1, 7)}


@pytest.mark.slow
def test_criterion_07_mrt_outage():
    details, ok = [], True
    for N, grid in MRT_GRIDS.items():
        cfg = ExperimentConfig(name=f"c7-{N}", N=N, K=1, schemes=("mrt",), R_th=1.0,
                               snr_db=grid, trials=10 ** 6, block_size=250_000, seed=107)
        c = simulate(cfg).outage["mrt"]
        p = c.outage[:, 0]
        lo, hi = c.interval(1)
        cf = np.array([mrt_outage_closed_form(N, 1.0, 10 ** (s / 10)) for s in grid])
        z = np.abs(p - cf) / ((hi - lo) / 2)
        slope = fit_slope(c, 1, window=(1e-4, 1e-2))
        good = bool(np.all(z <= 3)) and abs(slope - N) <= 0.3
        ok &= good
        details.append(f"N={N}: max dev {z.max():.1f} half-widths at "
                       f"{grid[int(np.argmax(z))]:g} dB, slope {slope:.2f}")
    record(7, ok, "; ".join(details) + " (need <= 3 and N +/- 0.3)")


@pytest.mark.slow
def test_criterion_08_zf_diversity():
    cfg = ExperimentConfig(name="c8", N=4, K=4, schemes=("zf",), snr_db=_grid(20, 2, 44),
                           trials=10 ** 6, block_size=250_000, seed=108)
    c = simulate(cfg).outage["zf"]
    slope = fit_slope(c, None, window=(1e-3, 1e-1))
    H = sample_channel_batch(4, 4, 100_000, rng_stream(108, "c8-ks", 0))
    pvals = []
    gains = np.empty((H.shape[0], 4))
    for b in range(H.shape[0]):
        W = zf_directions(H[b])
        gains[b] = np.abs(np.sum(H[b].conj() * W, axis=0)) ** 2
    for k in range(4):
        pvals.append(stats.kstest(gains[:, k], "expon", args=(0, 2)).pvalue)
    ok = abs(slope - 1) <= 0.2 and min(pvals) > 0.01
    record(8, ok, f"slope {slope:.3f} (1 +/- 0.2), KS p-values "
                  f"{', '.join(f'{p:.3f}' for p in pvals)} (> 0.01)")


@pytest.mark.slow
def test_criterion_09_effective_norm_tail():
    n, block = 10 ** 6, 100_000
    h_ord = np.empty((n, 4))
    g_ord = np.empty((n, 4))
    for b in range(n // block):
        H = sample_channel_batch(4, 4, block, rng_stream(109, "c9", b))
        lab = np.empty((block, 4), dtype=np.int64)
        ng = np.empty(block, dtype=np.int64)
        G = np.empty_like(H)
        _kernels.algorithm1_batch(H, 0.9, lab, ng, G)
        h2 = np.sum(np.abs(H) ** 2, axis=1)
        g2 = np.sum(np.abs(G) ** 2, axis=1)
        order = np.argsort(-h2, axis=1, kind="stable")
        h_ord[b * block:(b + 1) * block] = np.take_along_axis(h2, order, 1)
        g_ord[b * block:(b + 1) * block] = np.take_along_axis(g2, order, 1)
    details, ok = [], True
    for k in range(4):
        # the tail window is the lower 1e-4..1e-2 quantile band of the norm
        win = tuple(np.quantile(h_ord[:, k], [1e-4, 1e-2]))
        dh = tail_exponent(h_ord[:, k], win)
        dg = tail_exponent(g_ord[:, k], win)
        good = abs(dg - dh) <= 0.1 * dh
        ok &= good
        details.append(f"rank {k + 1}: h {dh:.2f} vs g {dg:.2f}")
    record(9, ok, "; ".join(details) + " (need within 10%)")


@pytest.mark.slow
def test_criterion_10_two_user_slope():
    t0 = time.perf_counter()
    cfg = replace(preset("fig2a").config, snr_db=_grid(8, 1, 22), trials=10 ** 6,
                  block_size=250_000)
    c = simulate(cfg).outage["mixture"]
    slope = fit_slope(c, 2, window=(1e-4, 1e-2))
    ordered = bool(np.all(c.outage[:, 0] <= c.outage[:, 1]))
    dt = time.perf_counter() - t0
    record(10, abs(slope - 3) <= 0.5 and ordered and dt < 1800,
           f"user-2 slope {slope:.2f} (3 +/- 0.5), user 1 <= user 2 everywhere: {ordered}, "
           f"{dt:.0f} s (< 1800 s)")


@pytest.mark.slow
def test_criterion_11_mixture_beats_zf():
    cfg = replace(preset("fig3b-4").config, snr_db=_grid(0, 2, 40), trials=10 ** 6,
                  block_size=100_000)
    res = simulate(cfg)
    zf = res.outage["zf"].overall
    mix = res.outage["mixture"].overall
    mask = zf <= 1e-2
    ok = bool(mask.any() and np.all(mix[mask] < zf[mask]))
    pts = ", ".join(f"{s:g} dB {m:.1e}/{z:.1e}" for s, m, z in
                    zip(np.asarray(cfg.snr_db)[mask], mix[mask], zf[mask]))
    record(11, ok, f"mixture/zf where zf <= 1e-2: {pts}")


@pytest.mark.slow
def test_criterion_12_multiplexing_slopes():
    cfg = replace(preset("fig5").config, snr_db=_grid(40, 5, 60), trials=10 ** 4,
                  block_size=5000)
    res = simulate(cfg)
    x = np.asarray(cfg.snr_db) / 3.0
    slope = {s: float(np.polyfit(x, res.sum_rate[s].mean, 1)[0]) for s in cfg.schemes}
    ratio = slope["single_group"] / slope["zf"]
    ok = (slope["single_group"] < slope["mixture"] <= slope["zf"]
          and abs(ratio - 0.25) <= 0.2 * 0.25)
    record(12, ok, "bits per 3 dB: " + ", ".join(f"{s} {v:.3f}" for s, v in slope.items())
           + f"; single/zf {ratio:.3f} (0.25 +/- 20%)")


@pytest.mark.slow
def test_criterion_13_imperfect_csi():
    base = replace(preset("fig9").config, trials=200_000, block_size=50_000)
    fixed = simulate(base).outage["mixture"].overall
    scaled = simulate(replace(base, csi=replace(base.csi, mode="power_scaled",
                                                sigma_e2=0.0))).outage["mixture"].overall
    grid = list(base.snr_db)
    ratio = fixed[grid.index(40.0)] / fixed[grid.index(30.0)]
    decreasing = bool(np.all(np.diff(scaled) < 0))
    record(13, ratio > 0.5 and decreasing,
           f"fixed 40/30 dB ratio {ratio:.3f} (> 0.5); power-scaled "
           f"{', '.join(f'{p:.1e}' for p in scaled)} strictly decreasing: {decreasing}")


def test_criterion_14_determinism(tmp_path):
    specs = [
        RunSpec(replace(preset("fig3b-4").config, name="det", trials=6000, block_size=500,
                        snr_db=(0.0, 10.0, 20.0), beam_restarts=10, beam_iters=60)),
        RunSpec(replace(preset("fig5").config, name="det-sr", trials=3000, block_size=500,
                        snr_db=(0.0, 20.0, 40.0), beam_restarts=10, beam_iters=60),
                "sum_rate"),
    ]
    same = True
    for spec in specs:
        a = run_experiment(spec, tmp_path / "w1", workers=1)["outputs"].split(",")
        b = run_experiment(spec, tmp_path / "w8", workers=8)["outputs"].split(",")
        for pa, pb in zip(a, b):
            same &= open(pa, "rb").read() == open(pb, "rb").read()
    record(14, same, "CSV bytes identical for 1 and 8 workers" if same
           else "CSV bytes differ between 1 and 8 workers")
