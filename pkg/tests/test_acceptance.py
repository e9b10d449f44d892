"""Acceptance criteria 1-10, each at its stated tolerance and time limit.

Every test prints one ``CRITERION n: PASS|FAIL`` line (visible with or
without ``-s``) before asserting.  Criteria 5 and 9 take several minutes.
"""

import math
import time

import numpy as np
import pytest

from lse_lab import analytics as A
from lse_lab import engine
from lse_lab.cli import EXIT_OK, EXIT_VALIDATION, main
from lse_lab.lattice import SiteField
from lse_lab.models import ModelSpec
from lse_lab.oracle import DUALITY_CASES, duality_check, exact_two_point, two_point_totals

pytestmark = pytest.mark.acceptance


def _report(capsys, n, ok, detail, elapsed):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s]")


def _fresh_caches():
    A._green_table.cache_clear()


def test_criterion_1_collision_probability(capsys):
    _fresh_caches()
    t0 = time.perf_counter()
    m = ModelSpec("OSP", 3, p=0.5)
    pi0, err = A.collision_prob(m)
    gt = A.green_table(m)
    o = (0, 0, 0)
    pi_series = 1 - 1 / gt.value(o, "series")
    pi_quad = 1 - 1 / gt.value(o, "quadrature")
    elapsed = time.perf_counter() - t0
    ok = 0.3395 <= pi0 <= 0.3415 and abs(pi_series - pi_quad) <= 1e-3 and elapsed < 60
    _report(capsys, 1, ok, f"pi0={pi0:.8f} +- {err:.1e} series={pi_series:.8f} "
                           f"quadrature={pi_quad:.8f}", elapsed)
    assert ok


def test_criterion_2_martingale(capsys):
    t0 = time.perf_counter()
    m = ModelSpec("OSP", 1, p=0.7)
    ens = engine.run_ensemble(m, SiteField.delta(1), 20, 10**4, master_seed=2)
    mean, se = ens.moment(1.0)
    elapsed = time.perf_counter() - t0
    z = (mean - 1.0) / se
    ok = abs(z) <= 4 and elapsed < 60
    _report(capsys, 2, ok, f"E|N_20|={mean:.5f} +- {se:.5f} (z={z:+.2f})", elapsed)
    assert ok


def test_criterion_3_feynman_kac_oracle(capsys):
    t0 = time.perf_counter()
    m = ModelSpec("GOSP", 1, p=0.6, q=0.2)
    init = SiteField.delta(1)
    exact = exact_two_point(m, init, 5).total()
    assert math.isclose(exact, two_point_totals(m, init, 5)[-1], rel_tol=1e-12)
    ens = engine.run_ensemble(m, init, 5, 10**5, master_seed=3)
    second, se = ens.moment(2.0)
    elapsed = time.perf_counter() - t0
    z = (second - exact) / se
    ok = abs(z) <= 4 and elapsed < 120
    _report(capsys, 3, ok, f"engine E|N_5|^2={second:.5f} +- {se:.5f} exact={exact:.6f} "
                           f"(z={z:+.2f})", elapsed)
    assert ok


def test_criterion_4_duality(capsys):
    t0 = time.perf_counter()
    assert len(DUALITY_CASES) == 12
    assert {m.kind for m, _, _ in DUALITY_CASES} == {"GOSP", "GOBP", "BCPP", "VM"}
    assert all(m.d == 1 for m, _, _ in DUALITY_CASES)
    tvs = [duality_check(m, 2, x, y).tv_distance for m, x, y in DUALITY_CASES]
    elapsed = time.perf_counter() - t0
    ok = max(tvs) <= 1e-12 and elapsed < 60
    _report(capsys, 4, ok, f"12 cases, max TV distance {max(tvs):.1e}", elapsed)
    assert ok


def test_criterion_5_l2_limit_covariance(capsys):
    _fresh_caches()
    t0 = time.perf_counter()
    m = ModelSpec("OSP", 3, p=0.8)
    pi0, _ = A.collision_prob(m)
    gamma = 1 / m.p
    limit = 1 + pi0 * (gamma - 1) / (1 - pi0 * gamma)
    ens = engine.run_ensemble(m, SiteField.delta(3), 50, 10**4, master_seed=2024)
    second, se = ens.moment(2.0)
    elapsed = time.perf_counter() - t0
    # exact finite-T value, for reference only: the limit is approached like T^{-1/2}
    finite_T = two_point_totals(m, SiteField.delta(3), 50)[-1]
    z = (second - limit) / se
    ok = abs(z) <= 4 and elapsed < 600
    _report(capsys, 5, ok, f"E|N_50|^2={second:.5f} +- {se:.5f} limit={limit:.5f} (z={z:+.2f}); "
                           f"exact at T=50: {finite_T:.5f} (z={(second - finite_T) / se:+.2f})", elapsed)
    assert ok


def test_criterion_6_entropy_decay(capsys):
    t0 = time.perf_counter()
    m = ModelSpec("GOSP", 2, p=0.1, q=0.1)
    rep, hphi = A.entropy_report(m)
    assert rep.holds and hphi is not None
    h, phi_h = hphi
    ens = engine.run_ensemble(m, SiteField.delta(2), 50, 10**4, master_seed=6)
    mean, se = ens.moment_curve(h)
    t = np.arange(51)
    bound = phi_h**t
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(mean > 0, se / mean, 0.0)
    ok_t = mean <= bound * (1 + 4 * rel)
    elapsed = time.perf_counter() - t0
    ok = phi_h < 1 and bool(ok_t.all()) and elapsed < 300
    worst = int(np.argmax(mean / bound))
    _report(capsys, 6, ok, f"h*={h:.3g} phi(h*)={phi_h:.5f}; max ratio to phi^t "
                           f"{mean[worst] / bound[worst]:.4f} at t={worst}", elapsed)
    assert ok


def test_criterion_7_d1_slow_growth(capsys):
    t0 = time.perf_counter()
    m = ModelSpec("OSP", 1, p=0.7)
    ens = engine.run_ensemble(m, SiteField.delta(1), 200, 4000, master_seed=7)
    ts = np.arange(50, 201)
    vals = np.exp(0.5 * ens.log_norms[:, ts])  # zero after extinction

    def slope(means):
        return np.polyfit(ts, np.log(means), 1)[0]

    est = slope(vals.mean(axis=0))
    # bootstrap over replicates; one-sided 95% upper bound on the slope
    rng = np.random.default_rng(7)
    counts = rng.multinomial(len(vals), np.full(len(vals), 1 / len(vals)), size=1000)
    boot = counts @ vals / len(vals)
    slopes = np.array([slope(b) for b in boot])
    upper = float(np.quantile(slopes, 0.95))
    elapsed = time.perf_counter() - t0
    ok = est < 0 and upper < 0
    _report(capsys, 7, ok, f"log-slope of E|N_t|^0.5 on [50, 200]: {est:.5f}, "
                           f"95% upper bound {upper:.5f}", elapsed)
    assert ok


def test_criterion_8_fourier_gap(capsys):
    t0 = time.perf_counter()
    m = ModelSpec("BCPP", 2, p=0.5, q=0.3)
    gap = A.fourier_gap(m)
    target = m.p * (1 - m.p) + m.q * (1 - m.q)
    elapsed = time.perf_counter() - t0
    ok = gap.refined >= target - 1e-6 and elapsed < 10
    _report(capsys, 8, ok, f"min b^A - |a|^2 = {gap.refined:.9f} (grid {gap.grid_min:.9f}) "
                           f">= {target - 1e-6:.6f}", elapsed)
    assert ok


def test_criterion_9_invariant_measure(capsys):
    t0 = time.perf_counter()
    m = ModelSpec("OSP", 3, p=0.8)
    means = engine.window_means(m, 2.0, ((0, 0, 0), (4, 4, 4)), 60, 1000, master_seed=9)
    mu, se = engine.mean_se(means)
    z = (mu - 2.0) / se
    slow = ModelSpec("OSP", 1, p=0.5)
    early = engine.window_means(slow, 1.0, ((-2,), (2,)), 20, 2000, master_seed=19)
    late = engine.window_means(slow, 1.0, ((-2,), (2,)), 200, 2000, master_seed=29)
    e_mu, _ = engine.mean_se(early)
    l_mu, _ = engine.mean_se(late)
    elapsed = time.perf_counter() - t0
    ok = abs(z) <= 4 and l_mu < e_mu and elapsed < 900
    _report(capsys, 9, ok, f"regular window mean {mu:.4f} +- {se:.4f} (z={z:+.2f}); "
                           f"slow window mean T=20 {e_mu:.4f} > T=200 {l_mu:.4f}", elapsed)
    assert ok


CONFIGS = {
    "simulate": "command: simulate\nmodel: {kind: GOBP, d: 2, p: 0.4, q: 0.3}\nT: 20\nreps: 500\n"
                "seed: 10\nh_list: [0.5]\n",
    "dual": "command: dual\nmodel: {kind: BCPP, d: 2, p: 0.5, q: 0.3}\nT: 20\nreps: 500\nseed: 10\n",
    "criteria": "command: criteria\nmodel: {kind: OSP, d: 3, p: 0.8}\n",
    "phase-scan": "command: phase-scan\nmodel: {kind: OSP, d: 3}\nT: 10\nreps: 200\nempirical: true\n"
                  "scan: {axis: p, min: 0.2, max: 0.8, steps: 4}\n",
    "invariant": "command: invariant\nmodel: {kind: OSP, d: 2, p: 0.7}\nT: 15\nreps: 100\nalpha: 1.5\n"
                 "window: {lo: [0, 0], hi: [1, 1]}\n",
    "validate": "command: validate\nreps: 2000\nseed: 10\n",
}


def test_criterion_10_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    same = {}
    for cmd, text in CONFIGS.items():
        cfg = tmp_path / f"{cmd}.yaml"
        cfg.write_text(text)
        outs = []
        for threads in ("1", "8"):
            out = tmp_path / f"{cmd}.{threads}.out"
            rc = main([cmd, "--config", str(cfg), "--threads", threads, "--out", str(out)])
            assert rc in (EXIT_OK, EXIT_VALIDATION)
            outs.append(out.read_bytes())
        same[cmd] = len(outs[0]) > 0 and outs[0] == outs[1]
    elapsed = time.perf_counter() - t0
    ok = all(same.values())
    _report(capsys, 10, ok, "byte-identical with --threads 1 and 8: " +
            ", ".join(f"{k}={'yes' if v else 'NO'}" for k, v in same.items()), elapsed)
    assert ok
