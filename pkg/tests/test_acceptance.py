"""Acceptance criteria 1-10, one test each; a PASS/FAIL line per criterion is printed."""
import json
import math
import time

import numpy as np
import pytest

from ldgmq.cli import main
from ldgmq.de import de_bstep, degradation_gap, mc_de_2k
from ldgmq.density import (bec, density_cn, density_vn, prior_density_u, symmetry_residual, to_hist)
from ldgmq.ebp import (beq_recursion, ebp_area, erasure_profile_2k, f_erasure_2k, lower_curve_area,
                       solvability_threshold, threshold_search)
from ldgmq.experiments import (oracle_sweep, run_quantize_trials, summarize_trials, tpq_distortion)
from ldgmq.ldgm import DegreeDistribution, sample_code
from ldgmq.oracle import area_identity_check
from ldgmq.quantizer import DecimationPolicy
from ldgmq.source import ErasureLikeK, MaryErasure, MaryHamming, MseUniform, TestChannel

pytestmark = pytest.mark.acceptance


class Clock:
    def __init__(self, k, budget):
        self.k, self.budget = k, budget

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        status = "FAIL" if exc[0] is not None or self.elapsed > self.budget else "PASS"
        print(f"\nCRITERION {self.k}: {status} ({self.elapsed:.1f} s, budget {self.budget} s)")
        return False

    def check(self):
        assert self.elapsed < self.budget, f"runtime {self.elapsed:.1f} s over budget"


def _testchannel_min(tmp_path, M):
    assert main(["testchannel", "--problem", "mse", "--M", str(M), "--sweep", "R",
                 "--out", str(tmp_path)]) == 0
    return json.loads((tmp_path / "testchannel.json").read_text())["minimum"]


def test_criterion_01_binary_loss(tmp_path):
    with Clock(1, 30) as c:
        m = _testchannel_min(tmp_path, 2)
        assert m["loss_db"] == pytest.approx(0.0945, abs=0.002)
        assert m["R"] == pytest.approx(0.4143, abs=0.005)
        assert m["t"] == pytest.approx(3.7114, abs=0.05)
    c.check()


def test_criterion_02_quaternary_loss(tmp_path):
    with Clock(2, 60) as c:
        m = _testchannel_min(tmp_path, 4)
        assert m["loss_db"] == pytest.approx(0.0010, abs=0.0005)
        assert m["R"] == pytest.approx(0.9550, abs=0.005)
        assert m["t"] == pytest.approx(2.0053, abs=0.05)
    c.check()


def test_criterion_03_beq_thresholds():
    with Clock(3, 10) as c:
        assert threshold_search(DegreeDistribution.regular(4, 2)) == pytest.approx(1 / 3, abs=1e-4)
        assert threshold_search(DegreeDistribution.regular(5, 3)) == pytest.approx(7 / 16, abs=1e-4)
        assert solvability_threshold(DegreeDistribution.regular(5, 3)) == pytest.approx(0.5176, abs=1e-3)
    c.check()


def random_dd(rng, with_one):
    db = int(rng.integers(2, 8))
    degs = rng.choice(np.arange(1 if with_one else 2, 9), size=int(rng.integers(1, 5)), replace=False)
    w = rng.dirichlet(np.ones(len(degs)))
    return DegreeDistribution.from_w(db, {int(d): float(x) for d, x in zip(degs, w)})


def test_criterion_04_area_identity():
    rng = np.random.default_rng(2024)
    with Clock(4, 10) as c:
        for i in range(100):
            dd = random_dd(rng, with_one=i % 2 == 1)
            Iu = float(rng.uniform(0.0, 0.99))
            r = ebp_area(dd, Iu)
            assert abs(r.identity_residual) < 1e-8
            if dd.v.get(1, 0.0) == 0:
                assert abs(r.A_ebp - Iu / dd.R) < 1e-8
    c.check()


BINARY_CHANNELS = {
    "mse": TestChannel(MseUniform(2), 2.0),
    "hamming": TestChannel(MaryHamming(2), 1.2),
    "erasure": TestChannel(MaryErasure(2, 0.4), 1.5),
    "beq": TestChannel(MaryErasure(2, 0.4), math.inf),
}


def test_criterion_05_bp_equals_exact():
    with Clock(5, 120) as c:
        for k, (name, ch) in enumerate(BINARY_CHANNELS.items()):
            r = oracle_sweep(ch, 100, max_bits=20, seed=k)
            assert r["max_dev_b"] <= 1e-9, name
            assert r["max_dev_a"] <= 1e-9, name
    c.check()


def test_criterion_06_tpq_distortion():
    dd = DegreeDistribution.regular(4, 2)
    with Clock(6, 120) as c:
        for k, t in enumerate((1.0, 2.0, 3.7114)):
            r = tpq_distortion(dd, 6, TestChannel(MseUniform(2), t), 10_000, root=k)
            assert abs(r["z"]) <= 3, (t, r)
    c.check()


def test_criterion_07_finite_n_area():
    dd = DegreeDistribution.regular(4, 2)
    with Clock(7, 120) as c:
        for k, ch in enumerate((BINARY_CHANNELS["mse"], BINARY_CHANNELS["beq"])):
            code = sample_code(dd, 4, seed=11 + k)
            r = area_identity_check(code, ch, 50_000, seed=k)
            assert abs(r["lhs"] - r["rhs"]) <= 4 * r["stderr"], r
    c.check()


def test_criterion_08_de_consistency():
    rng = np.random.default_rng(8)
    with Clock(8, 300) as c:
        for _ in range(20):
            dd = random_dd(rng, with_one=False)
            Iu, Ib = float(rng.uniform(0.05, 0.9)), float(rng.uniform(0, 1))
            init = "unknown" if rng.integers(2) == 0 else "sure"
            hist = de_bstep(dd, to_hist(bec(Iu)), Ib, 15, init)
            scal = beq_recursion(dd, Iu, Ib, 15, init)
            assert np.max(np.abs(np.array(hist.mi) - scal.ext)) <= 1e-3
        ch = TestChannel(ErasureLikeK(2, 0.5), math.inf)
        dd2 = DegreeDistribution.regular(4, 2, K=2)
        f = f_erasure_2k(erasure_profile_2k(ch), dd2)
        mc = mc_de_2k(dd2, ch, 2, None, 0.2, 5, 100_000, seed=8)
        for x_in, got, se in zip(mc.mi_bc_in, mc.mi_cb, mc.se_cb):
            assert abs(got - ch.R0 * float(f(x_in))) <= 3 * se
    c.check()


def test_criterion_09_property_suites():
    dd42, dd53 = DegreeDistribution.regular(4, 2), DegreeDistribution.regular(5, 3)
    irr = DegreeDistribution.from_w(4, {2: 0.4, 3: 0.6})
    with Clock(9, 300) as c:
        # symmetry preserved through both node operations
        for ch in (BINARY_CHANNELS["mse"], BINARY_CHANNELS["hamming"], BINARY_CHANNELS["erasure"]):
            d = prior_density_u(ch)
            for out in (density_vn(d, d), density_cn(d, d), density_cn(density_vn(d, d), d)):
                assert symmetry_residual(out) < 1e-9
        # erasure closure is exact
        a, b = bec(0.3), bec(0.6)
        assert density_vn(a, b).x == 1 - 0.7 * 0.4 and density_cn(a, b).x == 0.3 * 0.6
        # MI versus mean-square degradation bound on paired samples
        mc = mc_de_2k(dd42, TestChannel(MaryHamming(2), 1.0), 1, None, 0.2, 4, 80_000, paired=True, seed=9)
        sq, di, se = degradation_gap(mc.ext, mc.ext_lower)
        assert sq <= (math.log(2) / 2) * di + 3 * se
        # EXIT monotonicity in l and in Ib_pri
        du = prior_density_u(BINARY_CHANNELS["mse"])
        prev_lo = prev_up = -1.0
        for Ib in np.linspace(0, 1, 5):
            lo = de_bstep(dd42, du, float(Ib), 10, "unknown").mi
            up = de_bstep(dd42, du, float(Ib), 10, "sure").mi
            assert np.all(np.diff(lo) >= -1e-9) and np.all(np.diff(up) <= 1e-9)
            assert lo[-1] >= prev_lo - 1e-9 and up[-1] >= prev_up - 1e-9
            prev_lo, prev_up = lo[-1], up[-1]
        # area necessary condition on every dd used above
        for dd in (dd42, dd53, irr):
            for Iu in (0.2, 0.3, 0.45, 0.6):
                assert lower_curve_area(dd, Iu) <= Iu / dd.R + 1e-3
    c.check()


def test_criterion_10_end_to_end_trend():
    ch = TestChannel(MaryErasure(2, 0.7), math.inf)  # Iu = 0.30
    policy = DecimationPolicy("GD", 60, on_contradiction="record")
    dd = DegreeDistribution.regular(4, 2)
    with Clock(10, 600) as c:
        medians = []
        for n in (2000, 8000, 20000):
            s = summarize_trials(run_quantize_trials(dd, n, ch, policy, 20, root=0), ch)
            assert s["aborted"] == 0
            medians.append(s["median_failure_fraction"])
        print(f"median failure fractions: {medians}")
        assert all(b <= a for a, b in zip(medians, medians[1:])), medians
    c.check()
