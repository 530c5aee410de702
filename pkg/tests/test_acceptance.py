"""The eleven acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict that the terminal summary prints.
"""
import subprocess
import sys
import warnings
from pathlib import Path

import numpy as np

from oracles import goodd_grid
from sandwich_pricing.bounds import (GoodDeal, c_operator, check_m_stability, composition_defect, delta_table,
                                     goodd_closed_form, goodd_exact, is_dynamic_ngd_measure)
from sandwich_pricing.extension import SandwichViolation, full_extend, recover_density
from sandwich_pricing.ftap import build_measure, constraint_residuals, lp_feasibility
from sandwich_pricing.generators import random_instance, random_space
from sandwich_pricing.operators import PriceSystem
from sandwich_pricing.prob_space import FilteredSpace, cond_expect

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "binomial.json"
FAMILIES = ("density", "measure_families", "good_deal")


def _claim(space, rng, t, scale=2.0):
    return rng.uniform(0, scale, space.n_cells(t))[space.labels[t]]


def test_01_conditional_calculus(criterion):
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        space = random_space(rng, n_max=32, K_max=4)
        assert space.n_atoms <= 32
        K = space.K
        X, Y = rng.normal(size=space.n_atoms), rng.normal(size=space.n_atoms)
        a, b = rng.normal(size=2)
        s, t = sorted(rng.integers(0, K + 1, size=2))
        tower = cond_expect(space, cond_expect(space, X, t), s) - cond_expect(space, X, s)
        lin = cond_expect(space, a * X + b * Y, s) - a * cond_expect(space, X, s) - b * cond_expect(space, Y, s)
        Z = rng.normal(size=space.n_cells(s))[space.labels[s]]
        pull = cond_expect(space, Z * X, s) - Z * cond_expect(space, X, s)
        pos = min(0.0, float(cond_expect(space, np.abs(X), t).min()))
        worst = max(worst, *(float(np.max(np.abs(v))) for v in (tower, lin, pull)), -pos)
    criterion(1, worst <= 1e-10, f"200 triples, worst {worst:.2e}")
    assert worst <= 1e-10


def test_02_sub_superlinearity(criterion):
    worst = -np.inf
    for fam in FAMILIES:
        for k in range(200):
            inst = random_instance(k % 25, fam)
            space = inst.space
            rng = np.random.default_rng(1000 + k)
            s, t = sorted(rng.choice(space.K + 1, size=2, replace=False))
            X, Y = _claim(space, rng, t), _claim(space, rng, t)
            b = inst.bounds
            sub = b.eval_M(s, t, X + Y) - b.eval_M(s, t, X) - b.eval_M(s, t, Y)
            sup = b.eval_m(s, t, X) + b.eval_m(s, t, Y) - b.eval_m(s, t, X + Y)
            worst = max(worst, float(sub.max()), float(sup.max()))
    criterion(2, worst <= 1e-9, f"3 families x 200 draws, worst excess {worst:.2e}")
    assert worst <= 1e-9


def test_03_delta_calculus(criterion):
    rng = np.random.default_rng(3)
    worst_comp = 0.0
    for K in range(1, 7):
        for _ in range(10):
            times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, K))])
            worst_comp = max(worst_comp, composition_defect(delta_table(float(rng.uniform(1.01, 2.0)), times)))
    worst_tc = 0.0
    for seed in range(50):
        r_ = np.random.default_rng(seed)
        space = random_space(r_, n_max=16, K_max=4)
        gamma = float(r_.uniform(0.2, 2.0))
        mult = lambda a, b: gamma ** (space.times[b] - space.times[a])
        r, s, t = sorted(r_.integers(0, space.K + 1, size=3))
        X = r_.normal(size=space.n_atoms)
        lhs = c_operator(space, r, s, mult(r, s), c_operator(space, s, t, mult(s, t), X))
        worst_tc = max(worst_tc, float(np.max(np.abs(lhs - c_operator(space, r, t, mult(r, t), X)))))
    ok = worst_comp <= 1e-12 and worst_tc <= 1e-10
    criterion(3, ok, f"composition defect {worst_comp:.2e}, c-operator consistency {worst_tc:.2e}")
    assert worst_comp <= 1e-12
    assert worst_tc <= 1e-10


def _one_period(n, rng):
    atoms = [f"w{i}" for i in range(n)]
    return FilteredSpace(atoms, rng.dirichlet(np.full(n, 2.0)), [0.0, 1.0], [[atoms], [[a] for a in atoms]])


def test_04_good_deal_exactness(criterion):
    grid_err = dom = eq = 0.0
    for seed in range(50):
        rng = np.random.default_rng(400 + seed)
        n = int(rng.integers(2, 5))
        space = _one_period(n, rng)
        X = rng.uniform(0, 2, n)
        delta = float(rng.uniform(0.05, 1.5))
        ref_lo, ref_hi = goodd_grid(space.probs, X, delta, 1e-3)
        for direction, ref in (("sup", ref_hi), ("inf", ref_lo)):
            val, dens = goodd_exact(space, 0, 1, X, delta, direction, return_optimizer=True)
            grid_err = max(grid_err, abs(float(val[0]) - ref))
            cf = float(goodd_closed_form(space, 0, X, delta, direction)[0])
            gap = float(val[0]) - cf if direction == "sup" else cf - float(val[0])
            dom = max(dom, gap)
            if dens.min() > 1e-12:
                eq = max(eq, abs(float(val[0]) - cf))
    ok = grid_err <= 1e-4 and dom <= 1e-10 and eq <= 1e-8
    criterion(4, ok, f"grid {grid_err:.2e}, dominance {dom:.2e}, equality {eq:.2e}")
    assert grid_err <= 1e-4
    assert dom <= 1e-10
    assert eq <= 1e-8


def test_05_weak_time_consistency(criterion):
    worst = -np.inf
    for k in range(100):
        inst = random_instance(k % 30, "good_deal", K_max=4)
        space, b = inst.space, inst.bounds
        rng = np.random.default_rng(500 + k)
        r, s, t = sorted(rng.integers(0, space.K + 1, size=3))
        X = _claim(space, rng, t)
        up = b.eval_M(r, s, b.eval_M(s, t, X)) - b.eval_M(r, t, X)
        lo = b.eval_m(r, t, X) - b.eval_m(r, s, b.eval_m(s, t, X))
        worst = max(worst, float(up.max()), float(lo.max()))
    criterion(5, worst <= 1e-9, f"100 draws, worst excess {worst:.2e}")
    assert worst <= 1e-9


def test_06_extension(criterion):
    worst = {"agreement": 0.0, "bound_gap": 0.0, "recovery": 0.0}
    for k in range(50):
        inst = random_instance(k, FAMILIES[k % 3])
        space, K = inst.space, inst.space.K
        s = int(np.random.default_rng(k).integers(0, K))
        res = full_extend(space, s, K, inst.ps.pair(s, K), inst.bounds)
        worst["agreement"] = max(worst["agreement"], res.checks["agreement"])
        worst["bound_gap"] = max(worst["bound_gap"], res.checks["bound_gap"])
        f = recover_density(space, s, K, res).f
        for j in range(space.n_cells(K)):
            e = space.indicator(K, j)
            worst["recovery"] = max(worst["recovery"],
                                    float(np.max(np.abs(cond_expect(space, f * e, s) - res.eval(e)))))
    raised = 0
    for k in range(20):
        inst = random_instance(100 + k, FAMILIES[k % 3], infeasible=True)
        s, t = inst.perturbed_pair
        try:
            full_extend(inst.space, s, t, inst.ps.pair(s, t), inst.bounds)
        except SandwichViolation as exc:
            raised += exc.witness is not None or exc.certificate is not None
    ok = (worst["agreement"] <= 1e-9 and worst["bound_gap"] <= 1e-8 and worst["recovery"] <= 1e-9
          and raised == 20)
    criterion(6, ok, f"agreement {worst['agreement']:.2e}, bound gap {worst['bound_gap']:.2e}, "
                     f"recovery {worst['recovery']:.2e}, violations raised {raised}/20")
    assert worst["agreement"] <= 1e-9
    assert worst["bound_gap"] <= 1e-8
    assert worst["recovery"] <= 1e-9
    assert raised == 20


def _binomial(delta_0T):
    space = FilteredSpace(["up", "down"], [0.5, 0.5], [0, 1], [[["up", "down"]], [["up"], ["down"]]])
    ps = PriceSystem(space, {1: [[1, 1], [2, 0.5]]}, {(0, 1): [[1, 1], [1, 1]]})
    return ps, GoodDeal.from_horizon_delta(space, delta_0T)


def test_07_binomial_fixture(criterion):
    target = np.array([2 / 3, 4 / 3])
    ps, b = _binomial(0.5)
    pm = build_measure(ps, b)
    cert = lp_feasibility(ps, b)
    err = max(float(np.max(np.abs(pm.f.f - target))), float(np.max(np.abs(cert.measure.f - target))))
    ps, b = _binomial(1 / 3 + 1e-6)
    above = lp_feasibility(ps, b).feasible and build_measure(ps, b) is not None
    ps, b = _binomial(1 / 3 - 1e-3)
    below_cert = lp_feasibility(ps, b)
    try:
        build_measure(ps, b)
        below_witness = None
    except SandwichViolation as exc:
        below_witness = exc.witness
    ok = (err <= 1e-12 and above and not below_cert.feasible and below_cert.farkas is not None
          and below_witness is not None)
    criterion(7, ok, f"density error {err:.1e}, feasible above threshold {above}, "
                     f"infeasible below with witness {below_witness is not None}")
    assert err <= 1e-12
    assert above
    assert not below_cert.feasible and below_cert.farkas is not None
    assert below_witness is not None


def test_08_oracle_agreement(criterion):
    disagree, worst = [], 0.0
    for k in range(50):
        fam = FAMILIES[k % 3]
        inst = random_instance(200 + k, fam, infeasible=(k % 4 == 3))
        assert inst.space.n_atoms <= 16 and inst.space.K <= 4
        cert = lp_feasibility(inst.ps, inst.bounds)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            try:
                pm = build_measure(inst.ps, inst.bounds)
            except SandwichViolation:
                pm = None
        if (pm is not None) != cert.feasible:
            disagree.append((fam, 200 + k))
        if pm is not None:
            worst = max(worst, max(constraint_residuals(inst.ps, inst.bounds, pm.f).values()))
    ok = not disagree and worst <= 1e-8
    criterion(8, ok, f"50 instances, disagreements {disagree}, worst residual {worst:.2e}")
    assert not disagree
    assert worst <= 1e-8


def test_09_dynamic_ngd(criterion):
    failures, checked = [], 0
    for k in range(20):
        inst = random_instance(300 + k, "good_deal")
        pm = build_measure(inst.ps, inst.bounds)
        rep = is_dynamic_ngd_measure(pm.f, inst.bounds.table, inst.space, tol=1e-10)
        checked += 1
        if not rep.passes:
            failures.append(300 + k)
    criterion(9, not failures, f"{checked} good-deal measures, failures {failures}")
    assert not failures


def test_10_m_stability(criterion):
    checked, worst, seed = 0, -np.inf, 0
    while checked < 100:
        rng = np.random.default_rng(seed)
        space = random_space(rng, n_max=16, K_max=4)
        seed += 1
        if space.K < 2:
            continue
        r, s, t = sorted(rng.choice(space.K + 1, size=3, replace=False))
        fam = GoodDeal(space, float(rng.uniform(1.05, 2.5)))
        rep = check_m_stability(space, fam, tol=1e-10, r=int(r), s=int(s), t=int(t), n_samples=10, seed=seed)
        checked += rep.checked
        worst = max(worst, rep.worst_slack)
    criterion(10, worst <= 1e-10, f"{checked} product pairs, worst budget excess {worst:.2e}")
    assert worst <= 1e-10


def test_11_cli_determinism(criterion, tmp_path):
    cmd = [sys.executable, "-m", "sandwich_pricing", "--scenario", str(SCENARIO), "--command", "report", "--csv"]
    runs = [subprocess.run(cmd, capture_output=True, check=False) for _ in range(2)]
    subprocess.run(cmd[:-1] + ["--out", str(tmp_path)], capture_output=True, check=False)
    written = (tmp_path / "report.csv").read_bytes()
    same = runs[0].stdout == runs[1].stdout == written
    ok = same and runs[0].returncode == 0 and runs[0].stdout.startswith(b"s,t,claim_id,quantity,cell_id,value\n")
    criterion(11, ok, f"2 stdout runs and 1 file run byte-identical: {same}")
    assert ok
