"""Acceptance checks 1-11.

Each check prints one ``ACCEPTANCE <n> PASS|FAIL`` line (also repeated in the
terminal summary) and fails its test when the criterion is not met.
Run on its own with ``pytest -v -s tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import statistics
import time
from fractions import Fraction
from math import comb

import numpy as np
import pytest

from oracles import (
    NV_COST_AT_11,
    NV_TLDR_COST,
    NV_WCR,
    binomial_lower,
    binomial_upper,
    brute_two_point_sales,
    scarf_atoms,
    scarf_loss,
)
from twopoint.datadriven import Dataset, binomial_tail, solve_saa
from twopoint.experiments import ExperimentConfig, _scale_instance, run_robustness
from twopoint.instancegen import InstanceDescriptor, enumerate_instance_family, resolve, structure_registry
from twopoint.lowerlevel import solve_lower_level, solve_V0
from twopoint.mechanism import MechanismParams, build_two_point, params_from_ratios, tau_max
from twopoint.model import MomentInfo, ProblemData, ScaleIndex
from twopoint.risk import CVaR, Expectation
from twopoint.tldr import TLDRPolicy, evaluate_cost, solve_tldr_dro, worst_case_expected_loss, wcr

RESULTS: dict[int, tuple[bool, str]] = {}
MECHANISMS = ((0.0, 0.0), (0.5, 0.5), (0.5, 1.0), (1.0, 0.5), (1.0, 1.0))
SWEEP_K = (1, 2, 5, 10, 20, 50)


def report(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (ok, detail)
    print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"criterion {n}: {detail}"


def test_01_mechanism_exactness():
    r10 = math.sqrt(10.0)
    tm = tau_max([10.0], [r10])
    d2 = build_two_point([10.0], MechanismParams([r10], (10, 11)), ScaleIndex())
    errs = [abs(tm - 10 / 11), abs(d2.d_l[0] - 0.0), abs(d2.d_h[0] - 11.0), abs(d2.tau - 10 / 11)]
    report(1, max(errs) <= 1e-12, f"tau_max={tm!r} atoms=({float(d2.d_l[0])!r}, {float(d2.d_h[0])!r}) max err {max(errs):.2e}")


def test_02_moment_identities():
    rng = np.random.default_rng(20240602)
    worst_mean = worst_var = 0.0
    neg = 0
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        mu = rng.uniform(0.5, 100.0, n)
        sigma = rng.uniform(0.05, 2.0, n) * mu
        vs = sigma * rng.uniform(0.0, 1.0, n)
        tau = rng.uniform(0.0, 1.0) * tau_max(mu, vs)
        idx = ScaleIndex(float(rng.uniform(1.0, 50.0)), float(rng.uniform(1.0, 2.0 - 1e-9)))
        d2 = build_two_point(mu, MechanismParams(vs, tau), idx)
        neg += int(np.any(d2.d_l < 0))
        worst_mean = max(worst_mean, float(np.max(np.abs(d2.mean() / (idx.k * mu) - 1))))
        target = idx.k**idx.s * vs**2
        live = target > 0
        if np.any(live) and not d2.is_dirac:
            worst_var = max(worst_var, float(np.max(np.abs(d2.variance()[live] / target[live] - 1))))
    ok = worst_mean <= 1e-9 and worst_var <= 1e-9 and neg == 0
    report(2, ok, f"max rel mean err {worst_mean:.2e}, max rel var err {worst_var:.2e}, negative low atoms {neg}")


def test_03_homogeneity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        n_x, n_y = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        A = rng.choice([0.0, 1.0, 2.0], (n_x, n_y))
        A[rng.integers(n_x, size=n_y), np.arange(n_y)] = 1.0
        c = rng.uniform(0.5, 2.0, n_x)
        mu = rng.uniform(1.0, 20.0, n_y)
        pd = ProblemData(c, c[None, :], [rng.uniform(0.3, 2.0) * c @ A @ mu], (A.T @ c) * rng.uniform(1.1, 3.0, n_y), A, np.eye(n_y))
        m = MomentInfo(mu, np.sqrt(mu))
        v1 = solve_V0(pd, m).value
        for k in (2.0, 5.0, 10.0):
            vk = solve_V0(pd, m, ScaleIndex(k)).value
            worst = max(worst, abs(vk - k * v1) / max(abs(k * v1), 1e-12))
    report(3, worst <= 1e-6, f"max rel deviation {worst:.2e} over 20 instances x 3 scales")


def test_04_newsvendor_oracles(newsvendor, nv_moments):
    atoms = build_two_point([10.0], MechanismParams([math.sqrt(10.0)], (10, 11)))
    ll_e = solve_lower_level(newsvendor, atoms, Expectation()).value
    ll_c = solve_lower_level(newsvendor, atoms, CVaR(0.5)).value
    v0 = solve_V0(newsvendor, nv_moments).value
    tl = solve_tldr_dro(newsvendor, nv_moments).cost
    c11 = evaluate_cost(newsvendor, [11.0], TLDRPolicy([11.0], [[1.0]]), nv_moments).value
    ratio = wcr(c11, tl)
    checks = [
        abs(ll_e + 19) <= 1e-6, abs(ll_c + 16) <= 1e-6, abs(v0 + 20) <= 1e-6,
        abs(tl - NV_TLDR_COST) <= 1e-4 and abs(tl + 15.5279) <= 1e-4,
        abs(c11 - NV_COST_AT_11) <= 1e-4 and abs(c11 + 15.5251) <= 1e-4,
        abs(ratio - NV_WCR) <= 1e-4 and abs(ratio - 0.99982) <= 1e-4,
    ]
    report(4, all(checks), f"LL={ll_e:.6f}/{ll_c:.6f} V0={v0:.6f} TLDR={tl:.6f} C(11)={c11:.6f} WCR={ratio:.6f}")


def test_05_scarf_oracle():
    rng = np.random.default_rng(5)
    worst_match = worst_grid = 0.0
    above = 0
    n_match = 0
    for _ in range(200):
        p, mu = rng.uniform(0.5, 5.0), rng.uniform(1.0, 50.0)
        sigma = rng.uniform(0.1, 1.5) * mu
        v = rng.uniform(0.0, 3.0) * mu
        got = worst_case_expected_loss([v], [p], MomentInfo([mu], [sigma]))
        closed = scarf_loss(p, v, mu, sigma**2)
        if scarf_atoms(v, mu, sigma**2)[0] >= 0:
            n_match += 1
            worst_match = max(worst_match, abs(got - closed))
        elif got > closed + 1e-6:
            above += 1
        worst_grid = max(worst_grid, abs(got + p * brute_two_point_sales(v, mu, sigma**2)))
    ok = worst_match <= 1e-6 and above == 0 and worst_grid <= 1e-3
    report(5, ok, f"{n_match} draws with nonneg atoms, max err {worst_match:.2e}; above closed form {above}; grid err {worst_grid:.2e}")


def test_06_sandwich_and_bounds():
    insts = enumerate_instance_family()[::10]
    assert len(insts) == 64
    cfg = ExperimentConfig(k_list=[1, 5, 25])
    sandwich_bad = bound_bad = cells = 0
    worst = -math.inf
    for inst in insts:
        rows, skips = _scale_instance((inst, cfg))
        assert not skips
        for r in rows:
            cells += 1
            tol = 1e-6 * max(1.0, abs(r["V0"]))
            if not (r["V0"] <= r["Vbar"] + tol and r["Vbar"] <= r["C_mech"] + tol):
                sandwich_bad += 1
            gap = r["C_mech"] - r["V0"]
            worst = max(worst, gap - r["loss_bound"] - r["value_bound"])
            if gap > r["loss_bound"] + r["value_bound"] + tol:
                bound_bad += 1
    ok = sandwich_bad == 0 and bound_bad == 0
    report(6, ok, f"{cells} cells: sandwich violations {sandwich_bad}, bound violations {bound_bad}, max (C-V0)-bound {worst:.3g}")


@pytest.fixture(scope="module")
def desk_sweep():
    """Scale sweep over the small-budget family and the large-budget family at eta = 0.5."""
    t0 = time.perf_counter()
    small = ExperimentConfig(instances={"budgets": [0.5]}, k_list=[*SWEEP_K, 25])
    large = ExperimentConfig(instances={"budgets": [2.0]}, k_list=list(SWEEP_K), mechanisms=[[0.5, 0.5], [1.0, 0.5]])
    out = {}
    for name, cfg in (("small", small), ("large", large)):
        rows = []
        for inst in cfg.select_instances():
            rows.extend(_scale_instance((inst, cfg))[0])
        out[name] = rows
    out["seconds"] = time.perf_counter() - t0
    return out


def _averages(rows):
    groups: dict = {}
    for r in rows:
        if math.isfinite(r["wcr"]):
            groups.setdefault((r["kappa"], r["eta"], r["k"]), []).append(r["wcr"])
    return {key: (statistics.fmean(v), len(v)) for key, v in groups.items()}


def test_07_desk_scale_reproduction(desk_sweep):
    small = [r for r in desk_sweep["small"] if r["k"] in SWEEP_K]
    large = desk_sweep["large"]
    n_inst = len({r["instance_id"] for r in small})
    lines, ok = [], n_inst >= 40
    for label, rows, floor in (("small", small, 0.96), ("large", large, 0.90)):
        for (kappa, eta, k), (avg, n) in sorted(_averages(rows).items()):
            if avg <= floor:
                ok = False
                lines.append(f"{label} ({kappa:g},{eta:g}) k={k:g} avg={avg:.4f} n={n}")
    every = small + large + [r for r in desk_sweep["small"] if r["k"] == 25]
    top = max(r["wcr"] for r in every if math.isfinite(r["wcr"]))
    ok = ok and top <= 1 + 1e-9
    detail = f"{n_inst} instances, max WCR-1 {top - 1:.2e}, {desk_sweep['seconds']:.0f}s"
    if lines:
        detail += "; below floor: " + "; ".join(lines)
    report(7, ok, detail)


def test_08_convergence_diagnostic(desk_sweep):
    cells: dict = {}
    for r in desk_sweep["small"]:
        cells.setdefault((r["instance_id"], r["kappa"], r["eta"]), {})[r["k"]] = 1 - r["C_mech"] / r["V0"]
    bad = [key for key, g in cells.items() if g[25.0] > 0.5 * g[1.0] + 1e-6]
    worst = max(g[25.0] - 0.5 * g[1.0] for g in cells.values())
    detail = f"{len(cells)} instance-mechanism pairs, violations {len(bad)}, max gap(25)-gap(1)/2 {worst:.3g}"
    if bad:
        detail += f"; first {bad[:3]}"
    report(8, not bad, detail)


def test_09_sign_test_exactness():
    ok = binomial_tail(10, 8, "plus") == Fraction(56, 1024)
    ok = ok and Fraction(comb(10, 8) + comb(10, 9) + comb(10, 10), 2**10) == Fraction(56, 1024)
    mismatches = 0
    for n in range(1, 21):
        for k in range(n + 1):
            mismatches += binomial_tail(n, k, "plus") != binomial_upper(n, k)
            mismatches += binomial_tail(n, k, "minus") != binomial_lower(n, k)
    report(9, ok and mismatches == 0, f"p(10, 8, plus) = {binomial_tail(10, 8, 'plus')}, enumeration mismatches {mismatches}")


def _one_per_structure():
    out = []
    for i, sid in enumerate(structure_registry()):
        A = structure_registry([sid])[sid]
        out.append(resolve(InstanceDescriptor(sid, 1 + i % 2, 1 + i % 4, 1 + i % 5, (0.5, 2.0)[i % 2]), A).instance_id)
    return out


def test_10_pipeline_determinism(tmp_path, newsvendor):
    t0 = time.perf_counter()
    base = dict(
        instance_ids=_one_per_structure(), rho_tr=[0.0, 1.0], rho_te=[0.0, 1.0], shifts=[-1.0, 0.0, 1.0], n_tr=[100],
        risk={"kind": "cvar", "beta": 0.05},
    )
    files = {}
    for name in ("a", "b"):
        res = run_robustness(ExperimentConfig(out=str(tmp_path / name), **base))
        files[name] = [(tmp_path / name / f).read_bytes() for f in ("robustness.csv", "sign_tests.csv")]
    identical = files["a"] == files["b"]
    n_inst = len({r["instance_id"] for r in res.rows})
    # one-sample SAA is the deterministic problem at that sample
    rng = np.random.default_rng(10)
    worst = 0.0
    for inst in enumerate_instance_family()[::80]:
        d = rng.uniform(0.5, 1.5, inst.problem.p.size) * inst.moments.mu
        saa = solve_saa(inst.problem, Dataset(d[None, :]), Expectation())[1]
        v0 = solve_V0(inst.problem, MomentInfo(d, np.zeros_like(d))).value
        worst = max(worst, abs(saa - v0))
    ok = identical and n_inst == 8 and worst <= 1e-7
    report(10, ok, f"{n_inst} instances, {len(res.rows)} rows, byte-identical {identical}, max |SAA-V0| {worst:.2e}, "
                   f"{time.perf_counter() - t0:.0f}s")


def _timing(N: int, reps: int = 5):
    inst = resolve(InstanceDescriptor(f"identity{N}", 1, 3, 5, 0.5), np.eye(N))
    pd, m = inst.problem, inst.moments
    d2 = build_two_point(m.mu, params_from_ratios(m.mu, m.sigma, 1.0, 1.0))
    ll, tl = [], []
    for _ in range(reps):
        t = time.perf_counter()
        solve_lower_level(pd, d2, Expectation())
        ll.append(time.perf_counter() - t)
        t = time.perf_counter()
        solve_tldr_dro(pd, m, refine=False)
        tl.append(time.perf_counter() - t)
    return statistics.median(ll), statistics.median(tl)


def test_11_timing_direction():
    res = {N: _timing(N) for N in (100, 200)}
    ok = all(ll < tl for ll, tl in res.values())
    ll5, tl5 = _timing(500, reps=1)
    detail = "; ".join(f"N={N}: LP {ll * 1e3:.1f}ms vs SOCP {tl * 1e3:.1f}ms" for N, (ll, tl) in res.items())
    report(11, ok, detail + f"; N=500 ratio {tl5 / ll5:.1f}x (reported only)")
