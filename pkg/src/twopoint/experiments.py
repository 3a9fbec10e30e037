"""Scale-sweep and robustness experiments with deterministic CSV output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .datadriven import (
    cross_validate,
    derive_seed,
    empirical_moments,
    evaluate_J,
    generate_truncated_mvn,
    robustness_index,
    sign_test,
    solve_saa,
)
from .errors import CapabilityError
from .instancegen import Instance, enumerate_instance_family
from .lowerlevel import solve_lower_level, solve_V0
from .mechanism import build_two_point, params_from_ratios
from .model import ScaleIndex
from .risk import Expectation, risk_from_dict, standard_coefficient
from .tldr import (
    GapParams,
    TLDRPolicy,
    analytic_gap_bounds,
    construct_tldr_from_recourse,
    evaluate_cost,
    fit_tldr,
    is_identity,
    solve_tldr_dro,
    ubar_at_high_atom,
    wcr,
)

SCALE_COLUMNS = (
    "instance_id", "budget_ratio", "kappa", "eta", "k", "V0", "Vbar", "C_mech", "C_tldr", "wcr",
    "loss_bound", "value_bound", "solve_ms_mech", "solve_ms_tldr", "seed", "config_hash",
)
TIMING_COLUMNS = ("solve_ms_mech", "solve_ms_tldr")
ROBUST_COLUMNS = (
    "instance_id", "budget_ratio", "rho_tr", "rho_te", "shift", "n_tr", "seed", "kappa_star", "eta_star",
    "J_mech", "J_saa", "J_star", "robustness_index", "config_hash",
)
SIGN_COLUMNS = ("budget_ratio", "n_tr", "shift", "n", "k_neg", "p_plus", "p_minus")
PAPER_MECHANISMS = ((0.0, 0.0), (0.5, 0.5), (0.5, 1.0), (1.0, 0.5), (1.0, 1.0))
# cost differences below this fraction of |J*| are solver noise and count as ties
TIE_RTOL = 1e-9


def paired_difference(J_mech: float, J_saa: float, J_star: float) -> float:
    diff = J_mech - J_saa
    return 0.0 if abs(diff) <= TIE_RTOL * max(1.0, abs(J_star)) else diff


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    instances: dict = field(default_factory=dict)  # filter passed to enumerate_instance_family
    instance_ids: list | None = None
    k_list: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 50])
    s: float = 1.0
    mechanisms: list = field(default_factory=lambda: [list(m) for m in PAPER_MECHANISMS])
    risk: dict = field(default_factory=lambda: {"kind": "expectation"})
    rho_tr: list = field(default_factory=lambda: [0.0, 1.0])
    rho_te: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    shifts: list | None = None
    n_tr: list = field(default_factory=lambda: [100, 200, 400])
    n_te: int = 1000
    folds: int = 5
    cv_grid: list | None = None
    truncation: str = "clamp"
    out: str = "results"
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        if any(k < 1 for k in cfg.k_list):
            raise ValueError("every k must be >= 1")
        if any(not (0 <= a <= 1 and 0 <= b <= 1) for a, b in cfg.mechanisms):
            raise ValueError("mechanisms must lie in [0, 1]^2")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def hash(self) -> str:
        d = asdict(self)
        for k in ("out", "jobs"):  # do not affect results
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def select_instances(self) -> list[Instance]:
        insts = enumerate_instance_family(self.instances)
        if self.instance_ids is not None:
            want = set(self.instance_ids)
            insts = [i for i in insts if i.instance_id in want]
        return insts


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


# ---------------------------------------------------------------- scale sweep


def _scale_instance(task):
    inst, cfg = task
    pd, m = inst.problem, inst.moments
    r = risk_from_dict(cfg.risk)
    alpha = standard_coefficient(r)
    rows, skips = [], []
    chash = cfg.hash()
    seed = derive_seed(cfg.master_seed, inst.instance_id, "scale")
    base = {"instance_id": inst.instance_id, "budget_ratio": inst.descriptor.budget_variant, "seed": seed, "config_hash": chash}
    if not is_identity(pd.H) or not isinstance(r, Expectation):
        skips.append({**base, "reason": "TLDR-DRO benchmark needs H = I and expectation risk"})
        return rows, skips
    for k in cfg.k_list:
        idx = ScaleIndex(float(k), cfg.s)
        v0 = solve_V0(pd, m, idx)
        U_exp = construct_tldr_from_recourse(v0.y_l, idx.k * m.mu, pd.H).U
        t0 = time.perf_counter()
        tl = solve_tldr_dro(pd, m, idx)
        ms_tldr = 1e3 * (time.perf_counter() - t0)
        for kappa, eta in cfg.mechanisms:
            params = params_from_ratios(m.mu, m.sigma, kappa, eta)
            d2 = build_two_point(m.mu, params, idx)
            t0 = time.perf_counter()
            ll = solve_lower_level(pd, d2, r, idx)
            ms_mech = 1e3 * (time.perf_counter() - t0)
            fit = fit_tldr(pd, ll.x, d2, r, idx)
            # (v, I) is optimal as well when H = I; cost it with the identity slope
            pol = TLDRPolicy(fit.policy.v, np.eye(pd.H.shape[0]))
            C = evaluate_cost(pd, ll.x, pol, m, idx, r).value
            Ubar = None if d2.is_dirac else ubar_at_high_atom(pd, ll.x, d2)
            gp = GapParams(alpha, idx.k, idx.s, d2.tau, params.varsigma, m.sigma, pd.p)
            gb = analytic_gap_bounds(fit.policy.U, U_exp, gp, Ubar)
            rows.append({
                **base, "kappa": float(kappa), "eta": float(eta), "k": float(k), "V0": v0.value, "Vbar": fit.Vbar,
                "C_mech": C, "C_tldr": tl.cost, "wcr": wcr(C, tl.cost), "loss_bound": gb.loss_bound,
                "value_bound": gb.value_bound, "solve_ms_mech": ms_mech, "solve_ms_tldr": ms_tldr,
            })
    return rows, skips


def summarize_wcr(rows) -> list[dict]:
    """Equal-weight average WCR per (budget, mechanism, k), skipping undefined ratios."""
    groups: dict = {}
    for r in rows:
        key = (r["budget_ratio"], r["kappa"], r["eta"], r["k"])
        groups.setdefault(key, []).append(r["wcr"])
    out = []
    for key in sorted(groups):
        vals = np.array(groups[key], dtype=float)
        ok = vals[np.isfinite(vals)]
        out.append({
            "budget_ratio": key[0], "kappa": key[1], "eta": key[2], "k": key[3],
            "avg_wcr": float(ok.mean()) if ok.size else float("nan"), "n": int(ok.size),
            "n_undefined": int(vals.size - ok.size),
        })
    return out


@dataclass
class SweepResult:
    rows: list
    summary: list
    skips: list


def run_scale_sweep(cfg: ExperimentConfig, write: bool = True) -> SweepResult:
    insts = cfg.select_instances()
    results = _map(_scale_instance, [(i, cfg) for i in insts], cfg.jobs)
    rows = [r for rs, _ in results for r in rs]
    skips = [s for _, ss in results for s in ss]
    rows.sort(key=lambda r: (r["instance_id"], r["k"], r["kappa"], r["eta"]))
    summary = summarize_wcr(rows)
    if write:
        out = Path(cfg.out)
        write_csv(out / "scale_sweep.csv", SCALE_COLUMNS, rows)
        write_csv(out / "scale_summary.csv", ("budget_ratio", "kappa", "eta", "k", "avg_wcr", "n", "n_undefined"), summary)
        if skips:
            write_csv(out / "scale_skipped.csv", ("instance_id", "budget_ratio", "seed", "config_hash", "reason"), skips)
    return SweepResult(rows, summary, skips)


# ------------------------------------------------------------ robustness runs


def _pairs(cfg):
    out = []
    for rt in cfg.rho_tr:
        for re in cfg.rho_te:
            shift = round(re - rt, 10)
            if cfg.shifts is None or any(abs(shift - s) < 1e-9 for s in cfg.shifts):
                out.append((float(rt), float(re), shift))
    return out


def _robust_instance(task):
    inst, cfg = task
    pd, m = inst.problem, inst.moments
    r = risk_from_dict(cfg.risk)
    chash = cfg.hash()
    iid = inst.instance_id
    pairs = _pairs(cfg)
    tests, jstar = {}, {}
    rows = []
    for n_tr in cfg.n_tr:
        for rt in sorted({p[0] for p in pairs}):
            seed = derive_seed(cfg.master_seed, iid, "train", rt, n_tr)
            D_tr = generate_truncated_mvn(m.mu, m.sigma, rt, n_tr, seed, cfg.truncation)
            grid_kw = {"grid": tuple(cfg.cv_grid)} if cfg.cv_grid is not None else {}
            cv = cross_validate(pd, D_tr, r, cfg.folds, derive_seed(cfg.master_seed, iid, "cv", rt, n_tr), **grid_kw)
            mt = empirical_moments(D_tr)
            d2 = build_two_point(mt.mu, params_from_ratios(mt.mu, mt.sigma, cv.kappa_star, cv.eta_star))
            x_mech = solve_lower_level(pd, d2, r).x
            x_saa, _ = solve_saa(pd, D_tr, r)
            for rt2, re, shift in pairs:
                if rt2 != rt:
                    continue
                if re not in tests:
                    D_te = generate_truncated_mvn(
                        m.mu, m.sigma, re, cfg.n_te, derive_seed(cfg.master_seed, iid, "test", re), cfg.truncation
                    )
                    tests[re] = D_te
                    jstar[re] = solve_saa(pd, D_te, r)[1]
                D_te = tests[re]
                J_mech = evaluate_J(pd, x_mech, D_te, r)
                J_saa = evaluate_J(pd, x_saa, D_te, r)
                rows.append({
                    "instance_id": iid, "budget_ratio": inst.descriptor.budget_variant, "rho_tr": rt, "rho_te": re,
                    "shift": shift, "n_tr": int(n_tr), "seed": seed, "kappa_star": cv.kappa_star,
                    "eta_star": cv.eta_star, "J_mech": J_mech, "J_saa": J_saa, "J_star": jstar[re],
                    "robustness_index": robustness_index(J_mech, J_saa, jstar[re]), "config_hash": chash,
                })
    return rows


def sign_summary(rows) -> list[dict]:
    """Sign tests per (budget, n_tr, shift); ties are dropped, all-tie cells report ``nan``."""
    groups: dict = {}
    for r in rows:
        diff = paired_difference(r["J_mech"], r["J_saa"], r["J_star"])
        groups.setdefault((r["budget_ratio"], r["n_tr"], r["shift"]), []).append(diff)
    out = []
    for key in sorted(groups):
        plus = sign_test(groups[key], "plus")
        minus = sign_test(groups[key], "minus")
        out.append({
            "budget_ratio": key[0], "n_tr": key[1], "shift": key[2], "n": plus.n, "k_neg": plus.k_neg,
            "p_plus": plus.formatted(), "p_minus": minus.formatted(),
        })
    return out


@dataclass
class RobustnessResult:
    rows: list
    signs: list
    undefined: int


def run_robustness(cfg: ExperimentConfig, write: bool = True) -> RobustnessResult:
    insts = cfg.select_instances()
    if not insts:
        raise CapabilityError("instance filter selects nothing")
    rows = [r for rs in _map(_robust_instance, [(i, cfg) for i in insts], cfg.jobs) for r in rs]
    rows.sort(key=lambda r: (r["instance_id"], r["n_tr"], r["rho_tr"], r["rho_te"]))
    undefined = sum(1 for r in rows if not np.isfinite(r["robustness_index"]))
    signs = sign_summary(rows)
    if write:
        out = Path(cfg.out)
        write_csv(out / "robustness.csv", ROBUST_COLUMNS, rows)
        write_csv(out / "sign_tests.csv", SIGN_COLUMNS, signs)
    return RobustnessResult(rows, signs, undefined)
