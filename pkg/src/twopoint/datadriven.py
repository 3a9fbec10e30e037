"""Synthetic demand data, the SAA baseline, cross-validated mechanism tuning and sign tests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from decimal import Context, Decimal
from fractions import Fraction

import numpy as np

from .errors import CapabilityError, DataError, DomainError
from .lowerlevel import ScenarioTemplate, scenario_program, second_stage_batch
from . import conic
from .mechanism import build_two_point, params_from_ratios
from .model import MomentInfo, ProblemData
from .risk import CVaR, DiscreteLossDistribution, Expectation, RiskSpec, empirical_cvar, evaluate_risk
from .tldr import TLDRFitTemplate, TLDRPolicy, fit_tldr, is_identity

DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(21))


def derive_seed(master_seed: int, *keys) -> int:
    """Stable 64-bit seed for an experiment cell, independent of execution order."""
    text = json.dumps([int(master_seed), *[str(k) for k in keys]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        S = np.atleast_2d(np.array(self.samples, dtype=float))
        if S.shape[0] < 1:
            raise DataError("dataset needs at least one sample")
        if np.any(S < 0) or not np.all(np.isfinite(S)):
            raise DataError("samples must be finite and nonnegative")
        S.setflags(write=False)
        object.__setattr__(self, "samples", S)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.samples[np.asarray(rows)], dict(self.provenance))


def correlation_covariance(sigma, rho: float) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    S = rho * np.outer(sigma, sigma)
    np.fill_diagonal(S, sigma**2)
    return S


def generate_truncated_mvn(mu, sigma, rho: float, n: int, seed: int, mode: str = "clamp") -> Dataset:
    """Normal samples with ``Sigma_ij = rho sigma_i sigma_j`` cut to the nonnegative orthant.

    ``mode="clamp"`` sets negative coordinates to zero; ``mode="reject"`` redraws
    rows until ``n`` nonnegative rows are collected.
    """
    mu = np.asarray(mu, dtype=float)
    S = correlation_covariance(sigma, rho)
    w, V = np.linalg.eigh(S)
    if w.size and w.min() < -1e-10 * max(1.0, float(np.abs(w).max())):
        raise DomainError(f"covariance is not PSD (min eigenvalue {w.min():.3g})")
    root = (V * np.sqrt(np.maximum(w, 0.0))) @ V.T
    rng = rng_for(seed)
    if mode == "clamp":
        X = np.maximum(rng.standard_normal((n, mu.size)) @ root + mu, 0.0)
    elif mode == "reject":
        rows, have, tries = [], 0, 0
        while have < n:
            Z = rng.standard_normal((max(n, 64), mu.size)) @ root + mu
            Z = Z[np.all(Z >= 0, axis=1)]
            rows.append(Z)
            have += Z.shape[0]
            tries += 1
            if tries > 1000:
                raise DataError("rejection sampling accepts too few rows")
        X = np.concatenate(rows)[:n]
    else:
        raise DomainError(f"unknown truncation mode {mode!r}")
    return Dataset(X, {"kind": "truncated_mvn", "rho": rho, "n": n, "seed": int(seed), "mode": mode})


def empirical_moments(d: Dataset) -> MomentInfo:
    return MomentInfo(d.samples.mean(axis=0), d.samples.std(axis=0, ddof=0))


def _require_saa(r: RiskSpec) -> None:
    if not isinstance(r, (Expectation, CVaR)):
        raise CapabilityError(f"SAA supports expectation and CVaR, got {r!r}")


def solve_saa(pd: ProblemData, d: Dataset, r: RiskSpec = CVaR(0.05)):
    """Sample-average problem over all rows of ``d``; returns ``(x, value)``."""
    _require_saa(r)
    prob = scenario_program(pd, pd.b, d.samples, np.full(d.n, 1.0 / d.n), r)
    res = conic.solve_or_raise(prob, what="SAA program")
    return np.maximum(res.value(prob.block("x").index), 0.0), res.objective


def sample_risk(r: RiskSpec, losses) -> float:
    """Risk of equally weighted sample losses, using the ceil(beta n) rule for CVaR."""
    if isinstance(r, CVaR):
        return empirical_cvar(losses, r.beta)
    return evaluate_risk(r, DiscreteLossDistribution.empirical(losses))


def evaluate_J(pd: ProblemData, x, d: Dataset, r: RiskSpec = CVaR(0.05)) -> float:
    losses, _ = second_stage_batch(pd, x, d.samples)
    return float(pd.c @ np.asarray(x, dtype=float)) + sample_risk(r, losses)


@dataclass(frozen=True, eq=False)
class CVResult:
    kappa_star: float
    eta_star: float
    grid: tuple
    costs: np.ndarray  # costs[i, j] for (grid[i], grid[j]) as (kappa, eta)
    folds: tuple

    def to_dict(self) -> dict:
        return {
            "kappa_star": self.kappa_star,
            "eta_star": self.eta_star,
            "grid": list(self.grid),
            "costs": self.costs.tolist(),
            "folds": [list(map(int, f)) for f in self.folds],
        }


def fold_split(n: int, folds: int, seed: int) -> tuple:
    perm = rng_for(seed).permutation(n)
    return tuple(np.sort(f) for f in np.array_split(perm, folds))


def _policy_score(pd, x, pol, samples, r) -> float:
    Y = np.minimum(pol.v[None, :], samples @ pol.U.T)
    return float(pd.c @ x) + sample_risk(r, -Y @ pd.p)


def tuned_policy(pd: ProblemData, x, d2, r: RiskSpec, fit=None) -> TLDRPolicy:
    """Fitted TLDR at ``x``; with ``H = I`` the slope is promoted to the identity."""
    pol = (fit or fit_tldr(pd, x, d2, r)).policy
    if is_identity(pd.H):
        return TLDRPolicy(pol.v, np.eye(pd.H.shape[0]))
    return pol


def cross_validate(
    pd: ProblemData, d_tr: Dataset, r: RiskSpec = CVaR(0.05), folds: int = 5, seed: int = 0, grid=DEFAULT_GRID
) -> CVResult:
    if d_tr.n < folds:
        raise DataError(f"{d_tr.n} samples cannot fill {folds} folds")
    grid = tuple(float(g) for g in grid)
    split = fold_split(d_tr.n, folds, seed)
    G = len(grid)
    total = np.zeros((G, G))
    lower = {n: ScenarioTemplate(pd, r, n) for n in (1, 2)}
    fitter = {n: TLDRFitTemplate(pd, r, n) for n in (1, 2)}
    for f, val in enumerate(split):
        train = np.setdiff1d(np.arange(d_tr.n), val)
        m = empirical_moments(d_tr.subset(train))
        val_samples = d_tr.samples[val]
        cache = {}
        for i, kappa in enumerate(grid):
            for j, eta in enumerate(grid):
                params = params_from_ratios(m.mu, m.sigma, kappa, eta)
                d2 = build_two_point(m.mu, params)
                key = (d2.d_l.tobytes(), d2.d_h.tobytes(), d2.tau)
                if key not in cache:
                    n = len(d2.atoms())
                    x = lower[n].solve_two_point(d2).x
                    pol = tuned_policy(pd, x, d2, r, fitter[n].fit(x, d2))
                    cache[key] = _policy_score(pd, x, pol, val_samples, r)
                total[i, j] += cache[key]
    costs = total / folds
    best = (0, 0)
    for i in range(G):
        for j in range(G):
            if costs[i, j] < costs[best]:
                best = (i, j)
    return CVResult(grid[best[0]], grid[best[1]], grid, costs, split)


def robustness_index(J_mech: float, J_saa: float, J_star: float) -> float:
    """``(J_mech - J_saa) / J_star``; NaN when ``|J_star| < 1e-9``."""
    if not abs(J_star) >= 1e-9:
        return float("nan")
    return (J_mech - J_saa) / J_star


def binomial_tail(n: int, k: int, direction: str) -> Fraction:
    """Exact ``P(Bin(n, 1/2) >= k)`` (plus) or ``P(Bin(n, 1/2) <= k)`` (minus)."""
    if direction not in ("plus", "minus"):
        raise DomainError(f"direction must be 'plus' or 'minus', got {direction!r}")
    if direction == "minus":
        k = n - k  # P(X <= k) = P(n - X >= n - k)
    if k <= 0:
        return Fraction(1)
    total, c = 0, 1
    for j in range(n + 1):
        if j >= k:
            total += c
        c = c * (n - j) // (j + 1)
    return Fraction(total, 2**n)


@dataclass(frozen=True)
class SignTestResult:
    n: int
    k_neg: int
    p_exact: Fraction | None

    @property
    def p_value(self) -> float:
        return float("nan") if self.p_exact is None else float(self.p_exact)

    @property
    def defined(self) -> bool:
        return self.p_exact is not None

    def formatted(self) -> str:
        return "nan" if self.p_exact is None else format_pvalue(self.p_exact)


def sign_test(diffs, direction: str = "plus") -> SignTestResult:
    """One-sided sign test on ``diffs``; negatives count as wins. Zeros are dropped."""
    d = np.asarray(diffs, dtype=float).ravel()
    if d.size == 0:
        raise DomainError("sign test needs at least one difference")
    d = d[d != 0]
    if d.size == 0:
        return SignTestResult(0, 0, None)
    k = int(np.sum(d < 0))
    return SignTestResult(int(d.size), k, binomial_tail(int(d.size), k, direction))


def format_pvalue(p: Fraction, digits: int = 6) -> str:
    """Scientific notation that stays exact below the float range."""
    if p == 0:
        return "0"
    ctx = Context(prec=digits + 4, Emin=-(10**9), Emax=10**9)
    return f"{ctx.divide(Decimal(p.numerator), Decimal(p.denominator)):.{digits}e}"
