"""Scenario programs solved by the operations team.

``solve_V0`` plans against the scaled mean, ``solve_lower_level`` against a
communicated two-point law, and the same scenario machinery also serves the
sample-average problems in :mod:`twopoint.datadriven`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import conic
from .errors import CapabilityError, DomainError
from .mechanism import TwoPointDistribution
from .model import AmbiguityInfo, ProblemData, ScaleIndex, nominal_mean
from .risk import CVaR, Expectation, MeanSemideviation, RiskSpec

# second-stage LPs over many samples are solved in blocks of this many scenarios
BATCH = 256


@dataclass(frozen=True, eq=False)
class LowerLevelSolution:
    value: float
    x: np.ndarray
    y_l: np.ndarray
    y_h: np.ndarray | None = None
    risk_value: float = float("nan")
    result: conic.SolveResult | None = field(default=None, repr=False)


def require_optimizable(r: RiskSpec) -> None:
    if isinstance(r, (Expectation, CVaR)):
        return
    if isinstance(r, MeanSemideviation) and r.q == 1.0:
        return
    raise CapabilityError(f"risk measure {r!r} cannot be optimized (evaluation only)")


def add_risk_objective(B: conic.ProblemBuilder, Y: np.ndarray, p: np.ndarray, probs, r: RiskSpec) -> None:
    """Add ``risk(-p'y_w)`` to the objective for scenario recourse blocks ``Y[w]``.

    ``Y`` is an ``n_scen x N_y`` array of variable indices.
    """
    require_optimizable(r)
    probs = np.asarray(probs, dtype=float)
    n = Y.shape[0]
    loss = sp.kron(sp.identity(n), -p[None, :], format="csr")  # row w gives -p'y_w
    if isinstance(r, Expectation):
        B.minimize(Y.ravel(), np.kron(probs, -p))
        return
    if isinstance(r, CVaR):
        t = B.var("cvar_t", 1)
        u = B.var("cvar_u", n, conic.NONNEG)
        B.minimize(t, 1.0)
        B.minimize(u, probs / r.beta)
        B.le([(Y.ravel(), loss), (np.repeat(t, n), -1.0), (u, -1.0)], np.zeros(n))
        return
    m = B.var("msd_mean", 1)
    e = B.var("msd_dev", n, conic.NONNEG)
    B.eq([(m, 1.0), (Y.ravel(), np.kron(probs, p)[None, :])], [0.0])
    B.le([(Y.ravel(), loss), (np.repeat(m, n), -1.0), (e, -1.0)], np.zeros(n))
    B.minimize(m, 1.0)
    B.minimize(e, r.lam * probs)


def scenario_program(pd: ProblemData, budget, scenarios, probs, r: RiskSpec, x_fixed=None):
    """Build ``min c'x + risk(-p'y_w)`` over ``x`` (or fixed ``x``) and recourse per scenario."""
    D = np.atleast_2d(np.asarray(scenarios, dtype=float))
    n = D.shape[0]
    n_x, n_y = pd.c.size, pd.p.size
    B = conic.ProblemBuilder()
    Y = B.var("y", n * n_y, conic.NONNEG).reshape(n, n_y)
    In = sp.identity(n, format="csr")
    if x_fixed is None:
        x = B.var("x", n_x, conic.NONNEG)
        B.minimize(x, pd.c)
        B.le([(x, pd.G)], budget, tag="budget")
        B.le([(Y.ravel(), sp.kron(In, pd.A)), (np.tile(x, n), -1.0)], np.zeros(n * n_x), tag="capacity")
    else:
        xf = np.asarray(x_fixed, dtype=float)
        B.offset = float(pd.c @ xf)
        B.le([(Y.ravel(), sp.kron(In, pd.A))], np.tile(xf, n), tag="capacity")
    B.le([(Y.ravel(), sp.kron(In, pd.H))], D.ravel(), tag="demand")
    add_risk_objective(B, Y, pd.p, probs, r)
    return B.build()


def _solve_scenarios(pd, budget, D, probs, r, what):
    prob = scenario_program(pd, budget, D, probs, r)
    res = conic.solve_or_raise(prob, what=what)
    x = np.maximum(res.value(prob.block("x").index), 0.0)
    Y = res.value(prob.block("y").index).reshape(D.shape[0], -1)
    return res, x, np.maximum(Y, 0.0)


class ScenarioTemplate:
    """Lower-level program for fixed data, risk and scenario count, re-solved for new scenarios.

    Assembly dominates the cost of these small programs, so repeated solves
    (cross-validation grids) patch a compiled template instead.
    """

    def __init__(self, pd: ProblemData, r: RiskSpec, n_scen: int, budget=None):
        if not isinstance(r, (Expectation, CVaR)):
            raise CapabilityError(f"templates support expectation and CVaR, got {r!r}")
        self.pd, self.r, self.n = pd, r, int(n_scen)
        budget = pd.b if budget is None else budget
        ones = np.ones((self.n, pd.H.shape[0]))
        base = scenario_program(pd, budget, ones, np.zeros(self.n), r)
        # the objective is affine in the scenario probabilities for these risks
        self._c0 = base.c
        self._dc = np.stack([scenario_program(pd, budget, ones, e, r).c - base.c for e in np.eye(self.n)])
        self._pp = conic.ParametricProblem(base)
        self._demand = self._pp.rows("demand")
        self._x = base.block("x").index
        self._y = base.block("y").index

    def solve(self, D, probs):
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if D.shape[0] != self.n:
            raise DomainError(f"template holds {self.n} scenarios, got {D.shape[0]}")
        c = self._c0 + np.asarray(probs, dtype=float) @ self._dc
        res = self._pp.solve(c=c, rhs=[(self._demand, D.ravel())])
        x = np.maximum(res.value(self._x), 0.0)
        Y = np.maximum(res.value(self._y).reshape(self.n, -1), 0.0)
        return res, x, Y

    def solve_two_point(self, d2: TwoPointDistribution) -> LowerLevelSolution:
        atoms = d2.atoms()
        if len(atoms) != self.n:
            raise DomainError(f"template holds {self.n} scenarios, law has {len(atoms)} atoms")
        res, x, Y = self.solve(np.stack([a for a, _ in atoms]), [w for _, w in atoms])
        y_h = Y[1] if self.n == 2 else None
        return LowerLevelSolution(res.objective, x, Y[0], y_h, res.objective - float(self.pd.c @ x), res)


def solve_V0(pd: ProblemData, info: AmbiguityInfo, idx: ScaleIndex | None = None) -> LowerLevelSolution:
    idx = idx or ScaleIndex()
    d = idx.k * nominal_mean(info)
    res, x, Y = _solve_scenarios(pd, idx.k * pd.b, d[None, :], [1.0], Expectation(), "V0 LP")
    return LowerLevelSolution(res.objective, x, Y[0], None, float(-pd.p @ Y[0]), res)


def solve_lower_level(
    pd: ProblemData, d2: TwoPointDistribution, r: RiskSpec, idx: ScaleIndex | None = None
) -> LowerLevelSolution:
    idx = idx or ScaleIndex()
    require_optimizable(r)
    atoms = d2.atoms()
    D = np.stack([a for a, _ in atoms])
    probs = np.array([w for _, w in atoms])
    res, x, Y = _solve_scenarios(pd, idx.k * pd.b, D, probs, r, "lower-level program")
    y_h = Y[1] if len(atoms) == 2 else None
    return LowerLevelSolution(res.objective, x, Y[0], y_h, res.objective - float(pd.c @ x), res)


def second_stage(pd: ProblemData, x, d) -> tuple[float, np.ndarray]:
    """Optimal recourse value ``g(x, d)`` and a minimizing ``y``."""
    vals, Y = second_stage_batch(pd, x, np.atleast_2d(d))
    return float(vals[0]), Y[0]


def second_stage_batch(pd: ProblemData, x, D) -> tuple[np.ndarray, np.ndarray]:
    """``g(x, d_w)`` for every row of ``D``.

    The per-sample LPs are independent, so blocks of them are stacked into one
    block-diagonal LP; each sample's value is read off its own recourse block.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-9):
        raise DomainError("first-stage decision must be nonnegative")
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n = D.shape[0]
    vals = np.empty(n)
    Ys = np.empty((n, pd.p.size))
    if not np.any(pd.p > 0) or not np.any(x > 0):
        vals[:] = 0.0
        Ys[:] = 0.0
        return vals, Ys
    for s in range(0, n, BATCH):
        Dc = D[s : s + BATCH]
        m = Dc.shape[0]
        prob = scenario_program(pd, None, Dc, np.full(m, 1.0 / m), Expectation(), x_fixed=np.maximum(x, 0.0))
        # undo the 1/m weighting so each block is solved at unit scale
        prob = conic.ConicProblem(prob.c * m, prob.A_eq, prob.b_eq, prob.A_ub, prob.b_ub, prob.blocks, 0.0)
        res = conic.solve_or_raise(prob, what="second-stage LP")
        Y = np.maximum(res.value(prob.block("y").index).reshape(m, -1), 0.0)
        Ys[s : s + m] = Y
        vals[s : s + m] = -Y @ pd.p
    return vals, Ys


@dataclass(frozen=True)
class AssumptionReport:
    V0: float
    nontrivial: bool
    margin_condition: bool

    def to_dict(self) -> dict:
        return {"V0": self.V0, "nontrivial": self.nontrivial, "p_not_le_ATc": self.margin_condition}


def check_assumptions(pd: ProblemData, info: AmbiguityInfo) -> AssumptionReport:
    v0 = solve_V0(pd, info).value
    margin = bool(np.any(pd.p > pd.A.T @ pd.c))
    return AssumptionReport(v0, v0 < -1e-9, margin)
