"""Truncated linear decision rules ``d -> min{v, U d}`` and the bounds built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy import optimize

from . import conic
from .errors import CapabilityError, DomainError
from .lowerlevel import add_risk_objective, require_optimizable, second_stage
from .mechanism import TwoPointDistribution
from .model import MomentInfo, ProblemData, ScaleIndex
from .risk import CVaR, Expectation, RiskSpec, standard_coefficient

FEAS_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TLDRPolicy:
    v: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float).ravel()
        U = np.atleast_2d(np.array(self.U, dtype=float))
        if U.shape[0] != v.size:
            raise DomainError(f"U has {U.shape[0]} rows but v has length {v.size}")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "U", U)

    def __call__(self, d) -> np.ndarray:
        return np.minimum(self.v, self.U @ np.asarray(d, dtype=float))

    def violations(self, pd: ProblemData, x, tol: float = FEAS_TOL) -> list[str]:
        x = np.asarray(x, dtype=float)
        out = []
        if np.any(self.v < -tol) or np.any(self.U < -tol):
            out.append("negative entries")
        if np.any(pd.A @ self.v > x + tol * max(1.0, float(np.max(np.abs(x), initial=0.0)))):
            out.append("A v > x")
        HU = pd.H @ self.U
        if np.any(HU > np.eye(HU.shape[0]) + tol):
            out.append("H U > I")
        return out

    def is_feasible(self, pd: ProblemData, x, tol: float = FEAS_TOL) -> bool:
        return not self.violations(pd, x, tol)

    def diagonal(self) -> np.ndarray | None:
        """Diagonal of ``U`` when ``U`` is square and has no off-diagonal mass."""
        U = self.U
        if U.shape[0] != U.shape[1]:
            return None
        off = U - np.diag(np.diag(U))
        return np.diag(U).copy() if np.all(np.abs(off) <= 1e-12) else None


def is_identity(H) -> bool:
    H = np.asarray(H)
    return H.shape[0] == H.shape[1] and np.array_equal(H, np.eye(H.shape[0]))


@dataclass(frozen=True, eq=False)
class TLDRFit:
    Vbar: float
    policy: TLDRPolicy
    result: conic.SolveResult | None = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.Vbar, self.policy))


def slope_pattern(H) -> tuple[np.ndarray, np.ndarray]:
    """Entries ``(j, k)`` of ``U`` that ``U >= 0, H U <= I`` leaves free, in row-major order.

    With ``H >= 0`` an entry ``U_jk`` multiplies ``H_ij`` in row ``(i, k)``, so it is
    forced to zero as soon as column ``j`` of ``H`` has a nonzero outside row ``k``.
    """
    H = np.asarray(H, dtype=float)
    n_d, n_y = H.shape
    if np.any(H < 0):
        free = np.ones((n_y, n_d), dtype=bool)
    else:
        nz = (H != 0).T  # nz[j, i]
        free = nz.sum(axis=1)[:, None] - nz <= 0
    return np.nonzero(free)


def _fit_program(pd: ProblemData, x, D, probs, r: RiskSpec) -> conic.ConicProblem:
    n_y, n_d = pd.p.size, pd.H.shape[0]
    rows, cols = slope_pattern(pd.H)
    n_u = rows.size
    B = conic.ProblemBuilder()
    B.offset = float(pd.c @ x)
    v = B.var("v", n_y, conic.NONNEG)
    U = B.var("U", n_u, conic.NONNEG)  # the free entries of the slope matrix
    W = B.var("w", D.shape[0] * n_y, conic.NONNEG).reshape(D.shape[0], n_y)
    B.le([(v, pd.A)], x, tag="cap")
    # (H U)_ik = sum_j H_ij U_jk, kept only for rows that touch a free entry
    HU = sp.csr_matrix((pd.H[:, rows].ravel(), (np.repeat(np.arange(n_d), n_u) * n_d + np.tile(cols, n_d),
                        np.tile(np.arange(n_u), n_d))), shape=(n_d * n_d, n_u))
    live = np.flatnonzero(HU.getnnz(axis=1))
    if live.size:
        B.le([(U, HU[live])], np.eye(n_d).ravel()[live])
    for w, d in enumerate(D):
        B.le([(W[w], 1.0), (v, -1.0)], np.zeros(n_y))
        link = sp.csr_matrix((-d[cols], (rows, np.arange(n_u))), shape=(n_y, n_u))
        B.le([(W[w], 1.0), (U, link)], np.zeros(n_y), tag=f"link{w}")
    add_risk_objective(B, W, pd.p, probs, r)
    return B.build()


def _fit_result(res, prob, pd: ProblemData) -> TLDRFit:
    rows, cols = slope_pattern(pd.H)
    vv = np.maximum(res.value(prob.block("v").index), 0.0)
    UU = np.zeros((pd.p.size, pd.H.shape[0]))
    UU[rows, cols] = np.maximum(res.value(prob.block("U").index), 0.0)
    return TLDRFit(res.objective, TLDRPolicy(vv, UU), res)


# relative slack on the fitted value when breaking ties among optimal policies
TIE_SLACK = 1e-8


def _tiebreak_program(prob: conic.ConicProblem, p) -> conic.ConicProblem:
    """Among policies within the fitted value, maximise ``p' v``; the last ``<=`` row caps the value."""
    v = prob.block("v").index
    c = np.zeros(prob.n)
    c[v] = -np.asarray(p, dtype=float)
    A_ub = sp.vstack([prob.A_ub, sp.csr_matrix(prob.c[None, :])], format="csr")
    rows = dict(prob.rows)
    rows["optimality"] = ("ub", np.array([prob.b_ub.size]))
    return conic.ConicProblem(c, prob.A_eq, prob.b_eq, A_ub, np.append(prob.b_ub, 0.0), prob.blocks, 0.0, rows)


def _value_cap(Vbar: float, offset: float) -> float:
    return Vbar - offset + TIE_SLACK * max(1.0, abs(Vbar))


def _atoms(d2: TwoPointDistribution):
    atoms = d2.atoms()
    return np.stack([a for a, _ in atoms]), np.array([w for _, w in atoms])


def fit_tldr(
    pd: ProblemData, x_fixed, d2: TwoPointDistribution, r: RiskSpec, idx: ScaleIndex | None = None
) -> TLDRFit:
    """Best TLDR for the communicated two-point law at a fixed first stage.

    ``idx`` is accepted for interface symmetry; the atoms of ``d2`` are already scaled.
    """
    require_optimizable(r)
    x = np.maximum(np.asarray(x_fixed, dtype=float), 0.0)
    D, probs = _atoms(d2)
    prob = _fit_program(pd, x, D, probs, r)
    res = conic.solve_or_raise(prob, what="TLDR fit")
    # optimal policies are rarely unique; sell as much as the stock allows
    tie = _tiebreak_program(prob, pd.p)
    tie = replace(tie, b_ub=np.append(tie.b_ub[:-1], _value_cap(res.objective, prob.offset)))
    res2 = conic.solve_or_raise(tie, what="TLDR fit tie-break")
    fit = _fit_result(res2, tie, pd)
    return TLDRFit(res.objective, fit.policy, res)


class TLDRFitTemplate:
    """:func:`fit_tldr` for fixed data, risk and atom count, re-solved for new ``x`` and atoms."""

    def __init__(self, pd: ProblemData, r: RiskSpec, n_scen: int):
        if not isinstance(r, (Expectation, CVaR)):
            raise CapabilityError(f"templates support expectation and CVaR, got {r!r}")
        self.pd, self.n = pd, int(n_scen)
        n_d = pd.H.shape[0]
        ones = np.ones((self.n, n_d))
        zero_x = np.zeros(pd.c.size)
        base = _fit_program(pd, zero_x, ones, np.zeros(self.n), r)
        self._c0 = base.c
        self._dc = np.stack([_fit_program(pd, zero_x, ones, e, r).c - base.c for e in np.eye(self.n)])
        self._prob = base
        self._pp = conic.ParametricProblem(base)
        # unit probabilities keep every moving objective entry stored in the value row
        self._tie = conic.ParametricProblem(_tiebreak_program(replace(base, c=base.c + self._dc.sum(axis=0)), pd.p))
        self._slope = slope_pattern(pd.H)
        prow, pcol = self._slope
        Ucols = base.block("U").index
        self._pos = {}
        for name, pp in (("fit", self._pp), ("tie", self._tie)):
            rows = [pp.rows(f"link{w}") for w in range(self.n)]
            self._pos[name] = np.concatenate([pp.entry_positions(r[prow], Ucols) for r in rows])
        # the value row of the tie-break holds the fit objective, whose probability entries move
        c_rows = np.flatnonzero(np.abs(self._dc).sum(axis=0))
        self._obj_pos = self._tie.entry_positions(np.repeat(self._tie.rows("optimality"), c_rows.size), c_rows)
        self._obj_cols = c_rows

    def fit(self, x_fixed, d2: TwoPointDistribution) -> TLDRFit:
        x = np.maximum(np.asarray(x_fixed, dtype=float), 0.0)
        D, probs = _atoms(d2)
        if D.shape[0] != self.n:
            raise DomainError(f"template holds {self.n} atoms, law has {D.shape[0]}")
        vals = np.concatenate([-d[self._slope[1]] for d in D])
        c = self._c0 + probs @ self._dc
        offset = float(self.pd.c @ x)
        res = self._pp.solve(
            c=c, rhs=[(self._pp.rows("cap"), x)], entries=(self._pos["fit"], vals), offset=offset
        )
        entries = (np.concatenate([self._pos["tie"], self._obj_pos]), np.concatenate([vals, c[self._obj_cols]]))
        rhs = [(self._tie.rows("cap"), x), (self._tie.rows("optimality"), [_value_cap(res.objective, offset)])]
        res2 = self._tie.solve(rhs=rhs, entries=entries)
        fit = _fit_result(res2, self._prob, self.pd)
        return TLDRFit(res.objective, fit.policy, res)


def _add_worst_case(B, v_term, p, mu, sigma):
    """Dual of the worst-case expectation of ``-p' min{v, d}`` over the moment set.

    ``v_term`` is either a fixed vector or an index array of a variable ``v``.
    Returns the index array of the cone variables for inspection.
    """
    N = p.size
    lam = B.var("lambda", N)
    s = B.var("s", N, conic.NONNEG)
    r = B.var("r", N)
    q1 = B.var("q1", N, conic.NONNEG)
    q2 = B.var("q2", N, conic.NONNEG)
    B.minimize(lam, mu)
    B.minimize(s, mu**2 + sigma**2)
    B.minimize(r, 1.0)
    K1 = B.soc("cone1", 3, N)
    K2 = B.soc("cone2", 3, N)
    fixed = not (isinstance(v_term, np.ndarray) and v_term.dtype.kind in "iu")
    zero = np.zeros(N)
    # (s + r + p v, q1 - lambda, s - r - p v) in Q3
    if fixed:
        pv = p * v_term
        B.eq([(K1[:, 0], 1.0), (s, -1.0), (r, -1.0)], pv)
        B.eq([(K1[:, 2], 1.0), (s, -1.0), (r, 1.0)], -pv)
    else:
        B.eq([(K1[:, 0], 1.0), (s, -1.0), (r, -1.0), (v_term, -p)], zero)
        B.eq([(K1[:, 2], 1.0), (s, -1.0), (r, 1.0), (v_term, p)], zero)
    B.eq([(K1[:, 1], 1.0), (q1, -1.0), (lam, 1.0)], zero)
    # (s + r, q2 - lambda - p, s - r) in Q3
    B.eq([(K2[:, 0], 1.0), (s, -1.0), (r, -1.0)], zero)
    B.eq([(K2[:, 1], 1.0), (q2, -1.0), (lam, 1.0)], -p)
    B.eq([(K2[:, 2], 1.0), (s, -1.0), (r, 1.0)], zero)
    return K1, K2


DIRAC_RTOL = 1e-9


def _norm_scale(*arrays) -> float:
    return max(1.0, *(float(np.max(np.abs(a), initial=0.0)) for a in arrays))


def worst_case_expected_loss(v, p, m: MomentInfo, idx: ScaleIndex | None = None) -> float:
    """``sup E[-p' min{v, d}]`` over nonnegative laws with mean ``k mu`` and stdev ``<= k^(s/2) sigma``.

    Scaling by ``idx`` is applied here; pass unscaled moments.
    """
    idx = idx or ScaleIndex()
    v = np.asarray(v, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    if np.any(m.sigma < 0):
        raise DomainError("sigma must be nonnegative")
    mu, sigma = idx.k * m.mu, idx.spread * m.sigma
    if not (v.size == p.size == mu.size):
        raise DomainError("v, p and the moments must have equal length")
    keep = (p * v) > 0  # other coordinates contribute exactly zero
    # without spread the demand is the mean; the dual cone has no interior there.
    # Below this level the Dirac value is off by at most p sigma / 2.
    sure = keep & (sigma <= DIRAC_RTOL * np.maximum(mu, v))
    base = -float(p[sure] @ np.minimum(v[sure], mu[sure]))
    keep &= ~sure
    if not np.any(keep):
        return base
    # only marginals are constrained, so the program splits by coordinate; each piece
    # is homogeneous in (v, mu, sigma) and is solved at its own unit scale
    total = base
    for j in np.flatnonzero(keep):
        z = _norm_scale(mu[j : j + 1], v[j : j + 1])
        B = conic.ProblemBuilder()
        _add_worst_case(B, v[j : j + 1] / z, p[j : j + 1], mu[j : j + 1] / z, sigma[j : j + 1] / z)
        total += conic.solve_or_raise(B.build(), what="worst-case expectation SOCP").objective * z
    return total


def _worst_sales(v, mu, sigma):
    """Worst expected sales ``inf E[min{v, d}]`` per coordinate and their slope in ``v``."""
    sales = np.zeros_like(v)
    slope = np.zeros_like(v)
    pos = mu > 0
    mu_, sg, v_ = mu[pos], sigma[pos], v[pos]
    second = mu_**2 + sg**2
    low = 2 * mu_ * v_ <= second
    gap = v_ - mu_
    root = np.hypot(sg, gap)
    sales[pos] = np.where(low, v_ * mu_**2 / second, v_ - (root + gap) / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        scarf_slope = 0.5 - 0.5 * np.where(root > 0, gap / root, np.sign(gap))
    slope[pos] = np.where(low, mu_**2 / second, scarf_slope)
    return sales, slope


def separable_worst_case_loss(v, p, m: MomentInfo, idx: ScaleIndex | None = None) -> float:
    """Closed form of :func:`worst_case_expected_loss`; the moment set constrains marginals only.

    Per coordinate the worst expected sales over nonnegative laws are
    ``v mu^2 / (mu^2 + sigma^2)`` below ``v0 = (mu^2 + sigma^2) / (2 mu)`` and the
    Scarf value ``v - (sqrt(sigma^2 + (v - mu)^2) + v - mu) / 2`` above it.
    """
    idx = idx or ScaleIndex()
    v = np.asarray(v, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    mu, sigma = idx.k * m.mu, idx.spread * m.sigma
    if not (v.size == p.size == mu.size):
        raise DomainError("v, p and the moments must have equal length")
    if np.any(v < 0):
        raise DomainError("thresholds must be nonnegative")
    return -float(p @ _worst_sales(v, mu, sigma)[0])


@dataclass(frozen=True, eq=False)
class TLDRDROSolution:
    cost: float
    x: np.ndarray
    v: np.ndarray
    result: conic.SolveResult | None = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.cost, self.x, self.v))


SNAP_TOL = 1e-6


def _shrink(M, w, cap):
    """Scale each ``w_j`` by the tightest ratio over the rows of ``M >= 0`` it enters, so ``M w <= cap``."""
    Mw = M @ w
    ratio = np.where(Mw > cap, np.maximum(cap, 0.0) / np.where(Mw > 0, Mw, 1.0), 1.0)
    scale = np.min(np.where(M > 0, ratio[:, None], 1.0), axis=0, initial=1.0)
    return w * scale


def _repair(pd: ProblemData, x, v, b):
    """Move ``(x, v)`` into ``G x <= b`` and ``A v <= x``; valid because all data are nonnegative."""
    x = _shrink(pd.G, np.maximum(x, 0.0), b)
    return x, _shrink(pd.A, np.maximum(v, 0.0), x)


def _refine(pd: ProblemData, mu, sigma, b, x0, v0, z):
    """Local polish of the conic solution on the exact separable objective."""
    n_x = x0.size

    def split(w):
        return w[:n_x] * z, w[n_x:] * z

    def fun(w):
        x, v = split(w)
        sales, slope = _worst_sales(np.maximum(v, 0.0), mu, sigma)
        return (float(pd.c @ x) - float(pd.p @ sales)) / z, np.concatenate([pd.c, -pd.p * slope])

    cons = [
        {"type": "ineq", "fun": lambda w: b - pd.G @ split(w)[0],
         "jac": lambda w: np.hstack([-pd.G, np.zeros((pd.G.shape[0], pd.A.shape[1]))]) * z},
        {"type": "ineq", "fun": lambda w: split(w)[0] - pd.A @ split(w)[1],
         "jac": lambda w: np.hstack([np.eye(n_x), -pd.A]) * z},
    ]
    w0 = np.concatenate([x0, v0]) / z
    try:
        out = optimize.minimize(fun, w0, jac=True, method="SLSQP", bounds=[(0, None)] * w0.size,
                                constraints=cons, options={"ftol": 1e-15, "maxiter": 200})
    except (ValueError, ArithmeticError):
        return None
    return split(out.x)


def solve_tldr_dro(
    pd: ProblemData, m: MomentInfo, idx: ScaleIndex | None = None, r: RiskSpec = Expectation(), refine: bool = True
):
    """Jointly optimal first stage and threshold for the TLDR approximation of the DRO problem.

    The conic solution is re-costed exactly; with ``refine`` it is also polished
    locally on the closed-form objective, keeping whichever feasible point is cheaper.
    """
    idx = idx or ScaleIndex()
    if not is_identity(pd.H):
        raise CapabilityError("TLDR-DRO benchmark needs H = I")
    if not isinstance(r, Expectation):
        raise CapabilityError(f"TLDR-DRO benchmark supports expectation only, got {r!r}")
    mu, sigma, b = idx.k * m.mu, idx.spread * m.sigma, idx.k * pd.b
    z = _norm_scale(mu, sigma)  # demand scale; budgets may be far larger
    B = conic.ProblemBuilder()
    x = B.var("x", pd.c.size, conic.NONNEG)
    v = B.var("v", pd.p.size, conic.NONNEG)
    B.minimize(x, pd.c)
    B.le([(x, pd.G)], b / z)
    B.le([(v, pd.A), (x, -1.0)], np.zeros(pd.c.size))
    _add_worst_case(B, v, pd.p, mu / z, sigma / z)
    res = conic.solve_or_raise(B.build(), what="TLDR-DRO SOCP")
    # the solver value carries the dual slack; the cost of the returned point is exact
    best = None
    candidates = [(res.value(x) * z, res.value(v) * z)]
    if refine:
        # interior-point iterates keep tiny positive entries where the optimum is zero
        snapped = tuple(np.where(w > SNAP_TOL * z, w, 0.0) for w in candidates[0])
        for start in (candidates[0], snapped):
            polished = _refine(pd, mu, sigma, b, *start, z)
            if polished is not None:
                candidates.append(polished)
    for xs, vs in candidates:
        xs, vs = _repair(pd, xs, vs, b)
        cost = float(pd.c @ xs) + separable_worst_case_loss(vs, pd.p, m, idx)
        if best is None or cost < best[0]:
            best = (cost, xs, vs)
    return TLDRDROSolution(best[0], best[1], best[2], res)


def construct_tldr_from_recourse(y_at, anchor_d, H) -> TLDRPolicy:
    """Policy with ``v = y`` and ``U d = y`` at the anchor, ``U_ji = y_j / d_i`` where ``H_ij > 0``."""
    y = np.asarray(y_at, dtype=float).ravel()
    d = np.asarray(anchor_d, dtype=float).ravel()
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape != (d.size, y.size):
        raise DomainError(f"H{H.shape} does not match d({d.size}) and y({y.size})")
    if np.any(np.count_nonzero(H, axis=0) != 1):
        raise DomainError("every column of H needs exactly one nonzero entry")
    tol = 1e-9 * max(1.0, float(np.max(np.abs(d), initial=0.0)))
    if np.any(H @ y > d + tol):
        raise DomainError("H y exceeds the anchor demand")
    U = np.zeros((y.size, d.size))
    rows = np.argmax(H != 0, axis=0)  # the demand index of each product
    for j, i in enumerate(rows):
        if d[i] > 0:
            U[j, i] = max(y[j], 0.0) / d[i]
    return TLDRPolicy(U @ d, U)


@dataclass(frozen=True)
class GapParams:
    alpha: float
    k: float
    s: float
    tau: float
    varsigma: np.ndarray
    sigma: np.ndarray
    p: np.ndarray


@dataclass(frozen=True, eq=False)
class GapBounds:
    loss_bound: float
    value_bound: float
    params: GapParams
    U_mech: np.ndarray
    U_exp: np.ndarray
    Ubar: np.ndarray | None

    @property
    def total(self) -> float:
        return self.loss_bound + self.value_bound


def analytic_gap_bounds(U_mech, U_exp, params: GapParams, Ubar=None) -> GapBounds:
    a, tau = params.alpha, params.tau
    if tau >= 1.0:
        raise DomainError("tau = 1 is a pole of the gap bounds")
    if tau < 0.0:
        raise DomainError("tau must be nonnegative")
    ks = params.k ** (params.s / 2.0)
    p, sig, vs = (np.asarray(t, dtype=float) for t in (params.p, params.sigma, params.varsigma))
    U_exp = np.atleast_2d(np.asarray(U_exp, dtype=float))
    exp_term = (0.5 + a) * ks * float(p @ U_exp @ sig)
    if tau == 0.0 or not np.any(vs > 0):
        return GapBounds(exp_term, 0.0, params, np.asarray(U_mech, float), U_exp, None)
    U_mech = np.atleast_2d(np.asarray(U_mech, dtype=float))
    if Ubar is None:
        raise DomainError("Ubar is required when tau > 0")
    Ubar = np.atleast_2d(np.asarray(Ubar, dtype=float))
    up, down = math.sqrt((1 - tau) / tau), math.sqrt(tau / (1 - tau))
    loss = (0.5 + a) * ks * float(p @ U_mech @ sig) + up * ks * float(p @ U_mech @ vs)
    value = exp_term + (up + down) * ks * float(p @ Ubar @ vs)
    return GapBounds(loss, value, params, U_mech, U_exp, Ubar)


def ubar_at_high_atom(pd: ProblemData, x, d2: TwoPointDistribution) -> np.ndarray:
    """Recourse-based slope matrix anchored at ``d_h``, re-solving ``g(x, d_h)``."""
    _, y = second_stage(pd, x, d2.d_h)
    y = np.minimum(np.maximum(y, 0.0), _cap(pd.H, d2.d_h, y))
    return construct_tldr_from_recourse(y, d2.d_h, pd.H).U


def _cap(H, d, y):
    # shave interior-point overshoot so H y <= d holds exactly
    over = H @ y - d
    if np.all(over <= 0):
        return y
    rows = np.argmax(H != 0, axis=0)
    scale = np.ones(H.shape[0])
    hy = H @ y
    bad = (over > 0) & (hy > 0)
    scale[bad] = d[bad] / hy[bad]
    return y * scale[rows]


@dataclass(frozen=True, eq=False)
class CostEvaluation:
    value: float
    exact: bool
    components: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.value, self.exact))


def evaluate_cost(
    pd: ProblemData,
    x,
    pol: TLDRPolicy,
    m: MomentInfo,
    idx: ScaleIndex | None = None,
    r: RiskSpec = Expectation(),
    mechanism: dict | None = None,
) -> CostEvaluation:
    """Worst-case cost of first stage ``x`` with recourse policy ``pol``.

    Exact for expectation risk with ``H = I`` and diagonal ``U``.  Otherwise an
    upper bound: ``Vbar`` plus the loss bound when ``mechanism`` supplies
    ``{"Vbar", "tau", "varsigma"}``, else the mechanism-free bound
    ``c'x - p'v + (1/2 + alpha) k^(s/2) p'U sigma + p' max(0, v - k U mu)``.
    """
    idx = idx or ScaleIndex()
    x = np.asarray(x, dtype=float)
    first = float(pd.c @ x)
    diag = pol.diagonal()
    if isinstance(r, Expectation) and is_identity(pd.H) and diag is not None:
        live = diag > 0
        v_eff = np.zeros_like(pol.v)
        v_eff[live] = pol.v[live] / diag[live]
        p_eff = pd.p * diag
        wc = separable_worst_case_loss(v_eff, p_eff, m, idx)
        return CostEvaluation(first + wc, True, {"first_stage": first, "worst_case_loss": wc})
    alpha = standard_coefficient(r)
    ks = idx.spread
    spread_term = (0.5 + alpha) * ks * float(pd.p @ pol.U @ m.sigma)
    if mechanism is not None:
        tau = float(mechanism["tau"])
        vs = np.asarray(mechanism["varsigma"], dtype=float)
        extra = math.sqrt((1 - tau) / tau) * ks * float(pd.p @ pol.U @ vs) if tau > 0 and np.any(vs > 0) else 0.0
        bound = float(mechanism["Vbar"]) + spread_term + extra
        return CostEvaluation(bound, False, {"Vbar": float(mechanism["Vbar"]), "loss_bound": spread_term + extra})
    excess = float(pd.p @ np.maximum(0.0, pol.v - idx.k * pol.U @ m.mu))
    bound = first - float(pd.p @ pol.v) + spread_term + excess
    return CostEvaluation(bound, False, {"first_stage": first, "spread_term": spread_term, "excess_term": excess})


def wcr(C_mech: float, C_tldr: float) -> float:
    """Worst-case ratio; meaningful for profitable instances (``C_tldr < 0``)."""
    if C_tldr >= 0:
        return float("nan")
    return C_mech / C_tldr
