"""Linear and second-order cone programs behind a small interface.

Problems are assembled with :class:`ProblemBuilder` into a :class:`ConicProblem`
and handed to :func:`solve`, which runs the Clarabel interior-point solver and
re-checks the returned point before reporting it optimal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .errors import SolverError, StructureError

FREE, NONNEG, SOC = "free", "nonneg", "soc"


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    size: int
    kind: str
    width: int = 0  # cone width for SOC blocks; the block holds size // width cones

    @property
    def index(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.size)


@dataclass(frozen=True)
class Tolerances:
    rel_gap: float = 1e-7
    feas: float = 1e-8
    abs_gap: float = 1e-8
    max_iter: int = 200


@dataclass(frozen=True, eq=False)
class ConicProblem:
    """``min c'x + offset`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub`` and block cones."""

    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    blocks: tuple[Block, ...]
    offset: float = 0.0
    rows: dict = field(default_factory=dict)  # tag -> ("eq" | "ub", row indices)

    def __post_init__(self):
        n = self.c.size
        covered = sum(b.size for b in self.blocks)
        if covered != n:
            raise StructureError(f"blocks cover {covered} of {n} variables")
        if self.A_eq.shape != (self.b_eq.size, n) or self.A_ub.shape != (self.b_ub.size, n):
            raise StructureError("constraint matrix shapes disagree with the variable count")
        for b in self.blocks:
            if b.kind == SOC and (b.width < 2 or b.size % b.width):
                raise StructureError(f"SOC block {b.name} has size {b.size}, width {b.width}")

    @property
    def n(self) -> int:
        return self.c.size

    def block(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def dump(self) -> str:
        """Plain-text standard form, one constraint per line."""
        lines = [f"# n={self.n} eq={self.b_eq.size} ub={self.b_ub.size}"]
        for b in self.blocks:
            extra = f" width={b.width}" if b.kind == SOC else ""
            lines.append(f"var {b.name} [{b.start}:{b.start + b.size}] {b.kind}{extra}")
        lines.append("min " + _row_text(self.c) + f" + {float(self.offset)!r}")
        for tag, M, rhs in (("=", self.A_eq, self.b_eq), ("<=", self.A_ub, self.b_ub)):
            M = M.tocsr()
            for i in range(M.shape[0]):
                row = M.getrow(i)
                terms = " ".join(f"{float(v)!r}*x{j}" for j, v in zip(row.indices, row.data))
                lines.append(f"{terms} {tag} {float(rhs[i])!r}")
        return "\n".join(lines) + "\n"


def _row_text(v) -> str:
    return " ".join(f"{float(x)!r}*x{j}" for j, x in enumerate(v) if x != 0) or "0"


class ProblemBuilder:
    """Incremental assembly of a :class:`ConicProblem`.

    Constraint terms are ``(indices, coef)`` pairs where ``coef`` is a scalar,
    a per-row vector, or a dense/sparse matrix applied to ``x[indices]``.
    """

    def __init__(self):
        self._blocks: list[Block] = []
        self._n = 0
        self._obj: list[tuple[np.ndarray, np.ndarray]] = []
        self.offset = 0.0
        self._rows = {"eq": [], "ub": []}
        self._rhs = {"eq": [], "ub": []}
        self._m = {"eq": 0, "ub": 0}
        self._tags: dict = {}

    def var(self, name: str, size: int, kind: str = FREE) -> np.ndarray:
        blk = Block(name, self._n, int(size), kind)
        self._blocks.append(blk)
        self._n += blk.size
        return blk.index

    def soc(self, name: str, width: int, count: int = 1) -> np.ndarray:
        """Allocate ``count`` cones of ``width``; returns a ``count x width`` index array."""
        blk = Block(name, self._n, width * count, SOC, width)
        self._blocks.append(blk)
        self._n += blk.size
        return blk.index.reshape(count, width)

    def minimize(self, idx, coef) -> None:
        idx = np.atleast_1d(np.asarray(idx))
        self._obj.append((idx, np.broadcast_to(np.asarray(coef, float), idx.shape).copy()))

    def eq(self, terms, rhs, tag: str | None = None) -> None:
        self._add("eq", terms, rhs, tag)

    def le(self, terms, rhs, tag: str | None = None) -> None:
        self._add("ub", terms, rhs, tag)

    def ge(self, terms, rhs, tag: str | None = None) -> None:
        self._add("ub", [(i, _neg(c)) for i, c in terms], -np.asarray(rhs, float), tag)

    def _add(self, which, terms, rhs, tag=None):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        m = rhs.size
        base = self._m[which]
        rows, cols, vals = [], [], []
        for idx, coef in terms:
            idx = np.atleast_1d(np.asarray(idx))
            if sp.issparse(coef) or (np.ndim(coef) == 2):
                M = sp.coo_matrix(coef)
                if M.shape != (m, idx.size):
                    raise StructureError(f"term matrix {M.shape} vs ({m}, {idx.size})")
                rows.append(M.row + base)
                cols.append(idx[M.col])
                vals.append(M.data.astype(float))
            else:
                if idx.size != m:
                    raise StructureError(f"term length {idx.size} vs {m} rows")
                cv = np.broadcast_to(np.asarray(coef, float), (m,))
                rows.append(np.arange(m) + base)
                cols.append(idx)
                vals.append(cv.copy())
        self._rows[which].append((np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)))
        self._rhs[which].append(rhs)
        if tag is not None:
            self._tags[tag] = (which, np.arange(base, base + m))
        self._m[which] += m

    def build(self) -> ConicProblem:
        n = self._n
        c = np.zeros(n)
        for idx, coef in self._obj:
            np.add.at(c, idx, coef)
        mats = {}
        for w in ("eq", "ub"):
            if self._rows[w]:
                r, cc, v = (np.concatenate(t) for t in zip(*self._rows[w]))
                mats[w] = sp.csr_matrix((v, (r, cc)), shape=(self._m[w], n))
                rhs = np.concatenate(self._rhs[w])
            else:
                mats[w] = sp.csr_matrix((0, n))
                rhs = np.zeros(0)
            mats[w + "_rhs"] = rhs
        return ConicProblem(
            c, mats["eq"], mats["eq_rhs"], mats["ub"], mats["ub_rhs"], tuple(self._blocks), self.offset, dict(self._tags)
        )


def _neg(coef):
    return -coef if sp.issparse(coef) else -np.asarray(coef, dtype=float)


@dataclass(frozen=True, eq=False)
class SolveResult:
    status: str  # optimal | infeasible | unbounded | numeric-failure
    x: np.ndarray | None
    objective: float
    primal_residual: float
    cone_violation: float
    iterations: int = 0
    solve_time: float = 0.0
    backend_status: str = ""
    problem: ConicProblem | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def value(self, idx) -> np.ndarray:
        return self.x[np.asarray(idx)]


def residuals(p: ConicProblem, x: np.ndarray) -> tuple[float, float]:
    res = 0.0
    if p.b_eq.size:
        res = max(res, float(np.max(np.abs(p.A_eq @ x - p.b_eq))))
    if p.b_ub.size:
        res = max(res, float(np.max(p.A_ub @ x - p.b_ub)))
    cone = 0.0
    for b in p.blocks:
        xb = x[b.start : b.start + b.size]
        if b.kind == NONNEG and b.size:
            cone = max(cone, float(np.max(-xb)))
        elif b.kind == SOC:
            C = xb.reshape(-1, b.width)
            cone = max(cone, float(np.max(np.linalg.norm(C[:, 1:], axis=1) - C[:, 0])))
    return max(res, 0.0), max(cone, 0.0)


@dataclass(frozen=True, eq=False)
class _Compiled:
    """Backend form ``A x + s = b`` with ``s`` in zero, nonnegative and SOC cones, in that order."""

    A: sp.csc_matrix
    b: np.ndarray
    cones: list
    n_eq: int
    n_ub: int
    n_nonneg: int
    soc_widths: tuple


def compile_problem(p: ConicProblem) -> _Compiled:
    n = p.n
    nonneg = np.concatenate([b.index for b in p.blocks if b.kind == NONNEG] or [np.zeros(0, int)])
    socs = [b for b in p.blocks if b.kind == SOC]
    soc_idx = np.concatenate([b.index for b in socs] or [np.zeros(0, int)])

    def sel(idx):
        return sp.csr_matrix((-np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n))

    A = sp.vstack([p.A_eq, p.A_ub, sel(nonneg), sel(soc_idx)], format="csc")
    A.sort_indices()
    b = np.concatenate([p.b_eq, p.b_ub, np.zeros(nonneg.size + soc_idx.size)])
    cones = []
    if p.b_eq.size:
        cones.append(clarabel.ZeroConeT(p.b_eq.size))
    if p.b_ub.size + nonneg.size:
        cones.append(clarabel.NonnegativeConeT(p.b_ub.size + nonneg.size))
    widths = []
    for blk in socs:
        widths.extend([blk.width] * (blk.size // blk.width))
    cones.extend(clarabel.SecondOrderConeT(w) for w in widths)
    return _Compiled(A, b, cones, p.b_eq.size, p.b_ub.size, nonneg.size, tuple(widths))


def _compiled_residuals(cd: _Compiled, x: np.ndarray) -> tuple[float, float]:
    slack = cd.b - cd.A @ x
    e, u, nn = cd.n_eq, cd.n_ub, cd.n_nonneg
    res = max(float(np.max(np.abs(slack[:e]), initial=0.0)), float(np.max(-slack[e : e + u], initial=0.0)))
    cone = float(np.max(-slack[e + u : e + u + nn], initial=0.0))
    pos = e + u + nn
    if cd.soc_widths:
        widths = np.asarray(cd.soc_widths)
        if np.all(widths == widths[0]):
            C = slack[pos:].reshape(-1, widths[0])
            cone = max(cone, float(np.max(np.linalg.norm(C[:, 1:], axis=1) - C[:, 0])))
        else:
            for w in cd.soc_widths:
                blk = slack[pos : pos + w]
                cone = max(cone, float(np.linalg.norm(blk[1:]) - blk[0]))
                pos += w
    return max(res, 0.0), max(cone, 0.0)


def _run(cd: _Compiled, q: np.ndarray, offset: float, tol: Tolerances, problem=None) -> SolveResult:
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_rel = tol.rel_gap
    settings.tol_gap_abs = tol.abs_gap
    settings.tol_feas = tol.feas
    settings.max_iter = tol.max_iter
    settings.max_threads = 1
    n = q.size
    P = sp.csc_matrix((n, n))
    sol = clarabel.DefaultSolver(P, q, cd.A, cd.b, cd.cones, settings).solve()
    status = str(sol.status)
    x = np.asarray(sol.x, dtype=float)
    kw = dict(iterations=int(sol.iterations), solve_time=float(sol.solve_time), backend_status=status, problem=problem)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveResult("infeasible", None, np.inf, np.nan, np.nan, **kw)
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveResult("unbounded", None, -np.inf, np.nan, np.nan, **kw)
    res, cone = _compiled_residuals(cd, x) if x.size == n else (np.inf, np.inf)
    scale = max(1.0, float(np.max(np.abs(cd.b), initial=0.0)), float(np.max(np.abs(x), initial=0.0)))
    clean = res <= 10 * tol.feas * scale and cone <= 10 * tol.feas * scale
    # an almost-solved point must also close the duality gap
    gap = abs(float(sol.obj_val) - float(sol.obj_val_dual))
    clean = clean and gap <= 10 * (tol.abs_gap + tol.rel_gap * max(abs(float(sol.obj_val)), 1.0))
    obj = float(q @ x) + offset if x.size == n else np.nan
    if status == "Solved" or (status == "AlmostSolved" and clean):
        return SolveResult("optimal", x, obj, res, cone, **kw)
    return SolveResult("numeric-failure", x, obj, res, cone, **kw)


def solve(p: ConicProblem, tol: Tolerances | None = None) -> SolveResult:
    return _run(compile_problem(p), p.c, p.offset, tol or Tolerances(), p)


# library operations ask for more than the default accuracy and fall back to
# the default tolerances when the backend stalls short of it
PRECISE = Tolerances(rel_gap=1e-10, feas=1e-10, abs_gap=1e-10)


def solve_or_raise(p: ConicProblem, tol: Tolerances | None = None, what: str = "problem") -> SolveResult:
    return _checked(lambda t: solve(p, t), tol, what)


def _checked(run, tol, what) -> SolveResult:
    r = run(tol or PRECISE)
    if r.status == "numeric-failure" and tol is None:
        r = run(Tolerances())
    if not r.ok:
        raise SolverError(
            f"{what}: backend status {r.backend_status} ({r.status}), "
            f"residual {r.primal_residual:.3g}, cone violation {r.cone_violation:.3g}",
            r,
        )
    return r


class ParametricProblem:
    """A compiled problem whose objective, right-hand sides and chosen matrix entries
    can be replaced between solves without re-assembly."""

    def __init__(self, p: ConicProblem):
        self.problem = p
        self._cd = compile_problem(p)

    def rows(self, tag: str) -> np.ndarray:
        """Backend row indices of a tagged constraint group."""
        which, r = self.problem.rows[tag]
        return r if which == "eq" else r + self._cd.n_eq

    def entry_positions(self, rows, cols) -> np.ndarray:
        """Positions in the backend matrix data of entries ``(rows[i], cols[i])``; they must be stored."""
        A = self._cd.A
        rows, cols = np.asarray(rows), np.asarray(cols)
        out = np.empty(rows.size, dtype=np.int64)
        for i, (r, c) in enumerate(zip(rows, cols)):
            lo, hi = A.indptr[c], A.indptr[c + 1]
            k = lo + np.searchsorted(A.indices[lo:hi], r)
            if k >= hi or A.indices[k] != r:
                raise StructureError(f"entry ({r}, {c}) is not stored in the template")
            out[i] = k
        return out

    def solve(self, c=None, rhs=(), entries=None, offset: float | None = None, tol=None) -> SolveResult:
        """``rhs`` holds ``(backend rows, values)`` pairs; ``entries`` is ``(positions, values)``."""
        cd = self._cd
        b = cd.b
        if rhs:
            b = b.copy()
            for r, val in rhs:
                b[r] = val
        A = cd.A
        if entries is not None:
            data = A.data.copy()
            data[entries[0]] = entries[1]
            A = sp.csc_matrix((data, A.indices, A.indptr), shape=A.shape)
        run_cd = _Compiled(A, b, cd.cones, cd.n_eq, cd.n_ub, cd.n_nonneg, cd.soc_widths)
        q = self.problem.c if c is None else np.asarray(c, dtype=float)
        off = self.problem.offset if offset is None else float(offset)
        return _checked(lambda t: _run(run_cd, q, off, t), tol, "parametric problem")
