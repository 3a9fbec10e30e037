"""Synthetic assemble-to-order families, substitution and two-echelon structures, sales-data ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datadriven import Dataset, rng_for
from .errors import DataError, DomainError
from .model import MomentInfo, ProblemData

COST_VARIANTS = {1: (1.0,), 2: (1.5, 2.0)}
MARKUP_VARIANTS = {1: (1.1,), 2: (3.0,), 3: (2.0, 1.5), 4: (3.0, 1.1)}
# (mean pattern, variance pattern), cycled to the product count
MOMENT_VARIANTS = {
    1: ((20.0,), (20.0,)),
    2: ((20.0, 30.0), (20.0,)),
    3: ((20.0, 40.0), (20.0, 40.0)),
    4: ((20.0, 40.0), (20.0, 60.0)),
    5: ((20.0, 30.0, 40.0), (20.0, 40.0, 60.0)),
}
BUDGET_VARIANTS = (0.5, 2.0)


def cycle(pattern, n: int) -> np.ndarray:
    return np.resize(np.asarray(pattern, dtype=float), n)


def build_parametric_A(N: int, nu: float = 2.0, vartheta=None) -> np.ndarray:
    """``[[I, nu 1], [vartheta', nu]]`` with ``vartheta = (1, ..., N-1)`` by default."""
    if N < 2:
        raise DomainError(f"parametric structure needs N >= 2, got {N}")
    th = np.arange(1.0, N) if vartheta is None else np.asarray(vartheta, dtype=float)
    if th.size != N - 1:
        raise DomainError(f"vartheta must have length {N - 1}")
    A = np.zeros((N, N))
    A[: N - 1, : N - 1] = np.eye(N - 1)
    A[:, N - 1] = nu
    A[N - 1, : N - 1] = th
    return A


def _general_structure(n_x: int, n_y: int, seed: int) -> np.ndarray:
    rng = rng_for(seed)
    while True:
        A = rng.choice([0.0, 1.0, 2.0], size=(n_x, n_y), p=[0.6, 0.3, 0.1])
        if np.all(A.any(axis=0)) and np.all(A.any(axis=1)):
            return A


def _stand_in_structures() -> dict:
    # Not the published benchmark structures (unavailable); documented substitutes.
    serial = np.triu(np.ones((8, 8)))
    return {
        "identity2": np.eye(2),
        "wsystem3": np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]),
        "msystem5": np.vstack([np.eye(5), np.ones((1, 5))]),
        "serial8": serial,
        "general14": _general_structure(10, 14, seed=14),
    }


def structure_registry(include=None) -> dict:
    """Ordered map ``structure_id -> A``: five stand-ins, then the parametric N = 10, 20, 30."""
    reg = dict(_stand_in_structures())
    for N in (10, 20, 30):
        reg[f"param{N}"] = build_parametric_A(N)
    if include is not None:
        reg = {k: reg[k] for k in include}
    return reg


STAND_IN_IDS = ("identity2", "wsystem3", "msystem5", "serial8", "general14")


@dataclass(frozen=True)
class InstanceDescriptor:
    structure_id: str
    cost_variant: int
    markup_variant: int
    moment_variant: int
    budget_variant: float

    @property
    def instance_id(self) -> str:
        return (
            f"{self.structure_id}-c{self.cost_variant}-g{self.markup_variant}"
            f"-m{self.moment_variant}-b{self.budget_variant:g}"
        )

    @property
    def paper_structure(self) -> bool:
        return self.structure_id not in STAND_IN_IDS


@dataclass(frozen=True, eq=False)
class Instance:
    descriptor: InstanceDescriptor
    problem: ProblemData
    moments: MomentInfo

    @property
    def instance_id(self) -> str:
        return self.descriptor.instance_id

    @property
    def budget(self) -> np.ndarray:
        return self.problem.b


def resolve(desc: InstanceDescriptor, A: np.ndarray) -> Instance:
    n_x, n_y = A.shape
    c = cycle(COST_VARIANTS[desc.cost_variant], n_x)
    gamma = cycle(MARKUP_VARIANTS[desc.markup_variant], n_y)
    p = gamma * (A.T @ c)
    mu_pat, var_pat = MOMENT_VARIANTS[desc.moment_variant]
    mu = cycle(mu_pat, n_y)
    sigma = np.sqrt(cycle(var_pat, n_y))
    b = desc.budget_variant * float(c @ A @ mu)
    pd = ProblemData(c, c[None, :], [b], p, A, np.eye(n_y))
    return Instance(desc, pd, MomentInfo(mu, sigma))


def enumerate_instance_family(config: dict | None = None) -> list[Instance]:
    """Cross product of structures, costs, markups, moments and budgets in a fixed order.

    ``config`` may restrict any axis: ``structures``, ``costs``, ``markups``,
    ``moments``, ``budgets``.
    """
    config = config or {}
    reg = structure_registry(config.get("structures"))
    if not reg:
        raise DomainError("empty structure registry")
    out = []
    for sid, A in reg.items():
        for cv in config.get("costs", sorted(COST_VARIANTS)):
            for gv in config.get("markups", sorted(MARKUP_VARIANTS)):
                for mv in config.get("moments", sorted(MOMENT_VARIANTS)):
                    for bv in config.get("budgets", BUDGET_VARIANTS):
                        out.append(resolve(InstanceDescriptor(sid, int(cv), int(gv), int(mv), float(bv)), A))
    return out


def build_substitution_H(segment_sizes) -> np.ndarray:
    sizes = [int(n) for n in segment_sizes]
    if not sizes:
        raise DomainError("at least one segment is required")
    if any(n < 1 for n in sizes):
        raise DomainError("segment sizes must be >= 1")
    H = np.zeros((len(sizes), sum(sizes)))
    start = 0
    for i, n in enumerate(sizes):
        H[i, start : start + n] = 1.0
        start += n
    return H


def build_two_echelon(product_sets, prices, costs, budget=0.0) -> ProblemData:
    """Warehouse-to-store network; ``product_sets[i]`` lists 0-based warehouse products of store ``i``."""
    costs = np.asarray(costs, dtype=float)
    n_x = costs.size
    cols, p = [], []
    for i, J in enumerate(product_sets):
        J = list(J)
        if not J:
            raise DomainError(f"store {i} has no products")
        pr = np.broadcast_to(np.asarray(prices[i], dtype=float), (len(J),))
        for j, price in zip(J, pr):
            if not 0 <= int(j) < n_x:
                raise DomainError(f"product index {j} of store {i} outside [0, {n_x})")
            e = np.zeros(n_x)
            e[int(j)] = 1.0
            cols.append(e)
            p.append(float(price))
    A = np.column_stack(cols)
    n_y = A.shape[1]
    return ProblemData(costs, costs[None, :], [budget], p, A, np.eye(n_y))


SALES_COLUMNS = ("store_id", "product_id", "date", "units_sold", "unit_cost", "unit_price")


@dataclass(frozen=True, eq=False)
class SalesData:
    problem: ProblemData
    train: Dataset
    test: Dataset
    entries: tuple  # (store_id, product_id) per demand coordinate
    train_days: tuple
    test_days: tuple


def _read_sales(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SALES_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                rec = (
                    row["store_id"].strip(),
                    row["product_id"].strip(),
                    row["date"].strip(),
                    float(row["units_sold"]),
                    float(row["unit_cost"]),
                    float(row["unit_price"]),
                )
            except (TypeError, ValueError, AttributeError) as exc:
                raise DataError(f"{path}: line {line}: cannot parse row ({exc})") from None
            if not all(rec[:3]) or not all(math.isfinite(v) and v >= 0 for v in rec[3:]):
                raise DataError(f"{path}: line {line}: empty key or negative/non-finite value")
            rows.append(rec)
    return rows


def ingest_sales_csv(path, n_select: int, r_test_percent: float, seed: int) -> SalesData:
    rows = _read_sales(Path(path))
    dates = sorted({r[2] for r in rows})
    by_entry: dict = {}
    for st, pr, dt, units, cost, price in rows:
        by_entry.setdefault((st, pr), {}).setdefault(dt, []).append((units, cost, price))
    # keep entries observed exactly once on every date
    full = sorted(e for e, obs in by_entry.items() if len(obs) == len(dates) and all(len(v) == 1 for v in obs.values()))
    if len(full) < n_select:
        raise DataError(f"only {len(full)} of {len(by_entry)} entries have full date coverage; {n_select} requested")
    rng = rng_for(seed)
    chosen = sorted(full[i] for i in rng.choice(len(full), size=n_select, replace=False))
    order = rng.permutation(len(dates))
    n_te = int(math.floor(r_test_percent * len(dates) / 100.0 + 0.5))
    test_days = tuple(sorted(dates[i] for i in order[:n_te]))
    train_days = tuple(sorted(dates[i] for i in order[n_te:]))

    products = sorted({pr for _, pr in chosen})
    widx = {pr: i for i, pr in enumerate(products)}
    stores = sorted({st for st, _ in chosen})
    sets, prices = [], []
    for st in stores:
        mine = [e for e in chosen if e[0] == st]
        sets.append([widx[pr] for _, pr in mine])
        prices.append([np.mean([by_entry[e][d][0][2] for d in dates]) for e in mine])
    costs = [np.mean([by_entry[e][d][0][1] for e in chosen if e[1] == pr for d in dates]) for pr in products]
    pd = build_two_echelon(sets, prices, costs)
    entries = tuple(e for st in stores for e in chosen if e[0] == st)

    def matrix(days):
        return np.array([[by_entry[e][d][0][0] for e in entries] for d in days]).reshape(len(days), len(entries))

    prov = {"source": str(path), "seed": int(seed), "n_select": n_select, "r_test_percent": r_test_percent}
    D_tr = Dataset(matrix(train_days), {**prov, "split": "train"}) if train_days else None
    D_te = Dataset(matrix(test_days), {**prov, "split": "test"}) if test_days else None
    return SalesData(pd, D_tr, D_te, entries, train_days, test_days)
