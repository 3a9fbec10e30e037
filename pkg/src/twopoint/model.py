"""Two-stage problem data, ambiguity information and scaling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DomainError, StructureError


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != ndim:
        raise StructureError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise StructureError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dims:
    n_x: int
    n_y: int
    n_d: int
    k: int


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Deterministic data of the two-stage model.

    First stage: ``min c'x`` over ``x >= 0, Gx <= b``.  Second stage (per
    demand ``d``): ``min -p'y`` over ``y >= 0, Ay <= x, Hy <= d``.
    """

    c: np.ndarray
    G: np.ndarray
    b: np.ndarray
    p: np.ndarray
    A: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        for name, nd in (("c", 1), ("G", 2), ("b", 1), ("p", 1), ("A", 2), ("H", 2)):
            object.__setattr__(self, name, _frozen(getattr(self, name), nd, name))
        n_x, n_y = self.c.size, self.p.size
        bad = []
        if self.G.shape != (self.b.size, n_x):
            bad.append(f"G{self.G.shape} vs (K={self.b.size}, N_x={n_x})")
        if self.A.shape != (n_x, n_y):
            bad.append(f"A{self.A.shape} vs (N_x={n_x}, N_y={n_y})")
        if self.H.ndim != 2 or self.H.shape[1] != n_y:
            bad.append(f"H{self.H.shape} vs (N_d, N_y={n_y})")
        if bad:
            raise StructureError("shape mismatch: " + "; ".join(bad))

    @property
    def dims(self) -> Dims:
        return Dims(self.c.size, self.p.size, self.H.shape[0], self.b.size)

    def with_budget(self, b) -> "ProblemData":
        return ProblemData(self.c, self.G, np.atleast_1d(np.asarray(b, float)), self.p, self.A, self.H)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("c", "G", "b", "p", "A", "H")}

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemData":
        return cls(d["c"], d["G"], d["b"], d["p"], d["A"], d["H"])


@dataclass(frozen=True, eq=False)
class MomentInfo:
    """Mean vector and upper bounds on marginal standard deviations."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = _frozen(self.mu, 1, "mu")
        sigma = _frozen(self.sigma, 1, "sigma")
        if mu.shape != sigma.shape:
            raise StructureError(f"mu{mu.shape} and sigma{sigma.shape} differ in length")
        if np.any(mu < 0) or np.any(sigma < 0):
            raise DomainError("mu and sigma must be nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    def to_dict(self) -> dict:
        return {"kind": "moment", "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}


@dataclass(frozen=True, eq=False)
class WassersteinInfo:
    """Nominal mean/covariance and radius of a 2-Wasserstein ball."""

    mu_hat: np.ndarray
    Sigma_hat: np.ndarray
    epsilon: float

    def __post_init__(self):
        mu = _frozen(self.mu_hat, 1, "mu_hat")
        S = _frozen(self.Sigma_hat, 2, "Sigma_hat")
        if S.shape != (mu.size, mu.size):
            raise StructureError(f"Sigma_hat{S.shape} is not {mu.size}x{mu.size}")
        if np.any(np.abs(S - S.T) > 1e-10):
            raise DomainError("Sigma_hat is not symmetric")
        if np.any(np.diag(S) < 0) or np.any(mu < 0):
            raise DomainError("Sigma_hat diagonal and mu_hat must be nonnegative")
        if not self.epsilon >= 0:
            raise DomainError("epsilon must be nonnegative")
        object.__setattr__(self, "mu_hat", mu)
        object.__setattr__(self, "Sigma_hat", S)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    def to_dict(self) -> dict:
        return {
            "kind": "wasserstein",
            "mu_hat": self.mu_hat.tolist(),
            "sigma_hat_matrix": self.Sigma_hat.tolist(),
            "epsilon": self.epsilon,
        }


AmbiguityInfo = Union[MomentInfo, WassersteinInfo]


def nominal_mean(info: AmbiguityInfo) -> np.ndarray:
    return info.mu if isinstance(info, MomentInfo) else info.mu_hat


def ambiguity_from_dict(d: dict) -> AmbiguityInfo:
    kind = d.get("kind")
    if kind == "moment":
        return MomentInfo(d["mu"], d["sigma"])
    if kind == "wasserstein":
        return WassersteinInfo(d["mu_hat"], d["sigma_hat_matrix"], d["epsilon"])
    raise DomainError(f"unknown ambiguity kind {kind!r}")


@dataclass(frozen=True)
class ScaleIndex:
    """Scale factor ``k`` and variance-growth exponent ``s``."""

    k: float = 1.0
    s: float = 1.0

    def __post_init__(self):
        if not 1.0 <= self.s < 2.0:
            raise DomainError(f"s must lie in [1, 2), got {self.s}")
        if not self.k >= 1.0:
            raise DomainError(f"k must be >= 1, got {self.k}")

    @property
    def spread(self) -> float:
        """Multiplier ``k**(s/2)`` applied to standard deviations."""
        return self.k ** (self.s / 2.0)


def apply_scaling(info: AmbiguityInfo, b, idx: ScaleIndex):
    """Return the k-th problem's ambiguity information and budget."""
    b = np.asarray(b, dtype=float)
    if isinstance(info, MomentInfo):
        scaled = MomentInfo(idx.k * info.mu, idx.spread * info.sigma)
    else:
        scaled = WassersteinInfo(
            idx.k * info.mu_hat, idx.k**idx.s * info.Sigma_hat, idx.spread * info.epsilon
        )
    return scaled, idx.k * b


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]
    warnings: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        """True when every hard check passes (Assumption 3(i) is advisory)."""
        return all(c.passed for c in self.checks if c.name != "H_one_nonzero_per_column")

    @property
    def assumption_3i(self) -> bool:
        return self["H_one_nonzero_per_column"].passed

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
            "warnings": list(self.warnings),
        }


def validate_problem(pd: ProblemData) -> ValidationReport:
    checks = []
    negatives = [n for n in ("c", "b", "p", "A", "H") if np.any(getattr(pd, n) < 0)]
    checks.append(Check("nonnegativity", not negatives, ", ".join(negatives)))
    zero = [n for n in ("A", "H") if not np.any(getattr(pd, n) != 0)]
    checks.append(Check("A_H_nonzero", not zero, ", ".join(zero)))
    per_col = np.count_nonzero(pd.H, axis=0)
    bad_cols = np.flatnonzero(per_col != 1)
    checks.append(
        Check(
            "H_one_nonzero_per_column",
            bad_cols.size == 0,
            "" if bad_cols.size == 0 else f"columns {bad_cols.tolist()} have counts {per_col[bad_cols].tolist()}",
        )
    )
    # x = 0 lies in X(b) iff b >= 0
    checks.append(Check("budget_set_nonempty", bool(np.all(pd.b >= 0)), ""))
    warnings = []
    if bad_cols.size:
        warnings.append("Assumption 3(i) fails: recourse-to-TLDR constructions are disabled")
    return ValidationReport(tuple(checks), tuple(warnings))


def save_instance(path, pd: ProblemData, info: AmbiguityInfo, meta: dict | None = None) -> None:
    doc = pd.to_dict()
    doc["ambiguity"] = info.to_dict()
    doc["meta"] = meta or {}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_instance(path):
    """Read an instance JSON file; returns ``(ProblemData, AmbiguityInfo, meta)``."""
    doc = json.loads(Path(path).read_text())
    return ProblemData.from_dict(doc), ambiguity_from_dict(doc["ambiguity"]), doc.get("meta", {})
