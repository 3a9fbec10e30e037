"""Risk measures and their evaluation on finite loss distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError

PROB_TOL = 1e-10


@dataclass(frozen=True)
class Expectation:
    kind = "expectation"

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class CVaR:
    """Conditional value-at-risk: average of the worst ``beta`` probability mass."""

    beta: float
    kind = "cvar"

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise DomainError(f"CVaR beta must lie in (0, 1), got {self.beta}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": self.beta}


@dataclass(frozen=True)
class VaR:
    beta: float
    kind = "var"

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise DomainError(f"VaR beta must lie in (0, 1), got {self.beta}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": self.beta}


@dataclass(frozen=True)
class MeanSemideviation:
    # the exponent is called q here to keep beta for the tail measures
    lam: float
    q: float = 1.0
    kind = "mean_semideviation"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 1.0 <= self.q <= 2.0:
            raise DomainError(f"q must lie in [1, 2], got {self.q}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "q": self.q}


RiskSpec = Union[Expectation, CVaR, VaR, MeanSemideviation]


def risk_from_dict(d: dict) -> RiskSpec:
    kind = d.get("kind")
    if kind == "expectation":
        return Expectation()
    if kind == "cvar":
        return CVaR(float(d["beta"]))
    if kind == "var":
        return VaR(float(d["beta"]))
    if kind == "mean_semideviation":
        return MeanSemideviation(float(d.get("lambda", d.get("lam"))), float(d.get("q", 1.0)))
    raise DomainError(f"unknown risk kind {kind!r}")


def standard_coefficient(r: RiskSpec) -> float:
    """Worst risk of any zero-mean, unit-variance loss under ``r``."""
    if isinstance(r, Expectation):
        return 0.0
    if isinstance(r, (CVaR, VaR)):
        return math.sqrt((1.0 - r.beta) / r.beta)
    if isinstance(r, MeanSemideviation):
        return float(r.lam)
    raise DomainError(f"not a risk spec: {r!r}")


@dataclass(frozen=True, eq=False)
class DiscreteLossDistribution:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        p = np.array(self.probs, dtype=float).ravel()
        if v.size == 0:
            raise DomainError("loss distribution has no atoms")
        if v.shape != p.shape:
            raise DomainError("values and probabilities differ in length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
            raise DomainError("non-finite atom or probability")
        if np.any(p <= 0):
            raise DomainError("probabilities must be positive")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise DomainError(f"probabilities sum to {p.sum()!r}, not 1")
        v.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_pairs(cls, pairs) -> "DiscreteLossDistribution":
        pairs = list(pairs)
        if not pairs:
            raise DomainError("loss distribution has no atoms")
        v, p = zip(*pairs)
        return cls(v, p)

    @classmethod
    def empirical(cls, samples) -> "DiscreteLossDistribution":
        s = np.asarray(samples, dtype=float).ravel()
        if s.size == 0:
            raise DomainError("loss distribution has no atoms")
        return cls(s, np.full(s.size, 1.0 / s.size))

    def mean(self) -> float:
        return float(self.probs @ self.values)


def _cvar(values, probs, beta) -> float:
    order = np.argsort(-values, kind="stable")
    v, p = values[order], probs[order]
    before = np.concatenate(([0.0], np.cumsum(p)[:-1]))
    # mass of each atom that falls inside the top-beta tail
    take = np.clip(beta - before, 0.0, p)
    return float(take @ v / beta)


def _var(values, probs, beta) -> float:
    order = np.argsort(values, kind="stable")
    v, cum = values[order], np.cumsum(probs[order])
    i = int(np.searchsorted(cum, 1.0 - beta - 1e-12, side="left"))
    return float(v[min(i, v.size - 1)])


def evaluate_risk(r: RiskSpec, d: DiscreteLossDistribution) -> float:
    values, probs = d.values, d.probs
    if isinstance(r, Expectation):
        return d.mean()
    if isinstance(r, CVaR):
        return _cvar(values, probs, r.beta)
    if isinstance(r, VaR):
        return _var(values, probs, r.beta)
    if isinstance(r, MeanSemideviation):
        m = d.mean()
        up = np.maximum(values - m, 0.0)
        return m + r.lam * float(probs @ up**r.q) ** (1.0 / r.q)
    raise DomainError(f"not a risk spec: {r!r}")


def empirical_cvar(samples, beta: float) -> float:
    """Average of the ``ceil(beta * n)`` largest of ``n`` equally weighted losses.

    Agrees with :func:`evaluate_risk` whenever ``beta * n`` is an integer.
    """
    s = np.sort(np.asarray(samples, dtype=float).ravel())[::-1]
    if s.size == 0:
        raise DomainError("no samples")
    m = max(1, math.ceil(beta * s.size - 1e-9))
    return float(s[:m].mean())


def rockafellar_uryasev(values, probs, beta: float, t: float) -> float:
    return float(t + (probs @ np.maximum(np.asarray(values) - t, 0.0)) / beta)
