"""Two-point forecast distributions for moment and Wasserstein ambiguity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError
from .model import MomentInfo, ScaleIndex, WassersteinInfo

RANGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TwoPointDistribution:
    """Low atom ``d_l`` w.p. ``1 - tau`` and high atom ``d_h`` w.p. ``tau``."""

    d_l: np.ndarray
    d_h: np.ndarray
    tau: float

    def __post_init__(self):
        d_l = np.array(self.d_l, dtype=float).ravel()
        d_h = np.array(self.d_h, dtype=float).ravel()
        if d_l.shape != d_h.shape:
            raise DomainError("atoms differ in length")
        if not 0.0 <= self.tau <= 1.0:
            raise DomainError(f"tau must lie in [0, 1], got {self.tau}")
        if np.any(d_l < 0) or np.any(d_h < d_l):
            raise DomainError("atoms must satisfy 0 <= d_l <= d_h")
        d_l.setflags(write=False)
        d_h.setflags(write=False)
        object.__setattr__(self, "d_l", d_l)
        object.__setattr__(self, "d_h", d_h)
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def dirac(cls, d) -> "TwoPointDistribution":
        d = np.asarray(d, dtype=float)
        return cls(d, d, 0.0)

    @property
    def is_dirac(self) -> bool:
        return self.tau == 0.0 or bool(np.all(self.d_l == self.d_h))

    def atoms(self) -> list[tuple[np.ndarray, float]]:
        """Support points with their probabilities; a single pair for the Dirac case."""
        if self.is_dirac:
            return [(self.d_l if self.tau < 1.0 else self.d_h, 1.0)]
        return [(self.d_l, 1.0 - self.tau), (self.d_h, self.tau)]

    def mean(self) -> np.ndarray:
        return (1.0 - self.tau) * self.d_l + self.tau * self.d_h

    def variance(self) -> np.ndarray:
        m = self.mean()
        return (1.0 - self.tau) * (self.d_l - m) ** 2 + self.tau * (self.d_h - m) ** 2


@dataclass(frozen=True, eq=False)
class MechanismParams:
    varsigma: np.ndarray
    tau: float

    def __post_init__(self):
        vs = np.array(self.varsigma, dtype=float).ravel()
        if np.any(vs < 0) or not np.all(np.isfinite(vs)):
            raise DomainError("varsigma must be finite and nonnegative")
        tau = self.tau
        if isinstance(tau, (tuple, list)):
            tau = Fraction(int(tau[0]), int(tau[1]))
        tau = float(tau)
        if not 0.0 <= tau <= 1.0:
            raise DomainError(f"tau must lie in [0, 1], got {tau}")
        vs.setflags(write=False)
        object.__setattr__(self, "varsigma", vs)
        object.__setattr__(self, "tau", tau)


def tau_max(mu, varsigma) -> float:
    mu = np.asarray(mu, dtype=float)
    vs = np.asarray(varsigma, dtype=float)
    active = vs > 0
    if not np.any(active):
        return 1.0
    if np.any(mu[active] <= 0):
        raise DomainError("a coordinate with positive spread has zero mean, so tau_max = 0")
    gamma = float(np.min(mu[active] / vs[active]))
    return gamma**2 / (1.0 + gamma**2)


def params_from_ratios(mu, sigma, kappa: float, eta: float) -> MechanismParams:
    """Ratio form: ``varsigma = kappa * sigma`` and ``tau = eta * tau_max``."""
    if not (0.0 <= kappa <= 1.0 and 0.0 <= eta <= 1.0):
        raise DomainError(f"(kappa, eta) = ({kappa}, {eta}) outside [0, 1]^2")
    vs = kappa * np.asarray(sigma, dtype=float)
    tau = eta * tau_max(mu, vs) if kappa > 0 and eta > 0 else 0.0
    return MechanismParams(vs, tau)


def params_from_config(cfg: dict, mu, sigma) -> MechanismParams:
    if "kappa" in cfg:
        return params_from_ratios(mu, sigma, float(cfg["kappa"]), float(cfg["eta"]))
    tau = cfg["tau"]
    return MechanismParams(cfg["varsigma"], tuple(tau) if isinstance(tau, list) else tau)


def build_two_point(mu, params: MechanismParams, idx: ScaleIndex | None = None) -> TwoPointDistribution:
    idx = idx or ScaleIndex()
    mu = np.asarray(mu, dtype=float)
    vs = params.varsigma
    if vs.shape != mu.shape:
        raise DomainError(f"varsigma length {vs.size} differs from mu length {mu.size}")
    center = idx.k * mu
    tau = params.tau
    if tau == 0.0 or not np.any(vs > 0):
        return TwoPointDistribution.dirac(center)
    tmax = tau_max(mu, vs)
    if tau > tmax + RANGE_TOL:
        raise DomainError(f"tau = {tau} exceeds tau_max = {tmax}")
    if tau >= 1.0:
        raise DomainError("tau = 1 leaves the low atom undefined")
    spread = idx.spread * vs
    d_l = center - math.sqrt(tau / (1.0 - tau)) * spread
    d_h = center + math.sqrt((1.0 - tau) / tau) * spread
    # at tau = tau_max the binding coordinate lands on 0 up to rounding
    floor = -1e-9 * max(1.0, float(np.max(center)))
    if np.any(d_l < floor):
        raise DomainError(f"negative low atom {d_l.min()}")
    return TwoPointDistribution(np.maximum(d_l, 0.0), d_h, tau)


def wasserstein_sigma_hat(w: WassersteinInfo) -> np.ndarray:
    val = math.sqrt(2.0 * float(np.trace(w.Sigma_hat)) + 2.0 * w.epsilon**2)
    return np.full(w.mu_hat.size, val)


def moment_outer(w: WassersteinInfo) -> MomentInfo:
    """Moment information whose ambiguity set contains the Wasserstein ball."""
    return MomentInfo(w.mu_hat, wasserstein_sigma_hat(w))


def outer_membership(mean, marginal_vars, w: WassersteinInfo, idx: ScaleIndex | None = None) -> bool:
    idx = idx or ScaleIndex()
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(marginal_vars, dtype=float)
    sh = wasserstein_sigma_hat(w)
    ok_mean = np.linalg.norm(mean - idx.k * w.mu_hat) <= idx.spread * w.epsilon * (1 + 1e-12) + 1e-12
    ok_var = np.all(var <= idx.k**idx.s * sh**2 * (1 + 1e-12) + 1e-12)
    return bool(ok_mean and ok_var)


def moment_membership(dist: TwoPointDistribution, m: MomentInfo, idx: ScaleIndex | None = None, tol=1e-9):
    """Check nonnegative support, mean ``k mu`` and variance ``<= k^s sigma^2``."""
    idx = idx or ScaleIndex()
    target = idx.k * m.mu
    scale = max(1.0, float(np.max(np.abs(target))) if target.size else 1.0)
    support = bool(np.all(dist.d_l >= 0))
    mean = bool(np.all(np.abs(dist.mean() - target) <= tol * scale))
    var = bool(np.all(dist.variance() <= idx.k**idx.s * m.sigma**2 * (1 + tol) + tol * scale))
    return {"support": support, "mean": mean, "variance": var}
