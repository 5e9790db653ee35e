"""
Poisson receiver models: closed-form success probabilities against Poisson load
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Optional

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import poisson

from app.config import settings
from app.models import ReceiverKind
from app.services.error_handler import DimensionError, DomainError

logger = logging.getLogger(__name__)

# exponents beyond this are treated as underflow to zero
_LOG_OVERFLOW = 600.0


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


@dataclass(frozen=True)
class ReceiverModel:
    """
    One class of Poisson receivers

    Kinds that act on the total load (slotted ALOHA, D-fold, D-fold with
    errors, Rayleigh capture) give every user class the same success
    probability and serve any number of classes. The cooperative pair serves
    exactly two classes: index 0 is the URLLC class sent to both slots,
    index 1 the eMBB class sent to one of them.
    """

    kind: ReceiverKind
    num_classes: int = 1
    D: int = 1
    p_err: float = 0.0
    gamma_db: float = 0.0
    b_db: float = 0.0

    def __post_init__(self):
        if self.num_classes < 1:
            raise DomainError("a receiver must serve at least one class")
        if self.D < 1:
            raise DomainError(f"D must be at least 1, got {self.D}")
        if not 0.0 <= self.p_err <= 1.0:
            raise DomainError(f"p_err must lie in [0, 1], got {self.p_err}")
        if not (math.isfinite(self.gamma_db) and math.isfinite(self.b_db)):
            raise DomainError("gamma_db and b_db must be finite")
        if self.kind == ReceiverKind.COOPERATIVE_SA and self.num_classes != 2:
            raise DimensionError("the cooperative receiver pair serves exactly two classes")

    @classmethod
    def slotted_aloha(cls, num_classes: int = 1) -> "ReceiverModel":
        return cls(ReceiverKind.SLOTTED_ALOHA, num_classes=num_classes)

    @classmethod
    def dfold(cls, D: int, num_classes: int = 1) -> "ReceiverModel":
        return cls(ReceiverKind.D_FOLD, num_classes=num_classes, D=D)

    @classmethod
    def dfold_with_errors(cls, D: int, p_err: float, num_classes: int = 1) -> "ReceiverModel":
        return cls(ReceiverKind.D_FOLD_WITH_ERRORS, num_classes=num_classes, D=D, p_err=p_err)

    @classmethod
    def cooperative(cls) -> "ReceiverModel":
        return cls(ReceiverKind.COOPERATIVE_SA, num_classes=2)

    @classmethod
    def rayleigh(cls, gamma_db: float, b_db: float, num_classes: int = 1) -> "ReceiverModel":
        return cls(ReceiverKind.RAYLEIGH_CAPTURE, num_classes=num_classes, gamma_db=gamma_db, b_db=b_db)

    @property
    def gamma(self) -> float:
        return db_to_linear(self.gamma_db)

    @property
    def b(self) -> float:
        return db_to_linear(self.b_db)

    @property
    def decode_capacity(self) -> int:
        """Largest number of colliding copies a slot resolves (slot-type kinds)"""
        return 1 if self.kind == ReceiverKind.SLOTTED_ALOHA else self.D

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"kind": self.kind.value}
        if self.kind in (ReceiverKind.D_FOLD, ReceiverKind.D_FOLD_WITH_ERRORS):
            payload["D"] = self.D
        if self.kind == ReceiverKind.D_FOLD_WITH_ERRORS:
            payload["p_err"] = self.p_err
        if self.kind == ReceiverKind.RAYLEIGH_CAPTURE:
            payload["gamma_db"] = self.gamma_db
            payload["b_db"] = self.b_db
        return payload

    def success_prob(self, rho):
        return success_prob(self, rho)


def _poisson_cdf_below(total: np.ndarray, D: int) -> np.ndarray:
    """P(Poisson(total) <= D - 1)"""
    return poisson.cdf(D - 1, total)


@lru_cache(maxsize=64)
def _rayleigh_conditional(gamma: float, b: float, t_max: int) -> np.ndarray:
    """
    c[t] = success probability of a tagged copy given t interfering copies

    c[t] = Σ_τ t!/(t-τ)! · exp(-((1+b)^(τ+1) - 1)/γ) / (1+b)^((τ+1)(t - τ/2)),
    accumulated in log space.
    """
    log1b = math.log1p(b)
    t = np.arange(t_max + 1)[:, None]
    tau = np.arange(t_max + 1)[None, :]
    valid = tau <= t
    growth = (tau + 1) * log1b
    # exp(-((1+b)^(τ+1) - 1)/γ) underflows long before (1+b)^(τ+1) overflows
    with np.errstate(over="ignore", invalid="ignore"):
        capture = np.where(growth < _LOG_OVERFLOW, -np.expm1(np.minimum(growth, _LOG_OVERFLOW)) / gamma, -np.inf)
        log_terms = (
            gammaln(t + 1.0)
            - gammaln(np.maximum(t - tau, 0) + 1.0)
            + capture
            - (tau + 1) * (t - tau / 2.0) * log1b
        )
    log_terms = np.where(valid, log_terms, -np.inf)
    return np.exp(logsumexp(log_terms, axis=1))


def _rayleigh_tail_limit(rho_max: float) -> int:
    """Smallest t with Poisson(rho_max) mass beyond t under the configured threshold"""
    if rho_max <= 0.0:
        return 0
    return int(poisson.isf(settings.rayleigh_tail_mass, rho_max)) + 1


def _rayleigh_success(model: ReceiverModel, total: np.ndarray) -> np.ndarray:
    t_max = _rayleigh_tail_limit(float(np.max(total, initial=0.0)))
    # round up so nearby loads share one cached table
    t_max = -(-t_max // 16) * 16
    table = _rayleigh_conditional(model.gamma, model.b, t_max)
    t = np.arange(t_max + 1)
    weights = poisson.pmf(t, total[..., None])
    return np.clip(weights @ table, 0.0, 1.0)


def success_prob(model: ReceiverModel, rho) -> np.ndarray:
    """
    Per-class success probabilities at Poisson offered load rho

    rho has shape (..., K); the result has the same shape.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.ndim == 0 or rho.shape[-1] != model.num_classes:
        raise DimensionError(
            f"{model.kind.value} receiver serves {model.num_classes} classes, got load shape {rho.shape}"
        )
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise DomainError("offered load must be finite and nonnegative")

    if model.kind == ReceiverKind.COOPERATIVE_SA:
        rho_u = rho[..., 0]
        rho_e = rho[..., 1]
        half = np.exp(-(rho_u + 0.5 * rho_e))
        full = np.exp(-(rho_u + rho_e))
        urllc = 2.0 * half - full
        embb = half + rho_u * full
        return np.stack([urllc, embb], axis=-1)

    total = rho.sum(axis=-1)
    if model.kind == ReceiverKind.SLOTTED_ALOHA:
        per_slot = np.exp(-total)
    elif model.kind == ReceiverKind.D_FOLD:
        per_slot = _poisson_cdf_below(total, model.D)
    elif model.kind == ReceiverKind.D_FOLD_WITH_ERRORS:
        per_slot = (1.0 - model.p_err) * _poisson_cdf_below(total, model.D)
    elif model.kind == ReceiverKind.RAYLEIGH_CAPTURE:
        per_slot = _rayleigh_success(model, total)
    else:  # pragma: no cover - enum is closed
        raise DomainError(f"unknown receiver kind {model.kind}")
    return np.broadcast_to(per_slot[..., None], rho.shape).copy()


def floor_value(model: ReceiverModel) -> np.ndarray:
    """Success probabilities of an empty system"""
    return success_prob(model, np.zeros(model.num_classes))


def rayleigh_expected_decodes(N: int, gamma_db: float, b_db: float) -> float:
    """
    Mean number of packets resolved by intra-slot SIC among N colliding users

    Σ_{r=1}^{N} N!/(N-r)! · exp(-((1+b)^r - 1)/γ) / (1+b)^(r(N - 1 - (r-1)/2))
    """
    if N < 0:
        raise DomainError("N must be nonnegative")
    if N == 0:
        return 0.0
    gamma = db_to_linear(gamma_db)
    b = db_to_linear(b_db)
    log1b = math.log1p(b)
    r = np.arange(1, N + 1, dtype=float)
    growth = r * log1b
    capture = np.where(growth < _LOG_OVERFLOW, -np.expm1(np.minimum(growth, _LOG_OVERFLOW)) / gamma, -np.inf)
    log_terms = gammaln(N + 1.0) - gammaln(N - r + 1.0) + capture - r * (N - 1 - (r - 1) / 2.0) * log1b
    return float(np.exp(logsumexp(log_terms)))


def verify_monotone(
    model: ReceiverModel,
    samples: int = 1000,
    seed: Optional[int] = 0,
    rho_max: float = 8.0,
) -> float:
    """
    Largest violation of componentwise monotonicity over random ordered load pairs

    Logs a warning when it exceeds ``settings.monotonicity_warn_tol``.
    """
    rng = np.random.default_rng(seed)
    low = rng.uniform(0.0, rho_max, size=(samples, model.num_classes))
    high = low + rng.uniform(0.0, rho_max / 4.0, size=low.shape)
    violation = success_prob(model, high) - success_prob(model, low)
    worst = float(max(violation.max(initial=0.0), 0.0))
    if worst > settings.monotonicity_warn_tol:
        logger.warning(
            f"{model.kind.value} success probability increased by {worst:.3g} along a load ray; "
            "monotone-region results may not hold for this model"
        )
    return worst
