"""
Multi-class density evolution for coded Poisson receivers
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.config import settings
from app.models import BatchFixedPoint, FixedPointResult, StartPoint, as_load_rows
from app.services.degree import DegreeDistribution, erasure_transform, eval_excess, eval_Lambda
from app.services.error_handler import ConfigError, DimensionError, DomainError
from app.services.receivers import ReceiverModel, success_prob

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-12
REFERENCE_ROUNDING_LEVEL = 0.99999


@dataclass(frozen=True)
class SystemConfig:
    """
    K user classes routed onto J receiver classes

    routing[k][j] is the probability that a class-k copy goes to a class-j
    receiver; fractions[j] is the share of the T receivers in class j.
    """

    fractions: Tuple[float, ...]
    routing: Tuple[Tuple[float, ...], ...]
    dists: Tuple[DegreeDistribution, ...]
    models: Tuple[ReceiverModel, ...]
    p_sic: float = 0.0
    p_era: float = 0.0
    name: str = ""
    class_labels: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "routing", tuple(tuple(float(r) for r in row) for row in self.routing))
        object.__setattr__(self, "dists", tuple(self.dists))
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))

        K, J = self.K, self.J
        if J < 1:
            raise ConfigError("at least one receiver class is required", field="fractions")
        if any(f <= 0 for f in self.fractions):
            raise ConfigError("receiver fractions must be positive", field="fractions")
        if abs(sum(self.fractions) - 1.0) > SUM_TOLERANCE:
            raise ConfigError(f"receiver fractions sum to {sum(self.fractions):.12g}, expected 1", field="fractions")
        if K < 1:
            raise ConfigError("at least one user class is required", field="classes")
        if len(self.routing) != K:
            raise ConfigError(f"routing needs {K} rows, one per user class", field="routing")
        for k, row in enumerate(self.routing):
            if len(row) != J:
                raise ConfigError(f"routing row has {len(row)} entries, expected {J}", field=f"routing[{k}]")
            if any(r < 0 for r in row):
                raise ConfigError("routing probabilities must be nonnegative", field=f"routing[{k}]")
            if abs(sum(row) - 1.0) > SUM_TOLERANCE:
                raise ConfigError(f"routing row sums to {sum(row):.12g}, expected 1", field=f"routing[{k}]")
        if len(self.models) != J:
            raise ConfigError(f"expected {J} receiver models, got {len(self.models)}", field="receivers")
        for j, model in enumerate(self.models):
            if model.num_classes != K:
                raise ConfigError(
                    f"receiver model serves {model.num_classes} classes, system has {K}",
                    field=f"receivers[{j}]",
                )
        for k, dist in enumerate(self.dists):
            if dist.erased:
                raise ConfigError("user degree distributions must not be pre-thinned", field=f"classes[{k}].degrees")
        if not 0.0 <= self.p_sic <= 1.0:
            raise ConfigError(f"p_sic must lie in [0, 1], got {self.p_sic}", field="p_sic")
        if not 0.0 <= self.p_era < 1.0:
            raise ConfigError(f"p_era must lie in [0, 1), got {self.p_era}", field="p_era")
        if self.class_labels and len(self.class_labels) != K:
            raise ConfigError("one label per user class is required", field="classes")

    @property
    def K(self) -> int:
        return len(self.dists)

    @property
    def J(self) -> int:
        return len(self.fractions)

    @cached_property
    def R(self) -> np.ndarray:
        return np.asarray(self.routing, dtype=float)

    @cached_property
    def F(self) -> np.ndarray:
        return np.asarray(self.fractions, dtype=float)

    @cached_property
    def effective_dists(self) -> Tuple[DegreeDistribution, ...]:
        """Degree distributions after independent copy erasure"""
        return tuple(erasure_transform(d, self.p_era) for d in self.dists)

    @cached_property
    def mean_degrees(self) -> np.ndarray:
        """(1 - p_era) Λ′_k(1) for every class"""
        return np.array([d.mean for d in self.effective_dists])

    @cached_property
    def load_weights(self) -> np.ndarray:
        """(J, K) matrix with entry Λ′_k(1) r_{k,j} / F_j"""
        return (self.R / self.F[None, :]).T * self.mean_degrees[None, :]

    @property
    def satisfies_a3(self) -> bool:
        """Every class routes to every receiver class with positive probability"""
        return bool(np.all(self.R > 0))

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.class_labels or tuple(f"class{k + 1}" for k in range(self.K))

    def to_dict(self) -> Dict[str, Any]:
        """Canonical config-file form"""
        return {
            "name": self.name,
            "classes": [
                {"label": label, "degrees": dist.to_mapping()} for label, dist in zip(self.labels, self.dists)
            ],
            "receivers": [
                {"fraction": fraction, "model": model.to_dict()} for fraction, model in zip(self.fractions, self.models)
            ],
            "routing": [list(row) for row in self.routing],
            "p_sic": self.p_sic,
            "p_era": self.p_era,
        }

    @cached_property
    def digest(self) -> str:
        """sha256 of the canonical JSON form"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_q(q, num_classes: int) -> np.ndarray:
    arr = np.asarray(q, dtype=float)
    if arr.shape[-1:] != (num_classes,):
        raise DimensionError(f"q must have {num_classes} entries per row, got shape {arr.shape}")
    if np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("q must lie in [0, 1]")
    return arr


def offered_loads(config: SystemConfig, G) -> np.ndarray:
    """
    Initial offered load of every class at every receiver class

    Returns shape (J, K) for one load vector, (n, J, K) for n stacked rows.
    """
    G_arr = np.asarray(G, dtype=float)
    rows = as_load_rows(G_arr, config.K)
    loads = rows[:, None, :] * config.load_weights[None, :, :]
    return loads[0] if G_arr.ndim == 1 else loads


def _reception_failure(config: SystemConfig, q: np.ndarray, loads: np.ndarray) -> np.ndarray:
    """p_k = 1 - Σ_j r_{k,j} P_suc,k,j(q_eff ∘ ρ^(j)) for rows of q and loads"""
    q_eff = np.clip(config.p_sic + (1.0 - config.p_sic) * q, 0.0, 1.0)
    received = np.zeros_like(q)
    for j, model in enumerate(config.models):
        received += config.R[:, j] * success_prob(model, q_eff * loads[..., j, :])
    return np.clip(1.0 - received, 0.0, 1.0)


def _apply_excess(config: SystemConfig, p: np.ndarray) -> np.ndarray:
    out = np.empty_like(p)
    for k, dist in enumerate(config.effective_dists):
        out[..., k] = eval_excess(dist, p[..., k])
    return np.clip(out, 0.0, 1.0)


def _step(config: SystemConfig, q: np.ndarray, loads: np.ndarray) -> np.ndarray:
    return _apply_excess(config, _reception_failure(config, q, loads))


def de_step(config: SystemConfig, q, G) -> np.ndarray:
    """One density-evolution update q -> q′"""
    q_arr = _check_q(q, config.K)
    return _step(config, q_arr, offered_loads(config, G))


def success_probabilities(config: SystemConfig, G, q, reference_rounding: Optional[bool] = None) -> np.ndarray:
    """P̃_k = 1 - Λ_k(p_k) where p is the reception failure seen at edge state q"""
    q_arr = _check_q(q, config.K)
    p = _reception_failure(config, q_arr, offered_loads(config, G))
    out = np.empty_like(p)
    for k, dist in enumerate(config.effective_dists):
        out[..., k] = 1.0 - eval_Lambda(dist, p[..., k])
    out = np.clip(out, 0.0, 1.0)
    if settings.reference_rounding if reference_rounding is None else reference_rounding:
        out = np.where(out > REFERENCE_ROUNDING_LEVEL, 1.0, out)
    return out


def _initial(start: StartPoint, shape) -> np.ndarray:
    return np.ones(shape) if start == StartPoint.ALL_ONES else np.zeros(shape)


def de_fixed_point(
    config: SystemConfig,
    G,
    start: StartPoint = StartPoint.ALL_ONES,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    keep_trace: bool = False,
) -> FixedPointResult:
    """
    Iterate the update until the sup-norm change falls below tol

    From all-ones the limit is the largest fixed point, from all-zeros the
    smallest. Running out of iterations clears ``converged``; it is not an error.
    """
    tol = settings.de_tol if tol is None else tol
    max_iter = settings.de_max_iter if max_iter is None else max_iter
    if tol <= 0 or max_iter < 1:
        raise DomainError("tol must be positive and max_iter at least 1")

    loads = offered_loads(config, np.asarray(G, dtype=float).reshape(config.K))
    q = _initial(start, config.K)
    trace: Optional[List[np.ndarray]] = [q.copy()] if keep_trace else None
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        q_next = _step(config, q, loads)
        change = float(np.max(np.abs(q_next - q)))
        q = q_next
        if trace is not None:
            trace.append(q.copy())
        if change < tol:
            converged = True
            break
    if not converged:
        logger.debug(
            f"density evolution from {start.value} stopped after {max_iter} iterations at G={np.asarray(G).tolist()}"
        )
    return FixedPointResult(q_final=q, start=start, iterations=iterations, converged=converged, trace=trace)


def de_fixed_point_batch(
    config: SystemConfig,
    G_rows,
    start: StartPoint = StartPoint.ALL_ONES,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> BatchFixedPoint:
    """Vectorized fixed-point iteration; rows stop individually once converged"""
    tol = settings.de_tol if tol is None else tol
    max_iter = settings.de_max_iter if max_iter is None else max_iter
    if tol <= 0 or max_iter < 1:
        raise DomainError("tol must be positive and max_iter at least 1")

    rows = as_load_rows(G_rows, config.K)
    n = rows.shape[0]
    loads = offered_loads(config, rows).reshape(n, config.J, config.K)
    q = _initial(start, (n, config.K))
    iterations = np.zeros(n, dtype=int)
    converged = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        q_next = _step(config, q[active], loads[active])
        change = np.max(np.abs(q_next - q[active]), axis=1)
        q[active] = q_next
        iterations[active] = it
        done = change < tol
        converged[active[done]] = True
        active = active[~done]
    return BatchFixedPoint(q_final=q, start=start, iterations=iterations, converged=converged)


def throughput(
    config: SystemConfig,
    G,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    reference_rounding: Optional[bool] = None,
) -> Tuple[np.ndarray, float]:
    """Per-class throughput Θ_k = G_k P̃_k at the largest fixed point, and their sum"""
    G_arr = np.asarray(G, dtype=float).reshape(config.K)
    result = de_fixed_point(config, G_arr, StartPoint.ALL_ONES, tol=tol, max_iter=max_iter)
    per_class = G_arr * success_probabilities(config, G_arr, result.q_final, reference_rounding)
    return per_class, float(per_class.sum())


def trace_rows(
    config: SystemConfig, G, result: FixedPointResult, reference_rounding: Optional[bool] = None
) -> List[List[float]]:
    """Rows (iteration, q_1..q_K, P̃_1..P̃_K) for a traced fixed-point run"""
    if result.trace is None:
        raise DomainError("fixed-point result was computed without keep_trace")
    G_arr = np.asarray(G, dtype=float).reshape(config.K)
    rows = []
    for i, q in enumerate(result.trace):
        p_suc = success_probabilities(config, G_arr, q, reference_rounding)
        rows.append([i, *q.tolist(), *p_suc.tolist()])
    return rows
