"""
Stability analysis: load classification, epsilon-stability, sufficient-condition
checks and one-dimensional percolation thresholds
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize

from app.config import settings
from app.models import (
    Criterion,
    CriterionKind,
    EpsilonSpec,
    StabilityVerdict,
    StartPoint,
    Tolerances,
    Verdict,
    as_load_rows,
)
from app.services.degree import DegreeDistribution, eval_excess, eval_Lambda
from app.services.error_handler import (
    BracketError,
    DimensionError,
    DomainError,
    PreconditionError,
    ResourceGuardError,
)
from app.services.evolution import (
    SystemConfig,
    _reception_failure,
    de_fixed_point_batch,
    offered_loads,
    success_probabilities,
)
from app.services.receivers import floor_value, success_prob, verify_monotone

logger = logging.getLogger(__name__)

THRESHOLD_SCAN_POINTS = 20_000
A2_PROBE_LOAD = 0.5
FLOOR_TOLERANCE = 1e-12
# verdict arrays hold Verdict values, never the enum members
VERDICT_DTYPE = f"<U{max(len(v.value) for v in Verdict)}"


@dataclass
class BatchClassification:
    """Verdicts and both fixed-point limits for a stack of load vectors"""

    loads: np.ndarray  # (n, K)
    verdicts: np.ndarray  # (n,) of Verdict values, VERDICT_DTYPE
    q_from_ones: np.ndarray
    q_from_zeros: np.ndarray
    converged: np.ndarray  # (n,) bool, both runs converged
    iterations: np.ndarray  # (n, 2)

    def __len__(self) -> int:
        return len(self.verdicts)

    def verdict_at(self, index: int) -> Verdict:
        return Verdict(str(self.verdicts[index]))


def _decide(
    q_ones: np.ndarray,
    q_zeros: np.ndarray,
    converged: np.ndarray,
    tols: Tolerances,
) -> np.ndarray:
    """
    Verdicts from iterates that bracket every fixed point

    q_zeros <= smallest fixed point <= largest fixed point <= q_ones holds after
    any number of iterations, so Stable and WeaklyStable need no convergence.
    Unstable does.
    """
    stable = np.max(q_ones, axis=1) < tols.stable_tol
    unique = np.max(np.abs(q_ones - q_zeros), axis=1) < tols.equal_tol
    verdicts = np.where(converged, Verdict.UNSTABLE.value, Verdict.INDETERMINATE.value).astype(VERDICT_DTYPE)
    verdicts[unique] = Verdict.WEAKLY_STABLE.value
    verdicts[stable] = Verdict.STABLE.value
    return verdicts


def _classify_rows(config: SystemConfig, rows: np.ndarray, tols: Tolerances) -> BatchClassification:
    ones = de_fixed_point_batch(config, rows, StartPoint.ALL_ONES, tol=tols.tol, max_iter=tols.max_iter)
    zeros = de_fixed_point_batch(config, rows, StartPoint.ALL_ZEROS, tol=tols.tol, max_iter=tols.max_iter)
    converged = ones.converged & zeros.converged
    return BatchClassification(
        loads=rows,
        verdicts=_decide(ones.q_final, zeros.q_final, converged, tols),
        q_from_ones=ones.q_final,
        q_from_zeros=zeros.q_final,
        converged=converged,
        iterations=np.stack([ones.iterations, zeros.iterations], axis=1),
    )


def _enforce_ray_uniqueness(config: SystemConfig, batch: BatchClassification, tols: Tolerances) -> None:
    """Downgrade weak verdicts whose dominated ray points lose uniqueness"""
    weak = np.flatnonzero(batch.verdicts == Verdict.WEAKLY_STABLE.value)
    if weak.size == 0:
        return
    m = max(1, tols.weak_samples)
    scales = np.arange(1, m + 1) / m
    probes = (scales[None, :, None] * batch.loads[weak][:, None, :]).reshape(-1, config.K)
    probe_batch = _classify_rows(config, probes, tols)
    ok = np.isin(probe_batch.verdicts, (Verdict.STABLE.value, Verdict.WEAKLY_STABLE.value)).reshape(weak.size, m)
    failed = weak[~ok.all(axis=1)]
    if failed.size:
        logger.debug(f"{failed.size} weak verdict(s) lost uniqueness at a dominated load")
        batch.verdicts[failed] = Verdict.UNSTABLE.value


def classify_batch(config: SystemConfig, G_rows, tols: Optional[Tolerances] = None) -> BatchClassification:
    """Classify many load vectors with one vectorized pair of fixed-point runs"""
    tols = tols or Tolerances()
    rows = as_load_rows(G_rows, config.K)
    batch = _classify_rows(config, rows, tols)
    if tols.strict_weak:
        _enforce_ray_uniqueness(config, batch, tols)
    return batch


def classify_load(config: SystemConfig, G, tols: Optional[Tolerances] = None) -> StabilityVerdict:
    """
    Classify one offered load as Stable, WeaklyStable, Unstable or Indeterminate

    Both fixed-point limits are computed; Indeterminate means the iteration cap
    was reached before the evidence was conclusive.
    """
    tols = tols or Tolerances()
    G_arr = np.asarray(G, dtype=float)
    if G_arr.ndim != 1:
        raise DimensionError("classify_load takes a single load vector")
    batch = classify_batch(config, G_arr, tols)
    q_ones = batch.q_from_ones[0]
    verdict = StabilityVerdict(
        verdict=batch.verdict_at(0),
        q_from_ones=q_ones,
        q_from_zeros=batch.q_from_zeros[0],
        success_probs=success_probabilities(config, G_arr, q_ones, reference_rounding=tols.reference_rounding),
        converged=bool(batch.converged[0]),
        iterations=(int(batch.iterations[0, 0]), int(batch.iterations[0, 1])),
    )
    if verdict.verdict == Verdict.INDETERMINATE:
        logger.warning(
            f"fixed points at G={G_arr.tolist()} did not converge within {batch.iterations[0].max()} iterations"
        )
    return verdict


def _epsilon_levels(config: SystemConfig, eps: EpsilonSpec) -> np.ndarray:
    """λ_k(ε_k), the edge of the q-space box of epsilon-stable fixed points"""
    eps_arr = eps.as_array()
    if eps_arr.size != config.K:
        raise DimensionError(f"epsilon needs {config.K} entries, got {eps_arr.size}")
    return np.array([eval_excess(d, e) for d, e in zip(config.effective_dists, eps_arr)])


def _require_min_degree_two(config: SystemConfig) -> None:
    if not all(d.min_degree_two for d in config.effective_dists):
        raise PreconditionError(
            "epsilon-stability needs every packet sent at least twice; "
            "a degree distribution (after erasures) puts weight on degree 1"
        )


def guaranteed_success(config: SystemConfig, eps: EpsilonSpec) -> np.ndarray:
    """Per-class success lower bound 1 - Λ_k(ε_k) for an epsilon-stable load"""
    eps_arr = eps.as_array()
    if eps_arr.size != config.K:
        raise DimensionError(f"epsilon needs {config.K} entries, got {eps_arr.size}")
    return np.array([1.0 - eval_Lambda(d, e) for d, e in zip(config.effective_dists, eps_arr)])


def a1g_surrogate_holds(config: SystemConfig, eps: EpsilonSpec) -> bool:
    """Success probability at zero load is at least 1 - ε_k for every receiver class"""
    eps_arr = eps.as_array()
    return all(bool(np.all(floor_value(model) >= 1.0 - eps_arr - FLOOR_TOLERANCE)) for model in config.models)


def epsilon_stable(
    config: SystemConfig,
    G,
    eps: EpsilonSpec,
    tols: Optional[Tolerances] = None,
) -> Tuple[bool, np.ndarray]:
    """
    Test whether the largest fixed point lies in the box q_k <= λ_k(ε_k)

    Returns the flag and the guaranteed per-class success 1 - Λ_k(ε_k); the
    bound is reported whether or not the flag holds.
    """
    _require_min_degree_two(config)
    tols = tols or Tolerances()
    levels = _epsilon_levels(config, eps)
    bound = guaranteed_success(config, eps)
    if not a1g_surrogate_holds(config, eps):
        logger.warning(f"zero-load success probability falls below 1 - eps for eps={list(eps.eps)}")

    rows = as_load_rows(G, config.K)
    ones = de_fixed_point_batch(config, rows, StartPoint.ALL_ONES, tol=tols.tol, max_iter=tols.max_iter)
    # the iterate from all-ones dominates the limit, so a pass is final
    flag = bool(np.all(ones.q_final[0] <= levels))
    return flag, bound


def epsilon_mask(config: SystemConfig, batch: BatchClassification, eps: EpsilonSpec) -> np.ndarray:
    """Row-wise epsilon-stability from an existing batch classification"""
    _require_min_degree_two(config)
    levels = _epsilon_levels(config, eps)
    return np.all(batch.q_from_ones <= levels[None, :], axis=1)


def criterion_mask(config: SystemConfig, batch: BatchClassification, criterion: Criterion) -> np.ndarray:
    """Which rows satisfy the criterion; Indeterminate never does"""
    if criterion.kind == CriterionKind.STABLE:
        return batch.verdicts == Verdict.STABLE.value
    if criterion.kind == CriterionKind.WEAKLY_STABLE:
        return np.isin(batch.verdicts, (Verdict.STABLE.value, Verdict.WEAKLY_STABLE.value))
    return epsilon_mask(config, batch, criterion.eps)


def _lattice(grid_n: int, K: int) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, grid_n)
    return np.array(list(itertools.product(axis, repeat=K)), dtype=float)


def check_sufficient_stability(
    config: SystemConfig,
    G,
    grid_n: int = 257,
    eps: Optional[EpsilonSpec] = None,
) -> bool:
    """
    Lattice check of the sufficient condition for (epsilon-)stability

    At every lattice point outside the excluded box some class must strictly
    contract under one update. When no user sends a single copy the check runs
    in p-space (reception failure); otherwise in q-space. True certifies the
    load up to lattice resolution; False is inconclusive.
    """
    if grid_n < 2:
        raise DomainError("grid_n must be at least 2")
    if grid_n ** config.K > settings.region_max_cells:
        raise ResourceGuardError(
            f"{grid_n}^{config.K} lattice points exceed the cap of {settings.region_max_cells}"
        )
    G_arr = np.asarray(G, dtype=float).reshape(config.K)
    loads = offered_loads(config, G_arr)
    points = _lattice(grid_n, config.K)
    p_space = all(d.min_degree_two for d in config.effective_dists)

    if eps is None:
        outside = np.any(points > 0.0, axis=1)
    elif p_space:
        outside = np.any(points > eps.as_array()[None, :], axis=1)
    else:
        outside = np.any(points > _epsilon_levels(config, eps)[None, :], axis=1)
    points = points[outside]
    if points.size == 0:
        return True

    chunk = settings.region_chunk_size
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        if p_space:
            q = np.column_stack([eval_excess(d, block[:, k]) for k, d in enumerate(config.effective_dists)])
            image = _reception_failure(config, q, loads)
        else:
            failure = _reception_failure(config, block, loads)
            image = np.column_stack([eval_excess(d, failure[:, k]) for k, d in enumerate(config.effective_dists)])
        contracts = np.any(block > image, axis=1)
        if not contracts.all():
            witness = block[np.argmin(contracts)]
            logger.debug(f"sufficient condition fails at lattice point {witness.tolist()}")
            return False
    return True


def _irsa_ratio(dist: DegreeDistribution, p: np.ndarray) -> np.ndarray:
    """-log(1 - p) / Λ′(p) on (0, 1)"""
    with np.errstate(divide="ignore"):
        return -np.log1p(-p) / P.polyval(p, dist.derivative)


def irsa_threshold(dist: DegreeDistribution, tol: Optional[float] = None) -> float:
    """
    Stability threshold of single-class IRSA over slotted ALOHA receivers

    inf over p in (0, 1) of -log(1 - p)/Λ′(p), located by a dense scan and
    refined by golden-section search. Loads strictly below it are stable.
    """
    if not dist.min_degree_two:
        raise PreconditionError("the IRSA threshold needs zero weight on degree 1")
    tol = settings.threshold_tol if tol is None else tol
    p = np.linspace(0.0, 1.0, THRESHOLD_SCAN_POINTS + 1)[1:-1]
    values = _irsa_ratio(dist, p)
    i = int(np.argmin(values))
    best = float(values[i])
    # as p -> 0 the ratio tends to 1/(2Λ_2)
    if len(dist.coeffs) > 2 and dist.coeffs[2] > 0:
        best = min(best, 1.0 / (2.0 * dist.coeffs[2]))
    if 0 < i < p.size - 1:
        try:
            result = optimize.minimize_scalar(
                lambda x: float(_irsa_ratio(dist, np.asarray(x))),
                bracket=(p[i - 1], p[i], p[i + 1]),
                method="golden",
                tol=tol,
            )
            best = min(best, float(result.fun))
        except ValueError:
            # flat neighbourhood, the scan minimum stands
            logger.debug(f"golden refinement skipped at p={p[i]:.6f}")
    return best


def _meets(
    config: SystemConfig,
    G: np.ndarray,
    criterion: Criterion,
    tols: Tolerances,
) -> bool:
    batch = classify_batch(config, G, tols)
    if batch.verdict_at(0) == Verdict.INDETERMINATE and criterion.kind != CriterionKind.EPSILON_STABLE:
        logger.warning(f"indeterminate verdict at G={G.tolist()} counted as failing the criterion")
    return bool(criterion_mask(config, batch, criterion)[0])


def percolation_threshold_1d(
    config: SystemConfig,
    direction: Sequence[float],
    bracket: Tuple[float, float] = (0.0, 2.0),
    criterion: Optional[Criterion] = None,
    tols: Optional[Tolerances] = None,
    tol: Optional[float] = None,
) -> float:
    """
    Multiplier t at which t·direction stops meeting the criterion

    Bisection is valid because every criterion is monotone along load rays.
    """
    criterion = criterion or Criterion()
    tols = tols or Tolerances()
    tol = settings.threshold_tol if tol is None else tol
    d = np.asarray(direction, dtype=float)
    if d.shape != (config.K,):
        raise DimensionError(f"direction needs {config.K} entries, got shape {d.shape}")
    if np.any(d < 0) or not np.any(d > 0):
        raise DomainError("direction must be nonnegative and nonzero")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0.0 <= lo < hi:
        raise BracketError(f"bracket ({lo}, {hi}) must satisfy 0 <= lo < hi")

    if not _meets(config, lo * d, criterion, tols):
        raise BracketError(f"load {lo}·direction already fails the {criterion.label()} criterion")
    if _meets(config, hi * d, criterion, tols):
        raise BracketError(f"load {hi}·direction still meets the {criterion.label()} criterion")

    def sign(t: float) -> float:
        return 1.0 if _meets(config, t * d, criterion, tols) else -1.0

    threshold = optimize.bisect(sign, lo, hi, xtol=tol)
    logger.info(f"{criterion.label()} threshold along {d.tolist()}: {threshold:.6f}")
    return float(threshold)


@dataclass
class AssumptionReport:
    """Which structural assumptions a configuration satisfies"""

    a1: bool
    a1w: bool
    a1w_violation: float
    a2: bool
    a3: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "A1": self.a1,
            "A1w": self.a1w,
            "A1w_violation": self.a1w_violation,
            "A2": self.a2,
            "A3": self.a3,
        }


def check_assumptions(config: SystemConfig, samples: int = 1000, seed: int = 0) -> AssumptionReport:
    """
    Check the receiver and routing assumptions numerically

    A1: every receiver succeeds with certainty at zero load. A1w: success is
    nonincreasing along sampled load pairs. A2: any small positive load on a
    single class pushes success below one. A3: every routing entry is positive.
    """
    a1 = all(bool(np.all(np.abs(floor_value(m) - 1.0) <= FLOOR_TOLERANCE)) for m in config.models)
    violation = max(verify_monotone(m, samples=samples, seed=seed) for m in config.models)
    a2 = True
    for model in config.models:
        for k in range(config.K):
            probe = np.zeros(config.K)
            probe[k] = A2_PROBE_LOAD
            if np.any(success_prob(model, probe) >= 1.0):
                a2 = False
    return AssumptionReport(
        a1=a1,
        a1w=violation <= settings.monotonicity_warn_tol,
        a1w_violation=violation,
        a2=a2,
        a3=config.satisfies_a3,
    )
