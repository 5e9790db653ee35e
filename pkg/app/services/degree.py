"""
Degree distributions of user nodes and their generating functions
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Mapping, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize
from scipy.stats import binom

from app.services.error_handler import DomainError, PreconditionError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

SUM_TOLERANCE = 1e-12
INVERSE_XTOL = 1e-12
INVERSE_MAX_ITER = 200


def _check_unit_interval(x: ArrayLike, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class DegreeDistribution:
    """
    Distribution of the number of copies a user transmits

    coeffs[l] is the probability of transmitting l copies. User-facing
    distributions put no mass on degree 0; erasure-thinned distributions
    (``erased=True``) may.
    """

    coeffs: tuple
    erased: bool = False

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise DomainError("degree distribution needs at least one coefficient")
        if np.any(coeffs < 0) or not np.all(np.isfinite(coeffs)):
            raise DomainError("degree weights must be finite and nonnegative")
        if abs(coeffs.sum() - 1.0) > SUM_TOLERANCE:
            raise DomainError(f"degree weights sum to {coeffs.sum():.15g}, expected 1")
        if not self.erased and coeffs[0] != 0.0:
            raise DomainError("every user transmits at least once: weight on degree 0 must be 0")
        # trailing zeros carry no information and would skew max_degree
        trimmed = np.trim_zeros(coeffs, "b")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in trimmed))

    @classmethod
    def from_mapping(cls, weights: Mapping[Union[int, str], float]) -> "DegreeDistribution":
        """Build from {degree: weight}, e.g. {"2": 0.5102, "4": 0.4898}"""
        if not weights:
            raise DomainError("degree mapping is empty")
        parsed: Dict[int, float] = {}
        for degree, weight in weights.items():
            d = int(degree)
            if d < 0:
                raise DomainError(f"negative degree {d}")
            parsed[d] = parsed.get(d, 0.0) + float(weight)
        coeffs = np.zeros(max(parsed) + 1)
        for d, w in parsed.items():
            coeffs[d] = w
        return cls(tuple(coeffs))

    @classmethod
    def regular(cls, degree: int) -> "DegreeDistribution":
        """Every user sends exactly ``degree`` copies"""
        if degree < 1:
            raise DomainError("regular degree must be at least 1")
        coeffs = np.zeros(degree + 1)
        coeffs[degree] = 1.0
        return cls(tuple(coeffs))

    def to_mapping(self) -> Dict[str, float]:
        return {str(d): w for d, w in enumerate(self.coeffs) if w > 0}

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    @cached_property
    def derivative(self) -> np.ndarray:
        if self.array.size == 1:
            return np.zeros(1)
        return P.polyder(self.array)

    @property
    def max_degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def min_degree_two(self) -> bool:
        """True iff no user sends a single copy"""
        return len(self.coeffs) < 2 or self.coeffs[1] == 0.0

    @cached_property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.array.size), self.array))

    @cached_property
    def excess(self) -> np.ndarray:
        """Coefficients of the excess degree distribution"""
        if self.mean == 0.0:
            raise PreconditionError("excess distribution undefined when every copy is erased")
        return self.derivative / self.mean


def eval_Lambda(dist: DegreeDistribution, x: ArrayLike) -> ArrayLike:
    """Generating function Λ(x) = Σ Λ_l x^l"""
    arr = _check_unit_interval(x)
    return P.polyval(arr, dist.array)


def eval_derivative(dist: DegreeDistribution, x: ArrayLike) -> ArrayLike:
    """Λ′(x)"""
    arr = _check_unit_interval(x)
    return P.polyval(arr, dist.derivative)


def mean_degree(dist: DegreeDistribution) -> float:
    """Λ′(1), the mean number of copies per user"""
    return dist.mean


def eval_excess(dist: DegreeDistribution, x: ArrayLike) -> ArrayLike:
    """Excess degree generating function λ(x) = Λ′(x)/Λ′(1)"""
    arr = _check_unit_interval(x)
    return P.polyval(arr, dist.excess)


def inverse_excess(dist: DegreeDistribution, q: float) -> float:
    """
    Solve λ(p) = q for p by bisection

    λ is a strictly increasing bijection of [0, 1] only when no user sends a
    single copy, so the inverse is refused otherwise.
    """
    if not dist.min_degree_two:
        raise PreconditionError("inverse of the excess distribution requires zero weight on degree 1")
    q = float(_check_unit_interval(q, "q"))
    if q == 0.0:
        return 0.0
    if q == 1.0:
        return 1.0
    return float(
        optimize.bisect(
            lambda p: P.polyval(p, dist.excess) - q,
            0.0,
            1.0,
            xtol=INVERSE_XTOL,
            maxiter=INVERSE_MAX_ITER,
        )
    )


def erasure_transform(dist: DegreeDistribution, p_era: float) -> DegreeDistribution:
    """
    Thin every copy independently with erasure probability p_era

    The result has generating function Λ(p_era + (1 - p_era) x) and may put
    mass on degree 0; it is flagged ``erased``.
    """
    if not 0.0 <= p_era <= 1.0:
        raise DomainError(f"p_era must lie in [0, 1], got {p_era}")
    if p_era == 0.0:
        return DegreeDistribution(dist.coeffs, erased=dist.erased)
    degrees = np.arange(dist.array.size)
    # column l holds Binomial(l, 1 - p_era) over surviving copy counts
    survivors = binom.pmf(degrees[:, None], degrees[None, :], 1.0 - p_era)
    coeffs = survivors @ dist.array
    coeffs = np.clip(coeffs, 0.0, None)
    coeffs /= coeffs.sum()
    return DegreeDistribution(tuple(coeffs), erased=True)


def soliton_like(k_max: int) -> DegreeDistribution:
    """
    Truncated distribution with weight 1/(k(k+1)) on degree k+1

    The finite sum falls short of 1 by 1/(k_max + 1); that residual goes to the
    top degree k_max + 1 so the large-k_max threshold behaviour is kept.
    """
    if k_max < 1:
        raise DomainError("k_max must be at least 1")
    coeffs = np.zeros(k_max + 2)
    k = np.arange(1, k_max + 1)
    coeffs[k + 1] = 1.0 / (k * (k + 1.0))
    coeffs[k_max + 1] += 1.0 - coeffs.sum()
    return DegreeDistribution(tuple(coeffs))


def mixture(weights: Sequence[float], dists: Sequence[DegreeDistribution]) -> DegreeDistribution:
    """Convex combination of distributions, coefficient by coefficient"""
    w = np.asarray(weights, dtype=float)
    if w.size != len(dists) or w.size == 0:
        raise DomainError("mixture needs one weight per distribution")
    if np.any(w < 0) or w.sum() <= 0:
        raise DomainError("mixture weights must be nonnegative with positive sum")
    w = w / w.sum()
    width = max(d.array.size for d in dists)
    coeffs = np.zeros(width)
    for weight, dist in zip(w, dists):
        coeffs[: dist.array.size] += weight * dist.array
    return DegreeDistribution(tuple(coeffs), erased=any(d.erased for d in dists))
