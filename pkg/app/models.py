"""
Shared enums and result records for cprstab
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings


class StartPoint(str, Enum):
    """Initial vector of a density-evolution run"""
    ALL_ONES = "ones"
    ALL_ZEROS = "zeros"


class Verdict(str, Enum):
    """Outcome of classifying one offered load"""
    STABLE = "stable"
    WEAKLY_STABLE = "weak"
    UNSTABLE = "unstable"
    INDETERMINATE = "indeterminate"


class CriterionKind(str, Enum):
    """Region membership criteria that are monotone along load rays"""
    STABLE = "stable"
    WEAKLY_STABLE = "weak"
    EPSILON_STABLE = "epsilon"


class ReceiverKind(str, Enum):
    """Poisson receiver models with closed-form success probabilities"""
    SLOTTED_ALOHA = "slotted_aloha"
    D_FOLD = "dfold"
    D_FOLD_WITH_ERRORS = "dfold_errors"
    COOPERATIVE_SA = "cooperative_sa"
    RAYLEIGH_CAPTURE = "rayleigh"


@dataclass(frozen=True)
class EpsilonSpec:
    """Per-class QoS slack for epsilon-stability"""

    eps: Tuple[float, ...]

    def __post_init__(self):
        # local: importing app.services runs its __init__, which imports this module
        from app.services.error_handler import DomainError

        if any(not (0.0 <= e <= 1.0) for e in self.eps):
            raise DomainError(f"epsilon entries must lie in [0, 1], got {self.eps}")

    @classmethod
    def uniform(cls, value: float, num_classes: int) -> "EpsilonSpec":
        return cls(tuple([float(value)] * num_classes))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.eps, dtype=float)


@dataclass(frozen=True)
class Criterion:
    """A membership criterion, with epsilon when kind is EPSILON_STABLE"""

    kind: CriterionKind = CriterionKind.STABLE
    eps: Optional[EpsilonSpec] = None

    def __post_init__(self):
        from app.services.error_handler import DomainError

        if self.kind == CriterionKind.EPSILON_STABLE and self.eps is None:
            raise DomainError("epsilon criterion requires an EpsilonSpec")

    def label(self) -> str:
        if self.kind == CriterionKind.EPSILON_STABLE:
            return f"epsilon{list(self.eps.eps)}"
        return self.kind.value

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "eps": list(self.eps.eps) if self.eps is not None else None,
        }


@dataclass(frozen=True)
class Tolerances:
    """Numerical knobs shared by classification, thresholds and maps"""

    tol: float = field(default_factory=lambda: settings.de_tol)
    max_iter: int = field(default_factory=lambda: settings.de_max_iter)
    stable_tol: float = field(default_factory=lambda: settings.stable_tol)
    equal_tol: float = field(default_factory=lambda: settings.equal_tol)
    strict_weak: bool = False
    weak_samples: int = field(default_factory=lambda: settings.strict_weak_samples)
    reference_rounding: bool = field(default_factory=lambda: settings.reference_rounding)

    @classmethod
    def reference(cls, **overrides) -> "Tolerances":
        """Tolerances with the reference iteration cap and success rounding"""
        return cls(**{"max_iter": settings.reference_max_iter, "reference_rounding": True, **overrides})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tol": self.tol,
            "max_iter": self.max_iter,
            "stable_tol": self.stable_tol,
            "equal_tol": self.equal_tol,
            "strict_weak": self.strict_weak,
            "weak_samples": self.weak_samples,
            "reference_rounding": self.reference_rounding,
        }


@dataclass
class FixedPointResult:
    """Outcome of iterating the density-evolution map from one endpoint"""

    q_final: np.ndarray
    start: StartPoint
    iterations: int
    converged: bool
    trace: Optional[List[np.ndarray]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "q_final": self.q_final.tolist(),
            "start": self.start.value,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass
class BatchFixedPoint:
    """Fixed-point iteration over many load rows at once"""

    q_final: np.ndarray  # (n, K)
    start: StartPoint
    iterations: np.ndarray  # (n,)
    converged: np.ndarray  # (n,) bool


@dataclass
class StabilityVerdict:
    """Classification of one offered load"""

    verdict: Verdict
    q_from_ones: np.ndarray
    q_from_zeros: np.ndarray
    success_probs: np.ndarray
    converged: bool = True
    iterations: Tuple[int, int] = (0, 0)

    @property
    def gap(self) -> float:
        return float(np.max(np.abs(self.q_from_ones - self.q_from_zeros), initial=0.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "q_from_ones": self.q_from_ones.tolist(),
            "q_from_zeros": self.q_from_zeros.tolist(),
            "success_probs": self.success_probs.tolist(),
            "gap": self.gap,
            "converged": self.converged,
            "iterations": list(self.iterations),
        }


def as_load_rows(values: Sequence[float] | np.ndarray, num_classes: int) -> np.ndarray:
    """Coerce a load vector or a stack of them to shape (n, K)"""
    from app.services.error_handler import DimensionError, DomainError

    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != num_classes:
        raise DimensionError(f"expected load vectors with {num_classes} entries, got shape {np.shape(values)}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError("offered loads must be finite and nonnegative")
    return arr
