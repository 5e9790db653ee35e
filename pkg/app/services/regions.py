"""
Region mapping over the load space: grid classification, boundary extraction,
throughput surfaces, convexity probes and one-dimensional sweeps
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.debug_utils import DebugTimer, resolve_workers
from app.models import Criterion, CriterionKind, Tolerances, Verdict
from app.services.error_handler import DimensionError, DomainError, ResourceGuardError
from app.services.evolution import SystemConfig, success_probabilities
from app.services.stability import VERDICT_DTYPE, classify_batch, criterion_mask

logger = logging.getLogger(__name__)

DECIMALS = 12


@dataclass(frozen=True)
class Axis:
    """Lattice lo, lo + step, ... up to hi; empty when hi < lo"""

    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if self.lo < 0:
            raise DomainError(f"axis lower bound must be nonnegative, got {self.lo}")
        if not self.step > 0:
            raise DomainError(f"axis step must be positive, got {self.step}")

    @property
    def size(self) -> int:
        if self.hi < self.lo:
            return 0
        return int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1

    def values(self) -> np.ndarray:
        return np.round(self.lo + self.step * np.arange(self.size), DECIMALS)

    def to_dict(self) -> Dict[str, float]:
        return {"lo": self.lo, "hi": self.hi, "step": self.step}


@dataclass(frozen=True)
class GridSpec:
    """One axis per user class"""

    axes: Tuple[Axis, ...]

    @classmethod
    def uniform(cls, num_classes: int, lo: float = 0.0, hi: float = 1.0, step: Optional[float] = None) -> "GridSpec":
        step = settings.region_step if step is None else step
        return cls(tuple(Axis(lo, hi, step) for _ in range(num_classes)))

    @property
    def K(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(axis.size for axis in self.axes)

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.shape)) if self.axes else 0

    def points(self) -> np.ndarray:
        """(n, K) lattice points, last axis varying fastest"""
        if self.num_cells == 0:
            return np.zeros((0, self.K))
        mesh = np.meshgrid(*[axis.values() for axis in self.axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {"axes": [axis.to_dict() for axis in self.axes]}


@dataclass
class RegionMap:
    """Per-cell verdicts, success probabilities and throughput over a grid"""

    grid: GridSpec
    criterion: Criterion
    loads: np.ndarray  # (n, K)
    verdicts: np.ndarray  # (n,) of Verdict values
    satisfied: np.ndarray  # (n,) bool
    success_probs: np.ndarray  # (n, K)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def throughput(self) -> np.ndarray:
        return self.loads * self.success_probs

    @property
    def total_throughput(self) -> np.ndarray:
        return self.throughput.sum(axis=1)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.grid.shape

    def satisfied_grid(self) -> np.ndarray:
        return self.satisfied.reshape(self.shape)

    def csv_header(self) -> List[str]:
        K = self.grid.K
        return (
            [f"G{k + 1}" for k in range(K)]
            + ["verdict", "satisfied"]
            + [f"P{k + 1}" for k in range(K)]
            + [f"theta{k + 1}" for k in range(K)]
            + ["theta_total"]
        )

    def csv_rows(self) -> List[List[Any]]:
        rows = []
        theta = self.throughput
        for i in range(len(self.verdicts)):
            rows.append(
                [_fmt(g) for g in self.loads[i]]
                + [str(self.verdicts[i]), int(self.satisfied[i])]
                + [_fmt(p) for p in self.success_probs[i]]
                + [_fmt(t) for t in theta[i]]
                + [_fmt(theta[i].sum())]
            )
        return rows

    def to_dict(self) -> Dict[str, Any]:
        """Compact JSON form: axes plus flat per-cell arrays"""
        return {
            "metadata": self.metadata,
            "grid": self.grid.to_dict(),
            "shape": list(self.shape),
            "criterion": self.criterion.to_dict(),
            "verdicts": self.verdicts.tolist(),
            "satisfied": [int(s) for s in self.satisfied],
            "success_probs": np.round(self.success_probs, DECIMALS).tolist(),
            "theta_total": np.round(self.total_throughput, DECIMALS).tolist(),
        }


def _fmt(value: float) -> str:
    return repr(round(float(value), DECIMALS))


def _evaluate_chunk(
    config: SystemConfig,
    loads: np.ndarray,
    criterion: Criterion,
    tols: Tolerances,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    batch = classify_batch(config, loads, tols)
    satisfied = criterion_mask(config, batch, criterion)
    probs = success_probabilities(config, loads, batch.q_from_ones, reference_rounding=tols.reference_rounding)
    return batch.verdicts, satisfied, probs


def map_region(
    config: SystemConfig,
    grid: GridSpec,
    criterion: Optional[Criterion] = None,
    tols: Optional[Tolerances] = None,
    workers: Optional[int] = None,
) -> RegionMap:
    """
    Classify every lattice point of the grid

    Cells are evaluated in chunks, across worker processes when more than one
    worker is available. Output order is the lattice order regardless of workers.
    """
    criterion = criterion or Criterion()
    tols = tols or Tolerances()
    if grid.K != config.K:
        raise DimensionError(f"grid has {grid.K} axes, system has {config.K} classes")
    n = grid.num_cells
    if n > settings.region_max_cells:
        raise ResourceGuardError(
            f"grid has {n} cells, cap is {settings.region_max_cells}; use a coarser step"
        )
    metadata = {
        "config": config.name,
        "config_digest": config.digest,
        "criterion": criterion.label(),
        "tolerances": tols.to_dict(),
        "max_iter": tols.max_iter,
    }
    loads = grid.points()
    if n == 0:
        logger.info("empty grid, nothing to classify")
        return RegionMap(
            grid=grid,
            criterion=criterion,
            loads=loads,
            verdicts=np.zeros(0, dtype=VERDICT_DTYPE),
            satisfied=np.zeros(0, dtype=bool),
            success_probs=np.zeros((0, config.K)),
            metadata=metadata,
        )

    chunk = max(1, settings.region_chunk_size)
    chunks = [loads[i : i + chunk] for i in range(0, n, chunk)]
    n_workers = min(resolve_workers(settings.workers if workers is None else workers), len(chunks))

    with DebugTimer(f"map_region {config.name or 'config'} ({n} cells, {n_workers} workers)"):
        if n_workers > 1:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                parts = list(
                    pool.map(
                        _evaluate_chunk,
                        [config] * len(chunks),
                        chunks,
                        [criterion] * len(chunks),
                        [tols] * len(chunks),
                    )
                )
        else:
            parts = [_evaluate_chunk(config, c, criterion, tols) for c in chunks]

    verdicts = np.concatenate([p[0] for p in parts])
    satisfied = np.concatenate([p[1] for p in parts])
    probs = np.concatenate([p[2] for p in parts])
    indeterminate = int(np.sum(verdicts == Verdict.INDETERMINATE.value))
    if indeterminate:
        logger.warning(f"{indeterminate} of {n} cells are indeterminate and counted as unsatisfied")
    logger.info(f"mapped {n} cells: {int(satisfied.sum())} satisfy {criterion.label()}")
    return RegionMap(
        grid=grid,
        criterion=criterion,
        loads=loads,
        verdicts=verdicts,
        satisfied=satisfied,
        success_probs=probs,
        metadata=metadata,
    )


def throughput_surface(
    config: SystemConfig,
    grid: GridSpec,
    tols: Optional[Tolerances] = None,
    workers: Optional[int] = None,
) -> RegionMap:
    """Per-cell throughput at the largest fixed point, with stability verdicts"""
    return map_region(config, grid, Criterion(CriterionKind.STABLE), tols=tols, workers=workers)


def staircase_violations(region: RegionMap) -> int:
    """Adjacent cell pairs where the dominating cell is satisfied but the dominated one is not"""
    sat = region.satisfied_grid()
    count = 0
    for axis in range(sat.ndim):
        if sat.shape[axis] < 2:
            continue
        lower = np.take(sat, range(sat.shape[axis] - 1), axis=axis)
        upper = np.take(sat, range(1, sat.shape[axis]), axis=axis)
        count += int(np.sum(upper & ~lower))
    return count


# marching-squares edges: 0 bottom, 1 right, 2 top, 3 left
_EDGE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))


def _edge_midpoint(edge: int, i: int, j: int, xs: np.ndarray, ys: np.ndarray) -> Tuple[float, float]:
    if edge == 0:
        return (round((xs[i] + xs[i + 1]) / 2, DECIMALS), float(ys[j]))
    if edge == 1:
        return (float(xs[i + 1]), round((ys[j] + ys[j + 1]) / 2, DECIMALS))
    if edge == 2:
        return (round((xs[i] + xs[i + 1]) / 2, DECIMALS), float(ys[j + 1]))
    return (float(xs[i]), round((ys[j] + ys[j + 1]) / 2, DECIMALS))


def _chain(segments: List[Tuple[Tuple[float, float], Tuple[float, float]]]) -> List[np.ndarray]:
    """Join segments sharing endpoints into polylines"""
    neighbours: Dict[Tuple[float, float], List[int]] = {}
    for idx, (a, b) in enumerate(segments):
        neighbours.setdefault(a, []).append(idx)
        neighbours.setdefault(b, []).append(idx)
    used = [False] * len(segments)

    def walk(start: Tuple[float, float]) -> List[Tuple[float, float]]:
        line = [start]
        point = start
        while True:
            nxt = next((s for s in neighbours[point] if not used[s]), None)
            if nxt is None:
                return line
            used[nxt] = True
            a, b = segments[nxt]
            point = b if a == point else a
            line.append(point)

    polylines = []
    # open chains start at a dangling endpoint, closed ones anywhere
    starts = sorted(p for p, segs in neighbours.items() if len(segs) == 1) + sorted(neighbours)
    for start in starts:
        if any(not used[s] for s in neighbours[start]):
            polylines.append(np.array(walk(start)))
    return polylines


def extract_boundary(region: RegionMap) -> List[np.ndarray]:
    """
    Contour between satisfied and unsatisfied cells of a planar map

    Vertices sit at midpoints of lattice edges whose endpoints disagree.
    Returns a list of (m, 2) polylines.
    """
    if region.grid.K != 2:
        raise DimensionError("boundary extraction is defined for two-class maps only")
    sat = region.satisfied_grid()
    xs, ys = region.grid.axes[0].values(), region.grid.axes[1].values()
    segments = []
    for i in range(sat.shape[0] - 1):
        for j in range(sat.shape[1] - 1):
            corners = (sat[i, j], sat[i + 1, j], sat[i + 1, j + 1], sat[i, j + 1])
            crossing = [e for e, (a, b) in enumerate(_EDGE_CORNERS) if corners[a] != corners[b]]
            if not crossing:
                continue
            points = {e: _edge_midpoint(e, i, j, xs, ys) for e in crossing}
            if len(crossing) == 2:
                segments.append((points[crossing[0]], points[crossing[1]]))
            else:
                # saddle: keep the two corners that match corner 0 apart
                segments.append((points[0], points[3]))
                segments.append((points[1], points[2]))
    return _chain(segments)


def _frontier(sat: np.ndarray) -> np.ndarray:
    """Satisfied cells with an unsatisfied neighbour above or to the right"""
    up = np.zeros_like(sat)
    up[:-1, :] = ~sat[1:, :]
    right = np.zeros_like(sat)
    right[:, :-1] = ~sat[:, 1:]
    return np.argwhere(sat & (up | right))


def convexity_probe(
    region: RegionMap,
    trials: int = 100_000,
    seed: int = 0,
) -> Tuple[bool, List[Dict[str, List[float]]]]:
    """
    Look for two satisfied cells whose midpoint cell is unsatisfied

    Pairs are drawn from the frontier of the satisfied set; all pairs are
    checked when there are at most ``trials`` of them. The midpoint index is
    rounded down, so a witness always lies below the true midpoint.
    """
    if region.grid.K != 2:
        raise DimensionError("convexity probe is defined for two-class maps only")
    sat = region.satisfied_grid()
    front = _frontier(sat)
    m = len(front)
    if m < 2:
        return True, []
    if m * (m - 1) // 2 <= trials:
        a, b = np.triu_indices(m, k=1)
    else:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, m, size=trials)
        b = rng.integers(0, m, size=trials)
    mid = (front[a] + front[b]) // 2
    bad = ~sat[mid[:, 0], mid[:, 1]]
    xs, ys = region.grid.axes[0].values(), region.grid.axes[1].values()

    def point(idx: np.ndarray) -> List[float]:
        return [float(xs[idx[0]]), float(ys[idx[1]])]

    witnesses = [
        {"a": point(front[a[w]]), "b": point(front[b[w]]), "midpoint": point(mid[w])}
        for w in np.flatnonzero(bad)[:10]
    ]
    if witnesses:
        logger.info(f"convexity probe found {int(bad.sum())} violating pairs")
    return not witnesses, witnesses


def sweep(
    config: SystemConfig,
    direction: Sequence[float],
    multipliers: Sequence[float],
    tols: Optional[Tolerances] = None,
) -> List[Dict[str, Any]]:
    """
    Verdict, success probability and throughput at t·direction for each t

    Rows carry 1 - P̃_k for log-scale error curves and per-class plus total
    throughput for cross-sections.
    """
    tols = tols or Tolerances()
    d = np.asarray(direction, dtype=float)
    if d.shape != (config.K,):
        raise DimensionError(f"direction needs {config.K} entries, got shape {d.shape}")
    if np.any(d < 0):
        raise DomainError("direction must be nonnegative")
    t = np.asarray(multipliers, dtype=float)
    if t.size == 0:
        return []
    loads = t[:, None] * d[None, :]
    batch = classify_batch(config, loads, tols)
    probs = success_probabilities(config, loads, batch.q_from_ones, reference_rounding=tols.reference_rounding)
    rows = []
    for i in range(t.size):
        theta = loads[i] * probs[i]
        rows.append(
            {
                "t": float(t[i]),
                "G": loads[i].tolist(),
                "verdict": batch.verdict_at(i).value,
                "success": probs[i].tolist(),
                "failure": (1.0 - probs[i]).tolist(),
                "theta": theta.tolist(),
                "theta_total": float(theta.sum()),
            }
        )
    return rows
