"""
Finite-T Monte Carlo oracle: random user/receiver bipartite graphs decoded by
iterative successive interference cancellation
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings
from app.debug_utils import DebugTimer, resolve_workers
from app.models import ReceiverKind, StartPoint, Tolerances
from app.services.error_handler import DimensionError, DomainError
from app.services.evolution import SystemConfig, de_fixed_point, success_probabilities
from app.services.receivers import ReceiverModel, rayleigh_expected_decodes

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence, None]

SLOT_KINDS = (ReceiverKind.SLOTTED_ALOHA, ReceiverKind.D_FOLD, ReceiverKind.D_FOLD_WITH_ERRORS)
RAYLEIGH_ORDER = "strongest_first"
RAYLEIGH_CHECK_SIGMAS = 4.0
RAYLEIGH_CHECK_SLACK = 1e-3

# cooperative sub-slot tags: 0 occupies both, 1 and 2 one each
BOTH_SUBSLOTS = 0


def largest_remainder(fractions: Sequence[float], total: int) -> np.ndarray:
    """Integer counts proportional to fractions that sum exactly to total"""
    exact = np.asarray(fractions, dtype=float) * total
    counts = np.floor(exact).astype(int)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def trial_seed(seed: SeedLike, *counter: int) -> np.random.SeedSequence:
    """Counter-based child seed: the same (seed, counter) always gives the same stream"""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + counter)
    return np.random.SeedSequence(entropy=seed, spawn_key=counter)


@dataclass
class BipartiteInstance:
    """
    One random CPR graph with T receivers

    Edges are user copies, stored user-major. Per-edge model state (fades,
    cooperative sub-slot, failed-cancellation flag) and per-receiver error
    flags are drawn once at build time.
    """

    config: SystemConfig
    G: np.ndarray
    T: int
    user_class: np.ndarray  # (U,)
    user_ptr: np.ndarray  # (U + 1,) edge range of each user
    edge_user: np.ndarray  # (E,)
    edge_receiver: np.ndarray  # (E,)
    edge_fade: np.ndarray  # (E,) exponential mean 1
    edge_subslot: np.ndarray  # (E,) cooperative sub-slot tag
    edge_sic_fail: np.ndarray  # (E,) removal of this copy fails
    receiver_class: np.ndarray  # (T,)
    receiver_error: np.ndarray  # (T,)
    seed: Optional[int] = None

    @property
    def num_users(self) -> int:
        return int(self.user_class.size)

    @property
    def num_edges(self) -> int:
        return int(self.edge_user.size)

    def users_per_class(self) -> np.ndarray:
        return np.bincount(self.user_class, minlength=self.config.K)

    def degrees(self) -> np.ndarray:
        return np.diff(self.user_ptr)

    def receiver_loads(self) -> np.ndarray:
        """(T, K) copy counts of each class at each receiver"""
        loads = np.zeros((self.T, self.config.K), dtype=int)
        np.add.at(loads, (self.edge_receiver, self.user_class[self.edge_user]), 1)
        return loads


def build_instance(config: SystemConfig, G, T: int, seed: SeedLike = None) -> BipartiteInstance:
    """Draw users, copies and per-receiver state for T receivers at load G"""
    if T < 1:
        raise DomainError(f"T must be at least 1, got {T}")
    G_arr = np.asarray(G, dtype=float)
    if G_arr.shape != (config.K,):
        raise DimensionError(f"G needs {config.K} entries, got shape {G_arr.shape}")
    if np.any(G_arr < 0) or not np.all(np.isfinite(G_arr)):
        raise DomainError("G must be finite and nonnegative")

    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(seq)

    receiver_counts = largest_remainder(config.fractions, T)
    receiver_offsets = np.concatenate([[0], np.cumsum(receiver_counts)[:-1]])
    receiver_class = np.repeat(np.arange(config.J), receiver_counts)

    if settings.poisson_user_counts:
        user_counts = rng.poisson(G_arr * T)
    else:
        user_counts = np.rint(G_arr * T).astype(int)

    user_class_parts, edge_receiver_parts, degree_parts = [], [], []
    for k, dist in enumerate(config.dists):
        n_k = int(user_counts[k])
        weights = dist.array / dist.array.sum()
        degrees = rng.choice(weights.size, size=n_k, p=weights)
        if config.p_era > 0:
            degrees = rng.binomial(degrees, 1.0 - config.p_era)
        copies = int(degrees.sum())
        targets = rng.choice(config.J, size=copies, p=config.R[k])
        within = rng.random(copies)
        counts = receiver_counts[targets]
        if np.any(counts == 0):
            # a receiver class too small to get a slot at this T swallows its copies
            lost = np.repeat(np.arange(n_k), degrees)[counts == 0]
            degrees = degrees - np.bincount(lost, minlength=n_k)
            keep = counts > 0
            targets, within, counts = targets[keep], within[keep], counts[keep]
        receivers = receiver_offsets[targets] + np.floor(within * counts).astype(int)
        user_class_parts.append(np.full(n_k, k, dtype=int))
        edge_receiver_parts.append(receivers)
        degree_parts.append(degrees)

    user_class = np.concatenate(user_class_parts) if user_class_parts else np.zeros(0, dtype=int)
    degrees = np.concatenate(degree_parts).astype(int) if degree_parts else np.zeros(0, dtype=int)
    edge_receiver = np.concatenate(edge_receiver_parts).astype(int) if edge_receiver_parts else np.zeros(0, dtype=int)
    user_ptr = np.concatenate([[0], np.cumsum(degrees)]).astype(int)
    edge_user = np.repeat(np.arange(user_class.size), degrees)
    E = edge_user.size

    edge_fade = rng.exponential(1.0, size=E)
    edge_subslot = np.where(user_class[edge_user] == 0, BOTH_SUBSLOTS, 1 + rng.integers(0, 2, size=E))
    edge_sic_fail = rng.random(E) < config.p_sic
    p_err = np.array([m.p_err if m.kind == ReceiverKind.D_FOLD_WITH_ERRORS else 0.0 for m in config.models])
    receiver_error = rng.random(T) < p_err[receiver_class]

    return BipartiteInstance(
        config=config,
        G=G_arr,
        T=T,
        user_class=user_class,
        user_ptr=user_ptr,
        edge_user=edge_user,
        edge_receiver=edge_receiver,
        edge_fade=edge_fade,
        edge_subslot=edge_subslot,
        edge_sic_fail=edge_sic_fail,
        receiver_class=receiver_class,
        receiver_error=receiver_error,
        seed=seed if isinstance(seed, int) else None,
    )


@dataclass
class SimOutcome:
    """Per-class success fractions and throughput from one or more decoded instances"""

    success: np.ndarray
    throughput: np.ndarray
    iterations: int
    T: int
    trials: int = 1
    seed: Optional[int] = None
    success_stderr: Optional[np.ndarray] = None
    throughput_stderr: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.success_stderr is None:
            self.success_stderr = np.zeros_like(self.success)
        if self.throughput_stderr is None:
            self.throughput_stderr = np.zeros_like(self.throughput)

    @property
    def total_throughput(self) -> float:
        return float(self.throughput.sum())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "success": self.success.tolist(),
            "success_stderr": self.success_stderr.tolist(),
            "throughput": self.throughput.tolist(),
            "throughput_stderr": self.throughput_stderr.tolist(),
            "total_throughput": self.total_throughput,
            "iterations": self.iterations,
            "T": self.T,
            "trials": self.trials,
            "seed": self.seed,
            "metadata": self.metadata,
        }


class _Peeler:
    """Mutable decoding state for one instance"""

    def __init__(self, instance: BipartiteInstance):
        self.inst = instance
        self.models: List[ReceiverModel] = list(instance.config.models)
        self.present = np.ones(instance.num_edges, dtype=bool)
        self.resolved = np.zeros(instance.num_users, dtype=bool)
        order = np.argsort(instance.edge_receiver, kind="stable")
        self.recv_edges = order
        self.recv_ptr = np.searchsorted(instance.edge_receiver[order], np.arange(instance.T + 1))
        kinds = np.array([m.kind.value for m in self.models], dtype=object)
        self.receiver_kind = kinds[instance.receiver_class]
        capacity = np.array([m.decode_capacity for m in self.models])
        self.capacity = capacity[instance.receiver_class]
        self.slot_receiver = np.isin(self.receiver_kind, [k.value for k in SLOT_KINDS])

    def edges_at(self, r: int) -> np.ndarray:
        edges = self.recv_edges[self.recv_ptr[r] : self.recv_ptr[r + 1]]
        return edges[self.present[edges]]

    def decode_receiver(self, r: int) -> np.ndarray:
        """Edges this receiver resolves from its current contents"""
        edges = self.edges_at(r)
        if edges.size == 0:
            return edges
        model = self.models[self.inst.receiver_class[r]]
        if model.kind in SLOT_KINDS:
            if self.inst.receiver_error[r] or edges.size > model.decode_capacity:
                return edges[:0]
            return edges
        if model.kind == ReceiverKind.RAYLEIGH_CAPTURE:
            return self._decode_rayleigh(edges, model)
        return self._decode_cooperative(edges)

    def _decode_rayleigh(self, edges: np.ndarray, model: ReceiverModel) -> np.ndarray:
        fades = self.inst.edge_fade[edges]
        order = np.argsort(-fades, kind="stable")
        noise = 1.0 / model.gamma
        remaining = float(fades.sum())
        decoded = []
        for idx in order:
            x = fades[idx]
            if x < model.b * (remaining - x + noise):
                break
            decoded.append(edges[idx])
            remaining -= x
        return np.asarray(decoded, dtype=int)

    def _decode_cooperative(self, edges: np.ndarray) -> np.ndarray:
        tags = self.inst.edge_subslot[edges]
        alive = np.ones(edges.size, dtype=bool)
        changed = True
        while changed:
            changed = False
            for sub in (1, 2):
                members = np.flatnonzero(alive & ((tags == BOTH_SUBSLOTS) | (tags == sub)))
                if members.size == 1:
                    alive[members[0]] = False
                    changed = True
        return edges[~alive]

    def apply(self, decoded: np.ndarray) -> np.ndarray:
        """Resolve users of decoded edges and cancel their other copies; returns touched receivers"""
        if decoded.size == 0:
            return decoded
        self.present[decoded] = False
        users = np.unique(self.inst.edge_user[decoded])
        fresh = users[~self.resolved[users]]
        self.resolved[fresh] = True
        if fresh.size == 0:
            return np.zeros(0, dtype=int)
        starts, ends = self.inst.user_ptr[fresh], self.inst.user_ptr[fresh + 1]
        lengths = ends - starts
        copies = np.repeat(starts - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths) + np.arange(lengths.sum())
        cancel = copies[self.present[copies] & ~self.inst.edge_sic_fail[copies]]
        self.present[cancel] = False
        return np.unique(self.inst.edge_receiver[cancel])

    def synchronous_round(self, dirty: np.ndarray) -> np.ndarray:
        """Decode every dirty receiver against the same snapshot, then cancel"""
        counts = np.bincount(self.inst.edge_receiver[self.present], minlength=self.inst.T)
        dirty_mask = np.zeros(self.inst.T, dtype=bool)
        dirty_mask[dirty] = True
        ready = dirty_mask & self.slot_receiver & ~self.inst.receiver_error & (counts > 0) & (counts <= self.capacity)
        parts = [np.flatnonzero(self.present & ready[self.inst.edge_receiver])]
        for r in np.flatnonzero(dirty_mask & ~self.slot_receiver):
            parts.append(self.decode_receiver(int(r)))
        decoded = np.concatenate(parts).astype(int)
        return self.apply(decoded)

    def sequential_round(self, dirty: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Decode dirty receivers one at a time in random order, cancelling immediately"""
        touched = []
        for r in rng.permutation(dirty):
            touched.append(self.apply(self.decode_receiver(int(r))))
        return np.unique(np.concatenate(touched)) if touched else np.zeros(0, dtype=int)


def peel(
    instance: BipartiteInstance,
    max_iter: Optional[int] = None,
    order_seed: Optional[int] = None,
) -> SimOutcome:
    """
    Iterative SIC decoding to a fixpoint or max_iter rounds

    Each round decodes the receivers whose contents changed, then cancels the
    other copies of every newly resolved user (a cancellation fails with
    probability p_sic, permanently). With ``order_seed`` receivers are visited
    one at a time in shuffled order instead of against a common snapshot.
    """
    max_iter = settings.sim_max_iter if max_iter is None else max_iter
    peeler = _Peeler(instance)
    rng = np.random.default_rng(order_seed) if order_seed is not None else None
    dirty = np.arange(instance.T)
    rounds = 0
    while dirty.size and rounds < max_iter:
        rounds += 1
        if rng is None:
            dirty = peeler.synchronous_round(dirty)
        else:
            dirty = peeler.sequential_round(dirty, rng)

    K = instance.config.K
    per_class = instance.users_per_class()
    resolved = np.bincount(instance.user_class[peeler.resolved], minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        success = np.where(per_class > 0, resolved / np.maximum(per_class, 1), 1.0)
    metadata = {
        "resolved_users": resolved.tolist(),
        "users": per_class.tolist(),
        "residual_edges": int(peeler.present.sum()),
        # copies of resolved users left behind by failed cancellations
        "residual_resolved_edges": int(np.sum(peeler.present & peeler.resolved[instance.edge_user])),
    }
    if any(m.kind == ReceiverKind.RAYLEIGH_CAPTURE for m in instance.config.models):
        metadata["rayleigh_order"] = RAYLEIGH_ORDER
    return SimOutcome(
        success=success.astype(float),
        throughput=resolved / instance.T,
        iterations=rounds,
        T=instance.T,
        trials=1,
        seed=instance.seed,
        metadata=metadata,
    )


def _single_trial(
    config: SystemConfig,
    G: np.ndarray,
    T: int,
    seed: np.random.SeedSequence,
    max_iter: int,
) -> SimOutcome:
    return peel(build_instance(config, G, T, seed), max_iter=max_iter)


def _stderr(values: np.ndarray) -> np.ndarray:
    if values.shape[0] < 2:
        return np.zeros(values.shape[1:])
    return values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])


def run_trials(
    config: SystemConfig,
    G,
    T: int,
    trials: int,
    max_iter: Optional[int] = None,
    seed: SeedLike = 0,
    workers: Optional[int] = 1,
    counter: Tuple[int, ...] = (),
) -> SimOutcome:
    """Average peel over independent trials; trial i uses trial_seed(seed, *counter, i)"""
    if trials < 1:
        raise DomainError(f"trials must be at least 1, got {trials}")
    max_iter = settings.sim_max_iter if max_iter is None else max_iter
    G_arr = np.asarray(G, dtype=float)
    seeds = [trial_seed(seed, *counter, i) for i in range(trials)]
    n_workers = min(resolve_workers(settings.workers if workers is None else workers), trials)

    with DebugTimer(f"run_trials T={T} trials={trials} G={G_arr.tolist()}"):
        if n_workers > 1:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                outcomes = list(
                    pool.map(
                        _single_trial,
                        [config] * trials,
                        [G_arr] * trials,
                        [T] * trials,
                        seeds,
                        [max_iter] * trials,
                    )
                )
        else:
            outcomes = [_single_trial(config, G_arr, T, s, max_iter) for s in seeds]

    success = np.stack([o.success for o in outcomes])
    throughput = np.stack([o.throughput for o in outcomes])
    metadata: Dict[str, Any] = {"counter": list(counter)}
    if "rayleigh_order" in outcomes[0].metadata:
        metadata["rayleigh_order"] = RAYLEIGH_ORDER
    return SimOutcome(
        success=success.mean(axis=0),
        throughput=throughput.mean(axis=0),
        iterations=max(o.iterations for o in outcomes),
        T=T,
        trials=trials,
        seed=seed if isinstance(seed, int) else None,
        success_stderr=_stderr(success),
        throughput_stderr=_stderr(throughput),
        metadata=metadata,
    )


def sweep_trials(
    config: SystemConfig,
    direction: Sequence[float],
    multipliers: Sequence[float],
    T: int,
    trials: int,
    max_iter: Optional[int] = None,
    seed: SeedLike = 0,
    workers: Optional[int] = 1,
    tols: Optional[Tolerances] = None,
) -> List[Dict[str, Any]]:
    """Simulated success at t·direction for each t, next to the density-evolution prediction"""
    d = np.asarray(direction, dtype=float)
    if d.shape != (config.K,):
        raise DimensionError(f"direction needs {config.K} entries, got shape {d.shape}")
    tols = tols or Tolerances()
    rows = []
    for i, t in enumerate(multipliers):
        G = float(t) * d
        outcome = run_trials(config, G, T, trials, max_iter=max_iter, seed=seed, workers=workers, counter=(i,))
        fixed = de_fixed_point(config, G, StartPoint.ALL_ONES, tol=tols.tol, max_iter=tols.max_iter)
        analytic = success_probabilities(config, G, fixed.q_final, reference_rounding=tols.reference_rounding)
        rows.append(
            {
                "t": float(t),
                "G": G.tolist(),
                "mean": outcome.success.tolist(),
                "stderr": outcome.success_stderr.tolist(),
                "analytic": analytic.tolist(),
                "throughput_total": outcome.total_throughput,
            }
        )
        logger.debug(f"sweep point {i}: simulated {outcome.success.tolist()} vs analytic {analytic.tolist()}")
    return rows


def isolated_slot_decodes(
    N: int,
    model: ReceiverModel,
    trials: int,
    seed: SeedLike = 0,
) -> Tuple[float, float]:
    """
    Mean and standard error of the packets one receiver resolves from N colliding users

    Rayleigh capture uses strongest-first intra-slot SIC on fresh fades per trial.
    """
    if N < 0 or trials < 1:
        raise DomainError("N must be nonnegative and trials at least 1")
    rng = np.random.default_rng(seed)
    if N == 0:
        return 0.0, 0.0
    if model.kind == ReceiverKind.RAYLEIGH_CAPTURE:
        fades = -np.sort(-rng.exponential(1.0, size=(trials, N)), axis=1)
        remaining = fades.sum(axis=1, keepdims=True) - np.cumsum(fades, axis=1)
        captured = fades >= model.b * (remaining + 1.0 / model.gamma)
        counts = np.cumprod(captured, axis=1).sum(axis=1).astype(float)
    elif model.kind in SLOT_KINDS:
        ok = N <= model.decode_capacity
        errors = rng.random(trials) < model.p_err
        counts = np.where(ok & ~errors, float(N), 0.0)
    else:
        raise DomainError(f"isolated slot decoding is not defined for {model.kind.value}")
    mean = float(counts.mean())
    stderr = float(counts.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    if model.kind == ReceiverKind.RAYLEIGH_CAPTURE:
        expected = rayleigh_expected_decodes(N, model.gamma_db, model.b_db)
        if abs(mean - expected) > RAYLEIGH_CHECK_SIGMAS * stderr + RAYLEIGH_CHECK_SLACK:
            logger.warning(
                f"simulated {mean:.4f} decodes for N={N} vs closed form {expected:.4f} "
                f"(stderr {stderr:.4f}, order {RAYLEIGH_ORDER})"
            )
    return mean, stderr
