"""
Tests for multi-class density evolution
"""
import numpy as np
import pytest

from app.models import StartPoint
from app.services.degree import DegreeDistribution
from app.services.error_handler import ConfigError, DomainError
from app.services.evolution import (
    SystemConfig,
    de_fixed_point,
    de_fixed_point_batch,
    de_step,
    offered_loads,
    success_probabilities,
    throughput,
    trace_rows,
)
from app.services.receivers import ReceiverModel
from app.storage import load_preset

MIXTURE = DegreeDistribution.from_mapping({"2": 0.5102, "4": 0.4898})


def single_class(dist=MIXTURE, model=None, **kwargs) -> SystemConfig:
    return SystemConfig(
        fractions=(1.0,),
        routing=((1.0,),),
        dists=(dist,),
        models=(model or ReceiverModel.slotted_aloha(),),
        **kwargs,
    )


def test_step_is_monotone_in_q():
    """q ≤ q′ implies T(q) ≤ T(q′)"""
    config = load_preset("complete_sharing")
    rng = np.random.default_rng(1)
    G = np.array([0.4, 0.3])
    for _ in range(50):
        low = rng.random(2)
        high = np.minimum(low + rng.random(2) * 0.3, 1.0)
        assert np.all(de_step(config, low, G) <= de_step(config, high, G) + 1e-15)


def test_step_is_monotone_in_load():
    config = load_preset("reservation")
    q = np.array([0.3, 0.6])
    assert np.all(de_step(config, q, [0.2, 0.2]) <= de_step(config, q, [0.4, 0.3]))


def test_irsa_below_and_above_threshold():
    """Below 0.868 the largest fixed point is zero, above it is not"""
    config = single_class()
    below = de_fixed_point(config, [0.85])
    above = de_fixed_point(config, [0.9])
    assert below.converged
    assert below.q_final[0] < 1e-9
    assert above.q_final[0] > 0.01


def test_iterates_are_monotone_from_both_ends():
    config = single_class()
    ones = de_fixed_point(config, [0.9], StartPoint.ALL_ONES, keep_trace=True)
    zeros = de_fixed_point(config, [0.9], StartPoint.ALL_ZEROS, keep_trace=True)
    down = np.array([q[0] for q in ones.trace])
    up = np.array([q[0] for q in zeros.trace])
    assert np.all(np.diff(down) <= 1e-15)
    assert np.all(np.diff(up) >= -1e-15)
    assert zeros.q_final[0] <= ones.q_final[0] + 1e-12


def test_non_convergence_is_flagged_not_raised():
    config = single_class()
    result = de_fixed_point(config, [0.868], max_iter=3)
    assert not result.converged
    assert result.iterations == 3


def test_scalar_load_survives_iteration_cap():
    config = single_class()
    result = de_fixed_point(config, 0.868, max_iter=2)
    assert not result.converged
    assert result.iterations == 2


def test_fixed_point_is_monotone_in_load():
    """G ≤ G′ componentwise implies q(G) ≤ q(G′) after the same number of updates"""
    config = load_preset("complete_sharing")
    rng = np.random.default_rng(5)
    high = rng.uniform(0.0, 1.0, size=(100, 2))
    low = high * rng.random((100, 2))
    # a vanishing tol makes every row run the full iteration count
    q_low = de_fixed_point_batch(config, low, tol=1e-300, max_iter=400).q_final
    q_high = de_fixed_point_batch(config, high, tol=1e-300, max_iter=400).q_final
    assert np.all(q_low <= q_high + 1e-12)


def test_complete_sharing_reduces_to_single_class():
    """Two identical classes sharing every receiver behave like one class at G1 + G2"""
    shared = load_preset("complete_sharing_mixture")
    single = single_class()
    for G in ([0.3, 0.2], [0.5, 0.3], [0.6, 0.4]):
        both = de_fixed_point(shared, G).q_final
        alone = de_fixed_point(single, [sum(G)]).q_final[0]
        np.testing.assert_allclose(both, [alone, alone], atol=1e-9)


def test_offered_loads_shape_and_value():
    """ρ_{j,k} = G_k Λ′_k(1) r_{k,j} / F_j"""
    config = load_preset("reservation")
    loads = offered_loads(config, [0.4, 0.2])
    assert loads.shape == (2, 2)
    assert loads[0, 0] == pytest.approx(0.4 * 5 * 0.5 / 0.5)
    assert loads[0, 1] == pytest.approx(0.0)
    assert loads[1, 1] == pytest.approx(0.2 * MIXTURE.mean * 1.0 / 0.5)
    assert offered_loads(config, np.ones((3, 2))).shape == (3, 2, 2)


def test_success_at_zero_edge_state_is_one():
    config = load_preset("complete_sharing")
    probs = success_probabilities(config, [0.3, 0.3], np.zeros(2))
    np.testing.assert_allclose(probs, 1.0)


def test_reference_rounding():
    """Probabilities above 0.99999 round to 1 only when asked"""
    config = single_class(model=ReceiverModel.rayleigh(20.0, 3.0), dist=DegreeDistribution.regular(5))
    result = de_fixed_point(config, [0.5])
    exact = success_probabilities(config, [0.5], result.q_final, reference_rounding=False)
    rounded = success_probabilities(config, [0.5], result.q_final, reference_rounding=True)
    assert 0.99999 < exact[0] < 1.0
    assert rounded[0] == 1.0


def test_throughput_is_load_times_success():
    config = load_preset("reservation")
    per_class, total = throughput(config, [0.45, 0.40])
    assert per_class == pytest.approx([0.45, 0.40], abs=1e-6)
    assert total == pytest.approx(per_class.sum())


def test_erasures_raise_the_fixed_point():
    plain = single_class()
    lossy = single_class(p_era=0.1)
    assert lossy.mean_degrees[0] == pytest.approx(0.9 * MIXTURE.mean)
    assert de_fixed_point(lossy, [0.8]).q_final[0] >= de_fixed_point(plain, [0.8]).q_final[0]


def test_trace_rows_layout():
    config = single_class()
    result = de_fixed_point(config, [0.5], keep_trace=True, max_iter=5)
    rows = trace_rows(config, [0.5], result)
    assert rows[0][:2] == [0, 1.0]
    assert len(rows[0]) == 3
    assert len(rows) == result.iterations + 1
    assert rows[-1][2] >= rows[0][2]
    with pytest.raises(DomainError):
        trace_rows(config, [0.5], de_fixed_point(config, [0.5]))


def test_config_validation():
    """Routing rows and fractions must be stochastic"""
    with pytest.raises(ConfigError) as exc:
        SystemConfig(
            fractions=(0.5, 0.5),
            routing=((0.5, 0.4),),
            dists=(MIXTURE,),
            models=(ReceiverModel.slotted_aloha(), ReceiverModel.slotted_aloha()),
        )
    assert exc.value.field == "routing[0]"
    with pytest.raises(ConfigError) as exc:
        single_class(p_era=1.0)
    assert exc.value.field == "p_era"
    with pytest.raises(ConfigError):
        SystemConfig(
            fractions=(0.6, 0.5),
            routing=((0.5, 0.5),),
            dists=(MIXTURE,),
            models=(ReceiverModel.slotted_aloha(), ReceiverModel.slotted_aloha()),
        )


def test_digest_is_stable():
    a = load_preset("complete_sharing")
    b = load_preset("complete_sharing")
    assert a.digest == b.digest
    assert a.digest != load_preset("reservation").digest


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
