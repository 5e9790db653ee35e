"""
Tests for the finite-T Monte Carlo oracle
"""
import numpy as np
import pytest

from app.models import StartPoint
from app.services.degree import DegreeDistribution
from app.services.error_handler import DomainError
from app.services.evolution import SystemConfig, de_fixed_point, success_probabilities, throughput
from app.services.montecarlo import (
    build_instance,
    isolated_slot_decodes,
    largest_remainder,
    peel,
    run_trials,
    sweep_trials,
    trial_seed,
)
from app.services.receivers import ReceiverModel, rayleigh_expected_decodes
from app.storage import load_preset

MIXTURE = DegreeDistribution.from_mapping({"2": 0.5102, "4": 0.4898})


def regular_five() -> SystemConfig:
    return SystemConfig(
        fractions=(1.0,),
        routing=((1.0,),),
        dists=(DegreeDistribution.regular(5),),
        models=(ReceiverModel.slotted_aloha(),),
    )


def test_largest_remainder_sums_exactly():
    counts = largest_remainder([1 / 3, 1 / 3, 1 / 3], 10)
    assert counts.sum() == 10
    assert sorted(counts.tolist()) == [3, 3, 4]


def test_instance_structure():
    """User counts are rint(G_k T); degrees follow the distribution"""
    config = load_preset("reservation")
    inst = build_instance(config, [0.3, 0.2], T=1000, seed=4)
    assert inst.users_per_class().tolist() == [300, 200]
    assert inst.num_edges == int(inst.degrees().sum())
    assert np.all(inst.degrees()[inst.user_class == 0] == 5)
    # class 2 only reaches the second half of the receivers
    class2_edges = inst.user_class[inst.edge_user] == 1
    assert np.all(inst.receiver_class[inst.edge_receiver[class2_edges]] == 1)
    assert inst.receiver_loads().sum() == inst.num_edges


def test_same_seed_same_instance():
    config = load_preset("complete_sharing")
    a = build_instance(config, [0.3, 0.3], T=500, seed=11)
    b = build_instance(config, [0.3, 0.3], T=500, seed=11)
    np.testing.assert_array_equal(a.edge_receiver, b.edge_receiver)
    assert peel(a).success.tolist() == peel(b).success.tolist()


def test_trial_seeds_are_counter_based():
    a = np.random.default_rng(trial_seed(3, 0, 1)).random()
    b = np.random.default_rng(trial_seed(3, 0, 1)).random()
    c = np.random.default_rng(trial_seed(3, 1, 0)).random()
    assert a == b
    assert a != c


def test_peeling_agrees_with_density_evolution():
    """Below threshold nearly every user is recovered"""
    config = regular_five()
    outcome = run_trials(config, [0.5], T=2000, trials=5, max_iter=500, seed=1)
    fixed = de_fixed_point(config, [0.5], StartPoint.ALL_ONES)
    analytic = success_probabilities(config, [0.5], fixed.q_final)[0]
    assert abs(outcome.success[0] - analytic) <= 3 * outcome.success_stderr[0] + 0.01
    assert outcome.trials == 5


def test_success_drops_across_threshold():
    config = load_preset("irsa_mixture")
    below = run_trials(config, [0.75], T=2000, trials=3, seed=2)
    above = run_trials(config, [1.0], T=2000, trials=3, seed=2)
    assert below.success[0] > 0.95
    assert above.success[0] < 0.8


def test_reservation_throughput_matches_analytic():
    config = load_preset("reservation")
    outcome = run_trials(config, [0.45, 0.40], T=2000, trials=5, seed=3)
    _, analytic = throughput(config, [0.45, 0.40])
    assert abs(outcome.total_throughput - analytic) <= 3 * float(np.sqrt(np.sum(outcome.throughput_stderr**2))) + 0.02


def test_zero_load_class_counts_as_success():
    config = load_preset("complete_sharing")
    outcome = peel(build_instance(config, [0.2, 0.0], T=500, seed=0))
    assert outcome.success[1] == 1.0
    assert outcome.metadata["users"][1] == 0


def test_sic_failures_leave_residual_copies():
    base = load_preset("complete_sharing")
    config = SystemConfig(
        fractions=base.fractions,
        routing=base.routing,
        dists=base.dists,
        models=base.models,
        p_sic=0.5,
    )
    outcome = peel(build_instance(config, [0.2, 0.2], T=1000, seed=5))
    assert outcome.metadata["residual_resolved_edges"] > 0
    clean = peel(build_instance(base, [0.2, 0.2], T=1000, seed=5))
    assert outcome.success.sum() <= clean.success.sum()


def test_sequential_order_gives_same_fixpoint_for_slots():
    """Slot receivers peel to the same stopping set in any order"""
    config = load_preset("irsa_mixture")
    inst = build_instance(config, [0.8], T=1000, seed=9)
    assert peel(inst).success.tolist() == peel(inst, order_seed=1).success.tolist()


def test_cooperative_and_rayleigh_instances_decode():
    coop = run_trials(load_preset("coop_mixture"), [0.3, 0.3], T=1000, trials=2, seed=6)
    assert np.all(coop.success > 0.9)
    rayleigh = run_trials(load_preset("rayleigh_20db"), [0.5], T=1000, trials=2, seed=6)
    assert rayleigh.success[0] > 0.95
    assert rayleigh.metadata["rayleigh_order"] == "strongest_first"


def single_class(model: ReceiverModel, **kwargs) -> SystemConfig:
    return SystemConfig(
        fractions=(1.0,),
        routing=((1.0,),),
        dists=(MIXTURE,),
        models=(model,),
        **kwargs,
    )


def with_sic_failures(name: str, p_sic: float) -> SystemConfig:
    base = load_preset(name)
    return SystemConfig(
        fractions=base.fractions,
        routing=base.routing,
        dists=base.dists,
        models=base.models,
        p_sic=p_sic,
    )


AGREEMENT_CASES = {
    "dfold2": (lambda: single_class(ReceiverModel.dfold(2)), [[0.4], [0.7], [1.0]]),
    "dfold_errors": (lambda: single_class(ReceiverModel.dfold_with_errors(1, 0.05)), [[0.2], [0.4], [0.6]]),
    "rayleigh_10db": (lambda: load_preset("rayleigh_10db"), [[0.3], [0.5], [0.7]]),
    "cooperative": (lambda: load_preset("coop_mixture"), [[0.2, 0.2], [0.3, 0.3], [0.4, 0.2]]),
    "sic_failures": (lambda: with_sic_failures("complete_sharing", 0.1), [[0.1, 0.1], [0.2, 0.2], [0.3, 0.2]]),
    "erasures": (lambda: single_class(ReceiverModel.slotted_aloha(), p_era=0.1), [[0.3], [0.5], [0.6]]),
}


@pytest.mark.parametrize("case", sorted(AGREEMENT_CASES))
def test_peeling_matches_density_evolution(case):
    """At stable loads the simulated success is within 3 standard errors of the analytic value"""
    build, loads = AGREEMENT_CASES[case]
    config = build()
    for i, G in enumerate(loads):
        outcome = run_trials(config, G, T=10_000, trials=5, seed=21, counter=(i,))
        fixed = de_fixed_point(config, G, StartPoint.ALL_ONES)
        analytic = success_probabilities(config, G, fixed.q_final)
        assert np.all(np.abs(outcome.success - analytic) <= 3 * outcome.success_stderr + 0.005), (G, outcome.success)


def test_isolated_rayleigh_slot_matches_closed_form():
    model = ReceiverModel.rayleigh(10.0, 3.0)
    mean, stderr = isolated_slot_decodes(3, model, trials=20_000, seed=0)
    assert mean == pytest.approx(rayleigh_expected_decodes(3, 10.0, 3.0), abs=4 * stderr + 1e-3)


def test_isolated_slot_rules():
    assert isolated_slot_decodes(1, ReceiverModel.slotted_aloha(), trials=10)[0] == 1.0
    assert isolated_slot_decodes(2, ReceiverModel.slotted_aloha(), trials=10)[0] == 0.0
    assert isolated_slot_decodes(2, ReceiverModel.dfold(2), trials=10)[0] == 2.0
    with pytest.raises(DomainError):
        isolated_slot_decodes(2, ReceiverModel.cooperative(), trials=10)


def test_sweep_trials_rows():
    config = load_preset("irsa_mixture")
    rows = sweep_trials(config, [1.0], [0.5, 1.0], T=500, trials=2, seed=0)
    assert [r["t"] for r in rows] == [0.5, 1.0]
    assert rows[0]["analytic"][0] > rows[1]["analytic"][0]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
