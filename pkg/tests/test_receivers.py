"""
Tests for Poisson receiver models
"""
import numpy as np
import pytest
from scipy.stats import poisson

from app.models import ReceiverKind
from app.services.error_handler import DimensionError, DomainError
from app.services.receivers import (
    ReceiverModel,
    db_to_linear,
    floor_value,
    rayleigh_expected_decodes,
    success_prob,
    verify_monotone,
)


def test_slotted_aloha_is_exponential():
    model = ReceiverModel.slotted_aloha(num_classes=2)
    rho = np.array([0.3, 0.2])
    np.testing.assert_allclose(success_prob(model, rho), np.exp(-0.5) * np.ones(2))


def test_dfold_matches_poisson_cdf():
    """D-fold succeeds when at most D - 1 other copies collide"""
    model = ReceiverModel.dfold(3)
    rho = np.array([[0.5], [1.7], [4.0]])
    expected = poisson.cdf(2, rho)
    np.testing.assert_allclose(success_prob(model, rho), expected)


def test_dfold_with_errors_scales_by_one_minus_p_err():
    clean = ReceiverModel.dfold(1)
    noisy = ReceiverModel.dfold_with_errors(1, 0.01)
    rho = np.array([0.8])
    assert success_prob(noisy, rho)[0] == pytest.approx(0.99 * success_prob(clean, rho)[0])
    assert floor_value(noisy)[0] == pytest.approx(0.99)


def test_cooperative_closed_forms():
    """URLLC: 2e^-(ρu+ρe/2) - e^-(ρu+ρe); eMBB: e^-(ρu+ρe/2) + ρu e^-(ρu+ρe)"""
    model = ReceiverModel.cooperative()
    rho_u, rho_e = 0.4, 0.6
    urllc, embb = success_prob(model, np.array([rho_u, rho_e]))
    assert urllc == pytest.approx(2 * np.exp(-(rho_u + rho_e / 2)) - np.exp(-(rho_u + rho_e)))
    assert embb == pytest.approx(np.exp(-(rho_u + rho_e / 2)) + rho_u * np.exp(-(rho_u + rho_e)))


def test_cooperative_reduces_to_slotted_aloha():
    """Only URLLC behaves like SA at full load, only eMBB like SA at half load"""
    model = ReceiverModel.cooperative()
    assert success_prob(model, np.array([0.7, 0.0]))[0] == pytest.approx(np.exp(-0.7))
    assert success_prob(model, np.array([0.0, 0.7]))[1] == pytest.approx(np.exp(-0.35))


def test_cooperative_needs_two_classes():
    with pytest.raises(DimensionError):
        ReceiverModel(ReceiverKind.COOPERATIVE_SA, num_classes=3)


def test_rayleigh_floors():
    """Zero-load success is e^(-b/γ) with dB converted as 10^(x/10)"""
    high = ReceiverModel.rayleigh(gamma_db=20.0, b_db=3.0)
    low = ReceiverModel.rayleigh(gamma_db=5.0, b_db=3.0)
    assert floor_value(high)[0] == pytest.approx(0.980245, abs=1e-6)
    assert floor_value(low)[0] == pytest.approx(0.532082, abs=1e-6)
    assert floor_value(high)[0] == pytest.approx(np.exp(-db_to_linear(3.0) / db_to_linear(20.0)))


def test_rayleigh_decreases_with_load():
    model = ReceiverModel.rayleigh(gamma_db=10.0, b_db=3.0)
    rho = np.linspace(0.0, 6.0, 25)[:, None]
    values = success_prob(model, rho)[:, 0]
    assert np.all(np.diff(values) <= 1e-12)
    assert values[-1] < values[0]


def test_rayleigh_expected_decodes():
    """One user alone is decoded with the floor probability"""
    assert rayleigh_expected_decodes(0, 10.0, 3.0) == 0.0
    assert rayleigh_expected_decodes(1, 20.0, 3.0) == pytest.approx(0.980245, abs=1e-6)
    assert rayleigh_expected_decodes(4, 20.0, 3.0) < 4


def test_rayleigh_is_poisson_mixture_of_slot_decodes():
    """P_suc(ρ) = Σ_N Poisson(N; ρ) E[decodes | N users] / ρ"""
    model = ReceiverModel.rayleigh(gamma_db=10.0, b_db=3.0)
    N = np.arange(1, 31)
    decodes = np.array([rayleigh_expected_decodes(int(n), 10.0, 3.0) for n in N])
    for rho in (0.2, 1.0, 2.0):
        mixed = float(np.sum(poisson.pmf(N, rho) * decodes) / rho)
        assert success_prob(model, np.array([rho]))[0] == pytest.approx(mixed, abs=1e-9)


def test_success_prob_validates_input():
    model = ReceiverModel.slotted_aloha(num_classes=2)
    with pytest.raises(DimensionError):
        success_prob(model, np.array([0.1, 0.2, 0.3]))
    with pytest.raises(DomainError):
        success_prob(model, np.array([-0.1, 0.2]))


def test_models_are_monotone():
    for model in (
        ReceiverModel.slotted_aloha(),
        ReceiverModel.dfold(2),
        ReceiverModel.rayleigh(5.0, 3.0),
        ReceiverModel.cooperative(),
    ):
        assert verify_monotone(model, samples=200) <= 1e-9


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
