"""
Tests for region maps, boundaries, throughput surfaces and sweeps
"""
import json

import numpy as np
import pytest

from app.models import Criterion, CriterionKind, EpsilonSpec, Tolerances, Verdict
from app.services.error_handler import DimensionError, ResourceGuardError
from app.services.regions import (
    Axis,
    GridSpec,
    convexity_probe,
    extract_boundary,
    map_region,
    staircase_violations,
    sweep,
    throughput_surface,
)
from app.storage import load_preset


def test_axis_values_and_empty_axis():
    axis = Axis(0.0, 0.1, 0.02)
    assert axis.size == 6
    np.testing.assert_allclose(axis.values(), [0.0, 0.02, 0.04, 0.06, 0.08, 0.1])
    assert Axis(0.5, 0.4, 0.01).size == 0


def test_grid_points_order():
    """Points run over the last axis fastest"""
    grid = GridSpec((Axis(0.0, 0.1, 0.1), Axis(0.0, 0.2, 0.1)))
    assert grid.shape == (2, 3)
    np.testing.assert_allclose(grid.points()[:4], [[0.0, 0.0], [0.0, 0.1], [0.0, 0.2], [0.1, 0.0]])


def test_empty_grid_maps_to_empty_region():
    config = load_preset("complete_sharing")
    grid = GridSpec((Axis(0.5, 0.4, 0.01), Axis(0.0, 0.1, 0.01)))
    region = map_region(config, grid)
    assert grid.num_cells == 0
    assert region.satisfied.size == 0


def test_grid_must_match_classes():
    config = load_preset("irsa_mixture")
    with pytest.raises(DimensionError):
        map_region(config, GridSpec.uniform(2, 0.0, 0.1, 0.05))


def test_resource_guard(monkeypatch):
    from app.config import settings

    monkeypatch.setattr(settings, "region_max_cells", 10)
    config = load_preset("complete_sharing")
    with pytest.raises(ResourceGuardError):
        map_region(config, GridSpec.uniform(2, 0.0, 1.0, 0.1))


def test_complete_sharing_intercepts():
    """Each axis is cut near the single-class threshold 0.868"""
    config = load_preset("complete_sharing_mixture")
    region = map_region(config, GridSpec.uniform(2, 0.0, 1.0, 0.02), workers=1)
    sat = region.satisfied_grid()
    values = region.grid.axes[0].values()
    assert values[sat[:, 0]].max() == pytest.approx(0.868, abs=0.02)
    assert values[sat[0, :]].max() == pytest.approx(0.868, abs=0.02)
    assert staircase_violations(region) == 0


def test_region_is_downward_closed():
    config = load_preset("reservation")
    region = map_region(config, GridSpec.uniform(2, 0.0, 0.7, 0.02), workers=1)
    assert staircase_violations(region) == 0
    sat = region.satisfied_grid()
    # reservation caps class 2 near 0.43
    g2 = region.grid.axes[1].values()
    assert g2[sat[0, :]].max() == pytest.approx(0.43, abs=0.02)


def test_worker_count_does_not_change_output(monkeypatch):
    from app.config import settings

    monkeypatch.setattr(settings, "region_chunk_size", 50)
    config = load_preset("complete_sharing")
    grid = GridSpec.uniform(2, 0.0, 0.8, 0.05)
    serial = map_region(config, grid, workers=1)
    parallel = map_region(config, grid, workers=2)
    assert serial.verdicts.tolist() == parallel.verdicts.tolist()
    np.testing.assert_array_equal(serial.success_probs, parallel.success_probs)
    assert serial.csv_rows() == parallel.csv_rows()


def test_error_floor_maps():
    """With p_err > 0 nothing is Stable, yet weak and epsilon regions are not empty"""
    config = load_preset("complete_sharing_perr")
    grid = GridSpec.uniform(2, 0.0, 0.8, 0.04)
    weak = map_region(config, grid, Criterion(CriterionKind.WEAKLY_STABLE), workers=1)
    eps = map_region(
        config, grid, Criterion(CriterionKind.EPSILON_STABLE, EpsilonSpec.uniform(0.04, 2)), workers=1
    )
    assert not np.any(weak.verdicts == Verdict.STABLE.value)
    assert weak.satisfied[0] and eps.satisfied[0]
    assert eps.metadata["criterion"].startswith("epsilon")
    assert staircase_violations(eps) == 0


def test_boundary_polylines():
    config = load_preset("complete_sharing_mixture")
    region = map_region(config, GridSpec.uniform(2, 0.0, 1.0, 0.05), workers=1)
    lines = extract_boundary(region)
    assert lines
    points = np.concatenate(lines)
    # the frontier of G1 + G2 < 0.868 sits near that line
    assert np.all(np.abs(points.sum(axis=1) - 0.868) < 0.15)


def test_indeterminate_cells_serialize():
    """Cells that hit the iteration cap are written as indeterminate and unsatisfied"""
    config = load_preset("irsa_mixture")
    region = map_region(config, GridSpec((Axis(0.86, 0.9, 0.02),)), tols=Tolerances(max_iter=2), workers=1)
    rows = region.csv_rows()
    assert [row[1] for row in rows] == ["indeterminate"] * 3
    assert [row[2] for row in rows] == [0, 0, 0]
    assert json.loads(json.dumps(region.to_dict()))["verdicts"] == ["indeterminate"] * 3


def test_reservation_boundary_corner():
    """The frontier passes within one step of (0.494, 0.413)"""
    config = load_preset("reservation")
    step = 0.005
    grid = GridSpec((Axis(0.44, 0.54, step), Axis(0.36, 0.46, step)))
    region = map_region(config, grid, workers=1)
    points = np.concatenate(extract_boundary(region))
    distance = np.max(np.abs(points - np.array([0.494, 0.413])), axis=1)
    assert distance.min() <= step + 1e-9


def test_boundary_needs_two_classes():
    config = load_preset("irsa_mixture")
    region = map_region(config, GridSpec((Axis(0.0, 1.0, 0.1),)), workers=1)
    with pytest.raises(DimensionError):
        extract_boundary(region)


def test_convexity_probe():
    """Complete sharing is convex; receiver reservation is not"""
    sharing = map_region(load_preset("complete_sharing"), GridSpec.uniform(2, 0.0, 0.8, 0.02), workers=1)
    reservation = map_region(load_preset("reservation"), GridSpec.uniform(2, 0.0, 0.8, 0.02), workers=1)
    convex, witnesses = convexity_probe(sharing)
    assert convex and witnesses == []
    convex, witnesses = convexity_probe(reservation)
    assert not convex
    assert {"a", "b", "midpoint"} <= set(witnesses[0])


def test_reservation_throughput_peak():
    config = load_preset("reservation")
    surface = throughput_surface(config, GridSpec((Axis(0.3, 0.6, 0.01), Axis(0.3, 0.5, 0.01))), workers=1)
    assert surface.total_throughput.max() == pytest.approx(0.9, abs=0.02)


def test_csv_rows_are_deterministic():
    config = load_preset("complete_sharing")
    grid = GridSpec.uniform(2, 0.0, 0.2, 0.1)
    a = map_region(config, grid, workers=1)
    b = map_region(config, grid, workers=1)
    assert a.csv_header()[:3] == ["G1", "G2", "verdict"]
    assert a.csv_rows() == b.csv_rows()
    assert len(a.csv_rows()) == grid.num_cells


def test_sweep_rows():
    config = load_preset("irsa_mixture")
    rows = sweep(config, [1.0], [0.5, 0.8, 1.0])
    assert [r["verdict"] for r in rows[:2]] == ["stable", "stable"]
    assert rows[2]["verdict"] == "unstable"
    assert rows[0]["theta_total"] == pytest.approx(0.5, abs=1e-6)
    assert rows[2]["failure"][0] > 0.01
    assert sweep(config, [1.0], []) == []


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
