import numpy as np
import pytest

from csdlma.netsim import AlohaConfig, TdmaConfig
from csdlma.oracle import (
    BenchmarkScenario, benchmark_table, benchmark_throughputs, per_slot_throughputs, polite_is_optimal,
    simulate_model_aware, standard_error,
)


def scenario(q=0.5, occupied=(2, 5), frame=5, R=10):
    return BenchmarkScenario(TdmaConfig(frame, frozenset(occupied), R), AlohaConfig(q, R), 0.5, R)


def test_per_slot_table_values():
    assert per_slot_throughputs("greedy", 0.5, 10, 0.5) == (0.475, 0.0)
    assert per_slot_throughputs("polite", 0.5, 10, 0.5) == (0.425, 0.475)
    assert per_slot_throughputs("polite", 0.0, 10, 0.5) == (0.85, 0.0)
    with pytest.raises(ValueError):
        per_slot_throughputs("polite", 1.2, 10, 0.5)
    with pytest.raises(ValueError):
        per_slot_throughputs("rude", 0.5, 10, 0.5)
    with pytest.raises(ValueError):
        per_slot_throughputs("polite", 0.5, 1, 0.5)


def test_benchmark_values():
    assert benchmark_throughputs(BenchmarkScenario()) == pytest.approx((0.255, 0.19, 0.285), abs=1e-15)
    assert benchmark_throughputs(scenario(occupied=())) == pytest.approx((0.425, 0.0, 0.475))
    assert benchmark_throughputs(scenario(q=0.0, occupied=(1, 2, 3, 4, 5))) == pytest.approx((0.0, 0.95, 0.0))


def test_scenario_validation():
    with pytest.raises(ValueError):
        BenchmarkScenario(TdmaConfig(5, frozenset({1}), 10), AlohaConfig(0.5, 5))


def test_model_aware_simulation_deterministic_cases():
    sim = simulate_model_aware(scenario(q=0.0), 50_000)
    assert sim.agent == pytest.approx(0.6 * 0.85, abs=1e-12) and sim.aloha == 0.0
    greedy = simulate_model_aware(BenchmarkScenario(), 50_000, strategy="greedy")
    assert greedy.aloha == 0.0


@pytest.mark.parametrize("q", np.round(np.arange(0, 1.01, 0.1), 1))
@pytest.mark.parametrize("strategy", ["polite", "greedy"])
def test_closed_form_within_three_standard_errors(q, strategy):
    sc = scenario(q=q)
    runs = np.array([simulate_model_aware(sc, 10_000, seed=s, strategy=strategy) for s in range(6)])
    ref = benchmark_throughputs(sc, strategy)
    for node in range(3):
        se = standard_error(runs[:, node])
        assert abs(runs[:, node].mean() - ref[node]) <= 3 * se + 1e-12
        assert np.all((runs[:, node] >= 0) & (runs[:, node] <= 1))
    assert np.all(runs.sum(axis=1) <= 1)


def test_polite_beats_greedy_for_every_alpha():
    assert all(polite_is_optimal(BenchmarkScenario(), [0, 0.5, 1, 2, 5, 10, 50, 200]).values())


def test_benchmark_table_rows():
    rows = benchmark_table(BenchmarkScenario(), [0, 1])
    assert [r["alpha"] for r in rows] == [0, 1]
    assert rows[0]["objective"] == pytest.approx(0.73)
