"""Model-aware benchmark for a node sharing the channel with TDMA and ALOHA.

A node that knows both MACs never transmits in TDMA slots.  In the remaining
slots it either transmits for the whole slot (greedy, which destroys every
ALOHA packet there) or senses the first minislot and fills the other
``R - 1`` minislots only when ALOHA is silent (polite).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .fairness import objective
from .netsim import AlohaConfig, ExternalNode, TdmaConfig, build_channel

STRATEGIES = ("greedy", "polite")


class Throughputs(NamedTuple):
    agent: float
    tdma: float
    aloha: float


@dataclass(frozen=True)
class BenchmarkScenario:
    tdma: TdmaConfig = field(default_factory=lambda: TdmaConfig(5, frozenset({2, 5}), 10))
    aloha: AlohaConfig = field(default_factory=lambda: AlohaConfig(0.5, 10))
    header: float = 0.5
    agent_max_len: int = 10

    def __post_init__(self):
        if self.tdma.slot_len != self.aloha.slot_len:
            raise ValueError("TDMA and ALOHA slots must have equal length")
        if self.slot_len < 2:
            raise ValueError("slots must span at least two minislots")
        if self.agent_max_len < self.slot_len - 1:
            raise ValueError("the benchmark node cannot fill the rest of a slot")

    @property
    def slot_len(self) -> int:
        return self.tdma.slot_len

    @property
    def occupied_fraction(self) -> float:
        return len(self.tdma.occupied_slots) / self.tdma.frame_len


def per_slot_throughputs(strategy: str, q: float, R: int, H: float) -> tuple[float, float]:
    """(benchmark node, ALOHA) throughput within one slot free of TDMA."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if R < 2:
        raise ValueError("R must be at least 2")
    if strategy == "greedy":
        return (1 - q) * (R - H) / R, 0.0
    if strategy == "polite":
        return (1 - q) * (R - 1 - H) / R, q * (R - H) / R
    raise ValueError(f"strategy must be one of {STRATEGIES}")


def benchmark_throughputs(scenario: BenchmarkScenario, strategy: str = "polite") -> Throughputs:
    """Long-run throughputs of the benchmark node, TDMA and ALOHA."""
    R, H, q = scenario.slot_len, scenario.header, scenario.aloha.q
    occ = scenario.occupied_fraction
    free = 1.0 - occ
    agent, aloha = per_slot_throughputs(strategy, q, R, H)
    return Throughputs(free * agent, occ * (1 - q) * (R - H) / R, free * aloha)


def polite_is_optimal(scenario: BenchmarkScenario, alphas) -> dict[float, bool]:
    """Whether the polite strategy beats the greedy one in objective value, per alpha."""
    polite = benchmark_throughputs(scenario, "polite")
    greedy = benchmark_throughputs(scenario, "greedy")
    return {a: objective(polite, a) > objective(greedy, a) for a in alphas}


def simulate_model_aware(
    scenario: BenchmarkScenario, minislots: int, seed: int = 0, strategy: str = "polite"
) -> Throughputs:
    """Run the benchmark node as a scripted node on the simulated channel."""
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    channel = build_channel([scenario.tdma, scenario.aloha], scenario.header, seed)
    me: ExternalNode = channel.nodes[0]
    R = scenario.slot_len
    period = scenario.tdma.frame_len * R
    tdma_starts = {(s - 1) * R for s in scenario.tdma.occupied_slots}
    while channel.now < minislots:
        offset = channel.now % R
        if offset != 0:
            # mid-slot after a decision that did not fill the slot
            channel.run(min(R - offset, minislots - channel.now))
            continue
        if strategy == "greedy":
            if channel.now % period not in tdma_starts:
                me.start(R)
            channel.run(min(R, minislots - channel.now))
            continue
        channel.step_minislot()
        if not me.heard_busy and channel.now < minislots:
            me.start(R - 1)
        channel.run(min(R - 1, minislots - channel.now))
    return Throughputs(*channel.throughputs())


def benchmark_table(scenario: BenchmarkScenario, alphas=(0, 1, 50)) -> list[dict]:
    """Reference rows for plotting: closed-form throughputs and objective per alpha."""
    ref = benchmark_throughputs(scenario)
    return [
        {"alpha": a, "agent": ref.agent, "tdma": ref.tdma, "aloha": ref.aloha, "objective": objective(ref, a)}
        for a in alphas
    ]


def standard_error(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
