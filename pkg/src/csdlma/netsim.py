"""Minislot-level simulation of a shared wireless channel.

Every node is advanced in lockstep, one minislot per tick.  A packet is lost
if any other node transmits in any minislot of its span; a successful packet
of length ``R`` earns its owner ``R - H`` minislots of payload, credited at its
final minislot.

Node 0 of a :class:`Channel` may be an :class:`ExternalNode` whose
transmissions are dictated from outside (the learning agent or a scripted
benchmark node).  All other nodes run their own MAC state machine.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class Outcome(enum.Enum):
    SUCCESSFUL = "successful"
    COLLIDED = "collided"


class Observation(enum.IntEnum):
    """What the learning node sees at the end of one of its time steps."""

    IDLE = 0
    BUSY = 1
    SUCCESSFUL = 2
    COLLIDED = 3


class PacketRecord(NamedTuple):
    owner: int
    start: int
    duration: int
    outcome: Outcome


@dataclass(frozen=True)
class TdmaConfig:
    frame_len: int
    occupied_slots: frozenset[int]
    slot_len: int = 10

    def __post_init__(self):
        object.__setattr__(self, "occupied_slots", frozenset(int(s) for s in self.occupied_slots))
        if self.frame_len < 1 or self.slot_len < 1:
            raise ValueError("frame_len and slot_len must be positive")
        if not self.occupied_slots <= set(range(1, self.frame_len + 1)):
            raise ValueError(f"occupied slots must lie in 1..{self.frame_len}")


@dataclass(frozen=True)
class AlohaConfig:
    q: float
    slot_len: int = 10

    def __post_init__(self):
        _check_probability(self.q, "q")
        if self.slot_len < 1:
            raise ValueError("slot_len must be positive")


@dataclass(frozen=True)
class WifiConfig:
    initial_window: int = 2
    max_backoff_stage: int = 6
    packet_len: int = 10

    def __post_init__(self):
        if self.initial_window < 1 or self.max_backoff_stage < 0 or self.packet_len < 1:
            raise ValueError("invalid WiFi parameters")


@dataclass(frozen=True)
class PCsmaConfig:
    p: float
    packet_len: int = 10

    def __post_init__(self):
        _check_probability(self.p, "p")
        if self.packet_len < 1:
            raise ValueError("packet_len must be positive")


def _check_probability(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


class Node:
    """Base class of a MAC state machine.

    Per tick the channel calls :meth:`decide` (transmit this minislot?), then
    :meth:`sense` with whether any *other* node transmitted, then
    :meth:`on_outcome` if the node's packet ended at this minislot.
    """

    kind = "node"
    senses = False

    def __init__(self):
        self.packet_start: int | None = None
        self.packet_len = 0

    def decide(self, now: int, rng: np.random.Generator) -> bool:
        raise NotImplementedError

    def sense(self, busy: bool) -> None:
        pass

    def on_outcome(self, outcome: Outcome, rng: np.random.Generator) -> None:
        pass

    @property
    def transmitting(self) -> bool:
        return self.packet_start is not None


class TdmaNode(Node):
    kind = "tdma"

    def __init__(self, config: TdmaConfig):
        super().__init__()
        self.config = config
        self.packet_len = config.slot_len
        self._period = config.frame_len * config.slot_len
        # minislot offsets (within a frame) at which a packet starts
        self._starts = frozenset((s - 1) * config.slot_len for s in config.occupied_slots)

    def decide(self, now, rng):
        if self.packet_start is None and (now % self._period) in self._starts:
            self.packet_start = now
        return self.packet_start is not None


class AlohaNode(Node):
    kind = "aloha"

    def __init__(self, config: AlohaConfig):
        super().__init__()
        self.config = config
        self.packet_len = config.slot_len

    def decide(self, now, rng):
        if now % self.config.slot_len == 0 and rng.random() < self.config.q:
            self.packet_start = now
        return self.packet_start is not None


class _SensingNode(Node):
    """Shared logic of nodes that transmit only after sensing an idle minislot."""

    senses = True

    def __init__(self, packet_len: int):
        super().__init__()
        self.packet_len = packet_len
        self.last_idle = False

    def sense(self, busy):
        # a node hears nothing useful while it is transmitting itself
        self.last_idle = not busy and not self.transmitting


class WifiNode(_SensingNode):
    """Saturated CSMA/CA station with binary exponential backoff.

    The counter drops by one per idle minislot and freezes on busy ones.  With
    the counter at zero the station transmits in the minislot that follows an
    idle minislot it sensed.
    """

    kind = "wifi"

    def __init__(self, config: WifiConfig, rng: np.random.Generator):
        super().__init__(config.packet_len)
        self.config = config
        self.window = config.initial_window
        self.max_window = config.initial_window * 2**config.max_backoff_stage
        self.counter = int(rng.integers(self.window))

    def decide(self, now, rng):
        if self.packet_start is None and self.counter == 0 and self.last_idle:
            self.packet_start = now
        return self.packet_start is not None

    def sense(self, busy):
        super().sense(busy)
        if self.last_idle and self.counter > 0:
            self.counter -= 1

    def on_outcome(self, outcome, rng):
        wifi_on_outcome(self, outcome, rng)


def wifi_on_outcome(node: WifiNode, outcome: Outcome, rng: np.random.Generator) -> None:
    """Binary exponential backoff update after the node's packet finished."""
    if outcome is Outcome.COLLIDED:
        node.window = min(2 * node.window, node.max_window)
    else:
        node.window = node.config.initial_window
    node.counter = int(rng.integers(node.window))


class PCsmaNode(_SensingNode):
    """p-persistent CSMA: after an idle minislot, transmit with probability p."""

    kind = "pcsma"

    def __init__(self, config: PCsmaConfig):
        super().__init__(config.packet_len)
        self.config = config

    def decide(self, now, rng):
        if self.packet_start is None and self.last_idle and rng.random() < self.config.p:
            self.packet_start = now
        return self.packet_start is not None


class ExternalNode(Node):
    """A node whose transmissions are scheduled by a controller.

    The controller calls :meth:`start` with a packet length; the node then
    transmits for that many minislots.  ``heard_busy`` reports whether any
    other node transmitted during the most recent minislot.
    """

    kind = "cs-dlma"
    senses = True

    def __init__(self):
        super().__init__()
        self.heard_busy = False
        self.last_outcome: Outcome | None = None
        self._pending = False

    def start(self, length: int) -> None:
        if self.transmitting:
            raise RuntimeError("external node is already transmitting")
        if length < 1:
            raise ValueError("packet length must be positive")
        self.packet_len = length
        self.last_outcome = None
        self._pending = True

    def decide(self, now, rng):
        if self._pending:
            self.packet_start = now
            self._pending = False
        return self.packet_start is not None

    def sense(self, busy):
        self.heard_busy = busy

    def on_outcome(self, outcome, rng):
        self.last_outcome = outcome


def make_node(config, rng: np.random.Generator) -> Node:
    if isinstance(config, TdmaConfig):
        return TdmaNode(config)
    if isinstance(config, AlohaConfig):
        return AlohaNode(config)
    if isinstance(config, WifiConfig):
        return WifiNode(config, rng)
    if isinstance(config, PCsmaConfig):
        return PCsmaNode(config)
    raise TypeError(f"unknown node config {config!r}")


@dataclass
class Channel:
    """A set of nodes sharing one channel, advanced one minislot at a time.

    Attributes:
        nodes: node 0 first; rewards are indexed like this list.
        header: packet header duration ``H`` in minislots, ``0 < H < 1``.
        now: minislots elapsed.
        rewards: cumulative payload credit of every node.
    """

    nodes: list[Node]
    header: float
    rng: np.random.Generator
    record_packets: bool = False
    now: int = 0
    rewards: np.ndarray = field(init=False)
    packets: list[PacketRecord] = field(init=False, default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.header < 1.0:
            raise ValueError(f"header must lie in (0, 1), got {self.header}")
        self.rewards = np.zeros(len(self.nodes))
        self._collided = [False] * len(self.nodes)

    def step_minislot(self) -> np.ndarray:
        """Advance one minislot; return the rewards credited in it."""
        nodes = self.nodes
        now = self.now
        rng = self.rng
        active = [node.decide(now, rng) for node in nodes]
        n_active = sum(active)
        if n_active > 1:
            for i, on in enumerate(active):
                if on:
                    self._collided[i] = True
        gained = np.zeros(len(nodes))
        for i, node in enumerate(nodes):
            if node.senses:
                node.sense(n_active - active[i] > 0)
            if active[i] and now - node.packet_start == node.packet_len - 1:
                outcome = Outcome.COLLIDED if self._collided[i] else Outcome.SUCCESSFUL
                if outcome is Outcome.SUCCESSFUL:
                    gained[i] = node.packet_len - self.header
                if self.record_packets:
                    self.packets.append(PacketRecord(i, node.packet_start, node.packet_len, outcome))
                node.packet_start = None
                self._collided[i] = False
                node.on_outcome(outcome, rng)
        self.rewards += gained
        self.now = now + 1
        return gained

    def run(self, minislots: int) -> np.ndarray:
        """Advance ``minislots`` ticks and return the rewards earned in them."""
        total = np.zeros(len(self.nodes))
        for _ in range(minislots):
            total += self.step_minislot()
        return total

    def throughputs(self) -> np.ndarray:
        if self.now == 0:
            raise ZeroDivisionError("no minislots have elapsed")
        return self.rewards / self.now


def build_channel(
    configs: Sequence,
    header: float = 0.5,
    seed: int | np.random.Generator = 0,
    external: bool = True,
    record_packets: bool = False,
) -> Channel:
    """Channel with an optional external node 0 followed by ``configs`` in order."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nodes: list[Node] = [ExternalNode()] if external else []
    nodes += [make_node(c, rng) for c in configs]
    return Channel(nodes, header, rng, record_packets=record_packets)


class Environment:
    """The channel as seen by a learning node that acts in variable-length steps.

    :meth:`act` runs one decision epoch: action 0 senses for one minislot,
    action ``R >= 1`` transmits a packet of ``R`` minislots.  It returns the
    observation, the reward vector accumulated over the epoch (index 0 is the
    learning node), and the epoch's duration in minislots.
    """

    def __init__(self, channel: Channel):
        if not isinstance(channel.nodes[0], ExternalNode):
            raise ValueError("node 0 of the channel must be an ExternalNode")
        self.channel = channel
        self.me: ExternalNode = channel.nodes[0]

    @property
    def num_others(self) -> int:
        return len(self.channel.nodes) - 1

    def act(self, action: int) -> tuple[Observation, np.ndarray, int]:
        if action < 0:
            raise ValueError("action must be nonnegative")
        if action == 0:
            reward = self.channel.step_minislot()
            obs = Observation.BUSY if self.me.heard_busy else Observation.IDLE
            return obs, reward, 1
        self.me.start(action)
        reward = self.channel.run(action)
        ok = self.me.last_outcome is Outcome.SUCCESSFUL
        return (Observation.SUCCESSFUL if ok else Observation.COLLIDED), reward, action


def throughput(rewards: Sequence[float], durations: Sequence[int]) -> float:
    """Cumulative reward over cumulative minislots."""
    elapsed = float(np.sum(durations))
    if elapsed <= 0:
        raise ZeroDivisionError("no time has elapsed")
    return float(np.sum(rewards)) / elapsed
