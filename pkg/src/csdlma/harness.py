"""Scenario files, experiment runs, summaries and result files.

Scenario file format (INI, parsed with :mod:`configparser`)::

    [scenario]
    name = tdma-aloha
    alpha = 0            # fairness exponent
    agents = 1           # members of the learning network; >1 selects multi mode
    max_packet = 10      # longest packet of the learning network, in minislots
    header = 0.5         # packet header H, in minislots
    steps = 50000        # agent time steps per run
    seeds = 0, 1, 2
    log_every = 1000     # spacing of cumulative-throughput rows in the CSV

    [hyperparams]        # optional; any field of agent.Hyperparams
    learning_rate = 0.001

    [node.tdma]          # one section per other node, kept in file order
    type = tdma
    frame_len = 5
    occupied_slots = 2, 5
    slot_len = 10

Node types and their keys: ``tdma`` (frame_len, occupied_slots, slot_len),
``aloha`` (q, slot_len), ``wifi`` (initial_window, max_backoff_stage,
packet_len), ``pcsma`` (p, packet_len).  Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .agent import Agent, Hyperparams
from .netsim import (
    AlohaConfig, Environment, PCsmaConfig, TdmaConfig, WifiConfig, build_channel,
)
from .oracle import BenchmarkScenario, benchmark_throughputs

log = logging.getLogger(__name__)

NODE_TYPES = {"tdma": TdmaConfig, "aloha": AlohaConfig, "wifi": WifiConfig, "pcsma": PCsmaConfig}
SCENARIO_KEYS = ("name", "alpha", "agents", "max_packet", "header", "steps", "seeds", "log_every")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    name: str
    config: TdmaConfig | AlohaConfig | WifiConfig | PCsmaConfig

    @property
    def kind(self) -> str:
        return next(k for k, cls in NODE_TYPES.items() if isinstance(self.config, cls))

    @property
    def packet_len(self) -> int:
        return getattr(self.config, "slot_len", None) or self.config.packet_len


@dataclass(frozen=True)
class ScenarioConfig:
    nodes: tuple[NodeSpec, ...]
    alpha: float = 0.0
    agents: int = 1
    max_packet: int = 10
    header: float = 0.5
    steps: int = 50_000
    seeds: tuple[int, ...] = (0,)
    log_every: int = 1000
    hyper: dict = field(default_factory=dict)
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        self.validate()

    def validate(self) -> None:
        if self.agents < 1:
            raise ConfigError("the learning network needs at least one member")
        if not 0.0 < self.header < 1.0:
            raise ConfigError(f"header must lie in (0, 1), got {self.header}")
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise ConfigError("alpha must be a finite nonnegative number")
        if self.max_packet < 1 or self.steps < 0 or self.log_every < 1:
            raise ConfigError("max_packet and log_every must be positive, steps nonnegative")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ConfigError("node names must be unique")
        try:
            self.hyperparams()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad hyperparameters: {exc}") from exc

    @property
    def mode(self) -> str:
        return "multi" if self.agents > 1 else "single"

    @property
    def num_others(self) -> int:
        return len(self.nodes)

    def node_names(self) -> list[str]:
        return ["cs-dlma"] + [n.name for n in self.nodes]

    def hyperparams(self) -> Hyperparams:
        return Hyperparams().with_overrides(max_packet=self.max_packet, **self.hyper)

    def with_changes(self, **kwargs) -> "ScenarioConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(kwargs)
        return ScenarioConfig(**values)


def _parse_value(text: str, kind: type):
    if kind is bool:
        return text.strip().lower() in ("1", "true", "yes", "on")
    if kind in (int, float, str):
        return kind(text.strip())
    raise TypeError(kind)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(",", " ").split())


_NODE_FIELDS = {
    "tdma": {"frame_len": int, "occupied_slots": _int_list, "slot_len": int},
    "aloha": {"q": float, "slot_len": int},
    "wifi": {"initial_window": int, "max_backoff_stage": int, "packet_len": int},
    "pcsma": {"p": float, "packet_len": int},
}
_SCENARIO_FIELDS = {
    "name": str, "alpha": float, "agents": int, "max_packet": int, "header": float,
    "steps": int, "seeds": _int_list, "log_every": int,
}


def _hyper_types() -> dict[str, type]:
    return {f.name: type(f.default) for f in fields(Hyperparams)}


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse a scenario file's text; raises :class:`ConfigError` on any problem."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if not parser.has_section("scenario"):
        raise ConfigError(f"{source}: missing [scenario] section")
    values: dict = {}
    nodes = []
    hyper: dict = {}
    hyper_types = _hyper_types()
    try:
        for section in parser.sections():
            items = dict(parser.items(section))
            if section == "scenario":
                for key, raw in items.items():
                    if key not in _SCENARIO_FIELDS:
                        raise ConfigError(f"unknown key {key!r} in [scenario]")
                    conv = _SCENARIO_FIELDS[key]
                    values[key] = conv(raw) if conv not in (int, float, str) else _parse_value(raw, conv)
            elif section == "hyperparams":
                for key, raw in items.items():
                    if key not in hyper_types:
                        raise ConfigError(f"unknown hyperparameter {key!r}")
                    hyper[key] = _parse_value(raw, hyper_types[key])
            elif section.startswith("node."):
                name = section[len("node."):]
                kind = items.pop("type", None)
                if kind not in NODE_TYPES:
                    raise ConfigError(f"[{section}]: type must be one of {sorted(NODE_TYPES)}")
                spec = _NODE_FIELDS[kind]
                kwargs = {}
                for key, raw in items.items():
                    if key not in spec:
                        raise ConfigError(f"unknown key {key!r} in [{section}]")
                    conv = spec[key]
                    kwargs[key] = conv(raw) if conv not in (int, float, str) else _parse_value(raw, conv)
                nodes.append(NodeSpec(name, NODE_TYPES[kind](**kwargs)))
            else:
                raise ConfigError(f"unknown section [{section}]")
        return ScenarioConfig(nodes=tuple(nodes), hyper=hyper, **values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    return parse_config(text, str(path))


def _fmt(value) -> str:
    if isinstance(value, (frozenset, set)):
        value = sorted(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def serialize_config(config: ScenarioConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["scenario"] = {key: _fmt(getattr(config, key)) for key in SCENARIO_KEYS}
    if config.hyper:
        parser["hyperparams"] = {k: _fmt(v) for k, v in config.hyper.items()}
    for node in config.nodes:
        section = {"type": node.kind}
        section.update({f.name: _fmt(getattr(node.config, f.name)) for f in fields(node.config)})
        parser[f"node.{node.name}"] = section
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


@dataclass
class RunRecord:
    """Per-step log of one run.

    ``rewards[k, i]`` is node ``i``'s reward in agent step ``k`` (node 0 is the
    learning network); ``members[k]`` is the member that transmitted in step
    ``k`` or 0 when the network sensed.
    """

    seed: int
    node_names: list[str]
    actions: np.ndarray
    durations: np.ndarray
    rewards: np.ndarray
    epsilons: np.ndarray
    members: np.ndarray
    agents: int = 1

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def minislots(self) -> np.ndarray:
        """Elapsed minislots at the end of every step."""
        return np.cumsum(self.durations)

    def cumulative_throughputs(self) -> np.ndarray:
        """``(steps, nodes)`` cumulative reward over cumulative minislots."""
        return np.cumsum(self.rewards, axis=0) / self.minislots[:, None]

    def member_rewards(self) -> np.ndarray:
        """``(steps, agents)`` network reward split by the member that earned it."""
        out = np.zeros((self.steps, self.agents))
        sent = self.members > 0
        out[np.nonzero(sent)[0], self.members[sent] - 1] = self.rewards[sent, 0]
        return out

    def window_throughputs(self, window: int | None = None) -> np.ndarray:
        """Throughput of every node over the last ``window`` steps (all if None)."""
        if self.steps == 0:
            raise ValueError("empty run")
        start = 0 if window is None else max(self.steps - window, 0)
        return self.rewards[start:].sum(axis=0) / self.durations[start:].sum()

    def digest(self) -> bytes:
        """Canonical bytes of the record, for reproducibility checks."""
        parts = [self.actions, self.durations, self.rewards, self.epsilons, self.members]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


def run_single(config: ScenarioConfig, seed: int, progress: Callable[[int, RunRecord], None] | None = None) -> RunRecord:
    """One training run of the learning network against the scenario's nodes."""
    hyper = config.hyperparams()
    channel = build_channel(
        [n.config for n in config.nodes], config.header, np.random.default_rng([seed, 1]),
    )
    env = Environment(channel)
    agent = Agent(config.num_others, config.alpha, hyper, num_agents=config.agents, seed=seed)
    n = config.steps
    actions = np.zeros(n, dtype=np.int64)
    durations = np.zeros(n, dtype=np.int64)
    rewards = np.zeros((n, config.num_others + 1))
    epsilons = np.zeros(n)
    members = np.zeros(n, dtype=np.int64)
    for k in range(n):
        epsilons[k] = agent.epsilon
        action = agent.act()
        member = agent.gateway.dispatch(action)
        obs, reward, dur = env.act(action)
        agent.observe(action, obs, reward, dur)
        actions[k], durations[k], rewards[k] = action, dur, reward
        members[k] = member or 0
        if progress is not None and (k + 1) % config.log_every == 0:
            progress(k + 1, RunRecord(seed, config.node_names(), actions[: k + 1], durations[: k + 1],
                                      rewards[: k + 1], epsilons[: k + 1], members[: k + 1], config.agents))
    return RunRecord(seed, config.node_names(), actions, durations, rewards, epsilons, members, config.agents)


def run_experiment(config: ScenarioConfig, progress=None, workers: int = 1) -> list[RunRecord]:
    """One :class:`RunRecord` per seed, in seed order.

    Seeds are independent, so with ``workers > 1`` they run in separate
    processes (``progress`` is then ignored).
    """
    config.validate()
    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_single, [config] * len(config.seeds), config.seeds))
    records = []
    for seed in config.seeds:
        log.info("run %s seed %d: %d steps", config.name, seed, config.steps)
        records.append(run_single(config, seed, progress))
    return records


@dataclass
class NodeStats:
    mean: float
    std: float
    values: list[float]


def summarize(records: Sequence[RunRecord], window: int | None = None) -> dict[str, NodeStats]:
    """Across-seed mean and std of each node's throughput over the final ``window`` steps.

    In multi mode the learning network's members are reported individually as
    ``cs-dlma.1``, ``cs-dlma.2``, ... next to the network total ``cs-dlma``.
    """
    if not records:
        raise ValueError("no records to summarize")
    if window is not None and any(window > r.steps for r in records):
        raise ValueError("window exceeds run length")
    names = records[0].node_names
    per_run = []
    for rec in records:
        values = dict(zip(names, rec.window_throughputs(window)))
        if rec.agents > 1:
            start = 0 if window is None else rec.steps - window
            split = rec.member_rewards()[start:].sum(axis=0) / rec.durations[start:].sum()
            values.update({f"cs-dlma.{m + 1}": v for m, v in enumerate(split)})
        per_run.append(values)
    out = {}
    for name in per_run[0]:
        vals = sorted(float(v[name]) for v in per_run)
        out[name] = NodeStats(float(np.mean(vals)), float(np.std(vals)), vals)
    return out


def oracle_reference(config: ScenarioConfig) -> dict[str, float] | None:
    """Model-aware benchmark values when the scenario is one node vs TDMA + ALOHA."""
    kinds = [n.kind for n in config.nodes]
    if config.agents != 1 or sorted(kinds) != ["aloha", "tdma"]:
        return None
    tdma = next(n for n in config.nodes if n.kind == "tdma")
    aloha = next(n for n in config.nodes if n.kind == "aloha")
    try:
        scenario = BenchmarkScenario(tdma.config, aloha.config, config.header, config.max_packet)
    except ValueError:
        return None
    ref = benchmark_throughputs(scenario)
    return {"cs-dlma": ref.agent, tdma.name: ref.tdma, aloha.name: ref.aloha}


CSV_COLUMNS = ("run_id", "step", "minislots", "node_id", "cum_throughput", "epsilon")


def throughput_rows(records: Sequence[RunRecord], every: int) -> list[tuple]:
    rows = []
    for run_id, rec in enumerate(records):
        if rec.steps == 0:
            continue
        cum = rec.cumulative_throughputs()
        minislots = rec.minislots
        marks = list(range(every - 1, rec.steps, every))
        if not marks or marks[-1] != rec.steps - 1:
            marks.append(rec.steps - 1)
        for k in marks:
            for i, name in enumerate(rec.node_names):
                rows.append((run_id, k + 1, int(minislots[k]), name, float(cum[k, i]), float(rec.epsilons[k])))
    return rows


def summary_document(config: ScenarioConfig, records: Sequence[RunRecord], window: int | None) -> dict:
    doc = {
        "config": serialize_config(config),
        "seeds": [r.seed for r in records],
        "window": window,
        "nodes": {},
        "oracle": oracle_reference(config),
    }
    if records and all(r.steps for r in records):
        doc["nodes"] = {k: vars(v) for k, v in summarize(records, window).items()}
    return doc


def emit(records: Sequence[RunRecord], out_dir, fmt: str, config: ScenarioConfig, window: int | None = None) -> list[Path]:
    """Write ``throughput.csv`` and/or ``summary.json`` into ``out_dir``."""
    if fmt not in ("csv", "json", "both"):
        raise ValueError("format must be csv, json or both")
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if fmt in ("csv", "both"):
            path = out_dir / "throughput.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(CSV_COLUMNS)
                writer.writerows(throughput_rows(records, config.log_every))
            written.append(path)
        if fmt in ("json", "both"):
            path = out_dir / "summary.json"
            path.write_text(json.dumps(summary_document(config, records, window), indent=2) + "\n")
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write results to {out_dir}: {exc}") from exc
    return written


def read_summary(path) -> dict:
    return json.loads(Path(path).read_text())


def pcsma_throughputs(config: ScenarioConfig, p: float, minislots: int, seed: int = 0) -> np.ndarray:
    """Throughputs with the learning node replaced by p-persistent CSMA.

    The p-CSMA node sends packets of ``max_packet`` minislots; index 0 of the
    result is the p-CSMA node, followed by the scenario's nodes.
    """
    configs = [PCsmaConfig(p, config.max_packet)] + [n.config for n in config.nodes]
    channel = build_channel(configs, config.header, np.random.default_rng([seed, 2]), external=False)
    channel.run(minislots)
    return channel.throughputs()


def frontier_table(
    config: ScenarioConfig,
    alphas: Sequence[float],
    ps: Sequence[float],
    minislots: int = 1_000_000,
    window: int | None = None,
    learned: dict[float, Sequence[RunRecord]] | None = None,
) -> list[dict]:
    """(other node, learning node) throughput pairs for an alpha sweep and a p sweep.

    Meant for scenarios with a single other node (e.g. one WiFi station).
    Learned points are trained here unless ``learned`` already holds records
    for that alpha.
    """
    if config.num_others != 1:
        raise ConfigError("the frontier compares against exactly one other node")
    other = config.nodes[0].name
    rows = []
    learned = dict(learned or {})
    for alpha in alphas:
        recs = learned.get(alpha)
        if recs is None:
            recs = run_experiment(config.with_changes(alpha=alpha))
        stats = summarize(recs, window)
        rows.append({"scheme": "cs-dlma", "param": alpha, "other": stats[other].mean, "agent": stats["cs-dlma"].mean})
    for p in ps:
        values = np.mean([pcsma_throughputs(config, p, minislots, s) for s in config.seeds], axis=0)
        rows.append({"scheme": "p-csma", "param": p, "other": float(values[1]), "agent": float(values[0])})
    return rows


def write_frontier(rows: list[dict], path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["scheme", "param", "other", "agent"])
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write frontier table {path}: {exc}") from exc
    return path
