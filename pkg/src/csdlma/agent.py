"""The learning MAC: action selection, replay, and the variable-duration loss.

Time advances in decision epochs of unequal length.  Sensing (action 0) takes
one minislot; transmitting (action ``R``) takes ``R``.  A reward earned over an
epoch of ``d`` minislots is spread evenly across those minislots and
discounted per minislot, and the bootstrap value is discounted by ``gamma**d``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from . import neuralnet as nn
from .fairness import best_action
from .netsim import Observation

NUM_OBSERVATIONS = len(Observation)


class ChannelState(NamedTuple):
    """One (action, observation) pair."""

    action: int
    observation: Observation

    def validate(self) -> "ChannelState":
        sensed = self.observation in (Observation.IDLE, Observation.BUSY)
        if self.action < 0 or (self.action == 0) != sensed:
            raise ValueError(f"inconsistent channel state {self}")
        return self


INITIAL_STATE = ChannelState(0, Observation.IDLE)


@dataclass(frozen=True)
class Hyperparams:
    history: int = 20
    epsilon_init: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_floor: float = 0.005
    gamma: float = 0.999
    buffer_size: int = 1000
    batch_size: int = 32
    target_sync_every: int = 20
    max_packet: int = 10
    learning_rate: float = 1e-3
    rms_decay: float = 0.95
    rms_epsilon: float = 1e-8
    hidden: int = 64
    variant: str = "recurrent"
    dtype: str = "float32"
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("epsilon_init", "epsilon_floor"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("history", "buffer_size", "batch_size", "target_sync_every", "max_packet", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.buffer_size < self.history + 1:
            raise ValueError("buffer_size must exceed history")
        if self.variant not in nn.VARIANTS:
            raise ValueError(f"variant must be one of {nn.VARIANTS}")
        if not self.reward_scale > 0:
            raise ValueError("reward_scale must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def num_actions(self) -> int:
        return self.max_packet + 1

    def with_overrides(self, **kwargs) -> "Hyperparams":
        known = {f.name for f in fields(self)}
        unknown = set(kwargs) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


def duration(action: int) -> int:
    return 1 if action == 0 else action


def input_width(num_actions: int) -> int:
    return num_actions + NUM_OBSERVATIONS


def encode(actions: np.ndarray, observations: np.ndarray, num_actions: int) -> np.ndarray:
    """One-hot action followed by one-hot observation, on the last axis.

    Works for any leading shape, e.g. ``(M,)`` windows or ``(B, M)`` batches.
    """
    actions = np.asarray(actions)
    observations = np.asarray(observations)
    out = np.zeros(actions.shape + (num_actions + NUM_OBSERVATIONS,))
    np.put_along_axis(out, actions[..., None], 1.0, axis=-1)
    np.put_along_axis(out, num_actions + observations[..., None], 1.0, axis=-1)
    return out


def update_epsilon(epsilon: float, decay: float = 0.995, floor: float = 0.005) -> float:
    return max(decay * epsilon, floor)


def select_action(
    q: np.ndarray | None,
    last_obs: Observation,
    epsilon: float,
    alpha: float,
    rng: np.random.Generator,
    num_actions: int | None = None,
    num_agents: int = 1,
) -> int:
    """Carrier-sense epsilon-greedy choice.

    After anything but an idle sensing result the node must sense again.
    Otherwise it explores uniformly with probability ``epsilon`` and else takes
    the action with the best fairness score.  ``q`` may be a callable returning
    the Q matrix so that it is only evaluated when needed.
    """
    if last_obs != Observation.IDLE:
        return 0
    if num_actions is None:
        num_actions = (q() if callable(q) else q).shape[1]
    if rng.random() < epsilon:
        return int(rng.integers(num_actions))
    q = q() if callable(q) else q
    return best_action(q, alpha, num_agents)


def td_target(reward, dur, gamma: float, q_next):
    """Bootstrap target for an epoch of ``dur`` minislots.

    The epoch reward is amortised over its minislots with per-minislot
    discounting: ``(r / d) * (1 + gamma + ... + gamma**(d-1))``.
    """
    reward = np.asarray(reward, dtype=float)
    dur = np.asarray(dur, dtype=float)
    discount = gamma**dur
    if gamma == 1.0:
        spread = reward
    else:
        spread = reward / dur * (1.0 - discount) / (1.0 - gamma)
    out = spread + discount * np.asarray(q_next, dtype=float)
    return float(out) if out.ndim == 0 else out


class ReplayBuffer:
    """FIFO store of abbreviated experiences ``(c_t, a_t, d, r, c_{t+1})``.

    Entries live in a ring of fixed capacity; each remembers the agent time
    step it came from so that sampled windows can be checked for continuity.
    """

    def __init__(self, capacity: int, num_nodes: int):
        self.capacity = capacity
        self.num_nodes = num_nodes
        self.c_action = np.zeros(capacity, dtype=np.int64)
        self.c_obs = np.zeros(capacity, dtype=np.int64)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.duration = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros((capacity, num_nodes))
        self.n_action = np.zeros(capacity, dtype=np.int64)
        self.n_obs = np.zeros(capacity, dtype=np.int64)
        self.step = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self._head = 0  # storage slot of the oldest entry
        self._next_step = 0

    def __len__(self) -> int:
        return self.size

    def record(self, c_t: ChannelState, a_t: int, d: int, r, c_next: ChannelState, step: int | None = None):
        if d != duration(a_t):
            raise ValueError(f"duration {d} does not match action {a_t}")
        r = np.asarray(r, dtype=float)
        if r.shape != (self.num_nodes,):
            raise ValueError(f"reward vector must have length {self.num_nodes}")
        if step is None:
            step = self._next_step
        if self.size < self.capacity:
            slot = (self._head + self.size) % self.capacity
            self.size += 1
        else:
            slot = self._head
            self._head = (self._head + 1) % self.capacity
        self.c_action[slot], self.c_obs[slot] = c_t.action, int(c_t.observation)
        self.action[slot], self.duration[slot] = a_t, d
        self.reward[slot] = r
        self.n_action[slot], self.n_obs[slot] = c_next.action, int(c_next.observation)
        self.step[slot] = step
        self._next_step = step + 1

    def slots(self) -> np.ndarray:
        """Storage slots in chronological order, oldest first."""
        return (self._head + np.arange(self.size)) % self.capacity

    def window_ends(self, history: int) -> np.ndarray:
        """Chronological positions that close a window of ``history`` contiguous steps."""
        if self.size < history + 1:
            return np.empty(0, dtype=np.int64)
        steps = self.step[self.slots()]
        gap = steps[history - 1 :] - steps[: self.size - history + 1]
        return np.nonzero(gap == history - 1)[0] + history - 1

    def state_at(self, position: int, history: int) -> list[ChannelState]:
        """The state window whose newest channel state is entry ``position``'s ``c_t``."""
        slots = self.slots()[position - history + 1 : position + 1]
        return [ChannelState(int(a), Observation(int(o))) for a, o in zip(self.c_action[slots], self.c_obs[slots])]


class Minibatch(NamedTuple):
    actions: np.ndarray  # (B, M) actions of the channel states in s_tau
    observations: np.ndarray  # (B, M)
    next_actions: np.ndarray  # (B, M) same for s_tau+1
    next_observations: np.ndarray
    action: np.ndarray  # (B,)
    duration: np.ndarray  # (B,)
    reward: np.ndarray  # (B, L+1)

    @property
    def size(self) -> int:
        return len(self.action)


def sample_continuous(buffer: ReplayBuffer, batch_size: int, history: int, rng: np.random.Generator) -> Minibatch:
    """Rebuild ``batch_size`` full experiences from runs of consecutive entries.

    A sample ending at entry ``tau`` reads the ``c_t`` fields of entries
    ``tau - M + 1 .. tau`` for ``s_tau``; ``s_tau+1`` drops the oldest of those
    and appends entry ``tau``'s ``c_{t+1}``.
    """
    ends = buffer.window_ends(history)
    if len(ends) == 0:
        raise ValueError(f"buffer of size {len(buffer)} cannot form a window of {history}")
    chosen = ends[rng.integers(len(ends), size=batch_size)]
    slots = buffer.slots()
    window = slots[chosen[:, None] + np.arange(1 - history, 1)]  # (B, M)
    last = window[:, -1]
    acts = buffer.c_action[window]
    obs = buffer.c_obs[window]
    next_acts = np.concatenate([acts[:, 1:], buffer.n_action[last][:, None]], axis=1)
    next_obs = np.concatenate([obs[:, 1:], buffer.n_obs[last][:, None]], axis=1)
    return Minibatch(acts, obs, next_acts, next_obs, buffer.action[last], buffer.duration[last], buffer.reward[last])


def compute_loss(
    batch: Minibatch,
    arch: nn.Architecture,
    online: nn.Params,
    target: nn.Params,
    alpha: float,
    gamma: float,
    num_agents: int = 1,
    with_grads: bool = False,
    reward_scale: float = 1.0,
):
    """Mean squared TD error over samples and nodes.

    The bootstrap action maximises the fairness score of the target network's
    estimates at ``s_tau+1``, restricted to sensing when the last channel state
    of ``s_tau+1`` is not an idle sensing result.

    ``reward_scale`` multiplies every reward before it enters the target.  A
    common positive factor scales all Q estimates alike, which leaves the
    fairness argmax unchanged.

    Returns:
        ``(loss, targets)`` where ``targets`` has shape ``(B, L+1)``; with
        ``with_grads`` a third element holds the parameter gradients.
    """
    n = batch.size
    if n == 0:
        raise ValueError("empty minibatch")
    width = arch.num_actions
    s = encode(batch.actions, batch.observations, width)
    s_next = encode(batch.next_actions, batch.next_observations, width)
    q_next = nn.forward(arch, target, s_next)
    boot = np.asarray(best_action(q_next, alpha, num_agents))
    boot[batch.next_observations[:, -1] != Observation.IDLE] = 0
    rows = np.arange(n)
    q_boot = q_next[rows, :, boot]  # (B, L+1)
    targets = td_target(reward_scale * batch.reward, batch.duration[:, None], gamma, q_boot)
    q, cache = nn.forward(arch, online, s, keep=True)
    pred = q[rows, :, batch.action]
    err = pred - targets
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise FloatingPointError("loss is not finite")
    if not with_grads:
        return loss, targets
    dq = np.zeros_like(q)
    dq[rows, :, batch.action] = 2.0 * err / err.size
    return loss, targets, nn.backward(arch, online, cache, dq)


class Gateway:
    """Round-robin dispatcher of transmit actions over the learning network's members."""

    def __init__(self, num_members: int):
        if num_members < 1:
            raise ValueError("a network needs at least one member")
        self.num_members = num_members
        self.pointer = 0

    def dispatch(self, action: int) -> int | None:
        """Member (1-based) that carries out ``action``; ``None`` when sensing."""
        if action == 0:
            return None
        member = self.pointer + 1
        self.pointer = (self.pointer + 1) % self.num_members
        return member


class Agent:
    """A learning node (or gateway of a learning network) and its training loop.

    Args:
        num_others: number of non-learning nodes (L).
        alpha: fairness exponent.
        hyper: hyperparameters.
        num_agents: members of the learning network; above one, row 0 of the
            Q matrix is the whole network and is scored as such.
        seed: seeds parameter initialisation, exploration and replay sampling.
    """

    def __init__(self, num_others: int, alpha: float, hyper: Hyperparams | None = None, num_agents: int = 1, seed: int = 0):
        self.hyper = hyper = hyper or Hyperparams()
        self.alpha = alpha
        self.num_agents = num_agents
        self.num_nodes = num_others + 1
        init_ss, explore_ss, replay_ss = np.random.SeedSequence(seed).spawn(3)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.arch = nn.Architecture(
            hyper.variant, input_width(hyper.num_actions), hyper.history,
            self.num_nodes, hyper.num_actions, hyper.hidden,
        )
        self.online = nn.init_params(self.arch, np.random.default_rng(init_ss), np.dtype(hyper.dtype))
        self.target = nn.copy_params(self.online)
        self.optimizer = nn.RMSProp(hyper.learning_rate, hyper.rms_decay, hyper.rms_epsilon)
        self.buffer = ReplayBuffer(hyper.buffer_size, self.num_nodes)
        self.gateway = Gateway(num_agents)
        self.epsilon = hyper.epsilon_init
        self.steps = 0
        self.updates = 0
        self.last_loss = float("nan")
        self._actions = [INITIAL_STATE.action] * hyper.history
        self._observations = [int(INITIAL_STATE.observation)] * hyper.history

    @property
    def state(self) -> list[ChannelState]:
        return [ChannelState(a, Observation(o)) for a, o in zip(self._actions, self._observations)]

    @property
    def last_observation(self) -> Observation:
        return Observation(self._observations[-1])

    def encoded_state(self) -> np.ndarray:
        return encode(self._actions, self._observations, self.hyper.num_actions)

    def q_values(self, params: nn.Params | None = None) -> np.ndarray:
        return nn.forward(self.arch, self.target if params is None else params, self.encoded_state())

    def act(self) -> int:
        return select_action(
            self.q_values, self.last_observation, self.epsilon, self.alpha,
            self.explore_rng, self.hyper.num_actions, self.num_agents,
        )

    def observe(self, action: int, observation: Observation, reward, dur: int) -> None:
        """Record one epoch's outcome, train, and advance the schedules."""
        h = self.hyper
        c_t = ChannelState(self._actions[-1], Observation(self._observations[-1]))
        c_next = ChannelState(action, Observation(observation)).validate()
        self.buffer.record(c_t, action, dur, reward, c_next, step=self.steps)
        self._actions = self._actions[1:] + [action]
        self._observations = self._observations[1:] + [int(observation)]
        self.steps += 1
        if len(self.buffer.window_ends(h.history)):
            batch = sample_continuous(self.buffer, h.batch_size, h.history, self.replay_rng)
            self.last_loss, _, grads = compute_loss(
                batch, self.arch, self.online, self.target, self.alpha, h.gamma, self.num_agents, with_grads=True,
                reward_scale=h.reward_scale,
            )
            self.optimizer.update(self.online, grads)
            self.updates += 1
        if self.steps % h.target_sync_every == 0:
            nn.sync_target(self.online, self.target)
        self.epsilon = update_epsilon(self.epsilon, h.epsilon_decay, h.epsilon_floor)

    def save(self, path, meta: dict | None = None):
        doc = {"hyperparams": self.hyper.to_dict(), "alpha": self.alpha, "num_agents": self.num_agents}
        doc.update(meta or {})
        return nn.save_checkpoint(path, self.arch, self.online, doc)

    def load(self, path) -> None:
        arch, params, _ = nn.load_checkpoint(path)
        if arch != self.arch:
            raise ValueError(f"checkpoint architecture {arch} does not match {self.arch}")
        self.online = params
        self.target = nn.copy_params(params)
