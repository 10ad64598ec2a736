"""Alpha-fair utilities and the action scores built from them.

The Q-network emits one value estimate per (node, action) pair.  An action is
scored by summing the alpha-fair utility of each node's estimate; the agent
picks the action with the highest score.
"""

from __future__ import annotations

import numpy as np

X_MIN = 1e-6


def _check_alpha(alpha: float) -> None:
    if alpha < 0 or not np.isfinite(alpha):
        raise ValueError(f"alpha must be a finite nonnegative number, got {alpha!r}")


def _utility(x: np.ndarray, alpha: float) -> np.ndarray:
    # no validation; x is assumed already clamped when alpha > 0
    if alpha == 0:
        return x
    if alpha == 1:
        return np.log(x)
    with np.errstate(over="ignore"):
        return np.power(x, 1.0 - alpha) / (1.0 - alpha)


def alpha_utility(x, alpha: float):
    """Alpha-fair utility of a throughput (or Q estimate) ``x``.

    ``log(x)`` when ``alpha == 1``, ``x**(1 - alpha) / (1 - alpha)`` otherwise.
    Values below ``X_MIN`` are raised to ``X_MIN`` so that the result stays
    finite for ``alpha >= 1``.

    Raises:
        ValueError: if ``x`` or ``alpha`` is negative.
    """
    _check_alpha(alpha)
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("alpha_utility is undefined for negative x")
    out = _utility(np.maximum(arr, X_MIN), alpha)
    return float(out) if out.ndim == 0 else out


def _clamped(q: np.ndarray, alpha: float) -> np.ndarray:
    # the linear utility is defined everywhere, so only alpha > 0 needs the floor
    return q if alpha == 0 else np.maximum(q, X_MIN)


def _check_action(q: np.ndarray, action: int) -> None:
    if q.ndim != 2:
        raise ValueError(f"expected a (nodes, actions) matrix, got shape {q.shape}")
    if not 0 <= action < q.shape[1]:
        raise IndexError(f"action {action} outside 0..{q.shape[1] - 1}")


def score_single(q, action: int, alpha: float) -> float:
    """Sum of per-node utilities of column ``action`` of ``q``."""
    _check_alpha(alpha)
    q = np.asarray(q, dtype=float)
    _check_action(q, action)
    return float(np.sum(_utility(_clamped(q[:, action], alpha), alpha)))


def score_multi(q, action: int, alpha: float, num_agents: int) -> float:
    """Score for a learning network of ``num_agents`` nodes sharing row 0.

    Row 0 holds the whole network's estimate; each member is credited an equal
    share of it, so the network contributes ``num_agents * f(q0 / num_agents)``.
    """
    _check_alpha(alpha)
    if num_agents < 1:
        raise ValueError(f"num_agents must be >= 1, got {num_agents}")
    q = np.asarray(q, dtype=float)
    _check_action(q, action)
    return float(action_scores(q, alpha, num_agents)[action])


def action_scores(q, alpha: float, num_agents: int = 1) -> np.ndarray:
    """Scores for every action at once.

    ``q`` has shape ``(..., nodes, actions)``; the result has shape
    ``(..., actions)``.  ``num_agents == 1`` gives the single-node score.
    """
    q = np.asarray(q, dtype=float)
    if num_agents == 1:
        return _utility(_clamped(q, alpha), alpha).sum(axis=-2)
    own = _clamped(q[..., 0, :] / num_agents, alpha)
    others = _clamped(q[..., 1:, :], alpha)
    return num_agents * _utility(own, alpha) + _utility(others, alpha).sum(axis=-2)


def best_action(q, alpha: float, num_agents: int = 1) -> np.ndarray | int:
    """Argmax of :func:`action_scores`; ties go to the lowest action index."""
    best = np.argmax(action_scores(q, alpha, num_agents), axis=-1)
    return int(best) if np.ndim(best) == 0 else best


def objective(throughputs, alpha: float) -> float:
    """Network-wide alpha-fair objective: the sum of node utilities."""
    return float(np.sum(alpha_utility(np.asarray(throughputs, dtype=float), alpha)))
