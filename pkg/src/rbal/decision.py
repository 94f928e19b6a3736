"""Single-step maintenance decision process: expected utility, MEU action and EVPI.

Utility attaches to the chosen action and the forecast state only:

    EU(p, d) = U(d) + sum_y p(y) sum_y' P(y' | y, d) U(y')

Posteriors may be passed as a single ``(K,)`` vector or a ``(n, K)`` batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

DO_NOTHING = 0
REPAIR = 1


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class DecisionProcess:
    action_utilities: np.ndarray   # (A,)
    state_utilities: np.ndarray    # (K,)
    transitions: np.ndarray        # (A, K, K), row y_t -> column y_{t+1}
    inspection_cost: float
    actions: tuple = ()

    def __post_init__(self):
        au = np.asarray(self.action_utilities, dtype=float)
        su = np.asarray(self.state_utilities, dtype=float)
        T = np.asarray(self.transitions, dtype=float)
        A, K = au.size, su.size
        if A < 2:
            raise ValueError("a decision process needs at least two actions")
        if T.shape != (A, K, K):
            raise ValueError(f"transitions must have shape {(A, K, K)}, got {T.shape}")
        if np.any(T < 0) or not np.allclose(T.sum(axis=2), 1.0, rtol=0, atol=1e-12):
            raise ValueError("each transition row must be nonnegative and sum to 1")
        if not self.inspection_cost >= 0:
            raise ValueError("inspection_cost must be nonnegative")
        names = tuple(self.actions) if self.actions else tuple(f"action_{a}" for a in range(A))
        if len(names) != A:
            raise ValueError("one name per action required")
        object.__setattr__(self, "action_utilities", au)
        object.__setattr__(self, "state_utilities", su)
        object.__setattr__(self, "transitions", T)
        object.__setattr__(self, "actions", names)
        object.__setattr__(self, "inspection_cost", float(self.inspection_cost))
        # Q[d, y] = utility of taking d when the current state is y
        object.__setattr__(self, "_q", au[:, None] + T @ su)

    @property
    def n_actions(self) -> int:
        return self.action_utilities.size

    @property
    def K(self) -> int:
        return self.state_utilities.size

    @property
    def state_action_utility(self) -> np.ndarray:
        return self._q.copy()

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "actions": list(self.actions),
            "action_utilities": self.action_utilities.tolist(),
            "state_utilities": self.state_utilities.tolist(),
            "transitions": {a: self.transitions[i].tolist() for i, a in enumerate(self.actions)},
            "inspection_cost": self.inspection_cost,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DecisionProcess":
        actions = tuple(doc.get("actions", ()))
        trans = doc["transitions"]
        if isinstance(trans, dict):
            if not actions:
                actions = tuple(trans)
            missing = [a for a in actions if a not in trans]
            if missing:
                raise ValueError(f"transitions missing for actions {missing}")
            trans = [trans[a] for a in actions]
        return cls(
            action_utilities=doc["action_utilities"],
            state_utilities=doc["state_utilities"],
            transitions=trans,
            inspection_cost=doc["inspection_cost"],
            actions=actions,
        )

    @classmethod
    def load(cls, path) -> "DecisionProcess":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def builtin_process(name: str) -> DecisionProcess:
    """``"synthetic"`` (C_ins = 7) or ``"z24"`` (C_ins = 30)."""
    ref = resources.files("rbal") / "processes" / f"{name}.json"
    if not ref.is_file():
        raise KeyError(f"no built-in decision process named {name!r}")
    return DecisionProcess.from_dict(json.loads(ref.read_text(encoding="utf-8")))


def resolve_process(spec: str) -> DecisionProcess:
    """Built-in name or path to a JSON document."""
    if spec in ("synthetic", "z24"):
        return builtin_process(spec)
    return DecisionProcess.load(spec)


def _as_posteriors(posterior, K: int) -> np.ndarray:
    p = np.asarray(posterior, dtype=float)
    if p.shape[-1] != K or p.ndim not in (1, 2):
        raise DimensionError(f"posterior must have trailing dimension K={K}, got shape {p.shape}")
    return p


def expected_utility(posterior, action: int, process: DecisionProcess):
    p = _as_posteriors(posterior, process.K)
    if not 0 <= action < process.n_actions:
        raise ValueError(f"action {action} outside 0..{process.n_actions - 1}")
    return p @ process._q[action]


def expected_utilities(posterior, process: DecisionProcess) -> np.ndarray:
    """All actions at once: shape ``(A,)`` or ``(n, A)``."""
    p = _as_posteriors(posterior, process.K)
    return p @ process._q.T


def optimal_action(posterior, process: DecisionProcess):
    """MEU action (ties go to the lowest action index) and its expected utility."""
    eu = expected_utilities(posterior, process)
    a = np.argmax(eu, axis=-1)
    meu = np.take_along_axis(eu, np.expand_dims(a, -1), axis=-1)[..., 0]
    if eu.ndim == 1:
        return int(a), float(meu)
    return a, meu


def evpi(posterior, process: DecisionProcess):
    """MEU with the state observed before deciding, minus MEU without it."""
    p = _as_posteriors(posterior, process.K)
    best_per_state = process._q.max(axis=0)
    value = p @ best_per_state - (p @ process._q.T).max(axis=-1)
    return float(value) if p.ndim == 1 else value


def perfect_info_policy(state, process: DecisionProcess):
    """Optimal action when the current state (label in ``1..K``) is known."""
    s = np.asarray(state)
    if np.any(s < 1) or np.any(s > process.K):
        raise ValueError(f"state outside 1..{process.K}")
    acts = np.argmax(process._q[:, s - 1], axis=0)
    return int(acts) if acts.ndim == 0 else acts


def scripted_decisions(labels: Sequence[int], process: DecisionProcess,
                       initial: Optional[int] = None) -> np.ndarray:
    """Actions consistent with an observed label sequence.

    ``d_t`` is the lowest-index action under which ``labels[t] -> labels[t+1]``
    has nonzero transition probability (so "do nothing" unless the sequence
    resets, e.g. 4 -> 1). The final step gets action 0. If ``initial`` is given,
    a leading decision for the transition ``initial -> labels[0]`` is prepended.
    """
    y = np.asarray(labels, dtype=int)
    seq = np.concatenate([[initial], y]) if initial is not None else y
    out = np.zeros(len(seq), dtype=int)
    for t in range(len(seq) - 1):
        a_from, a_to = seq[t] - 1, seq[t + 1] - 1
        feasible = np.nonzero(process.transitions[:, a_from, a_to] > 0)[0]
        out[t] = feasible[0] if feasible.size else DO_NOTHING
    return out
