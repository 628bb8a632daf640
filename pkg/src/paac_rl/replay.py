"""Finite FIFO experience memory with seeded uniform minibatch sampling."""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBufferError, NumericError, ShapeError

DEFAULT_CAPACITY = 200_000


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    cost: float
    next_state: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        for name in ("state", "action", "next_state"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        cost = float(self.cost)
        if not np.isfinite(cost) or cost < 0:
            raise NumericError(f"stage cost must be finite and >= 0, got {cost}")
        if self.state.shape != self.next_state.shape:
            raise ShapeError("state and next_state shapes differ")
        object.__setattr__(self, "cost", cost)


@dataclass(frozen=True)
class Batch:
    """Column-stacked transitions; ``ids`` are insertion indices."""

    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, idx):
        return Transition(self.states[idx], self.actions[idx], self.costs[idx], self.next_states[idx],
                          bool(self.terminals[idx]))

    @classmethod
    def from_transitions(cls, transitions):
        transitions = list(transitions)
        if not transitions:
            raise ShapeError("cannot build an empty batch")
        return cls(
            np.stack([t.state for t in transitions]),
            np.stack([t.action for t in transitions]),
            np.array([t.cost for t in transitions], dtype=np.float64),
            np.stack([t.next_state for t in transitions]),
            np.array([t.terminal for t in transitions], dtype=bool),
            np.arange(len(transitions)),
        )


class ReplayBuffer:
    """Ring buffer; once full, each push overwrites the oldest entry.

    Storage is allocated on the first push, whose dimensions every later
    transition must match.
    """

    def __init__(self, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.size = 0
        self.write_cursor = 0
        self.pushed = 0
        self._states = None

    def __len__(self):
        return self.size

    def _allocate(self, t):
        c = self.capacity
        self._states = np.zeros((c, t.state.size))
        self._actions = np.zeros((c, t.action.size))
        self._costs = np.zeros(c)
        self._next = np.zeros((c, t.state.size))
        self._terminals = np.zeros(c, dtype=bool)
        self._ids = np.zeros(c, dtype=np.int64)

    def push(self, t):
        if self._states is None:
            self._allocate(t)
        elif t.state.shape != self._states.shape[1:] or t.action.shape != self._actions.shape[1:]:
            raise ShapeError(
                f"transition dims ({t.state.size}, {t.action.size}) differ from buffer "
                f"({self._states.shape[1]}, {self._actions.shape[1]})"
            )
        i = self.write_cursor
        self._states[i] = t.state
        self._actions[i] = t.action
        self._costs[i] = t.cost
        self._next[i] = t.next_state
        self._terminals[i] = t.terminal
        self._ids[i] = self.pushed
        self.pushed += 1
        self.write_cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return self

    def _slots_by_age(self):
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.write_cursor) % self.capacity

    def contents(self):
        """All stored transitions, oldest first."""
        return self._take(self._slots_by_age())

    def _take(self, slots):
        return Batch(self._states[slots], self._actions[slots], self._costs[slots], self._next[slots],
                     self._terminals[slots], self._ids[slots])

    def sample(self, n, rng):
        """``n`` transitions drawn uniformly with replacement."""
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        return self._take(rng.integers(0, self.size, size=int(n)))

    def snapshot(self):
        if self._states is None:
            return {"capacity": np.array(self.capacity)}
        b = self.contents()
        return {
            "capacity": np.array(self.capacity),
            "states": b.states,
            "actions": b.actions,
            "costs": b.costs,
            "next_states": b.next_states,
            "terminals": b.terminals,
            "ids": b.ids,
        }

    @classmethod
    def from_snapshot(cls, snap):
        buf = cls(int(snap["capacity"]))
        if "states" not in snap:
            return buf
        n = len(snap["costs"])
        for i in range(n):
            buf.push(Transition(snap["states"][i], snap["actions"][i], snap["costs"][i],
                                snap["next_states"][i], bool(snap["terminals"][i])))
        if n:
            buf._ids[buf._slots_by_age()] = snap["ids"]
            buf.pushed = int(snap["ids"][-1]) + 1
        return buf
