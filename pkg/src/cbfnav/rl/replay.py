"""Transition replay buffer with durable JSON-lines persistence.

The on-disk format is append-only: one transition per line with schema
{ep, step, world, s:[9], a, r, s2:[9], done}. Loading keeps the newest
`capacity` lines (FIFO semantics); compaction rewrites the log to exactly the
in-memory contents. A corrupt line aborts the load: the buffer never silently
truncates."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np


class ReplayCorruptError(RuntimeError):
    pass


@dataclass
class Transition:
    s: np.ndarray  # raw (unnormalized) state, (9,)
    action: float  # barrier-parameter rate actually proposed
    reward: float
    s_next: np.ndarray
    done: bool
    episode: int
    step: int
    world: int

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "ep": self.episode,
                "step": self.step,
                "world": self.world,
                "s": list(map(float, self.s)),
                "a": self.action,
                "r": self.reward,
                "s2": list(map(float, self.s_next)),
                "done": self.done,
            }
        )

    @classmethod
    def from_json_line(cls, line: str) -> "Transition":
        d = json.loads(line)
        return cls(
            s=np.array(d["s"], dtype=np.float64),
            action=float(d["a"]),
            reward=float(d["r"]),
            s_next=np.array(d["s2"], dtype=np.float64),
            done=bool(d["done"]),
            episode=int(d["ep"]),
            step=int(d["step"]),
            world=int(d["world"]),
        )


class ReplayBuffer:
    """Bounded FIFO transition store with uniform-with-replacement sampling."""

    def __init__(self, capacity: int, path=None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.path = path
        self._items: list[Transition] = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "a")

    def __len__(self) -> int:
        return len(self._items)

    def append(self, tr: Transition) -> None:
        if not (np.isfinite(tr.reward) and np.all(np.isfinite(tr.s)) and np.all(np.isfinite(tr.s_next))):
            raise ValueError("transitions must be finite")
        self._items.append(tr)
        if len(self._items) > self.capacity:
            self._items.pop(0)
        if self._fh is not None:
            self._fh.write(tr.to_json_line())
            self._fh.write("\n")

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._items), size=batch_size)
        s = np.stack([self._items[i].s for i in idx])
        s2 = np.stack([self._items[i].s_next for i in idx])
        a = np.array([self._items[i].action for i in idx])
        r = np.array([self._items[i].reward for i in idx])
        done = np.array([float(self._items[i].done) for i in idx])
        return {"s": s, "a": a, "r": r, "s2": s2, "done": done}

    def transitions(self) -> list[Transition]:
        return list(self._items)

    def persist(self) -> None:
        """Flush pending writes and compact the log to the live contents."""
        if self.path is None:
            return
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
        tmp = str(self.path) + ".tmp"
        with open(tmp, "w") as f:
            for tr in self._items:
                f.write(tr.to_json_line())
                f.write("\n")
        os.replace(tmp, self.path)
        self._fh = open(self.path, "a")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
            self._fh = None

    def drop_after_episode(self, last_episode: int) -> None:
        """Remove transitions from episodes newer than last_episode (resume
        support: the log may run ahead of the last checkpoint)."""
        self._items = [tr for tr in self._items if tr.episode <= last_episode]

    @classmethod
    def load(cls, path, capacity: int) -> "ReplayBuffer":
        items: list[Transition] = []
        with open(path) as f:
            for ln, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    items.append(Transition.from_json_line(line))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise ReplayCorruptError(f"{path}:{ln}: corrupt transition: {e}") from e
        buf = cls(capacity)
        buf._items = items[-capacity:]
        buf.path = path
        buf._fh = open(path, "a")
        return buf
