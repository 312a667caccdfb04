"""Proportional prioritized experience replay backed by a sum tree."""

from __future__ import annotations

import numpy as np

from .envelope import Batch, Transition  # noqa: F401


class SumTree:
    """Binary sum tree over ``capacity`` leaves with vectorized updates and search."""

    def __init__(self, capacity):
        self.capacity = int(capacity)
        size = 1
        while size < self.capacity:
            size *= 2
        self.size = size
        self.tree = np.zeros(2 * size)

    @property
    def total(self):
        return self.tree[1]

    def get(self, idx):
        return self.tree[self.size + np.asarray(idx)]

    def update(self, idx, values):
        idx = np.asarray(idx, dtype=np.int64) + self.size
        self.tree[idx] = values
        idx = np.unique(idx // 2)
        while idx.size and idx[0] >= 1:
            self.tree[idx] = self.tree[2 * idx] + self.tree[2 * idx + 1]
            idx = np.unique(idx // 2)
            if idx[0] == 0:
                break

    def find(self, values):
        """Leaf index whose cumulative-sum interval contains each value."""
        values = np.array(values, dtype=float)
        node = np.ones(values.shape, dtype=np.int64)
        while node[0] < self.size:
            left = 2 * node
            lv = self.tree[left]
            go_right = values >= lv
            values = np.where(go_right, values - lv, values)
            node = np.where(go_right, left + 1, left)
        return node - self.size


class ReplayBuffer:
    """FIFO replay memory with sampling probability proportional to ``priority**alpha``.

    Parameters
    ----------
    capacity : int
    alpha : float
        Prioritization exponent (0 = uniform).
    seed : int
    """

    FIELDS = ("states", "actions", "rewards", "next_states", "dones", "omegas", "next_masks",
              "meta")

    def __init__(self, capacity=500_000, alpha=0.6, seed=0):
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.tree = SumTree(self.capacity)
        self.rng = np.random.default_rng(seed)
        self.data = None
        self.pos = 0
        self.size = 0
        self.max_priority = 1.0
        self.pushes = 0

    def _allocate(self, t):
        c = self.capacity
        self.data = {
            "states": np.zeros((c, len(t.state)), dtype=np.float32),
            "actions": np.zeros(c, dtype=np.int64),
            "rewards": np.zeros((c, len(t.reward)), dtype=np.float64),
            "next_states": np.zeros((c, len(t.next_state)), dtype=np.float32),
            "dones": np.zeros(c, dtype=bool),
            "omegas": np.zeros((c, len(t.omega)), dtype=np.float64),
            "next_masks": (np.zeros((c, len(t.next_mask)), dtype=bool)
                           if t.next_mask is not None else None),
            "meta": np.zeros((c, 5), dtype=np.int64),
        }

    def __len__(self):
        return self.size

    def push(self, transition):
        """Store one :class:`~genla.morl.envelope.Transition`."""
        self.push_many([transition])

    def push_many(self, transitions):
        if not transitions:
            return
        if self.data is None:
            self._allocate(transitions[0])
        priorities = np.array([self.max_priority if t.priority is None else t.priority
                               for t in transitions], dtype=float)
        if np.any(priorities < 0) or not np.all(np.isfinite(priorities)):
            raise ValueError("priorities must be finite and non-negative")
        slots = (self.pos + np.arange(len(transitions))) % self.capacity
        d = self.data
        for slot, t in zip(slots, transitions):
            d["states"][slot] = t.state
            d["actions"][slot] = t.action
            d["rewards"][slot] = t.reward
            d["next_states"][slot] = t.next_state
            d["dones"][slot] = t.done
            d["omegas"][slot] = t.omega
            if d["next_masks"] is not None:
                d["next_masks"][slot] = t.next_mask
            d["meta"][slot] = t.meta
        # later duplicates of a slot win, matching the data written above
        self.tree.update(slots, priorities ** self.alpha)
        self.max_priority = max(self.max_priority, float(priorities.max()))
        self.pos = int((self.pos + len(transitions)) % self.capacity)
        self.size = min(self.size + len(transitions), self.capacity)
        self.pushes += len(transitions)

    def probabilities(self):
        p = self.tree.get(np.arange(self.size))
        return p / p.sum()

    def sample(self, batch_size, beta=0.4):
        """Prioritized batch with importance weights ``(N P(i))^-beta / max``."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        total = self.tree.total
        if total <= 0:
            idx = self.rng.integers(0, self.size, size=batch_size)
            probs = np.full(batch_size, 1.0 / self.size)
        else:
            seg = total / batch_size
            u = (np.arange(batch_size) + self.rng.random(batch_size)) * seg
            idx = np.minimum(self.tree.find(np.minimum(u, total * (1 - 1e-12))), self.size - 1)
            probs = self.tree.get(idx) / total
            # zero-priority leaves can only be hit through float round-off
            bad = probs <= 0
            if bad.any():
                live = np.flatnonzero(self.tree.get(np.arange(self.size)) > 0)
                idx[bad] = self.rng.choice(live, size=int(bad.sum()))
                probs = self.tree.get(idx) / total
        w = (self.size * probs) ** (-beta)
        w = w / w.max()
        d = self.data
        return Batch(
            states=d["states"][idx].astype(np.float64),
            actions=d["actions"][idx],
            rewards=d["rewards"][idx],
            next_states=d["next_states"][idx].astype(np.float64),
            dones=d["dones"][idx],
            omegas=d["omegas"][idx],
            next_masks=None if d["next_masks"] is None else d["next_masks"][idx],
            weights=w,
            indices=idx,
        )

    def update_priorities(self, indices, priorities):
        priorities = np.asarray(priorities, dtype=float)
        if np.any(priorities < 0) or not np.all(np.isfinite(priorities)):
            raise ValueError("priorities must be finite and non-negative")
        self.tree.update(indices, priorities ** self.alpha)
        self.max_priority = max(self.max_priority, float(priorities.max()))

    def feature_stats(self):
        """Per-feature mean and standard deviation of stored states."""
        s = self.data["states"][: self.size].astype(np.float64)
        return s.mean(axis=0), s.std(axis=0)
