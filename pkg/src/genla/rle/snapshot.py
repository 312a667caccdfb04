"""Immutable model snapshots and the deployment store actors pull from."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


class SchemaMismatch(RuntimeError):
    """Snapshot state layout differs from the local feature builder."""


@dataclass(frozen=True)
class ModelSnapshot:
    version: int
    parameters: np.ndarray
    schema_version: int
    created_at_step: int
    architecture: dict | None = None

    def __post_init__(self):
        p = np.array(self.parameters, dtype=np.float64, copy=True)
        p.setflags(write=False)
        object.__setattr__(self, "parameters", p)


class ModelStore:
    """Latest-version store: the learner publishes, actors pull without blocking.

    ``pull_latest`` returns ``None`` until the first publication; callers treat
    that as "no model yet" and fall back to the trusted rule-based policy.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._latest = None
        self._next_version = 1

    def publish(self, parameters, schema_version, step, architecture=None):
        with self._lock:
            snap = ModelSnapshot(self._next_version, parameters, schema_version, step, architecture)
            self._next_version += 1
            self._latest = snap
            return snap

    def pull_latest(self):
        # a reference read; snapshots are immutable so no copy is needed
        return self._latest

    @property
    def version(self):
        snap = self._latest
        return 0 if snap is None else snap.version
