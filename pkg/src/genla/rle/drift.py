"""Feature-drift monitoring against training reference statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DRIFT_THRESHOLD = 4.0


@dataclass
class DriftReport:
    source_id: str
    z_scores: np.ndarray
    drifted: bool
    skipped: list = field(default_factory=list)


@dataclass
class ReferenceStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def drift_check(runtime_mean, reference, source_id="runtime", threshold=DRIFT_THRESHOLD):
    """Per-feature z-scores of runtime means; constant reference features are
    skipped (z = 0) and listed in ``skipped``."""
    runtime_mean = np.asarray(runtime_mean, dtype=float)
    std = reference.std
    skipped = [int(i) for i in np.flatnonzero(std <= 0)]
    safe = np.where(std > 0, std, 1.0)
    z = np.where(std > 0, (runtime_mean - reference.mean) / safe, 0.0)
    return DriftReport(source_id, z, bool(np.any(np.abs(z) > threshold)), skipped)


class DriftMonitor:
    """Event-based monitor: :meth:`observe` returns a report only when the
    drift status flips."""

    def __init__(self, reference, source_id="runtime", threshold=DRIFT_THRESHOLD):
        self.reference = reference
        self.source_id = source_id
        self.threshold = threshold
        self.n = 0
        self.sum = np.zeros_like(reference.mean)
        self.drifted = False

    def observe(self, states):
        states = np.atleast_2d(states)
        self.n += len(states)
        self.sum += states.sum(axis=0)
        report = self.report()
        if report.drifted != self.drifted:
            self.drifted = report.drifted
            return report
        return None

    def report(self):
        mean = self.sum / max(self.n, 1)
        return drift_check(mean, self.reference, self.source_id, self.threshold)
