"""Data-engine ingestion control: temporal decimation, exploration ladder,
token-bucket rate limiting and a bounded pending queue."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field

EPSILON_BASE = 0.4
EPSILON_SPREAD = 7.0


def epsilon_ladder(n_actors, base=EPSILON_BASE, spread=EPSILON_SPREAD):
    """Per-actor exploration rates ``base ** (1 + spread * i / (W - 1))``."""
    if n_actors < 1:
        raise ValueError("need at least one actor")
    if n_actors == 1:
        return [base]
    return [base ** (1.0 + spread * i / (n_actors - 1)) for i in range(n_actors)]


@dataclass
class IngestionPolicy:
    decimation: int = 1
    max_rate: float = 1e6          # samples per second
    burst: float | None = None     # bucket depth; defaults to one second of max_rate
    epsilons: list = field(default_factory=lambda: [EPSILON_BASE])
    safe_mode: bool = True
    active_cell_fraction: float = 1.0

    def __post_init__(self):
        if self.decimation < 1:
            raise ValueError("decimation factor must be >= 1")
        if self.max_rate <= 0:
            raise ValueError("max_rate must be positive")
        if not all(0.0 < e <= EPSILON_BASE for e in self.epsilons):
            raise ValueError(f"epsilons must lie in (0, {EPSILON_BASE}]")
        if not 0.0 < self.active_cell_fraction <= 1.0:
            raise ValueError("active_cell_fraction must lie in (0, 1]")


class Decimator:
    """Emit every k-th item per source."""

    def __init__(self, k):
        if k < 1:
            raise ValueError("decimation factor must be >= 1")
        self.k = int(k)
        self.counts = defaultdict(int)

    def keep(self, source):
        c = self.counts[source]
        self.counts[source] = c + 1
        return c % self.k == 0


class TokenBucket:
    """Token bucket driven by an explicit clock (seconds)."""

    def __init__(self, rate, burst=None, now=0.0):
        self.rate = float(rate)
        self.burst = float(rate if burst is None else burst)
        self.tokens = self.burst
        self.last = float(now)

    def refill(self, now):
        if now > self.last:
            self.tokens = min(self.burst, self.tokens + (now - self.last) * self.rate)
            self.last = now

    def take(self, n, now):
        """Consume up to ``n`` whole tokens; returns how many were granted."""
        self.refill(now)
        granted = min(int(n), int(self.tokens))
        self.tokens -= granted
        return granted


@dataclass
class IngestStats:
    offered: int = 0
    accepted: int = 0
    rate_limited: int = 0
    dropped_batches: int = 0
    dropped_samples: int = 0
    per_source_offered: dict = field(default_factory=lambda: defaultdict(int))
    per_source_accepted: dict = field(default_factory=lambda: defaultdict(int))


class DataEngine:
    """Receives experience batches, rate-limits them and fills the replay buffer.

    Batches first land in a bounded pending queue (overflow drops the oldest
    batch); :meth:`drain` moves them through the token bucket into replay.
    Fresh transitions get the current maximum priority.
    """

    def __init__(self, replay, policy=None, queue_batches=64, now=0.0):
        self.replay = replay
        self.policy = policy or IngestionPolicy()
        self.bucket = TokenBucket(self.policy.max_rate, self.policy.burst, now)
        self.pending = deque()
        self.queue_batches = int(queue_batches)
        self.stats = IngestStats()

    def offer(self, batch):
        if len(self.pending) >= self.queue_batches:
            old = self.pending.popleft()
            self.stats.dropped_batches += 1
            self.stats.dropped_samples += len(old)
        self.pending.append(batch)

    def drain(self, now):
        total = 0
        while self.pending:
            total += self.ingest(self.pending.popleft(), now)
        return total

    def ingest(self, batch, now):
        """Admit up to the token budget from ``batch``; returns the accepted count."""
        if not batch:
            return 0
        n_ok = self.bucket.take(len(batch), now)
        accepted = batch[:n_ok]
        st = self.stats
        st.offered += len(batch)
        st.accepted += n_ok
        st.rate_limited += len(batch) - n_ok
        for t in batch:
            st.per_source_offered[_source(t)] += 1
        for t in accepted:
            st.per_source_accepted[_source(t)] += 1
        if accepted:
            self.replay.push_many(accepted)
        return n_ok


def _source(t):
    meta = t.meta
    # (actor, scenario, cell, ue, tti) -> source = (actor, scenario, ue)
    return (int(meta[0]), int(meta[1]), int(meta[3]))
