"""Centralized learner: prioritized replay, envelope TD updates, target sync,
snapshot publication and periodic stats records."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import linkadapt as la
from ..morl.checkpoint import save_checkpoint
from ..morl.envelope import TrainingError, sample_preference, td_step
from ..morl.network import Adam, QNetwork
from ..morl.replay import ReplayBuffer
from .ingestion import DataEngine, IngestionPolicy
from .snapshot import ModelStore


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    n_omega: int = 8
    batch_size: int = 256
    lr: float = 1e-4
    target_sync: int = 500
    publish_every: int = 500
    alpha: float = 0.6
    beta0: float = 0.4
    beta_steps: int = 100_000     # learner steps over which beta anneals to 1
    capacity: int = 500_000
    min_fill: int = 10_000
    double_q: bool = True
    hidden: tuple = (128, 128)
    stats_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("n_omega", "batch_size", "target_sync", "publish_every", "capacity",
                     "stats_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.min_fill < 0:
            raise ValueError("min_fill must be >= 0")


@dataclass
class LearnerStats:
    steps: int = 0
    ingested: int = 0
    accepted: int = 0
    loss_trace: list = field(default_factory=list)
    snapshots_published: int = 0
    samples_per_s: float = 0.0
    wall_s: float = 0.0

    def record(self):
        d = asdict(self)
        d.pop("loss_trace")
        d["loss"] = self.loss_trace[-1] if self.loss_trace else None
        return d


class Learner:
    """Owns network, target network, optimizer, replay and the data engine.

    Parameters
    ----------
    config : LearnerConfig
    net : QNetwork, optional
        Defaults to a fresh link-adaptation network.
    store : ModelStore, optional
    policy : IngestionPolicy, optional
    stats_sink : file-like, optional
        Receives one JSON line every ``config.stats_every`` steps.
    checkpoint_dir : path, optional
        Where a checkpoint is written before halting on a non-finite loss.
    """

    def __init__(self, config=None, net=None, store=None, policy=None, replay=None,
                 stats_sink=None, checkpoint_dir=None, now=0.0):
        self.config = cfg = config or LearnerConfig()
        self.net = net or QNetwork(la.STATE_DIM, la.NUM_ACTIONS, la.NUM_OBJECTIVES,
                                   cfg.hidden, seed=cfg.seed)
        self.target = self.net.clone()
        self.opt = Adam(self.net.n_params, lr=cfg.lr)
        self.replay = replay or ReplayBuffer(cfg.capacity, cfg.alpha, seed=cfg.seed)
        self.engine = DataEngine(self.replay, policy or IngestionPolicy(), now=now)
        self.store = store or ModelStore()
        self.rng = np.random.default_rng([cfg.seed, 0x1E])
        self.stats = LearnerStats()
        self.stats_sink = stats_sink
        self.checkpoint_dir = checkpoint_dir
        self._t0 = time.perf_counter()
        self._last_emit = 0

    @property
    def ready(self):
        return len(self.replay) >= max(self.config.min_fill, 1)

    def ingest(self, transitions, now):
        n = self.engine.ingest(transitions, now)
        self.stats.ingested = self.engine.stats.offered
        self.stats.accepted = self.engine.stats.accepted
        return n

    def offer(self, transitions):
        self.engine.offer(transitions)

    def drain(self, now):
        n = self.engine.drain(now)
        self.stats.ingested = self.engine.stats.offered
        self.stats.accepted = self.engine.stats.accepted
        return n

    def beta(self):
        frac = min(1.0, self.stats.steps / max(self.config.beta_steps, 1))
        return self.config.beta0 + (1.0 - self.config.beta0) * frac

    def publish(self):
        return self.store.publish(self.net.params, la.STATE_SCHEMA_VERSION, self.stats.steps,
                                  self.net.architecture)

    def train_step(self):
        cfg = self.config
        batch = self.replay.sample(cfg.batch_size, self.beta())
        omegas = sample_preference(self.rng, self.net.n_objectives, cfg.n_omega)
        try:
            loss, prio = td_step(self.net, self.target, batch, omegas, cfg.gamma, self.opt,
                                 cfg.double_q)
        except TrainingError:
            self.save(tag="diverged")
            raise
        self.replay.update_priorities(batch.indices, prio)
        st = self.stats
        st.steps += 1
        st.loss_trace.append(loss)
        if st.steps % cfg.target_sync == 0:
            self.target.load(self.net.params)
        if st.steps % cfg.publish_every == 0:
            self.publish()
            st.snapshots_published += 1
        if st.steps % cfg.stats_every == 0:
            self.emit_stats()
        return loss

    def train(self, n_steps):
        """Run up to ``n_steps`` updates; returns how many ran (0 below ``min_fill``)."""
        if not self.ready:
            return 0
        for _ in range(int(n_steps)):
            self.train_step()
        return int(n_steps)

    def flush_stats(self):
        """Emit a final record if updates ran since the last one."""
        if self.stats.steps > self._last_emit:
            self.emit_stats()

    def emit_stats(self):
        st = self.stats
        self._last_emit = st.steps
        st.wall_s = time.perf_counter() - self._t0
        st.samples_per_s = st.accepted / st.wall_s if st.wall_s > 0 else 0.0
        if self.stats_sink is not None:
            rec = st.record()
            recent = st.loss_trace[-self.config.stats_every:]
            rec["loss_mean"] = float(np.mean(recent)) if recent else None
            self.stats_sink.write(json.dumps(rec) + "\n")
            self.stats_sink.flush()

    def save(self, path=None, tag="final", metadata=None):
        if path is None:
            if self.checkpoint_dir is None:
                return None
            path = Path(self.checkpoint_dir) / f"checkpoint-{tag}.bin"
        meta = {"learner_steps": self.stats.steps, "learner_config": asdict(self.config)}
        meta.update(metadata or {})
        return save_checkpoint(path, self.net, self.opt, self.target, la.STATE_SCHEMA_VERSION,
                               meta)


def learner_loop(replay, net, config=None, steps=None, store=None, stats_sink=None,
                 checkpoint_dir=None):
    """Train ``net`` on an already filled ``replay`` for ``steps`` updates.

    Returns ``(stats, learner)``. Nothing is trained or published while the
    buffer holds fewer than ``config.min_fill`` transitions.
    """
    learner = Learner(config, net=net, store=store, replay=replay, stats_sink=stats_sink,
                      checkpoint_dir=checkpoint_dir)
    learner.stats.ingested = learner.stats.accepted = len(replay)
    learner.train(steps if steps is not None else learner.config.beta_steps)
    return learner.stats, learner
