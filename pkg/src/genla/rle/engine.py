"""Training orchestration: actors feed a data engine, one learner trains and
publishes snapshots back.

Two modes share the same actor and learner code:

* deterministic: actors and learner interleave in one thread on a simulated
  clock, so equal seeds give bit-identical results;
* parallel: each actor is a process; experience crosses a bounded queue in
  the wire format and snapshots return on per-actor bounded queues.
"""

from __future__ import annotations

import json
import math
import multiprocessing as mp
import queue
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import linkadapt as la
from ..morl.network import QNetwork
from ..perf import tune_allocator
from ..scenario import RandomizationSpace, to_dict
from . import wire
from .actor import Actor, scenario_stream
from .drift import ReferenceStats
from .ingestion import IngestionPolicy, epsilon_ladder
from .learner import Learner, LearnerConfig
from .snapshot import ModelSnapshot, ModelStore

TTI_S = 1e-3
EXPERIENCE_QUEUE = 64


@dataclass
class TrainConfig:
    actors: int = 1
    env_steps: int = 200_000        # total simulator TTIs over all actors
    seed: int = 0
    episode_ttis: int = 1000
    updates_per_step: float = 0.25  # learner updates per environment step
    rank_control: bool = True
    checkpoint_every: int = 10_000
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    decimation: int = 1
    max_rate: float = 1e6
    safe_mode: bool = True
    active_cell_fraction: float = 1.0
    space: RandomizationSpace = field(default_factory=RandomizationSpace)

    def __post_init__(self):
        if self.actors < 1:
            raise ValueError("need at least one actor")
        if self.env_steps < 0:
            raise ValueError("env_steps must be >= 0")
        if self.updates_per_step < 0:
            raise ValueError("updates_per_step must be >= 0")
        self.space.check()

    def ingestion_policy(self):
        return IngestionPolicy(self.decimation, self.max_rate, None, epsilon_ladder(self.actors),
                               self.safe_mode, self.active_cell_fraction)

    def steps_for(self, actor_id):
        base, extra = divmod(self.env_steps, self.actors)
        return base + (1 if actor_id < extra else 0)


@dataclass
class TrainResult:
    learner: Learner
    env_steps: int
    transitions: int
    wall_s: float
    dropped_batches: int = 0
    actor_versions: dict = field(default_factory=dict)

    @property
    def stats(self):
        return self.learner.stats


def _make_actor(cfg, actor_id, provider, policy, on_episode=None):
    scen = scenario_stream([cfg.seed, actor_id], cfg.space, cfg.episode_ttis)
    return Actor(actor_id, scen, provider, policy, policy.epsilons[actor_id], cfg.rank_control,
                 seed=cfg.seed, on_episode=on_episode)


class _UpdateBudget:
    """Learner updates owed for environment steps received after ``min_fill``."""

    def __init__(self, ratio):
        self.ratio = ratio
        self.credit = 0.0

    def add(self, env_steps, ready):
        if ready:
            self.credit += env_steps * self.ratio

    def take(self, limit=None):
        n = int(math.floor(self.credit + 1e-9))
        if limit is not None:
            n = min(n, limit)
        self.credit -= n
        return n


def _checkpoint(learner, cfg, last):
    every = cfg.checkpoint_every
    if every and learner.checkpoint_dir is not None and learner.stats.steps // every > last:
        learner.save(tag=f"{learner.stats.steps:08d}")
        return learner.stats.steps // every
    return last


def train(cfg, deterministic=True, stats_sink=None, checkpoint_dir=None, scenario_sink=None):
    """Run the actor/learner pipeline to the environment-step budget.

    ``stats_sink`` receives learner stats records, ``scenario_sink`` one JSON
    line per training episode (actor id and full scenario config).
    """
    tune_allocator()
    if deterministic:
        return _train_deterministic(cfg, stats_sink, checkpoint_dir, scenario_sink)
    return _train_parallel(cfg, stats_sink, checkpoint_dir, scenario_sink)


def _scenario_record(actor_id, scen):
    return json.dumps({"actor": actor_id, "scenario": to_dict(scen)}, sort_keys=True) + "\n"


def _train_deterministic(cfg, stats_sink, checkpoint_dir, scenario_sink):
    t0 = time.perf_counter()
    policy = cfg.ingestion_policy()
    store = ModelStore()
    learner = Learner(cfg.learner, store=store, policy=policy, stats_sink=stats_sink,
                      checkpoint_dir=checkpoint_dir)
    def hook(i):
        if scenario_sink is None:
            return None
        return lambda scen: scenario_sink.write(_scenario_record(i, scen))

    actors = [_make_actor(cfg, i, store.pull_latest, policy, hook(i)) for i in range(cfg.actors)]
    runs = [a.run(cfg.steps_for(a.actor_id)) for a in actors]
    budget = _UpdateBudget(cfg.updates_per_step)
    env_total = transitions = 0
    clocks = np.zeros(cfg.actors)
    last_ckpt = 0
    live = list(range(cfg.actors))
    while live:
        for i in list(live):
            batch = next(runs[i], None)
            if batch is None:
                live.remove(i)
                continue
            clocks[i] += batch.env_steps * TTI_S
            learner.ingest(batch.transitions, float(clocks.max()))
            env_total += batch.env_steps
            transitions += len(batch.transitions)
            budget.add(batch.env_steps, learner.ready)
            learner.train(budget.take())
            last_ckpt = _checkpoint(learner, cfg, last_ckpt)
    learner.flush_stats()
    return TrainResult(learner, env_total, transitions, time.perf_counter() - t0, 0,
                       {a.actor_id: list(a.versions_seen) for a in actors})


# -- parallel mode -------------------------------------------------------------

def _actor_process(cfg, actor_id, exp_q, snap_q):
    tune_allocator()
    latest = [None]

    def provider():
        try:
            while True:
                latest[0] = snap_q.get_nowait()
        except queue.Empty:
            pass
        return latest[0]

    def hook(scen):
        exp_q.put(("scenario", actor_id, 0, _scenario_record(actor_id, scen)))

    policy = cfg.ingestion_policy()
    actor = _make_actor(cfg, actor_id, provider, policy, hook)
    dropped = 0
    for batch in actor.run(cfg.steps_for(actor_id)):
        msg = ("batch", actor_id, batch.env_steps, wire.encode_batch(batch.transitions))
        try:
            # never wait on a slow learner; the batch is lost instead
            exp_q.put_nowait(msg)
        except queue.Full:
            dropped += 1
            try:
                exp_q.put_nowait(("steps", actor_id, batch.env_steps, b""))
            except queue.Full:
                pass
    exp_q.put(("done", actor_id, dropped, list(actor.versions_seen)))


def _push_snapshot(snap_qs, snap):
    for q in snap_qs:
        try:
            q.put_nowait(snap)
        except queue.Full:
            try:
                q.get_nowait()
            except queue.Empty:
                pass
            try:
                q.put_nowait(snap)
            except queue.Full:
                pass


def _train_parallel(cfg, stats_sink, checkpoint_dir, scenario_sink):
    t0 = time.perf_counter()
    ctx = mp.get_context("spawn")
    policy = cfg.ingestion_policy()
    store = ModelStore()
    learner = Learner(cfg.learner, store=store, policy=policy, stats_sink=stats_sink,
                      checkpoint_dir=checkpoint_dir, now=0.0)
    exp_q = ctx.Queue(EXPERIENCE_QUEUE)
    snap_qs = [ctx.Queue(2) for _ in range(cfg.actors)]
    procs = [ctx.Process(target=_actor_process, args=(cfg, i, exp_q, snap_qs[i]), daemon=True)
             for i in range(cfg.actors)]
    for p in procs:
        p.start()
    budget = _UpdateBudget(cfg.updates_per_step)
    env_total = transitions = dropped = 0
    versions = {}
    done = 0
    published = 0
    last_ckpt = 0
    try:
        while done < cfg.actors:
            try:
                # poll while updates are owed, otherwise wait for experience
                msg = exp_q.get_nowait() if budget.credit >= 1 else exp_q.get(timeout=0.5)
            except queue.Empty:
                msg = None
            if msg is not None:
                kind, aid = msg[0], msg[1]
                if kind == "done":
                    done += 1
                    dropped += msg[2]
                    versions[aid] = msg[3]
                    continue
                if kind == "scenario":
                    if scenario_sink is not None:
                        scenario_sink.write(msg[3])
                    continue
                env_steps = msg[2]
                if kind == "batch":
                    _, ts = wire.decode_batch(msg[3])
                    learner.offer(ts)
                    transitions += len(ts)
                env_total += env_steps
                learner.drain(time.perf_counter() - t0)
                budget.add(env_steps, learner.ready)
            learner.train(budget.take(limit=8))
            if store.version > published:
                _push_snapshot(snap_qs, store.pull_latest())
                published = store.version
            last_ckpt = _checkpoint(learner, cfg, last_ckpt)
        learner.drain(time.perf_counter() - t0)
        learner.train(budget.take())
    finally:
        for p in procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()
    learner.flush_stats()
    return TrainResult(learner, env_total, transitions, time.perf_counter() - t0,
                       dropped + learner.engine.stats.dropped_batches, versions)


# -- actor throughput ----------------------------------------------------------

def _throughput_process(cfg, actor_id, snapshot, start, out_q):
    tune_allocator()
    policy = cfg.ingestion_policy()
    actor = _make_actor(cfg, actor_id, lambda: snapshot, policy)
    start.wait()
    t = time.perf_counter()
    n = sum(len(b.transitions) for b in actor.run(cfg.steps_for(actor_id)))
    out_q.put((n, time.perf_counter() - t))


def actor_throughput(n_actors, steps_per_actor=2000, seed=0, episode_ttis=500):
    """Aggregate transitions/s of ``n_actors`` actor processes running a random network.

    Each actor runs ``steps_per_actor`` TTIs; the rate is total transitions over
    the slowest actor's wall time.
    """
    cfg = TrainConfig(actors=n_actors, env_steps=n_actors * steps_per_actor, seed=seed,
                      episode_ttis=episode_ttis)
    net = QNetwork(seed=seed)
    snap = ModelSnapshot(1, net.params, la.STATE_SCHEMA_VERSION, 0, net.architecture)
    ctx = mp.get_context("spawn")
    start = ctx.Event()
    out_q = ctx.Queue()
    procs = [ctx.Process(target=_throughput_process, args=(cfg, i, snap, start, out_q))
             for i in range(n_actors)]
    for p in procs:
        p.start()
    time.sleep(0.5)
    start.set()
    res = [out_q.get() for _ in procs]
    for p in procs:
        p.join()
    total = sum(n for n, _ in res)
    return total / max(dt for _, dt in res)


def write_reference(learner, path):
    """Training-end feature statistics used by drift monitoring."""
    mean, std = learner.replay.feature_stats()
    Path(path).write_text(json.dumps(ReferenceStats(mean, std).to_dict()))
