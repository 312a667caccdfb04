"""Experience-generating actor: runs link adaptation on a stream of scenarios
and turns resolved transport blocks into transitions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import linkadapt as la
from ..morl.envelope import Transition, sample_preference
from ..morl.network import QNetwork
from ..scenario import RandomizationSpace, sample_scenario
from ..simcore import Action, Simulator
from .ingestion import Decimator, IngestionPolicy
from .snapshot import SchemaMismatch

PULL_EVERY = 200
EMIT_EVERY = 100


@dataclass
class ExperienceBatch:
    actor_id: int
    env_steps: int          # simulator TTIs consumed since the previous batch
    transitions: list
    model_version: int = 0  # 0 while running the OLLA fallback


def scenario_stream(seed, space=None, episode_ttis=1000):
    """Endless stream of domain-randomized scenarios with distinct seeds."""
    ss = np.random.SeedSequence(seed)
    space = space or RandomizationSpace()
    while True:
        (child,) = ss.spawn(1)
        s = int(child.generate_state(1)[0] & 0x7FFFFFFF)
        yield sample_scenario(s, space).with_duration(episode_ttis)


class Actor:
    """Runs one simulator at a time and produces :class:`ExperienceBatch` es.

    Parameters
    ----------
    actor_id : int
    scenarios : iterator of ScenarioConfig
    model_provider : callable
        Returns the latest :class:`~genla.rle.snapshot.ModelSnapshot` or ``None``.
        Called every ``PULL_EVERY`` environment steps, never waited on.
    policy : IngestionPolicy
    epsilon : float
    rank_control : bool
        Whether the agent picks the rank (otherwise the UE-reported rank is used).
    seed : int
    on_episode : callable, optional
        Called with each new ScenarioConfig before it runs.
    """

    def __init__(self, actor_id, scenarios, model_provider, policy=None, epsilon=0.4,
                 rank_control=True, seed=0, pull_every=PULL_EVERY, emit_every=EMIT_EVERY,
                 on_episode=None):
        self.actor_id = int(actor_id)
        self.scenarios = iter(scenarios)
        self.provider = model_provider
        self.policy = policy or IngestionPolicy()
        self.epsilon = float(epsilon)
        self.rank_control = rank_control
        self.rng = np.random.default_rng([seed, actor_id, 0xAC])
        self.pull_every = pull_every
        self.emit_every = emit_every
        self.decimator = Decimator(self.policy.decimation)
        self.net = None
        self.version = 0
        self.versions_seen = []
        self.env_steps = 0
        self.emitted = 0
        self.resolved = 0
        self.sim = None
        self.episodes = 0
        self.on_episode = on_episode

    # -- model handling ---------------------------------------------------

    def pull(self):
        snap = self.provider()
        if snap is None:
            return
        if snap.schema_version != la.STATE_SCHEMA_VERSION:
            raise SchemaMismatch(
                f"snapshot state schema {snap.schema_version} != actor schema "
                f"{la.STATE_SCHEMA_VERSION}")
        if snap.version < self.version:
            raise RuntimeError("snapshot version went backwards")
        if snap.version == self.version:
            return
        if self.net is None:
            self.net = QNetwork.from_architecture(snap.architecture, snap.parameters)
        else:
            self.net.load(snap.parameters)
        self.version = snap.version
        self.versions_seen.append(snap.version)

    # -- episodes ---------------------------------------------------------

    def _start_episode(self):
        cfg = next(self.scenarios)
        if self.on_episode is not None:
            self.on_episode(cfg)
        self.sim = Simulator(cfg, seed=int(self.rng.integers(2**31)))
        self.states = la.StateBuilder(self.sim)
        self.scenario_id = cfg.seed
        n = self.sim.n_ues
        self.omegas = sample_preference(self.rng, la.NUM_OBJECTIVES, n).reshape(n, -1)
        n_active = max(1, math.ceil(self.policy.active_cell_fraction * self.sim.n_cells))
        active = self.rng.choice(self.sim.n_cells, size=n_active, replace=False)
        self.active_ue = np.isin(self.sim.serving, active)
        self.nprb = self.sim.cell_nprb[self.sim.serving]
        self.pending = {}
        self.episodes += 1

    def _decide(self, need, states):
        sim = self.sim
        olla = [a.index for a in la.olla_actions(sim, need)]
        if self.net is None:
            return np.array(olla)
        masks = la.mask_matrix(sim.max_rank[need], self.rank_control, sim.reported_rank[need])
        train = self.active_ue[need]
        eps = np.where(train, self.epsilon, 0.0)
        idx = la.rl_select_batch(states, self.net, self.omegas[need], eps, masks, self.rng)
        if self.policy.safe_mode:
            idx = np.where(train, idx, olla)
        return idx

    def step(self):
        """Advance one TTI; returns the transitions emitted in it."""
        if self.env_steps % self.pull_every == 0:
            self.pull()
        if self.sim is None or self.sim.done:
            self._start_episode()
        sim = self.sim
        tti = sim.tti
        need = np.array([g.ue_id for g in sim.grants() if g.needs_action], dtype=int)
        actions = {}
        if need.size:
            states = self.states(need)
            idx = self._decide(need, states)
            record = self.active_ue[need]
            for k, (u, a) in enumerate(zip(need.tolist(), idx.tolist())):
                actions[u] = Action.from_index(a)
                if record[k]:
                    self.pending[(u, tti)] = (states[k], a)
        feedback = sim.step(actions)
        self.env_steps += 1

        done_ues, items = [], []
        for f in feedback:
            if not f.resolved:
                continue
            u = f.ue_id
            r = la.compute_reward(f, int(self.nprb[u]))
            sim.note_reward(u, (r.bits, r.resource))
            pend = self.pending.pop((u, f.tb_tti), None)
            if pend is None:
                continue
            self.resolved += 1
            if self.decimator.keep((self.actor_id, self.scenario_id, u)):
                done_ues.append(u)
                items.append((pend, r, f))
        if not items:
            return []
        u_arr = np.array(done_ues)
        next_states = self.states(u_arr)
        next_masks = la.mask_matrix(sim.max_rank[u_arr], self.rank_control,
                                    sim.reported_rank[u_arr])
        out = []
        for j, ((s, a), r, f) in enumerate(items):
            out.append(Transition(
                s, a, np.array([r.bits, r.resource]), next_states[j], False,
                self.omegas[f.ue_id].copy(), next_masks[j], None,
                (self.actor_id, self.scenario_id, f.cell_id, f.ue_id, f.tb_tti)))
        self.emitted += len(out)
        return out

    def run(self, max_steps):
        """Generate :class:`ExperienceBatch` es until ``max_steps`` TTIs are consumed.

        Pending transport blocks of a finished episode are discarded.
        """
        buf, steps = [], 0
        for _ in range(int(max_steps)):
            buf += self.step()
            steps += 1
            if steps >= self.emit_every or self.sim.done:
                yield ExperienceBatch(self.actor_id, steps, buf, self.version)
                buf, steps = [], 0
        if steps:
            yield ExperienceBatch(self.actor_id, steps, buf, self.version)


def run_actor(actor_id, scenarios, model_provider, policy=None, max_steps=1000, **kwargs):
    """Generator of :class:`ExperienceBatch` es from a fresh :class:`Actor`."""
    eps = kwargs.pop("epsilon", None)
    if eps is None:
        policy = policy or IngestionPolicy()
        eps = policy.epsilons[actor_id % len(policy.epsilons)]
    actor = Actor(actor_id, scenarios, model_provider, policy, epsilon=eps, **kwargs)
    yield from actor.run(max_steps)
