"""Link-adaptation layer: observation vector, OLLA baseline, action masking,
vector reward and preference-scalarized action selection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import NamedTuple

import numpy as np

from .simcore import phy
from .simcore.sim import Action

STATE_SCHEMA_VERSION = 1
STATIC_DIM = 16
DYNAMIC_DIM = 14
STATE_DIM = STATIC_DIM + DYNAMIC_DIM
NUM_ACTIONS = phy.NUM_MCS * phy.MAX_RANK
NUM_OBJECTIVES = 2

SITE_TYPES = ("MIMO", "mMIMO")
RECEIVER_TYPES = ("type0", "type1", "type2", "type3")
FB_BUFFER_BITS = 1e8

OLLA_OFFSET_LIMIT_DB = 10.0


def state_layout():
    """The versioned state-layout schema shipped with the package."""
    text = resources.files("genla").joinpath("state_layout.json").read_text()
    return json.loads(text)


# -- state ----------------------------------------------------------------

def static_block(serving_site_type, bandwidth_mhz, power_w, radius_m, neighbor_site_types,
                 num_antennas, receiver_type):
    """Environment block that does not change during a UE's session.

    ``neighbor_site_types`` lists up to two site types of the strongest
    measurable neighbour cells; missing entries are zero-filled with their
    presence flag cleared.
    """
    x = np.zeros(STATIC_DIM)
    x[SITE_TYPES.index(serving_site_type)] = 1.0
    x[2] = bandwidth_mhz / 100.0
    x[3] = power_w / 100.0
    x[4] = radius_m / 1200.0
    for k in range(2):
        if k < len(neighbor_site_types) and neighbor_site_types[k] is not None:
            x[5 + 2 * k + SITE_TYPES.index(neighbor_site_types[k])] = 1.0
            x[9 + k] = 1.0
    x[11] = num_antennas / 4.0
    x[12 + RECEIVER_TYPES.index(receiver_type)] = 1.0
    return x


def dynamic_block(cqi, cqi_age, coupling_loss_db, olla_offset_db, ack_ratio, recent_bler,
                  buffer_bits, last_mcs, last_rank, active_retx, last_reward, interference_activity,
                  ttis_since_grant):
    """Per-TTI block; all arguments may be arrays over UEs (leading axis)."""
    cqi = np.asarray(cqi, dtype=float)
    buf = np.minimum(np.asarray(buffer_bits, dtype=float), FB_BUFFER_BITS)
    last_reward = np.asarray(last_reward, dtype=float).reshape(cqi.shape + (2,))
    cols = [
        cqi / 15.0,
        np.minimum(np.asarray(cqi_age, dtype=float), 20.0) / 10.0,
        np.clip((np.asarray(coupling_loss_db, dtype=float) - 60.0) / 80.0, -1.0, 2.0),
        np.asarray(olla_offset_db, dtype=float) / OLLA_OFFSET_LIMIT_DB,
        np.asarray(ack_ratio, dtype=float),
        np.asarray(recent_bler, dtype=float),
        np.log10(buf + 1.0) / 8.0,
        np.asarray(last_mcs, dtype=float) / 27.0,
        np.asarray(last_rank, dtype=float) / 4.0,
        np.minimum(np.asarray(active_retx, dtype=float), 8.0) / 4.0,
        last_reward[..., 0],
        np.clip(last_reward[..., 1], -phy.MAX_TX, 0.0) / phy.MAX_TX,
        np.asarray(interference_activity, dtype=float),
        np.minimum(np.asarray(ttis_since_grant, dtype=float), 200.0) / 100.0,
    ]
    return np.stack(cols, axis=-1)


def build_state(static, dynamic):
    """Concatenate the static and dynamic blocks (identity transforms)."""
    return np.concatenate([np.asarray(static, dtype=float), np.asarray(dynamic, dtype=float)],
                          axis=-1)


@dataclass(frozen=True)
class UEContext:
    """Everything the state builder needs about one UE; see :func:`context_state`."""

    serving_site_type: str
    bandwidth_mhz: float
    power_w: float
    radius_m: float
    neighbor_site_types: tuple
    num_antennas: int
    receiver_type: str
    cqi: int
    cqi_age: int
    coupling_loss_db: float
    olla_offset_db: float = 0.0
    ack_ratio: float = 1.0
    recent_bler: float = 0.0
    buffer_bits: float = np.inf
    last_mcs: int = 0
    last_rank: int = 1
    active_retx: int = 0
    last_reward: tuple = (0.0, 0.0)
    interference_activity: float = 0.0
    ttis_since_grant: int = 0


def context_state(ctx):
    static = static_block(ctx.serving_site_type, ctx.bandwidth_mhz, ctx.power_w, ctx.radius_m,
                          ctx.neighbor_site_types, ctx.num_antennas, ctx.receiver_type)
    dynamic = dynamic_block(ctx.cqi, ctx.cqi_age, ctx.coupling_loss_db, ctx.olla_offset_db,
                            ctx.ack_ratio, ctx.recent_bler, ctx.buffer_bits, ctx.last_mcs,
                            ctx.last_rank, ctx.active_retx, ctx.last_reward,
                            ctx.interference_activity, ctx.ttis_since_grant)
    return build_state(static, dynamic)


class StateBuilder:
    """Builds state vectors for UEs of a running :class:`~genla.simcore.Simulator`.

    Static blocks are computed once per UE at construction.
    """

    schema_version = STATE_SCHEMA_VERSION

    def __init__(self, sim):
        self.sim = sim
        rows = []
        for u, ue in enumerate(sim.ue_configs):
            c = sim.serving[u]
            cell = sim.cell_configs[c]
            neigh = tuple(sim.cell_site[k].site_type if k >= 0 else None for k in sim.neighbors[u])
            rows.append(static_block(sim.cell_site[c].site_type, cell.bandwidth_mhz,
                                     cell.dl_tx_power_w, cell.cell_radius_m, neigh,
                                     ue.num_antennas, ue.receiver_type))
        self.static = np.array(rows).reshape(len(rows), STATIC_DIM)

    def __call__(self, ue_ids):
        s = self.sim
        u = np.asarray(ue_ids, dtype=int)
        since = np.where(s.last_grant[u] >= 0, s.tti - s.last_grant[u], 200)
        dyn = dynamic_block(s.cqi[u], s.cqi_age(u), s.coupling_loss_db[u], s.olla_offset[u],
                            s.ack_ratio(u), s.bler_ewma[u], s.buffer_bits[u], s.last_mcs[u],
                            s.last_rank[u], s.n_retx[u], s.last_reward[u], s.activity_est[u],
                            since)
        return build_state(self.static[u], dyn)


# -- OLLA -----------------------------------------------------------------

@dataclass(frozen=True)
class OllaState:
    offset_db: float = 0.0
    delta_up_db: float = 0.05
    delta_down_db: float = 0.45
    target_bler: float = 0.1

    @classmethod
    def create(cls, delta_up_db=0.05, target_bler=0.1, offset_db=0.0):
        return cls(offset_db, delta_up_db, delta_up_db * (1.0 - target_bler) / target_bler,
                   target_bler)


def select_mcs(sinr_db):
    """Highest MCS whose 50%-BLER threshold does not exceed ``sinr_db`` (0 if none)."""
    idx = np.searchsorted(phy.MCS_THRESHOLD_DB, np.asarray(sinr_db) + 1e-9, side="right") - 1
    return np.maximum(idx, 0)


def olla_select(olla, cqi):
    """MCS chosen by outer-loop link adaptation from a CQI report."""
    return int(select_mcs(phy.cqi_to_sinr(cqi) + olla.offset_db))


def olla_update(olla, ack):
    """Offset update after a first-transmission ACK/NACK."""
    off = olla.offset_db + (olla.delta_up_db if ack else -olla.delta_down_db)
    return replace(olla, offset_db=min(max(off, -OLLA_OFFSET_LIMIT_DB), OLLA_OFFSET_LIMIT_DB))


def olla_actions(sim, ue_ids):
    """OLLA decisions for granted UEs using each UE's reported rank."""
    u = np.asarray(ue_ids, dtype=int)
    mcs = select_mcs(phy.cqi_to_sinr(sim.cqi[u]) + sim.olla_offset[u])
    return [Action(int(m), int(r)) for m, r in zip(mcs, sim.reported_rank[u])]


# -- actions --------------------------------------------------------------

def action_ranks():
    return np.arange(NUM_ACTIONS) % phy.MAX_RANK + 1


def mask_actions(max_rank, rank_control, reported_rank):
    """Boolean mask over flat action indices; True marks an allowed action."""
    if reported_rank > max_rank:
        raise ValueError(f"reported rank {reported_rank} exceeds max rank {max_rank}")
    ranks = action_ranks()
    if rank_control:
        return ranks <= max_rank
    return ranks == reported_rank


def mask_matrix(max_rank, rank_control, reported_rank):
    """Vectorized :func:`mask_actions` over UEs, shape (U, NUM_ACTIONS)."""
    ranks = action_ranks()[None, :]
    if rank_control:
        return ranks <= np.asarray(max_rank)[:, None]
    return ranks == np.asarray(reported_rank)[:, None]


# -- reward ---------------------------------------------------------------

class RewardVector(NamedTuple):
    bits: float
    resource: float


def compute_reward(feedback, num_prbs):
    """Reward of a resolved transport block (ACK or drop).

    ``bits`` is the acknowledged payload relative to the cell's largest
    possible transport block; ``resource`` is minus the PRB-TTIs spent over all
    transmissions relative to the cell's PRB count.
    """
    if not (feedback.ack or feedback.dropped):
        raise ValueError("reward is only defined at HARQ resolution")
    tbs_max = phy.transport_block_size(phy.NUM_MCS - 1, phy.MAX_RANK, num_prbs)
    bits = feedback.delivered_bits / tbs_max if feedback.ack else 0.0
    return RewardVector(float(bits), -float(feedback.prb_ttis_used) / num_prbs)


# -- RL action selection --------------------------------------------------

class AllMaskedError(ValueError):
    pass


def scalarize(q, omega):
    """Preference-weighted action values ``omega . Q(s, a)``."""
    return np.einsum("...am,...m->...a", q, omega)


def greedy_index(q, omega, mask):
    v = np.where(mask, scalarize(q, omega), -np.inf)
    return np.argmax(v, axis=-1)


def rl_select(state, model, omega, epsilon, mask, rng):
    """Epsilon-greedy action over unmasked actions of a preference-conditioned model.

    ``model`` is any callable ``(states, omegas) -> Q`` with ``Q`` of shape
    (batch, actions, objectives).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise AllMaskedError("every action is masked")
    if rng.random() < epsilon:
        return Action.from_index(rng.choice(np.flatnonzero(mask)))
    q = model(np.asarray(state, dtype=float)[None, :], np.asarray(omega, dtype=float)[None, :])[0]
    return Action.from_index(greedy_index(q, omega, mask))


def rl_select_batch(states, model, omegas, epsilons, masks, rng):
    """Vectorized :func:`rl_select`; returns flat action indices."""
    masks = np.asarray(masks, dtype=bool)
    if not masks.any(axis=1).all():
        raise AllMaskedError("a UE has every action masked")
    n = len(states)
    q = model(states, omegas)
    idx = greedy_index(q, omegas, masks)
    explore = rng.random(n) < np.broadcast_to(epsilons, (n,))
    for i in np.flatnonzero(explore):
        idx[i] = rng.choice(np.flatnonzero(masks[i]))
    return idx
