"""TTI-driven downlink system simulator.

One :class:`Simulator` owns all mutable state of one scenario and is strictly
single-threaded. Every TTI is split in two phases so a controller can act in
between::

    grants = sim.grants()              # who transmits this TTI
    actions = {g.ue_id: policy(...) for g in grants if g.needs_action}
    feedback = sim.step(actions)       # transmit, advance to the next TTI

Feedback events are small frozen values and can be shipped across processes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import phy
from .kpi import KpiAccumulator, kpis
from .traffic import mbb_arrivals

HARQ_PROCESSES = 8
HARQ_RTT_TTIS = 4
CQI_PERIOD_TTIS = 5
CQI_DELAY_TTIS = 5
ACK_HISTORY = 50
BLER_EWMA = 0.1
ACTIVITY_EWMA = 0.3
FADING_PATHS = 4

RECEIVER_OFFSET_DB = {"type0": 0.0, "type1": -1.0, "type2": -2.0, "type3": 1.0}


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Action:
    """Link-adaptation decision for one new transport block."""

    mcs: int
    rank: int

    @property
    def index(self):
        return self.mcs * phy.MAX_RANK + (self.rank - 1)

    @classmethod
    def from_index(cls, index):
        return cls(int(index) // phy.MAX_RANK, int(index) % phy.MAX_RANK + 1)


@dataclass(frozen=True)
class Grant:
    ue_id: int
    cell_id: int
    needs_action: bool


@dataclass(frozen=True)
class TtiFeedback:
    ue_id: int
    ack: bool
    first_tx: bool
    delivered_bits: int
    prb_ttis_used: int
    tti: int
    cell_id: int = -1
    mcs: int = 0
    rank: int = 1
    tx_count: int = 1
    dropped: bool = False
    tb_tti: int = 0

    @property
    def resolved(self):
        return self.ack or self.dropped


@dataclass
class HarqProcess:
    tb_bits: int
    mcs: int
    rank: int
    prbs_used: int
    first_tti: int
    tx_count: int = 0
    prb_ttis_total: int = 0
    pending_feedback_tti: int = -1
    decoded: bool = False


def received_power_dbm(tx_power_w, site_type, distance_m, angle_off_boresight_deg, shadow_db,
                       indoor):
    """Wideband received power of one link (before fast fading)."""
    p = 10.0 * np.log10(np.asarray(tx_power_w, dtype=float) * 1e3)
    gain = np.vectorize(phy.SITE_ANTENNA_GAIN_DB.get)(site_type) if np.ndim(site_type) else \
        phy.SITE_ANTENNA_GAIN_DB[site_type]
    return (p + gain + phy.sector_attenuation_db(angle_off_boresight_deg)
            - phy.pathloss_db(distance_m) - shadow_db
            - phy.INDOOR_PENETRATION_DB * np.asarray(indoor, dtype=float))


def compute_sinr(signal_dbm, interferer_dbm, activity, is_mmimo, noise_dbm, rng):
    """SINR in dB of one or more victim links.

    Parameters
    ----------
    signal_dbm : array (U,)
        Serving-link received power including fast fading.
    interferer_dbm : array (U, C)
        Received power from each potential interferer (``-inf`` for none).
    activity : array (C,)
        Fraction of the band each interferer occupies this TTI (0 = idle).
    is_mmimo : bool array (C,)
        Massive-MIMO interferers only hit when their beam collides with the
        victim, with probability ``activity * 0.2``; others contribute their
        activity-weighted power.
    noise_dbm : array (U,)

    Returns
    -------
    sinr_db : array (U,)
    on : array (U, C)
        Contribution weight of each interferer actually realized.
    """
    interferer_dbm = np.atleast_2d(interferer_dbm)
    activity = np.asarray(activity, dtype=float)
    is_mmimo = np.asarray(is_mmimo, dtype=bool)
    p_hit = activity * phy.MMIMO_COLLISION_FACTOR
    hits = rng.random(interferer_dbm.shape) < p_hit
    on = np.where(is_mmimo, hits.astype(float), activity)
    with np.errstate(divide="ignore"):
        i_mw = (on * 10.0 ** (interferer_dbm / 10.0)).sum(axis=-1)
    n_mw = 10.0 ** (np.asarray(noise_dbm, dtype=float) / 10.0)
    return np.asarray(signal_dbm) - 10.0 * np.log10(i_mw + n_mw), on


class Simulator:
    """Downlink simulation of one :class:`~genla.scenario.ScenarioConfig`.

    Parameters
    ----------
    config : ScenarioConfig
    seed : int, optional
        Seed of all stochastic processes (fading, traffic, decoding). Defaults
        to the scenario seed.
    olla_delta_up : float
        OLLA step after an ACK in dB; the NACK step follows from the 10% target.
    trace : file-like, optional
        Receives one JSON line per transmission.
    force_ack : bool
        Decode every transmission successfully (for accounting checks).
    """

    def __init__(self, config, seed=None, olla_delta_up=0.05, olla_target=0.1, trace=None,
                 force_ack=False):
        self.config = config
        self.duration = config.duration_ttis
        # independent streams keep fading, traffic and decoding aligned across
        # policies run on the same seed (common random numbers)
        root = np.random.SeedSequence([config.seed if seed is None else seed, 0x51])
        self.rng, self.traffic_rng, self.meas_rng, self.link_rng, self.decode_rng = (
            np.random.default_rng(s) for s in root.spawn(5))
        self.trace = trace
        self.force_ack = force_ack
        self.tti = 0
        self._begun = False

        cells = config.cells
        self.n_cells = len(cells)
        self.cell_ids = np.array([c.cell_id for c in cells])
        self._cell_index = {c.cell_id: k for k, c in enumerate(cells)}
        site_of_cell = []
        for s in config.sites:
            site_of_cell += [s] * len(s.cells)
        self.cell_configs = cells
        self.cell_site = site_of_cell
        self.cell_nprb = np.array([c.num_subbands for c in cells])
        self.cell_mmimo = np.array([s.site_type == "mMIMO" for s in site_of_cell])
        self.cell_tbs_max = phy.transport_block_size(phy.NUM_MCS - 1, phy.MAX_RANK, self.cell_nprb)

        ues = config.ues
        if [u.ue_id for u in ues] != list(range(len(ues))):
            raise SimulationError("UE ids must be 0..N-1 in order")
        n = self.n_ues = len(ues)
        self.ue_configs = ues
        self.serving = np.array([self._cell_index[u.serving_cell_id] for u in ues], dtype=int)
        self.max_rank = np.array([u.max_rank for u in ues], dtype=int)
        self.is_fb = np.array([u.traffic == "FullBuffer" for u in ues], dtype=bool)
        self.indoor = np.array([u.indoor for u in ues], dtype=bool)
        self.rx_offset = np.array([RECEIVER_OFFSET_DB[u.receiver_type] for u in ues])
        self.rho = np.exp(-0.05 * np.array([u.speed_mps for u in ues]))

        self._init_links(config)

        # fast fading: FADING_PATHS AR(1) complex gains per UE, unit mean power
        self.fading = (self.rng.standard_normal((n, FADING_PATHS))
                       + 1j * self.rng.standard_normal((n, FADING_PATHS))) / math.sqrt(2.0)

        self.buffer_bits = np.where(self.is_fb, np.inf, 0.0)
        self.cqi = np.zeros(n, dtype=int)
        self.reported_rank = np.ones(n, dtype=int)
        self.cqi_measured_tti = np.full(n, -CQI_DELAY_TTIS, dtype=int)
        self._pending_report = None
        self.olla_offset = np.zeros(n)
        self.olla_up = float(olla_delta_up)
        self.olla_down = self.olla_up * (1.0 - olla_target) / olla_target
        self.ack_hist = np.zeros((n, ACK_HISTORY), dtype=bool)
        self.ack_count = np.zeros(n, dtype=int)
        self.bler_ewma = np.zeros(n)
        self.last_mcs = np.zeros(n, dtype=int)
        self.last_rank = np.ones(n, dtype=int)
        self.last_reward = np.zeros((n, 2))
        self.activity_est = np.zeros(n)
        self.last_grant = np.full(n, -1, dtype=int)
        self.inflight = np.zeros(n, dtype=int)
        self.retx = [[] for _ in range(n)]
        self.n_retx = np.zeros(n, dtype=int)
        self._feedback_due = {}
        self._rr_pointer = np.full(self.n_cells, -1, dtype=int)
        self._cell_ues = [np.flatnonzero(self.serving == c) for c in range(self.n_cells)]
        self._prev_activity = np.ones(self.n_cells)
        self._grants = []
        self._resolved = []

        self._packets = [[] for _ in range(n)]  # (arrival tti, cumulative end bits)
        self._arrived_cum = np.zeros(n)
        self._delivered_cum = np.zeros(n)
        self.kpi = KpiAccumulator(np.arange(n), self.cell_ids[self.serving],
                                  [u.traffic for u in ues])
        self.dropped_tbs = 0
        self.interference_log = []

        # initial report assumes fully loaded neighbours, available at TTI 0
        self._measure(np.ones(self.n_cells), -CQI_DELAY_TTIS)
        self._activate_report()

    # -- geometry ---------------------------------------------------------

    def _init_links(self, config):
        n, c = self.n_ues, self.n_cells
        ue_xy = np.array([u.position for u in config.ues], dtype=float).reshape(n, 2)
        site_xy = np.array([s.location for s in self.cell_site], dtype=float).reshape(c, 2)
        az = np.array([cc.azimuth for cc in self.cell_configs], dtype=float)
        d = ue_xy[:, None, :] - site_xy[None, :, :]
        dist = np.hypot(d[..., 0], d[..., 1])
        ang = np.degrees(np.arctan2(d[..., 1], d[..., 0])) - az[None, :]
        site_index = np.array([s.site_id for s in self.cell_site])
        n_sites = len(config.sites)
        shadow_site = self.rng.normal(0.0, phy.SHADOWING_STD_DB, size=(n, n_sites))
        shadow = shadow_site[:, np.searchsorted(sorted(s.site_id for s in config.sites), site_index)]
        power = np.array([cc.dl_tx_power_w for cc in self.cell_configs], dtype=float)
        types = np.array([s.site_type for s in self.cell_site])
        rx = received_power_dbm(power[None, :], np.broadcast_to(types, (n, c)), dist, ang, shadow,
                                self.indoor[:, None])
        bw = self.cell_nprb * phy.PRB_BANDWIDTH_HZ
        bw_serv = bw[self.serving]
        # interference is spread over the interferer's band; only the overlap hits
        overlap_db = 10.0 * np.log10(np.minimum(bw[None, :], bw_serv[:, None]) / bw[None, :])
        self.rx_dbm = rx + overlap_db
        rows = np.arange(n)
        self.signal_dbm = rx[rows, self.serving]
        self.interf_dbm = self.rx_dbm.copy()
        self.interf_dbm[rows, self.serving] = -np.inf
        self.noise_dbm = phy.noise_psd_dbm_hz() + 10.0 * np.log10(bw_serv)
        self.coupling_loss_db = (10.0 * np.log10(power[self.serving] * 1e3)
                                 - self.signal_dbm)
        # two strongest neighbour cells measurable above the noise floor
        order = np.argsort(-self.interf_dbm, axis=1)[:, :2]
        strength = np.take_along_axis(self.interf_dbm, order, axis=1)
        self.neighbors = np.where(strength > self.noise_dbm[:, None], order, -1)

    # -- per-TTI phases ---------------------------------------------------

    def fading_gain_db(self, idx=slice(None)):
        f = self.fading[idx]
        p = f.real * f.real + f.imag * f.imag
        return 10.0 * np.log10(p.sum(axis=-1) / p.shape[-1])

    def _advance_fading(self):
        w = (self.rng.standard_normal(self.fading.shape)
             + 1j * self.rng.standard_normal(self.fading.shape)) / math.sqrt(2.0)
        r = self.rho[:, None]
        self.fading = r * self.fading + np.sqrt(1.0 - r * r) * w

    def _measure(self, activity, tti):
        sig = self.signal_dbm + self.fading_gain_db()
        sinr, on = compute_sinr(sig, self.interf_dbm, activity, self.cell_mmimo, self.noise_dbm,
                                self.meas_rng)
        meas = sinr + self.rx_offset
        rank = phy.best_rank(meas, self.max_rank)
        cqi = phy.sinr_to_cqi(phy.layer_sinr_db(meas, rank))
        with np.errstate(invalid="ignore", divide="ignore"):
            w = 10.0 ** (self.interf_dbm / 10.0)
            tot = w.sum(axis=1)
            frac = np.where(tot > 0, (w * on).sum(axis=1) / np.where(tot > 0, tot, 1.0), 0.0)
        self.activity_est = (1 - ACTIVITY_EWMA) * self.activity_est + ACTIVITY_EWMA * frac
        self._pending_report = (cqi, rank, tti)

    def _activate_report(self):
        cqi, rank, tti = self._pending_report
        self.cqi = cqi
        self.reported_rank = rank
        self.cqi_measured_tti = np.full(self.n_ues, tti, dtype=int)

    def _arrivals(self):
        mbb = np.flatnonzero(~self.is_fb)
        if mbb.size == 0:
            return
        counts, bits = mbb_arrivals(self.traffic_rng, mbb.size)
        for k in np.flatnonzero(counts):
            u = mbb[k]
            self.buffer_bits[u] += bits[k]
            self._arrived_cum[u] += bits[k]
            self.kpi.generated_bits[u] += bits[k]
            self._packets[u].append((self.tti, self._arrived_cum[u]))

    def _resolve_feedback(self):
        out = []
        for u, proc in self._feedback_due.pop(self.tti, ()):
            self.inflight[u] -= 1
            first = proc.tx_count == 1
            cell = self.serving[u]
            if first:
                self.kpi.record_first_tx(self.tti, u, proc.decoded)
                self._update_first_tx_stats(u, proc.decoded)
            if proc.decoded:
                bits = int(proc.tb_bits)
                self.kpi.record_delivery(self.tti, u, bits)
                self._deliver(u, bits)
                fb = TtiFeedback(u, True, first, bits, proc.prb_ttis_total, self.tti,
                                 int(self.cell_ids[cell]), proc.mcs, proc.rank, proc.tx_count,
                                 False, proc.first_tti)
            else:
                dropped = proc.tx_count >= phy.MAX_TX
                if dropped:
                    self.dropped_tbs += 1
                    if not self.is_fb[u]:
                        # bits return to the buffer for upper-layer recovery
                        self.buffer_bits[u] += proc.tb_bits
                else:
                    self.retx[u].append(proc)
                    self.n_retx[u] += 1
                fb = TtiFeedback(u, False, first, 0, proc.prb_ttis_total, self.tti,
                                 int(self.cell_ids[cell]), proc.mcs, proc.rank, proc.tx_count,
                                 dropped, proc.first_tti)
            out.append(fb)
        return out

    def _update_first_tx_stats(self, u, ack):
        self.ack_hist[u, self.ack_count[u] % ACK_HISTORY] = ack
        self.ack_count[u] += 1
        self.bler_ewma[u] = (1 - BLER_EWMA) * self.bler_ewma[u] + BLER_EWMA * (not ack)
        off = self.olla_offset[u] + (self.olla_up if ack else -self.olla_down)
        self.olla_offset[u] = min(max(off, -10.0), 10.0)

    def _deliver(self, u, bits):
        if self.is_fb[u]:
            return
        self._delivered_cum[u] += bits
        q = self._packets[u]
        while q and q[0][1] <= self._delivered_cum[u] + 1e-6:
            arrival, _ = q.pop(0)
            self.kpi.record_latency(self.tti, u, self.tti - arrival)

    def _schedule(self):
        grants = []
        eligible_all = ((self.buffer_bits > 0) & (self.inflight + self.n_retx < HARQ_PROCESSES)) \
            | (self.n_retx > 0)
        for c in range(self.n_cells):
            members = self._cell_ues[c]
            if members.size == 0:
                continue
            cand = np.flatnonzero(eligible_all[members])
            if cand.size == 0:
                continue
            after = cand[cand > self._rr_pointer[c]]
            pos = after[0] if after.size else cand[0]
            self._rr_pointer[c] = pos
            u = int(members[pos])
            grants.append(Grant(u, int(self.cell_ids[c]), bool(self.n_retx[u] == 0)))
        return grants

    def _begin(self):
        if self._begun:
            return
        if self.tti >= self.duration:
            raise SimulationError("simulation already finished")
        self._arrivals()
        self._advance_fading()
        if self.tti % CQI_PERIOD_TTIS == 0:
            self._activate_report()
            self._measure(self._prev_activity, self.tti)
        self._resolved = self._resolve_feedback()
        self._grants = self._schedule()
        self._begun = True

    def grants(self):
        """Scheduling grants of the current TTI (one per non-idle cell)."""
        self._begin()
        return list(self._grants)

    @property
    def done(self):
        return self.tti >= self.duration

    def step(self, actions=None, tti=None):
        """Transmit with ``actions`` (UE id -> Action) and advance one TTI.

        ``actions`` must hold exactly the granted UEs that start a new
        transport block. Returns the HARQ feedback resolved in this TTI.
        """
        self._begin()
        if tti is not None and tti != self.tti:
            raise SimulationError(f"step called for TTI {tti}, simulator is at {self.tti}")
        actions = actions or {}
        need = {g.ue_id for g in self._grants if g.needs_action}
        extra = set(actions) - need
        if extra:
            raise SimulationError(f"actions for UEs not awaiting a new transmission: {sorted(extra)}")
        missing = need - set(actions)
        if missing:
            raise SimulationError(f"missing actions for scheduled UEs: {sorted(missing)}")

        procs = []
        for g in self._grants:
            u = g.ue_id
            c = self.serving[u]
            if g.needs_action:
                a = actions[u]
                if not 1 <= a.rank <= self.max_rank[u]:
                    raise SimulationError(f"rank {a.rank} exceeds UE {u} max rank {self.max_rank[u]}")
                phy.check_mcs(a.mcs)
                nprb = int(self.cell_nprb[c])
                full = phy.transport_block_size(a.mcs, a.rank, nprb)
                if self.buffer_bits[u] < full:
                    bits = int(math.ceil(self.buffer_bits[u]))
                    prbs = min(nprb, max(1, math.ceil(bits / phy.bits_per_prb(a.mcs, a.rank))))
                else:
                    bits, prbs = int(full), nprb
                self.buffer_bits[u] = max(self.buffer_bits[u] - bits, 0.0)
                proc = HarqProcess(bits, a.mcs, a.rank, prbs, self.tti)
                self.inflight[u] += 1
                self.last_mcs[u] = a.mcs
                self.last_rank[u] = a.rank
            else:
                proc = self.retx[u].pop(0)
                self.n_retx[u] -= 1
                self.inflight[u] += 1
            proc.tx_count += 1
            proc.prb_ttis_total += proc.prbs_used
            procs.append((u, c, proc))

        activity = np.zeros(self.n_cells)
        for u, c, proc in procs:
            activity[c] = proc.prbs_used / self.cell_nprb[c]

        if procs:
            us = np.array([p[0] for p in procs])
            sig = self.signal_dbm[us] + self.fading_gain_db(us)
            sinr, on = compute_sinr(sig, self.interf_dbm[us], activity, self.cell_mmimo,
                                    self.noise_dbm[us], self.link_rng)
            with np.errstate(divide="ignore"):
                w = 10.0 ** (self.interf_dbm[us] / 10.0)
            tot = w.sum(axis=1)
            frac = np.where(tot > 0, (w * on).sum(axis=1) / np.where(tot > 0, tot, 1.0), 0.0)
            self.interference_log.append(float(frac.mean()))
            ranks = np.array([p[2].rank for p in procs])
            mcs = np.array([p[2].mcs for p in procs])
            ntx = np.array([p[2].tx_count for p in procs])
            eff = phy.layer_sinr_db(sinr, ranks)
            ok = phy.draw_bler(eff, mcs, ntx, self.decode_rng)
            if self.force_ack:
                ok[:] = True
            for k, (u, c, proc) in enumerate(procs):
                proc.decoded = bool(ok[k])
                proc.pending_feedback_tti = self.tti + HARQ_RTT_TTIS
                self._feedback_due.setdefault(proc.pending_feedback_tti, []).append((u, proc))
                self.kpi.record_resource(self.tti, u, proc.prbs_used)
                self.last_grant[u] = self.tti
                if self.trace is not None:
                    self.trace.write(json.dumps({
                        "tti": self.tti, "cell": int(self.cell_ids[c]), "ue": int(u),
                        "mcs": proc.mcs, "rank": proc.rank, "sinr": round(float(sinr[k]), 3),
                        "ack": proc.decoded, "bits": proc.tb_bits, "prbs": proc.prbs_used,
                    }) + "\n")
        else:
            self.interference_log.append(float("nan"))

        self._prev_activity = activity
        resolved = self._resolved
        self._resolved = []
        self._grants = []
        self._begun = False
        self.tti += 1
        self.kpi.end_tti = self.tti
        return resolved

    # -- queries ----------------------------------------------------------

    def kpis(self, window=None):
        return kpis(self.kpi, window)

    def cqi_age(self, idx=slice(None)):
        return self.tti - self.cqi_measured_tti[idx]

    def ack_ratio(self, idx=slice(None)):
        n = np.minimum(self.ack_count[idx], ACK_HISTORY)
        s = self.ack_hist[idx].sum(axis=-1)
        return np.where(n > 0, s / np.maximum(n, 1), 1.0)

    def cell_index(self, cell_id):
        return self._cell_index[cell_id]

    def note_reward(self, ue_id, reward):
        self.last_reward[ue_id] = reward


def step(sim, tti, actions):
    """Functional alias of :meth:`Simulator.step`."""
    return sim.step(actions, tti=tti)
