"""KPI accounting over simulation windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phy import PRB_BANDWIDTH_HZ, TTI_S


class KpiError(ValueError):
    pass


@dataclass
class UEKpi:
    ue_id: int
    cell_id: int
    traffic: str
    throughput_bps: float
    spectral_efficiency_bps_hz: float
    bler_first_tx: float
    first_tx_count: int
    mean_latency_ttis: float
    delivered_bits: int


@dataclass
class CellKpi:
    cell_id: int
    throughput_bps: float
    spectral_efficiency_bps_hz: float
    bler_first_tx: float
    first_tx_count: int


@dataclass
class KpiReport:
    window: tuple[int, int]
    ues: list[UEKpi]
    cells: list[CellKpi]

    def mean_ue_throughput(self):
        return float(np.mean([u.throughput_bps for u in self.ues])) if self.ues else 0.0


class KpiAccumulator:
    """Event log of deliveries, first-transmission outcomes, resources and packets."""

    def __init__(self, ue_ids, ue_cells, ue_traffic):
        self.ue_ids = np.asarray(ue_ids)
        self.ue_cells = np.asarray(ue_cells)
        self.ue_traffic = list(ue_traffic)
        self.deliveries = []      # (tti, ue, bits)
        self.first_tx = []        # (tti, ue, ack)
        self.resources = []       # (tti, ue, prbs)
        self.latencies = []       # (completion tti, ue, latency ttis)
        self.generated_bits = np.zeros(len(self.ue_ids))
        self.delivered_bits = np.zeros(len(self.ue_ids))
        self.end_tti = 0

    def record_delivery(self, tti, ue, bits):
        self.deliveries.append((tti, ue, bits))
        self.delivered_bits[ue] += bits

    def record_first_tx(self, tti, ue, ack):
        self.first_tx.append((tti, ue, bool(ack)))

    def record_resource(self, tti, ue, prbs):
        self.resources.append((tti, ue, prbs))

    def record_latency(self, tti, ue, latency):
        self.latencies.append((tti, ue, latency))


def _windowed(events, lo, hi, width):
    if not events:
        return np.zeros((0, width))
    a = np.asarray(events, dtype=float)
    return a[(a[:, 0] >= lo) & (a[:, 0] < hi)]


def kpis(acc, window=None):
    """KPI report over TTIs ``[window[0], window[1])`` (default: whole run).

    Throughput is delivered bits over the window duration; spectral efficiency
    is delivered bits over the scheduled PRB-time (bandwidth x seconds used);
    BLER counts first transmissions only.
    """
    if window is None:
        window = (0, acc.end_tti)
    lo, hi = int(window[0]), int(window[1])
    if hi <= lo:
        raise KpiError(f"empty KPI window {window}")
    seconds = (hi - lo) * TTI_S
    n = len(acc.ue_ids)
    bits = np.bincount(_windowed(acc.deliveries, lo, hi, 3)[:, 1].astype(int),
                       weights=_windowed(acc.deliveries, lo, hi, 3)[:, 2], minlength=n)
    ftx = _windowed(acc.first_tx, lo, hi, 3)
    ftx_n = np.bincount(ftx[:, 1].astype(int), minlength=n)
    ftx_nack = np.bincount(ftx[:, 1].astype(int), weights=1.0 - ftx[:, 2], minlength=n)
    res = _windowed(acc.resources, lo, hi, 3)
    prb_ttis = np.bincount(res[:, 1].astype(int), weights=res[:, 2], minlength=n)
    lat = _windowed(acc.latencies, lo, hi, 3)
    lat_sum = np.bincount(lat[:, 1].astype(int), weights=lat[:, 2], minlength=n)
    lat_n = np.bincount(lat[:, 1].astype(int), minlength=n)

    ues = []
    for i in range(n):
        used_hz_s = prb_ttis[i] * PRB_BANDWIDTH_HZ * TTI_S
        mbb = acc.ue_traffic[i] == "MBB"
        ues.append(
            UEKpi(
                ue_id=int(acc.ue_ids[i]),
                cell_id=int(acc.ue_cells[i]),
                traffic=acc.ue_traffic[i],
                throughput_bps=float(bits[i] / seconds),
                spectral_efficiency_bps_hz=float(bits[i] / used_hz_s) if used_hz_s > 0 else 0.0,
                bler_first_tx=float(ftx_nack[i] / ftx_n[i]) if ftx_n[i] else 0.0,
                first_tx_count=int(ftx_n[i]),
                mean_latency_ttis=float(lat_sum[i] / lat_n[i]) if (mbb and lat_n[i]) else float("nan"),
                delivered_bits=int(bits[i]),
            )
        )
    cells = []
    for c in np.unique(acc.ue_cells):
        m = acc.ue_cells == c
        used_hz_s = prb_ttis[m].sum() * PRB_BANDWIDTH_HZ * TTI_S
        n_first = int(ftx_n[m].sum())
        cells.append(
            CellKpi(
                cell_id=int(c),
                throughput_bps=float(sum(u.throughput_bps for u, k in zip(ues, m) if k)),
                spectral_efficiency_bps_hz=float(bits[m].sum() / used_hz_s) if used_hz_s > 0 else 0.0,
                bler_first_tx=float(ftx_nack[m].sum() / n_first) if n_first else 0.0,
                first_tx_count=n_first,
            )
        )
    return KpiReport(window=(lo, hi), ues=ues, cells=cells)
