"""Downlink system-level simulator."""

from .kpi import KpiAccumulator, KpiError, KpiReport, kpis
from .phy import (MCS_SE, MCS_THRESHOLD_DB, NUM_MCS, draw_bler, error_probability,
                  transport_block_size)
from .sim import (Action, Grant, HarqProcess, SimulationError, Simulator, TtiFeedback,
                  compute_sinr, received_power_dbm, step)
