"""Physical-layer abstraction: MCS ladder, transport block sizes, BLER curve,
CQI quantization, path loss and antenna patterns.

All link-level behaviour is abstracted into a few closed-form maps so that a
TTI of a multi-cell system costs a handful of vectorized numpy operations.
"""

import math

import numpy as np

NUM_MCS = 28
MAX_RANK = 4
MAX_TX = 5
NUM_CQI = 16

SE_MIN = 0.23
SE_MAX = 7.40

#: Spectral efficiency (bits per resource element per layer) of each MCS
#: index. Geometric ladder from ``SE_MIN`` to ``SE_MAX``.
MCS_SE = SE_MIN * (SE_MAX / SE_MIN) ** (np.arange(NUM_MCS) / (NUM_MCS - 1))

IMPLEMENTATION_MARGIN_DB = 1.0
BLER_SLOPE_PER_DB = 2.0
HARQ_COMBINING_GAIN_DB = 3.0

#: SINR (dB) at which each MCS has 50% block error rate.
MCS_THRESHOLD_DB = 10.0 * np.log10(2.0 ** MCS_SE - 1.0) + IMPLEMENTATION_MARGIN_DB

SUBCARRIERS_PER_PRB = 12
SYMBOLS_PER_SLOT = 14
CODING_OVERHEAD = 0.8
RE_PER_PRB = SUBCARRIERS_PER_PRB * SYMBOLS_PER_SLOT * CODING_OVERHEAD
PRB_BANDWIDTH_HZ = 180e3
TTI_S = 1e-3

THERMAL_NOISE_DBM_HZ = -174.0
UE_NOISE_FIGURE_DB = 7.0

INDOOR_PENETRATION_DB = 20.0
SHADOWING_STD_DB = 6.0
MIN_DISTANCE_M = 10.0

#: Fixed antenna gain of the serving/interfering array by site type.
SITE_ANTENNA_GAIN_DB = {"MIMO": 9.0, "mMIMO": 17.0}
MMIMO_COLLISION_FACTOR = 0.2

SECTOR_BEAMWIDTH_DEG = 65.0
SECTOR_MAX_ATTENUATION_DB = 25.0

#: Relative gain of spatial layer 1..4; a rank-r transmission sees the
#: geometric mean of the first r entries.
LAYER_GAIN_DB = np.array([0.0, -2.0, -4.0, -6.0])

#: CQI k (1..15) covers [CQI_FLOOR_DB + CQI_STEP_DB*(k-1), ... + CQI_STEP_DB).
CQI_FLOOR_DB = -6.0
CQI_STEP_DB = 2.0


def check_mcs(mcs):
    if isinstance(mcs, (int, np.integer)):
        if not 0 <= mcs < NUM_MCS:
            raise ValueError(f"MCS index must be an integer in 0..{NUM_MCS - 1}, got {mcs}")
        return
    mcs = np.asarray(mcs)
    if np.any((mcs < 0) | (mcs >= NUM_MCS)) or not np.issubdtype(mcs.dtype, np.integer):
        raise ValueError(f"MCS index must be an integer in 0..{NUM_MCS - 1}, got {mcs}")


def tbs_from_se(se, rank, prbs):
    """Transport block size in bits for a spectral efficiency, rank and PRB count."""
    return np.floor(se * prbs * RE_PER_PRB * rank + 1e-9).astype(np.int64)


def transport_block_size(mcs, rank, prbs):
    """Transport block size in bits.

    Parameters
    ----------
    mcs : int or array of int
        MCS index in ``0..27``.
    rank : int or array of int
        Number of spatial layers, ``1..4``.
    prbs : int or array of int
        Number of allocated PRBs, at least 1.
    """
    check_mcs(mcs)
    if isinstance(rank, (int, np.integer)) and isinstance(prbs, (int, np.integer)):
        if not 1 <= rank <= MAX_RANK:
            raise ValueError(f"rank must be in 1..{MAX_RANK}, got {rank}")
        if prbs < 1:
            raise ValueError(f"prbs must be >= 1, got {prbs}")
        return math.floor(MCS_SE[mcs] * prbs * RE_PER_PRB * rank + 1e-9)
    rank = np.asarray(rank)
    prbs = np.asarray(prbs)
    if np.any((rank < 1) | (rank > MAX_RANK)):
        raise ValueError(f"rank must be in 1..{MAX_RANK}, got {rank}")
    if np.any(prbs < 1):
        raise ValueError(f"prbs must be >= 1, got {prbs}")
    out = tbs_from_se(MCS_SE[mcs], rank, prbs)
    return int(out) if out.ndim == 0 else out


def bits_per_prb(mcs, rank):
    return MCS_SE[mcs] * RE_PER_PRB * rank


def error_probability(sinr_eff_db, mcs, tx_count=1):
    """Block error probability of a transmission.

    Logistic in the combined SINR, centred on the MCS threshold. Each HARQ
    retransmission adds a fixed chase-combining gain.
    """
    check_mcs(mcs)
    tx_count = np.asarray(tx_count)
    if np.any((tx_count < 1) | (tx_count > MAX_TX)):
        raise ValueError(f"tx_count must be in 1..{MAX_TX}")
    gamma = np.asarray(sinr_eff_db, dtype=float) + HARQ_COMBINING_GAIN_DB * (tx_count - 1)
    x = BLER_SLOPE_PER_DB * (gamma - MCS_THRESHOLD_DB[mcs])
    # 1/(1+exp(x)) written to avoid overflow for large |x|
    return 0.5 * (1.0 - np.tanh(0.5 * x))


def draw_bler(sinr_eff_db, mcs, tx_count, rng):
    """Bernoulli decode outcome; True means the block was received."""
    p = error_probability(sinr_eff_db, mcs, tx_count)
    return rng.random(np.shape(p)) >= p


_RANKS = np.arange(1, len(LAYER_GAIN_DB) + 1)
# power split over r layers plus the mean per-layer gain, indexed by r - 1
_RANK_OFFSET_DB = np.cumsum(LAYER_GAIN_DB) / _RANKS - 10.0 * np.log10(_RANKS)


def layer_sinr_db(sinr_db, rank):
    """Per-layer SINR when the power is split over ``rank`` layers."""
    return np.asarray(sinr_db) + _RANK_OFFSET_DB[np.asarray(rank) - 1]


def rank_capacity(sinr_db, rank):
    g = 10.0 ** (layer_sinr_db(sinr_db, rank) / 10.0)
    return rank * np.minimum(np.log2(1.0 + g), SE_MAX)


def best_rank(sinr_db, max_rank):
    """Rank maximizing estimated capacity, capped by ``max_rank`` (per element)."""
    sinr_db = np.asarray(sinr_db, dtype=float)
    caps = np.stack([rank_capacity(sinr_db, r) for r in range(1, MAX_RANK + 1)], axis=-1)
    allowed = np.arange(1, MAX_RANK + 1) <= np.asarray(max_rank)[..., None]
    caps = np.where(allowed, caps, -np.inf)
    return np.argmax(caps, axis=-1) + 1


def sinr_to_cqi(sinr_db):
    """4-bit CQI; 0 means out of range (below the lowest threshold)."""
    k = np.floor((np.asarray(sinr_db) - CQI_FLOOR_DB) / CQI_STEP_DB) + 1
    return np.clip(k, 0, NUM_CQI - 1).astype(np.int64)


def cqi_to_sinr(cqi):
    """Inverse of :func:`sinr_to_cqi` at the centre of each quantization bin."""
    cqi = np.asarray(cqi)
    if np.any((cqi < 0) | (cqi >= NUM_CQI)):
        raise ValueError("CQI must be in 0..15")
    return CQI_FLOOR_DB + CQI_STEP_DB * (cqi - 1) + 0.5 * CQI_STEP_DB


def pathloss_db(distance_m):
    d_km = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M) / 1000.0
    return 128.1 + 37.6 * np.log10(d_km)


def sector_attenuation_db(angle_off_boresight_deg):
    a = (np.asarray(angle_off_boresight_deg) + 180.0) % 360.0 - 180.0
    return -np.minimum(12.0 * (a / SECTOR_BEAMWIDTH_DEG) ** 2, SECTOR_MAX_ATTENUATION_DB)


def noise_psd_dbm_hz():
    return THERMAL_NOISE_DBM_HZ + UE_NOISE_FIGURE_DB


def sinr_db(signal_dbm, interference_dbm, noise_dbm):
    """SINR from signal, aggregate interference and noise powers, all in dBm.

    ``interference_dbm`` may be ``-inf`` for no interference.
    """
    i_mw = 10.0 ** (np.asarray(interference_dbm, dtype=float) / 10.0)
    n_mw = 10.0 ** (np.asarray(noise_dbm, dtype=float) / 10.0)
    return np.asarray(signal_dbm) - 10.0 * np.log10(i_mw + n_mw)
