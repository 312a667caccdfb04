"""Network scenarios: domain-randomized training deployments and fixed benchmarks.

A :class:`ScenarioConfig` is a plain, immutable description of one network
instance (sites, cells, UEs). It is a pure function of its seed, so any number
of workers can draw scenarios in parallel without coordination.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

CARRIER_FREQ_GHZ = 3.5
DUPLEXING = "TDD"
DEFAULT_DURATION_TTIS = 3000

SITE_TYPES = ("MIMO", "mMIMO")
ANTENNA_ARRAYS = {"MIMO": ("1x2x2", 4), "mMIMO": ("8x4x2", 64)}
CELL_RADII_M = (166, 300, 600, 900, 1200)
BANDWIDTHS_MHZ = (20, 40, 50, 80, 100)
NUM_SUBBANDS = (20, 106, 133, 217, 273)
DL_TX_POWERS_W = (20, 40, 50, 80, 100)
UE_ANTENNAS = (2, 4)
TRAFFIC_TYPES = ("FullBuffer", "MBB")
NUM_FB_UES = (1, 5, 10)
NUM_MBB_UES = (0, 10, 25, 50, 100, 200, 300)
FB_SPEEDS_MPS = (0.67, 10.0, 15.0, 30.0)
MBB_SPEEDS_MPS = (0.67, 1.5, 3.0)
RECEIVER_TYPES = ("type0", "type1", "type2", "type3")
INDOOR_PROBABILITIES = (0.2, 0.4, 0.8)

SECTORS_PER_SITE = 3
SITES_PER_SCENARIO = 3
ISD_FACTOR = 3.0
MIN_UE_DISTANCE_M = 10.0

BENCHMARK_IDS = ("MIMO-FB", "mMIMO-FB", "mMIMO-MBB", "mMIMO-Mixed", "HetNet-Mixed")


class ScenarioError(ValueError):
    """Raised for an invalid randomization space or unknown benchmark."""


@dataclass(frozen=True)
class CellConfig:
    cell_id: int
    azimuth: float
    cell_radius_m: int
    bandwidth_mhz: int
    num_subbands: int
    dl_tx_power_w: int


@dataclass(frozen=True)
class SiteConfig:
    site_id: int
    location: tuple[float, float]
    site_type: str
    cells: tuple[CellConfig, ...]

    @property
    def antenna_array(self):
        return ANTENNA_ARRAYS[self.site_type][0]

    @property
    def num_antenna_elements(self):
        return ANTENNA_ARRAYS[self.site_type][1]


@dataclass(frozen=True)
class UEConfig:
    ue_id: int
    serving_cell_id: int
    traffic: str
    num_antennas: int
    max_rank: int
    speed_mps: float
    receiver_type: str
    indoor: bool
    position: tuple[float, float]


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    sites: tuple[SiteConfig, ...]
    ues: tuple[UEConfig, ...]
    duration_ttis: int = DEFAULT_DURATION_TTIS
    carrier_freq_ghz: float = CARRIER_FREQ_GHZ
    duplexing: str = DUPLEXING
    indoor_probability: float = 0.8
    name: str = "random"
    schema_version: int = SCHEMA_VERSION

    @property
    def cells(self):
        return [c for s in self.sites for c in s.cells]

    def cell(self, cell_id):
        for s in self.sites:
            for c in s.cells:
                if c.cell_id == cell_id:
                    return c
        raise KeyError(cell_id)

    def site_of(self, cell_id):
        for s in self.sites:
            if any(c.cell_id == cell_id for c in s.cells):
                return s
        raise KeyError(cell_id)

    def with_duration(self, duration_ttis):
        return replace(self, duration_ttis=int(duration_ttis))


@dataclass(frozen=True)
class RandomizationSpace:
    """Value sets the randomized generator draws from (defaults: full training space)."""

    site_types: tuple = SITE_TYPES
    cell_radii_m: tuple = CELL_RADII_M
    # one index selects a (bandwidth, sub-bands, power) triple
    bandwidth_index: tuple = tuple(range(len(BANDWIDTHS_MHZ)))
    num_fb_ues: tuple = NUM_FB_UES
    num_mbb_ues: tuple = NUM_MBB_UES
    fb_speeds_mps: tuple = FB_SPEEDS_MPS
    mbb_speeds_mps: tuple = MBB_SPEEDS_MPS
    ue_antennas: tuple = UE_ANTENNAS
    receiver_types: tuple = RECEIVER_TYPES
    indoor_probabilities: tuple = INDOOR_PROBABILITIES
    duration_ttis: int = DEFAULT_DURATION_TTIS

    def check(self):
        for name, values in asdict(self).items():
            if name == "duration_ttis":
                continue
            if len(values) == 0:
                raise ScenarioError(f"randomization set '{name}' is empty")
        if self.duration_ttis <= 0:
            raise ScenarioError("duration_ttis must be positive")
        bad = [i for i in self.bandwidth_index if not 0 <= i < len(BANDWIDTHS_MHZ)]
        if bad:
            raise ScenarioError(f"bandwidth_index out of range: {bad}")


def _site_locations(rng, isd):
    rot = rng.uniform(0.0, 2.0 * math.pi)
    r = isd / math.sqrt(3.0)
    return [
        (r * math.cos(rot + 2.0 * math.pi * k / 3), r * math.sin(rot + 2.0 * math.pi * k / 3))
        for k in range(SITES_PER_SCENARIO)
    ]


def _make_cells(site_id, radius, bw_index, first_cell_id):
    return tuple(
        CellConfig(
            cell_id=first_cell_id + k,
            azimuth=float(120.0 * k),
            cell_radius_m=int(radius),
            bandwidth_mhz=BANDWIDTHS_MHZ[bw_index],
            num_subbands=NUM_SUBBANDS[bw_index],
            dl_tx_power_w=DL_TX_POWERS_W[bw_index],
        )
        for k in range(SECTORS_PER_SITE)
    )


def _drop_positions(rng, n, site_xy, cell, min_distance=MIN_UE_DISTANCE_M):
    """Uniform-in-area positions inside the 120 degree sector wedge of a cell."""
    r2 = rng.uniform(min_distance**2, float(cell.cell_radius_m) ** 2, size=n)
    r = np.sqrt(r2)
    ang = np.deg2rad(cell.azimuth + rng.uniform(-60.0, 60.0, size=n))
    x = site_xy[0] + r * np.cos(ang)
    y = site_xy[1] + r * np.sin(ang)
    return list(zip(x.tolist(), y.tolist()))


def _make_ues(rng, site, cell, n_fb, n_mbb, indoor_p, space, first_ue_id, fixed=None):
    n = n_fb + n_mbb
    if n == 0:
        return []
    fixed = fixed or {}
    traffic = ["FullBuffer"] * n_fb + ["MBB"] * n_mbb
    ants = rng.choice(space.ue_antennas, size=n)
    fb_speed = rng.choice(space.fb_speeds_mps, size=n)
    mbb_speed = rng.choice(space.mbb_speeds_mps, size=n)
    rx = rng.integers(0, len(space.receiver_types), size=n)
    indoor = rng.random(n) < indoor_p
    pos = _drop_positions(rng, n, site.location, cell)
    ues = []
    for i in range(n):
        na = int(fixed.get("num_antennas", ants[i]))
        speed = fb_speed[i] if traffic[i] == "FullBuffer" else mbb_speed[i]
        speed = fixed.get("speed_fb" if traffic[i] == "FullBuffer" else "speed_mbb", speed)
        ues.append(
            UEConfig(
                ue_id=first_ue_id + i,
                serving_cell_id=cell.cell_id,
                traffic=traffic[i],
                num_antennas=na,
                max_rank=na,
                speed_mps=float(speed),
                receiver_type=fixed.get("receiver_type", space.receiver_types[rx[i]]),
                indoor=bool(indoor[i]),
                position=(float(pos[i][0]), float(pos[i][1])),
            )
        )
    return ues


def sample_scenario(seed, space=None):
    """Draw a domain-randomized three-site, nine-cell training scenario.

    Site type and the (bandwidth, sub-bands, power) triple are drawn per site,
    the cell radius and indoor probability per scenario, UE counts per cell and
    UE attributes per UE, all uniformly from ``space``.
    """
    space = space or RandomizationSpace()
    space.check()
    rng = np.random.default_rng(seed)
    radius = int(rng.choice(space.cell_radii_m))
    indoor_p = float(rng.choice(space.indoor_probabilities))
    locations = _site_locations(rng, ISD_FACTOR * radius)
    sites = []
    for s in range(SITES_PER_SCENARIO):
        site_type = str(rng.choice(space.site_types))
        bw_index = int(rng.choice(space.bandwidth_index))
        cells = _make_cells(s, radius, bw_index, SECTORS_PER_SITE * s)
        sites.append(SiteConfig(s, locations[s], site_type, cells))
    ues = []
    for site in sites:
        for cell in site.cells:
            n_fb = int(rng.choice(space.num_fb_ues))
            n_mbb = int(rng.choice(space.num_mbb_ues))
            ues += _make_ues(rng, site, cell, n_fb, n_mbb, indoor_p, space, len(ues))
    return ScenarioConfig(
        seed=int(seed),
        sites=tuple(sites),
        ues=tuple(ues),
        duration_ttis=space.duration_ttis,
        indoor_probability=indoor_p,
    )


# Deployment choices for the fixed benchmarks; only UE positions, indoor
# draws, traffic arrivals and fading depend on the seed.
BENCHMARK_CELL = {"radius": 300, "bandwidth_index": 2}
BENCHMARK_FB_UES_PER_CELL = 5
BENCHMARK_MBB_UES_PER_CELL = 25
BENCHMARK_INDOOR_P = 0.8
BENCHMARK_UE_FIXED = {"receiver_type": "type0", "speed_fb": 10.0, "speed_mbb": 1.5}

BENCHMARKS = {
    # id: (sites, site type, traffic, homogeneous UEs)
    "MIMO-FB": (1, "MIMO", "FB", True),
    "mMIMO-FB": (1, "mMIMO", "FB", True),
    "mMIMO-MBB": (1, "mMIMO", "MBB", True),
    "mMIMO-Mixed": (3, "mMIMO", "Mixed", True),
    "HetNet-Mixed": (3, None, "Mixed", False),
}


def benchmark_scenario(benchmark_id, seed, duration_ttis=DEFAULT_DURATION_TTIS):
    """Fixed benchmark deployment.

    ``HetNet-Mixed`` is a randomized scenario restricted to mixed traffic
    (at least one FB and one MBB UE per cell).
    """
    if benchmark_id not in BENCHMARKS:
        raise ScenarioError(f"unknown benchmark '{benchmark_id}', expected one of {BENCHMARK_IDS}")
    n_sites, site_type, traffic, homogeneous = BENCHMARKS[benchmark_id]
    if not homogeneous:
        space = RandomizationSpace(
            num_mbb_ues=tuple(v for v in NUM_MBB_UES if v > 0), duration_ttis=duration_ttis
        )
        return replace(sample_scenario(seed, space), name=benchmark_id)

    rng = np.random.default_rng(seed)
    radius = BENCHMARK_CELL["radius"]
    bw_index = BENCHMARK_CELL["bandwidth_index"]
    if n_sites == 1:
        locations = [(0.0, 0.0)]
    else:
        locations = _site_locations(np.random.default_rng(0), ISD_FACTOR * radius)
    sites = tuple(
        SiteConfig(s, locations[s], site_type, _make_cells(s, radius, bw_index, SECTORS_PER_SITE * s))
        for s in range(n_sites)
    )
    n_fb = BENCHMARK_FB_UES_PER_CELL if traffic in ("FB", "Mixed") else 0
    n_mbb = BENCHMARK_MBB_UES_PER_CELL if traffic in ("MBB", "Mixed") else 0
    space = RandomizationSpace()
    ues = []
    for site in sites:
        for cell in site.cells:
            ues += _make_ues(
                rng, site, cell, n_fb, n_mbb, BENCHMARK_INDOOR_P, space, len(ues), BENCHMARK_UE_FIXED
            )
    return ScenarioConfig(
        seed=int(seed),
        sites=sites,
        ues=tuple(ues),
        duration_ttis=int(duration_ttis),
        indoor_probability=BENCHMARK_INDOOR_P,
        name=benchmark_id,
    )


def validate(config):
    """Return every invariant violation of ``config``; an empty list means valid."""
    errors = []
    if not config.sites:
        errors.append("scenario has no sites")
    if config.duration_ttis <= 0:
        errors.append("duration_ttis must be positive")
    if config.schema_version != SCHEMA_VERSION:
        errors.append(f"unsupported schema_version {config.schema_version}")
    cell_ids = set()
    for site in config.sites:
        if site.site_type not in SITE_TYPES:
            errors.append(f"site {site.site_id}: unknown site_type '{site.site_type}'")
        if len(site.cells) != SECTORS_PER_SITE:
            errors.append(f"site {site.site_id}: expected {SECTORS_PER_SITE} cells, has {len(site.cells)}")
        for cell in site.cells:
            if cell.cell_id in cell_ids:
                errors.append(f"cell {cell.cell_id}: duplicate cell id")
            cell_ids.add(cell.cell_id)
            if cell.cell_radius_m not in CELL_RADII_M:
                errors.append(f"cell {cell.cell_id}: cell radius {cell.cell_radius_m} not allowed")
            if cell.bandwidth_mhz not in BANDWIDTHS_MHZ:
                errors.append(f"cell {cell.cell_id}: bandwidth {cell.bandwidth_mhz} MHz not allowed")
            elif NUM_SUBBANDS[BANDWIDTHS_MHZ.index(cell.bandwidth_mhz)] != cell.num_subbands:
                errors.append(
                    f"cell {cell.cell_id}: unpaired bandwidth/subband "
                    f"({cell.bandwidth_mhz} MHz, {cell.num_subbands} sub-bands)"
                )
            if cell.dl_tx_power_w <= 0:
                errors.append(f"cell {cell.cell_id}: non-positive DL TX power")
    for ue in config.ues:
        if ue.serving_cell_id not in cell_ids:
            errors.append(f"ue {ue.ue_id}: dangling serving cell {ue.serving_cell_id}")
        if ue.num_antennas not in UE_ANTENNAS:
            errors.append(f"ue {ue.ue_id}: num_antennas {ue.num_antennas} not allowed")
        if ue.max_rank != ue.num_antennas:
            errors.append(f"ue {ue.ue_id}: max_rank {ue.max_rank} != num_antennas {ue.num_antennas}")
        if ue.traffic not in TRAFFIC_TYPES:
            errors.append(f"ue {ue.ue_id}: unknown traffic '{ue.traffic}'")
        elif ue.traffic == "FullBuffer" and ue.speed_mps not in FB_SPEEDS_MPS:
            errors.append(f"ue {ue.ue_id}: FB speed {ue.speed_mps} not allowed")
        elif ue.traffic == "MBB" and ue.speed_mps not in MBB_SPEEDS_MPS:
            errors.append(f"ue {ue.ue_id}: MBB speed {ue.speed_mps} not allowed")
        if ue.receiver_type not in RECEIVER_TYPES:
            errors.append(f"ue {ue.ue_id}: unknown receiver type '{ue.receiver_type}'")
    return errors


# -- serialization ---------------------------------------------------------

def to_dict(config):
    return asdict(config)


def from_dict(data):
    if "schema_version" not in data:
        raise ScenarioError("scenario document lacks mandatory 'schema_version'")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema_version {data['schema_version']}")
    sites = tuple(
        SiteConfig(
            site_id=s["site_id"],
            location=tuple(s["location"]),
            site_type=s["site_type"],
            cells=tuple(CellConfig(**c) for c in s["cells"]),
        )
        for s in data["sites"]
    )
    ues = tuple(UEConfig(**{**u, "position": tuple(u["position"])}) for u in data["ues"])
    fields = {k: v for k, v in data.items() if k not in ("sites", "ues")}
    return ScenarioConfig(sites=sites, ues=ues, **fields)


def dumps(config):
    """Serialize to the human-readable JSON scenario document."""
    return json.dumps(to_dict(config), indent=1, sort_keys=True)


def loads(text):
    return from_dict(json.loads(text))


def save(config, path):
    Path(path).write_text(dumps(config))


def load(path):
    return loads(Path(path).read_text())
