import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genla import scenario as sc


def test_sample_values_come_from_training_space():
    cfg = sc.sample_scenario(7)
    for cell in cfg.cells:
        assert cell.bandwidth_mhz in {20, 40, 50, 80, 100}
    per_cell = {}
    for ue in cfg.ues:
        if ue.traffic == "FullBuffer":
            per_cell[ue.serving_cell_id] = per_cell.get(ue.serving_cell_id, 0) + 1
    assert set(per_cell.values()) <= {1, 5, 10}
    assert len(per_cell) == 9


def test_sample_is_deterministic():
    assert sc.dumps(sc.sample_scenario(7)) == sc.dumps(sc.sample_scenario(7))
    assert sc.sample_scenario(7) == sc.sample_scenario(7)


def test_mmimo_frequency():
    # binomial 3 sigma on 10k draws is 0.015; site types are drawn before any
    # UE, so a one-UE space keeps their distribution and is much faster
    space = sc.RandomizationSpace(num_fb_ues=(1,), num_mbb_ues=(0,))
    draws = [sc.sample_scenario(s, space).sites[0].site_type == "mMIMO" for s in range(10_000)]
    assert abs(np.mean(draws) - 0.5) < 0.015


def test_triple_pairing():
    for seed in range(50):
        for cell in sc.sample_scenario(seed).cells:
            k = sc.BANDWIDTHS_MHZ.index(cell.bandwidth_mhz)
            assert cell.num_subbands == sc.NUM_SUBBANDS[k]
            assert cell.dl_tx_power_w == sc.DL_TX_POWERS_W[k]


def test_empty_randomization_set():
    with pytest.raises(sc.ScenarioError, match="empty"):
        sc.sample_scenario(0, sc.RandomizationSpace(cell_radii_m=()))


def test_restricted_space_is_respected():
    space = sc.RandomizationSpace(site_types=("MIMO",), num_mbb_ues=(0,), cell_radii_m=(166,))
    cfg = sc.sample_scenario(3, space)
    assert all(s.site_type == "MIMO" for s in cfg.sites)
    assert all(u.traffic == "FullBuffer" for u in cfg.ues)
    assert {c.cell_radius_m for c in cfg.cells} == {166}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_generated_scenarios_validate(seed):
    assert sc.validate(sc.sample_scenario(seed)) == []


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ues_inside_their_sector(seed):
    cfg = sc.sample_scenario(seed)
    for ue in cfg.ues:
        site = cfg.site_of(ue.serving_cell_id)
        cell = cfg.cell(ue.serving_cell_id)
        d = np.hypot(ue.position[0] - site.location[0], ue.position[1] - site.location[1])
        assert sc.MIN_UE_DISTANCE_M - 1e-6 <= d <= cell.cell_radius_m + 1e-6
        ang = np.degrees(np.arctan2(ue.position[1] - site.location[1],
                                    ue.position[0] - site.location[0])) - cell.azimuth
        assert abs((ang + 180) % 360 - 180) <= 60 + 1e-6


@pytest.mark.parametrize("bid", sc.BENCHMARK_IDS)
def test_benchmarks_validate(bid):
    assert sc.validate(sc.benchmark_scenario(bid, 1)) == []


def test_mimo_fb_benchmark():
    for seed in (0, 5):
        cfg = sc.benchmark_scenario("MIMO-FB", seed)
        assert len(cfg.sites) == 1 and len(cfg.cells) == 3
        assert all(s.site_type == "MIMO" for s in cfg.sites)
        assert all(u.traffic == "FullBuffer" and u.receiver_type == "type0" for u in cfg.ues)
        assert cfg.indoor_probability == 0.8


def test_mmimo_mixed_benchmark():
    cfg = sc.benchmark_scenario("mMIMO-Mixed", 2)
    assert len(cfg.sites) == 3 and len(cfg.cells) == 9
    assert all(s.site_type == "mMIMO" for s in cfg.sites)
    assert {u.traffic for u in cfg.ues} == {"FullBuffer", "MBB"}


def test_hetnet_has_mixed_traffic_per_cell():
    cfg = sc.benchmark_scenario("HetNet-Mixed", 4)
    for cell in cfg.cells:
        kinds = {u.traffic for u in cfg.ues if u.serving_cell_id == cell.cell_id}
        assert kinds == {"FullBuffer", "MBB"}


def test_benchmark_deterministic_and_unknown():
    assert sc.benchmark_scenario("mMIMO-MBB", 3) == sc.benchmark_scenario("mMIMO-MBB", 3)
    with pytest.raises(sc.ScenarioError):
        sc.benchmark_scenario("LTE-FB", 0)


def _replace_cell(cfg, **changes):
    site = cfg.sites[0]
    cells = (dataclasses.replace(site.cells[0], **changes),) + site.cells[1:]
    sites = (dataclasses.replace(site, cells=cells),) + cfg.sites[1:]
    return dataclasses.replace(cfg, sites=sites)


def test_validate_unpaired_bandwidth():
    cfg = _replace_cell(sc.benchmark_scenario("MIMO-FB", 0), bandwidth_mhz=20, num_subbands=273)
    errors = sc.validate(cfg)
    assert len(errors) == 1 and "unpaired bandwidth/subband" in errors[0]


def test_validate_rank_and_dangling_cell():
    cfg = sc.benchmark_scenario("MIMO-FB", 0)
    ues = list(cfg.ues)
    ues[0] = dataclasses.replace(ues[0], num_antennas=2, max_rank=4)
    ues[1] = dataclasses.replace(ues[1], serving_cell_id=99)
    errors = sc.validate(dataclasses.replace(cfg, ues=tuple(ues)))
    assert any("max_rank 4 != num_antennas 2" in e for e in errors)
    assert any("dangling" in e for e in errors)
    assert len(errors) == 2


def test_serialization_roundtrip(tmp_path):
    cfg = sc.benchmark_scenario("HetNet-Mixed", 9)
    sc.save(cfg, tmp_path / "s.json")
    assert sc.load(tmp_path / "s.json") == cfg


def test_serialization_requires_schema_version():
    d = sc.to_dict(sc.sample_scenario(1))
    del d["schema_version"]
    with pytest.raises(sc.ScenarioError, match="schema_version"):
        sc.from_dict(d)
