import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from genla import linkadapt as la
from genla import scenario as sc
from genla.simcore import Action, Simulator, phy
from genla.simcore.sim import TtiFeedback


def _ctx(**kw):
    base = dict(serving_site_type="MIMO", bandwidth_mhz=50, power_w=50, radius_m=300,
                neighbor_site_types=("mMIMO", None), num_antennas=4, receiver_type="type1",
                cqi=15, cqi_age=3, coupling_loss_db=110.0)
    base.update(kw)
    return la.UEContext(**base)


def test_state_dimensions_and_layout():
    x = la.context_state(_ctx())
    assert x.shape == (la.STATE_DIM,)
    layout = la.state_layout()
    assert layout["schema_version"] == la.STATE_SCHEMA_VERSION


def test_cqi15_normalizes_to_one():
    x = la.context_state(_ctx())
    assert x[la.STATIC_DIM] == 1.0


def test_no_neighbours_clears_flags():
    x = la.context_state(_ctx(neighbor_site_types=()))
    assert np.all(x[5:11] == 0.0)
    y = la.context_state(_ctx(neighbor_site_types=("mMIMO", "MIMO")))
    assert y[9] == y[10] == 1.0 and y[5:9].sum() == 2.0


def test_identical_context_identical_state():
    assert np.array_equal(la.context_state(_ctx()), la.context_state(_ctx()))


def test_state_builder_matches_context():
    sim = Simulator(sc.benchmark_scenario("mMIMO-Mixed", 0, 50))
    builder = la.StateBuilder(sim)
    x = builder(np.arange(sim.n_ues))
    assert x.shape == (sim.n_ues, la.STATE_DIM)
    assert np.all(np.isfinite(x))
    u = 7
    cell = sim.cell_configs[sim.serving[u]]
    ctx = _ctx(serving_site_type="mMIMO", bandwidth_mhz=cell.bandwidth_mhz,
               power_w=cell.dl_tx_power_w, radius_m=cell.cell_radius_m,
               neighbor_site_types=tuple(sim.cell_site[k].site_type if k >= 0 else None
                                         for k in sim.neighbors[u]),
               num_antennas=sim.ue_configs[u].num_antennas,
               receiver_type=sim.ue_configs[u].receiver_type, cqi=sim.cqi[u],
               cqi_age=sim.cqi_age(u), coupling_loss_db=sim.coupling_loss_db[u],
               buffer_bits=sim.buffer_bits[u], ack_ratio=1.0, ttis_since_grant=200,
               interference_activity=sim.activity_est[u])
    assert np.allclose(x[u], la.context_state(ctx))


# -- OLLA ---------------------------------------------------------------------

def test_select_mcs_threshold_rule():
    assert la.select_mcs(phy.MCS_THRESHOLD_DB[10]) == 10
    assert la.select_mcs(-100.0) == 0


def test_olla_offset_clamps_low():
    olla = la.OllaState.create(offset_db=-100.0)
    assert la.olla_select(olla, 15) == 0


def test_olla_offset_crossing_one_threshold():
    cqi = 8
    s = phy.cqi_to_sinr(cqi)
    base = la.olla_select(la.OllaState.create(), cqi)
    step = phy.MCS_THRESHOLD_DB[base + 1] - s
    assert la.olla_select(la.OllaState.create(offset_db=step + 1e-6), cqi) == base + 1


def test_olla_update_examples():
    olla = la.OllaState.create(delta_up_db=0.01, target_bler=0.1)
    assert olla.delta_down_db == pytest.approx(0.09)
    for k in range(10):
        olla = la.olla_update(olla, k != 9)
    assert olla.offset_db == pytest.approx(0.0, abs=1e-12)
    top = la.OllaState.create(offset_db=10.0)
    assert la.olla_update(top, True).offset_db == 10.0


@settings(max_examples=100)
@given(st.lists(st.booleans(), max_size=400), st.floats(0.001, 1.0))
def test_olla_offset_bounded(acks, up):
    olla = la.OllaState.create(delta_up_db=up)
    for a in acks:
        olla = la.olla_update(olla, a)
        assert -10.0 <= olla.offset_db <= 10.0


def test_olla_converges_to_target():
    from genla.evaluation import run_policy
    cfg = sc.benchmark_scenario("MIMO-FB", 0, 4000)
    rep, _ = run_policy(cfg, "olla")
    n = sum(c.first_tx_count for c in rep.cells)
    bler = sum(c.bler_first_tx * c.first_tx_count for c in rep.cells) / n
    assert bler == pytest.approx(0.10, abs=0.02)


# -- masks ----------------------------------------------------------------------

def test_mask_counts():
    assert (~la.mask_actions(2, True, 2)).sum() == 56
    assert la.mask_actions(2, False, 2).sum() == 28
    assert la.mask_actions(4, True, 3).all()
    with pytest.raises(ValueError):
        la.mask_actions(2, True, 3)


@settings(max_examples=30)
@given(st.sampled_from([2, 4]), st.booleans(), st.integers(1, 4))
def test_mask_matrix_matches_scalar(max_rank, rc, rep):
    rep = min(rep, max_rank)
    m = la.mask_matrix(np.array([max_rank]), rc, np.array([rep]))[0]
    assert np.array_equal(m, la.mask_actions(max_rank, rc, rep))
    ranks = la.action_ranks()[m]
    assert ranks.max() <= max_rank


def test_action_index_roundtrip():
    for i in range(la.NUM_ACTIONS):
        assert Action.from_index(i).index == i
    assert la.NUM_ACTIONS == 112


# -- reward -----------------------------------------------------------------------

def _fb(ack, bits, prb_ttis, dropped=False):
    return TtiFeedback(0, ack, True, bits, prb_ttis, 0, dropped=dropped)


def test_reward_examples():
    n = 100
    tmax = phy.transport_block_size(27, 4, n)
    assert la.compute_reward(_fb(True, tmax, n), n) == (1.0, -1.0)
    assert la.compute_reward(_fb(False, 0, 5 * n, True), n) == (0.0, -5.0)
    assert la.compute_reward(_fb(True, tmax / 2, n / 2), n) == (0.5, -0.5)
    with pytest.raises(ValueError):
        la.compute_reward(_fb(False, 0, n), n)


# -- RL selection ------------------------------------------------------------------

def _const_model(q):
    q = np.asarray(q, dtype=float)
    return lambda s, w: np.broadcast_to(q, (len(s),) + q.shape)


def test_rl_select_preference_flip():
    q = np.zeros((la.NUM_ACTIONS, 2))
    q[0], q[1] = (2, 0), (0, 3)
    mask = np.zeros(la.NUM_ACTIONS, bool)
    mask[:2] = True
    rng = np.random.default_rng(0)
    s = np.zeros(la.STATE_DIM)
    assert la.rl_select(s, _const_model(q), np.array([1.0, 0.0]), 0.0, mask, rng).index == 0
    assert la.rl_select(s, _const_model(q), np.array([0.0, 1.0]), 0.0, mask, rng).index == 1


def test_rl_select_uniform_exploration():
    mask = la.mask_actions(2, False, 2)
    allowed = np.flatnonzero(mask)
    rng = np.random.default_rng(1)
    q = np.zeros((la.NUM_ACTIONS, 2))
    draws = [la.rl_select(np.zeros(la.STATE_DIM), _const_model(q), np.array([0.5, 0.5]), 1.0,
                          mask, rng).index for _ in range(10_000)]
    counts = np.array([draws.count(a) for a in allowed])
    assert counts.sum() == 10_000
    assert stats.chisquare(counts).pvalue > 1e-3


def test_rl_select_all_masked():
    with pytest.raises(la.AllMaskedError):
        la.rl_select(np.zeros(la.STATE_DIM), _const_model(np.zeros((112, 2))),
                     np.array([1.0, 0.0]), 0.0, np.zeros(112, bool), np.random.default_rng(0))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_greedy_invariant_to_preference_scale(seed, scale):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(5, la.NUM_ACTIONS, 2))
    w = rng.dirichlet([1, 1], size=5)
    mask = rng.random((5, la.NUM_ACTIONS)) < 0.5
    mask[:, 0] = True
    a = la.greedy_index(q, w, mask)
    assert np.array_equal(a, la.greedy_index(q, w * scale, mask))
    assert mask[np.arange(5), a].all()


def test_rl_select_batch_respects_masks():
    rng = np.random.default_rng(3)
    masks = la.mask_matrix(np.array([2, 4, 2]), False, np.array([1, 3, 2]))
    q = rng.normal(size=(la.NUM_ACTIONS, 2))
    for eps in (0.0, 1.0):
        idx = la.rl_select_batch(np.zeros((3, la.STATE_DIM)), _const_model(q),
                                 np.full((3, 2), 0.5), eps, masks, rng)
        assert masks[np.arange(3), idx].all()
