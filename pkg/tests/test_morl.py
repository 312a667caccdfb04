import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from genla.morl import toy
from genla.morl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from genla.morl.envelope import (Batch, TrainingError, Transition, envelope_target,
                                 finite_difference_grad, sample_preference, scalar_preference,
                                 td_loss_and_grad, td_step)
from genla.morl.network import Adam, QNetwork
from genla.morl.replay import ReplayBuffer
from oracles import envelope_target_bruteforce, random_batch, relative_error


# -- network --------------------------------------------------------------------

def test_zero_network_outputs_zero():
    net = QNetwork(6, 4, 2, (8,), params=np.zeros(QNetwork(6, 4, 2, (8,)).n_params))
    q = net.forward(np.ones((3, 6)), np.full((3, 2), 0.5))
    assert q.shape == (3, 4, 2) and np.all(q == 0.0)


def test_forward_deterministic():
    net = QNetwork(seed=3)
    s = np.random.default_rng(0).normal(size=(5, 30))
    w = np.full((5, 2), 0.5)
    assert np.array_equal(net(s, w), net(s, w))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_lipschitz(seed):
    rng = np.random.default_rng(seed)
    net = QNetwork(6, 3, 2, (16, 16), seed=seed % 1000)
    x, y = rng.normal(size=6), rng.normal(size=6)
    w = rng.dirichlet([1, 1])
    dq = np.linalg.norm(net(x[None], w[None]) - net(y[None], w[None]))
    assert dq <= net.lipschitz_bound() * np.linalg.norm(x - y) + 1e-9


def test_wrong_input_lengths():
    net = QNetwork(6, 3, 2, (4,))
    with pytest.raises(ValueError):
        net(np.zeros((1, 5)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        net(np.zeros((1, 6)), np.zeros((1, 3)))


def test_architecture_roundtrip():
    net = QNetwork(seed=1)
    clone = QNetwork.from_architecture(net.architecture, net.params)
    assert np.array_equal(clone.params, net.params)


# -- envelope target ----------------------------------------------------------------

class _TableNet:
    """Target network whose Q does not depend on state or preference."""

    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)
        self.n_actions = self.q.shape[0]

    def forward(self, states, omegas):
        return np.broadcast_to(self.q, (len(states),) + self.q.shape)


def _one(r, w, done=False, mask=None):
    return Batch(np.zeros((1, 2)), np.array([0]), np.array([r], float), np.zeros((1, 2)),
                 np.array([done]), np.array([w], float),
                 None if mask is None else np.array([mask]))


def test_envelope_terminal():
    y = envelope_target(_one((1, 0), (0.5, 0.5), True), _TableNet([[9, 9]]), 0.9, [[1, 0]])
    assert np.allclose(y, [[1, 0]])


def test_envelope_spec_example():
    net = _TableNet([[2, 0], [0, 3]])
    y = envelope_target(_one((1, 0), (1, 0)), net, 0.9, [[1, 0], [0, 1], [0.5, 0.5]])
    assert np.allclose(y, [[2.8, 0.0]])
    y = envelope_target(_one((1, 0), (0, 1)), net, 0.9, [[1, 0]])
    assert np.allclose(y, [[1.0, 2.7]])


def test_envelope_respects_mask():
    net = _TableNet([[2, 0], [0, 3]])
    y = envelope_target(_one((0, 0), (1, 0), mask=[False, True]), net, 0.5, [[1, 0]])
    assert np.allclose(y, [[0.0, 1.5]])


def test_envelope_rejects_bad_gamma():
    with pytest.raises(ValueError):
        envelope_target(_one((0, 0), (1, 0)), _TableNet([[1, 1]]), 1.0, [[1, 0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4), st.booleans())
def test_envelope_matches_bruteforce(seed, n_actions, k, double):
    rng = np.random.default_rng(seed)
    net = QNetwork(3, n_actions, 2, (8,), seed=seed % 997)
    sel = QNetwork(3, n_actions, 2, (8,), seed=seed % 991 + 1) if double else None
    batch = random_batch(rng, 6, 3, n_actions, 2)
    omegas = rng.dirichlet([1, 1], size=k)
    y = envelope_target(batch, net, 0.9, omegas, select_net=sel)
    assert np.allclose(y, envelope_target_bruteforce(batch, net, 0.9, omegas, sel))


def test_envelope_target_dominates_own_preference():
    # adding preferences to the search set can only raise w_b . y
    rng = np.random.default_rng(5)
    net = QNetwork(3, 4, 2, (8,), seed=2)
    batch = random_batch(rng, 50, 3, 4, 2, done_p=0.0)
    y_own = envelope_target(batch, net, 0.9, batch.omegas[:1])
    extra = np.vstack([batch.omegas[:1], rng.dirichlet([1, 1], size=8)])
    y_env = envelope_target(batch, net, 0.9, extra)
    proj = lambda y: np.einsum("bm,bm->b", batch.omegas, y)
    assert np.all(proj(y_env) >= proj(y_own) - 1e-12)


# -- TD step ---------------------------------------------------------------------------

def test_td_fixed_point():
    rng = np.random.default_rng(0)
    net = QNetwork(3, 4, 2, (8,), seed=0)
    batch = random_batch(rng, 16, 3, 4, 2)
    q = net(batch.states, batch.omegas)[np.arange(16), batch.actions]
    loss, grad, _ = td_loss_and_grad(net, batch, q)
    assert loss == 0.0 and np.all(grad == 0.0)


def test_gradient_single_transition():
    rng = np.random.default_rng(1)
    net = QNetwork(4, 3, 2, (6, 5), seed=1)
    batch = random_batch(rng, 1, 4, 3, 2)
    y = rng.normal(size=(1, 2))
    _, g, _ = td_loss_and_grad(net, batch, y)
    assert relative_error(g, finite_difference_grad(net, batch, y)) < 1e-4


def test_td_step_reduces_loss_and_priorities():
    rng = np.random.default_rng(2)
    net = QNetwork(3, 4, 2, (16,), seed=0)
    target = net.clone()
    batch = random_batch(rng, 32, 3, 4, 2, done_p=1.0)
    opt = Adam(net.n_params, lr=1e-2)
    first, prio = td_step(net, target, batch, [[0.5, 0.5]], 0.9, opt)
    assert prio.shape == (32,) and np.all(prio >= 1e-3)
    for _ in range(200):
        last, _ = td_step(net, target, batch, [[0.5, 0.5]], 0.9, opt)
    assert last < 0.5 * first


def test_td_step_non_finite():
    rng = np.random.default_rng(3)
    net = QNetwork(3, 4, 2, (8,), seed=0)
    batch = random_batch(rng, 4, 3, 4, 2)
    batch.rewards[0, 0] = np.nan
    with pytest.raises(TrainingError) as e:
        td_step(net, net.clone(), batch, [[1, 0]], 0.9, Adam(net.n_params))
    assert e.value.dump_path is not None and e.value.dump_path.exists()


# -- preferences -------------------------------------------------------------------------

def test_preference_degenerate_and_mean():
    rng = np.random.default_rng(0)
    assert np.all(sample_preference(rng, 1, 10) == 1.0)
    w = sample_preference(rng, 2, 100_000)
    assert abs(w[:, 0].mean() - 0.5) < 0.005
    assert np.allclose(w.sum(axis=1), 1.0) and np.all(w >= 0)


def test_preference_uniform_on_simplex():
    w = sample_preference(np.random.default_rng(1), 2, 20_000)
    assert stats.kstest(w[:, 0], "uniform").pvalue > 1e-3


def test_scalar_preference():
    assert np.allclose(scalar_preference(0.25), (0.25, 0.75))
    with pytest.raises(ValueError):
        scalar_preference(1.5)


# -- replay -------------------------------------------------------------------------------

def _t(i, priority=None):
    return Transition(np.full(3, i, float), i % 4, np.array([i, -i], float), np.zeros(3), False,
                      np.array([0.5, 0.5]), priority=priority, meta=(0, 0, 0, i, i))


def test_replay_uniform_when_equal():
    rb = ReplayBuffer(20, alpha=0.6, seed=0)
    rb.push_many([_t(i) for i in range(20)])
    counts = np.zeros(20)
    for _ in range(500):
        np.add.at(counts, rb.sample(20).indices, 1)
    assert counts.sum() == 10_000
    assert stats.chisquare(counts).pvalue > 1e-3


def test_replay_proportional():
    rb = ReplayBuffer(4, alpha=1.0, seed=1)
    rb.push_many([_t(i, p) for i, p in enumerate([1.0, 2.0, 3.0, 4.0])])
    counts = np.zeros(4)
    for _ in range(2500):
        np.add.at(counts, rb.sample(4).indices, 1)
    assert stats.chisquare(counts, np.array([1, 2, 3, 4]) / 10 * counts.sum()).pvalue > 1e-3


def test_replay_degenerate_priority():
    rb = ReplayBuffer(10, alpha=1.0, seed=2)
    rb.push_many([_t(i, 1.0 if i == 3 else 0.0) for i in range(10)])
    b = rb.sample(64)
    assert np.all(b.indices == 3)
    assert np.allclose(b.weights, 1.0)


def test_replay_fifo_eviction():
    rb = ReplayBuffer(10, seed=0)
    for i in range(15):
        rb.push(_t(i))
    assert len(rb) == 10
    assert sorted(rb.data["meta"][:, 3].tolist()) == list(range(5, 15))


def test_replay_empty_and_bad_priority():
    rb = ReplayBuffer(10)
    with pytest.raises(ValueError):
        rb.sample(4)
    with pytest.raises(ValueError):
        rb.push(_t(0, -1.0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=30), st.floats(0.0, 1.0))
def test_replay_weights_normalized(prios, beta):
    rb = ReplayBuffer(64, alpha=0.6, seed=0)
    rb.push_many([_t(i, p) for i, p in enumerate(prios)])
    b = rb.sample(16, beta)
    assert np.all(b.weights > 0) and b.weights.max() == pytest.approx(1.0)
    assert np.all(b.indices < len(prios))
    assert np.isclose(rb.probabilities().sum(), 1.0)


# -- checkpoints --------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    net = QNetwork(seed=4)
    net.version = 17
    target = QNetwork(seed=5)
    opt = Adam(net.n_params, lr=3e-4)
    opt.step(net.params, np.ones(net.n_params))
    path = save_checkpoint(tmp_path / "c.bin", net, opt, target, 1, {"note": "x"})
    net2, opt2, target2, header = load_checkpoint(path, expect_schema=1)
    assert np.array_equal(net2.params, net.params) and net2.version == 17
    assert np.array_equal(target2.params, target.params)
    assert np.array_equal(opt2.m, opt.m) and np.array_equal(opt2.v, opt.v) and opt2.t == 1
    assert header["metadata"] == {"note": "x"}


def test_checkpoint_errors(tmp_path):
    net = QNetwork(3, 2, 2, (4,))
    path = save_checkpoint(tmp_path / "c.bin", net)
    with pytest.raises(CheckpointError, match="schema"):
        load_checkpoint(path, expect_schema=2)
    data = path.read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "m.bin")


# -- toy MDP oracle ----------------------------------------------------------------------------

def test_toy_oracle_has_distinct_policies():
    P, _ = toy.toy_mdp()
    assert np.allclose(P.sum(axis=2), 1.0)
    pols = {tuple(toy.oracle_policy((w, 1 - w))) for w in np.linspace(0, 1, 11)}
    assert len(pols) >= 4
    assert toy.min_action_gap() > 0.1


def test_value_iteration_bellman_fixed_point():
    P, R = toy.toy_mdp()
    w = np.array([0.3, 0.7])
    Q = toy.value_iteration(P, R, w)
    assert np.allclose(Q, R @ w + toy.GAMMA * P @ Q.max(axis=1), atol=1e-9)
