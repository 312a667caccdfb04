"""A small 5-state, 2-action, 2-objective MDP with a scalarized value-iteration
oracle, used to check that envelope Q-learning recovers the optimal policy
for every preference.

In state ``s`` the "push" action (1) pays ``(X[s], 0)`` and moves along the
ring, the "hold" action (0) pays ``(0, Y[s])`` and stays put with probability
0.7.  States switch from hold to push at different preferences, giving five
distinct optimal policies on the grid ``w in {0, 0.1, ..., 1}``.
"""

from __future__ import annotations

import numpy as np

from ..perf import tune_allocator
from .envelope import Batch, Transition, sample_preference, td_step
from .network import Adam, QNetwork
from .replay import ReplayBuffer

N_STATES = 5
N_ACTIONS = 2
GAMMA = 0.9
HOLD_STAY = 0.7

# chosen so that five distinct greedy policies appear on the 0.1 preference grid
# with a scalarized action gap of at least 0.14 everywhere
X = np.array([0.0, 3.4, 3.4, 3.3, 3.2])
Y = np.array([2.9, 2.5, 3.1, 0.6, 3.8])


def toy_mdp():
    """Returns ``(P, R)`` with ``P[s, a, s']`` and ``R[s, a, k]``."""
    P = np.zeros((N_STATES, N_ACTIONS, N_STATES))
    R = np.zeros((N_STATES, N_ACTIONS, 2))
    for s in range(N_STATES):
        P[s, 0, s] = HOLD_STAY
        P[s, 0, (s + 1) % N_STATES] += 1.0 - HOLD_STAY
        P[s, 1, (s + 1) % N_STATES] = 1.0
        R[s, 1] = (X[s], 0.0)
        R[s, 0] = (0.0, Y[s])
    return P, R


def value_iteration(P, R, omega, gamma=GAMMA, tol=1e-12, max_iter=100_000):
    """Optimal scalarized Q-values ``Q[s, a]`` for preference ``omega``."""
    r = R @ np.asarray(omega, dtype=float)
    V = np.zeros(P.shape[0])
    for _ in range(max_iter):
        Q = r + gamma * P @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            break
        V = V_new
    return r + gamma * P @ V


def oracle_policy(omega, gamma=GAMMA):
    P, R = toy_mdp()
    return value_iteration(P, R, omega, gamma).argmax(axis=1)


def min_action_gap(weights=np.linspace(0, 1, 11), gamma=GAMMA):
    """Smallest scalarized Q-value gap between the two actions over states and ``weights``."""
    P, R = toy_mdp()
    return min(np.abs(np.diff(value_iteration(P, R, (w, 1 - w), gamma), axis=1)).min()
               for w in weights)


def one_hot(states):
    return np.eye(N_STATES)[np.asarray(states)]


def collect(rng, n):
    """``n`` uniformly random (state, action) transitions with per-sample preferences."""
    P, R = toy_mdp()
    s = rng.integers(0, N_STATES, n)
    a = rng.integers(0, N_ACTIONS, n)
    cum = P[s, a].cumsum(axis=1)
    s2 = (rng.random(n)[:, None] > cum).sum(axis=1)
    return s, a, R[s, a], s2, sample_preference(rng, 2, n)


def _fill(s, a, r, s2, w, seed):
    states, next_states = one_hot(s), one_hot(s2)
    replay = ReplayBuffer(len(s), alpha=0.6, seed=seed)
    replay.push_many([Transition(states[i], int(a[i]), r[i], next_states[i], False, w[i])
                      for i in range(len(s))])
    return replay


def toy_replay(n=50_000, seed=0):
    """Prioritized replay buffer filled with ``n`` random toy transitions."""
    return _fill(*collect(np.random.default_rng(seed), n), seed)


def train_toy(steps=20_000, seed=0, batch_size=256, n_omega=8, gamma=GAMMA, lr=1e-3,
              target_sync=500, hidden=(64, 64), n_transitions=50_000, prioritized=True):
    """Envelope Q-learning on the toy MDP from a fixed random dataset.

    Returns the trained network.
    """
    tune_allocator()
    rng = np.random.default_rng(seed)
    net = QNetwork(N_STATES, N_ACTIONS, 2, hidden, seed=seed)
    target = net.clone()
    opt = Adam(net.n_params, lr=lr)
    s, a, r, s2, w = collect(rng, n_transitions)
    states, next_states = one_hot(s), one_hot(s2)
    replay = _fill(s, a, r, s2, w, seed) if prioritized else None
    for step in range(steps):
        beta = 0.4 + 0.6 * step / max(steps - 1, 1)
        if replay is not None:
            batch = replay.sample(batch_size, beta)
        else:
            idx = rng.integers(0, n_transitions, batch_size)
            batch = Batch(states[idx], a[idx], r[idx], next_states[idx],
                          np.zeros(batch_size, bool), w[idx])
        omegas = sample_preference(rng, 2, n_omega)
        _, prio = td_step(net, target, batch, omegas, gamma, opt)
        if replay is not None:
            replay.update_priorities(batch.indices, prio)
        if (step + 1) % target_sync == 0:
            target.load(net.params)
    return net


def greedy_policy(net, omega):
    q = net.forward(one_hot(np.arange(N_STATES)), np.tile(omega, (N_STATES, 1)))
    return (q @ np.asarray(omega, dtype=float)).argmax(axis=1)


def policy_agreement(net, weights=np.linspace(0, 1, 11)):
    """Fraction of preferences ``(w, 1-w)`` whose greedy policy equals the oracle on all states."""
    hits = [np.array_equal(greedy_policy(net, (w, 1 - w)), oracle_policy((w, 1 - w)))
            for w in weights]
    return float(np.mean(hits)), hits
