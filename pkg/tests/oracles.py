"""Slow reference implementations used as test oracles."""

import numpy as np

from genla.morl.envelope import Batch


def envelope_target_bruteforce(batch, target_net, gamma, omega_samples, select_net=None):
    """Envelope targets by explicit loops over transitions, preferences and actions."""
    select_net = select_net or target_net
    out = []
    for i in range(len(batch)):
        r = batch.rewards[i]
        if batch.dones[i]:
            out.append(np.array(r, dtype=float))
            continue
        wb = batch.omegas[i]
        prefs = list(np.atleast_2d(omega_samples)) + [wb]
        best, best_val = None, -np.inf
        for w in prefs:
            q_sel = select_net.forward(batch.next_states[i][None], w[None])[0]
            q_ev = target_net.forward(batch.next_states[i][None], w[None])[0]
            for a in range(target_net.n_actions):
                if batch.next_masks is not None and not batch.next_masks[i, a]:
                    continue
                v = float(wb @ q_sel[a])
                if v > best_val:
                    best, best_val = q_ev[a], v
        out.append(r + gamma * best)
    return np.array(out)


def random_batch(rng, b, state_dim, n_actions, m, masked=True, done_p=0.2):
    masks = None
    if masked:
        masks = rng.random((b, n_actions)) < 0.7
        masks[np.arange(b), rng.integers(0, n_actions, b)] = True
    return Batch(
        states=rng.normal(size=(b, state_dim)),
        actions=rng.integers(0, n_actions, b),
        rewards=rng.normal(size=(b, m)),
        next_states=rng.normal(size=(b, state_dim)),
        dones=rng.random(b) < done_p,
        omegas=rng.dirichlet(np.ones(m), size=b),
        next_masks=masks,
        weights=rng.uniform(0.2, 1.0, b),
    )


def relative_error(analytic, numeric):
    """Largest absolute deviation relative to the gradient's largest entry."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)
