"""Envelope Q-learning: preference sampling, envelope Bellman targets and the
temporal-difference update.
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIMPLEX_TOL = 1e-9
PRIORITY_EPS = 1e-3


class TrainingError(RuntimeError):
    """Non-finite loss or gradient; ``dump_path`` points at a diagnostic dump."""

    def __init__(self, message, dump_path=None):
        super().__init__(message if dump_path is None else f"{message} (diagnostics: {dump_path})")
        self.dump_path = dump_path


def sample_preference(rng, m=2, size=None):
    """Uniform draw(s) from the ``m``-simplex via normalized exponentials."""
    shape = (m,) if size is None else (size, m)
    e = rng.exponential(size=shape)
    return e / e.sum(axis=-1, keepdims=True)


def is_preference(omega, tol=SIMPLEX_TOL):
    omega = np.asarray(omega, dtype=float)
    return bool(np.all(omega >= -tol) and np.all(np.abs(omega.sum(axis=-1) - 1.0) <= tol))


def scalar_preference(w):
    """Map a scalar intent ``w`` in [0, 1] to the 2-simplex point ``(w, 1 - w)``."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"scalar preference must lie in [0, 1], got {w}")
    return np.array([w, 1.0 - w])


@dataclass
class Transition:
    """One experience sample.

    ``meta`` is ``(actor_id, scenario_id, cell_id, ue_id, tti)`` and lets the
    data engine account and filter per source. ``priority`` of ``None`` means
    "assign the current maximum on insertion".
    """

    state: np.ndarray
    action: int
    reward: np.ndarray
    next_state: np.ndarray
    done: bool
    omega: np.ndarray
    next_mask: np.ndarray | None = None
    priority: float | None = None
    meta: tuple = (0, 0, 0, 0, 0)


@dataclass
class Batch:
    states: np.ndarray        # (B, S)
    actions: np.ndarray       # (B,)
    rewards: np.ndarray       # (B, m)
    next_states: np.ndarray   # (B, S)
    dones: np.ndarray         # (B,)
    omegas: np.ndarray        # (B, m) behaviour preferences
    next_masks: np.ndarray | None = None   # (B, A) allowed actions in next state
    weights: np.ndarray | None = None      # (B,) importance weights
    indices: np.ndarray | None = None      # (B,) replay slots

    def __len__(self):
        return len(self.actions)


def _preference_sets(batch, omega_samples):
    """Per-transition preference sets: shared samples plus the own preference."""
    omega_samples = np.atleast_2d(np.asarray(omega_samples, dtype=float))
    if omega_samples.shape[0] == 0:
        raise ValueError("omega_samples must be non-empty")
    b = len(batch)
    shared = np.broadcast_to(omega_samples, (b,) + omega_samples.shape)
    return np.concatenate([shared, batch.omegas[:, None, :]], axis=1)  # (B, K+1, m)


def _next_q(net, next_states, omega_sets):
    b, k, m = omega_sets.shape
    s = np.repeat(next_states, k, axis=0)
    q = net.forward(s, omega_sets.reshape(b * k, m))
    return q.reshape(b, k, net.n_actions, m)


def envelope_target(batch, target_net, gamma, omega_samples, select_net=None):
    """Envelope Bellman targets ``y`` of shape (B, m).

    For non-terminal transitions ``y = r + gamma * Q_target(s', a*, w*)`` where
    ``(a*, w*)`` maximizes ``w_b . Q(s', a, w')`` over allowed actions ``a`` and
    preferences ``w'`` in ``omega_samples`` plus the transition's own ``w_b``.
    With ``select_net`` the maximization uses that network and the target
    network only evaluates (double Q-learning).
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    sets = _preference_sets(batch, omega_samples)
    b, k, m = sets.shape
    q_eval = _next_q(target_net, batch.next_states, sets)
    q_sel = q_eval if select_net is None else _next_q(select_net, batch.next_states, sets)
    scal = np.einsum("bkam,bm->bka", q_sel, batch.omegas)
    if batch.next_masks is not None:
        scal = np.where(batch.next_masks[:, None, :], scal, -np.inf)
    flat = scal.reshape(b, -1).argmax(axis=1)
    j, a = np.divmod(flat, target_net.n_actions)
    best = q_eval[np.arange(b), j, a]  # (B, m)
    notdone = (1.0 - batch.dones.astype(float))[:, None]
    return batch.rewards + gamma * notdone * best


def _dump(net, batch, y, loss):
    path = Path(tempfile.mkdtemp(prefix="genla-diverged-")) / "diagnostics.npz"
    np.savez(path, params=net.params, states=batch.states, actions=batch.actions,
             rewards=batch.rewards, targets=y, loss=np.asarray(loss))
    return path


def td_loss_and_grad(net, batch, targets, params=None):
    """Importance-weighted mean squared vector TD error and its parameter gradient."""
    b = len(batch)
    w = np.ones(b) if batch.weights is None else np.asarray(batch.weights, dtype=float)
    x = net.inputs(batch.states, batch.omegas)
    out, acts = net.forward_cached(x, params)
    q = out.reshape(b, net.n_actions, net.n_objectives)
    q_sa = q[np.arange(b), batch.actions]
    err = q_sa - targets
    loss = float(np.sum(w * np.sum(err * err, axis=1)) / b)
    dq = np.zeros_like(q)
    dq[np.arange(b), batch.actions] = 2.0 * w[:, None] * err / b
    grad = net.backward(acts, dq.reshape(b, -1), params)
    return loss, grad, q_sa


def td_step(net, target_net, batch, omega_samples, gamma, optimizer, double_q=True):
    """One envelope Q-learning update of ``net`` in place.

    Returns the batch loss and new replay priorities
    ``|w_b . (y - Q(s, a, w_b))| + 1e-3``.
    """
    y = envelope_target(batch, target_net, gamma, omega_samples,
                        select_net=net if double_q else None)
    loss, grad, q_sa = td_loss_and_grad(net, batch, y)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise TrainingError(f"non-finite loss {loss}", _dump(net, batch, y, loss))
    optimizer.step(net.params, grad)
    net.version += 1
    priorities = np.abs(np.einsum("bm,bm->b", batch.omegas, y - q_sa)) + PRIORITY_EPS
    return loss, priorities


def finite_difference_grad(net, batch, targets, h=1e-5):
    """Central finite-difference gradient of :func:`td_loss_and_grad`'s loss."""
    p = net.params.copy()
    g = np.zeros_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + h
        lp = td_loss_and_grad(net, batch, targets, p)[0]
        p[i] = old - h
        lm = td_loss_and_grad(net, batch, targets, p)[0]
        p[i] = old
        g[i] = (lp - lm) / (2 * h)
    return g
