"""Preference-conditioned fully connected Q-network in plain numpy.

The network maps ``[state, omega]`` to an ``|A| x m`` matrix of vector-valued
action values. Parameters live in one flat float64 array so they can be
published, checkpointed and shipped between processes as a single buffer.
"""

from __future__ import annotations

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


class QNetwork:
    """Multi-layer perceptron with rectifier hidden layers and linear output.

    Parameters
    ----------
    state_dim : int
    n_actions : int
    n_objectives : int
    hidden : tuple of int
    params : array, optional
        Flat parameter vector; freshly initialized (He-uniform) when omitted.
    seed : int
        Seed of the initializer.
    """

    def __init__(self, state_dim=30, n_actions=112, n_objectives=2, hidden=(128, 128),
                 params=None, seed=0):
        self.state_dim = int(state_dim)
        self.n_actions = int(n_actions)
        self.n_objectives = int(n_objectives)
        self.hidden = tuple(int(h) for h in hidden)
        sizes = (self.input_dim,) + self.hidden + (self.n_actions * self.n_objectives,)
        self.shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self.n_params = sum(int(np.prod(s)) for s in self.shapes)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params.copy()
        self.version = 0

    @property
    def input_dim(self):
        return self.state_dim + self.n_objectives

    @property
    def architecture(self):
        return {
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
            "n_objectives": self.n_objectives,
            "hidden": list(self.hidden),
        }

    @classmethod
    def from_architecture(cls, arch, params=None):
        return cls(arch["state_dim"], arch["n_actions"], arch["n_objectives"],
                   tuple(arch["hidden"]), params=params)

    def _init_params(self, rng):
        chunks = []
        for k, shape in enumerate(self.shapes):
            if len(shape) == 2:
                bound = np.sqrt(6.0 / shape[0])
                if k == len(self.shapes) - 2:
                    bound *= 0.1  # small output layer
                chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
            else:
                chunks.append(np.zeros(shape))
        return np.concatenate(chunks)

    def layers(self, params=None):
        """Views ``[(W, b), ...]`` into a flat parameter vector."""
        params = self.params if params is None else params
        out, pos = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(params[pos:pos + size].reshape(shape))
            pos += size
        return list(zip(out[0::2], out[1::2]))

    def clone(self):
        net = QNetwork(self.state_dim, self.n_actions, self.n_objectives, self.hidden,
                       params=self.params)
        net.version = self.version
        return net

    def load(self, params):
        self.params[...] = params

    def inputs(self, states, omegas):
        states = np.asarray(states, dtype=np.float64)
        omegas = np.asarray(omegas, dtype=np.float64)
        if states.shape[-1] != self.state_dim:
            raise ValueError(f"state has length {states.shape[-1]}, network expects {self.state_dim}")
        if omegas.shape[-1] != self.n_objectives:
            raise ValueError(f"preference has length {omegas.shape[-1]}, expected {self.n_objectives}")
        omegas = np.broadcast_to(omegas, states.shape[:-1] + (self.n_objectives,))
        return np.concatenate([states, omegas], axis=-1)

    def forward(self, states, omegas, params=None):
        """Q-values of shape ``(batch, n_actions, n_objectives)``."""
        out, _ = self.forward_cached(self.inputs(states, omegas), params)
        return out.reshape(out.shape[:-1] + (self.n_actions, self.n_objectives))

    __call__ = forward

    def forward_cached(self, x, params=None):
        layers = self.layers(params)
        acts = [x]
        h = x
        last = len(layers) - 1
        for k, (w, b) in enumerate(layers):
            h = h @ w
            h += b
            if k < last:
                np.maximum(h, 0.0, out=h)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout, params=None):
        """Gradient of a scalar loss w.r.t. the flat parameters given ``dL/dout``."""
        layers = self.layers(params)
        grads = []
        delta = dout
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            a_in = acts[k]
            grads.append((delta.sum(axis=0), a_in.T @ delta))
            if k > 0:
                delta = (delta @ w.T) * (acts[k] > 0)
        flat = []
        for gb, gw in reversed(grads):
            flat += [gw.ravel(), gb.ravel()]
        return np.concatenate(flat)

    def lipschitz_bound(self):
        """Product of layer spectral norms: a Lipschitz constant of the input map."""
        return float(np.prod([np.linalg.norm(w, 2) for w, _ in self.layers()]))


class Adam:
    """Adam optimizer over a flat parameter vector (updates in place)."""

    def __init__(self, n_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params

    def state_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "t": self.t, "m": self.m, "v": self.v}

    def load_state_dict(self, state):
        self.lr, self.beta1, self.beta2, self.eps = (state["lr"], state["beta1"], state["beta2"],
                                                     state["eps"])
        self.t = int(state["t"])
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)
