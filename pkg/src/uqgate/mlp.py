"""Small fully-connected value network with manual backprop and Adam.

Hidden layers use rectified-linear activations, the output layer is linear.
The loss for training is the mean squared error between the value of the
taken action and its bootstrapped target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError


class ValueNet:
    """Feed-forward net; weights[i] maps layer i activations to layer i+1."""

    def __init__(self, sizes: tuple[int, ...], seed: int = 0):
        if len(sizes) < 2:
            raise DataError("value net needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def clone(self) -> "ValueNet":
        other = ValueNet.__new__(ValueNet)
        other.sizes = self.sizes
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def sync_from(self, other: "ValueNet") -> None:
        """Copy parameters so this net equals `other` exactly."""
        self.weights = [w.copy() for w in other.weights]
        self.biases = [b.copy() for b in other.biases]

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def forward(self, states: np.ndarray) -> np.ndarray:
        """Action values for a batch of states (or a single state vector)."""
        single = np.asarray(states).ndim == 1
        a = np.atleast_2d(np.asarray(states, dtype=float))
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < len(self.weights) - 1:
                a = np.maximum(a, 0.0)
        return a[0] if single else a

    def _forward_cached(self, states: np.ndarray) -> list[np.ndarray]:
        acts = [np.atleast_2d(np.asarray(states, dtype=float))]
        a = acts[0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < len(self.weights) - 1:
                a = np.maximum(a, 0.0)
            acts.append(a)
        return acts

    def backward(
        self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
    ) -> tuple[list[np.ndarray], float]:
        """Gradients of MSE(Q(s, a_taken), target) for every parameter.

        Returns the gradient list (interleaved weight, bias per layer) and
        the scalar loss.
        """
        acts = self._forward_cached(states)
        q = acts[-1]
        batch = q.shape[0]
        actions = np.asarray(actions, dtype=int)
        targets = np.asarray(targets, dtype=float)
        taken = q[np.arange(batch), actions]
        diff = taken - targets
        loss = float((diff**2).mean())

        delta = np.zeros_like(q)
        delta[np.arange(batch), actions] = 2.0 * diff / batch
        grads: list[np.ndarray] = [np.empty(0)] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = acts[i]
            grads[2 * i] = a_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
                delta = delta * (acts[i] > 0.0)
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericError(
                    "non-finite gradient encountered; aborting (check inputs "
                    "and learning rate)"
                )
        return grads, loss

    def loss(self, states: np.ndarray, actions: np.ndarray,
             targets: np.ndarray) -> float:
        q = np.atleast_2d(self.forward(states))
        taken = q[np.arange(q.shape[0]), np.asarray(actions, dtype=int)]
        return float(((taken - np.asarray(targets, dtype=float)) ** 2).mean())

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ValueNet":
        net = cls(tuple(obj["sizes"]), seed=0)
        net.weights = [np.asarray(w, dtype=float) for w in obj["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in obj["biases"]]
        return net


@dataclass
class Adam:
    """Standard bias-corrected Adam over a fixed parameter list."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def finite_difference_grads(
    net: ValueNet, states: np.ndarray, actions: np.ndarray,
    targets: np.ndarray, h: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradient of the batch loss, parameter by parameter."""
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = p[ix]
            p[ix] = orig + h
            up = net.loss(states, actions, targets)
            p[ix] = orig - h
            down = net.loss(states, actions, targets)
            p[ix] = orig
            g[ix] = (up - down) / (2.0 * h)
            it.iternext()
        grads.append(g)
    return grads
