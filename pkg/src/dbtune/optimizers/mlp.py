"""Small fully connected networks with hand-written backpropagation."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

_OUTPUTS = ("tanh", "identity")


class Mlp:
    """ReLU hidden layers; ``output`` is ``"tanh"`` or ``"identity"``."""

    def __init__(self, sizes: Sequence[int], output: str = "identity", rng: Optional[np.random.Generator] = None,
                 final_scale: float = 3e-3):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output not in _OUTPUTS:
            raise ValueError(f"output must be one of {_OUTPUTS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = list(sizes)
        self.output = output
        self.weights, self.biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = final_scale if k == len(sizes) - 2 else 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def params(self) -> list:
        return self.weights + self.biases

    def forward(self, x: np.ndarray, keep: bool = False):
        """Return the output, plus the layer cache when ``keep`` is set."""
        a = np.atleast_2d(np.asarray(x, dtype=float))
        if a.shape[1] != self.sizes[0]:
            raise ValueError(f"input has {a.shape[1]} features, expected {self.sizes[0]}")
        cache = [a]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = a @ W + b
            if k < last:
                a = np.maximum(h, 0.0)
            else:
                a = np.tanh(h) if self.output == "tanh" else h
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite activation in layer {k}")
            cache.append(a)
        return (a, cache) if keep else a

    def backward(self, cache: list, grad_out: np.ndarray):
        """Gradients of ``sum(grad_out * output)`` w.r.t. weights, biases and the input."""
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        last = len(self.weights) - 1
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        for k in range(last, -1, -1):
            out = cache[k + 1]
            if k == last:
                if self.output == "tanh":
                    g = g * (1.0 - out * out)
            else:
                g = g * (out > 0)
            gw[k] = cache[k].T @ g
            gb[k] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return gw, gb, g

    def copy(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.sizes = list(self.sizes)
        twin.output = self.output
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin

    def soft_update(self, source: "Mlp", tau: float) -> None:
        for mine, theirs in zip(self.params, source.params):
            if tau == 1.0:
                mine[...] = theirs
            else:
                mine *= 1.0 - tau
                mine += tau * theirs

    def sgd(self, gw: list, gb: list, lr: float, clip: Optional[float] = 1.0) -> float:
        """Plain gradient step with global-norm clipping; returns the pre-clip norm."""
        grads = gw + gb
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        scale = lr
        if clip is not None and norm > clip:
            scale = lr * clip / norm
        for p, g in zip(self.params, grads):
            p -= scale * g
        return norm

    def to_json(self) -> dict:
        return {"sizes": self.sizes, "output": self.output,
                "weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_json(cls, obj: dict) -> "Mlp":
        net = cls.__new__(cls)
        net.sizes = list(obj["sizes"])
        net.output = obj["output"]
        net.weights = [np.asarray(w, dtype=float) for w in obj["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in obj["biases"]]
        return net


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def mlp_backward(net: Mlp, x: np.ndarray, upstream: np.ndarray):
    _, cache = net.forward(x, keep=True)
    return net.backward(cache, upstream)
