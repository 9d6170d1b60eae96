"""Plain-numpy MLPs with hand-written backprop.

Everything runs in float64 with parameters exposed as flat vectors, so
gradients can be checked against central finite differences and checkpoints
are a header plus one contiguous blob. Hidden layers use softplus (a smooth
rectifier; finite-difference gradient checks stay clean at kinks ReLU would
introduce)."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np


def softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class Mlp:
    """Fully-connected net: softplus hidden layers, linear output."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]  # (n_out, n_in) per layer
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes: tuple[int, ...], rng: np.random.Generator, out_scale: float = 1.0) -> "Mlp":
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            bound = 1.0 / np.sqrt(sizes[i])
            w = rng.uniform(-bound, bound, size=(sizes[i + 1], sizes[i]))
            b = rng.uniform(-bound, bound, size=sizes[i + 1])
            if i == len(sizes) - 2:
                w = w * out_scale
                b = b * out_scale
            weights.append(w)
            biases.append(b)
        return cls(tuple(sizes), weights, biases)

    # ---- parameter vector view -------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[layer] = vec[i : i + w.size].reshape(w.shape).copy()
            i += w.size
            self.biases[layer] = vec[i : i + b.size].copy()
            i += b.size
        if i != vec.size:
            raise ValueError(f"flat vector length {vec.size} does not match {i} parameters")

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    # ---- forward / backward ----------------------------------------------------

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        """x: (batch, n_in) -> (batch, n_out). Pass a list to capture the
        per-layer activations needed by backward()."""
        h = x
        if cache is not None:
            cache.append(h)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if i == last else softplus(z)
            if cache is not None:
                cache.append((z, h))
        return h

    def backward(self, cache: list, dout: np.ndarray):
        """Gradients for a forward() captured in cache.

        Returns (weight_grads, bias_grads, dinput)."""
        x = cache[0]
        layers = cache[1:]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            z, _ = layers[i]
            if i != len(self.weights) - 1:
                delta = delta * sigmoid(z)
            h_prev = x if i == 0 else layers[i - 1][1]
            gw[i] = delta.T @ h_prev
            gb[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
        return gw, gb, delta

    def grads_to_flat(self, gw: list, gb: list) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gw, gb)])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_size(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
        self.t += 1
        self.m = beta1 * self.m + (1 - beta1) * grad
        self.v = beta2 * self.v + (1 - beta2) * grad * grad
        m_hat = self.m / (1 - beta1**self.t)
        v_hat = self.v / (1 - beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def save_checkpoint(path, header: dict, blobs: dict[str, np.ndarray]) -> None:
    """Binary checkpoint: one JSON header line (with blob order and sizes)
    followed by the concatenated little-endian f64 parameter vectors."""
    order = list(blobs.keys())
    header = dict(header)
    header["blobs"] = [[k, int(blobs[k].size)] for k in order]
    payload = np.concatenate([np.asarray(blobs[k], dtype="<f8").ravel() for k in order]) if order else np.empty(0)
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(payload.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        data = np.frombuffer(f.read(), dtype="<f8")
    blobs = {}
    i = 0
    for name, size in header.get("blobs", []):
        blobs[name] = data[i : i + size].copy()
        i += size
    return header, blobs
