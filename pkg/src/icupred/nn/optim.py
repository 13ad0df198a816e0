"""Trainable parameter collection and the Adam optimizer with L2 weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .autodiff import Tensor, parameter


class ParamStore:
    """Named trainable tensors plus per-parameter Adam moment accumulators.

    A store is mutated only by ``adam_update`` and must have a single writer;
    read-only forward passes may share it freely.
    """

    def __init__(self):
        self.entries: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step_count: int = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.entries:
            raise ValidationError(f"duplicate parameter name {name!r}")
        t = parameter(np.asarray(value, dtype=np.float64))
        self.entries[name] = t
        self.adam_m[name] = np.zeros_like(t.data)
        self.adam_v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self) -> list[str]:
        return sorted(self.entries)

    def items(self):
        for name in self.names():
            yield name, self.entries[name]

    def clear_grads(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.data.size for t in self.entries.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values, keyed by name."""
        return {name: t.data.copy() for name, t in self.entries.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.entries):
            raise ValidationError("snapshot parameter names do not match the store")
        for name, arr in values.items():
            t = self.entries[name]
            if arr.shape != t.data.shape:
                raise ValidationError(f"snapshot shape {arr.shape} != {t.data.shape} for {name!r}")
            t.data = arr.copy()


def global_grad_norm(store: ParamStore) -> float:
    total = 0.0
    for _, t in store.items():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return float(np.sqrt(total))


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(store)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, t in store.items():
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm


def adam_update(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8,
                weight_decay: float = 0.0) -> None:
    """One Adam step with bias correction over every parameter in the store.

    Weight decay enters as an L2 term on the loss gradient (grad +=
    weight_decay * param) ahead of the moment updates. Gradients are cleared
    afterwards and the step counter advances by one.
    """
    missing = [name for name, t in store.items() if t.grad is None]
    if missing:
        raise RuntimeError(f"adam_update: no gradient for parameter {missing[0]!r}")
    store.step_count += 1
    t_step = store.step_count
    bc1 = 1.0 - beta1 ** t_step
    bc2 = 1.0 - beta2 ** t_step
    for name, p in store.items():
        g = p.grad
        if weight_decay != 0.0:
            g = g + weight_decay * p.data
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.grad = None
