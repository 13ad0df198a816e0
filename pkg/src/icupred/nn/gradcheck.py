"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor
from .optim import ParamStore


def finite_difference_check(loss_fn: Callable[[], Tensor],
                            params: Mapping[str, Tensor] | ParamStore,
                            h: float = 1e-5) -> float:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild its graph on every call and be deterministic
    given the current parameter values. Returns the maximum over all
    coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    named = dict(params.items()) if isinstance(params, ParamStore) else dict(params)
    for t in named.values():
        t.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise RuntimeError(f"finite_difference_check: non-finite loss {loss.item()}")
    loss.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in named.items()}

    worst = 0.0
    for name, t in named.items():
        flat = t.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for k in range(flat.shape[0]):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn().item()
            flat[k] = orig - h
            down = loss_fn().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise RuntimeError(f"finite_difference_check: non-finite loss near {name}[{k}]")
            numeric = (up - down) / (2.0 * h)
            err = abs(ana[k] - numeric) / max(1e-8, abs(ana[k]) + abs(numeric))
            if err > worst:
                worst = err
    for t in named.values():
        t.grad = None
    return worst
