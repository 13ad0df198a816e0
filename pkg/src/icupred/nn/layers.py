"""Network layers: LSTM cell and fused sequence, text convolution, dropout.

Gate packing order inside every 4H-wide LSTM weight/bias is
[input, forget, candidate, output]; the forget slice is rows H..2H.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ShapeError, ValidationError
from .autodiff import Tensor, accumulate, add, constant, dense, mul, sigmoid, sigmoid_np, slice_cols, tanh


@dataclass
class LstmState:
    """Hidden and cell activations; both have identical shape."""

    hidden: Tensor
    cell: Tensor


def initial_lstm_state(hidden_size: int, batch: int | None = None) -> LstmState:
    shape = (hidden_size,) if batch is None else (batch, hidden_size)
    return LstmState(constant(np.zeros(shape)), constant(np.zeros(shape)))


def lstm_cell_step(x: Tensor, state: LstmState, w_in: Tensor, w_rec: Tensor,
                   bias: Tensor) -> LstmState:
    """One step of a vanilla LSTM, composed from elementary autodiff ops.

    ``x`` is (D,) or (B, D); ``w_in`` (4H, D), ``w_rec`` (4H, H), ``bias`` (4H,).
    Chaining steps backpropagates through time automatically.
    """
    four_h = w_in.data.shape[0]
    if four_h % 4 != 0 or w_rec.data.shape != (four_h, four_h // 4):
        raise ShapeError(f"lstm_cell_step: w_in {w_in.data.shape} vs w_rec {w_rec.data.shape}")
    h = four_h // 4
    if state.hidden.data.shape != state.cell.data.shape or state.hidden.data.shape[-1] != h:
        raise ShapeError(
            f"lstm_cell_step: state {state.hidden.data.shape} incompatible with hidden size {h}")

    gates = add(dense(x, w_in, bias), dense(state.hidden, w_rec))
    i = sigmoid(slice_cols(gates, 0, h))
    f = sigmoid(slice_cols(gates, h, 2 * h))
    g = tanh(slice_cols(gates, 2 * h, 3 * h))
    o = sigmoid(slice_cols(gates, 3 * h, 4 * h))
    cell = add(mul(f, state.cell), mul(i, g))
    hidden = mul(o, tanh(cell))
    return LstmState(hidden=hidden, cell=cell)


def lstm_sequence(xs: np.ndarray, w_in: Tensor, w_rec: Tensor, bias: Tensor) -> Tensor:
    """Run a zero-initialised LSTM over a (T, B, D) input block.

    Returns the hidden states as a (T, B, H) tensor. The whole unrolled
    forward/backward is fused into a single graph node for speed; inputs are
    plain arrays and receive no gradient. Matches ``lstm_cell_step`` chained
    over t to float64 round-off.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3:
        raise ShapeError(f"lstm_sequence: input must be (T, B, D), got {xs.shape}")
    t_steps, batch, d = xs.shape
    four_h, d_w = w_in.data.shape
    h = four_h // 4
    if d_w != d or four_h % 4 != 0 or w_rec.data.shape != (four_h, h):
        raise ShapeError(
            f"lstm_sequence: input {xs.shape} vs w_in {w_in.data.shape} vs w_rec {w_rec.data.shape}")
    if bias.data.shape != (four_h,):
        raise ShapeError(f"lstm_sequence: bias {bias.data.shape}, expected ({four_h},)")

    wi_t = w_in.data.T
    wr_t = w_rec.data.T
    gates = np.empty((t_steps, batch, four_h))
    cells = np.empty((t_steps, batch, h))
    cell_tanh = np.empty((t_steps, batch, h))
    hs = np.empty((t_steps, batch, h))
    h_prev = np.zeros((batch, h))
    c_prev = np.zeros((batch, h))
    for t in range(t_steps):
        z = xs[t] @ wi_t + h_prev @ wr_t + bias.data
        z[:, : 2 * h] = sigmoid_np(z[:, : 2 * h])
        z[:, 2 * h: 3 * h] = np.tanh(z[:, 2 * h: 3 * h])
        z[:, 3 * h:] = sigmoid_np(z[:, 3 * h:])
        gates[t] = z
        c_prev = z[:, h: 2 * h] * c_prev + z[:, :h] * z[:, 2 * h: 3 * h]
        cells[t] = c_prev
        cell_tanh[t] = np.tanh(c_prev)
        h_prev = z[:, 3 * h:] * cell_tanh[t]
        hs[t] = h_prev

    out = Tensor(hs, requires_grad=any(p.requires_grad for p in (w_in, w_rec, bias)),
                 parents=(w_in, w_rec, bias))
    if out.requires_grad:
        def _bwd(g_hs):
            d_wi = np.zeros_like(w_in.data)
            d_wr = np.zeros_like(w_rec.data)
            d_b = np.zeros_like(bias.data)
            dh_next = np.zeros((batch, h))
            dc_next = np.zeros((batch, h))
            dz = np.empty((batch, four_h))
            for t in range(t_steps - 1, -1, -1):
                z = gates[t]
                i, f = z[:, :h], z[:, h: 2 * h]
                cand, o = z[:, 2 * h: 3 * h], z[:, 3 * h:]
                dh = g_hs[t] + dh_next
                dc = dh * o * (1.0 - cell_tanh[t] ** 2) + dc_next
                c_before = cells[t - 1] if t > 0 else np.zeros((batch, h))
                dz[:, :h] = dc * cand * i * (1.0 - i)
                dz[:, h: 2 * h] = dc * c_before * f * (1.0 - f)
                dz[:, 2 * h: 3 * h] = dc * i * (1.0 - cand ** 2)
                dz[:, 3 * h:] = dh * cell_tanh[t] * o * (1.0 - o)
                dc_next = dc * f
                h_before = hs[t - 1] if t > 0 else np.zeros((batch, h))
                d_wi += dz.T @ xs[t]
                d_wr += dz.T @ h_before
                d_b += dz.sum(axis=0)
                dh_next = dz @ w_rec.data
            accumulate(w_in, d_wi)
            accumulate(w_rec, d_wr)
            accumulate(bias, d_b)
        out._backward = _bwd
    return out


def conv1d_maxpool(embeds: np.ndarray, banks: Sequence[tuple[int, Tensor, Tensor]]) -> Tensor:
    """Per-width 1D convolutions over (n, E) embeddings, ReLU, max over time.

    ``banks`` holds (width, kernels (F, width*E), bias (F,)) triples; the
    output concatenates the per-width pooled vectors into length
    sum(F per width). Gradient is routed only to the argmax window of each
    filter; ties break to the lowest index. Embeddings are frozen and get
    no gradient.
    """
    embeds = np.asarray(embeds, dtype=np.float64)
    if embeds.ndim != 2:
        raise ShapeError(f"conv1d_maxpool: embeddings must be (n, E), got {embeds.shape}")
    n, e = embeds.shape
    if not banks:
        raise ShapeError("conv1d_maxpool: no filter banks")
    segments = []
    caches = []
    params: list[Tensor] = []
    for width, kernels, bias in banks:
        if n < width:
            raise ShapeError(
                f"conv1d_maxpool: {n} embedded tokens shorter than kernel width {width}; "
                "the note padding policy must prevent this")
        n_filt, cols = kernels.data.shape
        if cols != width * e or bias.data.shape != (n_filt,):
            raise ShapeError(
                f"conv1d_maxpool: kernels {kernels.data.shape} / bias {bias.data.shape} "
                f"incompatible with width {width} and embedding dim {e}")
        m = n - width + 1
        windows = np.lib.stride_tricks.sliding_window_view(embeds, (width, e))
        windows = windows.reshape(m, width * e)
        acts = windows @ kernels.data.T + bias.data  # (m, F), pre-ReLU
        best_idx = np.argmax(acts, axis=0)
        best = acts[best_idx, np.arange(n_filt)]
        segments.append(np.maximum(best, 0.0))
        caches.append((kernels, bias, windows, best_idx, best))
        params.extend((kernels, bias))

    out = Tensor(np.concatenate(segments),
                 requires_grad=any(p.requires_grad for p in params),
                 parents=tuple(params))
    if out.requires_grad:
        def _bwd(g):
            offset = 0
            for kernels, bias, windows, best_idx, best in caches:
                n_filt = best.shape[0]
                gseg = g[offset: offset + n_filt] * (best > 0.0)
                offset += n_filt
                accumulate(kernels, gseg[:, None] * windows[best_idx])
                accumulate(bias, gseg)
        out._backward = _bwd
    return out


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train-time zeroing with 1/(1-rate) rescale, identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValidationError("dropout in training mode needs an rng")
    keep = rng.random(x.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = Tensor(x.data * keep * scale, requires_grad=x.requires_grad, parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: accumulate(x, g * keep * scale)
    return out
