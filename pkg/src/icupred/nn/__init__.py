"""From-scratch numeric core: autodiff tensors, layers, losses, Adam, gradient checks."""

from .autodiff import (
    Tensor,
    add,
    as_tensor,
    const_matmul,
    constant,
    dense,
    mul,
    pad_time_stack,
    parameter,
    relu,
    reshape,
    sigmoid,
    sigmoid_np,
    slice_cols,
    slice_rows,
    stack_rows,
    tanh,
)
from .gradcheck import finite_difference_check
from .layers import LstmState, conv1d_maxpool, dropout, initial_lstm_state, lstm_cell_step, lstm_sequence
from .losses import (
    PROB_EPS,
    binary_ce,
    binary_ce_logits,
    clamp_probs,
    multiclass_ce,
    softmax_ce_logits,
    softmax_np,
)
from .optim import ParamStore, adam_update, clip_grad_norm, global_grad_norm

__all__ = [
    "PROB_EPS",
    "LstmState",
    "ParamStore",
    "Tensor",
    "adam_update",
    "add",
    "as_tensor",
    "binary_ce",
    "binary_ce_logits",
    "clamp_probs",
    "clip_grad_norm",
    "const_matmul",
    "constant",
    "conv1d_maxpool",
    "dense",
    "dropout",
    "finite_difference_check",
    "global_grad_norm",
    "initial_lstm_state",
    "lstm_cell_step",
    "lstm_sequence",
    "mul",
    "multiclass_ce",
    "pad_time_stack",
    "parameter",
    "relu",
    "reshape",
    "sigmoid",
    "sigmoid_np",
    "slice_cols",
    "slice_rows",
    "softmax_ce_logits",
    "softmax_np",
    "stack_rows",
    "tanh",
]
