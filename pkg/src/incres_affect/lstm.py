"""LSTM cell, sequence runner, and the two-direction feature-map head.

Gate convention (one affine map per gate over the concatenation [h, x]):

    f = sigmoid([h, x] W_f + b_f)      i = sigmoid([h, x] W_i + b_i)
    o = sigmoid([h, x] W_o + b_o)      g = tanh([h, x] W_C + b_C)
    C' = f * C + i * g                 h' = o * tanh(C')
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySequence, ShapeMismatch
from .layers import DenseParams, concat_channels, dense
from .tensor import Rng, Tensor, add, mul, sigmoid, tanh, take, transpose

GATES = ("f", "i", "o", "C")


@dataclass
class LstmParams:
    W_f: Tensor
    W_i: Tensor
    W_o: Tensor
    W_C: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor
    b_C: Tensor

    def __post_init__(self):
        shape = self.W_f.shape
        for gate in GATES:
            w, b = self.weight(gate), self.bias(gate)
            if w.shape != shape or w.ndim != 2:
                raise ShapeMismatch(f"LSTM gate weights disagree: {shape} vs {w.shape}")
            if b.shape != (shape[1],):
                raise ShapeMismatch(f"LSTM bias b_{gate} has shape {b.shape}, expected {(shape[1],)}")

    @property
    def hidden(self) -> int:
        return self.W_f.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W_f.shape[0] - self.hidden

    def weight(self, gate: str) -> Tensor:
        return getattr(self, f"W_{gate}")

    def bias(self, gate: str) -> Tensor:
        return getattr(self, f"b_{gate}")

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for gate in GATES:
            out[f"W_{gate}"] = self.weight(gate)
            out[f"b_{gate}"] = self.bias(gate)
        return out

    @classmethod
    def init(cls, rng: Rng, input_dim: int, hidden: int = 200, forget_bias: float = 1.0):
        """Uniform weights in +-1/sqrt(hidden); forget bias 1, other biases 0."""
        bound = 1.0 / math.sqrt(hidden)
        kw = {}
        for gate in GATES:
            kw[f"W_{gate}"] = Tensor(rng.uniform(-bound, bound, (hidden + input_dim, hidden)),
                                     requires_grad=True)
            b = np.full(hidden, forget_bias) if gate == "f" else np.zeros(hidden)
            kw[f"b_{gate}"] = Tensor(b, requires_grad=True)
        return cls(**kw)

    @classmethod
    def zeros(cls, input_dim: int, hidden: int):
        kw = {}
        for gate in GATES:
            kw[f"W_{gate}"] = Tensor(np.zeros((hidden + input_dim, hidden)), requires_grad=True)
            kw[f"b_{gate}"] = Tensor(np.zeros(hidden), requires_grad=True)
        return cls(**kw)


@dataclass
class LstmState:
    h: Tensor
    C: Tensor

    @classmethod
    def zeros(cls, n: int, hidden: int):
        return cls(Tensor(np.zeros((n, hidden))), Tensor(np.zeros((n, hidden))))


def lstm_cell(x_t: Tensor, state: LstmState, p: LstmParams) -> LstmState:
    if x_t.ndim != 2 or x_t.shape[1] != p.input_dim:
        raise ShapeMismatch(f"LSTM input {x_t.shape}, expected n x {p.input_dim}")
    if state.h.shape != (x_t.shape[0], p.hidden) or state.C.shape != state.h.shape:
        raise ShapeMismatch(f"LSTM state {state.h.shape}/{state.C.shape} does not match")
    hx = concat_channels([state.h, x_t])
    f = sigmoid(dense(hx, DenseParams(p.W_f, p.b_f)))
    i = sigmoid(dense(hx, DenseParams(p.W_i, p.b_i)))
    o = sigmoid(dense(hx, DenseParams(p.W_o, p.b_o)))
    g = tanh(dense(hx, DenseParams(p.W_C, p.b_C)))
    c_next = add(mul(f, state.C), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return LstmState(h_next, c_next)


def run_sequence(xs: Tensor, p: LstmParams, cell=lstm_cell) -> Tensor:
    """Scan ``xs`` (n x T x d) from a zero state and return the last hidden state."""
    if xs.ndim != 3:
        raise ShapeMismatch(f"sequence input must be n x T x d, got {xs.shape}")
    n, steps, _ = xs.shape
    if steps < 1:
        raise EmptySequence("LSTM sequence has no timesteps")
    state = LstmState.zeros(n, p.hidden)
    for t in range(steps):
        state = cell(take(xs, (slice(None), t, slice(None))), state, p)
    return state.h


def width_sequence(fmap: Tensor) -> Tensor:
    """n x h x w x c -> n x w x (h*c): step t is column t with all rows and channels."""
    n, h, w, c = fmap.shape
    return transpose(fmap, (0, 2, 1, 3)).reshape(n, w, h * c)


def height_sequence(fmap: Tensor) -> Tensor:
    """n x h x w x c -> n x h x (w*c): step t is row t."""
    n, h, w, c = fmap.shape
    return fmap.reshape(n, h, w * c)


def dual_direction_head(fmap: Tensor, p_row: LstmParams, p_col: LstmParams) -> Tensor:
    """Run one LSTM left-to-right over columns and one top-to-bottom over rows.

    ``p_row`` scans along the width (columns as steps), ``p_col`` along the
    height. Returns the two final hidden states side by side.
    """
    if fmap.ndim != 4:
        raise ShapeMismatch(f"feature map must be n x h x w x c, got {fmap.shape}")
    _, h, w, c = fmap.shape
    if p_row.input_dim != h * c:
        raise ShapeMismatch(f"width LSTM expects step size {p_row.input_dim}, column slice is {h * c}")
    if p_col.input_dim != w * c:
        raise ShapeMismatch(f"height LSTM expects step size {p_col.input_dim}, row slice is {w * c}")
    along_width = run_sequence(width_sequence(fmap), p_row)
    along_height = run_sequence(height_sequence(fmap), p_col)
    return concat_channels([along_width, along_height])
