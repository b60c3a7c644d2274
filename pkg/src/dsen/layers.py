"""Recurrent, feed-forward and attention building blocks.

All forwards accept either a single example (the shapes given in the
docstrings) or a leading batch axis; parameters are bundles of autograd
Tensors and are shared/immutable across calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autograd import Tensor, concat, stack
from .errors import ContractError, DimensionError

Activation = Callable[[Tensor], Tensor]


@dataclass
class GruParams:
    """Update/reset/candidate gate weights over the concatenation [x; h]."""
    w_u: Tensor  # h x (d + h)
    w_r: Tensor
    w_c: Tensor
    b_u: Tensor  # h
    b_r: Tensor
    b_c: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_u.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_u.shape[1] - self.w_u.shape[0]

    def tensors(self) -> dict:
        return {"w_u": self.w_u, "w_r": self.w_r, "w_c": self.w_c,
                "b_u": self.b_u, "b_r": self.b_r, "b_c": self.b_c}


@dataclass
class LstmParams:
    """Input/forget/output/candidate gate weights over [x; h]."""
    w_i: Tensor  # h x (d + h)
    w_f: Tensor
    w_o: Tensor
    w_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_i.shape[1] - self.w_i.shape[0]

    def tensors(self) -> dict:
        return {"w_i": self.w_i, "w_f": self.w_f, "w_o": self.w_o, "w_c": self.w_c,
                "b_i": self.b_i, "b_f": self.b_f, "b_o": self.b_o, "b_c": self.b_c}


@dataclass
class AttentionParams:
    """Multi-head self-attention projections plus the output mix."""
    theta_q: list  # per head: d_model x d_k
    theta_k: list
    theta_v: list
    w_mix: Tensor  # (n_heads * d_k) x d_model

    @property
    def n_heads(self) -> int:
        return len(self.theta_q)

    @property
    def d_model(self) -> int:
        return self.theta_q[0].shape[0]

    @property
    def d_k(self) -> int:
        return self.theta_q[0].shape[1]

    def tensors(self) -> dict:
        out = {"w_mix": self.w_mix}
        for i in range(self.n_heads):
            out[f"theta_q{i}"] = self.theta_q[i]
            out[f"theta_k{i}"] = self.theta_k[i]
            out[f"theta_v{i}"] = self.theta_v[i]
        return out


def gru_cell(x_t: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One gated-recurrent step: convex mix of the previous state and a candidate."""
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = x_t.reshape(1, -1)
        h_prev = h_prev.reshape(1, -1)
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise DimensionError(
            f"gru_cell got x {x_t.shape}, h {h_prev.shape} for params "
            f"(d={p.input_size}, h={p.hidden_size})")
    xh = concat([x_t, h_prev], axis=-1)
    u = (xh @ p.w_u.swapaxes(0, 1) + p.b_u).sigmoid()
    r = (xh @ p.w_r.swapaxes(0, 1) + p.b_r).sigmoid()
    xrh = concat([x_t, r * h_prev], axis=-1)
    c = (xrh @ p.w_c.swapaxes(0, 1) + p.b_c).tanh()
    h = u * h_prev + (1.0 - u) * c
    return h.reshape(-1) if squeeze else h


def gru_sequence(x: Tensor, params: Sequence[GruParams]) -> Tensor:
    """Run a stacked GRU over a [t x d] (or [B x t x d]) sequence.

    Returns the top layer's hidden state at every step, starting from zero
    states; layer l consumes layer l-1 outputs.
    """
    if not params:
        raise ContractError("gru_sequence needs at least one layer")
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    batch, t = x.shape[0], x.shape[1]
    if t < 1:
        raise ContractError("gru_sequence got an empty sequence")
    steps = [x[:, tau] for tau in range(t)]
    for p in params:
        h = Tensor(np.zeros((batch, p.hidden_size)))
        outs = []
        for x_t in steps:
            h = gru_cell(x_t, h, p)
            outs.append(h)
        steps = outs
    out = stack(steps, axis=1)
    return out.reshape(t, -1) if squeeze else out


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams):
    """Standard gated memory cell (no peepholes); returns (h_t, c_t)."""
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = x_t.reshape(1, -1)
        h_prev = h_prev.reshape(1, -1)
        c_prev = c_prev.reshape(1, -1)
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise DimensionError(
            f"lstm_cell got x {x_t.shape}, h {h_prev.shape} for params "
            f"(d={p.input_size}, h={p.hidden_size})")
    xh = concat([x_t, h_prev], axis=-1)
    f = (xh @ p.w_f.swapaxes(0, 1) + p.b_f).sigmoid()
    i = (xh @ p.w_i.swapaxes(0, 1) + p.b_i).sigmoid()
    o = (xh @ p.w_o.swapaxes(0, 1) + p.b_o).sigmoid()
    c_tilde = (xh @ p.w_c.swapaxes(0, 1) + p.b_c).tanh()
    c = f * c_prev + i * c_tilde
    h = o * c.tanh()
    if squeeze:
        return h.reshape(-1), c.reshape(-1)
    return h, c


def lstm_sequence(x: Tensor, p: LstmParams) -> Tensor:
    """Run the cell over a [t x d] (or [B x t x d]) sequence from zero states;
    return the final hidden state."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    batch, t = x.shape[0], x.shape[1]
    if t < 1:
        raise ContractError("lstm_sequence got an empty sequence")
    h = Tensor(np.zeros((batch, p.hidden_size)))
    c = Tensor(np.zeros((batch, p.hidden_size)))
    for tau in range(t):
        h, c = lstm_cell(x[:, tau], h, c, p)
    return h.reshape(-1) if squeeze else h


def mlp_forward(x: Tensor, layers: Sequence[tuple]) -> Tensor:
    """Chain of (W [in x out], b [out], activation-or-None) layers."""
    y = x
    for w, b, act in layers:
        if y.shape[-1] != w.shape[0]:
            raise DimensionError(f"mlp layer expects input {w.shape[0]}, got {y.shape}")
        squeeze = y.ndim == 1
        if squeeze:
            y = y.reshape(1, -1)
        y = y @ w + b
        if squeeze:
            y = y.reshape(-1)
        if act is not None:
            y = act(y)
    return y


def positional_encoding(t: int, d_model: int) -> np.ndarray:
    """Sinusoidal position vector: sin at even indices, cos at odd ones."""
    pe = np.zeros(d_model)
    idx = np.arange(0, d_model, 2)
    freq = 1.0 / np.power(10000.0, idx / d_model)
    pe[0::2] = np.sin(t * freq)
    pe[1::2] = np.cos(t * freq[: pe[1::2].size])
    return pe


def positional_encoding_matrix(t: int, d_model: int) -> np.ndarray:
    return np.stack([positional_encoding(tau, d_model) for tau in range(t)])


def self_attention(e: Tensor, p: AttentionParams) -> Tensor:
    """Scaled dot-product multi-head self-attention over a [T x d_model] sequence."""
    squeeze = e.ndim == 2
    if squeeze:
        e = e.reshape(1, *e.shape)
    if e.shape[-1] != p.d_model:
        raise DimensionError(f"attention expects d_model={p.d_model}, got {e.shape}")
    scale = 1.0 / math.sqrt(p.d_k)
    heads = []
    for tq, tk, tv in zip(p.theta_q, p.theta_k, p.theta_v):
        q = e @ tq
        k = e @ tk
        v = e @ tv
        weights = ((q @ k.swapaxes(-1, -2)) * scale).softmax(axis=-1)
        heads.append(weights @ v)
    out = concat(heads, axis=-1) @ p.w_mix
    return out.reshape(out.shape[1], out.shape[2]) if squeeze else out
