"""Comparison models trained under the same BCE loss.

mlp: everything flattened into one fully-connected ReLU stack.
gru: per-tower GRU final state, profiles and link features into a linear head.
attn: the gru baseline with self-attention (plus positional encoding) as the
      sequence encoder, pooled at the last position.
dsen_att: the main model with the evolution LSTM swapped for self-attention,
      positional encoding and a pointwise feed-forward block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .autograd import Tensor, concat
from .errors import ContractError
from .layers import (AttentionParams, GruParams, gru_sequence, mlp_forward,
                     positional_encoding_matrix, self_attention)
from .model import DsenParams, ModelConfig, PairBatch, dsen_forward, \
    dsen_similarity_sequence, predict


@dataclass
class MlpParams:
    variant = "mlp"
    hidden: list          # (W [in x out], b [out]) per ReLU layer
    head_w: Tensor
    head_b: Tensor

    def tensors(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.hidden):
            out[f"hidden{i}.w"] = w
            out[f"hidden{i}.b"] = b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


@dataclass
class GruBaselineParams:
    variant = "gru"
    gru: list             # GruParams per layer, shared by both towers
    head_w: Tensor
    head_b: Tensor

    def tensors(self) -> dict:
        out = {}
        for i, g in enumerate(self.gru):
            for name, t in g.tensors().items():
                out[f"gru{i}.{name}"] = t
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


@dataclass
class AttnBaselineParams:
    variant = "attn"
    attn: AttentionParams  # d_model = d_s, shared by both towers
    head_w: Tensor
    head_b: Tensor

    def tensors(self) -> dict:
        out = {f"attn.{k}": v for k, v in self.attn.tensors().items()}
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


@dataclass
class DsenAttParams:
    variant = "dsen_att"
    gru: list
    v: Tensor
    b: Tensor
    attn: AttentionParams  # d_model = number of views
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    head_w: Tensor
    head_b: Tensor

    def tensors(self) -> dict:
        out = {}
        for i, g in enumerate(self.gru):
            for name, t in g.tensors().items():
                out[f"gru{i}.{name}"] = t
        out["views.v"] = self.v
        out["views.b"] = self.b
        out.update({f"attn.{k}": v for k, v in self.attn.tensors().items()})
        out["ff.w1"] = self.ff_w1
        out["ff.b1"] = self.ff_b1
        out["ff.w2"] = self.ff_w2
        out["ff.b2"] = self.ff_b2
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


AnyParams = Union[DsenParams, MlpParams, GruBaselineParams, AttnBaselineParams,
                  DsenAttParams]


def _flatten_pair(batch: PairBatch) -> np.ndarray:
    n = len(batch)
    return np.concatenate(
        [batch.s_i.reshape(n, -1), batch.r_i,
         batch.s_j.reshape(n, -1), batch.r_j, batch.link], axis=1)


def mlp_baseline_forward(batch: PairBatch, p: MlpParams) -> Tensor:
    x = Tensor(_flatten_pair(batch))
    layers = [(w, b, Tensor.relu) for w, b in p.hidden]
    layers.append((p.head_w, p.head_b, Tensor.sigmoid))
    return mlp_forward(x, layers).reshape(-1)


def _head_probability(h_i, r_i, h_j, r_j, link, head_w, head_b) -> Tensor:
    x = concat([h_i, Tensor(r_i), h_j, Tensor(r_j), Tensor(link)], axis=-1)
    return (x @ head_w + head_b).sigmoid().reshape(-1)


def gru_baseline_forward(batch: PairBatch, p: GruBaselineParams) -> Tensor:
    stacked = np.concatenate([batch.s_i, batch.s_j], axis=0)
    h = gru_sequence(Tensor(stacked), p.gru)[:, -1]
    n = len(batch)
    return _head_probability(h[:n], batch.r_i, h[n:], batch.r_j, batch.link,
                             p.head_w, p.head_b)


def attention_baseline_forward(batch: PairBatch, p: AttnBaselineParams) -> Tensor:
    t, d_s = batch.s_i.shape[1], batch.s_i.shape[2]
    pe = positional_encoding_matrix(t, d_s)
    stacked = np.concatenate([batch.s_i, batch.s_j], axis=0) + pe
    h = self_attention(Tensor(stacked), p.attn)[:, -1]
    n = len(batch)
    return _head_probability(h[:n], batch.r_i, h[n:], batch.r_j, batch.link,
                             p.head_w, p.head_b)


def dsen_att_forward(batch: PairBatch, p: DsenAttParams) -> Tensor:
    t = batch.s_i.shape[1]
    dsen_view = DsenParams(gru=p.gru, v=p.v, b=p.b, evolution=None,
                           head_w=None, head_b=None)
    g_seq = dsen_similarity_sequence(batch, dsen_view, t)
    pe = Tensor(positional_encoding_matrix(t, p.v.shape[1]))
    attended = self_attention(g_seq + pe, p.attn)[:, -1]
    ff = ((attended @ p.ff_w1 + p.ff_b1).relu()) @ p.ff_w2 + p.ff_b2
    return predict(ff, batch.link.astype(np.float64), p.head_w, p.head_b)


def forward(batch: PairBatch, params: AnyParams) -> Tensor:
    """Dispatch a batch through whichever variant `params` belongs to."""
    if isinstance(params, DsenParams):
        return dsen_forward(batch, params)
    if isinstance(params, MlpParams):
        return mlp_baseline_forward(batch, params)
    if isinstance(params, GruBaselineParams):
        return gru_baseline_forward(batch, params)
    if isinstance(params, AttnBaselineParams):
        return attention_baseline_forward(batch, params)
    if isinstance(params, DsenAttParams):
        return dsen_att_forward(batch, params)
    raise ContractError(f"unknown parameter bundle {type(params).__name__}")
