"""The similarity-evolution ranking model.

Pipeline per user pair: shared GRU embeds each user's action sequence, the
hidden state is concatenated with the static profile at every timestep,
a multi-view generalized dot product turns the two per-timestep embeddings
into a similarity vector, an LSTM summarizes the similarity sequence, and a
sigmoid head (fed the pairwise link features) produces the request
probability. Trained with binary cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .autograd import Tensor, concat
from .errors import ContractError, DimensionError
from .layers import GruParams, LstmParams, gru_sequence, lstm_sequence

VARIANTS = ("dsen", "dsen_att", "mlp", "gru", "attn")


@dataclass
class ModelConfig:
    """Architecture dimensions shared by the model and its baselines."""
    variant: str = "dsen"
    d_s: int = 55       # sequence features per day
    d_p: int = 68       # profile features
    t: int = 15         # window length, days
    d_l: int = 8        # pairwise link features
    gru_hidden: int = 64
    gru_layers: int = 2
    views: int = 32     # similarity views k
    evo_hidden: int = 64
    attn_heads: int = 1
    mlp_hidden: tuple = (128, 64, 32)

    @property
    def m(self) -> int:
        """Per-timestep embedding width: GRU hidden plus profile."""
        return self.gru_hidden + self.d_p

    def desk_scale(self) -> "ModelConfig":
        """Shrunken dimensions for laptop-speed experiments.

        The MLP baseline width is chosen for rough parameter parity with the
        desk-scale main model (~7k weights each)."""
        return replace(self, gru_hidden=16, views=8, evo_hidden=16,
                       mlp_hidden=(8, 8))


@dataclass
class PairBatch:
    """A batch of user-pair instances as plain arrays."""
    s_i: np.ndarray   # B x t x d_s
    r_i: np.ndarray   # B x d_p
    s_j: np.ndarray
    r_j: np.ndarray
    link: np.ndarray  # B x d_l
    y: Optional[np.ndarray] = None  # B, in {0,1}

    def __len__(self) -> int:
        return self.s_i.shape[0]


@dataclass
class DsenParams:
    variant = "dsen"
    gru: list            # GruParams per layer, shared by both towers
    v: Tensor            # m x k similarity views
    b: Tensor            # k
    evolution: LstmParams
    head_w: Tensor       # (evo_hidden + d_l) x 1
    head_b: Tensor       # 1

    def tensors(self) -> dict:
        out = {}
        for i, g in enumerate(self.gru):
            for name, t in g.tensors().items():
                out[f"gru{i}.{name}"] = t
        out["views.v"] = self.v
        out["views.b"] = self.b
        for name, t in self.evolution.tensors().items():
            out[f"evo.{name}"] = t
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


def window_sequence(s: np.ndarray, t: int) -> np.ndarray:
    """Keep the most recent t rows; left-pad with zero rows when shorter."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] >= t:
        return s[-t:]
    pad = np.zeros((t - s.shape[0], s.shape[1]))
    return np.concatenate([pad, s], axis=0)


def embed_timesteps(s: np.ndarray, r: np.ndarray, p: DsenParams, t: int) -> Tensor:
    """Per-timestep user embedding: GRU hidden state concatenated with the profile."""
    s = window_sequence(s, t)
    if s.shape[1] != p.gru[0].input_size:
        raise DimensionError(f"sequence width {s.shape[1]} != GRU input {p.gru[0].input_size}")
    h = gru_sequence(Tensor(s), p.gru)
    r = np.asarray(r, dtype=np.float64)
    profile = Tensor(np.broadcast_to(r, (t, r.shape[0])).copy())
    return concat([h, profile], axis=-1)


def multiview_similarity(e_i: Tensor, e_j: Tensor, v: Tensor, b: Tensor) -> Tensor:
    """k-view similarity g = ReLU(V^T (e_i ⊙ e_j) + b).

    The pre-activation in view k is sum_p v^k_p e_ip e_jp, a bilinear form
    with diagonal weight matrix diag(v^k).
    """
    e_i = Tensor._lift(e_i)
    e_j = Tensor._lift(e_j)
    if e_i.shape != e_j.shape:
        raise DimensionError(f"embedding shapes differ: {e_i.shape} vs {e_j.shape}")
    if e_i.shape[-1] != v.shape[0]:
        raise DimensionError(f"embedding width {e_i.shape[-1]} != view rows {v.shape[0]}")
    z = e_i * e_j
    squeeze = z.ndim == 1
    if squeeze:
        z = z.reshape(1, -1)
    g = (z @ v + b).relu()
    return g.reshape(-1) if squeeze else g


def similarity_evolution(g: Tensor, p: LstmParams) -> Tensor:
    """Summarize the t x k similarity sequence into its final LSTM hidden state."""
    return lstm_sequence(g, p)


def predict(g_evo: Tensor, link, head_w: Tensor, head_b: Tensor) -> Tensor:
    """Request probability: sigmoid single-layer head over [evolution ∥ link]."""
    link = Tensor._lift(link)
    x = concat([g_evo, link], axis=-1)
    if x.shape[-1] != head_w.shape[0]:
        raise DimensionError(f"head expects {head_w.shape[0]} inputs, got {x.shape[-1]}")
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    p = (x @ head_w + head_b).sigmoid()
    return p.reshape(-1)[0] if squeeze else p.reshape(-1)


def _tile_profile(r: np.ndarray, t: int) -> np.ndarray:
    return np.broadcast_to(r[:, None, :], (r.shape[0], t, r.shape[1])).copy()


def dsen_embed_pair(batch: PairBatch, p: DsenParams, t: int):
    """Both towers' per-timestep embeddings; one stacked GRU pass (shared weights)."""
    stacked = np.concatenate([batch.s_i, batch.s_j], axis=0)
    h = gru_sequence(Tensor(stacked), p.gru)
    n = len(batch)
    profiles = Tensor(np.concatenate(
        [_tile_profile(np.asarray(batch.r_i, dtype=np.float64), t),
         _tile_profile(np.asarray(batch.r_j, dtype=np.float64), t)], axis=0))
    e = concat([h, profiles], axis=-1)
    return e[:n], e[n:]


def dsen_similarity_sequence(batch: PairBatch, p: DsenParams, t: int) -> Tensor:
    e_i, e_j = dsen_embed_pair(batch, p, t)
    return multiview_similarity(e_i, e_j, p.v, p.b)


def dsen_forward(batch: PairBatch, p: DsenParams, t: Optional[int] = None) -> Tensor:
    """Full forward pass; returns a (B,) Tensor of probabilities in (0,1)."""
    t = batch.s_i.shape[1] if t is None else t
    g_seq = dsen_similarity_sequence(batch, p, t)
    g_evo = similarity_evolution(g_seq, p.evolution)
    return predict(g_evo, np.asarray(batch.link, dtype=np.float64), p.head_w, p.head_b)


def bce_loss(preds: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped away from 0/1."""
    preds = Tensor._lift(preds)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ContractError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    p = preds.clip(1e-12, 1.0 - 1e-12)
    losses = -(Tensor(labels) * p.log() + Tensor(1.0 - labels) * (1.0 - p).log())
    return losses.mean()
