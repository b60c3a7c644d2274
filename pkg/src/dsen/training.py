"""Parameter initialization, Adam, and the training loop with early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autograd import Tensor, no_grad
from .baselines import (AttnBaselineParams, DsenAttParams, GruBaselineParams,
                        MlpParams, forward)
from .errors import ContractError, TrainingDivergenceError
from .layers import AttentionParams, GruParams, LstmParams
from .model import DsenParams, ModelConfig, bce_loss
from .evaluation import auc


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.01
    max_epochs: int = 8
    patience: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.patience < 1:
            raise ContractError("invalid training configuration")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        defaults = dict(batch_size=16384, learning_rate=0.01, max_epochs=8)
        defaults.update(overrides)
        return cls(**defaults)


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)        # per-epoch training loss
    val_aucs: list = field(default_factory=list)      # per-epoch validation AUC
    stopped_epoch: int = 0
    best_epoch: int = 0
    wall_time: float = 0.0


def glorot(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    """Fan-average uniform initialization."""
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


def zeros_param(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_params(shapes: dict, seed: int) -> dict:
    """Weights (2-D) drawn fan-average uniform, biases (1-D) zero; deterministic."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in shapes.items():
        if len(shape) == 2:
            out[name] = glorot(rng, *shape)
        else:
            out[name] = zeros_param(*shape)
    return out


def _init_gru_stack(rng, d_in: int, hidden: int, layers: int) -> list:
    stack = []
    for layer in range(layers):
        d = d_in if layer == 0 else hidden
        stack.append(GruParams(
            w_u=glorot(rng, hidden, d + hidden),
            w_r=glorot(rng, hidden, d + hidden),
            w_c=glorot(rng, hidden, d + hidden),
            b_u=zeros_param(hidden), b_r=zeros_param(hidden), b_c=zeros_param(hidden)))
    return stack


def _init_lstm(rng, d_in: int, hidden: int) -> LstmParams:
    def w():
        return glorot(rng, hidden, d_in + hidden)
    return LstmParams(w_i=w(), w_f=w(), w_o=w(), w_c=w(),
                      b_i=zeros_param(hidden), b_f=zeros_param(hidden),
                      b_o=zeros_param(hidden), b_c=zeros_param(hidden))


def _init_attention(rng, d_model: int, heads: int) -> AttentionParams:
    if d_model % heads:
        raise ContractError(f"{heads} heads do not divide d_model={d_model}")
    d_k = d_model // heads
    return AttentionParams(
        theta_q=[glorot(rng, d_model, d_k) for _ in range(heads)],
        theta_k=[glorot(rng, d_model, d_k) for _ in range(heads)],
        theta_v=[glorot(rng, d_model, d_k) for _ in range(heads)],
        w_mix=glorot(rng, heads * d_k, d_model))


def build_params(cfg: ModelConfig, seed: int):
    """Construct a freshly initialized parameter bundle for any variant."""
    rng = np.random.default_rng(seed)
    if cfg.variant == "dsen":
        return DsenParams(
            gru=_init_gru_stack(rng, cfg.d_s, cfg.gru_hidden, cfg.gru_layers),
            v=glorot(rng, cfg.m, cfg.views),
            b=zeros_param(cfg.views),
            evolution=_init_lstm(rng, cfg.views, cfg.evo_hidden),
            head_w=glorot(rng, cfg.evo_hidden + cfg.d_l, 1),
            head_b=zeros_param(1))
    if cfg.variant == "dsen_att":
        return DsenAttParams(
            gru=_init_gru_stack(rng, cfg.d_s, cfg.gru_hidden, cfg.gru_layers),
            v=glorot(rng, cfg.m, cfg.views),
            b=zeros_param(cfg.views),
            attn=_init_attention(rng, cfg.views, cfg.attn_heads),
            ff_w1=glorot(rng, cfg.views, cfg.views), ff_b1=zeros_param(cfg.views),
            ff_w2=glorot(rng, cfg.views, cfg.views), ff_b2=zeros_param(cfg.views),
            head_w=glorot(rng, cfg.views + cfg.d_l, 1),
            head_b=zeros_param(1))
    if cfg.variant == "mlp":
        widths = [2 * (cfg.t * cfg.d_s + cfg.d_p) + cfg.d_l, *cfg.mlp_hidden]
        hidden = [(glorot(rng, widths[i], widths[i + 1]), zeros_param(widths[i + 1]))
                  for i in range(len(widths) - 1)]
        return MlpParams(hidden=hidden,
                         head_w=glorot(rng, widths[-1], 1), head_b=zeros_param(1))
    if cfg.variant == "gru":
        return GruBaselineParams(
            gru=_init_gru_stack(rng, cfg.d_s, cfg.gru_hidden, cfg.gru_layers),
            head_w=glorot(rng, 2 * (cfg.gru_hidden + cfg.d_p) + cfg.d_l, 1),
            head_b=zeros_param(1))
    if cfg.variant == "attn":
        return AttnBaselineParams(
            attn=_init_attention(rng, cfg.d_s, cfg.attn_heads),
            head_w=glorot(rng, 2 * (cfg.d_s + cfg.d_p) + cfg.d_l, 1),
            head_b=zeros_param(1))
    raise ContractError(f"unknown variant {cfg.variant!r}")


class AdamState:
    def __init__(self):
        self.m: dict = {}
        self.v: dict = {}
        self.step = 0


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """One Adam update with bias correction; mutates params in place."""
    state.step += 1
    t = state.step
    for name, tens in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != tens.data.shape:
            raise ContractError(f"gradient shape {g.shape} != param shape "
                                f"{tens.data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(tens.data)
            state.v[name] = np.zeros_like(tens.data)
        v = state.v[name]
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        tens.data = tens.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params, state


def _snapshot(tensors: dict) -> dict:
    return {name: t.data.copy() for name, t in tensors.items()}


def _restore(tensors: dict, snap: dict):
    for name, t in tensors.items():
        t.data = snap[name].copy()


def validation_auc(params, dataset, batch_size: int = 4096) -> float:
    idx = dataset.split_indices("val")
    scores = np.empty(len(idx))
    with no_grad():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            scores[start:start + len(chunk)] = forward(dataset.batch(chunk), params).data
    return auc(scores, dataset.y[idx])


def train(dataset, model_cfg: ModelConfig, cfg: TrainConfig,
          val_metric_fn: Optional[Callable] = None,
          log: Optional[Callable[[str], None]] = None):
    """Minibatch Adam training with AUC early stopping.

    Stops once validation AUC has failed to exceed the best seen for
    `patience` consecutive epochs; returns the best-epoch parameters.
    `val_metric_fn(params, epoch)` overrides the validation metric (testing hook).
    """
    train_idx = dataset.split_indices("train")
    if len(train_idx) == 0 or (val_metric_fn is None
                               and len(dataset.split_indices("val")) == 0):
        raise ContractError("dataset has empty train or validation split")

    params = build_params(model_cfg, cfg.seed)
    tensors = params.tensors()
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_auc = -np.inf
    best_snap = _snapshot(tensors)
    stale = 0
    started = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = dataset.batch(order[start:start + cfg.batch_size])
            preds = forward(batch, params)
            loss = bce_loss(preds, batch.y)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergenceError(epoch, start // cfg.batch_size, value)
            for t in tensors.values():
                t.zero_grad()
            loss.backward()
            grads = {name: t.grad for name, t in tensors.items() if t.grad is not None}
            adam_step(tensors, grads, state, cfg)
            losses.append(value)
        history.losses.append(float(np.mean(losses)))

        if val_metric_fn is not None:
            epoch_auc = float(val_metric_fn(params, epoch))
        else:
            epoch_auc = validation_auc(params, dataset, cfg.batch_size)
        history.val_aucs.append(epoch_auc)
        if log:
            log(f"epoch {epoch} loss {history.losses[-1]:.6f} val_auc {epoch_auc:.6f}")

        if epoch_auc > best_auc:
            best_auc = epoch_auc
            history.best_epoch = epoch
            best_snap = _snapshot(tensors)
            stale = 0
        else:
            stale += 1
        history.stopped_epoch = epoch
        if stale >= cfg.patience:
            break

    _restore(tensors, best_snap)
    history.wall_time = time.perf_counter() - started
    return params, history


def write_history(history: TrainHistory, path):
    with open(path, "w") as fh:
        fh.write("epoch loss val_auc\n")
        for i, (loss, a) in enumerate(zip(history.losses, history.val_aucs), start=1):
            fh.write(f"{i} {loss:.12g} {a:.12g}\n")
        fh.write(f"# best_epoch {history.best_epoch} "
                 f"stopped_epoch {history.stopped_epoch}\n")
