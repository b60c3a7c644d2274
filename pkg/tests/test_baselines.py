import numpy as np
import pytest

from dsen.autograd import Tensor, grad_check
from dsen.baselines import (AttnBaselineParams, DsenAttParams,
                            GruBaselineParams, MlpParams,
                            attention_baseline_forward, dsen_att_forward,
                            forward, gru_baseline_forward,
                            mlp_baseline_forward)
from dsen.errors import ContractError
from dsen.layers import self_attention
from dsen.model import (DsenParams, ModelConfig, PairBatch, bce_loss,
                        dsen_similarity_sequence)
from dsen.training import build_params

SMALL = ModelConfig(d_s=3, d_p=2, t=4, d_l=2, gru_hidden=3, gru_layers=1,
                    views=2, evo_hidden=3, attn_heads=1, mlp_hidden=(6, 4))


def random_batch(cfg: ModelConfig, n: int, seed: int = 0) -> PairBatch:
    rng = np.random.default_rng(seed)
    return PairBatch(
        s_i=rng.normal(size=(n, cfg.t, cfg.d_s)),
        r_i=rng.normal(size=(n, cfg.d_p)),
        s_j=rng.normal(size=(n, cfg.t, cfg.d_s)),
        r_j=rng.normal(size=(n, cfg.d_p)),
        link=rng.normal(size=(n, cfg.d_l)),
        y=rng.integers(0, 2, size=n).astype(np.float64),
    )


def zeroed(cfg, variant):
    from dataclasses import replace
    p = build_params(replace(cfg, variant=variant), seed=0)
    for t in p.tensors().values():
        t.data[...] = 0.0
    return p


def built(cfg, variant, seed=0):
    from dataclasses import replace
    return build_params(replace(cfg, variant=variant), seed=seed)


class TestMlpBaseline:
    def test_zero_weights_give_half(self):
        p = zeroed(SMALL, "mlp")
        out = mlp_baseline_forward(random_batch(SMALL, 3), p)
        assert np.array_equal(out.data, [0.5, 0.5, 0.5])

    def test_input_flatten_length(self):
        cfg = ModelConfig()
        p = built(cfg, "mlp")
        assert p.hidden[0][0].shape[0] == 2 * (15 * 55 + 68) + cfg.d_l

    def test_matches_hand_composed_oracle(self):
        p = built(SMALL, "mlp", seed=1)
        batch = random_batch(SMALL, 2, seed=1)
        got = mlp_baseline_forward(batch, p).data
        n = 2
        x = np.concatenate([batch.s_i.reshape(n, -1), batch.r_i,
                            batch.s_j.reshape(n, -1), batch.r_j,
                            batch.link], axis=1)
        for w, b in p.hidden:
            x = np.maximum(x @ w.data + b.data, 0.0)
        logits = (x @ p.head_w.data + p.head_b.data).reshape(-1)
        want = 1.0 / (1.0 + np.exp(-logits))
        assert np.max(np.abs(got - want)) < 1e-12


class TestGruBaseline:
    def test_zero_head_gives_half(self):
        p = built(SMALL, "gru", seed=2)
        p.head_w.data[...] = 0.0
        p.head_b.data[...] = 0.0
        out = gru_baseline_forward(random_batch(SMALL, 2, seed=2), p)
        assert np.array_equal(out.data, [0.5, 0.5])

    def test_zero_gru_leaves_profiles_and_link(self):
        p = zeroed(SMALL, "gru")
        rng = np.random.default_rng(3)
        p.head_w.data[...] = rng.normal(size=p.head_w.shape)
        batch = random_batch(SMALL, 2, seed=3)
        got = gru_baseline_forward(batch, p).data
        # towers are zero, so only the profile/link slice of the head matters
        x = np.concatenate([np.zeros((2, 3)), batch.r_i, np.zeros((2, 3)),
                            batch.r_j, batch.link], axis=1)
        want = 1.0 / (1.0 + np.exp(-(x @ p.head_w.data).reshape(-1)))
        assert np.max(np.abs(got - want)) < 1e-12

    def test_single_step_window(self):
        from dataclasses import replace
        cfg = replace(SMALL, t=1)
        p = built(cfg, "gru", seed=4)
        out = gru_baseline_forward(random_batch(cfg, 3, seed=4), p)
        assert out.shape == (3,)
        assert np.all((out.data > 0) & (out.data < 1))


class TestAttentionBaseline:
    def test_matches_naive_end_to_end(self):
        from dsen.layers import positional_encoding_matrix
        p = built(SMALL, "attn", seed=5)
        batch = random_batch(SMALL, 1, seed=5)
        got = attention_baseline_forward(batch, p).data
        pe = positional_encoding_matrix(SMALL.t, SMALL.d_s)
        pooled = []
        for s in (batch.s_i[0], batch.s_j[0]):
            h = self_attention(Tensor(s + pe), p.attn).data
            pooled.append(h[-1])
        x = np.concatenate([pooled[0], batch.r_i[0], pooled[1], batch.r_j[0],
                            batch.link[0]])
        want = 1.0 / (1.0 + np.exp(-(x @ p.head_w.data + p.head_b.data)))
        assert abs(got[0] - want.item()) < 1e-10

    def test_identical_rows_make_length_irrelevant(self):
        from dataclasses import replace
        rng = np.random.default_rng(6)
        row_i = rng.normal(size=SMALL.d_s)
        row_j = rng.normal(size=SMALL.d_s)
        r_i = rng.normal(size=(1, SMALL.d_p))
        r_j = rng.normal(size=(1, SMALL.d_p))
        link = rng.normal(size=(1, SMALL.d_l))
        outs = []
        for t in (1, 4):
            cfg = replace(SMALL, t=t)
            p = built(cfg, "attn", seed=6)
            # identical rows and no positional encoding: output is length-free
            batch = PairBatch(s_i=np.tile(row_i, (1, t, 1)), r_i=r_i,
                              s_j=np.tile(row_j, (1, t, 1)), r_j=r_j, link=link)
            pooled_i = self_attention(Tensor(np.tile(row_i, (t, 1))), p.attn).data[-1]
            outs.append(pooled_i)
        assert np.max(np.abs(outs[0] - outs[1])) < 1e-12

    def test_output_range(self):
        p = built(SMALL, "attn", seed=7)
        out = attention_baseline_forward(random_batch(SMALL, 8, seed=7), p).data
        assert np.all((out > 0) & (out < 1))


class TestDsenAtt:
    def test_zero_params_give_half(self):
        p = zeroed(SMALL, "dsen_att")
        out = dsen_att_forward(random_batch(SMALL, 2, seed=8), p)
        assert np.array_equal(out.data, [0.5, 0.5])

    def test_shares_similarity_stage_with_dsen(self):
        dsen = built(SMALL, "dsen", seed=9)
        att = built(SMALL, "dsen_att", seed=9)
        for g_a, g_d in zip(att.gru, dsen.gru):
            for name, t in g_d.tensors().items():
                g_a.tensors()[name].data[...] = t.data
        att.v.data[...] = dsen.v.data
        att.b.data[...] = dsen.b.data
        batch = random_batch(SMALL, 3, seed=9)
        g_dsen = dsen_similarity_sequence(batch, dsen, SMALL.t).data
        view = DsenParams(gru=att.gru, v=att.v, b=att.b, evolution=None,
                          head_w=None, head_b=None)
        g_att = dsen_similarity_sequence(batch, view, SMALL.t).data
        assert np.array_equal(g_dsen, g_att)

    def test_output_range(self):
        p = built(SMALL, "dsen_att", seed=10)
        out = dsen_att_forward(random_batch(SMALL, 8, seed=10), p).data
        assert np.all((out > 0) & (out < 1))


class TestDispatchAndGradients:
    def test_forward_dispatches_by_bundle(self):
        batch = random_batch(SMALL, 2, seed=11)
        for variant in ("dsen", "mlp", "gru", "attn", "dsen_att"):
            p = built(SMALL, variant, seed=11)
            out = forward(batch, p)
            assert out.shape == (2,)
            assert np.all((out.data > 0) & (out.data < 1))

    def test_unknown_bundle_rejected(self):
        with pytest.raises(ContractError):
            forward(random_batch(SMALL, 1), object())

    @pytest.mark.parametrize("variant", ["mlp", "gru", "attn", "dsen_att"])
    def test_gradients(self, variant):
        from dataclasses import replace
        cfg = replace(SMALL, mlp_hidden=(4,))
        p = built(cfg, variant, seed=12)
        batch = random_batch(cfg, 2, seed=12)
        params = list(p.tensors().values())
        f = lambda: bce_loss(forward(batch, p), batch.y)
        assert grad_check(f, params) < 1e-4
