"""Acceptance gate: one test per release criterion, each printing a
PASS/FAIL line with the measured value (run with -s to see them live).

Criteria 4 and 5 share one set of training runs (3 seeds x 5 variants on a
10,000-user dataset), cached in a module fixture.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from dsen.autograd import Tensor, grad_check
from dsen.cli import cli
from dsen.data import GenConfig, generate_synthetic, sample_negatives, \
    temporal_split
from dsen.evaluation import auc, hit_at_k, ndcg_at_k, RankedSuggestions
from dsen.layers import (gru_cell, gru_sequence, lstm_cell, lstm_sequence,
                         mlp_forward, self_attention)
from dsen.model import ModelConfig, PairBatch, bce_loss, dsen_forward
from dsen.pipeline import RetrievalConfig, default_population, suggest
from dsen.training import (TrainConfig, _init_attention, _init_gru_stack,
                           _init_lstm, build_params, train)


def report(criterion: str, passed: bool, detail: str):
    status = "PASS" if passed else "FAIL"
    print(f"\n[{status}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


# -- criterion 1: bilinear-identity oracle --------------------------------------

def test_criterion_1_bilinear_identity():
    rng = np.random.default_rng(0)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 17))
        k = int(rng.integers(1, 9))
        e_i = rng.normal(size=m)
        e_j = rng.normal(size=m)
        v = rng.normal(size=(m, k))
        b = rng.normal(size=k)
        fast = (Tensor(e_i) * Tensor(e_j)).reshape(1, -1) @ Tensor(v)
        fast = fast.data[0] + b
        slow = np.array([sum(e_i[p] * v[p, col] * e_j[p] for p in range(m))
                         for col in range(k)]) + b
        denom = np.maximum(np.abs(slow), 1e-8)
        worst = max(worst, float(np.max(np.abs(fast.ravel() - slow) / denom)))
    elapsed = time.perf_counter() - started
    report("criterion 1 (bilinear identity, 1000 cases)",
           worst < 1e-10 and elapsed < 5.0,
           f"max rel err {worst:.3e}, {elapsed:.2f}s")


# -- criterion 2: gradient certification -----------------------------------------

def test_criterion_2_gradient_certification():
    started = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}

    gru = _init_gru_stack(rng, 3, 2, 1)[0]
    x = Tensor(rng.normal(size=3))
    h = Tensor(rng.normal(size=2))
    worst["gru_cell"] = grad_check(lambda: gru_cell(x, h, gru).sum(),
                                   list(gru.tensors().values()))

    stack = _init_gru_stack(rng, 3, 2, 2)
    xs = Tensor(rng.normal(size=(4, 3)))
    worst["gru_sequence"] = grad_check(
        lambda: gru_sequence(xs, stack).sum(),
        [t for p in stack for t in p.tensors().values()])

    lstm = _init_lstm(rng, 3, 2)
    hc = (Tensor(rng.normal(size=2)), Tensor(rng.normal(size=2)))
    worst["lstm_cell"] = grad_check(
        lambda: (lambda pair: (pair[0] + pair[1]).sum())(
            lstm_cell(x, hc[0], hc[1], lstm)),
        list(lstm.tensors().values()))
    worst["lstm_sequence"] = grad_check(
        lambda: lstm_sequence(xs, lstm).sum(), list(lstm.tensors().values()))

    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    worst["mlp"] = grad_check(
        lambda: mlp_forward(xs, [(w, b, Tensor.tanh)]).sum(), [w, b])

    attn = _init_attention(rng, 4, 2)
    e = Tensor(rng.normal(size=(3, 4)))
    worst["self_attention"] = grad_check(
        lambda: self_attention(e, attn).sum(), list(attn.tensors().values()))

    cfg = ModelConfig(d_s=3, d_p=2, t=4, d_l=2, gru_hidden=3, gru_layers=1,
                      views=2, evo_hidden=3)
    params = build_params(cfg, seed=2)
    gen = np.random.default_rng(2)
    batch = PairBatch(s_i=gen.normal(size=(2, 4, 3)), r_i=gen.normal(size=(2, 2)),
                      s_j=gen.normal(size=(2, 4, 3)), r_j=gen.normal(size=(2, 2)),
                      link=gen.normal(size=(2, 2)),
                      y=np.array([1.0, 0.0]))
    worst["dsen_forward+bce"] = grad_check(
        lambda: bce_loss(dsen_forward(batch, params), batch.y),
        list(params.tensors().values()))

    elapsed = time.perf_counter() - started
    peak = max(worst.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    report("criterion 2 (grad_check every layer + composite)",
           peak < 1e-4 and elapsed < 60.0, f"{detail}; {elapsed:.1f}s")


# -- criterion 3: metric unit suite -----------------------------------------------

def test_criterion_3_metric_examples():
    def lst(ids):
        n = len(ids)
        return RankedSuggestions(0, [(c, 1.0 - r / (n + 1))
                                     for r, c in enumerate(ids)])

    checks = []
    checks.append(("hit rank1", hit_at_k([lst(list(range(20)))],
                                         {(0, 0): [0]}, 10) == 1.0))
    checks.append(("hit rank11", hit_at_k([lst(list(range(20)))],
                                          {(0, 0): [10]}, 10) == 0.0))
    checks.append(("hit mean", hit_at_k([lst(list(range(40)))],
                                        {(0, 0): [2, 29]}, 10) == 0.5))
    checks.append(("ndcg rank1", ndcg_at_k([lst([5, 1, 2])],
                                           {(0, 0): [5]}, 10) == 1.0))
    rank2 = ndcg_at_k([lst([9, 5, 1])], {(0, 0): [5]}, 10)
    checks.append(("ndcg rank2=0.63092975", abs(rank2 - 0.63092975) < 1e-8))
    checks.append(("ndcg miss", ndcg_at_k([lst(list(range(30)))],
                                          {(0, 0): [25]}, 10) == 0.0))
    checks.append(("auc perfect", auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0))
    checks.append(("auc 0.75", auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75))
    checks.append(("auc ties", auc([0.5] * 4, [1, 0, 1, 0]) == 0.5))
    failed = [name for name, ok in checks if not ok]
    report("criterion 3 (metric hand examples)", not failed,
           f"{len(checks)} checks" + (f", failed: {failed}" if failed else ""))


# -- criteria 4 & 5: planted-signal ordering and convergence ----------------------

SEEDS = (0, 1, 2)
VARIANTS = ("dsen", "mlp", "gru", "attn", "dsen_att")


@pytest.fixture(scope="module")
def training_runs():
    """hit10[variant][seed], best_auc[variant][seed], losses, per-seed time."""
    from dsen.evaluation import evaluate
    hit10 = {v: {} for v in VARIANTS}
    best_auc = {v: {} for v in VARIANTS}
    losses = {v: {} for v in VARIANTS}
    seed_times = {}
    for seed in SEEDS:
        started = time.perf_counter()
        cfg = GenConfig(n_users=10000, n_days=30)
        ds = temporal_split(generate_synthetic(cfg, seed=seed), seed=seed)
        for variant in VARIANTS:
            mc = replace(ModelConfig().desk_scale(), variant=variant)
            params, hist = train(ds, mc, TrainConfig(seed=seed))
            rep = evaluate(params, ds)
            hit10[variant][seed] = rep.hit[10]
            best_auc[variant][seed] = max(hist.val_aucs)
            losses[variant][seed] = (hist.losses[0], hist.losses[-1])
        seed_times[seed] = time.perf_counter() - started
    return hit10, best_auc, losses, seed_times


def test_criterion_4_dsen_beats_mlp(training_runs):
    hit10, _, _, seed_times = training_runs
    dsen_mean = np.mean([hit10["dsen"][s] for s in SEEDS])
    mlp_mean = np.mean([hit10["mlp"][s] for s in SEEDS])
    ratio = dsen_mean / mlp_mean
    slowest = max(seed_times.values())
    report("criterion 4 (DSEN > MLP HIT@10 by >= 5% rel, 3 seeds)",
           ratio >= 1.05 and slowest < 600.0,
           f"DSEN {dsen_mean:.4f} vs MLP {mlp_mean:.4f} "
           f"(+{(ratio - 1) * 100:.1f}%), slowest seed {slowest:.0f}s "
           "(all 5 variants)")


def test_criterion_5_convergence(training_runs):
    _, best_auc, losses, _ = training_runs
    decreasing = all(last < first
                     for v in VARIANTS for first, last in losses[v].values())
    wins = {v: sum(1 for s in SEEDS if best_auc["dsen"][s] >= best_auc[v][s])
            for v in ("mlp", "gru", "attn")}
    ok = decreasing and all(w >= 2 for w in wins.values())
    report("criterion 5 (loss decreases; DSEN val AUC >= baselines on 2/3 seeds)",
           ok, f"loss decreasing={decreasing}, wins vs baselines {wins}")


# -- criterion 6: early-stopping rule ---------------------------------------------

@pytest.fixture(scope="module")
def small_dataset():
    cfg = GenConfig(n_users=80, n_days=18, active_per_day=20, exposure_size=15)
    return temporal_split(generate_synthetic(cfg, seed=0), seed=0)


def test_criterion_6_early_stopping(small_dataset):
    mc = ModelConfig(variant="mlp", mlp_hidden=(8,)).desk_scale()
    seq = iter([0.60, 0.70, 0.70, 0.69])
    _, h1 = train(small_dataset, mc, TrainConfig(batch_size=128),
                  val_metric_fn=lambda p, e: next(seq))
    inc = iter([0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85])
    _, h2 = train(small_dataset, mc, TrainConfig(batch_size=128, max_epochs=8),
                  val_metric_fn=lambda p, e: next(inc))
    ok = (h1.stopped_epoch == 4 and h1.best_epoch == 2
          and h2.stopped_epoch == 8 and h2.best_epoch == 8)
    report("criterion 6 (early-stopping rule)", ok,
           f"plateau: stop {h1.stopped_epoch} best {h1.best_epoch}; "
           f"increasing: stop {h2.stopped_epoch} best {h2.best_epoch}")


# -- criterion 7: sampling contract -----------------------------------------------

def test_criterion_7_sampling_ratio():
    rng = np.random.default_rng(3)
    exact = 0
    for _ in range(1000):
        n_exposed = int(rng.integers(30, 60))
        n_pos = int(rng.integers(1, 5))
        exposed = rng.choice(10000, size=n_exposed, replace=False)
        positives = exposed[:n_pos]
        negs = sample_negatives(exposed, positives, ratio=4, rng=rng)
        if len(negs) == 4 * n_pos:
            exact += 1
    bound = sample_negatives(np.arange(4), np.array([0, 1]), ratio=4, rng=0)
    report("criterion 7 (1:4 negative sampling)",
           exact == 1000 and len(bound) == 2,
           f"{exact}/1000 user-days exactly 1:4; constrained case gave "
           f"{len(bound)} of 2 available")


# -- criterion 8: determinism -----------------------------------------------------

def test_criterion_8_pipeline_determinism(tmp_path):
    def run(tag):
        d = tmp_path / tag
        d.mkdir()
        data, ckpt = d / "data.bin", d / "model.ckpt"
        hist, sugg = d / "hist.txt", d / "sugg.txt"
        assert cli(["gen-data", "--out", str(data), "--users", "150",
                    "--days", "18", "--active-per-day", "30",
                    "--exposure-size", "20", "--seed", "7"]) == 0
        assert cli(["train", "--data", str(data), "--out", str(ckpt),
                    "--variant", "dsen", "--max-epochs", "2",
                    "--batch-size", "256", "--seed", "7",
                    "--history", str(hist)]) == 0
        report_path = d / "report.txt"
        assert cli(["evaluate", "--data", str(data), "--checkpoint",
                    str(ckpt), "--out", str(report_path)]) == 0
        assert cli(["suggest", "--data", str(data), "--checkpoint", str(ckpt),
                    "--users", "1,2,3", "--seed", "7", "--n-retrieve", "60",
                    "--n-suggest", "10", "--out", str(sugg)]) == 0
        return {p.name: p.read_bytes() for p in (data, ckpt, hist,
                                                 report_path, sugg)}

    a = run("a")
    b = run("b")
    same = {name: a[name] == b[name] for name in a}
    report("criterion 8 (byte-identical pipeline reruns)", all(same.values()),
           ", ".join(f"{n}={'ok' if v else 'DIFFERS'}" for n, v in same.items()))


# -- criterion 9: serving contract ------------------------------------------------

def test_criterion_9_serving_contract():
    cfg = GenConfig(n_users=1500, n_days=18, active_per_day=40,
                    exposure_size=30)
    ds = temporal_split(generate_synthetic(cfg, seed=4), seed=4)
    mc = replace(ModelConfig().desk_scale(), variant="dsen")
    params = build_params(mc, seed=0)
    rcfg = RetrievalConfig(n_retrieve=1000, n_suggest=100)
    ok = True
    details = []
    for user in (0, 5):
        s = suggest(user, params, ds, rcfg, seed=0)
        ids = [cid for cid, _ in s.items]
        retrieved = min(1000, len(default_population(ds, user)))
        want = min(100, retrieved)
        ok &= (len(ids) == want and len(set(ids)) == len(ids)
               and user not in ids)
        details.append(f"user {user}: {len(ids)} unique of {retrieved} retrieved")
    report("criterion 9 (suggest emits min(100, retrieved) unique)", ok,
           "; ".join(details))
