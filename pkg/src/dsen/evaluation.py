"""Ranking metrics (HIT@K, NDCG@K, AUC) and the per-list evaluation harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .autograd import no_grad
from .errors import ContractError, ProtocolError

DEFAULT_KS = (10, 20, 50, 100)


@dataclass
class RankedSuggestions:
    """One user's candidate list, ordered by descending score."""
    user: int
    items: list  # (candidate id, score), scores non-increasing
    day: int = 0

    def rank_of(self, candidate: int) -> int:
        """1-based rank; raises if the candidate is absent."""
        for r, (cid, _) in enumerate(self.items, start=1):
            if cid == candidate:
                return r
        raise ProtocolError(f"candidate {candidate} not in user {self.user}'s list")


@dataclass
class EvalReport:
    hit: Dict[int, float]
    ndcg: Dict[int, float]
    auc: float
    n_lists: int = 0
    n_positives: int = 0
    n_samples: int = 0

    def render_table(self) -> str:
        ks = sorted(self.hit)
        header = "metric " + " ".join(f"K={k:<8d}" for k in ks)
        hit_row = "HIT@K  " + " ".join(f"{self.hit[k]:<10.4f}" for k in ks)
        ndcg_row = "NDCG@K " + " ".join(f"{self.ndcg[k]:<10.4f}" for k in ks)
        return "\n".join([header, hit_row, ndcg_row, f"AUC    {self.auc:.4f}"])

    def to_kv(self) -> str:
        lines = []
        for k in sorted(self.hit):
            lines.append(f"hit@{k} = {self.hit[k]:.10g}")
            lines.append(f"ndcg@{k} = {self.ndcg[k]:.10g}")
        lines.append(f"auc = {self.auc:.10g}")
        lines.append(f"n_lists = {self.n_lists}")
        lines.append(f"n_positives = {self.n_positives}")
        lines.append(f"n_samples = {self.n_samples}")
        return "\n".join(lines)


def rank_candidates(user: int, candidates: Sequence[int],
                    scorer: Callable[[Sequence[int]], np.ndarray],
                    day: int = 0) -> RankedSuggestions:
    """Sort candidates by score descending, breaking ties by ascending id."""
    candidates = list(candidates)
    if not candidates:
        raise ContractError(f"empty candidate set for user {user}")
    scores = np.asarray(scorer(candidates), dtype=np.float64)
    order = sorted(range(len(candidates)),
                   key=lambda i: (-scores[i], candidates[i]))
    return RankedSuggestions(user=user,
                             items=[(candidates[i], float(scores[i])) for i in order],
                             day=day)


def _positive_ranks(ranked: Iterable[RankedSuggestions],
                    positives: Dict[tuple, Sequence[int]]):
    """Yield (list, [ranks of its positives]) pairs."""
    for lst in ranked:
        pos = positives.get((lst.user, lst.day), ())
        yield lst, [lst.rank_of(p) for p in pos]


def hit_at_k(ranked: Sequence[RankedSuggestions],
             positives: Dict[tuple, Sequence[int]], k: int) -> float:
    """Fraction of positive instances ranked within the top K of their list."""
    hits, total = 0, 0
    for _, ranks in _positive_ranks(ranked, positives):
        hits += sum(1 for r in ranks if r <= k)
        total += len(ranks)
    return hits / total if total else 0.0


def ndcg_at_k(ranked: Sequence[RankedSuggestions],
              positives: Dict[tuple, Sequence[int]], k: int) -> float:
    """Binary-gain NDCG with log2 discounts, averaged over lists with a positive."""
    values = []
    for lst, ranks in _positive_ranks(ranked, positives):
        if not ranks:
            continue
        dcg = sum(1.0 / np.log2(r + 1) for r in ranks if r <= k)
        ideal = sum(1.0 / np.log2(r + 1)
                    for r in range(1, min(len(ranks), k) + 1))
        values.append(dcg / ideal)
    return float(np.mean(values)) if values else 0.0


def auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties at 0.5)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def score_samples(params, dataset, indices, batch_size: int = 4096) -> np.ndarray:
    """Model probabilities for the given sample rows, computed without a tape."""
    from .baselines import forward
    indices = np.asarray(indices)
    out = np.empty(len(indices))
    with no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            out[start:start + len(chunk)] = forward(dataset.batch(chunk), params).data
    return out


def evaluate(params, dataset, split: str = "test",
             ks: Sequence[int] = DEFAULT_KS, batch_size: int = 4096) -> EvalReport:
    """Rank each user-day's exposed candidates in `split` and report all metrics."""
    idx = dataset.split_indices(split)
    if len(idx) == 0:
        raise ContractError(f"split {split!r} is empty")
    scores = score_samples(params, dataset, idx, batch_size)

    lists: Dict[tuple, list] = {}
    positives: Dict[tuple, list] = {}
    for row, score in zip(idx, scores):
        key = (int(dataset.src[row]), int(dataset.day[row]))
        cand = int(dataset.dst[row])
        lists.setdefault(key, []).append((cand, float(score)))
        if dataset.y[row] == 1:
            positives.setdefault(key, []).append(cand)

    ranked = []
    for (user, day), pairs in lists.items():
        pairs.sort(key=lambda cs: (-cs[1], cs[0]))
        ranked.append(RankedSuggestions(user=user, items=pairs, day=day))

    report = EvalReport(
        hit={k: hit_at_k(ranked, positives, k) for k in ks},
        ndcg={k: ndcg_at_k(ranked, positives, k) for k in ks},
        auc=auc(scores, dataset.y[idx]),
        n_lists=len(ranked),
        n_positives=sum(len(v) for v in positives.values()),
        n_samples=len(idx))
    return report
