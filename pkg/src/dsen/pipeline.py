"""Two-stage serving: multi-way candidate retrieval, then model re-ranking.

The retrieval channels (profile cosine, level bucket, random exploration)
are configurable conventions; the production system's channels are not
modeled here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autograd import no_grad
from .baselines import forward
from .data import Dataset, LinkFeatureBuilder
from .errors import ContractError
from .evaluation import RankedSuggestions, rank_candidates


@dataclass
class RetrievalConfig:
    n_retrieve: int = 1000
    n_suggest: int = 100
    weights: tuple = (0.5, 0.3, 0.2)  # cosine, level bucket, random exploration
    n_level_buckets: int = 10

    def __post_init__(self):
        if self.n_suggest > self.n_retrieve:
            raise ContractError("n_suggest must not exceed n_retrieve")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ContractError("channel weights must be nonnegative, not all zero")


def existing_friends(dataset: Dataset, user: int) -> np.ndarray:
    """Users the given user has already sent or received a request from."""
    mask_out = (dataset.src == user) & (dataset.y == 1)
    mask_in = (dataset.dst == user) & (dataset.y == 1)
    return np.unique(np.concatenate([dataset.dst[mask_out], dataset.src[mask_in]]))


def default_population(dataset: Dataset, user: int) -> np.ndarray:
    exclude = set(existing_friends(dataset, user).tolist())
    exclude.add(user)
    return np.array([u for u in range(dataset.n_users) if u not in exclude],
                    dtype=np.int64)


def retrieve_candidates(user: int, population: np.ndarray, dataset: Dataset,
                        cfg: RetrievalConfig, seed: int = 0,
                        day: Optional[int] = None) -> np.ndarray:
    """Union of the retrieval channels, deduplicated and truncated to n_retrieve."""
    population = np.asarray(population, dtype=np.int64)
    if population.size == 0:
        raise ContractError("empty retrieval population")
    if user in population:
        raise ContractError("population must exclude the user")
    day = dataset.n_days if day is None else day
    n = cfg.n_retrieve
    if population.size <= n:
        return np.sort(population)

    total = sum(cfg.weights)
    quotas = [int(np.ceil(w / total * n)) for w in cfg.weights]

    # channel a: top candidates by profile cosine similarity
    prof = dataset.profiles
    norms = np.linalg.norm(prof[population], axis=1)
    norms[norms == 0] = 1.0
    u_norm = np.linalg.norm(prof[user]) or 1.0
    cos = prof[population] @ prof[user] / (norms * u_norm)
    order = np.lexsort((population, -cos))
    chan_a = population[order[:quotas[0]]]

    # channel b: candidates in the user's latent-level bucket, nearest first
    lv = dataset.levels[:, day - 1]
    edges = np.quantile(lv[population], np.linspace(0, 1, cfg.n_level_buckets + 1))
    bucket = np.searchsorted(edges[1:-1], lv, side="right")
    same = population[bucket[population] == bucket[user]]
    gap = np.abs(lv[same] - lv[user])
    chan_b = same[np.lexsort((same, gap))[:quotas[1]]]

    # channel c: seeded random exploration
    rng = np.random.default_rng((seed, int(user)))
    chan_c = rng.choice(population, size=min(quotas[2], population.size),
                        replace=False)

    seen = set()
    merged = []
    # channel overlap can leave the union short of n, so fall back to the
    # full cosine ordering to top the list up
    for cid in np.concatenate([chan_a, chan_b, chan_c, population[order]]):
        cid = int(cid)
        if cid not in seen:
            seen.add(cid)
            merged.append(cid)
        if len(merged) == n:
            break
    return np.array(merged, dtype=np.int64)


def suggest(user: int, params, dataset: Dataset, cfg: RetrievalConfig,
            seed: int = 0, day: Optional[int] = None,
            link_builder: Optional[LinkFeatureBuilder] = None) -> RankedSuggestions:
    """Retrieve, score with the model, and return the top n_suggest candidates."""
    day = dataset.n_days if day is None else day
    population = default_population(dataset, user)
    candidates = retrieve_candidates(user, population, dataset, cfg, seed, day)
    builder = link_builder or LinkFeatureBuilder(dataset)

    def scorer(cands: Sequence[int]) -> np.ndarray:
        cands = np.asarray(cands, dtype=np.int64)
        links = np.stack([builder.pair(user, int(c), day) for c in cands])
        batch = dataset.pair_batch(np.full(len(cands), user), cands, day, links)
        with no_grad():
            return forward(batch, params).data

    ranked = rank_candidates(user, candidates.tolist(), scorer, day=day)
    return RankedSuggestions(user=user, items=ranked.items[:cfg.n_suggest], day=day)


def write_suggestions(suggestions, path):
    """Plain-text serving output: user_id, rank, candidate_id, score."""
    with open(path, "w") as fh:
        for s in suggestions:
            for rank, (cid, score) in enumerate(s.items, start=1):
                fh.write(f"{s.user}, {rank}, {cid}, {score:.10g}\n")
