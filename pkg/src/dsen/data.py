"""Feature schema, synthetic data generation, sampling, splitting and storage.

The generator plants a recoverable signal: each user has a static taste
vector and a monotone noisy level trajectory; the probability that an
exposed pair turns into a friend request follows a steep logistic over a
mix of taste similarity and current-level closeness whose mixing weight
drifts across days, so pair similarity genuinely evolves over the window.
Observed features are noisy linear views of those latents.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ContractError, DataFormatError, VersionError
from .model import PairBatch, window_sequence

MAGIC = b"DSENDATA"
FORMAT_VERSION = 1

SPLIT_NONE, SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = -1, 0, 1, 2
SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}

SEQ_GROUPS = (("score_award", 10), ("equipment", 4),
              ("tactical_skills", 37), ("team_stats", 4))
PROFILE_GROUPS = (("registration", 13), ("game_mode", 14),
                  ("activation_summary", 28), ("consumption_summary", 13))


@dataclass
class FeatureSchema:
    d_s: int = 55   # daily behavior features
    d_p: int = 68   # profile features
    t: int = 15     # window length, days
    d_l: int = 8    # pairwise link features
    seq_groups: tuple = SEQ_GROUPS
    profile_groups: tuple = PROFILE_GROUPS

    def __post_init__(self):
        if self.seq_groups == SEQ_GROUPS and self.d_s == 55:
            assert sum(n for _, n in self.seq_groups) == self.d_s
        if self.profile_groups == PROFILE_GROUPS and self.d_p == 68:
            assert sum(n for _, n in self.profile_groups) == self.d_p


@dataclass
class GenConfig:
    schema: FeatureSchema = field(default_factory=FeatureSchema)
    n_users: int = 1000
    n_days: int = 30
    active_per_day: int = 200     # users receiving an exposure list each day
    exposure_size: int = 50
    base_rate: float = 0.04       # target positive rate among exposed pairs
    noise: float = 2.0            # feature observation noise
    taste_dim: int = 6
    label_sharpness: float = 30.0
    negative_ratio: int = 4

    def validate(self):
        if self.n_users < 10:
            raise ContractError("need at least 10 users")
        if self.n_days <= self.schema.t:
            raise ContractError("need more days than the window length")
        if not 0 < self.base_rate < 1:
            raise ContractError("base_rate must be in (0, 1)")
        if self.active_per_day > self.n_users or self.exposure_size >= self.n_users:
            raise ContractError("exposure configuration exceeds population")


@dataclass
class NormStats:
    seq_mean: np.ndarray
    seq_std: np.ndarray
    prof_mean: np.ndarray
    prof_std: np.ndarray
    link_mean: np.ndarray
    link_std: np.ndarray


@dataclass
class Dataset:
    schema: FeatureSchema
    seq: np.ndarray          # n_users x n_days x d_s
    profiles: np.ndarray     # n_users x d_p
    levels: np.ndarray       # n_users x n_days latent level trajectory
    tastes: np.ndarray       # n_users x taste_dim latent taste
    exp_user: np.ndarray     # per exposure list: user id
    exp_day: np.ndarray      # per exposure list: day (1-based)
    exp_offsets: np.ndarray  # n_lists + 1 offsets into exp_candidates
    exp_candidates: np.ndarray
    src: np.ndarray          # labeled samples
    dst: np.ndarray
    day: np.ndarray
    y: np.ndarray
    link: np.ndarray         # n_samples x d_l
    split: np.ndarray        # int8 tags, SPLIT_* values
    meta: dict = field(default_factory=dict)
    norm: Optional[NormStats] = None

    @property
    def n_users(self) -> int:
        return self.profiles.shape[0]

    @property
    def n_days(self) -> int:
        return self.seq.shape[1]

    @property
    def n_samples(self) -> int:
        return len(self.src)

    def split_indices(self, name: str) -> np.ndarray:
        return np.nonzero(self.split == SPLIT_NAMES[name])[0]

    def exposure_list(self, i: int) -> np.ndarray:
        return self.exp_candidates[self.exp_offsets[i]:self.exp_offsets[i + 1]]

    def sequence_window(self, user: int, day: int) -> np.ndarray:
        """The user's most recent t daily rows up to `day`, left zero-padded."""
        return window_sequence(self.seq[user, :day], self.schema.t)

    def batch(self, indices) -> PairBatch:
        indices = np.asarray(indices)
        t = self.schema.t
        s_i = np.stack([self.sequence_window(u, d)
                        for u, d in zip(self.src[indices], self.day[indices])])
        s_j = np.stack([self.sequence_window(u, d)
                        for u, d in zip(self.dst[indices], self.day[indices])])
        return PairBatch(s_i=s_i, r_i=self.profiles[self.src[indices]],
                         s_j=s_j, r_j=self.profiles[self.dst[indices]],
                         link=self.link[indices], y=self.y[indices].astype(np.float64))

    def pair_batch(self, src, dst, day: int, links: np.ndarray) -> PairBatch:
        src = np.asarray(src)
        dst = np.asarray(dst)
        s_i = np.stack([self.sequence_window(u, day) for u in src])
        s_j = np.stack([self.sequence_window(u, day) for u in dst])
        return PairBatch(s_i=s_i, r_i=self.profiles[src],
                         s_j=s_j, r_j=self.profiles[dst], link=links)


def dataset_equal(a: Dataset, b: Dataset) -> bool:
    """Deep equality over every stored field."""
    if a.schema != b.schema or a.meta != b.meta:
        return False
    arrays = ["seq", "profiles", "levels", "tastes", "exp_user", "exp_day",
              "exp_offsets", "exp_candidates", "src", "dst", "day", "y",
              "link", "split"]
    if not all(np.array_equal(getattr(a, n), getattr(b, n)) for n in arrays):
        return False
    if (a.norm is None) != (b.norm is None):
        return False
    if a.norm is not None:
        for n in ("seq_mean", "seq_std", "prof_mean", "prof_std",
                  "link_mean", "link_std"):
            if not np.array_equal(getattr(a.norm, n), getattr(b.norm, n)):
                return False
    return True


# -- planted-signal generation -------------------------------------------------

def planted_score(tastes: np.ndarray, levels: np.ndarray, src, dst, day) -> np.ndarray:
    """The latent pair score the labels were drawn from (oracle surface)."""
    src = np.asarray(src)
    dst = np.asarray(dst)
    day = np.asarray(day)
    cos = np.sum(tastes[src] * tastes[dst], axis=-1)
    li = levels[src, day - 1]
    lj = levels[dst, day - 1]
    lev_sim = np.exp(-np.abs(li - lj) / 8.0)
    w = 0.55 + 0.3 * np.sin(2.0 * np.pi * day / 20.0)
    return w * cos + (1.0 - w) * lev_sim


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _calibrate_threshold(scores: np.ndarray, sharpness: float, base_rate: float) -> float:
    lo, hi = scores.min() - 5.0, scores.max() + 5.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _sigmoid(sharpness * (scores - mid)).mean() > base_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _group_mask(groups, sources: dict, n_latent: int) -> np.ndarray:
    """Block sparsity pattern: each feature group reads one latent block."""
    mask = np.zeros((sum(n for _, n in groups), n_latent))
    row = 0
    for name, n in groups:
        lo, hi = sources[name]
        mask[row:row + n, lo:hi] = 1.0
        row += n
    return mask


def link_features(latents, src: int, dst: int, day: int,
                  co_exposure: int, seed: int) -> np.ndarray:
    """Deterministic pairwise link features (raw, unnormalized).

    Deliberately coarse and noisy aggregates: they hint at pair affinity
    (shared sessions, level gap) without giving the latent similarity away.
    """
    tastes, levels = latents
    cos = float(np.dot(tastes[src], tastes[dst]))
    li, lj = float(levels[src, day - 1]), float(levels[dst, day - 1])
    lev_sim = np.exp(-abs(li - lj) / 8.0)
    rng = np.random.default_rng((seed, 7919, src, dst, day))
    shared_sessions = float(max(0.0, np.floor(
        3.0 * lev_sim * (1.0 + cos) / 2.0 + rng.normal())))
    return np.array([
        float(co_exposure),
        abs(li - lj),
        0.5 * (li + lj),
        shared_sessions,
        rng.normal(),
        rng.normal(),
        rng.normal(),
        rng.normal(),
    ])


class LinkFeatureBuilder:
    """Computes link features for arbitrary pairs, with exposure-history counts."""

    def __init__(self, dataset: Dataset):
        self._latents = (dataset.tastes, dataset.levels)
        self._seed = int(dataset.meta.get("seed", 0))
        self._norm = dataset.norm
        self._counts: Dict[Tuple[int, int], int] = {}
        for i in range(len(dataset.exp_user)):
            u = int(dataset.exp_user[i])
            for c in dataset.exposure_list(i):
                key = (u, int(c))
                self._counts[key] = self._counts.get(key, 0) + 1

    def pair(self, src: int, dst: int, day: int) -> np.ndarray:
        co = self._counts.get((src, dst), 0) + self._counts.get((dst, src), 0)
        raw = link_features(self._latents, src, dst, day, co, self._seed)
        if self._norm is not None:
            raw = (raw - self._norm.link_mean) / self._norm.link_std
        return raw


def sample_negatives(exposed: np.ndarray, positives: np.ndarray, ratio: int = 4,
                     rng=0) -> np.ndarray:
    """Uniform negatives from one user-day's exposed-but-not-requested candidates.

    Returns min(ratio * len(positives), available) candidate ids; a shortfall
    simply yields fewer negatives. `rng` is a Generator or an integer seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    pool = np.setdiff1d(exposed, positives, assume_unique=False)
    want = ratio * len(positives)
    if want >= len(pool):
        return np.sort(pool)
    return np.sort(rng.choice(pool, size=want, replace=False))


def generate_synthetic(cfg: GenConfig, seed: int) -> Dataset:
    """Build a full synthetic dataset with planted evolving-similarity labels."""
    cfg.validate()
    sch = cfg.schema
    rng = np.random.default_rng(seed)
    n, days, q = cfg.n_users, cfg.n_days, cfg.taste_dim

    # latents: unit taste vectors and monotone noisy level growth
    tastes = rng.normal(size=(n, q))
    tastes /= np.linalg.norm(tastes, axis=1, keepdims=True)
    growth = rng.gamma(shape=2.0, scale=0.5, size=n)
    increments = rng.gamma(shape=2.0, scale=np.repeat(growth, days).reshape(n, days) / 2.0)
    levels = rng.uniform(1.0, 10.0, size=n)[:, None] + np.cumsum(increments, axis=1)

    # observed features: block-structured noisy views of the latents
    latent_cols = 2 + q  # [level, level-delta, taste...]
    seq_sources = {"score_award": (0, 1), "equipment": (0, 2),
                   "tactical_skills": (2, 2 + q), "team_stats": (1, 2)}
    seq_mix = _group_mask(sch.seq_groups, seq_sources, latent_cols) \
        * rng.normal(size=(sch.d_s, latent_cols))
    deltas = np.diff(levels, axis=1, prepend=levels[:, :1])
    lat_seq = np.concatenate([levels[..., None] / 10.0, deltas[..., None],
                              np.broadcast_to(tastes[:, None, :], (n, days, q))], axis=2)
    seq = lat_seq @ seq_mix.T + cfg.noise * rng.normal(size=(n, days, sch.d_s))

    prof_sources = {"registration": (0, 1), "game_mode": (2, 2 + q),
                    "activation_summary": (0, 2 + q), "consumption_summary": (1, 2)}
    prof_mix = _group_mask(sch.profile_groups, prof_sources, latent_cols) \
        * rng.normal(size=(sch.d_p, latent_cols))
    lat_prof = np.concatenate([levels[:, :1] / 10.0, growth[:, None], tastes], axis=1)
    profiles = lat_prof @ prof_mix.T + cfg.noise * rng.normal(size=(n, sch.d_p))

    # exposure lists: biased toward similar-level candidates
    exp_user, exp_day, exp_lists = [], [], []
    for d in range(1, days + 1):
        active = np.sort(rng.choice(n, size=cfg.active_per_day, replace=False))
        for u in active:
            pool_size = min(4 * cfg.exposure_size, n - 1)
            pool = rng.choice(n - 1, size=pool_size, replace=False)
            pool[pool >= u] += 1  # exclude self
            closeness = np.abs(levels[pool, d - 1] - levels[u, d - 1])
            chosen = pool[np.argsort(closeness, kind="stable")[:cfg.exposure_size]]
            exp_user.append(u)
            exp_day.append(d)
            exp_lists.append(np.sort(chosen))
    exp_user = np.array(exp_user, dtype=np.int64)
    exp_day = np.array(exp_day, dtype=np.int64)
    exp_offsets = np.zeros(len(exp_lists) + 1, dtype=np.int64)
    np.cumsum([len(c) for c in exp_lists], out=exp_offsets[1:])
    exp_candidates = np.concatenate(exp_lists).astype(np.int64)

    # labels from the planted logistic model, threshold calibrated to base_rate
    all_src = np.repeat(exp_user, np.diff(exp_offsets))
    all_day = np.repeat(exp_day, np.diff(exp_offsets))
    scores = planted_score(tastes, levels, all_src, exp_candidates, all_day)
    theta = _calibrate_threshold(scores, cfg.label_sharpness, cfg.base_rate)
    probs = _sigmoid(cfg.label_sharpness * (scores - theta))
    labels = rng.binomial(1, probs).astype(np.int64)

    # co-exposure counts accumulate day by day (history up to and incl. the day)
    counts: Dict[Tuple[int, int], int] = {}
    src_out, dst_out, day_out, y_out, link_out = [], [], [], [], []
    neg_rng = np.random.default_rng((seed, 104729))
    pos = 0
    for i in range(len(exp_user)):
        u, d = int(exp_user[i]), int(exp_day[i])
        cands = exp_candidates[exp_offsets[i]:exp_offsets[i + 1]]
        lab = labels[exp_offsets[i]:exp_offsets[i + 1]]
        for c in cands:
            key = (u, int(c))
            counts[key] = counts.get(key, 0) + 1
        positives = cands[lab == 1]
        if d == days:
            keep = cands  # final day: keep the whole exposed list for evaluation
            keep_y = lab
        else:
            negs = sample_negatives(cands, positives, cfg.negative_ratio, neg_rng)
            keep = np.concatenate([positives, negs])
            keep_y = np.concatenate([np.ones(len(positives), dtype=np.int64),
                                     np.zeros(len(negs), dtype=np.int64)])
        for c, yy in zip(keep, keep_y):
            c = int(c)
            co = counts.get((u, c), 0) + counts.get((c, u), 0)
            src_out.append(u)
            dst_out.append(c)
            day_out.append(d)
            y_out.append(int(yy))
            link_out.append(link_features((tastes, levels), u, c, d, co, seed))
        pos += len(positives)

    meta = {"seed": float(seed), "base_rate": cfg.base_rate,
            "label_sharpness": cfg.label_sharpness, "theta": float(theta),
            "taste_dim": float(q), "n_positives": float(pos),
            "active_per_day": float(cfg.active_per_day),
            "exposure_size": float(cfg.exposure_size), "noise": cfg.noise,
            "negative_ratio": float(cfg.negative_ratio)}
    n_samples = len(src_out)
    return Dataset(
        schema=sch, seq=seq, profiles=profiles, levels=levels, tastes=tastes,
        exp_user=exp_user, exp_day=exp_day, exp_offsets=exp_offsets,
        exp_candidates=exp_candidates,
        src=np.array(src_out, dtype=np.int64), dst=np.array(dst_out, dtype=np.int64),
        day=np.array(day_out, dtype=np.int64), y=np.array(y_out, dtype=np.int64),
        link=np.array(link_out) if n_samples else np.zeros((0, sch.d_l)),
        split=np.full(n_samples, SPLIT_NONE, dtype=np.int8), meta=meta)


def temporal_split(dataset: Dataset, train_fraction: float = 0.8,
                   seed: int = 0) -> Dataset:
    """Tag the last day as test, shuffle the rest into train/val, and normalize
    all features with statistics fitted on the train split only."""
    unique_days = np.unique(dataset.day)
    if len(unique_days) < 2:
        raise ContractError("temporal split needs at least 2 distinct days")
    last = unique_days[-1]
    split = np.full(dataset.n_samples, SPLIT_TEST, dtype=np.int8)
    pre = np.nonzero(dataset.day < last)[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(pre)
    n_train = int(round(train_fraction * len(pre)))
    split[perm[:n_train]] = SPLIT_TRAIN
    split[perm[n_train:]] = SPLIT_VAL
    dataset.split = split

    train_idx = np.nonzero(split == SPLIT_TRAIN)[0]
    last_train_day = int(dataset.day[train_idx].max())
    rows = dataset.seq[:, :last_train_day].reshape(-1, dataset.schema.d_s)
    seq_mean, seq_std = rows.mean(axis=0), rows.std(axis=0)
    prof_mean, prof_std = dataset.profiles.mean(axis=0), dataset.profiles.std(axis=0)
    link_mean = dataset.link[train_idx].mean(axis=0)
    link_std = dataset.link[train_idx].std(axis=0)
    for std in (seq_std, prof_std, link_std):
        std[std == 0] = 1.0
    dataset.seq = (dataset.seq - seq_mean) / seq_std
    dataset.profiles = (dataset.profiles - prof_mean) / prof_std
    dataset.link = (dataset.link - link_mean) / link_std
    dataset.norm = NormStats(seq_mean, seq_std, prof_mean, prof_std,
                             link_mean, link_std)
    return dataset


# -- serialization --------------------------------------------------------------

class _Reader:
    def __init__(self, fh):
        self._fh = fh
        self.offset = 0

    def read(self, n: int) -> bytes:
        buf = self._fh.read(n)
        if len(buf) != n:
            raise DataFormatError(
                f"truncated file: wanted {n} bytes at offset {self.offset}, "
                f"got {len(buf)}")
        self.offset += n
        return buf

    def u64(self) -> int:
        return struct.unpack("<Q", self.read(8))[0]

    def text(self) -> str:
        return self.read(self.u64()).decode("utf-8")

    def array(self, dtype) -> np.ndarray:
        rank = self.u64()
        shape = tuple(self.u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        raw = self.read(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _w_u64(fh, x: int):
    fh.write(struct.pack("<Q", x))


def _w_text(fh, s: str):
    raw = s.encode("utf-8")
    _w_u64(fh, len(raw))
    fh.write(raw)


def _w_array(fh, a: np.ndarray, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    _w_u64(fh, a.ndim)
    for e in a.shape:
        _w_u64(fh, e)
    fh.write(a.tobytes())


_INT_ARRAYS = ["exp_user", "exp_day", "exp_offsets", "exp_candidates",
               "src", "dst", "day", "y"]
_FLOAT_ARRAYS = ["seq", "profiles", "levels", "tastes", "link"]
_NORM_ARRAYS = ["seq_mean", "seq_std", "prof_mean", "prof_std",
                "link_mean", "link_std"]


def save_dataset(dataset: Dataset, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        sch = dataset.schema
        header = [f"d_s={sch.d_s}", f"d_p={sch.d_p}", f"t={sch.t}", f"d_l={sch.d_l}",
                  "seq_groups=" + ";".join(f"{k}:{v}" for k, v in sch.seq_groups),
                  "profile_groups=" + ";".join(f"{k}:{v}" for k, v in sch.profile_groups),
                  "meta=" + ";".join(f"{k}:{float(v)!r}"
                                     for k, v in sorted(dataset.meta.items())),
                  f"has_norm={int(dataset.norm is not None)}"]
        _w_text(fh, "\n".join(header))
        for name in _INT_ARRAYS:
            _w_array(fh, getattr(dataset, name), "<i8")
        _w_array(fh, dataset.split, "<i1")
        for name in _FLOAT_ARRAYS:
            _w_array(fh, getattr(dataset, name), "<f8")
        if dataset.norm is not None:
            for name in _NORM_ARRAYS:
                _w_array(fh, getattr(dataset.norm, name), "<f8")


def _parse_groups(text: str) -> tuple:
    return tuple((part.split(":")[0], int(part.split(":")[1]))
                 for part in text.split(";"))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        r = _Reader(fh)
        magic = r.read(len(MAGIC))
        if magic != MAGIC:
            raise DataFormatError(f"bad magic bytes at offset 0: {magic!r}")
        version = struct.unpack("<I", r.read(4))[0]
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported dataset format version {version}, "
                               f"expected {FORMAT_VERSION}")
        fields = dict(line.split("=", 1) for line in r.text().split("\n"))
        schema = FeatureSchema(
            d_s=int(fields["d_s"]), d_p=int(fields["d_p"]),
            t=int(fields["t"]), d_l=int(fields["d_l"]),
            seq_groups=_parse_groups(fields["seq_groups"]),
            profile_groups=_parse_groups(fields["profile_groups"]))
        meta = {}
        if fields["meta"]:
            for part in fields["meta"].split(";"):
                k, v = part.split(":", 1)
                meta[k] = float(v)
        ints = {name: r.array("<i8") for name in _INT_ARRAYS}
        split = r.array("<i1")
        floats = {name: r.array("<f8") for name in _FLOAT_ARRAYS}
        norm = None
        if int(fields["has_norm"]):
            vals = {name: r.array("<f8") for name in _NORM_ARRAYS}
            norm = NormStats(**vals)
        return Dataset(schema=schema, split=split, meta=meta, norm=norm,
                       **ints, **floats)


def export_samples_csv(dataset: Dataset, path):
    """Plain-text tabular view of the labeled samples, one per line."""
    names = {v: k for k, v in SPLIT_NAMES.items()}
    with open(path, "w") as fh:
        link_cols = ",".join(f"link_{i}" for i in range(dataset.schema.d_l))
        fh.write(f"src,dst,day,y,split,{link_cols}\n")
        for i in range(dataset.n_samples):
            tag = names.get(int(dataset.split[i]), "none")
            link = ",".join(f"{x:.12g}" for x in dataset.link[i])
            fh.write(f"{dataset.src[i]},{dataset.dst[i]},{dataset.day[i]},"
                     f"{dataset.y[i]},{tag},{link}\n")
