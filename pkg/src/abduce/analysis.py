"""Corpus diversity analyses: lengths, n-gram entropy, pair distances, kappa.

These functions are token-representation agnostic; sequences may hold
vocabulary indices or plain strings, anything hashable works. The n-gram
entropy follows the bootstrap convention of drawing one explanation per
context-outcome group per iteration, and is normalized by the log of the
number of distinct pooled n-grams so values land in [0, 1] regardless of
corpus size.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .seeding import derive_seed

DEFAULT_BOOTSTRAP_ITERS = 1000


@dataclass(frozen=True)
class DiversityReport:
    mean_len: float
    std_len: float
    entropy_by_n: dict
    mean_pair_dist: float
    std_pair_dist: float
    kappa: float | None = None


def length_stats(explanations) -> tuple[float, float]:
    """Mean and population standard deviation of explanation lengths."""
    if not explanations:
        raise ValueError("need at least one explanation")
    lengths = np.array([len(e) for e in explanations], dtype=np.float64)
    return float(lengths.mean()), float(lengths.std())


def _ngrams(seq, n: int):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def _normalized_entropy(counts: Counter) -> float:
    distinct = len(counts)
    if distinct <= 1:
        return 0.0
    total = sum(counts.values())
    entropy = math.log(total) - sum(c * math.log(c) for c in counts.values()) / total
    return entropy / math.log(distinct)


def ngram_entropy(
    corpus,
    n: int,
    bootstrap_iters: int = DEFAULT_BOOTSTRAP_ITERS,
    seed: int = 0,
) -> float:
    """Mean normalized entropy of pooled n-grams over bootstrap draws.

    ``corpus`` is a list of groups, one group of candidate explanations
    per context-outcome pair; every iteration samples one explanation per
    group. Deterministic given the seed.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if bootstrap_iters < 1:
        raise ValueError("bootstrap_iters must be at least 1")
    if not corpus or any(len(group) == 0 for group in corpus):
        raise ValueError("every context-outcome group needs at least one explanation")
    values = []
    for it in range(bootstrap_iters):
        rng = np.random.default_rng(derive_seed(seed, "bootstrap", it))
        counts: Counter = Counter()
        for group in corpus:
            chosen = group[int(rng.integers(len(group)))]
            counts.update(_ngrams(chosen, n))
        values.append(_normalized_entropy(counts))
    return float(np.mean(values))


def _count_vector(seq, basis: dict) -> np.ndarray:
    vec = np.zeros(len(basis))
    for gram in _ngrams(seq, 1) + _ngrams(seq, 2):
        vec[basis[gram]] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def embedding_diversity(explanations) -> tuple[float, float]:
    """Mean and population std of pairwise distances between explanations.

    Each explanation is embedded as its L2-normalized 1-gram plus 2-gram
    count vector; distances are Euclidean over all unordered pairs.
    """
    if len(explanations) < 2:
        raise ValueError("need at least two explanations")
    basis: dict = {}
    for seq in explanations:
        for gram in _ngrams(seq, 1) + _ngrams(seq, 2):
            basis.setdefault(gram, len(basis))
    vectors = [_count_vector(seq, basis) for seq in explanations]
    dists = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            dists.append(float(np.linalg.norm(vectors[i] - vectors[j])))
    arr = np.array(dists)
    return float(arr.mean()), float(arr.std())


def fleiss_kappa(ratings) -> float:
    """Chance-corrected agreement over items x categories rater counts.

    Every item must have the same number of raters. Returns exactly 1.0
    under perfect agreement, which also covers the degenerate case of a
    single used category.
    """
    mat = np.asarray(ratings, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ValueError("ratings must be a 2-D items x categories matrix")
    raters = mat[0].sum()
    if raters < 2:
        raise ValueError("need at least two raters")
    if np.any(mat.sum(axis=1) != raters):
        raise ValueError("every item must have the same total rater count")
    n_items = mat.shape[0]
    p_agree = float(np.mean(((mat ** 2).sum(axis=1) - raters) / (raters * (raters - 1))))
    if p_agree == 1.0:
        return 1.0
    category_shares = mat.sum(axis=0) / (n_items * raters)
    p_chance = float((category_shares ** 2).sum())
    return (p_agree - p_chance) / (1.0 - p_chance)


def diversity_report(
    groups,
    bootstrap_iters: int = DEFAULT_BOOTSTRAP_ITERS,
    seed: int = 0,
    max_n: int = 5,
    kappa: float | None = None,
) -> DiversityReport:
    """Full report over explanation groups (one group per context-outcome)."""
    flat = [seq for group in groups for seq in group]
    mean_len, std_len = length_stats(flat)
    entropy_by_n = {
        n: ngram_entropy(groups, n, bootstrap_iters=bootstrap_iters, seed=seed)
        for n in range(1, max_n + 1)
    }
    if len(flat) >= 2:
        mean_dist, std_dist = embedding_diversity(flat)
    else:
        mean_dist, std_dist = 0.0, 0.0
    return DiversityReport(
        mean_len=mean_len,
        std_len=std_len,
        entropy_by_n=entropy_by_n,
        mean_pair_dist=mean_dist,
        std_pair_dist=std_dist,
        kappa=kappa,
    )
