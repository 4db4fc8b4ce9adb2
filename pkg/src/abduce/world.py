"""Synthetic abduction worlds with exactly computable probabilities.

A world is a weighted transition graph over content symbols. The fixed
generative contract:

* A context ``x`` is a random walk of ``context_len`` symbols (uniform
  start symbol, then transitions under ``edge_weight``).
* An outcome ``y`` is a walk of ``outcome_len`` symbols starting from
  some symbol.
* An explanation ``z`` bridges ``last(x)`` to ``first(y)``: starting at
  ``last(x)`` the walk repeatedly draws the next symbol from the current
  row; the first time it draws ``first(y)`` the bridge ends (that draw is
  the EOS step, permitted exactly where the edge into ``first(y)`` is
  positive) and the outcome's remaining transitions are emitted.

``p(y|x)`` is therefore the probability that a walk from ``last(x)``
first reaches ``first(y)`` within ``max_path_len`` transitions, times the
product of the outcome's internal transition weights. ``p(y|x,z)`` is the
same quantity with the walk's first ``len(z)`` transitions forced through
``z``. Both are exact dynamic programs, and small worlds can be checked
against brute-force path enumeration.

The expert policy is the exact posterior over bridges given that the walk
succeeds, so every downstream claim about expert behaviour is checkable
by enumeration. The horizon ``max_path_len`` caps all walks; it is a
documented truncation, not an approximation knob.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .data import Dataset, Example, N_RESERVED, Tokens, Vocab, make_vocab


@dataclass(frozen=True)
class TaskSpec:
    """The synthetic world: transition weights plus walk-length contract."""

    n_symbols: int
    edge_weight: np.ndarray
    max_path_len: int
    outcome_len: int
    context_len: int

    def __post_init__(self):
        w = np.asarray(self.edge_weight, dtype=np.float64)
        if w.shape != (self.n_symbols, self.n_symbols):
            raise ValueError("edge_weight must be square over n_symbols")
        if np.any(w < 0):
            raise ValueError("edge weights must be nonnegative")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every edge_weight row must sum to 1")
        if self.max_path_len < 1:
            raise ValueError("max_path_len must be at least 1")
        if self.outcome_len < 1 or self.context_len < 1:
            raise ValueError("outcome_len and context_len must be at least 1")
        off_diag = w.copy()
        np.fill_diagonal(off_diag, 0.0)
        if np.any(off_diag.sum(axis=0) == 0):
            raise ValueError("every symbol must be reachable from another symbol")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "edge_weight", w)

    @property
    def vocab(self) -> Vocab:
        return make_vocab(self.n_symbols)


@dataclass(frozen=True)
class RatingThresholds:
    """Probability cut points mapping likelihoods onto a 1..5 scale."""

    t5: float = 0.6
    t4: float = 0.3
    t3: float = 0.1
    t2: float = 0.02

    def __post_init__(self):
        if not 1.0 > self.t5 > self.t4 > self.t3 > self.t2 > 0.0:
            raise ValueError("thresholds must satisfy 1 > t5 > t4 > t3 > t2 > 0")


DEFAULT_THRESHOLDS = RatingThresholds()


class ExpertSample(NamedTuple):
    """Expert continuation plus a flag for prefixes it could not rescue."""

    tokens: Tokens
    degenerate: bool


def _to_symbol(token: int, n_symbols: int) -> int | None:
    sym = token - N_RESERVED
    return sym if 0 <= sym < n_symbols else None


def _to_symbols(tokens: Tokens, n_symbols: int, what: str) -> list[int]:
    syms = []
    for tok in tokens:
        sym = _to_symbol(tok, n_symbols)
        if sym is None:
            raise ValueError(f"{what} contains token {tok} outside the content vocabulary")
        syms.append(sym)
    return syms


def _symbol_token(sym: int) -> int:
    return sym + N_RESERVED


def generate_world(
    seed: int,
    n_symbols: int,
    sparsity: float,
    horizon: int,
    outcome_len: int = 2,
    context_len: int = 3,
) -> TaskSpec:
    """Deterministically sample a row-stochastic world.

    Each edge survives with probability ``sparsity``; surviving edges get
    uniform random weights, renormalized per row. Rows with no surviving
    edge are redrawn rather than erroring, and the whole matrix is redrawn
    until every symbol has an in-edge from some other symbol.
    """
    if n_symbols < 3:
        raise ValueError("need at least 3 symbols")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if not 0.0 < sparsity <= 1.0:
        raise ValueError("sparsity must be in (0, 1]")
    rng = np.random.default_rng(seed)
    while True:
        weights = np.zeros((n_symbols, n_symbols))
        for row in range(n_symbols):
            while True:
                mask = rng.random(n_symbols) < sparsity
                raw = rng.random(n_symbols) * mask
                total = raw.sum()
                if total > 0:
                    weights[row] = raw / total
                    break
        off_diag = weights.copy()
        np.fill_diagonal(off_diag, 0.0)
        if np.all(off_diag.sum(axis=0) > 0):
            return TaskSpec(
                n_symbols=n_symbols,
                edge_weight=weights,
                max_path_len=horizon,
                outcome_len=outcome_len,
                context_len=context_len,
            )


def first_passage_prob(spec: TaskSpec, start: int, target: int, budget: int) -> float:
    """P(walk from `start` first draws `target` within `budget` transitions)."""
    if budget <= 0:
        return 0.0
    w = spec.edge_weight
    alive = np.zeros(spec.n_symbols)
    alive[start] = 1.0
    total = 0.0
    for _ in range(budget):
        total += float(alive @ w[:, target])
        alive = alive @ w
        alive[target] = 0.0
    return total


def _internal_prob(spec: TaskSpec, y_syms: list[int]) -> float:
    p = 1.0
    for a, b in zip(y_syms, y_syms[1:]):
        p *= spec.edge_weight[a, b]
    return float(p)


def true_outcome_likelihood(spec: TaskSpec, x: Tokens, y: Tokens) -> float:
    """Exact p(y|x) under the walk contract, in [0, 1]."""
    if len(x) == 0 or len(y) == 0:
        raise ValueError("x and y must be non-empty")
    x_syms = _to_symbols(x, spec.n_symbols, "x")
    y_syms = _to_symbols(y, spec.n_symbols, "y")
    reach = first_passage_prob(spec, x_syms[-1], y_syms[0], spec.max_path_len)
    return reach * _internal_prob(spec, y_syms)


def conditioned_outcome_likelihood(spec: TaskSpec, x: Tokens, y: Tokens, z: Tokens) -> float:
    """Exact p(y|x,z): the walk's first len(z) transitions are forced.

    Any token outside the content vocabulary or any zero-weight forced
    transition gives 0. A forced prefix may pass through first(y); the
    outcome is emitted when the free continuation reaches first(y) within
    the remaining budget, or immediately when the prefix ends there.
    """
    if len(z) == 0:
        return true_outcome_likelihood(spec, x, y)
    x_syms = _to_symbols(x, spec.n_symbols, "x")
    y_syms = _to_symbols(y, spec.n_symbols, "y")
    z_syms = []
    for tok in z:
        sym = _to_symbol(tok, spec.n_symbols)
        if sym is None:
            return 0.0
        z_syms.append(sym)
    cur = x_syms[-1]
    for sym in z_syms:
        if spec.edge_weight[cur, sym] == 0.0:
            return 0.0
        cur = sym
    target = y_syms[0]
    if len(z_syms) > spec.max_path_len:
        return 0.0
    if cur == target:
        return _internal_prob(spec, y_syms)
    budget = spec.max_path_len - len(z_syms)
    return first_passage_prob(spec, cur, target, budget) * _internal_prob(spec, y_syms)


def _valid_bridge(spec: TaskSpec, start: int, target: int, z_syms: list[int]) -> bool:
    if len(z_syms) > spec.max_path_len - 1:
        return False
    cur = start
    for sym in z_syms:
        if sym == target or spec.edge_weight[cur, sym] == 0.0:
            return False
        cur = sym
    return spec.edge_weight[cur, target] > 0.0


def expert_logprob(spec: TaskSpec, x: Tokens, y: Tokens, z: Tokens) -> float:
    """Log posterior of bridge z under the exact expert; -inf if invalid.

    The posterior is the walk distribution over bridges conditioned on
    reaching first(y) within the horizon, so exponentiating over all
    valid bridges sums to 1.
    """
    x_syms = _to_symbols(x, spec.n_symbols, "x")
    y_syms = _to_symbols(y, spec.n_symbols, "y")
    z_syms = []
    for tok in z:
        sym = _to_symbol(tok, spec.n_symbols)
        if sym is None:
            return float("-inf")
        z_syms.append(sym)
    start, target = x_syms[-1], y_syms[0]
    if not _valid_bridge(spec, start, target, z_syms):
        return float("-inf")
    normalizer = first_passage_prob(spec, start, target, spec.max_path_len)
    if normalizer == 0.0:
        return float("-inf")
    logp = 0.0
    cur = start
    for sym in z_syms:
        logp += np.log(spec.edge_weight[cur, sym])
        cur = sym
    logp += np.log(spec.edge_weight[cur, target])
    return float(logp - np.log(normalizer))


def _success_table(spec: TaskSpec, target: int, max_tokens: int) -> np.ndarray:
    """g[u, r] = P(walk from u stops at `target` using at most r more bridge tokens)."""
    w = spec.edge_weight
    n = spec.n_symbols
    g = np.zeros((n, max_tokens + 1))
    g[:, 0] = w[:, target]
    w_free = w.copy()
    w_free[:, target] = 0.0
    for r in range(1, max_tokens + 1):
        g[:, r] = w[:, target] + w_free @ g[:, r - 1]
    return g


def _walkable(spec: TaskSpec, start: int, target: int, prefix_syms: list[int]) -> bool:
    cur = start
    for sym in prefix_syms:
        if sym == target or spec.edge_weight[cur, sym] == 0.0:
            return False
        cur = sym
    return True


def expert_sample(
    spec: TaskSpec,
    x: Tokens,
    y: Tokens,
    prefix: Tokens,
    seed: int,
    max_len: int,
) -> ExpertSample:
    """Sample a bridge continuation from the exact expert posterior.

    The completed bridge (prefix plus continuation) has at most
    ``min(max_len, max_path_len - 1)`` tokens, and the continuation is
    distributed as the posterior over completions that reach first(y),
    renormalized over that set. When no completion can reach first(y),
    for example because the prefix left the graph or used up the budget,
    the fallback is an unconditioned walk from the last walkable state
    that stops at the first state from which first(y) is reachable in one
    step; the result is then flagged degenerate.
    """
    if max_len < 0:
        raise ValueError("max_len must be nonnegative")
    x_syms = _to_symbols(x, spec.n_symbols, "x")
    y_syms = _to_symbols(y, spec.n_symbols, "y")
    start, target = x_syms[-1], y_syms[0]
    cap = min(max_len, spec.max_path_len - 1)
    rng = np.random.default_rng(seed)

    prefix_syms: list[int] = []
    prefix_ok = len(prefix) <= cap
    for tok in prefix:
        sym = _to_symbol(tok, spec.n_symbols)
        if sym is None:
            prefix_ok = False
            break
        prefix_syms.append(sym)
    prefix_ok = prefix_ok and _walkable(spec, start, target, prefix_syms)

    if prefix_ok:
        cur = prefix_syms[-1] if prefix_syms else start
        remaining = cap - len(prefix_syms)
        g = _success_table(spec, target, remaining)
        if g[cur, remaining] > 0.0:
            out: list[int] = []
            r = remaining
            while True:
                stop_p = spec.edge_weight[cur, target] / g[cur, r]
                if rng.random() < stop_p:
                    break
                step = spec.edge_weight[cur].copy()
                step[target] = 0.0
                step *= g[:, r - 1]
                step /= step.sum()
                cur = int(rng.choice(spec.n_symbols, p=step))
                out.append(cur)
                r -= 1
            return ExpertSample(tuple(_symbol_token(s) for s in out), False)

    # Fallback: walk the last walkable state forward, stopping as soon as
    # first(y) becomes one step away (or the budget runs out).
    cur = start
    for sym in prefix_syms:
        if spec.edge_weight[cur, sym] == 0.0:
            break
        cur = sym
    remaining = max(0, cap - len(prefix))
    out = []
    while remaining > 0 and spec.edge_weight[cur, target] == 0.0:
        cur = int(rng.choice(spec.n_symbols, p=spec.edge_weight[cur]))
        out.append(cur)
        remaining -= 1
    return ExpertSample(tuple(_symbol_token(s) for s in out), True)


def _bridge_reach_ceiling(spec: TaskSpec, start: int, target: int) -> float:
    """Highest first-passage probability any valid bridge can set up.

    Bridges may end anywhere reachable over positive edges (avoiding the
    target itself); ending at u after d tokens leaves a free walk with
    budget max_path_len - d. First-passage probability is nondecreasing
    in budget, so the minimum-depth route to each u dominates.
    """
    w = spec.edge_weight
    depth = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            if depth[u] >= spec.max_path_len - 1:
                continue
            for v in range(spec.n_symbols):
                if v != target and w[u, v] > 0 and v not in depth:
                    depth[v] = depth[u] + 1
                    nxt.append(v)
        frontier = nxt
    return max(
        first_passage_prob(spec, u, target, spec.max_path_len - d)
        for u, d in depth.items()
    )


def max_conditioned_likelihood(spec: TaskSpec, x: Tokens, y: Tokens) -> float:
    """Exact ceiling of p(y|x,z) over all valid bridges z (including empty)."""
    x_syms = _to_symbols(x, spec.n_symbols, "x")
    y_syms = _to_symbols(y, spec.n_symbols, "y")
    reach = _bridge_reach_ceiling(spec, x_syms[-1], y_syms[0])
    return reach * _internal_prob(spec, y_syms)


def likelihood_to_scale(p: float, th: RatingThresholds = DEFAULT_THRESHOLDS) -> int:
    """Map a probability to the 1..5 rating scale; boundaries round up."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    if p >= th.t5:
        return 5
    if p >= th.t4:
        return 4
    if p >= th.t3:
        return 3
    if p >= th.t2:
        return 2
    return 1


def sample_context_outcome(
    spec: TaskSpec,
    seed: int,
    uncommon: bool,
    thresholds: RatingThresholds = DEFAULT_THRESHOLDS,
    max_draws: int = 10_000,
    min_explained: float = 0.3,
):
    """Draw (x, y, p_true) with y rejected until rated uncommon if asked.

    Uncommon outcomes keep a nonzero likelihood but rate at most 2 on the
    scale, and some bridge must be able to lift the conditioned
    likelihood to at least ``min_explained`` (unlikely, yet explainable;
    set 0 to drop the explainability requirement). Common outcomes simply
    continue the context's walk, so a deterministic chain world yields
    p_true = 1.
    """
    rng = np.random.default_rng(seed)
    w = spec.edge_weight
    start = int(rng.integers(spec.n_symbols))
    x_syms = [start]
    for _ in range(spec.context_len - 1):
        x_syms.append(int(rng.choice(spec.n_symbols, p=w[x_syms[-1]])))
    x = tuple(_symbol_token(s) for s in x_syms)

    def walk_outcome(first: int, uniform_edges: bool) -> Tokens:
        y_syms = [first]
        for _ in range(spec.outcome_len - 1):
            row = w[y_syms[-1]]
            if uniform_edges:
                # Uniform over positive edges: a valid walk, but a proposal
                # that reaches low-probability outcomes far more often.
                row = (row > 0).astype(float)
                row = row / row.sum()
            y_syms.append(int(rng.choice(spec.n_symbols, p=row)))
        return tuple(_symbol_token(s) for s in y_syms)

    if not uncommon:
        first = int(rng.choice(spec.n_symbols, p=w[x_syms[-1]]))
        y = walk_outcome(first, uniform_edges=False)
        return x, y, true_outcome_likelihood(spec, x, y)

    for _ in range(max_draws):
        first = int(rng.integers(spec.n_symbols))
        y = walk_outcome(first, uniform_edges=True)
        p = true_outcome_likelihood(spec, x, y)
        if p <= 0.0 or likelihood_to_scale(p, thresholds) > 2:
            continue
        if min_explained > 0 and max_conditioned_likelihood(spec, x, y) < min_explained:
            continue
        return x, y, p
    raise RuntimeError(
        "could not draw an uncommon outcome in "
        f"{max_draws} attempts; try a sparser world (lower sparsity or horizon)"
    )


def uncommon_coverage(
    spec: TaskSpec,
    thresholds: RatingThresholds = DEFAULT_THRESHOLDS,
    min_explained: float = 0.3,
) -> float:
    """Fraction of context end-symbols admitting an uncommon outcome.

    Applies the same acceptance rule as uncommon sampling (rated at most
    2, explainable to at least ``min_explained``). Contexts ending at an
    uncovered symbol make rejection sampling stall, so dataset generation
    screens worlds by this fraction and redraws stalled pairs.
    """
    w = spec.edge_weight

    def internal_paths(first: int):
        paths = [((first,), 1.0)]
        for _ in range(spec.outcome_len - 1):
            grown = []
            for path, p in paths:
                for nxt in range(spec.n_symbols):
                    if w[path[-1], nxt] > 0:
                        grown.append((path + (nxt,), p * w[path[-1], nxt]))
            paths = grown
        return paths

    covered = 0
    for start in range(spec.n_symbols):
        found = False
        for first in range(spec.n_symbols):
            reach = first_passage_prob(spec, start, first, spec.max_path_len)
            if reach == 0.0:
                continue
            ceiling_reach = _bridge_reach_ceiling(spec, start, first)
            for _, internal in internal_paths(first):
                p = reach * internal
                if p <= 0.0 or likelihood_to_scale(p, thresholds) > 2:
                    continue
                if min_explained > 0 and ceiling_reach * internal < min_explained:
                    continue
                found = True
                break
            if found:
                break
        covered += found
    return covered / spec.n_symbols


def filter_common(
    dataset: Dataset, spec: TaskSpec, th: RatingThresholds = DEFAULT_THRESHOLDS
) -> Dataset:
    """Drop examples rated 4 or 5; stamp the scale on everything kept."""
    kept = []
    for ex in dataset:
        scale = likelihood_to_scale(true_outcome_likelihood(spec, ex.x, ex.y), th)
        if scale <= 3:
            kept.append(replace(ex, likelihood_scale=scale))
    return Dataset(tuple(kept), split=dataset.split)


def select_least_likely(candidates, x: Tokens, spec: TaskSpec) -> Tokens:
    """The candidate outcome minimizing p(y|x); ties go to the lowest index."""
    if not candidates:
        raise ValueError("need at least one candidate")
    probs = [true_outcome_likelihood(spec, x, cand) for cand in candidates]
    return candidates[int(np.argmin(probs))]


def filter_impossible(dataset: Dataset, votes) -> Dataset:
    """Remove an example iff strictly more than half its votes say impossible."""
    if len(votes) != len(dataset):
        raise ValueError(f"got {len(votes)} vote lists for {len(dataset)} examples")
    kept = []
    for ex, ex_votes in zip(dataset, votes):
        if len(ex_votes) == 0:
            raise ValueError("every example needs at least one vote")
        if sum(bool(v) for v in ex_votes) * 2 <= len(ex_votes):
            kept.append(ex)
    return Dataset(tuple(kept), split=dataset.split)


def relevance_check(
    spec: TaskSpec, x: Tokens, y: Tokens, z: Tokens, epsilon: float
) -> bool:
    """True iff the explanation needs the context: p(y|x,z) - p(y|z) > eps.

    The context-free likelihood starts the walk from a uniform symbol.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    p_with = conditioned_outcome_likelihood(spec, x, y, z)
    p_without = sum(
        conditioned_outcome_likelihood(spec, (_symbol_token(u),), y, z)
        for u in range(spec.n_symbols)
    ) / spec.n_symbols
    return p_with - p_without > epsilon


def save_taskspec(spec: TaskSpec, path) -> None:
    """Self-describing text serialization with 17-significant-digit weights."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"n_symbols {spec.n_symbols}\n")
        fh.write(f"L {spec.max_path_len}\n")
        fh.write(f"outcome_len {spec.outcome_len}\n")
        fh.write(f"context_len {spec.context_len}\n")
        fh.write("edge_weight\n")
        for row in spec.edge_weight:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_taskspec(path) -> TaskSpec:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    head = {}
    idx = 0
    while idx < len(lines) and lines[idx] != "edge_weight":
        key, value = lines[idx].split()
        head[key] = int(value)
        idx += 1
    if idx == len(lines):
        raise ValueError(f"{path}: missing edge_weight block")
    rows = [[float(v) for v in line.split()] for line in lines[idx + 1:]]
    return TaskSpec(
        n_symbols=head["n_symbols"],
        edge_weight=np.array(rows),
        max_path_len=head["L"],
        outcome_len=head["outcome_len"],
        context_len=head["context_len"],
    )
