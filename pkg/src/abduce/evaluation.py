"""Automatic judging and pairwise preference accounting.

The judge scores an explanation by how much it raises the outcome's exact
likelihood: delta = p(y|x,z) - p(y|x). Pairwise verdicts turn two judged
systems into the four-way win / equally-good / equally-bad / lose
bookkeeping used for system comparison. Reference overlap metrics (an LCS
F-score and a bag-of-token F1) are provided for desk-scale comparison of
decoded explanations against references.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .data import Tokens
from .world import (
    DEFAULT_THRESHOLDS,
    RatingThresholds,
    TaskSpec,
    conditioned_outcome_likelihood,
    likelihood_to_scale,
    true_outcome_likelihood,
)

VERDICTS = ("win", "eq_good", "eq_bad", "lose")


@dataclass(frozen=True)
class JudgeScore:
    delta: float
    p_cond: float
    scale: int

    def __post_init__(self):
        if not -1.0 <= self.delta <= 1.0 or not 0.0 <= self.p_cond <= 1.0:
            raise ValueError("judge score out of range")


@dataclass
class VerdictTally:
    win: int = 0
    eq_good: int = 0
    eq_bad: int = 0
    lose: int = 0

    @property
    def total(self) -> int:
        return self.win + self.eq_good + self.eq_bad + self.lose

    @property
    def tie(self) -> int:
        return self.eq_good + self.eq_bad

    def add(self, verdict: str) -> None:
        if verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {verdict!r}")
        setattr(self, verdict, getattr(self, verdict) + 1)

    def percentages(self) -> dict:
        """Shares of each verdict, rounded to one decimal."""
        if self.total == 0:
            return {v: 0.0 for v in VERDICTS}
        return {v: round(100.0 * getattr(self, v) / self.total, 1) for v in VERDICTS}


def judge(
    spec: TaskSpec,
    x: Tokens,
    y: Tokens,
    z: Tokens,
    thresholds: RatingThresholds = DEFAULT_THRESHOLDS,
) -> JudgeScore:
    """Exact delta-likelihood score of one explanation."""
    p_cond = conditioned_outcome_likelihood(spec, x, y, z)
    p_base = true_outcome_likelihood(spec, x, y)
    return JudgeScore(
        delta=p_cond - p_base,
        p_cond=p_cond,
        scale=likelihood_to_scale(p_cond, thresholds),
    )


def pairwise_verdict(a: JudgeScore, b: JudgeScore, tau: float, tie_eps: float) -> str:
    """Four-way verdict for system a against system b.

    Deltas within ``tie_eps`` tie; a tie is equally good when both clear
    ``tau`` and equally bad otherwise. Larger delta wins.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if tie_eps < 0:
        raise ValueError("tie_eps must be nonnegative")
    if abs(a.delta - b.delta) <= tie_eps:
        return "eq_good" if a.delta >= tau and b.delta >= tau else "eq_bad"
    return "win" if a.delta > b.delta else "lose"


def win_rate_table(
    pairs,
    system_outputs: dict,
    reference_system: str,
    spec: TaskSpec,
    tau: float = 0.05,
    tie_eps: float = 0.01,
) -> dict:
    """Tally each system's verdicts against the reference over all pairs.

    ``pairs`` is the aligned list of (x, y); ``system_outputs`` maps a
    system name to its per-pair explanations.
    """
    if reference_system not in system_outputs:
        raise ValueError(f"reference system {reference_system!r} missing from outputs")
    for name, outputs in system_outputs.items():
        if len(outputs) != len(pairs):
            raise ValueError(
                f"system {name!r} has {len(outputs)} outputs for {len(pairs)} pairs"
            )
    ref_scores = [
        judge(spec, x, y, z)
        for (x, y), z in zip(pairs, system_outputs[reference_system])
    ]
    tallies = {}
    for name, outputs in system_outputs.items():
        tally = VerdictTally()
        for (x, y), z, ref in zip(pairs, outputs, ref_scores):
            tally.add(pairwise_verdict(judge(spec, x, y, z), ref, tau, tie_eps))
        tallies[name] = tally
    return tallies


def _lcs_len(a: Tokens, b: Tokens) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def lcs_fscore(hypothesis: Tokens, reference: Tokens) -> float:
    """F-measure of the longest common subsequence; 0 if either is empty."""
    if len(hypothesis) == 0 or len(reference) == 0:
        return 0.0
    lcs = _lcs_len(hypothesis, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hypothesis)
    recall = lcs / len(reference)
    return 2.0 * precision * recall / (precision + recall)


def token_f1(hypothesis: Tokens, reference: Tokens) -> float:
    """Multiset token-overlap F1; permutations of the same bag score 1."""
    if len(hypothesis) == 0 or len(reference) == 0:
        return 0.0
    overlap = sum((Counter(hypothesis) & Counter(reference)).values())
    return 2.0 * overlap / (len(hypothesis) + len(reference))
