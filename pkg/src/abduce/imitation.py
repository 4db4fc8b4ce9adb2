"""Trainers: behavior cloning and the two online imitation regimes.

Behavior cloning minimizes the NLL of static expert demonstrations. The
oracle-continuation trainer (``train_eao``) resamples an explanation from
the current learner each epoch, keeps a growing prefix of it, asks the
exact expert to finish the sequence, and trains on the splice; the kept
prefix grows by ``block_size`` tokens per epoch. The static-demonstration
trainer (``train_sed``) also samples from the current learner each epoch
but keeps the expert demonstrations fixed, optimizing expert NLL plus an
unlikelihood term on the learner's own samples plus a KL anchor to the
initial policy.

Both online trainers aggregate their per-epoch examples cumulatively, so
after epoch i the aggregated set holds (i+1) * N entries. Every trainer
is a pure function of (config, data, seed): per-example sampling seeds
are derived from (seed, epoch, index), so results do not depend on
iteration order or worker count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import policy as pol
from . import world as wd
from .autodiff import grad, kl_rows_sum, mean_scalars, sgd_step
from .data import Dataset, Tokens
from .seeding import derive_seed


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters shared by all trainers.

    ``lam`` weights the unlikelihood term and ``beta`` the KL anchor in
    the static-demonstration objective; both are ignored by the other
    trainers. ``lr`` may be 0, which freezes the parameters (useful for
    reproducibility checks).
    """

    vocab_size: int
    dim: int = 24
    window: int = 6
    lr: float = 1e-5
    batch_size: int = 8
    epochs: int = 5
    block_size: int = 2
    initial_prefix: int = 0
    lam: float = 0.1
    beta: float = 0.01
    max_len: int = 3
    temperature: float = 1.0
    seed: int = 0
    prefix_loss_masked: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.block_size < 0 or self.initial_prefix < 0:
            raise ValueError("block_size and initial_prefix must be nonnegative")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be nonnegative")
        if self.batch_size < 1 or self.max_len < 1:
            raise ValueError("batch_size and max_len must be at least 1")


@dataclass(frozen=True)
class AggregatedExample:
    """One aggregated training tuple.

    Oracle-continuation training stores the spliced sequence in ``z`` with
    the learner-written prefix length (the raw learner sample is kept in
    ``z_tilde`` for auditing); static-demonstration training keeps the
    expert demonstration in ``z`` and the learner sample in ``z_tilde``.
    """

    x: Tokens
    y: Tokens
    z: Tokens
    z_tilde: Tokens | None = None
    prefix_len: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_metric: float
    prefix_len: int | None
    agg_size: int | None
    params: pol.PolicyParams = field(repr=False, default=None)
    # Examples newly aggregated this epoch (online trainers only).
    aggregated: tuple = field(repr=False, default=())


class TrainingDiverged(RuntimeError):
    pass


def bc_loss(params, batch, mask_prefix: bool = False):
    """Mean negative log-likelihood of the batch's explanations.

    With ``mask_prefix`` the first ``prefix_len`` positions of each
    sequence are excluded from the loss.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    terms = []
    for ex in batch:
        if ex.z is None:
            raise ValueError("behavior cloning requires an explanation on every example")
        start = getattr(ex, "prefix_len", 0) if mask_prefix else 0
        terms.append(-pol.sequence_logprob(params, ex.x, ex.y, ex.z, from_position=start))
    return mean_scalars(terms)


def kl_to_initial(params0: pol.PolicyParams, params, x: Tokens, y: Tokens, z: Tokens):
    """Mean per-position KL from the frozen initial policy to the current one.

    Positions run over every step of z including the EOS step; the frozen
    distributions are constants, so the result is differentiable in the
    current parameters only.
    """
    p0 = pol.position_distributions(params0, x, y, z)
    logits = pol.forward_logits(params, x, y, z)
    return kl_rows_sum(p0, logits) * (1.0 / (len(z) + 1))


def sed_loss(params, params0: pol.PolicyParams, batch, lam: float, beta: float):
    """Expert NLL + lam * learner-sample log-likelihood + beta * KL anchor.

    Reduces exactly to :func:`bc_loss` at lam = beta = 0.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    terms = []
    for ex in batch:
        if ex.z is None or ex.z_tilde is None:
            raise ValueError("need both the expert demonstration and a learner sample")
        term = -pol.sequence_logprob(params, ex.x, ex.y, ex.z)
        term = term + lam * pol.sequence_logprob(params, ex.x, ex.y, ex.z_tilde)
        term = term + beta * kl_to_initial(params0, params, ex.x, ex.y, ex.z)
        terms.append(term)
    return mean_scalars(terms)


def splice_prefix(learner_sample: Tokens, expert_continuation: Tokens, b: int) -> Tokens:
    """First min(b, len(sample)) learner tokens followed by the expert's."""
    if b < 0:
        raise ValueError("prefix length must be nonnegative")
    return tuple(learner_sample[:b]) + tuple(expert_continuation)


def select_checkpoint(history) -> pol.PolicyParams:
    """Parameters with the highest dev metric; ties go to the earliest epoch."""
    entries = list(history)
    if not entries:
        raise ValueError("history must be non-empty")
    best_params, best_metric = entries[0]
    for params, metric in entries[1:]:
        if metric > best_metric:
            best_params, best_metric = params, metric
    return best_params


def _dev_metric(params, dev: Dataset, spec, config: TrainerConfig, epoch_loss: float) -> float:
    """Checkpoint-selection metric, higher is better.

    With a world available: mean judge delta of greedy decodes on dev.
    Otherwise mean dev log-likelihood if dev carries explanations, else
    the negated train loss as a last resort.
    """
    if spec is not None:
        deltas = []
        for ex in dev:
            z_hat = pol.greedy_decode(params, ex.x, ex.y, config.max_len)
            p_cond = wd.conditioned_outcome_likelihood(spec, ex.x, ex.y, z_hat)
            p_base = wd.true_outcome_likelihood(spec, ex.x, ex.y)
            deltas.append(p_cond - p_base)
        return float(np.mean(deltas)) if deltas else -epoch_loss
    with_z = [ex for ex in dev if ex.z is not None]
    if with_z:
        return float(
            np.mean([pol.sequence_logprob(params, ex.x, ex.y, ex.z) for ex in with_z])
        )
    return -epoch_loss


def _epoch_pass(params, pool, loss_fn, config: TrainerConfig, epoch: int):
    """One shuffled pass of mini-batch SGD; returns (params, mean batch loss)."""
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle", epoch))
    order = rng.permutation(len(pool))
    losses = []
    for start in range(0, len(pool), config.batch_size):
        batch = [pool[i] for i in order[start:start + config.batch_size]]
        try:
            loss, grads = grad(lambda p: loss_fn(p, batch), params)
        except FloatingPointError as err:
            step = start // config.batch_size
            raise TrainingDiverged(f"epoch {epoch}, step {step}: {err}") from None
        if config.lr > 0:
            params = sgd_step(params, grads, config.lr)
        losses.append(loss)
    return params, float(np.mean(losses))


def train_bc(config: TrainerConfig, train: Dataset, dev: Dataset, spec=None):
    """Behavior cloning on static expert demonstrations."""
    params = pol.init_params(
        derive_seed(config.seed, "init"), config.vocab_size, config.dim, config.window
    )
    history: list[EpochRecord] = []
    for epoch in range(config.epochs):
        params, loss = _epoch_pass(params, list(train), bc_loss, config, epoch)
        metric = _dev_metric(params, dev, spec, config, loss)
        history.append(EpochRecord(epoch, loss, metric, None, None, params))
    best = select_checkpoint([(h.params, h.dev_metric) for h in history])
    return best, history


def train_sed(config: TrainerConfig, train: Dataset, dev: Dataset, spec=None):
    """Online training against static expert demonstrations.

    Each epoch samples one explanation per example from the current
    policy, appends (x, y, expert z, sample) to the cumulative pool, then
    optimizes the unlikelihood-regularized objective over the whole pool.
    """
    params = pol.init_params(
        derive_seed(config.seed, "init"), config.vocab_size, config.dim, config.window
    )
    params0 = params
    pool: list[AggregatedExample] = []
    history: list[EpochRecord] = []

    def loss_fn(p, batch):
        return sed_loss(p, params0, batch, config.lam, config.beta)

    for epoch in range(config.epochs):
        fresh = []
        for idx, ex in enumerate(train):
            if ex.z is None:
                raise ValueError("static-demonstration training requires expert explanations")
            z_tilde = pol.sample_sequence(
                params,
                ex.x,
                ex.y,
                seed=derive_seed(config.seed, "learner", epoch, idx),
                max_len=config.max_len,
                temperature=config.temperature,
            )
            fresh.append(AggregatedExample(ex.x, ex.y, ex.z, z_tilde=z_tilde))
        pool.extend(fresh)
        params, loss = _epoch_pass(params, pool, loss_fn, config, epoch)
        metric = _dev_metric(params, dev, spec, config, loss)
        history.append(
            EpochRecord(epoch, loss, metric, None, len(pool), params, tuple(fresh))
        )
    best = select_checkpoint([(h.params, h.dev_metric) for h in history])
    return best, history


def train_eao(config: TrainerConfig, train: Dataset, spec: wd.TaskSpec, dev: Dataset):
    """Online training with the expert completing learner prefixes.

    Per epoch and example: sample an explanation from the current policy,
    keep its first b tokens, sample an expert completion of that prefix,
    and aggregate the splice. b starts at ``initial_prefix`` and grows by
    ``block_size`` after every epoch. Supervision covers the full spliced
    sequence unless ``prefix_loss_masked`` is set.
    """
    if spec is None:
        raise ValueError("oracle-continuation training needs the world for its expert")
    params = pol.init_params(
        derive_seed(config.seed, "init"), config.vocab_size, config.dim, config.window
    )
    pool: list[AggregatedExample] = []
    history: list[EpochRecord] = []
    b = config.initial_prefix

    def loss_fn(p, batch):
        return bc_loss(p, batch, mask_prefix=config.prefix_loss_masked)

    for epoch in range(config.epochs):
        fresh = []
        for idx, ex in enumerate(train):
            z_tilde = pol.sample_sequence(
                params,
                ex.x,
                ex.y,
                seed=derive_seed(config.seed, "learner", epoch, idx),
                max_len=config.max_len,
                temperature=config.temperature,
            )
            continuation = wd.expert_sample(
                spec,
                ex.x,
                ex.y,
                prefix=z_tilde[:b],
                seed=derive_seed(config.seed, "expert", epoch, idx),
                max_len=config.max_len,
            ).tokens
            spliced = splice_prefix(z_tilde, continuation, b)
            fresh.append(
                AggregatedExample(
                    ex.x, ex.y, spliced, z_tilde=z_tilde,
                    prefix_len=min(b, len(z_tilde)),
                )
            )
        pool.extend(fresh)
        params, loss = _epoch_pass(params, pool, loss_fn, config, epoch)
        metric = _dev_metric(params, dev, spec, config, loss)
        history.append(
            EpochRecord(epoch, loss, metric, b, len(pool), params, tuple(fresh))
        )
        b += config.block_size
    best = select_checkpoint([(h.params, h.dev_metric) for h in history])
    return best, history


def write_history(history, path) -> None:
    """CSV history: epoch, train loss, dev metric, prefix length b, pool size."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "dev_metric", "b", "agg_size"])
        for rec in history:
            writer.writerow(
                [
                    rec.epoch,
                    repr(rec.train_loss),
                    repr(rec.dev_metric),
                    "" if rec.prefix_len is None else rec.prefix_len,
                    "" if rec.agg_size is None else rec.agg_size,
                ]
            )
