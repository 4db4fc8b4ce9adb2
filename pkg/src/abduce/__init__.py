"""Exactly solvable imitation-learning testbed for abductive explanations.

Contexts and outcomes live on a weighted symbol-transition graph where
every likelihood is computable in closed form, so the expert policy, the
judge and all curation filters are exact. On top of that world the
package trains and compares three regimes for generating explanations
that make an unlikely outcome likely: behavior cloning on expert
demonstrations, online training with the expert completing learner
prefixes, and online training against static demonstrations with an
unlikelihood and KL-regularized objective.
"""

from .analysis import (
    DiversityReport,
    embedding_diversity,
    fleiss_kappa,
    length_stats,
    ngram_entropy,
)
from .autodiff import Gradients, Tensor, finite_diff_check, grad, sgd_step
from .data import (
    BOS,
    EOS,
    SEP,
    Dataset,
    Example,
    Tokens,
    Vocab,
    detokenize,
    load_dataset,
    make_vocab,
    save_dataset,
    split_dataset,
    tokenize,
)
from .evaluation import (
    JudgeScore,
    VerdictTally,
    judge,
    lcs_fscore,
    pairwise_verdict,
    token_f1,
    win_rate_table,
)
from .imitation import (
    AggregatedExample,
    TrainerConfig,
    bc_loss,
    kl_to_initial,
    sed_loss,
    select_checkpoint,
    splice_prefix,
    train_bc,
    train_eao,
    train_sed,
)
from .policy import (
    Distribution,
    PolicyParams,
    greedy_decode,
    init_params,
    load_checkpoint,
    next_token_dist,
    sample_sequence,
    save_checkpoint,
    sequence_logprob,
)
from .world import (
    DEFAULT_THRESHOLDS,
    ExpertSample,
    RatingThresholds,
    TaskSpec,
    conditioned_outcome_likelihood,
    expert_logprob,
    expert_sample,
    filter_common,
    filter_impossible,
    generate_world,
    likelihood_to_scale,
    load_taskspec,
    max_conditioned_likelihood,
    relevance_check,
    sample_context_outcome,
    save_taskspec,
    select_least_likely,
    true_outcome_likelihood,
    uncommon_coverage,
)

__version__ = "0.1.0"
