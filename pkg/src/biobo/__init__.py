"""Biology-informed Bayesian optimization over finite gene pools."""

from .acquire import (
    AcquisitionScores,
    bio_augment,
    ei,
    greedy_ea_policy,
    random_policy,
    select_batch,
    ts,
    ucb,
)
from .enrich import (
    ContingencyTable,
    EnrichmentRow,
    PriorWeights,
    bonferroni,
    build_prior,
    combined_score,
    hypergeom_p,
    odds_ratio,
    run_enrichment,
    top_fraction,
)
from .genepool import (
    GenePool,
    PathwayDB,
    PoolState,
    build_pool,
    fuse,
    load_embeddings,
    load_labels,
    parse_gmt,
    synth_benchmark,
    train_test_split,
)
from .loop import (
    CycleRecord,
    RunConfig,
    RunResult,
    cumulative_topk_recall,
    labeling_efficiency,
    regret_factor,
    run,
    true_topk,
)
from .surrogate import (
    EnsembleConfig,
    GPConfig,
    MetricRecord,
    Posterior,
    eval_metrics,
    fit_ensemble,
    fit_gp,
    predict,
    sample_posterior,
)

__version__ = "0.1.0"
