"""The batch design loop and its evaluation quantities.

Each cycle fits the configured surrogate on the labeled genes, optionally
builds an enrichment prior from the top-valued labels, scores the unlabeled
candidates, reweights the scores by the prior, selects a batch, and queries
the label oracle. Per-cycle records carry cumulative top-k recall, prior
diagnostics, and the prior's regret factor.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .acquire import bio_augment, ei, greedy_ea_policy, random_policy, select_batch, ts, ucb
from .enrich import (
    SIGNIFICANCE_LEVEL,
    PriorWeights,
    build_prior,
    run_enrichment,
    top_fraction,
)
from .genepool import GenePool, PathwayDB, PoolState, fuse
from .surrogate import (
    EnsembleConfig,
    EnsembleModel,
    GPConfig,
    GPModel,
    MetricRecord,
    eval_metrics,
    fit_ensemble,
    fit_gp,
    predict,
)

ACQUISITIONS = ("ei", "ucb", "ts", "random", "greedy-ea")
SURROGATES = ("gp", "ensemble")

# stream tags for per-cycle derived seeds
_TAG_POLICY = 1
_TAG_FIT = 2
_TAG_TS = 3


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic, well-mixed child seed for a (seed, cycle, stream) triple."""
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a design run besides the pool itself."""

    cycles: int = 20
    batch_size: int = 32
    init_size: int = 32
    acquisition: str = "ucb"
    prior: str = "none"
    beta: float = 1.0
    temperature: float = 0.1
    kappa: float = 1.0
    top_fraction_for_ea: float = 0.10
    recall_percentile: float = 0.01
    surrogate: str = "gp"
    agg: str = "mean"
    seed: int = 0
    modalities: tuple[str, ...] | None = None
    gp: GPConfig = GPConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    eval_fractions: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.cycles < 1 or self.batch_size < 1 or self.init_size < 1:
            raise ValueError("cycles, batch_size, init_size must be >= 1")
        if self.acquisition not in ACQUISITIONS:
            raise ValueError(f"unknown acquisition {self.acquisition!r}")
        if self.surrogate not in SURROGATES:
            raise ValueError(f"unknown surrogate {self.surrogate!r}")
        if self.agg not in ("mean", "max"):
            raise ValueError(f"unknown aggregation {self.agg!r}")
        if self.beta < 0 or self.kappa < 0:
            raise ValueError("beta and kappa must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        for frac in (self.top_fraction_for_ea, self.recall_percentile):
            if not 0.0 < frac <= 1.0:
                raise ValueError("fractions must be in (0, 1]")
        if self.acquisition == "greedy-ea" and self.prior == "none":
            raise ValueError("greedy-ea requires an enrichment prior")
        if self.modalities is not None:
            object.__setattr__(self, "modalities", tuple(self.modalities))
        if self.eval_fractions is not None:
            object.__setattr__(self, "eval_fractions", tuple(self.eval_fractions))


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    batch: tuple[str, ...]
    cumulative_recall: float
    n_significant_pathways: int
    prior_max_min_ratio: float
    regret_factor: float
    surrogate_metrics: MetricRecord | None = None


@dataclass(frozen=True)
class RunResult:
    config: RunConfig
    records: tuple[CycleRecord, ...]
    final_recall: float
    labels_used: int
    exhausted: bool


def config_to_dict(config: RunConfig) -> dict:
    out = asdict(config)
    out["modalities"] = list(config.modalities) if config.modalities is not None else None
    out["eval_fractions"] = (
        list(config.eval_fractions) if config.eval_fractions is not None else None
    )
    return out


def config_hash(config: RunConfig) -> str:
    """Hash of the config with the seed removed, for grouping runs."""
    payload = config_to_dict(config)
    payload.pop("seed")
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
    return digest[:12]


def record_to_dict(record: CycleRecord) -> dict:
    return {
        "cycle": record.cycle,
        "batch": list(record.batch),
        "cumulative_recall": record.cumulative_recall,
        "n_significant_pathways": record.n_significant_pathways,
        "prior_max_min_ratio": record.prior_max_min_ratio,
        "regret_factor": record.regret_factor,
        "surrogate_metrics": (
            record.surrogate_metrics.as_dict() if record.surrogate_metrics else None
        ),
    }


def result_jsonl_lines(result: RunResult) -> list[str]:
    return [json.dumps(record_to_dict(r), sort_keys=True) for r in result.records]


def true_topk(pool: GenePool, percentile: float) -> frozenset[str]:
    """The ceil(percentile * |pool|) genes with highest true labels, id tie-break."""
    if not 0.0 < percentile <= 1.0:
        raise ValueError("percentile must be in (0, 1]")
    k = math.ceil(percentile * pool.size)
    ranked = sorted(pool.ids, key=lambda g: (-pool.labels[g], g))
    return frozenset(ranked[:k])


def cumulative_topk_recall(labeled_ids: Sequence[str], topk: frozenset[str]) -> float:
    """Fraction of the true top-k set already labeled."""
    if not topk:
        raise ValueError("topk set is empty")
    return len(set(labeled_ids) & topk) / len(topk)


def regret_factor(prior: PriorWeights, beta: float, n_labeled: int) -> float:
    """(max prob / min prob) ** (beta / n_labeled): the prior's regret multiplier."""
    if n_labeled < 1:
        raise ValueError("n_labeled must be >= 1")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    ratio = float(prior.prob.max() / prior.prob.min())
    return ratio ** (beta / n_labeled)


def _fit_surrogate(
    config: RunConfig, X: np.ndarray, y: np.ndarray, cycle: int
) -> GPModel | EnsembleModel:
    if config.surrogate == "gp":
        return fit_gp(X, y, config.gp)
    return fit_ensemble(X, y, config.ensemble, seed=derive_seed(config.seed, cycle, _TAG_FIT))


def run(pool: GenePool, pathway_db: PathwayDB | None, config: RunConfig) -> RunResult:
    """Execute one design run; fully deterministic given ``config.seed``.

    Cycle 0 labels ``init_size`` genes uniformly at random. Each later cycle:
    fit the surrogate (model-based acquisitions only), build the enrichment
    prior from the top-fraction labeled genes (when a prior is configured),
    score and reweight the candidates, select a batch, query the oracle. The
    loop stops early with ``exhausted=True`` if the pool runs out.
    """
    prior_enabled = config.prior != "none"
    if prior_enabled and pathway_db is None:
        raise ValueError(f"prior {config.prior!r} requires a pathway database")
    if prior_enabled:
        pathway_db = pathway_db.restrict(pool.ids)
    modality_names = (
        list(config.modalities) if config.modalities is not None else list(pool.modalities)
    )
    features = fuse(pool, modality_names)
    row_of = pool.index()
    topk = true_topk(pool, config.recall_percentile)
    state = PoolState.fresh(pool)

    init = random_policy(pool.ids, min(config.init_size, pool.size),
                         derive_seed(config.seed, 0, _TAG_POLICY))
    state.observe(init, [pool.labels[g] for g in init], cycle=0)
    records = [
        CycleRecord(
            cycle=0,
            batch=tuple(init),
            cumulative_recall=cumulative_topk_recall(state.labeled, topk),
            n_significant_pathways=0,
            prior_max_min_ratio=1.0,
            regret_factor=1.0,
        )
    ]

    exhausted = False
    needs_model = config.acquisition in ("ei", "ucb", "ts")
    for cycle in range(1, config.cycles + 1):
        if not state.unlabeled:
            exhausted = True
            break
        n_labeled = len(state.labeled)
        cand_ids = tuple(state.unlabeled)
        X_cand = features[[row_of[g] for g in cand_ids]]

        model = None
        if needs_model:
            labeled_ids = list(state.labeled)
            X_lab = features[[row_of[g] for g in labeled_ids]]
            y_lab = np.array([state.labeled[g] for g in labeled_ids])
            model = _fit_surrogate(config, X_lab, y_lab, cycle)

        prior = None
        n_significant = 0
        ratio = 1.0
        c_factor = 1.0
        if prior_enabled and len(cand_ids) >= 2:
            interest = top_fraction(state, config.top_fraction_for_ea)
            table = run_enrichment(interest, pool, pathway_db)
            n_significant = sum(1 for r in table if r.p_adjusted < SIGNIFICANCE_LEVEL)
            prior = build_prior(state, table, pathway_db, config.temperature, config.agg)
            ratio = float(prior.prob.max() / prior.prob.min())
            c_factor = regret_factor(prior, config.beta, n_labeled)

        batch_size = min(config.batch_size, len(cand_ids))
        if config.acquisition == "random":
            batch = random_policy(cand_ids, batch_size, derive_seed(config.seed, cycle, _TAG_POLICY))
        elif config.acquisition == "greedy-ea":
            batch = (
                greedy_ea_policy(prior, batch_size)
                if prior is not None
                else sorted(cand_ids)[:batch_size]
            )
        else:
            if config.acquisition == "ei":
                y_best = max(state.labeled.values())
                scores = ei(predict(model, X_cand, cand_ids), y_best)
            elif config.acquisition == "ucb":
                scores = ucb(predict(model, X_cand, cand_ids), config.kappa)
            else:
                scores = ts(model, X_cand, derive_seed(config.seed, cycle, _TAG_TS), cand_ids)
            if prior is not None:
                scores = bio_augment(scores, prior, config.beta, n_labeled)
            batch = select_batch(scores, batch_size)

        metrics = None
        if config.eval_fractions and model is not None:
            cand_truth = pool.label_vector(cand_ids)
            metrics = eval_metrics(predict(model, X_cand, cand_ids), cand_truth,
                                   config.eval_fractions)

        state.observe(batch, [pool.labels[g] for g in batch], cycle=cycle)
        records.append(
            CycleRecord(
                cycle=cycle,
                batch=tuple(batch),
                cumulative_recall=cumulative_topk_recall(state.labeled, topk),
                n_significant_pathways=n_significant,
                prior_max_min_ratio=ratio,
                regret_factor=c_factor,
                surrogate_metrics=metrics,
            )
        )

    return RunResult(
        config=config,
        records=tuple(records),
        final_recall=records[-1].cumulative_recall,
        labels_used=len(state.labeled),
        exhausted=exhausted,
    )


def labels_to_target(result: RunResult, target_recall: float) -> int | None:
    """Labels spent when the run first reaches the target recall, else None."""
    total = 0
    for record in result.records:
        total += len(record.batch)
        if record.cumulative_recall >= target_recall:
            return total
    return None


def labeling_efficiency(
    result_a: RunResult, result_b: RunResult, target_recall: float
) -> float | None:
    """1 - labels_A / labels_B to first reach the target; None when unreached.

    Positive values mean A needs fewer labels than B.
    """
    if result_a.config.recall_percentile != result_b.config.recall_percentile:
        raise ValueError("runs use different recall percentiles")
    labels_a = labels_to_target(result_a, target_recall)
    labels_b = labels_to_target(result_b, target_recall)
    if labels_a is None or labels_b is None:
        return None
    return 1.0 - labels_a / labels_b
