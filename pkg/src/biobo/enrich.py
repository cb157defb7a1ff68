"""Over-representation statistics and the selection prior built from them.

Given a gene set of interest S drawn from a background universe G, each
pathway P is scored with the upper tail of the hypergeometric distribution,
a Bonferroni-adjusted p-value, an odds ratio from the 2x2 contingency table,
and the combined score -odds_ratio * ln(p). Significant pathways are then
turned into a softmax prior over unlabeled candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .genepool import GenePool, PathwayDB, PoolState

SIGNIFICANCE_LEVEL = 0.05
_PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class ContingencyTable:
    """2x2 overlap table: a = |S & P|, b = |S| - a, c = |P| - a, d = rest of G."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self) -> None:
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError(f"negative cell in contingency table {self!r}")

    @property
    def universe(self) -> int:
        return self.a + self.b + self.c + self.d


@dataclass(frozen=True)
class EnrichmentRow:
    pathway: str
    overlap: int
    pathway_size: int
    p_value: float
    p_adjusted: float
    odds_ratio: float
    combined_score: float

    def __post_init__(self) -> None:
        if not 0.0 < self.p_value <= 1.0:
            raise ValueError(f"p_value out of (0, 1]: {self.p_value}")
        if self.p_adjusted < self.p_value:
            raise ValueError("adjusted p-value below raw p-value")
        if abs(self.combined_score - (-self.odds_ratio * math.log(self.p_value))) > 1e-12:
            raise ValueError("combined_score inconsistent with odds_ratio and p_value")


@dataclass(frozen=True)
class PriorWeights:
    """Scores and softmax selection probabilities over unlabeled candidates."""

    ids: tuple[str, ...]
    score: np.ndarray
    prob: np.ndarray

    def __post_init__(self) -> None:
        score = np.asarray(self.score, dtype=float)
        prob = np.asarray(self.prob, dtype=float)
        if not (len(self.ids) == score.shape[0] == prob.shape[0]):
            raise ValueError("ids, score, prob must have equal lengths")
        if not np.all(np.isfinite(score)):
            raise ValueError("non-finite prior score")
        if not np.all(prob > 0.0):
            raise ValueError("prior probabilities must be strictly positive")
        if abs(float(prob.sum()) - 1.0) > 1e-12:
            raise ValueError("prior probabilities must sum to 1")
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "prob", prob)


def _log_comb(n: int, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def hypergeom_p(universe: int, pathway_size: int, sample_size: int, overlap: int) -> float:
    """Upper-tail hypergeometric p-value, in log space for stability.

    Probability of observing at least ``overlap`` hits when ``sample_size``
    genes are drawn uniformly without replacement from a universe of
    ``universe`` genes containing ``pathway_size`` marked ones. Clamped to
    (0, 1].
    """
    if universe < 1:
        raise ValueError("universe must be >= 1")
    if not 0 <= pathway_size <= universe:
        raise ValueError("pathway_size must be in [0, universe]")
    if not 0 <= sample_size <= universe:
        raise ValueError("sample_size must be in [0, universe]")
    upper = min(pathway_size, sample_size)
    if not 0 <= overlap <= upper:
        raise ValueError(f"overlap must be in [0, min(pathway_size, sample_size)]={upper}")
    if overlap == 0:
        return 1.0
    log_den = _log_comb(universe, sample_size)
    total = 0.0
    for i in range(overlap, upper + 1):
        log_num = _log_comb(pathway_size, i) + _log_comb(universe - pathway_size, sample_size - i)
        if log_num == -math.inf:
            continue
        total += math.exp(log_num - log_den)
    return min(1.0, max(total, _PROB_FLOOR))


def odds_ratio(table: ContingencyTable) -> float:
    """(a*d)/(b*c), with the Haldane-Anscombe +0.5 correction when any cell is 0."""
    a, b, c, d = float(table.a), float(table.b), float(table.c), float(table.d)
    if min(a, b, c, d) == 0.0:
        a, b, c, d = a + 0.5, b + 0.5, c + 0.5, d + 0.5
    return (a * d) / (b * c)


def bonferroni(p_values: Sequence[float]) -> list[float]:
    """Multiply each p-value by the number of tests, clamped at 1."""
    m = len(p_values)
    out = []
    for p in p_values:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p-value out of (0, 1]: {p}")
        out.append(min(1.0, p * m))
    return out


def combined_score(odds: float, p_value: float) -> float:
    """Enrichr-style ranking statistic: -odds * ln(p), using the raw p-value."""
    if odds < 0:
        raise ValueError("odds ratio must be >= 0")
    if not 0.0 < p_value <= 1.0:
        raise ValueError(f"p-value out of (0, 1]: {p_value}")
    return max(-odds * math.log(p_value), 0.0)


def run_enrichment(
    sample: Iterable[str], pool: GenePool, db: PathwayDB
) -> list[EnrichmentRow]:
    """Score every pathway that overlaps ``sample`` against the pool background.

    Pathways with zero overlap are skipped and do not count toward the
    Bonferroni denominator. Rows are sorted by combined score descending,
    ties by pathway name.
    """
    s = set(sample)
    if not s:
        raise ValueError("sample gene set is empty")
    outside = s - set(pool.ids)
    if outside:
        raise ValueError(f"sample genes outside the pool: {sorted(outside)[:5]}")
    g = pool.size
    tested: list[tuple[str, int, int, float, float]] = []
    for name, members in db.pathways.items():
        a = len(members & s)
        if a == 0:
            continue
        p = hypergeom_p(g, len(members), len(s), a)
        table = ContingencyTable(a, len(s) - a, len(members) - a, g - len(s) - len(members) + a)
        tested.append((name, a, len(members), p, odds_ratio(table)))
    adjusted = bonferroni([t[3] for t in tested])
    rows = [
        EnrichmentRow(
            pathway=name,
            overlap=a,
            pathway_size=size,
            p_value=p,
            p_adjusted=p_adj,
            odds_ratio=o,
            combined_score=combined_score(o, p),
        )
        for (name, a, size, p, o), p_adj in zip(tested, adjusted)
    ]
    rows.sort(key=lambda r: (-r.combined_score, r.pathway))
    return rows


def top_fraction(state: PoolState, fraction: float) -> set[str]:
    """The ceil(fraction * |labeled|) labeled genes with highest observed values.

    Value ties are broken by id order (smaller id first).
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    if not state.labeled:
        raise ValueError("no labeled genes")
    k = math.ceil(fraction * len(state.labeled))
    ranked = sorted(state.labeled, key=lambda g: (-state.labeled[g], g))
    return set(ranked[:k])


def build_prior(
    state: PoolState,
    table: Sequence[EnrichmentRow],
    db: PathwayDB,
    temperature: float = 0.1,
    agg: str = "mean",
) -> PriorWeights:
    """Convert enrichment results into selection probabilities over unlabeled genes.

    Each unlabeled gene's score is logit(1/U) plus 1/temperature times the
    aggregated combined score of the significant pathways (adjusted p < 0.05)
    containing it; genes in no significant pathway aggregate to 0. The
    probabilities are the max-stabilized softmax of the scores; with no
    significant pathway the prior is exactly uniform.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if agg not in ("mean", "max"):
        raise ValueError(f"unknown aggregation {agg!r}")
    unlabeled = tuple(state.unlabeled)
    u = len(unlabeled)
    if u < 2:
        raise ValueError("prior requires at least 2 unlabeled genes")
    base = -math.log(u - 1.0)  # logit(1/U)
    significant = [r for r in table if r.p_adjusted < SIGNIFICANCE_LEVEL]
    if not significant:
        return PriorWeights(unlabeled, np.full(u, base), np.full(u, 1.0 / u))
    per_gene: dict[str, list[float]] = {}
    for row in significant:
        for gene in db.pathways[row.pathway]:
            per_gene.setdefault(gene, []).append(row.combined_score)
    aggregate = (lambda cs: sum(cs) / len(cs)) if agg == "mean" else max
    score = np.array(
        [
            base + (aggregate(per_gene[g]) / temperature if g in per_gene else 0.0)
            for g in unlabeled
        ]
    )
    shifted = np.exp(score - score.max())
    prob = shifted / shifted.sum()
    prob = np.maximum(prob, _PROB_FLOOR)
    prob = prob / prob.sum()
    return PriorWeights(unlabeled, score, prob)
