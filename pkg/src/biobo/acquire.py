"""Acquisition scoring and batch selection over a discrete candidate pool.

Expected improvement, upper confidence bound, and Thompson sampling score the
unlabeled candidates from a surrogate posterior; the enrichment prior can
then reweight the scores multiplicatively with an exponent that decays as
labels accumulate. Two model-free baselines (uniform random and greedy
prior selection) share the same batch interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .enrich import PriorWeights
from .surrogate import EnsembleModel, GPModel, Posterior, sample_posterior

SHIFT_EPS = 1e-12


@dataclass(frozen=True)
class AcquisitionScores:
    """Raw acquisition values per candidate, plus prior-weighted ones if set."""

    ids: tuple[str, ...]
    raw: np.ndarray
    weighted: np.ndarray | None = None

    def __post_init__(self) -> None:
        raw = np.asarray(self.raw, dtype=float)
        if raw.shape[0] != len(self.ids):
            raise ValueError("ids and raw scores must have equal lengths")
        if not np.all(np.isfinite(raw)):
            raise ValueError("non-finite acquisition score")
        object.__setattr__(self, "raw", raw)
        if self.weighted is not None:
            weighted = np.asarray(self.weighted, dtype=float)
            if weighted.shape[0] != len(self.ids):
                raise ValueError("ids and weighted scores must have equal lengths")
            if not np.all(np.isfinite(weighted)):
                raise ValueError("non-finite weighted score")
            object.__setattr__(self, "weighted", weighted)

    @property
    def effective(self) -> np.ndarray:
        return self.weighted if self.weighted is not None else self.raw


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    # complementary-error-function form; |abs error| < 1e-12
    return 0.5 * erfc(-z / math.sqrt(2.0))


def _norm_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)


def ei(posterior: Posterior, y_best: float) -> AcquisitionScores:
    """Expected improvement over the best observed value.

    With Z = (mean - y_best) / sd: EI = sd * Z * cdf(Z) + sd * pdf(Z),
    clamped at 0 against rounding.
    """
    z = (posterior.mean - y_best) / posterior.sd
    values = posterior.sd * (z * _norm_cdf(z) + _norm_pdf(z))
    return AcquisitionScores(posterior.ids, np.maximum(values, 0.0))


def ucb(posterior: Posterior, kappa: float = 1.0) -> AcquisitionScores:
    """Upper confidence bound mean + kappa * sd."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    return AcquisitionScores(posterior.ids, posterior.mean + kappa * posterior.sd)


def ts(
    model: GPModel | EnsembleModel,
    candidates: np.ndarray,
    seed: int,
    ids: Sequence[str] | None = None,
) -> AcquisitionScores:
    """Thompson sampling: one posterior draw per candidate as its score."""
    scores = sample_posterior(model, candidates, seed)
    if ids is None:
        ids = tuple(str(i) for i in range(len(scores)))
    return AcquisitionScores(tuple(ids), scores)


def bio_augment(
    scores: AcquisitionScores, prior: PriorWeights, beta: float, n_labeled: int
) -> AcquisitionScores:
    """Reweight scores by prior probability with a label-decayed exponent.

    Raw scores are first shifted to be non-negative over the pool (the
    multiplicative form presumes non-negative values; the shift preserves the
    unweighted argmax), then multiplied by prob ** (beta / n_labeled).
    """
    if scores.ids != prior.ids:
        raise ValueError("acquisition scores and prior are over different ids")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if n_labeled < 1:
        raise ValueError("n_labeled must be >= 1")
    shifted = scores.raw - scores.raw.min() + SHIFT_EPS
    weighted = shifted * prior.prob ** (beta / n_labeled)
    return AcquisitionScores(scores.ids, scores.raw, weighted)


def select_batch(scores: AcquisitionScores, batch_size: int) -> list[str]:
    """The batch_size ids with highest effective score, descending, id tie-break."""
    n = len(scores.ids)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}]")
    values = scores.effective
    order = sorted(range(n), key=lambda i: (-values[i], scores.ids[i]))
    return [scores.ids[i] for i in order[:batch_size]]


def random_policy(unlabeled: Sequence[str], batch_size: int, seed: int) -> list[str]:
    """Uniform sample without replacement, deterministic given ``seed``."""
    ids = sorted(unlabeled)
    if not 1 <= batch_size <= len(ids):
        raise ValueError(f"batch_size must be in [1, {len(ids)}]")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(ids), size=batch_size, replace=False)
    return [ids[i] for i in picks]


def greedy_ea_policy(prior: PriorWeights, batch_size: int) -> list[str]:
    """Top batch_size candidates by prior probability, id tie-break."""
    n = len(prior.ids)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}]")
    order = sorted(range(n), key=lambda i: (-prior.prob[i], prior.ids[i]))
    return [prior.ids[i] for i in order[:batch_size]]
