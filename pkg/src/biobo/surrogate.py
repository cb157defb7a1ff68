"""Probabilistic surrogates over candidate embeddings.

Two interchangeable regressors produce a per-candidate predictive mean and
standard deviation: an exact Gaussian process with an RBF kernel, and a
committee of independently trained MLPs whose spread supplies the epistemic
part of the predictive variance. Both support posterior sampling for
Thompson-style selection, and the module provides the shared quality metrics
(log-likelihood and RMSE, globally and near the optimum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

SD_FLOOR = 1e-6
MEDIAN_HEURISTIC = "median-heuristic"
_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class Posterior:
    """Per-candidate predictive mean and standard deviation."""

    ids: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        sd = np.asarray(self.sd, dtype=float)
        if not (len(self.ids) == mean.shape[0] == sd.shape[0]):
            raise ValueError("ids, mean, sd must have equal lengths")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(sd))):
            raise ValueError("posterior contains non-finite values")
        if not np.all(sd > 0.0):
            raise ValueError("posterior sd must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)


@dataclass(frozen=True)
class GPConfig:
    """RBF-kernel GP hyperparameters; lengthscale may be the median heuristic."""

    lengthscale: float | str = MEDIAN_HEURISTIC
    signal_variance: float = 1.0
    noise_variance: float = 0.1
    jitter: float = 1e-8

    def __post_init__(self) -> None:
        if isinstance(self.lengthscale, str):
            if self.lengthscale != MEDIAN_HEURISTIC:
                raise ValueError(f"unknown lengthscale rule {self.lengthscale!r}")
        elif self.lengthscale <= 0:
            raise ValueError("lengthscale must be > 0")
        if self.signal_variance <= 0 or self.noise_variance <= 0 or self.jitter <= 0:
            raise ValueError("signal_variance, noise_variance, jitter must be > 0")


@dataclass(frozen=True)
class EnsembleConfig:
    """MLP committee hyperparameters."""

    members: int = 10
    hidden_width: int = 64
    depth: int = 2
    activation: str = "relu"
    learning_rate: float = 0.001
    weight_decay: float = 0.0001
    max_epochs: int = 200
    patience: int = 30
    batch_size: int = 256
    observation_noise_sd: float = 0.5
    validation_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.members < 2:
            raise ValueError("members must be >= 2")
        if self.activation != "relu":
            raise ValueError("only the rectified-linear activation is supported")
        if min(self.learning_rate, self.weight_decay, self.observation_noise_sd) <= 0:
            raise ValueError("rates and noise must be > 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience, batch_size must be >= 1")
        if self.hidden_width < 1 or self.depth < 1:
            raise ValueError("hidden_width and depth must be >= 1")


@dataclass(frozen=True)
class GPModel:
    X: np.ndarray
    y_mean: float
    alpha: np.ndarray
    chol: np.ndarray
    lengthscale: float
    config: GPConfig
    jitter_used: float


# one member = a list of [W, b] layer parameters, ReLU between hidden layers
MemberParams = list[list[np.ndarray]]


@dataclass(frozen=True)
class EnsembleModel:
    """MLP committee; members are trained on standardized targets."""

    members: tuple[MemberParams, ...]
    config: EnsembleConfig
    n_features: int
    y_mean: float = 0.0
    y_scale: float = 1.0


def _rbf(sq_dists: np.ndarray, signal_variance: float, lengthscale: float) -> np.ndarray:
    return signal_variance * np.exp(-sq_dists / (2.0 * lengthscale**2))


def _resolve_lengthscale(X: np.ndarray, config: GPConfig) -> float:
    if not isinstance(config.lengthscale, str):
        return float(config.lengthscale)
    if X.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(X)))
    return med if med > 0 else 1.0


def fit_gp(X: np.ndarray, y: np.ndarray, config: GPConfig = GPConfig()) -> GPModel:
    """Fit an exact GP with kernel signal * exp(-|x-x'|^2 / (2 l^2)).

    The targets are centered by their mean internally (added back at
    prediction). The Cholesky factor of K + (noise + jitter) I is stored; on
    factorization failure the jitter is doubled up to 6 times before erroring.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y must have the same number of rows")
    if X.shape[0] < 1:
        raise ValueError("at least one training point is required")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data contains non-finite values")
    lengthscale = _resolve_lengthscale(X, config)
    sq = cdist(X, X, "sqeuclidean")
    K = _rbf(sq, config.signal_variance, lengthscale)
    jitter = config.jitter
    chol = None
    for _ in range(7):
        try:
            chol = np.linalg.cholesky(K + (config.noise_variance + jitter) * np.eye(len(y)))
            break
        except np.linalg.LinAlgError:
            jitter *= 2.0
    if chol is None:
        raise np.linalg.LinAlgError(
            f"Cholesky factorization failed after escalating jitter to {jitter / 2.0:g}"
        )
    y_mean = float(y.mean())
    resid = y - y_mean
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, resid))
    return GPModel(
        X=X,
        y_mean=y_mean,
        alpha=alpha,
        chol=chol,
        lengthscale=lengthscale,
        config=config,
        jitter_used=jitter,
    )


def _init_member(sizes: Sequence[int], rng: np.random.Generator) -> MemberParams:
    # He initialization for the ReLU stack
    params: MemberParams = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append([w, np.zeros(fan_out)])
    return params


def _member_forward(params: MemberParams, X: np.ndarray) -> np.ndarray:
    h = X
    for w, b in params[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = params[-1]
    return (h @ w + b).ravel()


def _member_step(
    params: MemberParams,
    adam_m: MemberParams,
    adam_v: MemberParams,
    step: int,
    X: np.ndarray,
    y: np.ndarray,
    config: EnsembleConfig,
) -> None:
    # forward with cached pre-activations
    acts = [X]
    pre = []
    h = X
    for w, b in params[:-1]:
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w_out, b_out = params[-1]
    out = (h @ w_out + b_out).ravel()

    # mean-squared-error gradient, backpropagated through the ReLU stack
    delta = (2.0 * (out - y) / y.shape[0])[:, None]
    grads: list[tuple[np.ndarray, np.ndarray]] = [(acts[-1].T @ delta, delta.sum(axis=0))]
    for layer in range(len(params) - 2, -1, -1):
        w_next = params[layer + 1][0]
        delta = (delta @ w_next.T) * (pre[layer] > 0.0)
        grads.append((acts[layer].T @ delta, delta.sum(axis=0)))
    grads.reverse()

    lr = config.learning_rate
    bias1 = 1.0 - _ADAM_BETA1**step
    bias2 = 1.0 - _ADAM_BETA2**step
    for layer, (gw, gb) in enumerate(grads):
        for slot, grad in ((0, gw + config.weight_decay * params[layer][0]),
                           (1, gb + config.weight_decay * params[layer][1])):
            m = adam_m[layer][slot]
            v = adam_v[layer][slot]
            m *= _ADAM_BETA1
            m += (1.0 - _ADAM_BETA1) * grad
            v *= _ADAM_BETA2
            v += (1.0 - _ADAM_BETA2) * grad**2
            params[layer][slot] -= lr * (m / bias1) / (np.sqrt(v / bias2) + _ADAM_EPS)


def _train_member(
    X: np.ndarray, y: np.ndarray, config: EnsembleConfig, rng: np.random.Generator
) -> MemberParams:
    n = X.shape[0]
    n_val = min(max(1, int(round(config.validation_fraction * n))), n - 1)
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    X_val, y_val = X[val_idx], y[val_idx]
    X_tr, y_tr = X[train_idx], y[train_idx]

    sizes = [X.shape[1]] + [config.hidden_width] * config.depth + [1]
    params = _init_member(sizes, rng)
    adam_m = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]
    adam_v = [[np.zeros_like(w), np.zeros_like(b)] for w, b in params]

    best_loss = math.inf
    wait = 0
    step = 0
    for _ in range(config.max_epochs):
        order = rng.permutation(X_tr.shape[0])
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            step += 1
            _member_step(params, adam_m, adam_v, step, X_tr[idx], y_tr[idx], config)
        val_loss = float(np.mean((_member_forward(params, X_val) - y_val) ** 2))
        if not math.isfinite(val_loss):
            raise FloatingPointError("non-finite validation loss")
        if val_loss < best_loss:
            best_loss = val_loss
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    return params


def fit_ensemble(
    X: np.ndarray, y: np.ndarray, config: EnsembleConfig = EnsembleConfig(), seed: int = 0
) -> EnsembleModel:
    """Train the MLP committee: independent initializations, Adam updates,
    early stopping on held-out validation loss. Member i is seeded with
    seed + i, so results do not depend on training order.

    Targets are standardized internally and predictions mapped back, so a
    constant target yields exactly constant predictions.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y must have the same number of rows")
    if X.shape[0] < 2:
        raise ValueError("at least two training points are required")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data contains non-finite values")
    y_mean = float(y.mean())
    y_scale = float(y.std())
    y_std = (y - y_mean) / (y_scale if y_scale > 0 else 1.0)
    members = []
    for i in range(config.members):
        rng = np.random.default_rng(seed + i)
        try:
            members.append(_train_member(X, y_std, config, rng))
        except FloatingPointError as err:
            raise ValueError(f"ensemble member {i}: {err}") from None
    return EnsembleModel(
        members=tuple(members),
        config=config,
        n_features=X.shape[1],
        y_mean=y_mean,
        y_scale=y_scale,
    )


def member_prediction(model: EnsembleModel, index: int, X: np.ndarray) -> np.ndarray:
    """A single member's label-space predictions."""
    return model.y_mean + model.y_scale * _member_forward(model.members[index], X)


def _member_predictions(model: EnsembleModel, X: np.ndarray) -> np.ndarray:
    return np.stack([member_prediction(model, i, X) for i in range(len(model.members))])


def _check_width(model: GPModel | EnsembleModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    width = model.X.shape[1] if isinstance(model, GPModel) else model.n_features
    if X.shape[1] != width:
        raise ValueError(f"feature width {X.shape[1]} does not match training width {width}")
    return X


def predict(
    model: GPModel | EnsembleModel,
    X: np.ndarray,
    ids: Sequence[str] | None = None,
) -> Posterior:
    """Predictive mean/sd at the given points.

    GP: exact posterior plus observation noise. Ensemble: member mean, and
    member variance plus the configured observation noise variance. The sd is
    floored at 1e-6.
    """
    X = _check_width(model, X)
    if ids is None:
        ids = tuple(str(i) for i in range(X.shape[0]))
    if isinstance(model, GPModel):
        cfg = model.config
        ks = _rbf(cdist(model.X, X, "sqeuclidean"), cfg.signal_variance, model.lengthscale)
        mean = ks.T @ model.alpha + model.y_mean
        v = np.linalg.solve(model.chol, ks)
        var_f = np.maximum(cfg.signal_variance - np.sum(v**2, axis=0), 0.0)
        var = var_f + cfg.noise_variance
    else:
        preds = _member_predictions(model, X)
        mean = preds.mean(axis=0)
        var = preds.var(axis=0) + model.config.observation_noise_sd**2
    sd = np.maximum(np.sqrt(var), SD_FLOOR)
    return Posterior(ids=tuple(ids), mean=mean, sd=sd)


def sample_posterior(
    model: GPModel | EnsembleModel, X: np.ndarray, seed: int
) -> np.ndarray:
    """One posterior draw per candidate, deterministic given ``seed``.

    Ensemble: one member is chosen uniformly and its predictions returned.
    GP: mean + sd * z with independent standard-normal z per candidate
    (independent-marginal approximation).
    """
    X = _check_width(model, X)
    rng = np.random.default_rng(seed)
    if isinstance(model, EnsembleModel):
        return member_prediction(model, int(rng.integers(len(model.members))), X)
    post = predict(model, X)
    return post.mean + post.sd * rng.standard_normal(X.shape[0])


@dataclass(frozen=True)
class MetricRecord:
    """Predictive-quality metrics, global and on top-fraction subsets."""

    ll: float
    rmse: float
    ll_at: dict[float, float] = field(default_factory=dict)
    rmse_at: dict[float, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        """Flatten to CSV/JSON-friendly keys like ll_top10 for q=0.10."""
        out = {"ll": self.ll, "rmse": self.rmse}
        for q in sorted(self.ll_at):
            pct = f"{q * 100:g}".replace(".", "_")
            out[f"ll_top{pct}"] = self.ll_at[q]
            out[f"rmse_top{pct}"] = self.rmse_at[q]
        return out


def _gaussian_ll(y: np.ndarray, mean: np.ndarray, sd: np.ndarray) -> float:
    return float(
        np.mean(-0.5 * math.log(2.0 * math.pi) - np.log(sd) - (y - mean) ** 2 / (2.0 * sd**2))
    )


def eval_metrics(
    posterior: Posterior, y_true: Sequence[float], fractions: Sequence[float] = ()
) -> MetricRecord:
    """Mean Gaussian log-likelihood and RMSE, plus the same on top-q subsets.

    For each q the subset is the ceil(q * n) points whose TRUE labels are
    highest (ties broken by id), so q = 1.0 recovers the global metrics.
    """
    y = np.asarray(y_true, dtype=float).ravel()
    if y.shape[0] != len(posterior.ids):
        raise ValueError("y_true length does not match posterior ids")
    for q in fractions:
        if not 0.0 < q <= 1.0:
            raise ValueError("fractions must be in (0, 1]")
    n = y.shape[0]
    ll = _gaussian_ll(y, posterior.mean, posterior.sd)
    rmse = float(np.sqrt(np.mean((y - posterior.mean) ** 2)))
    order = sorted(range(n), key=lambda i: (-y[i], posterior.ids[i]))
    ll_at, rmse_at = {}, {}
    for q in fractions:
        k = math.ceil(q * n)
        top = sorted(order[:k])  # canonical order, so q=1.0 equals the global case
        ll_at[q] = _gaussian_ll(y[top], posterior.mean[top], posterior.sd[top])
        rmse_at[q] = float(np.sqrt(np.mean((y[top] - posterior.mean[top]) ** 2)))
    return MetricRecord(ll=ll, rmse=rmse, ll_at=ll_at, rmse_at=rmse_at)
