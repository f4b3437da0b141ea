"""Nested Monte Carlo estimators of risk objectives and their gradients.

A batch holds ``n`` outer posterior draws, each with ``m`` inner simulation
replications.  Only the per-draw inner means enter the VaR/CVaR/expectation
estimators, so :class:`NestedBatch` stores those means directly (plus the
inner variance of the values, used for variance-corrected objectives).

Everything here is a pure function of its inputs; randomness lives in the
batch construction stage (:mod:`bro.nested`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import DomainError

EXPECTATION = "Expectation"
MEAN_VARIANCE = "MeanVariance"
VAR = "VaR"
CVAR = "CVaR"
RISK_KINDS = (EXPECTATION, MEAN_VARIANCE, VAR, CVAR)


@dataclass(frozen=True)
class RiskSpec:
    """Which risk functional is applied to the posterior-induced H(x; theta).

    ``weight`` is the variance weight of the mean-variance objective and
    ``alpha`` the level of VaR/CVaR; the other field is unused.
    """

    kind: str
    alpha: float | None = None
    weight: float | None = None

    def __post_init__(self):
        if self.kind not in RISK_KINDS:
            raise DomainError(f"unknown risk kind {self.kind!r}; expected one of {RISK_KINDS}")
        if self.kind in (VAR, CVAR):
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise DomainError(f"{self.kind} level must lie in (0, 1), got {self.alpha}")
        if self.kind == MEAN_VARIANCE:
            if self.weight is None or not math.isfinite(self.weight) or self.weight < 0:
                raise DomainError(f"mean-variance weight must be finite and >= 0, got {self.weight}")

    @classmethod
    def expectation(cls) -> RiskSpec:
        return cls(EXPECTATION)

    @classmethod
    def mean_variance(cls, weight: float) -> RiskSpec:
        return cls(MEAN_VARIANCE, weight=float(weight))

    @classmethod
    def var(cls, alpha: float) -> RiskSpec:
        return cls(VAR, alpha=float(alpha))

    @classmethod
    def cvar(cls, alpha: float) -> RiskSpec:
        return cls(CVAR, alpha=float(alpha))

    @property
    def label(self) -> str:
        if self.kind in (VAR, CVAR):
            return f"{self.kind}({self.alpha:g})"
        if self.kind == MEAN_VARIANCE:
            return f"{self.kind}({self.weight:g})"
        return self.kind


@dataclass(frozen=True)
class InnerObservation:
    """One simulation output and its pathwise gradient, from a single noise draw."""

    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class NestedSample:
    theta: np.ndarray
    inner: tuple[InnerObservation, ...]

    def __post_init__(self):
        if len(self.inner) < 1:
            raise DomainError("a nested sample needs at least one inner observation")

    @property
    def m(self) -> int:
        return len(self.inner)

    def mean_value(self) -> float:
        return float(np.mean([o.value for o in self.inner]))

    def mean_gradient(self) -> np.ndarray:
        return np.mean([np.atleast_1d(o.gradient) for o in self.inner], axis=0)


@dataclass(frozen=True)
class NestedBatch:
    """Inner means of ``n`` outer draws simulated at one decision.

    Attributes:
        h_mean: shape ``(n,)``, the inner-mean values H^m(x; theta_i).
        d_mean: shape ``(n, d)``, the inner-mean pathwise gradients D^m(x; theta_i).
        m: common inner sample size.
        decision: the decision ``x`` at which the batch was simulated.
        theta: optional ``(n, p)`` outer draws.
        h_var: optional ``(n,)`` unbiased inner sample variance of the values.
    """

    h_mean: np.ndarray
    d_mean: np.ndarray
    m: int
    decision: np.ndarray
    theta: np.ndarray | None = None
    h_var: np.ndarray | None = None

    def __post_init__(self):
        h = np.asarray(self.h_mean, dtype=float).reshape(-1)
        d = np.asarray(self.d_mean, dtype=float)
        if h.size == 0:
            raise DomainError("empty batch")
        if d.ndim == 1:
            d = d.reshape(h.size, -1)
        if d.shape[0] != h.size:
            raise DomainError(f"gradient rows {d.shape[0]} do not match {h.size} values")
        if self.m < 1:
            raise DomainError(f"inner sample size must be >= 1, got {self.m}")
        object.__setattr__(self, "h_mean", h)
        object.__setattr__(self, "d_mean", d)
        object.__setattr__(self, "decision", np.atleast_1d(np.asarray(self.decision, dtype=float)))

    @property
    def n(self) -> int:
        return self.h_mean.size

    @classmethod
    def from_inner(cls, values, gradients, decision, theta=None) -> NestedBatch:
        """Build from full inner arrays: values ``(n, m)``, gradients ``(n, m, d)``."""
        values = np.asarray(values, dtype=float)
        gradients = np.asarray(gradients, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise DomainError(f"values must be a non-empty (n, m) array, got shape {values.shape}")
        if gradients.ndim == 2:
            gradients = gradients[..., None]
        if gradients.shape[:2] != values.shape:
            raise DomainError("values and gradients must come from the same (n, m) draws")
        m = values.shape[1]
        h_var = values.var(axis=1, ddof=1) if m > 1 else None
        return cls(values.mean(axis=1), gradients.mean(axis=1), m, decision, theta, h_var)

    @classmethod
    def from_samples(cls, samples: Sequence[NestedSample], decision) -> NestedBatch:
        if not samples:
            raise DomainError("empty batch")
        ms = {s.m for s in samples}
        if len(ms) != 1:
            raise DomainError(f"all samples must share one inner size, got {sorted(ms)}")
        values = np.array([[o.value for o in s.inner] for s in samples])
        grads = np.array([[np.atleast_1d(o.gradient) for o in s.inner] for s in samples])
        theta = np.array([np.atleast_1d(s.theta) for s in samples])
        return cls.from_inner(values, grads, decision, theta)

    def subset(self, index) -> NestedBatch:
        return NestedBatch(
            self.h_mean[index],
            self.d_mean[index],
            self.m,
            self.decision,
            None if self.theta is None else self.theta[index],
            None if self.h_var is None else self.h_var[index],
        )


@dataclass(frozen=True)
class GradientEstimate:
    gradient: np.ndarray
    objective: float
    diagnostics: dict = field(default_factory=dict)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"risk level must lie in (0, 1), got {alpha}")


def order_statistic_rank(n: int, alpha: float) -> int:
    """1-based rank ceil(alpha * n), clamped to [1, n]."""
    _check_alpha(alpha)
    # guard against alpha*n landing a hair above an integer
    k = math.ceil(round(alpha * n, 12))
    return min(max(k, 1), n)


def _sorted_order(h: np.ndarray) -> np.ndarray:
    # stable sort: ties resolved by original index
    return np.argsort(h, kind="stable")


def _quantile_and_tail(h: np.ndarray, alpha: float):
    """Return (v_hat, index of v_hat, tail mask).

    The tail is every value at or above the order statistic one rank past
    ceil(alpha n): for distinct values that is exactly the top n - ceil(alpha n)
    draws, and draws tied with that threshold are all kept.
    """
    n = h.size
    k = order_statistic_rank(n, alpha)
    order = _sorted_order(h)
    idx = int(order[k - 1])
    threshold = h[order[min(k, n - 1)]]
    return float(h[idx]), idx, h >= threshold


def nested_mean(batch: NestedBatch) -> float:
    return float(batch.h_mean.mean())


def empirical_var(batch: NestedBatch, alpha: float) -> tuple[float, int]:
    """ceil(alpha n)-th smallest inner mean and the index of the draw attaining it."""
    value, idx, _ = _quantile_and_tail(batch.h_mean, alpha)
    return value, idx


def empirical_cvar(batch: NestedBatch, alpha: float) -> float:
    _, _, tail = _quantile_and_tail(batch.h_mean, alpha)
    return float(batch.h_mean[tail].sum() / (batch.n * (1.0 - alpha)))


def mean_variance_objective(batch: NestedBatch, weight: float) -> float:
    """Posterior mean plus ``weight`` times the posterior variance of H.

    The spread of the inner means overstates Var(H) by E[inner variance]/m;
    that term is subtracted when the inner variances are available.
    """
    mean = batch.h_mean.mean()
    if batch.n < 2:
        return float(mean)
    spread = batch.h_mean.var(ddof=1)
    if batch.h_var is not None:
        spread -= batch.h_var.mean() / batch.m
    return float(mean + weight * spread)


def estimate_objective(batch: NestedBatch, spec: RiskSpec) -> float:
    if spec.kind == EXPECTATION:
        return nested_mean(batch)
    if spec.kind == MEAN_VARIANCE:
        return mean_variance_objective(batch, spec.weight)
    if spec.kind == VAR:
        return empirical_var(batch, spec.alpha)[0]
    return empirical_cvar(batch, spec.alpha)


def grad_expectation(batch: NestedBatch) -> GradientEstimate:
    # equal m per draw, so the mean of the inner means is the mean of all n*m gradients
    return GradientEstimate(batch.d_mean.mean(axis=0), nested_mean(batch), {"n": batch.n, "m": batch.m})


def grad_var(batch: NestedBatch, alpha: float) -> GradientEstimate:
    value, idx = empirical_var(batch, alpha)
    return GradientEstimate(batch.d_mean[idx].copy(), value, {"v_hat": value, "index": idx})


def grad_var_batched(batches: Sequence[NestedBatch], alpha: float) -> GradientEstimate:
    if not batches:
        raise DomainError("batch-mean estimator needs at least one batch")
    parts = [grad_var(b, alpha) for b in batches]
    grads = np.array([p.gradient for p in parts])
    return GradientEstimate(
        grads.mean(axis=0),
        float(np.mean([p.objective for p in parts])),
        {"k": len(parts), "per_batch": grads, "v_hat": [p.objective for p in parts]},
    )


def grad_cvar(batch: NestedBatch, alpha: float) -> GradientEstimate:
    value, _, tail = _quantile_and_tail(batch.h_mean, alpha)
    scale = batch.n * (1.0 - alpha)
    return GradientEstimate(
        batch.d_mean[tail].sum(axis=0) / scale,
        float(batch.h_mean[tail].sum() / scale),
        {"v_hat": value, "tail_count": int(tail.sum())},
    )


def grad_mean_variance_plugin(batch: NestedBatch, weight: float) -> GradientEstimate:
    """Gradient of the batch mean-variance objective for frozen (SAA) batches.

    d/dx [mean + w * var] with the sample covariance of (H, D) over the outer draws.
    """
    h = batch.h_mean
    d = batch.d_mean
    grad = d.mean(axis=0)
    if batch.n > 1:
        grad = grad + 2.0 * weight * ((h - h.mean())[:, None] * d).sum(axis=0) / (batch.n - 1)
    return GradientEstimate(grad, mean_variance_objective(batch, weight), {"n": batch.n})


class InnerDraws(Protocol):
    """Source of fresh posterior draws and single simulation runs at a fixed x."""

    def draw_theta(self, size: int) -> np.ndarray: ...

    def run(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One fresh inner run per row of ``theta``: values ``(k,)``, gradients ``(k, d)``."""
        ...


def grad_mean_variance(weight: float, draws: InnerDraws, size: int = 1, three_run: bool = False) -> GradientEstimate:
    """Mean-variance gradient from independent runs, averaged over ``size`` realizations.

    Default form (five runs, four posterior draws per realization):
        d(x, xi1(t1)) + 2w [h(x, xi2(t2)) d(x, xi3(t2)) - h(x, xi4(t3)) d(x, xi5(t4))]
    With ``three_run`` the draws t1=t2=t3 and xi1=xi2=xi4 are shared, which is
    cheaper but noisier.
    """
    if size < 1:
        raise DomainError(f"size must be >= 1, got {size}")
    if three_run:
        ta = draws.draw_theta(size)
        tb = draws.draw_theta(size)
        h1, d1 = draws.run(ta)
        h3, d3 = draws.run(ta)
        h5, d5 = draws.run(tb)
        h2 = h4 = h1
    else:
        t1, t2, t3, t4 = (draws.draw_theta(size) for _ in range(4))
        h1, d1 = draws.run(t1)
        h2, _ = draws.run(t2)
        h3, d3 = draws.run(t2)
        h4, _ = draws.run(t3)
        h5, d5 = draws.run(t4)
    realizations = d1 + 2.0 * weight * (h2[:, None] * d3 - h4[:, None] * d5)
    objective = h1 + weight * (h2 * h3 - h4 * h5)
    se = realizations.std(axis=0, ddof=1) / math.sqrt(size) if size > 1 else np.full(d1.shape[1], np.nan)
    return GradientEstimate(
        realizations.mean(axis=0),
        float(objective.mean()),
        {"size": size, "runs": 3 if three_run else 5, "std_err": se},
    )


def indicator_mismatch(batch: NestedBatch, alpha: float, true_h, true_v: float) -> float:
    """Fraction of draws where 1{H^m_i >= v_hat} differs from 1{H_i >= true_v}."""
    true_h = np.asarray(true_h, dtype=float).reshape(-1)
    if true_h.size != batch.n:
        raise DomainError(f"{true_h.size} true values for a batch of {batch.n}")
    v_hat, _ = empirical_var(batch, alpha)
    return float(np.mean((batch.h_mean >= v_hat) != (true_h >= true_v)))
