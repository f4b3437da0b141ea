"""Batch construction: the randomized stage feeding the estimators.

The outer draws are taken first and the inner noise second, both from the
same generator in outer-major order.  Nothing drawn depends on the decision,
so two calls with identically seeded generators share their randomness at any
pair of decisions (common random numbers).
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .estimators import (
    CVAR,
    EXPECTATION,
    MEAN_VARIANCE,
    VAR,
    GradientEstimate,
    NestedBatch,
    RiskSpec,
    grad_cvar,
    grad_expectation,
    grad_mean_variance,
    grad_var_batched,
)
from .models import SimulationModel
from .posterior import Posterior

# cap on noise values held in memory at once
_CHUNK_ELEMENTS = 4_000_000


def _noise_per_replication(model: SimulationModel) -> int:
    return int(np.prod(model.draw_noise(np.random.default_rng(0), 1, 1).shape))


def draw_batch(
    model: SimulationModel,
    posterior: Posterior,
    x,
    n: int,
    m: int,
    rng: np.random.Generator,
    exact_means: bool = False,
) -> NestedBatch:
    """Simulate ``n`` outer draws with ``m`` inner replications each at ``x``.

    With ``exact_means`` a model that provides ``inner_means`` samples the
    inner averages directly from their exact distribution.
    """
    if n < 1 or m < 1:
        raise DomainError(f"need n, m >= 1, got n={n}, m={m}")
    theta = posterior.sample(rng, n)
    if exact_means:
        if not hasattr(model, "inner_means"):
            raise DomainError(f"{type(model).__name__} has no exact inner-mean sampler")
        h, d, h_var = model.inner_means(x, theta, m, rng)
        return NestedBatch(h, d, m, x, theta, h_var if m > 1 else None)
    per = m * _noise_per_replication(model)
    if per > _CHUNK_ELEMENTS:
        return _draw_batch_blocked(model, x, theta, m, rng)
    chunk = max(1, _CHUNK_ELEMENTS // per)
    h_mean, d_mean, h_var = [], [], []
    for start in range(0, n, chunk):
        th = theta[start : start + chunk]
        h, d = model.evaluate(x, th, model.draw_noise(rng, th.shape[0], m))
        h_mean.append(h.mean(axis=1))
        d_mean.append(d.mean(axis=1))
        if m > 1:
            h_var.append(h.var(axis=1, ddof=1))
    return NestedBatch(
        np.concatenate(h_mean),
        np.concatenate(d_mean),
        m,
        x,
        theta,
        np.concatenate(h_var) if m > 1 else None,
    )


def _draw_batch_blocked(model, x, theta, m, rng) -> NestedBatch:
    # one outer draw at a time, inner replications in blocks; same draw order as unblocked
    block = max(1, _CHUNK_ELEMENTS // _noise_per_replication(model))
    n = theta.shape[0]
    h_mean = np.empty(n)
    h_var = np.empty(n)
    d_mean = None
    for i in range(n):
        th = theta[i : i + 1]
        s_h = s_hh = 0.0
        s_d = 0.0
        shift = None
        done = 0
        while done < m:
            b = min(block, m - done)
            h, d = model.evaluate(x, th, model.draw_noise(rng, 1, b))
            if shift is None:
                shift = h[0, 0]
            c = h[0] - shift
            s_h += c.sum()
            s_hh += (c * c).sum()
            s_d = s_d + d[0].sum(axis=0)
            done += b
        if d_mean is None:
            d_mean = np.empty((n, np.size(s_d)))
        h_mean[i] = shift + s_h / m
        h_var[i] = (s_hh - s_h * s_h / m) / (m - 1) if m > 1 else 0.0
        d_mean[i] = s_d / m
    return NestedBatch(h_mean, d_mean, m, x, theta, h_var if m > 1 else None)


class InnerSampler:
    """Fresh posterior draws and single inner runs at a fixed decision."""

    def __init__(self, model: SimulationModel, posterior: Posterior, x, rng: np.random.Generator):
        self.model = model
        self.posterior = posterior
        self.x = x
        self.rng = rng

    def draw_theta(self, size: int) -> np.ndarray:
        return self.posterior.sample(self.rng, size)

    def run(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        noise = self.model.draw_noise(self.rng, theta.shape[0], 1)
        h, d = self.model.evaluate(self.x, theta, noise)
        return h[:, 0], d[:, 0, :]


def mean_variance_size(n: int, m: int, three_run: bool = False) -> int:
    """Realizations of the mean-variance estimator costing about n*m simulation runs."""
    return max(2, (n * m) // (3 if three_run else 5))


def estimate_gradient(
    model: SimulationModel,
    posterior: Posterior,
    spec: RiskSpec,
    x,
    n: int,
    m: int,
    rng: np.random.Generator,
    k: int = 1,
    exact_means: bool = False,
    three_run: bool = False,
) -> GradientEstimate:
    """Draw fresh simulation output at ``x`` and return the matching ascent gradient."""
    if spec.kind == MEAN_VARIANCE:
        sampler = InnerSampler(model, posterior, x, rng)
        return grad_mean_variance(spec.weight, sampler, mean_variance_size(n, m, three_run), three_run)
    if spec.kind == VAR:
        batches = [draw_batch(model, posterior, x, n, m, rng, exact_means) for _ in range(k)]
        return grad_var_batched(batches, spec.alpha)
    batch = draw_batch(model, posterior, x, n, m, rng, exact_means)
    if spec.kind == EXPECTATION:
        return grad_expectation(batch)
    if spec.kind == CVAR:
        return grad_cvar(batch, spec.alpha)
    raise DomainError(f"unsupported risk kind {spec.kind}")
