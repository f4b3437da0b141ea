"""Simulation models: outputs h(x, xi(theta)) and pathwise gradients d(x, xi(theta)).

Each model separates the randomness from the decision.  ``draw_noise``
returns raw noise (standard normals, unit exponentials) that depends on
neither ``x`` nor ``theta``; ``evaluate`` maps ``(x, theta, noise)`` to
values and gradients deterministically.  Reusing one noise array across
decisions gives common random numbers, and freezing it gives an SAA problem.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError
from .estimators import InnerObservation


class SimulationModel(abc.ABC):
    """Abstract simulation oracle over a compact box of decisions."""

    decision_dim: int = 1
    theta_dim: int = 1
    lo: np.ndarray
    hi: np.ndarray

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo, self.hi

    @abc.abstractmethod
    def draw_noise(self, rng: np.random.Generator, n: int, m: int) -> np.ndarray:
        """Raw noise for ``n`` outer draws times ``m`` inner replications."""

    @abc.abstractmethod
    def evaluate(self, x, theta: np.ndarray, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(n, m)`` and gradients ``(n, m, d)`` for thetas ``(n, p)``."""

    def simulate(self, x, theta, rng: np.random.Generator) -> InnerObservation:
        """One inner replication at ``(x, theta)``; value and gradient share the noise."""
        noise = self.draw_noise(rng, 1, 1)
        h, d = self.evaluate(x, np.atleast_2d(np.asarray(theta, dtype=float)), noise)
        return InnerObservation(float(h[0, 0]), d[0, 0].copy())

    def true_value(self, x, theta: np.ndarray) -> np.ndarray | None:
        """Exact H(x; theta) per row of ``theta`` when known in closed form."""
        return None

    def _as_decision(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.decision_dim,):
            raise DomainError(f"decision must have {self.decision_dim} coordinate(s), got shape {x.shape}")
        return x


def _box(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(lo > hi):
        raise DomainError(f"invalid box [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True, eq=False)
class QuadraticModel(SimulationModel):
    """h = x t1 + x^2 t2 + x xi with xi ~ N(0, t1^2 / noise_scale_divisor).

    The noise is stored as standard normals ``z`` and scaled by |t1| at
    evaluation time, so a frozen ``z`` array gives CRN across both x and theta.
    """

    noise_scale_divisor: float = 100.0
    lo: np.ndarray = -5.0
    hi: np.ndarray = 5.0

    decision_dim = 1
    theta_dim = 2

    def __post_init__(self):
        if not self.noise_scale_divisor > 0:
            raise DomainError("noise_scale_divisor must be positive")
        lo, hi = _box(self.lo, self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def noise_std(self, theta: np.ndarray) -> np.ndarray:
        return np.abs(theta[:, 0]) / np.sqrt(self.noise_scale_divisor)

    def draw_noise(self, rng, n, m):
        return rng.standard_normal((n, m))

    def evaluate(self, x, theta, noise):
        x = self._as_decision(x)[0]
        theta = np.atleast_2d(theta)
        xi = noise * self.noise_std(theta)[:, None]
        base_h = x * theta[:, 0] + x * x * theta[:, 1]
        base_d = theta[:, 0] + 2.0 * x * theta[:, 1]
        h = base_h[:, None] + x * xi
        d = base_d[:, None] + xi
        return h, d[..., None]

    def inner_means(self, x, theta, m: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inner means and inner value variances over ``m`` replications, drawn exactly.

        The mean of m normals is normal with variance s^2/m and the sample
        variance is an independent scaled chi-square, so this has the same
        law as averaging ``m`` simulated replications at O(n) cost.
        """
        x = self._as_decision(x)[0]
        theta = np.atleast_2d(theta)
        n = theta.shape[0]
        z = rng.standard_normal(n)
        chi = rng.chisquare(m - 1, n) / (m - 1) if m > 1 else np.zeros(n)
        s = self.noise_std(theta)
        xi_bar = z * s / np.sqrt(m)
        h = x * theta[:, 0] + x * x * theta[:, 1] + x * xi_bar
        d = theta[:, 0] + 2.0 * x * theta[:, 1] + xi_bar
        return h, d[:, None], x * x * s * s * chi

    def true_value(self, x, theta):
        x = self._as_decision(x)[0]
        theta = np.atleast_2d(theta)
        return x * theta[:, 0] + x * x * theta[:, 1]

    def true_gradient(self, x, theta):
        x = self._as_decision(x)[0]
        theta = np.atleast_2d(theta)
        return (theta[:, 0] + 2.0 * x * theta[:, 1])[:, None]


def rate_lambda(p, theta, k_c: float = 40.0):
    """Customer arrival rate 2 K_C e^{-theta p} / (1 + e^{-theta p})."""
    return 2.0 * k_c * expit(-np.multiply(theta, p))


def rate_lambda_dp(p, theta, k_c: float = 40.0):
    tp = np.multiply(theta, p)
    return -2.0 * k_c * np.asarray(theta) * expit(tp) * expit(-tp)


def rate_mu(p, theta, k_p: float = 20.0):
    """Provider arrival rate K_P (1 - e^{-theta p}) / (1 + e^{-theta p})."""
    return k_p * np.tanh(0.5 * np.multiply(theta, p))


def rate_mu_dp(p, theta, k_p: float = 20.0):
    # 1 - tanh^2(u/2) written as 4 expit(u) expit(-u) to avoid cancellation
    tp = np.multiply(theta, p)
    return 2.0 * k_p * np.asarray(theta) * expit(tp) * expit(-tp)


@dataclass(frozen=True, eq=False)
class MarketModel(SimulationModel):
    """Two-sided market: the i-th customer waits for the i-th provider.

    The cost at price p is the mean wait over the first ``M`` customers minus
    ``a`` times the revenue rate p lambda(p).  Arrival times are running sums of
    unit exponentials divided by the rate, so they are differentiable in p.
    """

    k_c: float = 40.0
    k_p: float = 20.0
    M: int = 100
    a: float = 1.0 / 25.0
    lo: np.ndarray = 1.0
    hi: np.ndarray = 300.0

    decision_dim = 1
    theta_dim = 2

    def __post_init__(self):
        if self.M < 1:
            raise DomainError("M must be >= 1")
        if not (self.k_c > 0 and self.k_p > 0):
            raise DomainError("population sizes must be positive")
        lo, hi = _box(self.lo, self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def lam(self, p, theta):
        return rate_lambda(p, theta, self.k_c)

    def mu(self, p, theta):
        return rate_mu(p, theta, self.k_p)

    def draw_noise(self, rng, n, m):
        # axis 2: 0 = customers, 1 = providers
        return rng.standard_exponential((n, m, 2, self.M))

    def evaluate(self, x, theta, noise):
        p = self._as_decision(x)[0]
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if np.any(theta <= 0):
            raise DomainError("market parameters must be positive")
        lam = self.lam(p, theta[:, 0])
        mu = self.mu(p, theta[:, 1])
        if np.any(mu <= 0) or np.any(lam <= 0):
            raise DomainError(f"arrival rate vanishes at p={p}")
        dlam = rate_lambda_dp(p, theta[:, 0], self.k_c)
        dmu = rate_mu_dp(p, theta[:, 1], self.k_p)
        s = np.cumsum(noise, axis=-1)
        a_c = s[:, :, 0, :] / lam[:, None, None]
        a_p = s[:, :, 1, :] / mu[:, None, None]
        w = a_p - a_c
        busy = w > 0
        # dA/dp = -A * rate'(p) / rate(p)
        g_c = (-dlam / lam)[:, None, None]
        g_p = (-dmu / mu)[:, None, None]
        dw = np.where(busy, a_p * g_p - a_c * g_c, 0.0)
        revenue = self.a * p * lam
        revenue_dp = self.a * (lam + p * dlam)
        h = np.maximum(w, 0.0).mean(axis=-1) - revenue[:, None]
        d = dw.mean(axis=-1) - revenue_dp[:, None]
        return h, d[..., None]
