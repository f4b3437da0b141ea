"""Projected stochastic approximation and gradient-free baselines.

The SA recursion is x_{t+1} = clip(x_t + eps_t Y_t) with Y_t the negated
gradient estimate of the chosen risk objective.  Each iteration draws its
simulation output from its own substream ``(seed, *key, t)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError
from .estimators import (
    CVAR,
    EXPECTATION,
    MEAN_VARIANCE,
    VAR,
    GradientEstimate,
    NestedBatch,
    RiskSpec,
    estimate_objective,
    grad_cvar,
    grad_expectation,
    grad_mean_variance_plugin,
    grad_var,
)
from .models import SimulationModel
from .nested import estimate_gradient
from .posterior import Posterior
from .rng import substream


@dataclass(frozen=True)
class StepSchedule:
    """eps_t = c / (t0 + t)^gamma, with 0.5 < gamma <= 1."""

    c: float = 20.0
    t0: float = 100.0
    gamma: float = 0.8

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError("c", "step constant must be positive")
        if not self.t0 > 0:
            raise ConfigError("t0", "step offset must be positive")
        if not 0.5 < self.gamma <= 1.0:
            raise ConfigError("gamma", f"must lie in (0.5, 1], got {self.gamma}")

    def __call__(self, t: int) -> float:
        return self.c / (self.t0 + t) ** self.gamma


@dataclass(frozen=True)
class BudgetSchedule:
    """n_t = round(n0 + slope t), m_t = max(1, n_t // m_divisor), k_t = k.

    ``round`` is Python's round-half-to-even.
    """

    n0: float = 100.0
    slope: float = 0.5
    m_divisor: int = 10
    k: int = 1

    def __post_init__(self):
        if not self.n0 >= 1:
            raise ConfigError("n0", "must be >= 1")
        if not self.slope >= 0:
            raise ConfigError("slope", "must be >= 0 so budgets never shrink")
        if self.m_divisor < 1:
            raise ConfigError("m_divisor", "must be >= 1")
        if self.k < 1:
            raise ConfigError("k", "must be >= 1")

    def n(self, t: int) -> int:
        return max(1, round(self.n0 + self.slope * t))

    def m(self, t: int) -> int:
        return max(1, self.n(t) // self.m_divisor)


@dataclass
class SATrace:
    """Iterate history; row t holds x_t and, for t < T, the step taken from it."""

    x: np.ndarray
    Y: np.ndarray
    obj: np.ndarray
    n: np.ndarray
    m: np.ndarray
    eps: np.ndarray
    seed: int
    spec: str = ""
    error: str = ""

    @property
    def T(self) -> int:
        return self.x.shape[0] - 1

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]

    def header(self) -> list[str]:
        d = self.x.shape[1]
        if d == 1:
            return ["t", "x", "Y", "obj", "n_t", "m_t", "eps_t"]
        return ["t", *(f"x{i}" for i in range(d)), *(f"Y{i}" for i in range(d)), "obj", "n_t", "m_t", "eps_t"]

    def rows(self) -> list[list[str]]:
        out = []
        for t in range(self.x.shape[0]):
            done = self.n[t] > 0
            row = [str(t), *(repr(float(v)) for v in self.x[t])]
            if done:
                row += [repr(float(v)) for v in self.Y[t]]
                row += [repr(float(self.obj[t])), str(int(self.n[t])), str(int(self.m[t])), repr(float(self.eps[t]))]
            else:
                row += [""] * (self.x.shape[1] + 4)
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed}\n# spec={self.spec}\n")
        if self.error:
            buf.write(f"# error={self.error}\n")
        buf.write(",".join(self.header()) + "\n")
        for row in self.rows():
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


class SAAbort(RuntimeError):
    """A simulation error stopped an SA run; ``trace`` holds the iterates reached so far."""

    def __init__(self, message: str, trace: SATrace, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.trace = trace
        self.iteration = iteration


def project(x, lo, hi) -> np.ndarray:
    """Per-coordinate clamp into [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise DomainError("box has lo > hi")
    return np.minimum(np.maximum(np.asarray(x, dtype=float), lo), hi)


class FrozenProblem:
    """SAA problem: posterior draws and all inner noise fixed once.

    Every evaluation re-simulates the same randomness at the new decision, so
    the objective is a deterministic function of ``x``.
    """

    def __init__(self, model: SimulationModel, theta: np.ndarray, noise: np.ndarray):
        self.model = model
        self.theta = theta
        self.noise = noise
        self.m = noise.shape[1]

    def batch(self, x) -> NestedBatch:
        h, d = self.model.evaluate(x, self.theta, self.noise)
        return NestedBatch.from_inner(h, d, x, self.theta)

    def objective(self, x, spec: RiskSpec) -> float:
        return estimate_objective(self.batch(x), spec)

    def gradient(self, x, spec: RiskSpec) -> GradientEstimate:
        batch = self.batch(x)
        if spec.kind == EXPECTATION:
            return grad_expectation(batch)
        if spec.kind == MEAN_VARIANCE:
            return grad_mean_variance_plugin(batch, spec.weight)
        if spec.kind == VAR:
            return grad_var(batch, spec.alpha)
        if spec.kind == CVAR:
            return grad_cvar(batch, spec.alpha)
        raise DomainError(f"unsupported risk kind {spec.kind}")


def saa_freeze(posterior: Posterior, model: SimulationModel, n: int, m: int, seed: int, *key) -> FrozenProblem:
    """Fix theta_1..theta_n and their inner noise from ``seed`` before optimizing."""
    rng = substream(seed, "saa", *key)
    theta = posterior.sample(rng, n)
    return FrozenProblem(model, theta, model.draw_noise(rng, n, m))


def sa_run(
    model: SimulationModel,
    posterior: Posterior,
    spec: RiskSpec,
    steps: StepSchedule,
    budget: BudgetSchedule,
    x0,
    T: int,
    seed: int,
    key: tuple = (),
    frozen: FrozenProblem | None = None,
    exact_means: bool = False,
    three_run: bool = False,
    gradient_fn: Callable | None = None,
) -> SATrace:
    """Run T projected SA steps from ``x0``.

    ``gradient_fn(x, t, rng)``, when given, replaces the simulation-based
    gradient; ``frozen`` switches to SAA mode with a fixed sample.
    """
    if T < 1:
        raise ConfigError("T", "must be >= 1")
    lo, hi = model.lo, model.hi
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if np.any(x < lo) or np.any(x > hi):
        raise DomainError(f"x0={x} lies outside the decision box")
    d = x.size
    xs = np.full((T + 1, d), np.nan)
    ys = np.full((T + 1, d), np.nan)
    obj = np.full(T + 1, np.nan)
    ns = np.zeros(T + 1, dtype=int)
    ms = np.zeros(T + 1, dtype=int)
    eps = np.full(T + 1, np.nan)
    xs[0] = x
    trace = SATrace(xs, ys, obj, ns, ms, eps, seed, spec.label)
    for t in range(T):
        n_t, m_t, e_t = budget.n(t), budget.m(t), steps(t)
        rng = substream(seed, *key, t)
        try:
            if gradient_fn is not None:
                est = gradient_fn(x, t, rng)
            elif frozen is not None:
                est = frozen.gradient(x, spec)
            else:
                est = estimate_gradient(model, posterior, spec, x, n_t, m_t, rng, budget.k, exact_means, three_run)
        except (DomainError, FloatingPointError, ValueError) as err:
            cut = SATrace(xs[: t + 1], ys[: t + 1], obj[: t + 1], ns[: t + 1], ms[: t + 1], eps[: t + 1], seed, spec.label, str(err))
            raise SAAbort(str(err), cut, t) from err
        y = -np.asarray(est.gradient, dtype=float).reshape(d)
        ys[t], obj[t], ns[t], ms[t], eps[t] = y, est.objective, n_t, m_t, e_t
        x = project(x + e_t * y, lo, hi)
        xs[t + 1] = x
    return trace


@dataclass
class NelderMeadResult:
    x: np.ndarray
    value: float
    evals: int
    history: list = field(default_factory=list)


def nelder_mead(
    objective_fn: Callable[[np.ndarray], float],
    x0,
    max_evals: int,
    lo=None,
    hi=None,
    initial_step: float | None = None,
    xatol: float = 1e-8,
    fatol: float = 1e-10,
    coefficients=(1.0, 2.0, 0.5, 0.5),
) -> NelderMeadResult:
    """Nelder-Mead simplex with reflection, expansion, contraction and shrink.

    Points are clamped into [lo, hi] when a box is given.  The initial simplex
    moves each coordinate of ``x0`` by ``initial_step`` (default: 5% of the box
    width, or 5% of |x0| without a box).  Stops at ``max_evals`` objective calls
    or when the simplex has collapsed, and returns the best point seen.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dim = x0.size
    if max_evals < dim + 1:
        raise DomainError(f"max_evals must be >= {dim + 1}")
    rho, chi, gam, sig = coefficients
    boxed = lo is not None and hi is not None
    if boxed:
        lo = np.broadcast_to(np.asarray(lo, dtype=float), x0.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), x0.shape)
    clip = (lambda p: project(p, lo, hi)) if boxed else (lambda p: p)
    if initial_step is None:
        initial_step = 0.05 * (hi - lo) if boxed else np.where(x0 != 0, 0.05 * np.abs(x0), 0.00025)
    step = np.broadcast_to(np.asarray(initial_step, dtype=float), x0.shape)

    evals = 0
    best = [None, math.inf]
    history = []

    def f(p):
        nonlocal evals
        v = float(objective_fn(p))
        evals += 1
        history.append((p.copy(), v))
        if v < best[1]:
            best[0], best[1] = p.copy(), v
        return v

    x0 = clip(x0)
    simplex = [x0]
    for i in range(dim):
        p = x0.copy()
        p[i] += step[i]
        if boxed and p[i] > hi[i]:
            p[i] = x0[i] - step[i]
        simplex.append(clip(p))
    simplex = np.array(simplex)
    fs = np.array([f(p) for p in simplex])

    while evals < max_evals:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        if np.max(np.abs(simplex[1:] - simplex[0])) <= xatol and np.max(np.abs(fs[1:] - fs[0])) <= fatol:
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = clip(centroid + rho * (centroid - simplex[-1]))
        fr = f(xr)
        if fr < fs[0]:
            if evals >= max_evals:
                simplex[-1], fs[-1] = xr, fr
                break
            xe = clip(centroid + chi * (xr - centroid))
            fe = f(xe)
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
        else:
            if evals >= max_evals:
                break
            if fr < fs[-1]:
                xc = clip(centroid + gam * (xr - centroid))
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = clip(centroid + gam * (simplex[-1] - centroid))
                fc = f(xc)
                accept = fc < fs[-1]
            if accept:
                simplex[-1], fs[-1] = xc, fc
            else:
                for i in range(1, dim + 1):
                    if evals >= max_evals:
                        break
                    simplex[i] = clip(simplex[0] + sig * (simplex[i] - simplex[0]))
                    fs[i] = f(simplex[i])
    return NelderMeadResult(best[0], best[1], evals, history)
