"""Posterior samplers for the input parameter theta.

Three sources are provided: independent Gaussians, a fixed point (for
plug-in baselines) and an empirical distribution backed by MCMC chains.  The
MCMC part is a random-walk Metropolis-Hastings sampler on a bounded uniform
prior, plus a Wasserstein-distance stationarity diagnostic.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DomainError


class Posterior:
    """Interface: ``sample(rng, size)`` returns an array of shape ``(size, dim)``."""

    dim: int

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class GaussianPosterior(Posterior):
    """Independent normal components given by their means and standard deviations."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if mean.shape != std.shape:
            raise DomainError("mean and std must have the same length")
        if np.any(~(std > 0)):
            raise DomainError(f"standard deviations must be positive, got {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_variance(cls, mean, variance) -> GaussianPosterior:
        return cls(mean, np.sqrt(np.asarray(variance, dtype=float)))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def variance(self) -> np.ndarray:
        return self.std**2

    def sample(self, rng, size):
        return self.mean + self.std * rng.standard_normal((size, self.dim))


def quadratic_posterior() -> GaussianPosterior:
    """theta1 ~ N(-15, var 16), theta2 ~ N(10, var 4)."""
    return GaussianPosterior.from_variance([-15.0, 10.0], [16.0, 4.0])


@dataclass(frozen=True, eq=False)
class PointPosterior(Posterior):
    """A degenerate posterior: every draw equals ``theta``."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))

    @property
    def dim(self) -> int:
        return self.theta.size

    def sample(self, rng, size):
        return np.tile(self.theta, (size, 1))


class EmpiricalPosterior(Posterior):
    """Uniform resampling from stored draws.

    ``chains`` is a sequence of 2-D arrays.  Each row of a chain is one joint
    draw of that chain's components; different chains are sampled with
    independent indices, so separate per-component chains give their product.
    """

    def __init__(self, chains: Sequence[np.ndarray]):
        arrays = []
        for c in chains:
            c = np.asarray(c, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.ndim != 2 or c.shape[0] == 0:
                raise DomainError("each chain must be a non-empty 1-D or 2-D array")
            arrays.append(c)
        if not arrays:
            raise DomainError("empirical posterior needs at least one chain")
        self.chains = tuple(arrays)

    @property
    def dim(self) -> int:
        return sum(c.shape[1] for c in self.chains)

    def sample_indices(self, rng, size) -> np.ndarray:
        return np.stack([rng.integers(0, c.shape[0], size) for c in self.chains], axis=1)

    def sample(self, rng, size):
        idx = self.sample_indices(rng, size)
        return np.concatenate([c[idx[:, k]] for k, c in enumerate(self.chains)], axis=1)


def interarrival_log_likelihood(theta: float, data, rate_fn: Callable, p_obs: float) -> float:
    """Exponential log-likelihood N log r - r sum(xi) with r = rate_fn(p_obs, theta)."""
    data = np.asarray(data, dtype=float)
    if data.size == 0 or np.any(data <= 0):
        raise DomainError("interarrival data must be non-empty and positive")
    rate = float(rate_fn(p_obs, theta))
    if not rate > 0:
        raise DomainError(f"rate must be positive, got {rate} at theta={theta}")
    return data.size * math.log(rate) - rate * float(data.sum())


@dataclass(frozen=True)
class MCMCConfig:
    """Random-walk Metropolis-Hastings settings.

    ``chain_length`` counts the retained post-burn-in states.
    """

    proposal_std: float = 2.5e-2
    prior_lo: float = 0.01
    prior_hi: float = 0.5
    chain_length: int = 1_000_000
    burn_in: int = 100_000
    init: float = 0.075
    seed: int = 0

    def __post_init__(self):
        if not self.proposal_std > 0:
            raise ConfigError("proposal_std", "must be positive")
        if not self.prior_lo < self.prior_hi:
            raise ConfigError("prior_lo", "must be below prior_hi")
        if not self.prior_lo < self.init < self.prior_hi:
            raise ConfigError("init", f"must lie in ({self.prior_lo}, {self.prior_hi})")
        if self.chain_length < 1:
            raise ConfigError("chain_length", "must be >= 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in", "must be >= 0")
        if not self.burn_in < self.chain_length:
            raise ConfigError("burn_in", "must be below chain_length")


@dataclass
class ChainResult:
    states: np.ndarray
    accepted: int
    proposed: int
    out_of_bounds: int
    config: MCMCConfig = field(default_factory=MCMCConfig)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed

    def posterior(self) -> EmpiricalPosterior:
        return EmpiricalPosterior([self.states])


def metropolis_hastings(cfg: MCMCConfig, log_likelihood: Callable[[float], float], rng=None) -> ChainResult:
    """Random-walk MH with a Uniform(prior_lo, prior_hi) prior.

    Candidates outside the open prior support are rejected without evaluating
    the likelihood.  Only the ``chain_length`` post-burn-in states are kept.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    total = cfg.burn_in + cfg.chain_length
    # plain lists: scalar indexing into numpy arrays dominates the loop otherwise
    steps = (rng.standard_normal(total) * cfg.proposal_std).tolist()
    log_u = np.log(rng.random(total)).tolist()
    lo, hi = cfg.prior_lo, cfg.prior_hi
    cur = cfg.init
    cur_ll = log_likelihood(cur)
    states = []
    keep = states.append
    accepted = oob = 0
    for t in range(total):
        cand = cur + steps[t]
        if lo < cand < hi:
            cand_ll = log_likelihood(cand)
            if log_u[t] < cand_ll - cur_ll:
                cur, cur_ll = cand, cand_ll
                accepted += 1
        else:
            oob += 1
        keep(cur)
    out = np.array(states[cfg.burn_in :])
    return ChainResult(out, accepted, total, oob, cfg)


def wasserstein_1d(a, b) -> float:
    """W1 distance between two empirical distributions on the line.

    Equal sizes use the mean absolute difference of the sorted samples.  For
    unequal sizes both quantile functions are linearly interpolated at
    k = min(len(a), len(b)) evenly spaced levels.
    """
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise DomainError("W1 needs two non-empty samples")
    if a.size != b.size:
        k = min(a.size, b.size)
        levels = (np.arange(k) + 0.5) / k
        a = np.quantile(a, levels)
        b = np.quantile(b, levels)
    return float(np.abs(a - b).mean())


@dataclass(frozen=True)
class ConvergenceReport:
    consecutive: list[tuple[tuple[int, int], float]]
    arbitrary: list[tuple[tuple[int, int], float]]
    relative_gap: float
    stationary: bool

    @property
    def mean_consecutive(self) -> float:
        return float(np.mean([w for _, w in self.consecutive]))

    @property
    def mean_arbitrary(self) -> float:
        return float(np.mean([w for _, w in self.arbitrary]))


def chain_convergence_report(
    chain, subset_size: int, rng=None, pairs: int | None = None, threshold: float = 0.5
) -> ConvergenceReport:
    """Compare W1 between neighbouring chain blocks and between blocks further apart.

    The chain is cut into time-ordered blocks of ``subset_size``.  A stationary
    chain gives similar distances for adjacent and non-adjacent blocks; a
    drifting chain gives larger distances for blocks far apart in time.  By
    default every non-adjacent pair is used; with ``pairs`` that many random
    pairs are drawn from ``rng`` instead.  The chain is flagged stationary when
    the two mean distances differ by less than ``threshold`` (relative to the
    adjacent mean).
    """
    chain = np.asarray(chain, dtype=float).reshape(-1)
    if subset_size < 1 or chain.size < 2 * subset_size:
        raise DomainError(f"chain of {chain.size} too short for two subsets of {subset_size}")
    blocks = chain.size // subset_size
    parts = np.sort(chain[: blocks * subset_size].reshape(blocks, subset_size), axis=1)
    dist = lambda i, j: float(np.abs(parts[i] - parts[j]).mean())
    consecutive = [((i, i + 1), dist(i, i + 1)) for i in range(blocks - 1)]
    if pairs is None:
        far = [(i, j) for i in range(blocks) for j in range(i + 2, blocks)]
        if not far:
            far = [(0, 1)]
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        far = [tuple(sorted(int(v) for v in rng.choice(blocks, 2, replace=False))) for _ in range(pairs)]
    arbitrary = [((i, j), dist(i, j)) for i, j in far]
    cons = float(np.mean([w for _, w in consecutive]))
    arb = float(np.mean([w for _, w in arbitrary]))
    gap = abs(arb - cons) / max(cons, 1e-300)
    return ConvergenceReport(consecutive, arbitrary, gap, gap < threshold)


def synthetic_interarrivals(rate: float, size: int, rng) -> np.ndarray:
    """``size`` exponential interarrival times at the given rate."""
    if not rate > 0:
        raise DomainError("rate must be positive")
    return rng.exponential(1.0 / rate, size)


def config_hash(obj) -> str:
    """Short stable hash of a JSON-serialisable configuration."""
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_chain(path, states, chain_id: str, cfg_hash: str, seed: int) -> None:
    """Write one chain as CSV with ``#`` header lines for id, config hash and seed."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# chain_id={chain_id}\n# config_hash={cfg_hash}\n# seed={seed}\n")
        fh.write("state\n")
        for v in np.asarray(states).reshape(-1):
            fh.write(f"{float(v)!r}\n")


def read_chain(path) -> tuple[np.ndarray, dict]:
    """Return (states, header) from a file written by :func:`write_chain`."""
    header = {}
    with Path(path).open() as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key] = value
        elif line and line != "state":
            body.append(float(line))
    return np.array(body), header
