"""Hypergeometric machinery behind random peer selection.

Covers the exact PMF, single and bulk sampling, the Bernoulli KL
divergence used in the tail bound, the implicit sampling threshold, the
logarithmic sufficient bound, and the grid-search procedure that picks
(s, b_hat) so the effective adversarial fraction b_hat/(s+1) stays below
a target with high probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .numerics import RngStream


class InfeasibleGridError(ValueError):
    """No grid value reaches the target fraction; carries the full table."""

    def __init__(self, table):
        self.table = list(table)
        rows = ", ".join(f"(s={s}, b_hat={bh}, kappa={k:.4f})" for s, bh, k in self.table)
        super().__init__(f"no grid value satisfies the target fraction: {rows}")


@dataclass(frozen=True)
class HypergeometricParams:
    """Population of size population with successes marked; draws without replacement."""

    population: int
    successes: int
    draws: int

    def __post_init__(self):
        if not 0 <= self.successes <= self.population:
            raise ValueError("need 0 <= successes <= population")
        if not 0 <= self.draws <= self.population:
            raise ValueError("need 0 <= draws <= population")

    @property
    def support(self) -> tuple[int, int]:
        lo = max(0, self.draws - (self.population - self.successes))
        hi = min(self.draws, self.successes)
        return lo, hi


@dataclass(frozen=True)
class SelectionPlan:
    """Sampling hyperparameters for one run: who samples how many, how often."""

    n: int  # total node count
    b: int  # true adversary count
    s: int  # peers sampled per node per round
    b_hat: int  # high-probability bound on selected adversaries
    T: int  # round count
    p: float = 0.95  # confidence level
    q: float = 0.45  # target effective fraction

    def __post_init__(self):
        if self.b < 0 or self.b >= max(1, self.n // 2):
            raise ValueError("need 0 <= b < floor(n/2)")
        if not 1 <= self.s <= self.n - 1:
            raise ValueError("need 1 <= s <= n-1")
        if not 0 <= self.b_hat <= min(self.b, self.s):
            raise ValueError("need 0 <= b_hat <= min(b, s)")
        if self.T < 1:
            raise ValueError("need T >= 1")
        if not 0 < self.p < 1:
            raise ValueError("need p in (0,1)")

    @property
    def num_honest(self) -> int:
        return self.n - self.b

    @property
    def h_hat(self) -> int:
        return self.s + 1 - self.b_hat

    @property
    def effective_fraction(self) -> float:
        return self.b_hat / (self.s + 1)

    @property
    def feasible(self) -> bool:
        return self.effective_fraction < 0.5


def hypergeom_pmf_exact(params: HypergeometricParams, k: int) -> Fraction:
    """Exact P(X = k) as a rational number; 0 outside the support."""
    n_, k_, m_ = params.population, params.successes, params.draws
    if not 0 <= k <= m_:
        raise ValueError(f"k={k} outside [0, draws={m_}]")
    lo, hi = params.support
    if not lo <= k <= hi:
        return Fraction(0)
    return Fraction(math.comb(k_, k) * math.comb(n_ - k_, m_ - k), math.comb(n_, m_))


def hypergeom_pmf(params: HypergeometricParams, k: int) -> float:
    """P(X = k) for X ~ HG(population, successes, draws)."""
    return float(hypergeom_pmf_exact(params, k))


def hypergeom_cdf(params: HypergeometricParams, k: int) -> float:
    """P(X <= k)."""
    lo, hi = params.support
    if k < lo:
        return 0.0
    total = Fraction(0)
    for j in range(lo, min(k, hi) + 1):
        total += hypergeom_pmf_exact(params, j)
    return float(total)


def hypergeom_sample(params: HypergeometricParams, rng: RngStream) -> int:
    """One draw from HG(population, successes, draws).

    Sequential urn draws for small sample sizes (exact and easy to audit),
    inverse-CDF otherwise.
    """
    gen = rng.generator()
    return _sample_with_generator(params, gen)


def _sample_with_generator(params: HypergeometricParams, gen: np.random.Generator) -> int:
    n_, k_, m_ = params.population, params.successes, params.draws
    if k_ == 0 or m_ == 0:
        return 0
    if m_ == n_:
        return k_
    if m_ <= 64:
        # urn: count successes among m indices drawn without replacement
        idx = gen.choice(n_, size=m_, replace=False)
        return int(np.count_nonzero(idx < k_))
    u = gen.random()
    lo, hi = params.support
    acc = 0.0
    for k in range(lo, hi + 1):
        acc += hypergeom_pmf(params, k)
        if u <= acc:
            return k
    return hi


def hypergeom_sample_array(
    params: HypergeometricParams, size: int, gen: np.random.Generator
) -> np.ndarray:
    """Vectorized bulk draws (numpy's hypergeometric generator)."""
    n_, k_, m_ = params.population, params.successes, params.draws
    if k_ == 0 or m_ == 0:
        return np.zeros(size, dtype=np.int64)
    if m_ == n_:
        return np.full(size, k_, dtype=np.int64)
    return gen.hypergeometric(k_, n_ - k_, m_, size=size).astype(np.int64)


def kl_bernoulli(alpha: float, beta: float) -> float:
    """KL divergence D(Bern(alpha) || Bern(beta)), with 0 ln 0 = 0."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie strictly in (0, 1)")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    val = 0.0
    if alpha > 0:
        val += alpha * math.log(alpha / beta)
    if alpha < 1:
        val += (1 - alpha) * math.log((1 - alpha) / (1 - beta))
    return val


@dataclass(frozen=True)
class ThresholdResult:
    s: int
    b_hat: int
    capped: bool  # no s <= n-1 met the divergence branch; fell back to s = n-1


def threshold_s(
    n: int,
    b: int,
    b_hat_over_s: float,
    T: int,
    h_count: int,
    p: float,
) -> ThresholdResult:
    """Smallest s whose tail-bound condition guarantees the all-rounds event.

    The condition is implicit (the bound's b_hat appears as b_hat/s inside
    the KL term), so we fix the target ratio, scan s upward taking
    b_hat = ceil(b_hat_over_s * s), and stop at the first s with
    s >= D(b_hat/s, b/(n-1))^-1 * ln(T * h_count / (1 - p)). If no s below
    n-1 qualifies, s = n-1 trivially satisfies the clamp and is returned
    with the capped flag set.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if b < 0 or b >= n:
        raise ValueError("need 0 <= b < n")
    if b == 0:
        return ThresholdResult(s=1, b_hat=0, capped=False)
    log_term = math.log(T * h_count / (1 - p))
    beta = b / (n - 1)
    for s in range(1, n):
        b_hat = math.ceil(b_hat_over_s * s)
        if b_hat > s:
            continue
        ratio = b_hat / s
        if ratio <= beta or ratio >= 1:
            continue  # tail bound only bites above the population fraction
        if s >= log_term / kl_bernoulli(ratio, beta):
            return ThresholdResult(s=s, b_hat=b_hat, capped=False)
    return ThresholdResult(s=n - 1, b_hat=min(b, n - 1), capped=True)


def log_bound_s(n: int, b: int, T: int, h_count: int, p: float) -> int:
    """Sufficient sample count growing logarithmically in T * h_count.

    ceil(max{1/(1/2 - b/n)^2, 3/(b/n)} * ln(4 T h / (1-p))) + 2.
    """
    if b <= 0:
        raise ValueError("formula requires b > 0")
    frac = b / n
    if frac >= 0.5:
        raise ValueError("need b/n < 1/2")
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    coef = max(1.0 / (0.5 - frac) ** 2, 3.0 / frac)
    return math.ceil(coef * math.log(4 * T * h_count / (1 - p))) + 2


@dataclass(frozen=True)
class SelectionTable:
    """Grid-search result: the chosen (s, b_hat) and the full per-s table."""

    s: int
    b_hat: int
    table: tuple  # rows (s, b_hat_s, kappa_s)

    @property
    def effective_fraction(self) -> float:
        return self.b_hat / (self.s + 1)


def simulate_b_hat(
    n: int, b: int, s: int, T: int, num_sims: int, rng: RngStream
) -> np.ndarray:
    """Per-simulation max adversary count over (n-b) honest nodes x T rounds."""
    params = HypergeometricParams(n - 1, b, s)
    h = n - b
    out = np.empty(num_sims, dtype=np.int64)
    for j in range(num_sims):
        gen = rng.substream("b-hat-sim", s, j).generator()
        out[j] = hypergeom_sample_array(params, h * T, gen).max()
    return out


def exact_max_quantile(n: int, b: int, s: int, T: int, p: float) -> int:
    """Smallest b_hat with P(max of h*T iid draws <= b_hat) >= p (exact CDF)."""
    params = HypergeometricParams(n - 1, b, s)
    h = n - b
    lo, hi = params.support
    for k in range(lo, hi + 1):
        if hypergeom_cdf(params, k) ** (h * T) >= p:
            return k
    return hi


def select_hyperparameters(
    n: int,
    b: int,
    T: int,
    grid,
    num_sims: int,
    q: float,
    rng: RngStream,
    method: str = "simulation",
    p: float = 0.95,
) -> SelectionTable:
    """Pick the smallest grid s whose simulated b_hat_s/(s+1) is at most q.

    For each s, b_hat_s is the max over num_sims simulations of the max of
    (n-b)*T hypergeometric draws (the per-receiver adversary counts across
    a full run). method="quantile" replaces the simulation by the exact
    distribution of the per-run maximum at confidence p.
    """
    grid = sorted(set(int(s) for s in grid))
    if not grid:
        raise ValueError("grid must be nonempty")
    if not (b / n) <= q < 0.5:
        raise ValueError("need b/n <= q < 1/2")
    table = []
    chosen = None
    for s in grid:
        if not 1 <= s <= n - 1:
            raise ValueError(f"grid value s={s} outside [1, n-1]")
        if b == 0:
            b_hat_s = 0
        elif method == "simulation":
            b_hat_s = int(simulate_b_hat(n, b, s, T, num_sims, rng).max())
        elif method == "quantile":
            b_hat_s = exact_max_quantile(n, b, s, T, p)
        else:
            raise ValueError(f"unknown method {method!r}")
        kappa_s = b_hat_s / (s + 1)
        table.append((s, b_hat_s, kappa_s))
        if chosen is None and kappa_s <= q:
            chosen = (s, b_hat_s)
    if chosen is None:
        raise InfeasibleGridError(table)
    return SelectionTable(s=chosen[0], b_hat=chosen[1], table=tuple(table))


def sample_neighbors(n: int, s: int, self_id: int, rng: RngStream) -> np.ndarray:
    """Uniform s-subset of the other n-1 nodes, without replacement."""
    if not 1 <= s <= n - 1:
        raise ValueError(f"need 1 <= s <= n-1, got s={s}, n={n}")
    if not 0 <= self_id < n:
        raise ValueError("self_id out of range")
    gen = rng.generator()
    idx = gen.choice(n - 1, size=s, replace=False)
    return np.sort(idx + (idx >= self_id))
