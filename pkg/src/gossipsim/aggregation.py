"""Robust aggregation rules and an exhaustive robustness-coefficient harness.

Rules act on s+1 stacked input vectors (the receiver's own plus the s it
pulled) with a trimming budget b_hat. empirical_kappa measures, by subset
enumeration, the worst-case ratio between the rule's deviation from an
honest-subset mean and that subset's variance.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_vector


@dataclass(frozen=True)
class AggregationInput:
    """One receiver's aggregation instance: own vector, s received, budget b_hat."""

    own: np.ndarray
    received: tuple
    b_hat: int

    def __post_init__(self):
        own = as_vector(self.own)
        received = tuple(as_vector(v) for v in self.received)
        if any(v.shape != own.shape for v in received):
            raise ValueError("all aggregation inputs must share a dimension")
        s = len(received)
        if self.b_hat < 0 or 2 * self.b_hat > s:
            raise ValueError(f"need 0 <= 2*b_hat <= s, got b_hat={self.b_hat}, s={s}")
        object.__setattr__(self, "own", own)
        object.__setattr__(self, "received", received)

    @property
    def s(self) -> int:
        return len(self.received)

    def stacked(self) -> np.ndarray:
        return np.stack([self.own, *self.received])


@dataclass(frozen=True)
class RobustnessCertificate:
    rule: str
    description: str
    kappa_hat: float
    witness: tuple  # indices of the maximizing honest subset


def agg_mean(vectors: np.ndarray, b_hat: int = 0) -> np.ndarray:
    """Plain (non-robust) average of all s+1 inputs."""
    return vectors.mean(axis=0)


def agg_cwtm(vectors: np.ndarray, b_hat: int) -> np.ndarray:
    """Coordinate-wise trimmed mean: drop b_hat extremes per side, average the rest."""
    count = vectors.shape[0]
    if 2 * b_hat >= count:
        raise ValueError(f"need 2*b_hat < inputs, got b_hat={b_hat}, inputs={count}")
    if b_hat == 0:
        return vectors.mean(axis=0)
    ordered = np.sort(vectors, axis=0)
    return ordered[b_hat : count - b_hat].mean(axis=0)


def agg_cwmed(vectors: np.ndarray, b_hat: int = 0) -> np.ndarray:
    """Coordinate-wise median (midpoint convention for even counts)."""
    return np.median(vectors, axis=0)


def nnm_preaggregate(vectors: np.ndarray, b_hat: int) -> np.ndarray:
    """Replace each vector by the mean of its count-b_hat nearest inputs.

    Distances are Euclidean, each vector counts itself among its
    neighbors, and ties break toward the lower input index.
    """
    count = vectors.shape[0]
    keep = count - b_hat
    if b_hat == 0:
        return np.broadcast_to(vectors.mean(axis=0), vectors.shape).copy()
    diff = vectors[:, None, :] - vectors[None, :, :]
    dists = np.sum(diff * diff, axis=2)
    # stable sort: equal distances resolve to the lower index
    order = np.argsort(dists, axis=1, kind="stable")[:, :keep]
    return vectors[order].mean(axis=1)


def agg_nnm_cwtm(vectors: np.ndarray, b_hat: int) -> np.ndarray:
    """Nearest-neighbor mixing followed by the coordinate-wise trimmed mean."""
    return agg_cwtm(nnm_preaggregate(vectors, b_hat), b_hat)


def agg_nnm_cwmed(vectors: np.ndarray, b_hat: int) -> np.ndarray:
    """Nearest-neighbor mixing followed by the coordinate-wise median."""
    return agg_cwmed(nnm_preaggregate(vectors, b_hat), b_hat)


def _not_implemented(name):
    def rule(vectors, b_hat):
        raise NotImplementedError(f"aggregation rule {name!r} is a placeholder")

    return rule


# Krum and the geometric median share the interface but are placeholders:
# they are alternatives, not needed by any shipped experiment.
RULES = {
    "mean": agg_mean,
    "cwtm": agg_cwtm,
    "cwmed": agg_cwmed,
    "nnm_cwtm": agg_nnm_cwtm,
    "nnm_cwmed": agg_nnm_cwmed,
    "krum": _not_implemented("krum"),
    "geometric_median": _not_implemented("geometric_median"),
}


def get_rule(name: str):
    try:
        return RULES[name]
    except KeyError:
        raise ValueError(f"unknown aggregation rule {name!r}") from None


def apply_rule(name: str, inp: AggregationInput) -> np.ndarray:
    return get_rule(name)(inp.stacked(), inp.b_hat)


ENUMERATION_CAP = 20  # subset enumeration is exponential beyond this


def empirical_kappa(rule: str, inp: AggregationInput) -> RobustnessCertificate:
    """Exhaustive robustness coefficient of a rule on one instance.

    kappa_hat = max over honest subsets U of size s+1-b_hat of
    ||rule(inputs) - mean_U||^2 / ((1/|U|) sum_{i in U} ||v_i - mean_U||^2).
    A zero denominator with a nonzero numerator yields +inf; 0/0 counts
    as 0. The maximizing subset is returned as the witness.
    """
    vectors = inp.stacked()
    count = vectors.shape[0]
    if count > ENUMERATION_CAP:
        raise ValueError(f"enumeration limited to {ENUMERATION_CAP} inputs, got {count}")
    out = get_rule(rule)(vectors, inp.b_hat)
    size = count - inp.b_hat
    best = -1.0
    witness: tuple = ()
    for subset in itertools.combinations(range(count), size):
        sub = vectors[list(subset)]
        vbar = sub.mean(axis=0)
        dev = out - vbar
        num = float(np.dot(dev, dev))
        den = float(np.mean(np.sum((sub - vbar) ** 2, axis=1)))
        if den == 0.0:
            ratio = 0.0 if num == 0.0 else math.inf
        else:
            ratio = num / den
        if ratio > best:
            best = ratio
            witness = subset
    desc = f"s={inp.s}, b_hat={inp.b_hat}, d={vectors.shape[1]}"
    return RobustnessCertificate(rule=rule, description=desc, kappa_hat=best, witness=witness)
