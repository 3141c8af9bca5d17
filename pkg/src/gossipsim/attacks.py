"""Omniscient per-receiver attack crafting.

Adversaries see the honest half-step models the receiver pulled this
round and tailor one malicious vector per (receiver, round); different
receivers can get different vectors in the same round. Formulas operate
in model-exchange space, matching a protocol that exchanges models
rather than gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .numerics import as_vector, coordinate_stats

ATTACK_KINDS = ("none", "sign_flip", "foe", "alie", "dissensus")

# Defaults chosen to visibly break plain averaging; the ALIE strength
# defaults to the quantile heuristic in default_alie_z.
DEFAULT_STRENGTHS = {"foe": 1.5, "dissensus": 1.0}


@dataclass(frozen=True)
class AttackSpec:
    """Which attack to run and its scalar strength (eps or z, kind-dependent)."""

    kind: str
    strength: float | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.strength is not None and self.strength < 0:
            raise ValueError("strength must be nonnegative")

    def resolved_strength(self, num_honest: int = 1, num_byz: int = 0) -> float:
        if self.strength is not None:
            return float(self.strength)
        if self.kind == "alie":
            return default_alie_z(num_honest, num_byz)
        return DEFAULT_STRENGTHS.get(self.kind, 1.0)


@dataclass(frozen=True)
class AttackContext:
    """Everything the omniscient adversary knows about one (receiver, round)."""

    receiver: int
    round: int
    honest_visible: tuple  # (node id, half-step vector) pairs from the receiver's sample
    receiver_own: np.ndarray  # the receiver's own half-step
    receiver_prev: np.ndarray  # the receiver's model at the start of the round
    num_byz_selected: int
    rule: str = ""

    def __post_init__(self):
        object.__setattr__(self, "receiver_own", as_vector(self.receiver_own))
        object.__setattr__(self, "receiver_prev", as_vector(self.receiver_prev))
        object.__setattr__(
            self,
            "honest_visible",
            tuple((int(j), as_vector(v)) for j, v in self.honest_visible),
        )


def default_alie_z(num_honest: int, num_byz: int) -> float:
    """Quantile heuristic for the coordinate-shift strength, clamped to [0, 4]."""
    if num_honest < 1:
        raise ValueError("need at least one honest node")
    phi = max(1, (num_honest + num_byz) // 2 + 1 - num_byz) / num_honest
    phi = min(phi, 1.0)
    if phi >= 1.0:
        return 0.0
    z = NormalDist().inv_cdf(1.0 - phi)
    return float(min(max(z, 0.0), 4.0))


def craft(spec: AttackSpec, ctx: AttackContext) -> np.ndarray:
    """One malicious model vector for this (receiver, round).

    With mu the mean and sigma_cw the coordinate-wise std of the honest
    vectors the receiver sampled, and u = mu - receiver_prev the honest
    mean step as seen by the receiver:

    * sign_flip:      receiver_prev - u
    * foe(eps):       receiver_prev - eps * u
    * alie(z):        mu - z * sigma_cw
    * dissensus(eps): receiver_own - eps * (mu - receiver_own)

    An empty honest view makes foe/alie fall back to echoing
    receiver_prev (a no-op); callers should flag that in their trace.
    """
    if spec.kind == "none":
        return ctx.receiver_own.copy()
    if spec.kind == "dissensus":
        eps = spec.resolved_strength()
        if not ctx.honest_visible:
            return ctx.receiver_own.copy()
        mu = coordinate_stats([v for _, v in ctx.honest_visible])[0]
        return ctx.receiver_own - eps * (mu - ctx.receiver_own)
    if not ctx.honest_visible:
        return ctx.receiver_prev.copy()
    mu, sigma_cw = coordinate_stats([v for _, v in ctx.honest_visible])
    if spec.kind == "sign_flip":
        return ctx.receiver_prev - (mu - ctx.receiver_prev)
    if spec.kind == "foe":
        eps = spec.resolved_strength()
        return ctx.receiver_prev - eps * (mu - ctx.receiver_prev)
    if spec.kind == "alie":
        num_h = len(ctx.honest_visible)
        z = spec.resolved_strength(num_h, ctx.num_byz_selected)
        return mu - z * sigma_cw
    raise ValueError(f"unknown attack kind {spec.kind!r}")
