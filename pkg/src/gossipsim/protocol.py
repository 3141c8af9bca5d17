"""Round engines: random-pull learning, the fixed-graph clipping baseline,
per-round metric extraction, the reduction-lemma harness, and the
convergence-bound evaluator.

Both engines run a synchronous loop: every honest node takes a momentum
SGD half-step, gathers peer half-steps (random sample or fixed
neighborhood), and aggregates. Byzantine nodes never hold usable state;
their outgoing messages come solely from attack crafting. All randomness
is keyed by (seed, node, round, purpose) so results are bit-identical
regardless of execution order or worker count.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import attacks as attacks_mod
from .aggregation import get_rule
from .attacks import AttackContext, AttackSpec
from .numerics import RngStream, as_vector
from .objectives import HonestObjective
from .sampling import SelectionPlan, sample_neighbors

TAG_GRAD = "grad"
TAG_SAMPLE = "sample"
TAG_OUTPUT = "output"
TAG_GRAPH = "graph"


class NumericalBlowupError(RuntimeError):
    """Non-finite model state; carries the offending round and node."""

    def __init__(self, round_index: int, node: int):
        self.round_index = round_index
        self.node = node
        super().__init__(f"non-finite model at round {round_index}, node {node}")


@dataclass(frozen=True)
class FixedGraph:
    """Simple connected undirected graph given as an edge set."""

    n: int
    edges: frozenset  # of (i, j) with i < j

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ValueError(f"bad edge ({i}, {j})")
        if not self._connected():
            raise ValueError("graph is not connected")

    def _connected(self) -> bool:
        adj = self.neighbor_lists()
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n

    def neighbor_lists(self) -> list:
        adj: list = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return [sorted(a) for a in adj]


def random_connected_graph(n: int, num_edges: int, rng: RngStream) -> FixedGraph:
    """Connected simple graph with exactly num_edges edges.

    A uniform spanning tree is grown by random walk (Aldous-Broder), then
    random non-edges are added until the target count is reached.
    """
    max_edges = n * (n - 1) // 2
    if not n - 1 <= num_edges <= max_edges:
        raise ValueError(f"need n-1 <= num_edges <= n(n-1)/2, got {num_edges}")
    gen = rng.generator()
    edges = set()
    visited = {0}
    current = 0
    while len(visited) < n:
        nxt = int(gen.integers(0, n))
        if nxt == current:
            continue
        if nxt not in visited:
            visited.add(nxt)
            edges.add((min(current, nxt), max(current, nxt)))
        current = nxt
    while len(edges) < num_edges:
        i = int(gen.integers(0, n))
        j = int(gen.integers(0, n))
        if i != j:
            e = (min(i, j), max(i, j))
            if e not in edges:
                edges.add(e)
    return FixedGraph(n=n, edges=frozenset(edges))


@dataclass
class EtaSchedule:
    """Piecewise-constant step size: list of (last round, eta) segments."""

    segments: tuple  # ((t_end, eta), ...) sorted by t_end; last covers the rest

    @classmethod
    def constant(cls, eta: float) -> "EtaSchedule":
        return cls(segments=((math.inf, float(eta)),))

    @classmethod
    def from_config(cls, value) -> "EtaSchedule":
        if isinstance(value, (int, float)):
            return cls.constant(float(value))
        segs = tuple((float(t_end), float(eta)) for t_end, eta in value)
        if any(eta <= 0 for _, eta in segs):
            raise ValueError("step sizes must be positive")
        return cls(segments=segs)

    def at(self, t: int) -> float:
        for t_end, eta in self.segments:
            if t <= t_end:
                return eta
        return self.segments[-1][1]


@dataclass(frozen=True)
class SimulationConfig:
    """Everything one engine run needs, seed included."""

    plan: SelectionPlan
    objective: HonestObjective
    attack: AttackSpec
    rule: str
    eta: EtaSchedule
    beta: float
    seed: int
    mode: str = "rpel"  # or "fixed_graph"
    graph_edges: int | None = None
    x0: np.ndarray | None = None
    rho: float | None = None  # recorded for fidelity; unused by the loop
    include_self_in_sample: bool = False  # sample s+1 over all nodes instead of s others
    wide_visibility: bool = False  # attackers see all honest half-steps
    clip_with_true_b: bool = False  # fixed-graph clipping budget b instead of b_hat

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise ValueError("need beta in [0, 1)")
        if self.mode not in ("rpel", "fixed_graph"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "fixed_graph" and self.graph_edges is None:
            object.__setattr__(self, "graph_edges", self.plan.n * self.plan.s // 2)
        if len(self.objective.objectives) != self.plan.num_honest:
            raise ValueError("objective must cover exactly the honest nodes")

    @property
    def honest_ids(self) -> list:
        return sorted(self.objective.objectives)

    @property
    def byzantine_ids(self) -> list:
        honest = set(self.honest_ids)
        return [i for i in range(self.plan.n) if i not in honest]


@dataclass
class RoundTrace:
    """Column-oriented per-round metrics plus run-level summary fields."""

    rounds: list = field(default_factory=list)
    max_byz_selected: list = field(default_factory=list)
    grad_norm_sq: list = field(default_factory=list)
    honest_variance: list = field(default_factory=list)
    drift_sq: list = field(default_factory=list)
    alpha_emp: list = field(default_factory=list)
    lambda_emp: list = field(default_factory=list)
    attack_noop: list = field(default_factory=list)  # foe/alie fell back this round
    final_grad_norm_sq: float = math.nan
    final_honest_variance: float = math.nan

    COLUMNS = (
        "round",
        "max_byz_selected",
        "grad_norm_sq",
        "honest_variance",
        "drift_sq",
        "alpha_emp",
        "lambda_emp",
        "attack_noop",
    )

    def rows(self):
        for k in range(len(self.rounds)):
            yield (
                self.rounds[k],
                self.max_byz_selected[k],
                self.grad_norm_sq[k],
                self.honest_variance[k],
                self.drift_sq[k],
                self.alpha_emp[k],
                self.lambda_emp[k],
                self.attack_noop[k],
            )

    def summary(self) -> dict:
        return {
            "rounds": len(self.rounds),
            "initial_grad_norm_sq": self.grad_norm_sq[0] if self.grad_norm_sq else math.nan,
            "final_grad_norm_sq": self.final_grad_norm_sq,
            "initial_honest_variance": (
                self.honest_variance[0] if self.honest_variance else math.nan
            ),
            "final_honest_variance": self.final_honest_variance,
            "mean_grad_norm_sq": (
                float(np.mean(self.grad_norm_sq)) if self.grad_norm_sq else math.nan
            ),
            "max_byz_selected_overall": (
                int(max(self.max_byz_selected)) if self.max_byz_selected else 0
            ),
            "gamma_violated": bool(
                self.max_byz_selected and max(self.max_byz_selected) > self._b_hat
            ),
        }

    _b_hat: int = 0


def _honest_metrics(obj: HonestObjective, states: dict) -> tuple[float, float, np.ndarray]:
    xs = np.stack([states[i] for i in sorted(states)])
    mean = xs.mean(axis=0)
    var = float(np.mean(np.sum((xs - mean) ** 2, axis=1)))
    gn = float(np.mean([np.dot(g, g) for g in (obj.global_gradient(x) for x in xs)]))
    return gn, var, mean


def _resolved_attack(cfg: SimulationConfig) -> AttackSpec:
    spec = cfg.attack
    if spec.kind == "alie" and spec.strength is None:
        z = attacks_mod.default_alie_z(cfg.plan.num_honest, cfg.plan.b)
        return AttackSpec(kind="alie", strength=z)
    return spec


def _local_step(cfg, obj, root, x, mom, t, eta_t):
    """Momentum SGD half-step for every honest node; returns half-step dict."""
    half = {}
    # overflow here is an expected failure mode: it surfaces as inf and is
    # converted into NumericalBlowupError rather than a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i in cfg.honest_ids:
            g = obj.stochastic_gradient(i, x[i], root.substream(TAG_GRAD, i, t))
            mom[i] = cfg.beta * mom[i] + (1.0 - cfg.beta) * g
            half[i] = x[i] - eta_t * mom[i]
            if not np.all(np.isfinite(half[i])):
                raise NumericalBlowupError(t, i)
    return half


def run_rpel(cfg: SimulationConfig) -> tuple[RoundTrace, dict]:
    """Random-pull engine: T rounds of sample-pull-aggregate.

    Returns the trace plus, per honest node, one iterate drawn uniformly
    from that node's own trajectory x^1..x^T.
    """
    if cfg.mode != "rpel":
        raise ValueError("config mode must be 'rpel'")
    plan = cfg.plan
    obj = cfg.objective
    rule = get_rule(cfg.rule)
    spec = _resolved_attack(cfg)
    root = RngStream(cfg.seed)
    honest = cfg.honest_ids
    byz = set(cfg.byzantine_ids)
    d = obj.dim
    x0 = as_vector(cfg.x0) if cfg.x0 is not None else np.zeros(d)
    x = {i: x0.copy() for i in honest}
    mom = {i: np.zeros(d) for i in honest}
    # output rounds are fixed up front from each node's own stream
    out_round = {
        i: int(root.substream(TAG_OUTPUT, i).generator().integers(1, plan.T + 1))
        for i in honest
    }
    outputs: dict = {}
    trace = RoundTrace()
    trace._b_hat = plan.b_hat
    for t in range(1, plan.T + 1):
        gn, var, _ = _honest_metrics(obj, x)
        half = _local_step(cfg, obj, root, x, mom, t, cfg.eta.at(t))
        new_x = {}
        max_sel = 0
        noop = 0
        for i in honest:
            sample_rng = root.substream(TAG_SAMPLE, i, t)
            if cfg.include_self_in_sample:
                gen = sample_rng.generator()
                sel = np.sort(gen.choice(plan.n, size=plan.s + 1, replace=False))
                peers = [int(j) for j in sel if j != i]
            else:
                peers = [int(j) for j in sample_neighbors(plan.n, plan.s, i, sample_rng)]
            honest_sel = [j for j in peers if j not in byz]
            byz_count = len(peers) - len(honest_sel)
            max_sel = max(max_sel, byz_count)
            inputs = [half[i]] + [half[j] for j in honest_sel]
            if byz_count > 0 and spec.kind != "none":
                if cfg.wide_visibility:
                    visible = tuple((j, half[j]) for j in honest)
                else:
                    visible = tuple((j, half[j]) for j in honest_sel)
                if spec.kind in ("foe", "alie") and not visible:
                    noop += 1
                ctx = AttackContext(
                    receiver=i,
                    round=t,
                    honest_visible=visible,
                    receiver_own=half[i],
                    receiver_prev=x[i],
                    num_byz_selected=byz_count,
                    rule=cfg.rule,
                )
                crafted = attacks_mod.craft(spec, ctx)
                inputs.extend([crafted] * byz_count)
            elif byz_count > 0:
                inputs.extend([half[i]] * byz_count)  # "none" attack echoes the receiver
            new_x[i] = rule(np.stack(inputs), plan.b_hat)
            if not np.all(np.isfinite(new_x[i])):
                raise NumericalBlowupError(t, i)
        _record_round(trace, t, max_sel, gn, var, half, new_x, noop)
        x = new_x
        for i in honest:
            if out_round[i] == t:
                outputs[i] = x[i].copy()
    gn, var, _ = _honest_metrics(obj, x)
    trace.final_grad_norm_sq = gn
    trace.final_honest_variance = var
    return trace, outputs


def run_fixed_graph(cfg: SimulationConfig) -> tuple[RoundTrace, dict]:
    """Fixed-graph baseline: gossip over a static graph with norm clipping.

    Same local step as the random-pull engine. Each honest node sorts the
    received model differences by norm, clips the 2*budget largest to the
    norm of the next one, and averages uniformly including itself.
    """
    if cfg.mode != "fixed_graph":
        raise ValueError("config mode must be 'fixed_graph'")
    plan = cfg.plan
    obj = cfg.objective
    spec = _resolved_attack(cfg)
    root = RngStream(cfg.seed)
    honest = cfg.honest_ids
    byz = set(cfg.byzantine_ids)
    graph = random_connected_graph(plan.n, cfg.graph_edges, root.substream(TAG_GRAPH))
    adj = graph.neighbor_lists()
    clip_budget = plan.b if cfg.clip_with_true_b else plan.b_hat
    d = obj.dim
    x0 = as_vector(cfg.x0) if cfg.x0 is not None else np.zeros(d)
    x = {i: x0.copy() for i in honest}
    mom = {i: np.zeros(d) for i in honest}
    out_round = {
        i: int(root.substream(TAG_OUTPUT, i).generator().integers(1, plan.T + 1))
        for i in honest
    }
    outputs: dict = {}
    trace = RoundTrace()
    trace._b_hat = plan.b_hat
    for t in range(1, plan.T + 1):
        gn, var, _ = _honest_metrics(obj, x)
        half = _local_step(cfg, obj, root, x, mom, t, cfg.eta.at(t))
        new_x = {}
        max_sel = 0
        noop = 0
        for i in honest:
            neigh = adj[i]
            honest_neigh = [j for j in neigh if j not in byz]
            byz_count = len(neigh) - len(honest_neigh)
            max_sel = max(max_sel, byz_count)
            received = [half[j] for j in honest_neigh]
            if byz_count > 0 and spec.kind != "none":
                visible = tuple((j, half[j]) for j in honest_neigh)
                if spec.kind in ("foe", "alie") and not visible:
                    noop += 1
                ctx = AttackContext(
                    receiver=i,
                    round=t,
                    honest_visible=visible,
                    receiver_own=half[i],
                    receiver_prev=x[i],
                    num_byz_selected=byz_count,
                    rule="clipped_gossip",
                )
                crafted = attacks_mod.craft(spec, ctx)
                received.extend([crafted] * byz_count)
            elif byz_count > 0:
                received.extend([half[i]] * byz_count)
            if clip_budget == 0:
                # no clipping: plain uniform averaging, evaluated exactly as
                # the pull engine's mean rule so the two engines agree bitwise
                new_x[i] = np.stack([half[i], *received]).mean(axis=0)
            else:
                diffs = np.stack(received) - half[i]
                clipped = _clip_largest(diffs, 2 * clip_budget)
                new_x[i] = half[i] + clipped.sum(axis=0) / (len(received) + 1)
            if not np.all(np.isfinite(new_x[i])):
                raise NumericalBlowupError(t, i)
        _record_round(trace, t, max_sel, gn, var, half, new_x, noop)
        x = new_x
        for i in honest:
            if out_round[i] == t:
                outputs[i] = x[i].copy()
    gn, var, _ = _honest_metrics(obj, x)
    trace.final_grad_norm_sq = gn
    trace.final_honest_variance = var
    return trace, outputs


def _clip_largest(diffs: np.ndarray, k: int) -> np.ndarray:
    """Scale the k largest-norm rows down to the norm of the (k+1)-th largest."""
    if k <= 0:
        return diffs
    norms = np.linalg.norm(diffs, axis=1)
    order = np.argsort(-norms, kind="stable")
    tau = norms[order[k]] if k < len(norms) else 0.0
    out = diffs.copy()
    for idx in order[:k]:
        if norms[idx] > tau:
            out[idx] = diffs[idx] * (tau / norms[idx]) if norms[idx] > 0 else diffs[idx]
    return out


def _record_round(trace, t, max_sel, gn, var, half, new_x, noop):
    ids = sorted(new_x)
    # tolerate transient overflow in the metrics of a run that is about to
    # abort with NumericalBlowupError
    with np.errstate(over="ignore", invalid="ignore"):
        halves = np.stack([half[i] for i in ids])
        news = np.stack([new_x[i] for i in ids])
        half_mean = halves.mean(axis=0)
        new_mean = news.mean(axis=0)
        half_var = float(np.mean(np.sum((halves - half_mean) ** 2, axis=1)))
        new_var = float(np.mean(np.sum((news - new_mean) ** 2, axis=1)))
        drift = float(np.sum((new_mean - half_mean) ** 2))
    trace.rounds.append(t)
    trace.max_byz_selected.append(int(max_sel))
    trace.grad_norm_sq.append(gn)
    trace.honest_variance.append(var)
    trace.drift_sq.append(drift)
    trace.alpha_emp.append(new_var / half_var if half_var > 0 else 0.0)
    trace.lambda_emp.append(drift / half_var if half_var > 0 else 0.0)
    trace.attack_noop.append(int(noop))


@dataclass(frozen=True)
class ReductionReport:
    drift_estimate: float
    drift_bound: float
    drift_bound_ok: bool
    variance_estimate: float
    variance_bound: float
    variance_bound_ok: bool
    subsample_var: float  # per-node second moment around the input mean
    alpha_measured: float
    lambda_measured: float


def verify_reduction_lemma(
    vectors,
    h_hat: int,
    rule: str,
    b_hat: int,
    trials: int,
    rng: RngStream,
) -> ReductionReport:
    """Monte-Carlo check of the one-round mean-drift / variance contraction.

    Each trial independently gives every honest node a uniform h_hat-subset
    of the fixed input vectors and applies the rule to that subset. For
    rule="mean" with b_hat=0 the two inequalities are asserted with the
    exact zero-robustness coefficients
    lambda = (H - h_hat) / ((H-1) H h_hat) and
    alpha  = 6 (H - h_hat) / ((H-1) h_hat);
    other rules only report measured ratios.
    """
    arr = np.stack([as_vector(v) for v in vectors])
    num_h, dim = arr.shape
    if num_h < 2 or not 1 <= h_hat <= num_h:
        raise ValueError("need |H| >= 2 and 1 <= h_hat <= |H|")
    x_bar = arr.mean(axis=0)
    base_var = float(np.mean(np.sum((arr - x_bar) ** 2, axis=1)))
    gen = rng.generator()
    if rule == "mean":
        drift_e, var_e, sub_var = _mc_mean_reduction(arr, h_hat, trials, gen)
    else:
        drift_e, var_e, sub_var = _mc_rule_reduction(arr, h_hat, rule, b_hat, trials, gen)
    lam = (num_h - h_hat) / ((num_h - 1) * num_h * h_hat)
    alpha = 6 * (num_h - h_hat) / ((num_h - 1) * h_hat)
    drift_bound = lam * base_var
    var_bound = alpha * base_var
    # Monte-Carlo estimates get 5% slack on the inequality checks
    drift_ok = drift_e <= drift_bound * 1.05 + 1e-12
    var_ok = var_e <= var_bound * 1.05 + 1e-12
    return ReductionReport(
        drift_estimate=drift_e,
        drift_bound=drift_bound,
        drift_bound_ok=drift_ok,
        variance_estimate=var_e,
        variance_bound=var_bound,
        variance_bound_ok=var_ok,
        subsample_var=sub_var,
        alpha_measured=var_e / base_var if base_var > 0 else 0.0,
        lambda_measured=drift_e / base_var if base_var > 0 else 0.0,
    )


def _random_subsets(num_h, h_hat, trials, gen):
    # (trials, H, h_hat) independent uniform subsets via random-key argsort
    keys = gen.random((trials, num_h, num_h))
    return np.argsort(keys, axis=2)[:, :, :h_hat]


def _mc_mean_reduction(arr, h_hat, trials, gen):
    num_h = arr.shape[0]
    x_bar = arr.mean(axis=0)
    idx = _random_subsets(num_h, h_hat, trials, gen)
    ys = arr[idx].mean(axis=2)  # (trials, H, d)
    y_bar = ys.mean(axis=1)  # (trials, d)
    drift = np.sum((y_bar - x_bar) ** 2, axis=1)
    var = np.mean(np.sum((ys - y_bar[:, None, :]) ** 2, axis=2), axis=1)
    sub = np.mean(np.sum((ys - x_bar) ** 2, axis=2), axis=1)
    return float(drift.mean()), float(var.mean()), float(sub.mean())


def _mc_rule_reduction(arr, h_hat, rule, b_hat, trials, gen):
    fn = get_rule(rule)
    num_h = arr.shape[0]
    x_bar = arr.mean(axis=0)
    drifts = np.empty(trials)
    variances = np.empty(trials)
    subs = np.empty(trials)
    for k in range(trials):
        idx = _random_subsets(num_h, h_hat, 1, gen)[0]
        ys = np.stack([fn(arr[idx[i]], b_hat) for i in range(num_h)])
        y_bar = ys.mean(axis=0)
        drifts[k] = np.sum((y_bar - x_bar) ** 2)
        variances[k] = np.mean(np.sum((ys - y_bar) ** 2, axis=1))
        subs[k] = np.mean(np.sum((ys - x_bar) ** 2, axis=1))
    return float(drifts.mean()), float(variances.mean()), float(subs.mean())


def enumerate_mean_reduction(vectors, h_hat: int) -> tuple[float, float]:
    """Exact E drift^2 and single-node subsample-mean variance by enumeration.

    Independent oracle for the Monte-Carlo harness: averages over all
    pairs of h_hat-subsets (drift) and all single subsets (variance).
    """
    arr = np.stack([as_vector(v) for v in vectors])
    num_h = arr.shape[0]
    x_bar = arr.mean(axis=0)
    subsets = list(itertools.combinations(range(num_h), h_hat))
    means = np.stack([arr[list(u)].mean(axis=0) for u in subsets])
    # drift: y_bar is the average of |H| iid subset means; its second
    # moment around x_bar is Var(subset mean)/|H| since E[subset mean]=x_bar
    single_var = float(np.mean(np.sum((means - x_bar) ** 2, axis=1)))
    return single_var / num_h, single_var


@dataclass(frozen=True)
class BoundResult:
    value: float
    finite: bool
    eta: float
    alpha: float
    lam: float
    c0: float
    c1: float
    c2: float
    c3: float


def eval_convergence_bound(
    L: float,
    sigma2: float,
    G2: float,
    n: int,
    b: int,
    s: int,
    b_hat: int,
    T: int,
    F_gap: float,
    kappa: float,
) -> BoundResult:
    """Numeric value of the high-probability convergence bound.

    Requires the variance-contraction coefficient alpha < 1; otherwise
    the bound is undefined and a flagged infinity is returned.
    """
    num_h = n - b
    h_hat = s + 1 - b_hat
    if h_hat < 1 or num_h < 2:
        raise ValueError("need h_hat >= 1 and at least two honest nodes")
    alpha = 6 * kappa + 6 * (num_h - h_hat) / ((num_h - 1) * h_hat)
    lam = kappa + (num_h - h_hat) / ((num_h - 1) * num_h * h_hat)
    c0 = 12.0 * F_gap
    if alpha >= 1:
        return BoundResult(math.inf, False, math.nan, alpha, lam, c0, math.nan, math.nan, math.nan)
    c1 = 18.0 * alpha * (1 + alpha) / (1 - alpha) ** 2
    c2 = 72.0 * L * (3.0 / num_h + 2.0 * c1 + 4.5 * lam * (2.0 * c1 + 3.0))
    c3 = 6.0 * (6.0 * c1 + 4.5 * lam * (4.0 * c1 + 9.0))
    sq_term = c2 * L * sigma2 + (432.0 * L / T) * (sigma2 / num_h)
    eta_candidates = [1.0 / (12.0 * L)]
    cube_denom = 9.0 * T * c1 * n * L**2 * (sigma2 + G2)
    if cube_denom > 0:
        eta_candidates.append((c0 / cube_denom) ** (1.0 / 3.0))
    if sq_term > 0:
        eta_candidates.append(math.sqrt(c0 / (T * sq_term)))
    eta = min(eta_candidates)
    value = (
        2.0 * math.sqrt(sq_term * c0 / T)
        + 2.0 * (9.0 * c0**2 * c1 * n * L**2 * (sigma2 + G2) / T**2) ** (1.0 / 3.0)
        + 12.0 * L * c0 / T
        + c3 * G2
    )
    return BoundResult(value, True, eta, alpha, lam, c0, c1, c2, c3)
