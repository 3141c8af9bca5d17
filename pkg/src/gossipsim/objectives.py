"""Synthetic local objectives with controllable smoothness, noise and heterogeneity.

Two families are provided:

* diagonal quadratics f_i(x) = 0.5 (x - theta_i)^T A (x - theta_i) with
  optional isotropic Gaussian gradient noise -- the workhorse for exact
  constant bookkeeping (closed-form optimum, exact L, sigma^2, G^2);
* multinomial logistic regression on a Gaussian-blob pool partitioned
  across nodes with Dirichlet class proportions, for accuracy-style runs.

All honest nodes of a run are grouped in a HonestObjective, which also
evaluates the average objective and its gradient exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream, as_vector


@dataclass(frozen=True)
class QuadraticObjective:
    """f(x) = 0.5 (x - theta)^T diag(curvature) (x - theta) + Gaussian gradient noise."""

    theta: np.ndarray
    curvature: np.ndarray  # diagonal entries, each in [mu, L]
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", as_vector(self.theta))
        object.__setattr__(self, "curvature", as_vector(self.curvature))
        if self.theta.shape != self.curvature.shape:
            raise ValueError("theta and curvature must share a dimension")
        if np.any(self.curvature <= 0):
            raise ValueError("curvature entries must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def dim(self) -> int:
        return self.theta.size

    def value(self, x) -> float:
        d = as_vector(x) - self.theta
        return float(0.5 * np.dot(d, self.curvature * d))

    def gradient(self, x) -> np.ndarray:
        return self.curvature * (as_vector(x) - self.theta)

    def stochastic_gradient(self, x, rng: RngStream) -> np.ndarray:
        g = self.gradient(x)
        if self.noise_sigma > 0:
            # per-coordinate std sigma/sqrt(d) so the total variance is sigma^2
            scale = self.noise_sigma / np.sqrt(self.dim)
            g = g + rng.generator().normal(0.0, scale, size=self.dim)
        return g


@dataclass(frozen=True)
class ClassificationObjective:
    """Multinomial logistic regression over a local dataset, flat weight vector.

    The model vector has dimension num_classes * num_features and is
    interpreted row-major as a (num_classes, num_features) weight matrix.
    """

    features: np.ndarray  # (m, f)
    labels: np.ndarray  # (m,) ints in [0, num_classes)
    num_classes: int
    l2_reg: float = 0.0
    batch_size: int = 32

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] != labs.shape[0] or feats.shape[0] == 0:
            raise ValueError("features must be (m, f) with matching nonempty labels")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        if labs.min() < 0 or labs.max() >= self.num_classes:
            raise ValueError("labels out of range")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be nonnegative")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def dim(self) -> int:
        return self.num_classes * self.features.shape[1]

    def _weights(self, x) -> np.ndarray:
        return as_vector(x).reshape(self.num_classes, self.features.shape[1])

    def _loss_grad(self, x, idx) -> tuple[float, np.ndarray]:
        w = self._weights(x)
        feats = self.features[idx]
        labs = self.labels[idx]
        logits = feats @ w.T
        logits -= logits.max(axis=1, keepdims=True)
        logexp = np.log(np.exp(logits).sum(axis=1))
        loss = float(np.mean(logexp - logits[np.arange(len(labs)), labs]))
        probs = np.exp(logits - logexp[:, None])
        probs[np.arange(len(labs)), labs] -= 1.0
        grad_w = probs.T @ feats / len(labs)
        xv = as_vector(x)
        loss += 0.5 * self.l2_reg * float(np.dot(xv, xv))
        return loss, grad_w.ravel() + self.l2_reg * xv

    def value(self, x) -> float:
        return self._loss_grad(x, np.arange(len(self.labels)))[0]

    def gradient(self, x) -> np.ndarray:
        return self._loss_grad(x, np.arange(len(self.labels)))[1]

    def stochastic_gradient(self, x, rng: RngStream) -> np.ndarray:
        gen = rng.generator()
        idx = gen.integers(0, len(self.labels), size=min(self.batch_size, len(self.labels)))
        return self._loss_grad(x, idx)[1]


@dataclass(frozen=True)
class HonestObjective:
    """The collection {f_i : i honest} plus exact evaluation of their average."""

    objectives: dict  # node id -> objective
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.objectives:
            raise ValueError("at least one honest objective required")
        dims = {o.dim for o in self.objectives.values()}
        if len(dims) != 1:
            raise ValueError("all objectives must share one dimension")

    @property
    def dim(self) -> int:
        return next(iter(self.objectives.values())).dim

    @property
    def node_ids(self) -> list:
        return sorted(self.objectives)

    def _get(self, node):
        try:
            return self.objectives[node]
        except KeyError:
            raise ValueError(f"unknown honest node id {node!r}") from None

    def gradient(self, node, x) -> np.ndarray:
        return self._get(node).gradient(x)

    def stochastic_gradient(self, node, x, rng: RngStream) -> np.ndarray:
        return self._get(node).stochastic_gradient(x, rng)

    def value(self, x) -> float:
        return float(np.mean([o.value(x) for o in self.objectives.values()]))

    def global_gradient(self, x) -> np.ndarray:
        grads = [o.gradient(x) for o in self.objectives.values()]
        return np.mean(grads, axis=0)

    def heterogeneity_at(self, x) -> float:
        """(1/|H|) sum_i ||grad f_i(x) - grad F_H(x)||^2 at one point."""
        grads = np.stack([o.gradient(x) for o in self.objectives.values()])
        dev = grads - grads.mean(axis=0)
        return float(np.mean(np.sum(dev * dev, axis=1)))

    def measure_constants(self, probes, rng: RngStream, noise_draws: int = 200):
        """Empirical (L, sigma^2, G^2) estimates over the given probe points.

        L: max gradient-Lipschitz ratio over probe pairs and nodes.
        sigma^2: gradient-noise variance via repeated stochastic draws.
        G^2: max over probes of the heterogeneity at that probe.
        """
        probes = [as_vector(p) for p in probes]
        if len(probes) < 2:
            raise ValueError("need at least 2 probe points")
        l_est = 0.0
        for node, obj in self.objectives.items():
            grads = [obj.gradient(p) for p in probes]
            for a in range(len(probes)):
                for b in range(a + 1, len(probes)):
                    dx = np.linalg.norm(probes[a] - probes[b])
                    if dx > 0:
                        l_est = max(l_est, np.linalg.norm(grads[a] - grads[b]) / dx)
        g2_est = max(self.heterogeneity_at(p) for p in probes)
        sig_terms = []
        for k, p in enumerate(probes):
            for node in self.node_ids:
                exact = self.gradient(node, p)
                draws = np.stack([
                    self.stochastic_gradient(node, p, rng.substream(k, node, j))
                    for j in range(noise_draws)
                ])
                dev = draws - exact
                sig_terms.append(np.mean(np.sum(dev * dev, axis=1)))
        return float(l_est), float(np.mean(sig_terms)), float(g2_est)


def make_quadratic_family(
    num_honest: int,
    dim: int,
    rng: RngStream,
    mu: float = 1.0,
    lipschitz: float = 1.0,
    minimizer_spread: float = 1.0,
    noise_sigma: float = 0.0,
) -> HonestObjective:
    """Quadratics with one shared curvature and spread-out minimizers.

    Sharing the curvature keeps the heterogeneity uniformly bounded over
    all x, matching the bounded-heterogeneity assumption exactly; the
    resulting G^2 = (1/|H|) sum_i ||A (theta_i - theta_bar)||^2 is recorded
    in the metadata.
    """
    if not 0 < mu <= lipschitz:
        raise ValueError("need 0 < mu <= lipschitz")
    gen = rng.substream("quad-family").generator()
    if mu == lipschitz:
        curv = np.full(dim, lipschitz)
    else:
        curv = gen.uniform(mu, lipschitz, size=dim)
        curv[0] = lipschitz  # pin the extremes so L and mu are exact
        if dim > 1:
            curv[1] = mu
    thetas = gen.normal(0.0, minimizer_spread, size=(num_honest, dim))
    theta_bar = thetas.mean(axis=0)
    dev = curv * (thetas - theta_bar)
    g2 = float(np.mean(np.sum(dev * dev, axis=1)))
    objs = {
        i: QuadraticObjective(thetas[i], curv, noise_sigma) for i in range(num_honest)
    }
    meta = {
        "family": "quadratic",
        "L": float(lipschitz),
        "mu": float(mu),
        "sigma2": float(noise_sigma**2),
        "G2": g2,
    }
    return HonestObjective(objs, meta)


def make_blob_pool(
    rng: RngStream,
    pool_size: int = 10_000,
    num_classes: int = 10,
    feat_dim: int = 20,
    class_sep: float = 3.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-blob classification pool: one unit-noise cluster per class."""
    gen = rng.substream("blob-pool").generator()
    centers = gen.normal(0.0, class_sep, size=(num_classes, feat_dim))
    labels = gen.integers(0, num_classes, size=pool_size)
    feats = centers[labels] + gen.normal(0.0, 1.0, size=(pool_size, feat_dim))
    return feats, labels


def dirichlet_partition(
    labels: np.ndarray,
    num_nodes: int,
    alpha: float,
    rng: RngStream,
) -> list[np.ndarray]:
    """Split pool indices across nodes with Dirichlet(alpha) class proportions.

    Smaller alpha gives more heterogeneous per-node class mixtures. Each
    class's samples are distributed to nodes proportionally to the nodes'
    (renormalized) Dirichlet weights for that class.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    labels = np.asarray(labels)
    num_classes = int(labels.max()) + 1
    gen = rng.substream("dirichlet").generator()
    props = gen.dirichlet(np.full(num_classes, alpha), size=num_nodes)  # (nodes, classes)
    parts: list[list[int]] = [[] for _ in range(num_nodes)]
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        gen.shuffle(idx)
        w = props[:, c]
        w = w / w.sum()
        counts = np.floor(w * len(idx)).astype(int)
        # hand out the remainder to the largest weights
        rem = len(idx) - counts.sum()
        if rem > 0:
            counts[np.argsort(-w)[:rem]] += 1
        pos = 0
        for node in range(num_nodes):
            parts[node].extend(idx[pos : pos + counts[node]])
            pos += counts[node]
    out = []
    for node in range(num_nodes):
        part = np.asarray(sorted(parts[node]), dtype=np.int64)
        if part.size == 0:
            # every node needs data; steal one sample from the largest share
            donor = max(range(num_nodes), key=lambda k: len(parts[k]))
            part = np.asarray([parts[donor].pop()], dtype=np.int64)
        out.append(part)
    return out


def make_classification_family(
    num_honest: int,
    rng: RngStream,
    dirichlet_alpha: float = 1.0,
    pool_size: int = 10_000,
    num_classes: int = 10,
    feat_dim: int = 20,
    l2_reg: float = 1e-4,
    batch_size: int = 32,
) -> HonestObjective:
    """Dirichlet-heterogeneous logistic regression objectives on a shared pool."""
    feats, labels = make_blob_pool(rng, pool_size, num_classes, feat_dim)
    parts = dirichlet_partition(labels, num_honest, dirichlet_alpha, rng)
    objs = {
        i: ClassificationObjective(
            feats[parts[i]], labels[parts[i]], num_classes, l2_reg, batch_size
        )
        for i in range(num_honest)
    }
    meta = {
        "family": "classification",
        "dirichlet_alpha": float(dirichlet_alpha),
        "num_classes": num_classes,
        "feat_dim": feat_dim,
    }
    return HonestObjective(objs, meta)
