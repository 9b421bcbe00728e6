"""Seeded synthetic graphs and OOD constructions.

All generators are pure functions of their inputs and seed. OOD nodes get
label -1 and the ``test_ood`` role, except for an ``expose_fraction`` share
that becomes ``expose_ood`` (training-time exposure).
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .graph import MASK_NAMES, GraphDataset

OOD_KINDS = ("structure", "feature", "label-leave-out")


@dataclasses.dataclass(frozen=True)
class SbmConfig:
    num_blocks: int = 4
    nodes_per_block: int = 150
    p_in: float = 0.05
    p_out: float = 0.005
    feature_dim: int = 16
    class_mean_scale: float = 1.0
    feature_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_blocks < 1 or self.nodes_per_block < 1 or self.feature_dim < 1:
            raise ConfigError("num_blocks, nodes_per_block and feature_dim must be positive")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ConfigError("need 0 <= p_out <= p_in <= 1")
        if self.class_mean_scale < 0 or self.feature_noise < 0:
            raise ConfigError("class_mean_scale and feature_noise must be non-negative")


@dataclasses.dataclass(frozen=True)
class OodSpec:
    kind: str
    frac_ood: float = 0.2
    avg_degree: Optional[float] = None
    cross_fraction: Optional[float] = None
    lambda_interp: float = 0.5
    random_lambda: bool = False
    held_out_classes: tuple = ()
    expose_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in OOD_KINDS:
            raise ConfigError(f"unknown OOD kind {self.kind!r}; choose from {', '.join(OOD_KINDS)}")
        if not 0.0 <= self.expose_fraction <= 1.0:
            raise ConfigError("expose_fraction must lie in [0, 1]")
        object.__setattr__(self, "held_out_classes", tuple(int(c) for c in self.held_out_classes))


def _split_counts(size: int):
    """Train/val/test sizes in ratio 1:1:8 for one class."""
    n_train = max(1, int(round(size / 10)))
    n_val = min(max(1, int(round(size / 10))), size - n_train)
    return n_train, n_val, size - n_train - n_val


def generate_sbm(cfg: SbmConfig) -> GraphDataset:
    rng = np.random.default_rng(cfg.seed)
    C, b, d = cfg.num_blocks, cfg.nodes_per_block, cfg.feature_dim
    n = C * b
    labels = np.repeat(np.arange(C), b)

    directions = rng.standard_normal((C, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = cfg.class_mean_scale * directions
    features = means[labels] + cfg.feature_noise * rng.standard_normal((n, d))

    src, dst = np.triu_indices(n, k=1)
    prob = np.where(labels[src] == labels[dst], cfg.p_in, cfg.p_out)
    keep = rng.random(src.size) < prob
    edges = np.stack([src[keep], dst[keep]], axis=1)

    masks = {name: np.zeros(n, dtype=bool) for name in MASK_NAMES}
    for c in range(C):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_tr, n_va, _ = _split_counts(members.size)
        masks["train"][members[:n_tr]] = True
        masks["val"][members[n_tr:n_tr + n_va]] = True
        masks["test_id"][members[n_tr + n_va:]] = True

    return GraphDataset(num_classes=C, edges=edges, features=features, labels=labels, **masks)


def _ood_roles(g_masks: dict, ood_ids: np.ndarray, expose_fraction: float, rng) -> dict:
    masks = {k: v.copy() for k, v in g_masks.items()}
    for k in masks:
        masks[k][ood_ids] = False
    order = rng.permutation(ood_ids)
    n_expose = int(round(expose_fraction * order.size))
    masks["expose_ood"][order[:n_expose]] = True
    masks["test_ood"][order[n_expose:]] = True
    return masks


def _check_frac(frac_ood: float):
    if not 0.0 < frac_ood < 1.0:
        raise ConfigError(f"frac_ood must lie in (0, 1), got {frac_ood}")


def structure_manipulation(
    g: GraphDataset,
    frac_ood: float,
    avg_degree: Optional[float] = None,
    seed: int = 0,
    expose_fraction: float = 0.0,
    cross_fraction: Optional[float] = None,
) -> GraphDataset:
    """Append ``ceil(frac_ood * n)`` randomly wired nodes with copied features.

    New nodes are wired by a two-block Erdos-Renyi process: a new node's
    expected degree is ``avg_degree`` (default: the mean degree of ``g``), of
    which a ``cross_fraction`` share goes to original nodes and the rest to
    other new nodes. ``cross_fraction=None`` wires every candidate pair with
    the same probability. Existing edges among original nodes are untouched.
    """
    _check_frac(frac_ood)
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    m = math.ceil(frac_ood * n)
    if avg_degree is None:
        avg_degree = 2.0 * len(g.edges) / n
    if avg_degree < 0:
        raise ConfigError("avg_degree must be non-negative")
    total = n + m
    if cross_fraction is None:
        p_new = p_cross = min(1.0, avg_degree / (total - 1)) if total > 1 else 0.0
    else:
        if not 0.0 <= cross_fraction <= 1.0:
            raise ConfigError("cross_fraction must lie in [0, 1]")
        p_cross = min(1.0, cross_fraction * avg_degree / n)
        p_new = min(1.0, (1.0 - cross_fraction) * avg_degree / (m - 1)) if m > 1 else 0.0

    sources = rng.integers(0, n, size=m)
    features = np.vstack([g.features, g.features[sources]])

    new = np.arange(n, total)
    a_nn, b_nn = np.triu_indices(m, k=1)
    pairs_nn = np.stack([new[a_nn], new[b_nn]], axis=1)
    old, nw = np.meshgrid(np.arange(n), new, indexing="ij")
    pairs_on = np.stack([old.ravel(), nw.ravel()], axis=1)
    pairs = np.vstack([pairs_nn, pairs_on])
    prob = np.r_[np.full(len(pairs_nn), p_new), np.full(len(pairs_on), p_cross)]
    keep = rng.random(pairs.shape[0]) < prob
    edges = np.vstack([g.edges, pairs[keep]])

    labels = np.concatenate([g.labels, -np.ones(m, dtype=np.int64)])
    masks = {k: np.concatenate([v, np.zeros(m, dtype=bool)]) for k, v in g.masks.items()}
    masks = _ood_roles(masks, new, expose_fraction, rng)
    return GraphDataset(num_classes=g.num_classes, edges=edges, features=features, labels=labels, **masks)


def feature_interpolation(
    g: GraphDataset,
    frac_ood: float,
    lambda_interp: float = 0.5,
    seed: int = 0,
    random_lambda: bool = False,
    expose_fraction: float = 0.0,
) -> GraphDataset:
    """Turn sampled test nodes into OOD nodes with mixed features.

    Each chosen node gets ``lam * x_u + (1 - lam) * x_v`` for original nodes
    ``u``, ``v`` drawn uniformly; ``lam`` is fixed or, with ``random_lambda``,
    drawn from U(0, 1) per node. The graph structure is unchanged.
    """
    _check_frac(frac_ood)
    if not 0.0 <= lambda_interp <= 1.0:
        raise ConfigError("lambda_interp must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    m = math.ceil(frac_ood * n)
    pool = np.flatnonzero(g.test_id)
    if m > pool.size:
        raise ConfigError(f"need {m} OOD nodes but only {pool.size} test_id nodes exist")
    chosen = np.sort(rng.choice(pool, size=m, replace=False))
    u = rng.integers(0, n, size=m)
    v = rng.integers(0, n, size=m)
    lam = rng.random(m) if random_lambda else np.full(m, lambda_interp)

    features = g.features.copy()
    features[chosen] = lam[:, None] * g.features[u] + (1.0 - lam[:, None]) * g.features[v]
    labels = g.labels.copy()
    labels[chosen] = -1
    masks = _ood_roles(g.masks, chosen, expose_fraction, rng)
    return g.replace(features=features, labels=labels, **masks)


def label_leave_out(
    g: GraphDataset,
    held_out_classes: Sequence[int],
    seed: int = 0,
    expose_fraction: float = 0.0,
) -> GraphDataset:
    """Make every node of the held-out classes OOD and relabel the rest densely."""
    held = sorted(set(int(c) for c in held_out_classes))
    C = g.num_classes
    if not held:
        raise ConfigError("held_out_classes must not be empty")
    if any(c < 0 or c >= C for c in held):
        raise ConfigError(f"held-out classes must lie in [0, {C})")
    if len(held) == C:
        raise ConfigError("cannot hold out every class")
    rng = np.random.default_rng(seed)
    kept = [c for c in range(C) if c not in held]
    relabel = np.full(C, -1, dtype=np.int64)
    relabel[kept] = np.arange(len(kept))

    labels = np.where(g.labels >= 0, relabel[np.maximum(g.labels, 0)], -1)
    ood = np.flatnonzero(np.isin(g.labels, held))
    masks = _ood_roles(g.masks, ood, expose_fraction, rng)
    return g.replace(num_classes=len(kept), labels=labels, **masks)


def make_ood(g: GraphDataset, spec: OodSpec) -> GraphDataset:
    if spec.kind == "structure":
        return structure_manipulation(
            g, spec.frac_ood, spec.avg_degree, spec.seed, spec.expose_fraction, spec.cross_fraction
        )
    if spec.kind == "feature":
        return feature_interpolation(
            g, spec.frac_ood, spec.lambda_interp, spec.seed, spec.random_lambda, spec.expose_fraction
        )
    return label_leave_out(g, spec.held_out_classes, spec.seed, spec.expose_fraction)
