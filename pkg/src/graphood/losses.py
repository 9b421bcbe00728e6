"""Training objectives.

Every loss is assembled from :mod:`graphood.tensor` operations, so its
gradient comes from the tape. The two variance regularisers also have
closed-form gradients (:func:`bound_loss_grad`, :func:`uniform_loss_grad`)
that are written out term by term, without relying on the tape, and serve
as the independent check of the autodiff path.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional

import numpy as np

from . import tensor as T
from .config import RunConfig
from .energy import propagate_tensor
from .errors import MissingMaskError
from .graph import GraphDataset

logger = logging.getLogger(__name__)

SUM_FLOOR = 1e-8


def node_index(node_set, n: Optional[int] = None) -> np.ndarray:
    """Sorted unique node ids from a boolean mask or an index array."""
    a = np.asarray(node_set)
    if a.dtype == bool:
        if n is not None and a.shape != (n,):
            raise ValueError(f"mask of length {a.shape[0]} for {n} nodes")
        return np.flatnonzero(a)
    return np.unique(a.astype(np.int64).ravel())


def _values(z) -> np.ndarray:
    return z.values if isinstance(z, T.Tensor) else np.asarray(z, dtype=np.float64)


def _const(x: float) -> T.Tensor:
    return T.Tensor(np.array([[float(x)]]))


@dataclasses.dataclass
class LossBreakdown:
    nll: float = 0.0
    reg: float = 0.0
    bound: float = 0.0
    uniform: float = 0.0
    ub: float = 0.0
    total: float = 0.0
    alpha: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    tensor: Optional[T.Tensor] = dataclasses.field(default=None, repr=False)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("tensor")
        return d


# --------------------------------------------------------------------------
# Supervised terms


def nll_loss(z: T.Tensor, labels, train_mask) -> T.Tensor:
    return T.softmax_cross_entropy(z, labels, train_mask)


def logitnorm_loss(z: T.Tensor, labels, mask, tau: float) -> T.Tensor:
    """Cross-entropy on rows rescaled to ``z / (tau * ||z||)``.

    All-zero rows are left at zero instead of dividing by zero.
    """
    norms = T.row_norm2(z)
    zero_rows = (norms.values == 0).astype(np.float64)
    scaled = T.div(z, T.scale(T.add(norms, T.Tensor(zero_rows)), tau))
    return T.softmax_cross_entropy(scaled, labels, mask)


# --------------------------------------------------------------------------
# Energy hinge


def hinge_reg(neg_e_in: T.Tensor, neg_e_out: T.Tensor, m_in: float, m_out: float) -> T.Tensor:
    """Squared hinge on energies ``E = -score``.

    ``mean(max(0, E_in - m_in)^2) + mean(max(0, m_out - E_out)^2)``.
    """
    if neg_e_in.shape[0] == 0 or neg_e_out.shape[0] == 0:
        raise ValueError("hinge_reg needs nonempty ID and OOD node sets")
    over_in = T.relu(T.sub(T.scale(neg_e_in, -1.0), _const(m_in)))
    over_out = T.relu(T.add(neg_e_out, _const(m_out)))
    return T.add(T.mean(T.square(over_in)), T.mean(T.square(over_out)))


# --------------------------------------------------------------------------
# Variance regularisers


def _group_variance_over_mean(stat: T.Tensor, scale: float) -> T.Tensor:
    centred = T.sub(stat, T.mean(stat))
    return T.scale(T.mean(T.square(centred)), 1.0 / scale)


def bound_loss(z: T.Tensor, node_set) -> T.Tensor:
    """Variance of row 2-norms over ``node_set`` divided by their mean.

    The mean in the denominator is detached. All-zero logits give a zero
    loss with zero gradient.
    """
    idx = node_index(node_set, z.shape[0])
    if idx.size == 0:
        raise ValueError("bound_loss: empty node set")
    norms = T.row_norm2(T.take_rows(z, idx))
    m_norm = T.stop_gradient(T.mean(norms)).item()
    if m_norm == 0.0:
        logger.warning("bound_loss: all logits are zero, loss defined as 0")
        return T.scale(T.mean(norms), 0.0)
    centred = T.sub(norms, T.mean(norms))
    return T.div(T.mean(T.square(centred)), T.stop_gradient(T.mean(norms)))


def _uniform_group(z: T.Tensor, idx: np.ndarray) -> T.Tensor:
    sums = T.row_sum(T.take_rows(z, idx))
    m_sum = abs(T.stop_gradient(T.mean(sums)).item())
    if m_sum < SUM_FLOOR:
        logger.warning("uniform_loss: |mean row sum| %.3g clamped to %g", m_sum, SUM_FLOOR)
        m_sum = SUM_FLOOR
    return _group_variance_over_mean(sums, m_sum)


def uniform_loss(z: T.Tensor, id_set, ood_set=None) -> T.Tensor:
    """Variance of row sums over mean |row sum|, per group, summed.

    The OOD group contributes only when ``ood_set`` is nonempty.
    """
    n = z.shape[0]
    id_idx = node_index(id_set, n)
    if id_idx.size == 0:
        raise ValueError("uniform_loss: empty ID node set")
    loss = _uniform_group(z, id_idx)
    if ood_set is not None:
        ood_idx = node_index(ood_set, n)
        if ood_idx.size:
            loss = T.add(loss, _uniform_group(z, ood_idx))
    return loss


def ub_loss(z: T.Tensor, id_set, ood_set, lambda1: float) -> T.Tensor:
    """``lambda1 * uniform + (1 - lambda1) * bound``; bound over both groups."""
    n = z.shape[0]
    id_idx = node_index(id_set, n)
    ood_idx = node_index(ood_set, n) if ood_set is not None else np.zeros(0, dtype=np.int64)
    both = np.union1d(id_idx, ood_idx)
    return T.add(
        T.scale(uniform_loss(z, id_idx, ood_idx), lambda1),
        T.scale(bound_loss(z, both), 1.0 - lambda1),
    )


def _variance_stat_grad(stat: np.ndarray, scale: float) -> np.ndarray:
    """d/d stat_v of ``mean((stat - mean(stat))^2) / scale``, expanded term by term."""
    V = stat.size
    mu = stat.sum() / V
    dev = stat - mu
    own = 2.0 * dev * (1.0 - 1.0 / V)
    others = (2.0 * dev.sum() - 2.0 * dev) * (-1.0 / V)
    return (own + others) / (scale * V)


def bound_loss_grad(z, node_set) -> np.ndarray:
    """Closed-form gradient of :func:`bound_loss` with respect to all logits."""
    zv = _values(z)
    idx = node_index(node_set, zv.shape[0])
    rows = zv[idx]
    norms = np.sqrt((rows * rows).sum(axis=1))
    grad = np.zeros_like(zv)
    m_norm = norms.mean()
    if m_norm == 0.0:
        return grad
    d_norm = _variance_stat_grad(norms, m_norm)
    safe = np.where(norms > 0, norms, 1.0)
    d_rows = np.where(norms[:, None] > 0, rows / safe[:, None], 0.0) * d_norm[:, None]
    grad[idx] = d_rows
    return grad


def uniform_loss_grad(z, id_set, ood_set=None) -> np.ndarray:
    """Closed-form gradient of :func:`uniform_loss` with respect to all logits."""
    zv = _values(z)
    n = zv.shape[0]
    grad = np.zeros_like(zv)
    groups = [node_index(id_set, n)]
    if ood_set is not None:
        groups.append(node_index(ood_set, n))
    for idx in groups:
        if idx.size == 0:
            continue
        sums = zv[idx].sum(axis=1)
        scale = max(abs(sums.mean()), SUM_FLOOR)
        # each logit enters its row sum with coefficient one
        grad[idx] += _variance_stat_grad(sums, scale)[:, None]
    return grad


# --------------------------------------------------------------------------
# Full objective


def regularizer_groups(graph: GraphDataset, config: RunConfig):
    """Node ids of the ID and OOD groups used by the variance regularisers."""
    expose = np.flatnonzero(graph.expose_ood) if config.uses_exposure else np.zeros(0, dtype=np.int64)
    if config.ub_over_all_nodes:
        id_idx = np.flatnonzero(~graph.expose_ood) if config.uses_exposure else np.arange(graph.num_nodes)
    else:
        id_idx = np.flatnonzero(graph.train)
    return id_idx, expose


def total_loss(z: T.Tensor, graph: GraphDataset, config: RunConfig, epoch: int) -> LossBreakdown:
    """Compose the method's objective and report each term.

    ``total = nll + alpha*reg + lambda2*(lambda1*uniform + (1-lambda1)*bound)``
    with inactive terms reported as exactly 0. The variance term switches on
    at ``config.ub_start_epoch``.
    """
    spec = config.spec
    out = LossBreakdown(alpha=config.alpha, lambda1=config.lambda1, lambda2=config.lambda2)
    if spec.loss == "logitnorm":
        sup = logitnorm_loss(z, graph.labels, graph.train, config.tau)
    else:
        sup = nll_loss(z, graph.labels, graph.train)
    out.nll = sup.item()
    loss = sup

    if config.uses_exposure and not graph.expose_ood.any():
        raise MissingMaskError(f"method {config.method!r} needs exposed OOD nodes but expose_ood is empty")

    if spec.reg:
        scores = T.row_logsumexp(z)
        if config.reg_on_propagated and spec.score == "propagated":
            scores = propagate_tensor(scores, graph, config.eta, config.hops)
        reg = hinge_reg(
            T.take_rows(scores, np.flatnonzero(graph.train)),
            T.take_rows(scores, np.flatnonzero(graph.expose_ood)),
            config.m_in,
            config.m_out,
        )
        out.reg = reg.item()
        loss = T.add(loss, T.scale(reg, config.alpha))

    if spec.ub and epoch >= config.ub_start_epoch:
        id_idx, ood_idx = regularizer_groups(graph, config)
        both = np.union1d(id_idx, ood_idx)
        uni = uniform_loss(z, id_idx, ood_idx) if config.lambda1 > 0 else None
        bnd = bound_loss(z, both) if config.lambda1 < 1 else None
        out.uniform = uni.item() if uni is not None else 0.0
        out.bound = bnd.item() if bnd is not None else 0.0
        parts = []
        if uni is not None:
            parts.append(T.scale(uni, config.lambda1))
        if bnd is not None:
            parts.append(T.scale(bnd, 1.0 - config.lambda1))
        ub = parts[0] if len(parts) == 1 else T.add(*parts)
        out.ub = ub.item()
        loss = T.add(loss, T.scale(ub, config.lambda2))

    out.total = loss.item()
    out.tensor = loss
    return out
