"""Detection scores, score propagation and the threshold rule.

Scores follow the "higher means more in-distribution" convention: the
energy score of a node is ``logsumexp(z_v)``, the negated energy.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Union

import numpy as np

from . import tensor as T
from .graph import GraphDataset, propagation_operator

RAW = "raw-energy"
PROPAGATED = "propagated-energy"
MSP = "msp"


@dataclasses.dataclass(frozen=True)
class ScoreVector:
    values: np.ndarray
    kind: str = RAW
    hops: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def _logits(z) -> np.ndarray:
    v = z.values if isinstance(z, T.Tensor) else np.asarray(z, dtype=np.float64)
    return v.reshape(1, -1) if v.ndim == 1 else v


def negative_energy(z) -> ScoreVector:
    return ScoreVector(T.row_logsumexp(T.Tensor(_logits(z))).values[:, 0], RAW)


def msp_score(z) -> ScoreVector:
    """Maximum softmax probability, ``exp(max_c z_c - logsumexp(z))``."""
    v = _logits(z)
    lse = T.row_logsumexp(T.Tensor(v)).values[:, 0]
    return ScoreVector(np.exp(v.max(axis=1) - lse), MSP)


def _operator(g: Union[GraphDataset, T.SparseMatrix]) -> T.SparseMatrix:
    if isinstance(g, GraphDataset):
        return g.propagation_operator
    return propagation_operator(g)


def _check_eta(eta: float, hops: int):
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if hops < 0:
        raise ValueError(f"hops must be non-negative, got {hops}")


def propagate(s: ScoreVector, g, eta: float, hops: int) -> ScoreVector:
    """Apply ``s <- eta*s + (1-eta) D^-1 A s`` ``hops`` times.

    ``g`` is a :class:`GraphDataset` or its adjacency matrix. Isolated
    nodes keep their score.
    """
    _check_eta(eta, hops)
    P = _operator(g)
    adj = g.adjacency if isinstance(g, GraphDataset) else g
    iso = adj.row_sums() == 0
    cur = s.values.reshape(-1, 1)
    for _ in range(hops):
        nxt = eta * cur + (1.0 - eta) * P.dot(cur)
        nxt[iso] = cur[iso]  # exact, not eta*s + (1-eta)*s
        cur = nxt
    return ScoreVector(cur[:, 0], PROPAGATED, s.hops + hops)


def propagate_tensor(s: T.Tensor, g, eta: float, hops: int) -> T.Tensor:
    """Differentiable twin of :func:`propagate` for an ``n x 1`` tensor."""
    _check_eta(eta, hops)
    P = _operator(g)
    for _ in range(hops):
        s = T.add(T.scale(s, eta), T.scale(T.spmm(P, s), 1.0 - eta))
    return s


def threshold_at_tpr(id_scores, tpr: float = 0.95) -> float:
    """Largest threshold that still accepts at least ``ceil(tpr * n)`` ID scores."""
    s = np.sort(np.asarray(getattr(id_scores, "values", id_scores), dtype=np.float64).ravel())
    n = s.size
    if n == 0:
        raise ValueError("threshold_at_tpr: no ID scores")
    if not 0.0 <= tpr <= 1.0:
        raise ValueError(f"tpr must lie in [0, 1], got {tpr}")
    # tolerance guards products such as 0.95 * 20 landing a hair above 19
    need = min(n, math.ceil(tpr * n - 1e-9))
    return float(s[n - need]) if need > 0 else float(s[-1])


def decide(s, gamma: float) -> np.ndarray:
    """Boolean vector, True where the node is classified in-distribution."""
    v = np.asarray(getattr(s, "values", s), dtype=np.float64).ravel()
    return v >= gamma
