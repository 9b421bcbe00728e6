"""Two-layer GCN encoder and its Adam optimiser."""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import NumericalError, ShapeError
from .graph import GraphDataset

PARAM_NAMES = ("W0", "b0", "W1", "b1")
WEIGHTS = ("W0", "W1")


@dataclasses.dataclass
class ModelParams:
    W0: np.ndarray
    b0: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    m: dict = dataclasses.field(default_factory=dict)
    v: dict = dataclasses.field(default_factory=dict)
    step: int = 0

    @property
    def dims(self):
        return self.W0.shape[0], self.W0.shape[1], self.W1.shape[1]

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def leaves(self, tape: T.Tape) -> dict:
        """Register each parameter as a leaf of ``tape``.

        Biases become ``1 x width`` rows so they broadcast over nodes.
        """
        return {k: tape.leaf(_as_2d(k, getattr(self, k))) for k in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(
            **{k: getattr(self, k).copy() for k in PARAM_NAMES},
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            step=self.step,
        )


def _as_2d(name: str, a: np.ndarray) -> np.ndarray:
    return a.reshape(1, -1) if name.startswith("b") else a


def init_model(d: int, h: int, C: int, seed: int) -> ModelParams:
    """Glorot-uniform weights drawn from ``default_rng(seed)``, zero biases."""
    if min(d, h, C) <= 0:
        raise ValueError(f"dimensions must be positive, got d={d}, h={h}, C={C}")
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_in, fan_out))

    return ModelParams(W0=glorot(d, h), b0=np.zeros(h), W1=glorot(h, C), b1=np.zeros(C))


def forward(
    params: ModelParams,
    graph: GraphDataset,
    leaves: Optional[dict] = None,
    *,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> T.Tensor:
    """Logits ``A relu(A X W0 + b0) W1 + b1`` with ``A`` the GCN operator.

    Pass ``leaves`` from :meth:`ModelParams.leaves` to record on a tape;
    otherwise the parameters enter as constants. Dropout on the hidden layer
    is applied only when ``dropout > 0`` and an ``rng`` is supplied.
    """
    d, h, C = params.dims
    if graph.num_features != d:
        raise ShapeError(f"model expects {d} features, dataset has {graph.num_features}")
    if leaves is None:
        leaves = {k: T.Tensor(_as_2d(k, a)) for k, a in params.arrays().items()}
    A = graph.gcn_operator
    X = T.Tensor(graph.features)
    hidden = T.relu(T.add(T.spmm(A, T.matmul(X, leaves["W0"])), leaves["b0"]))
    if dropout > 0.0 and rng is not None:
        keep = (rng.random(hidden.shape) >= dropout) / (1.0 - dropout)
        hidden = T.mul(hidden, T.Tensor(keep))
    return T.add(T.spmm(A, T.matmul(hidden, leaves["W1"])), leaves["b1"])


def logits(params: ModelParams, graph: GraphDataset) -> np.ndarray:
    return forward(params, graph).values.copy()


def adam_step(
    params: ModelParams,
    grads: dict,
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 5e-4,
) -> ModelParams:
    """One Adam update with decoupled weight decay on W0 and W1.

    Returns a new :class:`ModelParams`; the input is left untouched.
    """
    for k in PARAM_NAMES:
        g = np.asarray(grads[k])
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {k}")

    out = params.copy()
    out.step += 1
    t = out.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k in PARAM_NAMES:
        w = getattr(out, k)
        g = np.asarray(grads[k], dtype=np.float64).reshape(w.shape)
        m = out.m.get(k, np.zeros_like(w))
        v = out.v.get(k, np.zeros_like(w))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        if k in WEIGHTS:
            w = w - lr * weight_decay * w
        w = w - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        out.m[k], out.v[k] = m, v
        setattr(out, k, w)
    return out
