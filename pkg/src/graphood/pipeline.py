"""Training, scoring and evaluation shared by the CLI and the test-suite."""

from __future__ import annotations

import dataclasses
import logging
from typing import Iterable, Optional

import numpy as np

from . import tensor as T
from .config import RunConfig
from .energy import ScoreVector, msp_score, negative_energy, propagate
from .errors import MissingMaskError
from .graph import GraphDataset
from .losses import total_loss
from .metrics import DetectionResult, evaluate_detection, id_accuracy
from .model import ModelParams, adam_step, forward, init_model, logits
from .oodgen import OodSpec, SbmConfig, generate_sbm, make_ood

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "total", "nll", "reg", "bound", "uniform", "ub", "val_loss", "train_acc", "val_acc")


@dataclasses.dataclass
class TrainState:
    params: ModelParams
    epoch: int
    seed: int
    best: ModelParams
    best_epoch: int
    best_val_loss: float
    log: list = dataclasses.field(default_factory=list)


def check_masks(graph: GraphDataset, config: RunConfig, *, need_test: bool = False) -> None:
    if not graph.train.any():
        raise MissingMaskError("dataset has no training nodes")
    if not graph.val.any():
        raise MissingMaskError("dataset has no validation nodes")
    if config.uses_exposure and not graph.expose_ood.any():
        raise MissingMaskError(f"method {config.method!r} needs exposed OOD nodes but expose_ood is empty")
    if need_test and not (graph.test_id.any() and graph.test_ood.any()):
        raise MissingMaskError("evaluation needs nonempty test_id and test_ood masks")


def validation_loss(params: ModelParams, graph: GraphDataset) -> float:
    z = forward(params, graph)
    return T.softmax_cross_entropy(z, graph.labels, graph.val).item()


def snapshot_start(config: RunConfig) -> int:
    """First epoch eligible for the best-validation snapshot.

    Methods with the variance term only compete once that term is active,
    otherwise the snapshot could be a model that never saw it.
    """
    if config.spec.ub:
        return min(config.ub_start_epoch, config.epochs - 1)
    return 0


def train(graph: GraphDataset, config: RunConfig) -> TrainState:
    """Full-batch training; keeps the parameters with the lowest validation NLL."""
    check_masks(graph, config)
    start = snapshot_start(config)
    params = init_model(graph.num_features, config.hidden, graph.num_classes, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    best, best_epoch, best_val = params, -1, np.inf
    log = []
    for epoch in range(config.epochs):
        tape = T.Tape()
        leaves = params.leaves(tape)
        z = forward(params, graph, leaves, dropout=config.dropout, rng=rng)
        parts = total_loss(z, graph, config, epoch)
        tape.backward(parts.tensor)
        params = adam_step(
            params, {k: t.grad for k, t in leaves.items()}, config.lr, weight_decay=config.weight_decay
        )

        z_eval = logits(params, graph)
        val = T.softmax_cross_entropy(T.Tensor(z_eval), graph.labels, graph.val).item()
        row = {"epoch": epoch, **{k: getattr(parts, k) for k in LOG_COLUMNS[1:7]}, "val_loss": val}
        row["train_acc"] = id_accuracy(z_eval, graph.labels, graph.train)
        row["val_acc"] = id_accuracy(z_eval, graph.labels, graph.val)
        log.append(row)
        if epoch >= start and val < best_val:
            best, best_epoch, best_val = params, epoch, val
        logger.debug("epoch %d total %.4f val %.4f", epoch, parts.total, val)
    return TrainState(params, config.epochs, config.seed, best, best_epoch, best_val, log)


def score_nodes(z: np.ndarray, graph: GraphDataset, config: RunConfig) -> ScoreVector:
    kind = config.spec.score
    if kind == "msp":
        return msp_score(z)
    raw = negative_energy(z)
    if kind == "raw":
        return raw
    return propagate(raw, graph, config.eta, config.hops)


@dataclasses.dataclass
class Evaluation:
    result: DetectionResult
    scores: ScoreVector
    logits: np.ndarray


def evaluate(params: ModelParams, graph: GraphDataset, config: RunConfig) -> Evaluation:
    check_masks(graph, config, need_test=True)
    z = logits(params, graph)
    scores = score_nodes(z, graph, config)
    acc = id_accuracy(z, graph.labels, graph.test_id)
    result = evaluate_detection(scores.values[graph.test_id], scores.values[graph.test_ood], acc, config.tpr)
    return Evaluation(result, scores, z)


def run(graph: GraphDataset, config: RunConfig) -> Evaluation:
    state = train(graph, config)
    return evaluate(state.best, graph, config)


def histogram(id_scores, ood_scores, bins: int = 50) -> list:
    """Rows ``(bin_left, bin_right, count_id, count_ood)`` over a shared range."""
    a = np.asarray(id_scores, dtype=np.float64)
    b = np.asarray(ood_scores, dtype=np.float64)
    both = np.concatenate([a, b])
    lo, hi = both.min(), both.max()
    eps = 1e-9 * max(1.0, hi - lo, abs(lo), abs(hi))
    edges = np.linspace(lo - eps, hi + eps, bins + 1)
    ca, _ = np.histogram(a, edges)
    cb, _ = np.histogram(b, edges)
    return [(float(edges[i]), float(edges[i + 1]), int(ca[i]), int(cb[i])) for i in range(bins)]


def benchmark_dataset(
    seed: int,
    *,
    sbm: Optional[SbmConfig] = None,
    kind: str = "structure",
    frac_ood: float = 0.2,
    expose_fraction: float = 0.5,
    cross_fraction: Optional[float] = None,
) -> GraphDataset:
    """The desk-scale benchmark: a 4 x 150 SBM with structure-manipulation OOD."""
    cfg = dataclasses.replace(sbm or SbmConfig(), seed=seed)
    base = generate_sbm(cfg)
    return make_ood(
        base,
        OodSpec(
            kind=kind, frac_ood=frac_ood, expose_fraction=expose_fraction, cross_fraction=cross_fraction, seed=seed
        ),
    )


def compare(graph: GraphDataset, methods: Iterable[str], seeds: Iterable[int], base: RunConfig) -> dict:
    """Run every (method, seed) cell; returns ``{method: [DetectionResult, ...]}``."""
    out = {}
    for method in methods:
        out[method] = [run(graph, base.replace(method=method, seed=s)).result for s in seeds]
    return out


def summarize(results: dict) -> list:
    """Mean and population std per method for the four headline metrics."""
    rows = []
    for method, cells in results.items():
        row = {"method": method, "runs": len(cells)}
        for key in ("auroc", "aupr", "fpr95", "id_accuracy"):
            vals = np.array([getattr(c, key) for c in cells])
            row[f"{key}_mean"] = float(vals.mean())
            row[f"{key}_std"] = float(vals.std())
        rows.append(row)
    return rows
