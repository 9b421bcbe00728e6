"""Graph datasets, adjacency normalisations and the directory format.

A dataset directory holds five UTF-8 text files::

    graph.json     {"num_nodes": n, "num_features": d, "num_classes": C}
    edges.csv      one "src,dst" pair per line, 0-indexed, undirected
    features.csv   n lines of d comma-separated floats
    labels.csv     n lines, one integer in {-1} or [0, C)
    masks.csv      header "train,val,test_id,test_ood,expose_ood", n rows of 0/1
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from functools import cached_property
from typing import Union

import numpy as np

from .errors import (
    DatasetError,
    DimensionMismatchError,
    EdgeError,
    LabelRangeError,
    MaskError,
    MissingFileError,
)
from .tensor import SparseMatrix

logger = logging.getLogger(__name__)

MASK_NAMES = ("train", "val", "test_id", "test_ood", "expose_ood")
FILES = ("graph.json", "edges.csv", "features.csv", "labels.csv", "masks.csv")


def _canonical_edges(edges, n: int) -> np.ndarray:
    """Sorted ``(min, max)`` pairs; rejects self-loops, duplicates, bad ids."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if e.min() < 0 or e.max() >= n:
        raise EdgeError(f"edge endpoint out of range [0, {n})")
    if np.any(e[:, 0] == e[:, 1]):
        i = int(np.argmax(e[:, 0] == e[:, 1]))
        raise EdgeError(f"self-loop on node {e[i, 0]}")
    e = np.sort(e, axis=1)
    e = e[np.lexsort((e[:, 1], e[:, 0]))]
    dup = np.all(np.diff(e, axis=0) == 0, axis=1)
    if dup.any():
        i = int(np.argmax(dup))
        raise EdgeError(f"duplicate edge {e[i, 0]}-{e[i, 1]}")
    return e


@dataclasses.dataclass(frozen=True, eq=False)
class GraphDataset:
    """An undirected, unweighted graph with node features, labels and roles.

    ``labels`` uses -1 for unlabeled/OOD nodes. The five boolean masks are
    mutually exclusive; a node may carry no role at all.
    """

    num_classes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test_id: np.ndarray
    test_ood: np.ndarray
    expose_ood: np.ndarray

    def __post_init__(self):
        n = self.features.shape[0]
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("features", np.asarray(self.features, dtype=np.float64))
        set_("labels", np.asarray(self.labels, dtype=np.int64))
        set_("edges", _canonical_edges(self.edges, n))
        for name in MASK_NAMES:
            set_(name, np.asarray(getattr(self, name), dtype=bool))
        for arr in (self.features, self.labels, self.edges, *self.masks.values()):
            arr.flags.writeable = False
        self.validate()

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def masks(self) -> dict:
        return {name: getattr(self, name) for name in MASK_NAMES}

    def validate(self) -> None:
        n, C = self.num_nodes, self.num_classes
        if self.features.ndim != 2:
            raise DimensionMismatchError("features must be an n x d matrix")
        if C < 1:
            raise DimensionMismatchError("num_classes must be positive")
        if self.labels.shape != (n,):
            raise DimensionMismatchError(f"{self.labels.shape[0]} labels for {n} nodes")
        for name, m in self.masks.items():
            if m.shape != (n,):
                raise MaskError(f"mask {name!r} has length {m.shape[0]}, expected {n}")
        if np.any((self.labels < -1) | (self.labels >= C)):
            bad = int(np.flatnonzero((self.labels < -1) | (self.labels >= C))[0])
            raise LabelRangeError(f"node {bad}: label {self.labels[bad]} outside [-1, {C})")
        stacked = np.stack(list(self.masks.values()), axis=1)
        if np.any(stacked.sum(axis=1) > 1):
            bad = int(np.flatnonzero(stacked.sum(axis=1) > 1)[0])
            raise MaskError(f"node {bad} carries more than one role")
        labeled = self.train | self.val | self.test_id
        if np.any(self.labels[labeled] < 0):
            bad = int(np.flatnonzero(labeled & (self.labels < 0))[0])
            raise LabelRangeError(f"node {bad} is train/val/test_id but unlabeled")

    def replace(self, **changes) -> "GraphDataset":
        return dataclasses.replace(self, **changes)

    def equals(self, other: "GraphDataset") -> bool:
        """Bit-exact equality of every field."""
        if self.num_classes != other.num_classes:
            return False
        pairs = [(self.edges, other.edges), (self.features, other.features), (self.labels, other.labels)]
        pairs += [(self.masks[k], other.masks[k]) for k in MASK_NAMES]
        return all(a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b) for a, b in pairs)

    @cached_property
    def adjacency(self) -> SparseMatrix:
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return SparseMatrix.from_coo(self.num_nodes, rows, cols)

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.adjacency.row_sums()

    @cached_property
    def gcn_operator(self) -> SparseMatrix:
        return sym_normalize(self)

    @cached_property
    def propagation_operator(self) -> SparseMatrix:
        return propagation_operator(self)


def _adjacency(g: Union[GraphDataset, SparseMatrix]) -> SparseMatrix:
    return g.adjacency if isinstance(g, GraphDataset) else g


def sym_normalize(g: Union[GraphDataset, SparseMatrix]) -> SparseMatrix:
    """``D^-1/2 (A + I) D^-1/2`` with D the degree matrix of ``A + I``."""
    adj = _adjacency(g)
    n = adj.n
    rows = np.concatenate([adj._rows, np.arange(n)])
    cols = np.concatenate([adj.indices, np.arange(n)])
    vals = np.concatenate([adj.data, np.ones(n)])
    deg = adj.row_sums() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    return SparseMatrix.from_coo(n, rows, cols, vals * inv_sqrt[rows] * inv_sqrt[cols])


def row_normalize(g: Union[GraphDataset, SparseMatrix]) -> SparseMatrix:
    """``D^-1 A`` without self-loops; isolated nodes get an all-zero row."""
    adj = _adjacency(g)
    deg = adj.row_sums()
    rows = adj._rows
    return SparseMatrix(adj.n, adj.indptr, adj.indices, adj.data / deg[rows])


def propagation_operator(g: Union[GraphDataset, SparseMatrix]) -> SparseMatrix:
    """Row-normalised adjacency whose isolated rows are the identity.

    With this operator the update ``eta*s + (1-eta)*P s`` leaves the score
    of an isolated node unchanged.
    """
    adj = _adjacency(g)
    deg = adj.row_sums()
    iso = np.flatnonzero(deg == 0)
    rows = np.concatenate([adj._rows, iso])
    cols = np.concatenate([adj.indices, iso])
    vals = np.concatenate([adj.data / deg[adj._rows], np.ones(iso.size)])
    return SparseMatrix.from_coo(adj.n, rows, cols, vals)


# --------------------------------------------------------------------------
# Directory format


def _read_lines(path: str) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise MissingFileError("file not found", path) from None
    except OSError as exc:
        raise DatasetError(f"cannot read: {exc}", path) from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _parse_int(tok: str, path: str, line: int) -> int:
    try:
        return int(tok.strip())
    except ValueError:
        raise DatasetError(f"expected an integer, got {tok!r}", path, line) from None


def load_dataset(path: str) -> GraphDataset:
    """Read and validate a dataset directory."""
    for name in FILES:
        if not os.path.isfile(os.path.join(path, name)):
            raise MissingFileError("file not found", os.path.join(path, name))

    meta_path = os.path.join(path, "graph.json")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON: {exc.msg}", meta_path, exc.lineno) from None
    try:
        n, d, C = (int(meta[k]) for k in ("num_nodes", "num_features", "num_classes"))
    except (KeyError, TypeError, ValueError):
        raise DatasetError("needs integer keys num_nodes, num_features, num_classes", meta_path) from None
    if n < 1 or d < 1 or C < 1:
        raise DimensionMismatchError("num_nodes, num_features and num_classes must be positive", meta_path)

    edge_path = os.path.join(path, "edges.csv")
    edges, seen = [], set()
    for i, line in enumerate(_read_lines(edge_path), start=1):
        parts = line.split(",")
        if len(parts) != 2:
            raise EdgeError(f"expected 'src,dst', got {line!r}", edge_path, i)
        a, b = (_parse_int(p, edge_path, i) for p in parts)
        if not (0 <= a < n and 0 <= b < n):
            raise EdgeError(f"endpoint outside [0, {n})", edge_path, i)
        if a == b:
            raise EdgeError(f"self-loop on node {a}", edge_path, i)
        key = (min(a, b), max(a, b))
        if key in seen:
            raise EdgeError(f"duplicate edge {a},{b}", edge_path, i)
        seen.add(key)
        edges.append(key)

    feat_path = os.path.join(path, "features.csv")
    feat_lines = _read_lines(feat_path)
    if len(feat_lines) != n:
        raise DimensionMismatchError(f"{len(feat_lines)} rows, graph.json says {n}", feat_path)
    features = np.empty((n, d))
    for i, line in enumerate(feat_lines, start=1):
        parts = line.split(",")
        if len(parts) != d:
            raise DimensionMismatchError(f"{len(parts)} columns, graph.json says {d}", feat_path, i)
        try:
            features[i - 1] = [float(p) for p in parts]
        except ValueError:
            raise DatasetError(f"non-numeric feature in {line!r}", feat_path, i) from None

    label_path = os.path.join(path, "labels.csv")
    label_lines = _read_lines(label_path)
    if len(label_lines) != n:
        raise DimensionMismatchError(f"{len(label_lines)} rows, graph.json says {n}", label_path)
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(label_lines, start=1):
        y = _parse_int(line, label_path, i)
        if not -1 <= y < C:
            raise LabelRangeError(f"label {y} outside {{-1}} or [0, {C})", label_path, i)
        labels[i - 1] = y

    mask_path = os.path.join(path, "masks.csv")
    mask_lines = _read_lines(mask_path)
    if not mask_lines or mask_lines[0].strip() != ",".join(MASK_NAMES):
        raise MaskError(f"header must be {','.join(MASK_NAMES)!r}", mask_path, 1)
    if len(mask_lines) - 1 != n:
        raise DimensionMismatchError(f"{len(mask_lines) - 1} rows, graph.json says {n}", mask_path)
    flags = np.zeros((n, len(MASK_NAMES)), dtype=bool)
    for i, line in enumerate(mask_lines[1:], start=2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != len(MASK_NAMES) or any(p not in ("0", "1") for p in parts):
            raise MaskError(f"expected five 0/1 flags, got {line!r}", mask_path, i)
        row = [p == "1" for p in parts]
        if sum(row) > 1:
            raise MaskError("more than one role flag set", mask_path, i)
        if any(row[:3]) and labels[i - 2] < 0:
            raise LabelRangeError("train/val/test_id node has label -1", mask_path, i)
        flags[i - 2] = row

    return GraphDataset(
        num_classes=C,
        edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
        features=features,
        labels=labels,
        **{name: flags[:, j] for j, name in enumerate(MASK_NAMES)},
    )


def save_dataset(g: GraphDataset, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    meta = {"num_nodes": g.num_nodes, "num_features": g.num_features, "num_classes": g.num_classes}
    with open(os.path.join(path, "graph.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(path, "edges.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{a},{b}\n" for a, b in g.edges)
    with open(os.path.join(path, "features.csv"), "w", encoding="utf-8", newline="\n") as fh:
        # repr() of a float round-trips exactly
        fh.writelines(",".join(repr(float(x)) for x in row) + "\n" for row in g.features)
    with open(os.path.join(path, "labels.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(y)}\n" for y in g.labels)
    flags = np.stack([g.masks[k] for k in MASK_NAMES], axis=1).astype(int)
    with open(os.path.join(path, "masks.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(MASK_NAMES) + "\n")
        fh.writelines(",".join(str(v) for v in row) + "\n" for row in flags)
    logger.info("wrote dataset (%d nodes, %d edges) to %s", g.num_nodes, len(g.edges), path)
