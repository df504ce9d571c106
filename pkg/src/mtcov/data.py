"""Multilayer graphs, categorical design matrices and holdout masks.

Edge lists are whitespace separated ``source target layer [weight]`` rows,
attribute tables are CSV files with a header, masks are JSON documents.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised on malformed or inconsistent input data."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MultilayerGraph:
    """Sparse nonnegative integer adjacency tensor of shape (N, N, L).

    Stored entries are unique ``(source, target, layer)`` triples with
    weight >= 1. Build instances with :meth:`from_edges`, which sums
    duplicate rows and drops self-loops.
    """

    n_nodes: int
    n_layers: int
    src: np.ndarray
    dst: np.ndarray
    layer: np.ndarray
    weight: np.ndarray
    node_labels: tuple[str, ...]
    n_self_loops_dropped: int = 0
    out_degree: np.ndarray = field(init=False, repr=False)
    in_degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n, L = self.n_nodes, self.n_layers
        for name in ("src", "dst", "layer", "weight"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.int64)))
        m = len(self.src)
        if not (len(self.dst) == len(self.layer) == len(self.weight) == m):
            raise DataError("edge arrays must have equal length")
        if m:
            if self.src.min() < 0 or self.src.max() >= n or self.dst.min() < 0 or self.dst.max() >= n:
                raise DataError("node index out of range")
            if self.layer.min() < 0 or self.layer.max() >= L:
                raise DataError("layer index out of range")
            if self.weight.min() < 1:
                raise DataError("stored weights must be >= 1")
            if np.any(self.src == self.dst):
                raise DataError("self-loops are not allowed in a validated graph")
            keys = self.keys()
            if np.unique(keys).size != m:
                raise DataError("duplicate (i, j, layer) entries")
        if len(self.node_labels) != n:
            raise DataError("node_labels must have one entry per node")
        out_deg = np.zeros((n, L), dtype=np.int64)
        in_deg = np.zeros((n, L), dtype=np.int64)
        np.add.at(out_deg, (self.src, self.layer), self.weight)
        np.add.at(in_deg, (self.dst, self.layer), self.weight)
        object.__setattr__(self, "out_degree", _readonly(out_deg))
        object.__setattr__(self, "in_degree", _readonly(in_deg))

    @classmethod
    def from_edges(
        cls,
        src: Iterable[int],
        dst: Iterable[int],
        layer: Iterable[int],
        weight: Iterable[int] | None = None,
        n_nodes: int | None = None,
        n_layers: int | None = None,
        node_labels: Sequence[str] | None = None,
    ) -> "MultilayerGraph":
        src = np.asarray(list(src) if not isinstance(src, np.ndarray) else src, dtype=np.int64)
        dst = np.asarray(list(dst) if not isinstance(dst, np.ndarray) else dst, dtype=np.int64)
        layer = np.asarray(list(layer) if not isinstance(layer, np.ndarray) else layer, dtype=np.int64)
        if weight is None:
            weight = np.ones(len(src), dtype=np.int64)
        else:
            weight = np.asarray(list(weight) if not isinstance(weight, np.ndarray) else weight, dtype=np.int64)
        if weight.size and weight.min() < 0:
            raise DataError("negative edge weight")
        if n_nodes is None:
            n_nodes = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
        if n_layers is None:
            n_layers = int(layer.max(initial=-1) + 1)
        if node_labels is None:
            node_labels = [str(i) for i in range(n_nodes)]

        loops = src == dst
        n_loops = int(loops.sum())
        keep = ~loops & (weight > 0)
        src, dst, layer, weight = src[keep], dst[keep], layer[keep], weight[keep]

        # sum duplicates; the resulting order is sorted by (layer, src, dst)
        keys = (layer * n_nodes + src) * n_nodes + dst
        uniq, inverse = np.unique(keys, return_inverse=True)
        summed = np.bincount(inverse, weights=weight, minlength=uniq.size).astype(np.int64)
        dst_u = uniq % n_nodes
        src_u = (uniq // n_nodes) % n_nodes
        layer_u = uniq // (n_nodes * n_nodes)
        return cls(
            n_nodes=int(n_nodes),
            n_layers=int(n_layers),
            src=src_u,
            dst=dst_u,
            layer=layer_u,
            weight=summed,
            node_labels=tuple(str(x) for x in node_labels),
            n_self_loops_dropped=n_loops,
        )

    @property
    def n_entries(self) -> int:
        """Number of stored nonzero triples."""
        return int(self.src.size)

    @property
    def total_weight(self) -> int:
        return int(self.weight.sum())

    def keys(self) -> np.ndarray:
        """Linear index ``(layer * N + src) * N + dst`` of every stored entry."""
        n = self.n_nodes
        return (self.layer * n + self.src) * n + self.dst

    def layer_totals(self) -> np.ndarray:
        return np.bincount(self.layer, weights=self.weight, minlength=self.n_layers).astype(np.int64)

    def dense(self) -> np.ndarray:
        """Dense (L, N, N) array. Only sensible for small graphs."""
        A = np.zeros((self.n_layers, self.n_nodes, self.n_nodes), dtype=np.int64)
        A[self.layer, self.src, self.dst] = self.weight
        return A

    def summary(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_layers": self.n_layers,
            "n_entries": self.n_entries,
            "total_weight": self.total_weight,
            "layer_totals": self.layer_totals().tolist(),
            "self_loops_dropped": self.n_self_loops_dropped,
        }

    def index_of(self, label: str) -> int:
        try:
            return self._label_index[label]
        except AttributeError:
            object.__setattr__(self, "_label_index", {s: i for i, s in enumerate(self.node_labels)})
            return self._label_index[label]


def load_edgelist(path: str | Path, directed: bool = True, n_layers: int | None = None) -> MultilayerGraph:
    """Read a whitespace separated ``source target layer [weight]`` file.

    Node ids get contiguous indices in first-seen order. Layers must be
    nonnegative integers. Undirected input is expanded to both arcs.
    Duplicate rows are summed and self-loops dropped (the count is kept in
    ``n_self_loops_dropped``).
    """
    labels: dict[str, int] = {}
    src, dst, lay, wts = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise DataError(f"{path}:{lineno}: expected 'source target layer [weight]', got {raw.rstrip()!r}")
            try:
                a = int(parts[2])
                w = int(parts[3]) if len(parts) == 4 else 1
            except ValueError:
                raise DataError(f"{path}:{lineno}: layer and weight must be integers") from None
            if a < 0:
                raise DataError(f"{path}:{lineno}: negative layer index")
            if w < 0:
                raise DataError(f"{path}:{lineno}: negative weight {w}")
            i = labels.setdefault(parts[0], len(labels))
            j = labels.setdefault(parts[1], len(labels))
            src.append(i)
            dst.append(j)
            lay.append(a)
            wts.append(w)
            if not directed:
                src.append(j)
                dst.append(i)
                lay.append(a)
                wts.append(w)
    if n_layers is None:
        n_layers = max(lay) + 1 if lay else 1
    graph = MultilayerGraph.from_edges(
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(lay, dtype=np.int64),
        np.array(wts, dtype=np.int64),
        n_nodes=len(labels),
        n_layers=n_layers,
        node_labels=list(labels),
    )
    if not directed:
        # each undirected self-loop was counted twice by the expansion
        object.__setattr__(graph, "n_self_loops_dropped", graph.n_self_loops_dropped // 2)
    if graph.n_self_loops_dropped:
        logger.info("dropped %d self-loops from %s", graph.n_self_loops_dropped, path)
    return graph


def write_edgelist(graph: MultilayerGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# source target layer weight\n")
        labels = graph.node_labels
        for i, j, a, w in zip(graph.src.tolist(), graph.dst.tolist(), graph.layer.tolist(), graph.weight.tolist()):
            fh.write(f"{labels[i]} {labels[j]} {a} {w}\n")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """One-hot categorical attribute, stored as one category index per node."""

    assignment: np.ndarray
    category_labels: tuple[str, ...]

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", _readonly(a))
        object.__setattr__(self, "category_labels", tuple(str(c) for c in self.category_labels))
        if a.ndim != 1:
            raise DataError("assignment must be one-dimensional")
        if a.size and (a.min() < 0 or a.max() >= len(self.category_labels)):
            raise DataError("category index out of range")

    @property
    def n_nodes(self) -> int:
        return int(self.assignment.size)

    @property
    def n_categories(self) -> int:
        return len(self.category_labels)

    def onehot(self) -> np.ndarray:
        X = np.zeros((self.n_nodes, self.n_categories), dtype=np.int64)
        X[np.arange(self.n_nodes), self.assignment] = 1
        return X


def load_attributes(
    path: str | Path,
    attribute_name: str | Sequence[str],
    graph: MultilayerGraph | None = None,
    node_column: str | None = None,
) -> DesignMatrix:
    """Read one or more categorical columns from a CSV file.

    Rows are matched to ``graph`` nodes by id (first column unless
    ``node_column`` is given). Several columns are combined into one
    super-attribute whose categories are the observed value combinations.
    Categories are numbered in sorted label order.
    """
    names = [attribute_name] if isinstance(attribute_name, str) else list(attribute_name)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty attribute file")
        id_col = node_column or reader.fieldnames[0]
        for name in [id_col, *names]:
            if name not in reader.fieldnames:
                raise DataError(f"{path}: no column {name!r}")
        rows = {row[id_col]: row for row in reader}

    if graph is None:
        node_ids = list(rows)
    else:
        node_ids = list(graph.node_labels)
        unknown = sorted(set(rows) - set(node_ids))
        if unknown:
            raise DataError(f"attribute rows for unknown node ids: {unknown[:20]}")
        absent = [n for n in node_ids if n not in rows]
        if absent:
            raise DataError(f"nodes without an attribute row: {absent[:20]}")

    values = []
    missing = []
    for nid in node_ids:
        combo = tuple((rows[nid][name] or "").strip() for name in names)
        if any(v == "" for v in combo):
            missing.append(nid)
        values.append("/".join(combo))
    if missing:
        raise DataError(f"missing attribute value for nodes: {missing[:20]}")
    return design_from_values(values)


def design_from_values(values: Sequence[str]) -> DesignMatrix:
    labels = sorted(set(values))
    index = {v: z for z, v in enumerate(labels)}
    return DesignMatrix(np.array([index[v] for v in values], dtype=np.int64), tuple(labels))


def combine_designs(*designs: DesignMatrix) -> DesignMatrix:
    """Cross-product of several designs over the same nodes.

    Only observed combinations become categories.
    """
    n = designs[0].n_nodes
    if any(d.n_nodes != n for d in designs):
        raise DataError("designs cover different node counts")
    values = ["/".join(d.category_labels[d.assignment[i]] for d in designs) for i in range(n)]
    return design_from_values(values)


def write_attributes(design: DesignMatrix, node_labels: Sequence[str], path: str | Path, name: str = "attribute") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node", name])
        for nid, z in zip(node_labels, design.assignment.tolist()):
            w.writerow([nid, design.category_labels[z]])


def bin_numeric(values: Sequence[float], bin_width: float) -> DesignMatrix:
    """Cut a numeric attribute into equal-width bins starting at its minimum.

    Empty bins are dropped and the remaining ones renumbered in order.
    """
    x = np.asarray(values, dtype=float)
    if not bin_width > 0:
        raise DataError("bin_width must be positive")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite value in numeric attribute")
    lo = x.min()
    raw = np.floor((x - lo) / bin_width).astype(np.int64)
    used, assignment = np.unique(raw, return_inverse=True)
    labels = [f"[{_fmt(lo + b * bin_width)},{_fmt(lo + (b + 1) * bin_width)})" for b in used.tolist()]
    return DesignMatrix(assignment.astype(np.int64), tuple(labels))


def _fmt(v: float) -> str:
    return f"{v:g}"


@dataclass(frozen=True)
class ValidationReport:
    zero_out_degree: np.ndarray
    zero_in_degree: np.ndarray
    n_nodes: int

    @property
    def ok(self) -> bool:
        return self.zero_out_degree.size == 0 and self.zero_in_degree.size == 0

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "zero_out_degree": self.zero_out_degree.tolist(),
            "zero_in_degree": self.zero_in_degree.tolist(),
        }


def validate(graph: MultilayerGraph) -> ValidationReport:
    """List nodes whose total out- (in-) degree over all layers is zero."""
    out_tot = graph.out_degree.sum(axis=1)
    in_tot = graph.in_degree.sum(axis=1)
    return ValidationReport(
        zero_out_degree=np.flatnonzero(out_tot == 0),
        zero_in_degree=np.flatnonzero(in_tot == 0),
        n_nodes=graph.n_nodes,
    )


@dataclass(frozen=True, eq=False)
class HoldoutMask:
    """Held-out adjacency triples and attribute rows.

    ``triples`` is an (T, 3) integer array of ``(i, j, layer)`` rows, sorted
    and unique. Everything not listed is training data.
    """

    triples: np.ndarray
    attribute_nodes: np.ndarray
    seed: int | None = None
    kind: str = "custom"

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        nodes = np.unique(np.asarray(self.attribute_nodes, dtype=np.int64))
        object.__setattr__(self, "triples", _readonly(t))
        object.__setattr__(self, "attribute_nodes", _readonly(nodes))

    @classmethod
    def empty(cls) -> "HoldoutMask":
        return cls(np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64), kind="empty")

    @classmethod
    def from_keys(cls, keys: np.ndarray, n_nodes: int, attribute_nodes=(), seed=None, kind="custom") -> "HoldoutMask":
        keys = np.unique(np.asarray(keys, dtype=np.int64))
        j = keys % n_nodes
        i = (keys // n_nodes) % n_nodes
        a = keys // (n_nodes * n_nodes)
        return cls(np.column_stack([i, j, a]), np.asarray(attribute_nodes, dtype=np.int64), seed, kind)

    def keys(self, n_nodes: int) -> np.ndarray:
        i, j, a = self.triples.T
        return (a * n_nodes + i) * n_nodes + j

    @property
    def n_triples(self) -> int:
        return int(self.triples.shape[0])

    def check(self, n_nodes: int, n_layers: int) -> None:
        t = self.triples
        if t.size and (t[:, :2].min() < 0 or t[:, :2].max() >= n_nodes or t[:, 2].min() < 0 or t[:, 2].max() >= n_layers):
            raise DataError("held-out triple outside the index space")
        if self.attribute_nodes.size and (self.attribute_nodes.min() < 0 or self.attribute_nodes.max() >= n_nodes):
            raise DataError("held-out attribute node out of range")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "triples": self.triples.tolist(),
            "attribute_nodes": self.attribute_nodes.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HoldoutMask":
        return cls(
            np.asarray(d.get("triples", []), dtype=np.int64).reshape(-1, 3),
            np.asarray(d.get("attribute_nodes", []), dtype=np.int64),
            d.get("seed"),
            d.get("kind", "custom"),
        )


def save_mask(mask: HoldoutMask, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mask.to_dict(), fh)


def load_mask(path: str | Path) -> HoldoutMask:
    with open(path, encoding="utf-8") as fh:
        return HoldoutMask.from_dict(json.load(fh))
