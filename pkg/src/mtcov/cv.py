"""Holdout masks, (C, gamma) grid search and likelihood-normalisation regression."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import DesignMatrix, HoldoutMask, MultilayerGraph
from .em import EMConfig, RescaleCoefficients, fit, predict_attributes, predict_scores
from .metrics import accuracy, auc

logger = logging.getLogger(__name__)

SELECTION_RULE = "max-min-normalised"


def _n_entries(graph: MultilayerGraph) -> int:
    return graph.n_nodes * graph.n_nodes * graph.n_layers


def uniform_holdout(graph: MultilayerGraph, design: DesignMatrix | None, fraction: float, seed: int) -> HoldoutMask:
    """Hold out ``round(fraction * N^2 L)`` triples and ``round(fraction * N)`` attribute rows.

    Triples are drawn from the whole index space, zero entries included.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    rng = np.random.default_rng([int(seed), 0])
    total = _n_entries(graph)
    k = int(round(fraction * total))
    keys = rng.choice(total, size=k, replace=False) if k else np.zeros(0, np.int64)
    nodes = np.zeros(0, np.int64)
    if design is not None:
        n_attr = int(round(fraction * graph.n_nodes))
        nodes = np.random.default_rng([int(seed), 1]).choice(graph.n_nodes, size=n_attr, replace=False)
    return HoldoutMask.from_keys(keys, graph.n_nodes, nodes, seed=seed, kind="uniform")


def biased_probabilities(graph: MultilayerGraph, tpe: float) -> tuple[float, float]:
    """Per-entry selection weights for edges (p1) and non-edges (p2)."""
    E = graph.n_entries
    total = _n_entries(graph)
    if E < 1:
        raise ValueError("biased holdout needs at least one edge")
    if total - E < 1:
        raise ValueError("biased holdout needs at least one non-edge")
    return tpe / E, (1 - tpe) / (total - E)


def biased_holdout(graph: MultilayerGraph, fraction: float, tpe: float, seed: int) -> HoldoutMask:
    """Weighted sampling without replacement of ``ceil(fraction * N^2 L)`` triples.

    Each stored entry (an edge) has weight ``p1 = tpe / E`` and each zero
    entry ``p2 = (1 - tpe) / (N^2 L - E)``, so one draw hits an edge with
    probability ``tpe``. Items are ranked by exponential keys
    ``Exp(1) / weight`` and the smallest are kept. Edge keys are drawn
    explicitly; the smallest non-edge keys come from the order statistics
    of ``N^2 L - E`` exponentials, so non-edges are never enumerated. The
    chosen non-edges are then a uniform subset, drawn by rejection.
    Attribute rows are never held out.
    """
    if not 0.0 < tpe < 1.0:
        raise ValueError("tpe must lie in (0, 1)")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    p1, p2 = biased_probabilities(graph, tpe)
    E = graph.n_entries
    total = _n_entries(graph)
    n_non = total - E
    k = int(math.ceil(fraction * total))
    if k * tpe > E:
        raise ValueError(f"tpe={tpe} expects {k * tpe:.0f} edges in the test set but the graph has {E}")
    rng = np.random.default_rng([int(seed), 2])

    edge_keys = rng.standard_exponential(E) / p1
    # smallest k order statistics of n_non iid Exp(p2): spacings are Exp((n_non - r) p2)
    m = min(k, n_non)
    rates = (n_non - np.arange(m)) * p2
    non_keys = np.cumsum(rng.standard_exponential(m) / rates)

    threshold = np.partition(np.concatenate([edge_keys, non_keys]), k - 1)[k - 1]
    chosen_edges = np.flatnonzero(edge_keys <= threshold)
    if chosen_edges.size > k:  # ties at the threshold
        chosen_edges = chosen_edges[np.argsort(edge_keys[chosen_edges], kind="stable")[:k]]
    n_pick = k - chosen_edges.size

    edge_set = graph.keys()
    picked = np.zeros(0, np.int64)
    if n_pick:
        cand = rng.choice(total, size=min(total, n_pick + E), replace=False)
        cand = cand[~np.isin(cand, edge_set)]
        picked = cand[:n_pick]
    keys = np.concatenate([edge_set[chosen_edges], picked])
    return HoldoutMask.from_keys(keys, graph.n_nodes, (), seed=seed, kind=f"biased(tpe={tpe})")


def kfold_masks(graph: MultilayerGraph, design: DesignMatrix | None, n_folds: int, seed: int) -> list[HoldoutMask]:
    """Disjoint near-equal folds over all N^2 L triples and over attribute rows."""
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    total = _n_entries(graph)
    perm = np.random.default_rng([int(seed), 3]).permutation(total)
    tri_folds = np.array_split(perm, n_folds)
    if design is not None:
        node_perm = np.random.default_rng([int(seed), 4]).permutation(graph.n_nodes)
        node_folds = np.array_split(node_perm, n_folds)
    else:
        node_folds = [np.zeros(0, np.int64)] * n_folds
    return [
        HoldoutMask.from_keys(t, graph.n_nodes, n, seed=seed, kind=f"fold {f + 1}/{n_folds}")
        for f, (t, n) in enumerate(zip(tri_folds, node_folds))
    ]


def biased_folds(graph: MultilayerGraph, n_folds: int, tpe: float, seed: int) -> list[HoldoutMask]:
    """Independent biased draws, each holding out ``1 / n_folds`` of the triples."""
    return [biased_holdout(graph, 1.0 / n_folds, tpe, seed * 1000 + f) for f in range(n_folds)]


def holdout_auc(params, graph: MultilayerGraph, mask: HoldoutMask) -> float | None:
    """AUC of the expected counts on held-out triples; positives are nonzero entries."""
    if mask.n_triples == 0:
        return None
    scores = predict_scores(params, mask.triples)
    pos = np.isin(mask.keys(graph.n_nodes), graph.keys())
    if pos.all() or not pos.any():
        return None
    return auc(scores[pos], scores[~pos])


def holdout_accuracy(params, design: DesignMatrix | None, mask: HoldoutMask) -> float | None:
    if design is None or mask.attribute_nodes.size == 0 or params.n_categories == 0:
        return None
    pred, _ = predict_attributes(params, mask.attribute_nodes)
    return accuracy(pred, design.assignment[mask.attribute_nodes])


@dataclass
class GridSpec:
    c_values: list[int]
    gamma_values: list[float]
    n_folds: int = 5
    seed: int = 0
    tpe: float | None = None

    def __post_init__(self):
        if not self.c_values or not self.gamma_values:
            raise ValueError("grid lists must be nonempty")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if any(not 0.0 <= g <= 1.0 for g in self.gamma_values):
            raise ValueError("gamma values must lie in [0, 1]")

    @property
    def cells(self) -> list[tuple[int, float]]:
        return [(int(c), float(g)) for c in self.c_values for g in self.gamma_values]


@dataclass
class CellResult:
    C: int
    gamma: float
    auc_folds: list[float | None] = field(default_factory=list)
    acc_folds: list[float | None] = field(default_factory=list)
    error: str | None = None

    @staticmethod
    def _stat(vals, fn):
        v = [x for x in vals if x is not None]
        return float(fn(v)) if v else None

    @property
    def auc_mean(self):
        return self._stat(self.auc_folds, np.mean)

    @property
    def auc_std(self):
        return self._stat(self.auc_folds, np.std)

    @property
    def acc_mean(self):
        return self._stat(self.acc_folds, np.mean)

    @property
    def acc_std(self):
        return self._stat(self.acc_folds, np.std)

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "gamma": self.gamma,
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "acc_mean": self.acc_mean,
            "acc_std": self.acc_std,
            "auc_folds": self.auc_folds,
            "acc_folds": self.acc_folds,
            "error": self.error,
        }


@dataclass
class CVReport:
    cells: list[CellResult]
    selected: tuple[int, float] | None
    selection_rule: str = SELECTION_RULE
    n_fits: int = 0
    grid: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if c.error]

    def to_dict(self) -> dict:
        return {
            "selected": None if self.selected is None else {"C": self.selected[0], "gamma": self.selected[1]},
            "selection_rule": self.selection_rule,
            "n_fits": self.n_fits,
            "grid": self.grid,
            "cells": [c.to_dict() for c in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"{'C':>3} {'gamma':>6} {'AUC':>15} {'accuracy':>15}"]
        for c in self.cells:
            a = "-" if c.auc_mean is None else f"{c.auc_mean:.3f}±{c.auc_std:.3f}"
            b = "-" if c.acc_mean is None else f"{c.acc_mean:.3f}±{c.acc_std:.3f}"
            mark = " *" if self.selected == (c.C, c.gamma) else ""
            lines.append(f"{c.C:>3} {c.gamma:>6.2f} {a:>15} {b:>15}{mark}" + (f"  error: {c.error}" if c.error else ""))
        return "\n".join(lines)


def select_joint(cells: Sequence[tuple[int, float, float | None, float | None]]) -> tuple[int, float]:
    """Pick the cell closest to both metric maxima.

    Each metric is divided by its best value over the grid and the cell with
    the largest ``min(auc_ratio, acc_ratio)`` wins; ties go to the smaller C,
    then the smaller gamma. A metric missing everywhere is ignored.
    """
    valid = [c for c in cells if c[2] is not None or c[3] is not None]
    if not valid:
        raise ValueError("no valid cell to select from")

    def best(idx):
        vals = [c[idx] for c in valid if c[idx] is not None]
        return max(vals) if vals else None

    auc_max, acc_max = best(2), best(3)

    def score(c):
        parts = []
        for val, top in ((c[2], auc_max), (c[3], acc_max)):
            if top is None:
                continue
            parts.append(0.0 if val is None else (val / top if top > 0 else 1.0))
        return min(parts)

    scored = [(score(c), c) for c in valid]
    top = max(s for s, _ in scored)
    ties = [c for s, c in scored if s >= top - 1e-12]
    c = min(ties, key=lambda c: (c[0], c[1]))
    return int(c[0]), float(c[1])


def grid_search(
    graph: MultilayerGraph,
    design: DesignMatrix | None,
    grid: GridSpec,
    template: EMConfig,
    progress: Callable[[CellResult], None] | None = None,
) -> CVReport:
    """Fit every (C, gamma) cell on every fold and score the held-out part.

    Folds are shared by all cells. A cell whose fit raises is recorded with
    its error and excluded from selection.
    """
    if grid.tpe is None:
        masks = kfold_masks(graph, design, grid.n_folds, grid.seed)
    else:
        masks = biased_folds(graph, grid.n_folds, grid.tpe, grid.seed)

    def run_cell(cell):
        C, g = cell
        res = CellResult(C, g)
        for f, mask in enumerate(masks):
            cfg = replace(template, n_communities=C, gamma=g, seed=template.seed * 1000 + f, n_jobs=1)
            try:
                out = fit(graph, design if g > 0 or design is not None else None, mask, cfg)
            except Exception as exc:  # recorded per cell, never fatal for the grid
                res.error = f"fold {f}: {exc}"
                break
            res.auc_folds.append(holdout_auc(out.params, graph, mask))
            res.acc_folds.append(holdout_accuracy(out.params, design, mask))
        if progress is not None:
            progress(res)
        return res

    jobs = int(os.environ.get("MTCOV_THREADS", "1") or 1)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_cell, grid.cells))
    else:
        results = [run_cell(c) for c in grid.cells]

    n_fits = sum(len(r.auc_folds) + (1 if r.error else 0) for r in results)
    ok = [(r.C, r.gamma, r.auc_mean, r.acc_mean) for r in results if not r.error]
    selected = select_joint(ok) if ok else None
    return CVReport(
        cells=results,
        selected=selected,
        n_fits=n_fits,
        grid={
            "c_values": list(grid.c_values),
            "gamma_values": list(grid.gamma_values),
            "n_folds": grid.n_folds,
            "seed": grid.seed,
            "tpe": grid.tpe,
        },
    )


DEFAULT_REGRESSORS = {"G": ("N", "E"), "X": ("N", "Z")}


def fit_rescale_coefficients(
    observations: Sequence[tuple[float, float, float, float, float]],
    regressors: dict[str, Sequence[str]] | None = None,
) -> RescaleCoefficients:
    """Least-squares fits without intercept of L_G and L_X on N, E, Z.

    ``observations`` holds ``(N, E, Z, L_G, L_X)`` rows. ``regressors`` maps
    ``"G"`` and ``"X"`` to the regressor names used for each term.
    """
    regressors = dict(DEFAULT_REGRESSORS if regressors is None else regressors)
    obs = np.asarray(observations, dtype=float).reshape(-1, 5)
    cols = {"N": 0, "E": 1, "Z": 2}
    coeffs = {}
    for term, target in (("G", 3), ("X", 4)):
        names = list(regressors.get(term, ()))
        if not names:
            continue
        if any(n not in cols for n in names):
            raise ValueError(f"unknown regressor in {names}; use N, E, Z")
        if obs.shape[0] < len(names) + 1:
            raise ValueError(f"need at least {len(names) + 1} observations for {term}")
        X = obs[:, [cols[n] for n in names]]
        if np.linalg.matrix_rank(X) < len(names):
            raise ValueError(f"singular regressor matrix for L_{term}")
        beta, *_ = np.linalg.lstsq(X, obs[:, target], rcond=None)
        for n, b in zip(names, beta):
            coeffs[f"c{term}_{n}"] = float(b)
    return RescaleCoefficients(**coeffs)


def save_coefficients(coeffs: RescaleCoefficients, path) -> None:
    with open(path, "w") as fh:
        json.dump(coeffs.to_dict(), fh, indent=2)


def load_coefficients(path) -> RescaleCoefficients:
    """Read a coefficient file; the literal ``"default"`` gives the built-in set."""
    if str(path) == "default":
        return RescaleCoefficients.social_support_defaults()
    with open(path) as fh:
        return RescaleCoefficients.from_dict(json.load(fh))
