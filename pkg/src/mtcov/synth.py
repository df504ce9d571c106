"""Directed multilayer SBM benchmarks with planted communities and attributes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DesignMatrix, MultilayerGraph

KINDS = ("assortative", "disassortative", "core-periphery", "biased-directed")

# weak entries relative to the base density k*C/N
_OFF = 0.1
_CORE_LOW = 0.03


def build_affinity(kind: str, n_communities: int, n_nodes: int, avg_degree: float) -> np.ndarray:
    """C x C affinity matrix of one benchmark layer.

    With base density ``b = k*C/N``:

    * assortative: ``b`` on the diagonal, ``0.1 b`` elsewhere
    * disassortative: ``0.1 b`` on the diagonal, ``b`` elsewhere
    * core-periphery: ``w[0, 0] = b``, other diagonal ``0.03 b``, off-diagonal ``0.1 b``
    * biased-directed: ``b`` above the diagonal, ``0.03 b`` below, ``0.1 b`` on it
    """
    C = n_communities
    b = avg_degree * C / n_nodes
    eye = np.eye(C, dtype=bool)
    if kind == "assortative":
        W = np.where(eye, b, _OFF * b)
    elif kind == "disassortative":
        W = np.where(eye, _OFF * b, b)
    elif kind == "core-periphery":
        W = np.where(eye, _CORE_LOW * b, _OFF * b)
        W[0, 0] = b
    elif kind == "biased-directed":
        W = np.full((C, C), _OFF * b)
        W[np.triu_indices(C, 1)] = b
        W[np.tril_indices(C, -1)] = _CORE_LOW * b
    else:
        raise ValueError(f"unknown layer kind {kind!r}; expected one of {KINDS}")
    return W.astype(float)


@dataclass
class LayerSpec:
    kind: str
    affinity: np.ndarray

    def __post_init__(self):
        self.affinity = np.asarray(self.affinity, dtype=float)
        if np.any(self.affinity < 0):
            raise ValueError("affinity entries must be nonnegative")


@dataclass
class SyntheticSpec:
    n_nodes: int
    n_communities: int
    avg_degree: float
    layers: list[LayerSpec]
    attribute_match: float = 0.5
    n_categories: int | None = None
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 <= self.attribute_match <= 1.0:
            raise ValueError("attribute_match must lie in [0, 1]")
        if self.n_categories is None:
            self.n_categories = self.n_communities

    @property
    def unequal_blocks(self) -> bool:
        return self.n_nodes % self.n_communities != 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_nodes": self.n_nodes,
            "n_communities": self.n_communities,
            "avg_degree": self.avg_degree,
            "attribute_match": self.attribute_match,
            "n_categories": self.n_categories,
            "seed": self.seed,
            "layers": [{"kind": l.kind, "affinity": l.affinity.tolist()} for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        layers = [LayerSpec(l["kind"], np.asarray(l["affinity"])) for l in d["layers"]]
        return cls(
            n_nodes=int(d["n_nodes"]),
            n_communities=int(d["n_communities"]),
            avg_degree=float(d["avg_degree"]),
            layers=layers,
            attribute_match=float(d.get("attribute_match", 0.5)),
            n_categories=d.get("n_categories"),
            seed=int(d.get("seed", 0)),
            name=d.get("name", "custom"),
        )


_PRESETS = {
    "G1": ["assortative", "disassortative"],
    "G2": ["assortative", "assortative", "disassortative", "disassortative"],
    "G3": ["assortative", "disassortative", "core-periphery", "biased-directed"],
}


def preset(name: str, n_nodes: int = 1000, seed: int = 0, match: float = 0.5, avg_degree: float = 4.0) -> SyntheticSpec:
    """The G1/G2/G3 benchmark families with two communities."""
    try:
        kinds = _PRESETS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(_PRESETS)}") from None
    C = 2
    layers = [LayerSpec(k, build_affinity(k, C, n_nodes, avg_degree)) for k in kinds]
    return SyntheticSpec(n_nodes, C, avg_degree, layers, match, C, seed, name.upper())


@dataclass
class PlantedTruth:
    U0: np.ndarray
    attribute: np.ndarray | None = None
    matched: np.ndarray | None = None
    spec: dict = field(default_factory=dict)

    @property
    def V0(self) -> np.ndarray:
        return self.U0

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.U0, axis=1)

    def to_dict(self) -> dict:
        return {
            "U0": self.U0.astype(int).tolist(),
            "attribute": None if self.attribute is None else self.attribute.tolist(),
            "matched": None if self.matched is None else self.matched.astype(bool).tolist(),
            "spec": self.spec,
            "edge_sampling": "poisson",
            "self_loops": "suppressed",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantedTruth":
        return cls(
            U0=np.asarray(d["U0"], dtype=float),
            attribute=None if d.get("attribute") is None else np.asarray(d["attribute"], dtype=np.int64),
            matched=None if d.get("matched") is None else np.asarray(d["matched"], dtype=bool),
            spec=d.get("spec", {}),
        )


def save_truth(truth: PlantedTruth, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(truth.to_dict(), fh, sort_keys=True)


def load_truth(path: str | Path) -> PlantedTruth:
    with open(path) as fh:
        return PlantedTruth.from_dict(json.load(fh))


def planted_groups(n_nodes: int, n_communities: int) -> np.ndarray:
    """Contiguous blocks whose sizes differ by at most one."""
    sizes = np.full(n_communities, n_nodes // n_communities)
    sizes[: n_nodes % n_communities] += 1
    return np.repeat(np.arange(n_communities), sizes)


def _sample_block(rng, rate, rows, cols, same_block):
    """Independent Poisson(rate) counts on a block, as an edge list with repeats.

    The total is Poisson(rate * n_pairs) and edges land uniformly on the
    pairs, which is the same law as one Poisson draw per pair. Diagonal
    blocks skip i == j.
    """
    nr, nc = rows.size, cols.size
    n_pairs = nr * nc - (nr if same_block else 0)
    if rate <= 0 or n_pairs <= 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    total = rng.poisson(rate * n_pairs)
    a = rng.integers(0, nr, size=total)
    if same_block:
        b = (a + rng.integers(1, nr, size=total)) % nr
    else:
        b = rng.integers(0, nc, size=total)
    return rows[a], cols[b]


def generate_network(spec: SyntheticSpec, rng: np.random.Generator | None = None) -> tuple[MultilayerGraph, PlantedTruth]:
    rng = rng if rng is not None else np.random.default_rng([spec.seed, 0])
    N, C = spec.n_nodes, spec.n_communities
    groups = planted_groups(N, C)
    members = [np.flatnonzero(groups == k) for k in range(C)]
    src, dst, lay = [], [], []
    for a, layer in enumerate(spec.layers):
        for k in range(C):
            for l in range(C):
                s, d = _sample_block(rng, layer.affinity[k, l], members[k], members[l], k == l)
                src.append(s)
                dst.append(d)
                lay.append(np.full(s.size, a, dtype=np.int64))
    graph = MultilayerGraph.from_edges(
        np.concatenate(src), np.concatenate(dst), np.concatenate(lay), n_nodes=N, n_layers=len(spec.layers)
    )
    U0 = np.zeros((N, C))
    U0[np.arange(N), groups] = 1.0
    return graph, PlantedTruth(U0=U0, spec=spec.to_dict())


def generate_attributes(
    truth: PlantedTruth, match: float, n_categories: int, rng: np.random.Generator
) -> DesignMatrix:
    """Category = community index with probability ``match``, else a uniform other category.

    Fills ``truth.attribute`` and ``truth.matched`` in place.
    """
    C = truth.U0.shape[1]
    Z = n_categories
    if Z < C:
        raise ValueError("need at least as many categories as communities")
    if Z < 2 and match < 1:
        raise ValueError("a non-matching category needs Z >= 2")
    labels = truth.labels
    N = labels.size
    matched = rng.random(N) < match
    # uniform over the Z - 1 categories other than the node's own
    other = rng.integers(0, max(Z - 1, 1), size=N)
    other = other + (other >= labels)
    attr = np.where(matched, labels, other)
    truth.attribute = attr.astype(np.int64)
    truth.matched = matched
    return DesignMatrix(truth.attribute, tuple(str(z) for z in range(Z)))


def generate(spec: SyntheticSpec) -> tuple[MultilayerGraph, DesignMatrix, PlantedTruth]:
    """Network and attributes from one spec; sub-streams keep them independent."""
    graph, truth = generate_network(spec, np.random.default_rng([spec.seed, 0]))
    design = generate_attributes(truth, spec.attribute_match, spec.n_categories, np.random.default_rng([spec.seed, 1]))
    return graph, design, truth
