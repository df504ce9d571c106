"""EM fitting of the joint Poisson / multinomial multilayer model.

Parameters are ``U`` and ``V`` (N x C, rows on the simplex), ``W``
(L x C x C, nonnegative) and ``beta`` (C x Z, rows on the simplex). The
expected edge count is ``M[i, j, a] = U[i] @ W[a] @ V[j]`` and the category
probabilities of node ``i`` are ``0.5 * (U[i] + V[i]) @ beta``.

The edge responsibilities ``rho`` (one C x C table per training edge) are
never stored: every sum of ``A * rho`` that an update needs is assembled
from the per-edge ratio ``A / M`` and the products ``V @ W[a].T`` and
``U @ W[a]``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import DesignMatrix, HoldoutMask, MultilayerGraph

logger = logging.getLogger(__name__)

EPS = 1e-12


class FitError(RuntimeError):
    """Raised when no restart produces a finite fit."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class ModelParams:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    beta: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.U.shape[0]

    @property
    def n_communities(self) -> int:
        return self.U.shape[1]

    @property
    def n_layers(self) -> int:
        return self.W.shape[0]

    @property
    def n_categories(self) -> int:
        return self.beta.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.U.copy(), self.V.copy(), self.W.copy(), self.beta.copy())

    def allclose(self, other: "ModelParams", atol=0.0, rtol=0.0) -> bool:
        return all(
            np.allclose(getattr(self, k), getattr(other, k), atol=atol, rtol=rtol) for k in ("U", "V", "W", "beta")
        )


@dataclass(frozen=True)
class RescaleCoefficients:
    """Per-term normalisation ``L_G / D_G`` and ``L_X / D_X``.

    ``D_G = cG_N*N + cG_E*E + cG_Z*Z`` and likewise for ``D_X``.
    """

    cG_N: float = 0.0
    cG_E: float = 0.0
    cG_Z: float = 0.0
    cX_N: float = 0.0
    cX_E: float = 0.0
    cX_Z: float = 0.0

    @classmethod
    def social_support_defaults(cls) -> "RescaleCoefficients":
        """Coefficients regressed on village social-support networks."""
        return cls(cG_N=-1.778, cG_E=-6.158, cX_N=-0.486, cX_Z=-33.862)

    def denominators(self, n_nodes: int, n_edges: float, n_categories: int) -> tuple[float, float]:
        dg = self.cG_N * n_nodes + self.cG_E * n_edges + self.cG_Z * n_categories
        dx = self.cX_N * n_nodes + self.cX_E * n_edges + self.cX_Z * n_categories
        return dg, dx

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RescaleCoefficients":
        return cls(**{k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__})


def effective_gamma(gamma: float, dg: float, dx: float) -> float:
    """Balance parameter that reproduces a rescaled objective.

    ``(1-g) L_G/|dg| + g L_X/|dx|`` is a positive multiple of
    ``(1-g') L_G + g' L_X`` with ``g' = g|dg| / (g|dg| + (1-g)|dx|)``, so the
    closed-form M-step at ``g'`` maximises the rescaled objective. When both
    denominators are negative (log-likelihoods are negative) dividing by the
    absolute value keeps "larger is better".
    """
    if dg == 0 or dx == 0:
        raise ValueError("rescaling denominators must be nonzero")
    if (dg > 0) != (dx > 0):
        raise ValueError("rescaling denominators must share a sign")
    a, b = gamma * abs(dg), (1.0 - gamma) * abs(dx)
    return a / (a + b)


@dataclass
class EMConfig:
    n_communities: int
    gamma: float = 0.5
    tolerance: float = 1e-2
    check_interval: int = 10
    max_iterations: int = 500
    n_restarts: int = 1
    seed: int = 0
    symmetric: bool = False
    rescaling: RescaleCoefficients | None = None
    n_jobs: int | None = None

    def __post_init__(self):
        if self.n_communities < 1:
            raise ValueError("n_communities must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1 or self.check_interval < 1 or self.n_restarts < 1:
            raise ValueError("max_iterations, check_interval and n_restarts must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rescaling"] = self.rescaling.to_dict() if self.rescaling else None
        return d


@dataclass
class FitResult:
    params: ModelParams
    final_loglik: float
    loglik_trace: list[tuple[int, float]]
    converged: bool
    restart_index: int
    iterations_used: int
    gamma_effective: float = 0.0
    restart_logliks: list[float] = field(default_factory=list)
    n_degenerate_rows: int = 0
    n_log_clamps: int = 0


class TrainingData:
    """Training view of a graph, a design matrix and a holdout mask.

    Edges listed in the mask are removed; held-out zero entries only matter
    through the expected-mass correction of the structural term.
    """

    def __init__(self, graph: MultilayerGraph, design: DesignMatrix | None = None, mask: HoldoutMask | None = None):
        mask = mask if mask is not None else HoldoutMask.empty()
        mask.check(graph.n_nodes, graph.n_layers)
        N, L = graph.n_nodes, graph.n_layers
        self.n_nodes, self.n_layers = N, L
        self.graph, self.design, self.mask = graph, design, mask

        held = np.isin(graph.keys(), mask.keys(N)) if mask.n_triples else np.zeros(graph.n_entries, bool)
        order = np.argsort(graph.layer[~held], kind="stable")
        self.src = graph.src[~held][order]
        self.dst = graph.dst[~held][order]
        self.layer = graph.layer[~held][order]
        self.weight = graph.weight[~held][order].astype(float)
        self.layer_ptr = np.searchsorted(self.layer, np.arange(L + 1))
        self.out_deg = np.bincount(self.src, weights=self.weight, minlength=N)
        self.in_deg = np.bincount(self.dst, weights=self.weight, minlength=N)
        self.n_train_edges = int(self.src.size)
        self.total_weight = float(graph.total_weight)

        t = mask.triples
        order = np.argsort(t[:, 2], kind="stable")
        self.test_i, self.test_j, self.test_layer = t[order, 0], t[order, 1], t[order, 2]
        self.test_ptr = np.searchsorted(self.test_layer, np.arange(L + 1))

        if design is not None:
            if design.n_nodes != N:
                raise ValueError("design matrix and graph disagree on the number of nodes")
            self.z = np.asarray(design.assignment)
            self.n_categories = design.n_categories
            self.has_attr = np.ones(N, dtype=bool)
            self.has_attr[mask.attribute_nodes] = False
        else:
            self.z = np.zeros(N, dtype=np.int64)
            self.n_categories = 0
            self.has_attr = np.zeros(N, dtype=bool)
        self.attr_nodes = np.flatnonzero(self.has_attr)

    def layer_edges(self, a: int):
        s = slice(self.layer_ptr[a], self.layer_ptr[a + 1])
        return self.src[s], self.dst[s], self.weight[s]

    def layer_test(self, a: int):
        s = slice(self.test_ptr[a], self.test_ptr[a + 1])
        return self.test_i[s], self.test_j[s]


def _as_data(data_or_graph, design=None, mask=None) -> TrainingData:
    if isinstance(data_or_graph, TrainingData):
        return data_or_graph
    return TrainingData(data_or_graph, design, mask)


def _stream(seed: int, restart_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(restart_index)])


def init_params(
    n_nodes: int,
    n_layers: int,
    n_communities: int,
    n_categories: int,
    rng: np.random.Generator,
    symmetric: bool = False,
) -> ModelParams:
    """Uniform(0, 1) draws; U, V and beta rows are normalised to sum to one."""
    C = n_communities
    U = rng.random((n_nodes, C))
    U /= U.sum(axis=1, keepdims=True)
    V = rng.random((n_nodes, C))
    V /= V.sum(axis=1, keepdims=True)
    if symmetric:
        V = U.copy()
    W = rng.random((n_layers, C, C))
    beta = rng.random((C, n_categories))
    if n_categories:
        beta /= beta.sum(axis=1, keepdims=True)
    return ModelParams(U, V, W, beta)


def poisson_mean(params: ModelParams, i: int, j: int, alpha: int) -> float:
    return float(params.U[i] @ params.W[alpha] @ params.V[j])


def _pair_means(params: ModelParams, i: np.ndarray, j: np.ndarray, a: np.ndarray) -> np.ndarray:
    out = np.empty(len(i), dtype=float)
    for layer in np.unique(a):
        sel = a == layer
        UW = params.U @ params.W[layer]
        out[sel] = np.einsum("ek,ek->e", UW[i[sel]], params.V[j[sel]])
    return out


def predict_scores(params: ModelParams, triples) -> np.ndarray:
    """Expected edge counts for ``(i, j, layer)`` triples."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if t.shape[0] == 0:
        return np.zeros(0)
    return _pair_means(params, t[:, 0], t[:, 1], t[:, 2])


def attribute_probs(params: ModelParams, nodes=None) -> np.ndarray:
    if params.n_categories == 0:
        raise ValueError("model has no attribute categories")
    idx = slice(None) if nodes is None else np.asarray(nodes)
    return 0.5 * (params.U[idx] + params.V[idx]) @ params.beta


def predict_attributes(params: ModelParams, nodes=None) -> tuple[np.ndarray, np.ndarray]:
    """Most probable category per node (lowest index on ties) and the probabilities."""
    pi = np.atleast_2d(attribute_probs(params, nodes))
    return np.argmax(pi, axis=1), pi


def _h(params: ModelParams, z: np.ndarray, nodes: np.ndarray) -> tuple[np.ndarray, int]:
    num = params.beta[:, z[nodes]].T * (params.U[nodes] + params.V[nodes])
    den = num.sum(axis=1)
    bad = den <= 0
    out = np.empty_like(num)
    out[~bad] = num[~bad] / den[~bad, None]
    out[bad] = 1.0 / params.n_communities
    return out, int(bad.sum())


def e_step_h(params: ModelParams, design: DesignMatrix, train_nodes=None) -> np.ndarray:
    """Attribute responsibilities as an N x C table.

    Row ``i`` is the distribution over communities for the observed category
    of node ``i``; rows of nodes outside ``train_nodes`` are zero. A zero
    normaliser gives the uniform row.
    """
    N = params.n_nodes
    nodes = np.arange(N) if train_nodes is None else np.asarray(sorted(train_nodes), dtype=np.int64)
    h = np.zeros((N, params.n_communities))
    if nodes.size:
        h[nodes], _ = _h(params, np.asarray(design.assignment), nodes)
    return h


def e_step_rho(params: ModelParams, i: int, j: int, alpha: int) -> np.ndarray:
    r = np.outer(params.U[i], params.V[j]) * params.W[alpha]
    s = r.sum()
    if s <= 0:
        return np.full_like(r, 1.0 / r.size)
    return r / s


@dataclass
class StructuralStats:
    """Sums of ``A * rho`` over training edges.

    ``out[i, k] = sum_{j,l,a} A_ija rho_ijkl``, ``inc[j, l] = sum_{i,k,a} A_ija rho_ijkl``
    and ``pair[a, k, l] = sum_{i,j} A_ija rho_ijkl``.
    """

    out: np.ndarray
    inc: np.ndarray
    pair: np.ndarray
    n_zero_mean: int = 0


def _bincount_rows(idx: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    return np.stack([np.bincount(idx, weights=vals[:, k], minlength=n) for k in range(vals.shape[1])], axis=1)


def structural_stats(params: ModelParams, data: TrainingData) -> StructuralStats:
    U, V, W = params.U, params.V, params.W
    N, C = U.shape
    L = data.n_layers
    S_out = np.zeros((N, C))
    S_in = np.zeros((N, C))
    T = np.zeros((L, C, C))
    n_zero = 0
    for a in range(L):
        s, d, w = data.layer_edges(a)
        if s.size == 0:
            continue
        VWt = V @ W[a].T  # [j, k] = sum_l v_jl w_kl
        UW = U @ W[a]  # [i, l] = sum_k u_ik w_kl
        mu = np.einsum("ek,ek->e", U[s], VWt[d])
        zero = mu <= 0
        q = np.where(zero, 0.0, w / np.where(zero, 1.0, mu))
        S_out += U * _bincount_rows(s, q[:, None] * VWt[d], N)
        S_in += V * _bincount_rows(d, q[:, None] * UW[s], N)
        T[a] = W[a] * (U[s].T @ (q[:, None] * V[d]))
        if zero.any():
            # responsibilities of an edge with zero expected count are uniform
            n_zero += int(zero.sum())
            wz = w[zero]
            S_out += _bincount_rows(s[zero], np.repeat(wz[:, None] / C, C, axis=1), N)
            S_in += _bincount_rows(d[zero], np.repeat(wz[:, None] / C, C, axis=1), N)
            T[a] += wz.sum() / (C * C)
    return StructuralStats(S_out, S_in, T, n_zero)


def m_step_beta(h: np.ndarray, design: DesignMatrix, train_nodes=None, previous: np.ndarray | None = None) -> np.ndarray:
    """``beta[k, z]`` proportional to the responsibility mass of category z in community k."""
    z = np.asarray(design.assignment)
    nodes = np.arange(design.n_nodes) if train_nodes is None else np.asarray(sorted(train_nodes), dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("beta update needs at least one training node")
    beta, _ = _beta_from_h(h[nodes], z[nodes], design.n_categories, previous)
    return beta


def _beta_from_h(h_rows: np.ndarray, z_rows: np.ndarray, Z: int, previous=None) -> tuple[np.ndarray, int]:
    C = h_rows.shape[1]
    B = np.stack([np.bincount(z_rows, weights=h_rows[:, k], minlength=Z) for k in range(C)])
    tot = B.sum(axis=1)
    bad = tot <= 0
    B[~bad] /= tot[~bad, None]
    if bad.any():
        B[bad] = previous[bad] if previous is not None else 1.0 / Z
    return B, int(bad.sum())


def _membership_update(prev, h_term, S, deg, has_attr, gamma) -> tuple[np.ndarray, int]:
    num = gamma * h_term + (1.0 - gamma) * S
    den = gamma * has_attr + (1.0 - gamma) * deg
    ok = den > 0
    new = prev.copy()
    new[ok] = num[ok] / den[ok, None]
    return new, int((~ok).sum())


def _h_table(params: ModelParams, data: TrainingData) -> tuple[np.ndarray, int]:
    h = np.zeros((data.n_nodes, params.n_communities))
    n_bad = 0
    if data.attr_nodes.size and params.n_categories:
        h[data.attr_nodes], n_bad = _h(params, data.z, data.attr_nodes)
    return h, n_bad


def m_step_u(params, h, graph, mask=None, gamma=0.5, design=None, stats=None) -> np.ndarray:
    """Outgoing-membership update; rows with a zero normaliser keep their value."""
    data = _as_data(graph, design, mask)
    stats = stats if stats is not None else structural_stats(params, data)
    U, _ = _membership_update(params.U, h, stats.out, data.out_deg, data.has_attr, gamma)
    return U


def m_step_v(params, h, graph, mask=None, gamma=0.5, design=None, stats=None) -> np.ndarray:
    """Incoming-membership update, the mirror of :func:`m_step_u`."""
    data = _as_data(graph, design, mask)
    stats = stats if stats is not None else structural_stats(params, data)
    V, _ = _membership_update(params.V, h, stats.inc, data.in_deg, data.has_attr, gamma)
    return V


def _held_out_products(U, V, data: TrainingData) -> np.ndarray:
    """``sum_{(i,j) held out in layer a} outer(U[i], V[j])`` for every layer."""
    C = U.shape[1]
    H = np.zeros((data.n_layers, C, C))
    for a in range(data.n_layers):
        ti, tj = data.layer_test(a)
        if ti.size:
            H[a] = U[ti].T @ V[tj]
    return H


def m_step_w(params, graph, mask=None, stats=None, design=None) -> np.ndarray:
    """Affinity update using the current U and V in the denominator."""
    data = _as_data(graph, design, mask)
    stats = stats if stats is not None else structural_stats(params, data)
    return _w_from_stats(params.U, params.V, stats.pair, data)


def _w_from_stats(U, V, pair, data: TrainingData) -> np.ndarray:
    # full product minus the held-out cells, never a dense pass over N^2 L
    den = np.outer(U.sum(axis=0), V.sum(axis=0))[None, :, :] - _held_out_products(U, V, data)
    W = np.zeros_like(pair)
    ok = (den > 0) & (pair > 0)
    W[ok] = pair[ok] / den[ok]
    return W


@dataclass
class StepInfo:
    n_degenerate_rows: int = 0
    n_uniform_h: int = 0
    n_zero_mean_edges: int = 0


def em_iteration(params: ModelParams, data: TrainingData, gamma: float, symmetric: bool = False) -> tuple[ModelParams, StepInfo]:
    """One E-step followed by the beta, U, V, W updates.

    Responsibilities come from the incoming parameters; the W denominator
    uses the freshly updated U and V.
    """
    info = StepInfo()
    h, info.n_uniform_h = _h_table(params, data)
    need_structure = gamma < 1.0
    if need_structure:
        stats = structural_stats(params, data)
        info.n_zero_mean_edges = stats.n_zero_mean
    else:
        N, C = params.U.shape
        stats = StructuralStats(np.zeros((N, C)), np.zeros((N, C)), np.zeros_like(params.W))

    beta = params.beta
    if gamma > 0.0 and params.n_categories:
        beta, nb = _beta_from_h(h[data.attr_nodes], data.z[data.attr_nodes], params.n_categories, params.beta)
        info.n_degenerate_rows += nb

    if symmetric:
        U, nu = _membership_update(
            params.U, h, stats.out + stats.inc, data.out_deg + data.in_deg, data.has_attr, gamma
        )
        V = U
        info.n_degenerate_rows += nu
    else:
        U, nu = _membership_update(params.U, h, stats.out, data.out_deg, data.has_attr, gamma)
        V, nv = _membership_update(params.V, h, stats.inc, data.in_deg, data.has_attr, gamma)
        info.n_degenerate_rows += nu + nv

    W = params.W
    if need_structure:
        W = _w_from_stats(U, V, stats.pair, data)
    return ModelParams(U, V.copy() if symmetric else V, W, beta), info


@dataclass
class LikelihoodTerms:
    structural: float
    attribute: float
    n_clamped: int


def likelihood_terms(params: ModelParams, data: TrainingData) -> LikelihoodTerms:
    """Structural and attribute log-likelihoods over training entries.

    The ``log A!`` constants are dropped. Logs of zero are clamped at ``EPS``.
    """
    U, V, W = params.U, params.V, params.W
    LG = 0.0
    clamped = 0
    mass = 0.0
    su, sv = U.sum(axis=0), V.sum(axis=0)
    for a in range(data.n_layers):
        s, d, w = data.layer_edges(a)
        UW = U @ W[a]
        if s.size:
            mu = np.einsum("ek,ek->e", UW[s], V[d])
            small = mu < EPS
            clamped += int(small.sum())
            LG += float(w @ np.log(np.maximum(mu, EPS)))
        mass += float(su @ W[a] @ sv)
        ti, tj = data.layer_test(a)
        if ti.size:
            mass -= float(np.einsum("ek,ek->", UW[ti], V[tj]))
    LG -= mass

    LX = 0.0
    if data.attr_nodes.size and params.n_categories:
        nodes = data.attr_nodes
        pi = 0.5 * np.einsum("nk,kn->n", U[nodes] + V[nodes], params.beta[:, data.z[nodes]])
        small = pi < EPS
        clamped += int(small.sum())
        LX = float(np.log(np.maximum(pi, EPS)).sum())
    return LikelihoodTerms(LG, LX, clamped)


def log_likelihood(params, graph, design=None, mask=None, gamma=0.5, rescaling: RescaleCoefficients | None = None) -> float:
    """``(1 - gamma) * L_G + gamma * L_X`` over training entries.

    With ``rescaling`` each term is divided by the absolute value of its
    denominator first.
    """
    data = _as_data(graph, design, mask)
    terms = likelihood_terms(params, data)
    if terms.n_clamped:
        logger.warning("clamped %d zero probabilities inside log", terms.n_clamped)
    return _combine(terms, data, gamma, rescaling)


def _combine(terms: LikelihoodTerms, data: TrainingData, gamma: float, rescaling) -> float:
    lg, lx = terms.structural, terms.attribute
    if rescaling is not None:
        dg, dx = rescaling.denominators(data.n_nodes, data.total_weight, data.n_categories)
        effective_gamma(gamma, dg, dx)  # validates the denominators
        lg, lx = lg / abs(dg), lx / abs(dx)
    val = 0.0
    if gamma < 1.0:
        val += (1.0 - gamma) * lg
    if gamma > 0.0:
        val += gamma * lx
    return val


def _objective(params, data, gamma, rescaling) -> tuple[float, int]:
    terms = likelihood_terms(params, data)
    return _combine(terms, data, gamma, rescaling), terms.n_clamped


def _check_inputs(data: TrainingData, gamma: float) -> None:
    if gamma < 1.0 and data.n_train_edges == 0:
        raise ValueError("gamma < 1 needs at least one training edge")
    if gamma > 0.0:
        if data.design is None:
            raise ValueError("gamma > 0 needs a design matrix")
        if data.attr_nodes.size == 0:
            raise ValueError("gamma > 0 needs at least one training attribute")


def _single_run(data: TrainingData, config: EMConfig, restart_index: int, callback=None) -> FitResult:
    rng = _stream(config.seed, restart_index)
    params = init_params(
        data.n_nodes, data.n_layers, config.n_communities, data.n_categories, rng, symmetric=config.symmetric
    )
    g = config.gamma
    if config.rescaling is not None:
        g = effective_gamma(config.gamma, *config.rescaling.denominators(data.n_nodes, data.total_weight, data.n_categories))

    loglik, clamps = _objective(params, data, config.gamma, config.rescaling)
    trace = [(0, loglik)]
    passes = 0
    converged = False
    degenerate = 0
    it = 0
    for it in range(1, config.max_iterations + 1):
        params, info = em_iteration(params, data, g, config.symmetric)
        degenerate += info.n_degenerate_rows
        if callback is not None:
            callback(it, params, info)
        if it % config.check_interval == 0 or it == config.max_iterations:
            new, c = _objective(params, data, config.gamma, config.rescaling)
            clamps += c
            trace.append((it, new))
            if not math.isfinite(new):
                loglik = new
                break
            passes = passes + 1 if abs(new - loglik) < config.tolerance else 0
            loglik = new
            if passes >= 2:
                converged = True
                break
    return FitResult(
        params=params,
        final_loglik=loglik,
        loglik_trace=trace,
        converged=converged,
        restart_index=restart_index,
        iterations_used=it,
        gamma_effective=g,
        n_degenerate_rows=degenerate,
        n_log_clamps=clamps,
    )


def _n_jobs(config: EMConfig) -> int:
    if config.n_jobs:
        return max(1, int(config.n_jobs))
    env = os.environ.get("MTCOV_THREADS")
    return max(1, int(env)) if env else 1


def fit(graph, design: DesignMatrix | None, mask: HoldoutMask | None, config: EMConfig) -> FitResult:
    """Run ``config.n_restarts`` EM restarts and keep the best final objective.

    Each restart draws from its own stream seeded by ``(seed, restart)``, so
    the result does not depend on how restarts are scheduled.
    """
    data = _as_data(graph, design, mask)
    _check_inputs(data, config.gamma)
    t0 = time.perf_counter()
    jobs = _n_jobs(config)
    if jobs > 1 and config.n_restarts > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(lambda r: _single_run(data, config, r), range(config.n_restarts)))
    else:
        runs = [_single_run(data, config, r) for r in range(config.n_restarts)]

    finals = [r.final_loglik for r in runs]
    finite = [r for r in runs if math.isfinite(r.final_loglik)]
    if not finite:
        raise FitError(
            "all restarts diverged",
            {"final_logliks": finals, "iterations": [r.iterations_used for r in runs]},
        )
    # max() keeps the first maximal element, i.e. the lowest restart index on ties
    best = max(finite, key=lambda r: r.final_loglik)
    best.restart_logliks = finals
    logger.debug("fit: %d restarts in %.2fs, best %d", config.n_restarts, time.perf_counter() - t0, best.restart_index)
    return best


def _write_matrix(path: Path, M: np.ndarray) -> None:
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def _read_matrix(path: Path, ncols: int | None = None) -> np.ndarray:
    M = np.loadtxt(path, delimiter=",", ndmin=2)
    if M.size == 0 and ncols is not None:
        return M.reshape(-1, ncols)
    return M


def save_params(params: ModelParams, out_dir: str | Path) -> None:
    """U.csv, V.csv, beta.csv and W.csv (one commented block per layer)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix(out / "U.csv", params.U)
    _write_matrix(out / "V.csv", params.V)
    with open(out / "beta.csv", "w") as fh:
        if params.n_categories:
            np.savetxt(fh, params.beta, delimiter=",", fmt="%.17g")
    with open(out / "W.csv", "w") as fh:
        for a in range(params.n_layers):
            fh.write(f"# layer {a}\n")
            np.savetxt(fh, params.W[a], delimiter=",", fmt="%.17g")


def load_params(in_dir: str | Path) -> ModelParams:
    d = Path(in_dir)
    U = _read_matrix(d / "U.csv")
    V = _read_matrix(d / "V.csv")
    C = U.shape[1]
    text = (d / "beta.csv").read_text().strip()
    beta = _read_matrix(d / "beta.csv") if text else np.zeros((C, 0))
    blocks: list[list[list[float]]] = []
    for line in (d / "W.csv").read_text().splitlines():
        line = line.strip()
        if line.startswith("#"):
            blocks.append([])
        elif line:
            blocks[-1].append([float(x) for x in line.split(",")])
    W = np.array(blocks, dtype=float).reshape(len(blocks), C, C)
    return ModelParams(U, V, W, beta.reshape(C, -1))


def save_fit(result: FitResult, out_dir: str | Path, config: EMConfig | None = None, extra: dict | None = None) -> None:
    out = Path(out_dir)
    save_params(result.params, out)
    meta = {
        "final_loglik": result.final_loglik,
        "loglik_trace": [[int(i), float(v)] for i, v in result.loglik_trace],
        "converged": result.converged,
        "restart_index": result.restart_index,
        "iterations_used": result.iterations_used,
        "gamma_effective": result.gamma_effective,
        "restart_logliks": result.restart_logliks,
        "n_degenerate_rows": result.n_degenerate_rows,
        "n_log_clamps": result.n_log_clamps,
        "config": config.to_dict() if config else None,
    }
    if extra:
        meta.update(extra)
    with open(out / "fit.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_fit(in_dir: str | Path) -> FitResult:
    d = Path(in_dir)
    with open(d / "fit.json") as fh:
        meta = json.load(fh)
    return FitResult(
        params=load_params(d),
        final_loglik=meta["final_loglik"],
        loglik_trace=[(int(i), float(v)) for i, v in meta["loglik_trace"]],
        converged=meta["converged"],
        restart_index=meta["restart_index"],
        iterations_used=meta["iterations_used"],
        gamma_effective=meta.get("gamma_effective", 0.0),
        restart_logliks=meta.get("restart_logliks", []),
        n_degenerate_rows=meta.get("n_degenerate_rows", 0),
        n_log_clamps=meta.get("n_log_clamps", 0),
    )
