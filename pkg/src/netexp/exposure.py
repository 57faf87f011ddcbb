"""Peer-exposure measures and Monte Carlo diagnostics of their distributions.

The default exposure is the fraction of a node's peers that are treated
(row-normalized adjacency times the treatment vector); isolated nodes get
exposure 0.  An un-normalized treated-peer count is also provided since no
single exposure measure is canonical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DesignError
from .netgraph import Graph
from .randomizer import (
    Design,
    _EDGE_TYPES,
    draw_batch,
    replication_salts,
)

_CHUNK_CELLS = 4_000_000  # draws per chunk = _CHUNK_CELLS / n


@dataclass(frozen=True, eq=False)
class ExposureVector:
    """Per-node exposure; in [0,1] when the source vector is binary."""

    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))

    def __len__(self):
        return self.t.shape[0]


def _as_node_vector(graph: Graph, vec, name: str) -> np.ndarray:
    arr = np.asarray(getattr(vec, "z", vec), dtype=np.float64)
    if arr.shape != (graph.n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({graph.n},)")
    return arr


def fraction_treated_peers(graph: Graph, z) -> ExposureVector:
    """T_i = sum_j row_weight(i,j) * z_j; 0 for isolated nodes."""
    arr = _as_node_vector(graph, z, "z")
    return ExposureVector(graph.row_normalized() @ arr)


def fraction_adopting_peers(graph: Graph, d) -> ExposureVector:
    """Same weighted mean over peers, applied to a (possibly real) behavior."""
    arr = _as_node_vector(graph, d, "d")
    return ExposureVector(graph.row_normalized() @ arr)


def count_treated_peers(graph: Graph, z) -> ExposureVector:
    """Number of treated peers, ignoring edge weights."""
    arr = _as_node_vector(graph, z, "z")
    adj = graph.adjacency().copy()
    adj.data = (adj.data > 0).astype(np.float64)
    return ExposureVector(adj @ arr)


def exposure_batch(graph: Graph, Z: np.ndarray) -> np.ndarray:
    """Row-wise fraction_treated_peers for stacked draws; shape like Z."""
    rownorm = graph.row_normalized()
    return (rownorm @ Z.T.astype(np.float64)).T


@dataclass(frozen=True, eq=False)
class Histogram:
    """Distribution of one node's exposure across replications.

    kind "exact" lists the attainable values themselves (unit or equal edge
    weights, degree <= 20); kind "binned" uses 50 uniform bins on [0,1] and
    support holds the bin left edges.
    """

    kind: str
    support: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True, eq=False)
class ExposureDistribution:
    mean: np.ndarray
    var: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    histograms: tuple
    replications: int


def exposure_distribution(design: Design, graph: Graph, replications: int,
                          salt: str) -> ExposureDistribution:
    """Monte Carlo law of T_i under the design, replication r salted salt#r.

    Pr(T_i = 0) and Pr(T_i = 1) are computed from integer treated-peer
    counts (no treated peer / all peers treated), so they are exact even
    though T_i itself is a float sum.  Isolated nodes report p1 = 0.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    if isinstance(design, _EDGE_TYPES):
        raise DesignError("exposure distributions cover subject-level designs only")
    n = graph.n
    rownorm = graph.row_normalized()
    adj = graph.adjacency().copy()
    adj.data = (adj.data > 0).astype(np.float64)
    degree = np.asarray(adj.sum(axis=1)).ravel().astype(np.int64)

    # exact support requires equal positive weights within the row
    exact = np.zeros(n, dtype=bool)
    for i in range(n):
        lo, hi = graph.adjacency().indptr[i], graph.adjacency().indptr[i + 1]
        wts = graph.adjacency().data[lo:hi]
        if degree[i] <= 20 and (degree[i] == 0 or np.all(wts == wts[0])):
            exact[i] = True

    sums = np.zeros(n)
    sumsq = np.zeros(n)
    cnt0 = np.zeros(n, dtype=np.int64)
    cnt1 = np.zeros(n, dtype=np.int64)
    exact_hist = np.zeros((n, 22), dtype=np.int64)
    binned_hist = np.zeros((n, 50), dtype=np.int64)

    chunk = max(1, min(replications, _CHUNK_CELLS // max(n, 1)))
    done = 0
    while done < replications:
        take = min(chunk, replications - done)
        salts = replication_salts(salt, take, start=done)
        Z = draw_batch(design, graph, salts).astype(np.float64)
        T = (rownorm @ Z.T).T
        C = np.rint((adj @ Z.T).T).astype(np.int64)
        sums += T.sum(axis=0)
        sumsq += (T * T).sum(axis=0)
        cnt0 += (C == 0).sum(axis=0)
        cnt1 += ((C == degree) & (degree > 0)).sum(axis=0)
        for i in range(n):
            if exact[i]:
                exact_hist[i, :] += np.bincount(C[:, i], minlength=22)[:22]
            else:
                idx = np.clip((T[:, i] * 50).astype(np.int64), 0, 49)
                binned_hist[i, :] += np.bincount(idx, minlength=50)[:50]
        done += take

    mean = sums / replications
    var = np.maximum(sumsq / replications - mean * mean, 0.0)
    histograms = []
    for i in range(n):
        if exact[i]:
            if degree[i] == 0:
                support, probs = np.array([0.0]), np.array([1.0])
            else:
                support = np.arange(degree[i] + 1) / degree[i]
                probs = exact_hist[i, :degree[i] + 1] / replications
            histograms.append(Histogram("exact", support, probs))
        else:
            histograms.append(Histogram("binned", np.linspace(0, 1, 51)[:-1],
                                        binned_hist[i] / replications))
    return ExposureDistribution(
        mean=mean,
        var=var,
        p0=cnt0 / replications,
        p1=cnt1 / replications,
        histograms=tuple(histograms),
        replications=replications,
    )


@dataclass(frozen=True, eq=False)
class OverdispersionResult:
    """Exposure-variance ratios of a design against a baseline design.

    per_node elements are NaN where the baseline variance is 0 (ratio
    undefined); mean_ratio divides the across-node mean variances, which is
    stable when single nodes are nearly degenerate.
    """

    per_node: np.ndarray
    mean_ratio: float
    design_var: np.ndarray
    baseline_var: np.ndarray
    replications: int


def overdispersion_check(design: Design, baseline: Design, graph: Graph,
                         replications: int, salt: str) -> OverdispersionResult:
    """Var of T_i under design relative to baseline, shared R, distinct salts."""
    dist_d = exposure_distribution(design, graph, replications, f"{salt}.design")
    dist_b = exposure_distribution(baseline, graph, replications, f"{salt}.base")
    with np.errstate(divide="ignore", invalid="ignore"):
        per_node = np.where(dist_b.var > 0, dist_d.var / dist_b.var, np.nan)
    base_mean = dist_b.var.mean()
    mean_ratio = float(dist_d.var.mean() / base_mean) if base_mean > 0 else float("nan")
    return OverdispersionResult(
        per_node=per_node,
        mean_ratio=mean_ratio,
        design_var=dist_d.var,
        baseline_var=dist_b.var,
        replications=replications,
    )
