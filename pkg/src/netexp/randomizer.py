"""Randomization designs over subjects and edges, with conditional re-draws.

Every draw is a pure function of (design, graph, salt): treatment for unit
u comes from hash_uniform(salt, u) comparisons, so assignment is stateless
and replication r of any Monte Carlo procedure is reproduced by the salt
convention salt + "#" + r.  Conditional draws (used by inference to
hold focal units at their observed treatment) sample directly where the
design factorizes over units and fall back to rejection sampling with
per-attempt salts salt + "#a" + attempt elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import ConditionalDrawError, DesignError
from .hashing import hash_uniform, uniforms, uniforms_grid
from .netgraph import ClusterAssignment, Graph, partition


def _check_prob(p: float, name: str = "p") -> None:
    if not (0.0 <= p <= 1.0):
        raise DesignError(f"{name}={p} outside [0,1]")


@dataclass(frozen=True)
class IidBernoulli:
    """Independent Bernoulli(p) per node."""

    p: float

    def __post_init__(self):
        _check_prob(self.p)


@dataclass(frozen=True)
class CompleteRandomization:
    """Exactly n1 treated nodes, uniformly at random (rank-by-hash)."""

    n1: int

    def __post_init__(self):
        if self.n1 < 0:
            raise DesignError(f"treated count {self.n1} negative")


@dataclass(frozen=True)
class ClusterBernoulli:
    """Whole clusters treated or not, independently with probability p."""

    clusters: ClusterAssignment
    p: float

    def __post_init__(self):
        _check_prob(self.p)
        if not isinstance(self.clusters, ClusterAssignment):
            raise DesignError("cluster design requires a ClusterAssignment")


@dataclass(frozen=True)
class TwoStageUniform:
    """Per-cluster treatment share drawn Uniform(0,1), then iid within."""

    clusters: ClusterAssignment

    def __post_init__(self):
        if not isinstance(self.clusters, ClusterAssignment):
            raise DesignError("cluster design requires a ClusterAssignment")


@dataclass(frozen=True)
class GraphCluster:
    """Partition the graph into k clusters, then cluster-level Bernoulli(p)."""

    k: int
    p: float
    partition_seed: int

    def __post_init__(self):
        _check_prob(self.p)
        if self.k < 1:
            raise DesignError(f"cluster count {self.k} must be at least 1")


@dataclass(frozen=True)
class EdgeIid:
    """Independent Bernoulli(p) per edge."""

    p: float

    def __post_init__(self):
        _check_prob(self.p)


@dataclass(frozen=True)
class SenderClustered:
    """One Bernoulli(p) per sender; all its out-edges share the value."""

    p: float

    def __post_init__(self):
        _check_prob(self.p)


@dataclass(frozen=True)
class RecipientClustered:
    """One Bernoulli(p) per recipient; all its in-edges share the value."""

    p: float

    def __post_init__(self):
        _check_prob(self.p)


SubjectDesign = Union[IidBernoulli, CompleteRandomization, ClusterBernoulli,
                      TwoStageUniform, GraphCluster]
EdgeDesign = Union[EdgeIid, SenderClustered, RecipientClustered]
Design = Union[SubjectDesign, EdgeDesign]

_SUBJECT_TYPES = (IidBernoulli, CompleteRandomization, ClusterBernoulli,
                  TwoStageUniform, GraphCluster)
_EDGE_TYPES = (EdgeIid, SenderClustered, RecipientClustered)


@dataclass(frozen=True, eq=False)
class TreatmentVector:
    """Realized per-node treatment in {0,1}."""

    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.uint8))

    def __len__(self):
        return self.z.shape[0]


@dataclass(frozen=True, eq=False)
class EdgeTreatment:
    """Realized per-edge treatment in {0,1}, aligned with graph.edges."""

    w: np.ndarray
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.uint8))
        if self.w.shape[0] != len(self.edges):
            raise ValueError("one treatment value per edge required")

    def __getitem__(self, key):
        src, dst = key
        for idx, (s, d, _) in enumerate(self.edges):
            if (s, d) == (src, dst):
                return int(self.w[idx])
        raise KeyError(key)

    def as_dict(self) -> dict:
        return {(s, d): int(v) for (s, d, _), v in zip(self.edges, self.w)}


def _unit_strs(n: int) -> list[str]:
    return [str(i) for i in range(n)]


def _cluster_strs(k: int) -> list[str]:
    return [f"c{c}" for c in range(k)]


def _resolve_clusters(design, graph: Graph) -> ClusterAssignment:
    if isinstance(design, GraphCluster):
        return partition(graph, design.k, design.partition_seed)
    clusters = design.clusters
    if clusters.labels.shape[0] != graph.n:
        raise DesignError(
            f"cluster labels cover {clusters.labels.shape[0]} nodes, graph has {graph.n}"
        )
    return clusters


def draw(design: Design, graph: Graph, salt: str):
    """One realized randomization.

    Returns a TreatmentVector for subject-level designs and an
    EdgeTreatment for edge-level designs.
    """
    if isinstance(design, _EDGE_TYPES):
        return _draw_edges(design, graph, salt)
    Z = draw_batch(design, graph, [salt])
    return TreatmentVector(Z[0])


def draw_batch(design: SubjectDesign, graph: Graph, salts: Sequence[str]) -> np.ndarray:
    """Stacked treatment draws, one row per salt; shape (len(salts), n)."""
    if isinstance(design, _EDGE_TYPES):
        raise DesignError("draw_batch covers subject-level designs only")
    n = graph.n
    salts = list(salts)
    if isinstance(design, IidBernoulli):
        return (uniforms_grid(salts, _unit_strs(n)) < design.p).astype(np.uint8)
    if isinstance(design, CompleteRandomization):
        if design.n1 > n:
            raise DesignError(f"treated count {design.n1} exceeds {n} nodes")
        h = uniforms_grid(salts, _unit_strs(n))
        Z = np.zeros((len(salts), n), dtype=np.uint8)
        if design.n1:
            picked = np.argpartition(h, design.n1 - 1, axis=1)[:, :design.n1]
            np.put_along_axis(Z, picked, 1, axis=1)
        return Z
    if isinstance(design, (ClusterBernoulli, GraphCluster)):
        clusters = _resolve_clusters(design, graph)
        pc = uniforms_grid(salts, _cluster_strs(clusters.k)) < design.p
        return pc[:, clusters.labels].astype(np.uint8)
    if isinstance(design, TwoStageUniform):
        clusters = _resolve_clusters(design, graph)
        shares = uniforms_grid(salts, _cluster_strs(clusters.k))
        zu = uniforms_grid([f"{s}.u" for s in salts], _unit_strs(n))
        return (zu < shares[:, clusters.labels]).astype(np.uint8)
    raise DesignError(f"unknown design {design!r}")


def _draw_edges(design: EdgeDesign, graph: Graph, salt: str) -> EdgeTreatment:
    if not graph.edges:
        raise DesignError("edge-level design on a graph with no edges")
    if isinstance(design, EdgeIid):
        units = [f"{s}-{d}" for s, d, _ in graph.edges]
    elif isinstance(design, SenderClustered):
        units = [str(s) for s, _, _ in graph.edges]
    else:
        units = [str(d) for _, d, _ in graph.edges]
    w = (uniforms(salt, units) < design.p).astype(np.uint8)
    return EdgeTreatment(w, graph.edges)


def replication_salts(salt: str, count: int, start: int = 0) -> list[str]:
    """Salts for Monte Carlo re-draws r = start..start+count-1."""
    return [f"{salt}#{r}" for r in range(start, start + count)]


def _validate_fixed(fixed: Mapping[int, int], n: int) -> tuple[np.ndarray, np.ndarray]:
    nodes = np.array(sorted(fixed), dtype=np.int64)
    if nodes.size and (nodes[0] < 0 or nodes[-1] >= n):
        raise ConditionalDrawError(f"fixed node outside [0,{n})")
    vals = np.array([int(fixed[int(i)]) for i in nodes], dtype=np.uint8)
    if not np.isin(vals, (0, 1)).all():
        raise ConditionalDrawError("fixed values must be 0 or 1")
    return nodes, vals


def conditional_draw(design: SubjectDesign, graph: Graph, salt: str,
                     fixed: Mapping[int, int], max_attempts: int = 10_000) -> TreatmentVector:
    """Draw from the design conditional on the fixed coordinates.

    IidBernoulli and CompleteRandomization condition exactly by direct
    sampling over the non-fixed units.  Cluster and two-stage designs use
    rejection sampling over whole-design draws with per-attempt salts.
    """
    Z = conditional_draw_batch(design, graph, [salt], fixed, max_attempts)
    return TreatmentVector(Z[0])


def conditional_draw_batch(design: SubjectDesign, graph: Graph, salts: Sequence[str],
                           fixed: Mapping[int, int], max_attempts: int = 10_000) -> np.ndarray:
    if isinstance(design, _EDGE_TYPES):
        raise DesignError("conditional draws cover subject-level designs only")
    n = graph.n
    salts = list(salts)
    nodes, vals = _validate_fixed(fixed, n)

    if isinstance(design, IidBernoulli):
        Z = draw_batch(design, graph, salts)
        Z[:, nodes] = vals
        return Z

    if isinstance(design, CompleteRandomization):
        if design.n1 > n:
            raise DesignError(f"treated count {design.n1} exceeds {n} nodes")
        remaining = design.n1 - int(vals.sum())
        free = n - nodes.size
        if remaining < 0 or remaining > free:
            raise ConditionalDrawError(
                f"fixed values need {int(vals.sum())} treated, design allows {design.n1}"
            )
        h = uniforms_grid(salts, _unit_strs(n))
        h[:, nodes] = np.inf
        Z = np.zeros((len(salts), n), dtype=np.uint8)
        if remaining:
            picked = np.argpartition(h, remaining - 1, axis=1)[:, :remaining]
            np.put_along_axis(Z, picked, 1, axis=1)
        Z[:, nodes] = vals
        return Z

    if isinstance(design, (ClusterBernoulli, GraphCluster)):
        clusters = _resolve_clusters(design, graph)
        base = ClusterBernoulli(clusters, design.p)
        fixed_labels = clusters.labels[nodes]
        for lab in np.unique(fixed_labels):
            lab_vals = vals[fixed_labels == lab]
            if lab_vals.min() != lab_vals.max():
                raise ConditionalDrawError(
                    f"cluster {lab} has fixed nodes with conflicting values"
                )
        return _rejection_batch(base, graph, salts, nodes, vals, max_attempts)

    if isinstance(design, TwoStageUniform):
        clusters = _resolve_clusters(design, graph)
        return _rejection_batch(TwoStageUniform(clusters), graph, salts, nodes, vals,
                                max_attempts)

    raise DesignError(f"unknown design {design!r}")


def _rejection_batch(design, graph, salts, nodes, vals, max_attempts):
    # waves: attempt a re-draws every not-yet-accepted replication with its
    # own salt, so each replication is an independent rejection sampler
    if max_attempts < 1:
        raise ConditionalDrawError("max_attempts must be at least 1")
    R = len(salts)
    out = np.zeros((R, graph.n), dtype=np.uint8)
    pending = np.arange(R)
    tried = 0
    for attempt in range(max_attempts):
        wave = [f"{salts[r]}#a{attempt}" for r in pending]
        Z = draw_batch(design, graph, wave)
        tried += len(pending)
        ok = (Z[:, nodes] == vals).all(axis=1) if nodes.size else np.ones(len(pending), bool)
        out[pending[ok]] = Z[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return out
    accepted = R - pending.size
    rate = accepted / tried if tried else 0.0
    raise ConditionalDrawError(
        f"rejection budget exhausted after {max_attempts} attempts for "
        f"{pending.size} of {R} draws (acceptance rate ~{rate:.2e})"
    )


_TAGS = {
    IidBernoulli: "iid_bernoulli",
    CompleteRandomization: "complete",
    ClusterBernoulli: "cluster_bernoulli",
    TwoStageUniform: "two_stage",
    GraphCluster: "graph_cluster",
    EdgeIid: "edge_iid",
    SenderClustered: "sender_clustered",
    RecipientClustered: "recipient_clustered",
}
_BY_TAG = {tag: cls for cls, tag in _TAGS.items()}


def _labels_rle(labels: np.ndarray) -> str:
    runs = []
    i = 0
    while i < labels.shape[0]:
        j = i
        while j < labels.shape[0] and labels[j] == labels[i]:
            j += 1
        runs.append(f"{int(labels[i])}x{j - i}")
        i = j
    return ",".join(runs)


def _labels_from_rle(text: str) -> np.ndarray:
    out = []
    for run in text.split(","):
        lab, _, count = run.partition("x")
        out.extend([int(lab)] * int(count))
    return np.array(out, dtype=np.int64)


def design_description(design: Design) -> str:
    """One-line text form listing every parameter; parseable back."""
    tag = _TAGS[type(design)]
    parts = [tag]
    for f in fields(design):
        value = getattr(design, f.name)
        if isinstance(value, ClusterAssignment):
            parts.append(f"k={value.k}")
            parts.append(f"labels={_labels_rle(value.labels)}")
        elif isinstance(value, float):
            parts.append(f"{f.name}={value!r}")
        else:
            parts.append(f"{f.name}={value}")
    return " ".join(parts)


def parse_design_description(text: str) -> Design:
    """Inverse of design_description."""
    parts = text.split()
    if not parts or parts[0] not in _BY_TAG:
        raise DesignError(f"unknown design description {text!r}")
    cls = _BY_TAG[parts[0]]
    kv = {}
    for part in parts[1:]:
        key, _, value = part.partition("=")
        if not value:
            raise DesignError(f"bad parameter token {part!r}")
        kv[key] = value
    try:
        if cls in (ClusterBernoulli, TwoStageUniform):
            clusters = ClusterAssignment(_labels_from_rle(kv["labels"]), k=int(kv["k"]))
            if cls is ClusterBernoulli:
                return ClusterBernoulli(clusters, p=float(kv["p"]))
            return TwoStageUniform(clusters)
        if cls is IidBernoulli:
            return IidBernoulli(p=float(kv["p"]))
        if cls is CompleteRandomization:
            return CompleteRandomization(n1=int(kv["n1"]))
        if cls is GraphCluster:
            return GraphCluster(k=int(kv["k"]), p=float(kv["p"]),
                                partition_seed=int(kv["partition_seed"]))
        return cls(p=float(kv["p"]))
    except (KeyError, ValueError) as exc:
        raise DesignError(f"cannot parse design description {text!r}: {exc}")


def design_to_json(design: Design) -> dict:
    """JSON-ready dict with a "type" tag; inverse of design_from_json."""
    out = {"type": _TAGS[type(design)]}
    for f in fields(design):
        value = getattr(design, f.name)
        if isinstance(value, ClusterAssignment):
            out["k"] = value.k
            out["labels"] = [int(x) for x in value.labels]
        else:
            out[f.name] = value
    return out


def design_from_json(data: Mapping) -> Design:
    if "type" not in data or data["type"] not in _BY_TAG:
        raise DesignError(f"unknown design type {data.get('type')!r}")
    cls = _BY_TAG[data["type"]]
    try:
        if cls in (ClusterBernoulli, TwoStageUniform):
            clusters = ClusterAssignment(np.array(data["labels"], dtype=np.int64),
                                         k=int(data["k"]))
            if cls is ClusterBernoulli:
                return ClusterBernoulli(clusters, p=float(data["p"]))
            return TwoStageUniform(clusters)
        if cls is IidBernoulli:
            return IidBernoulli(p=float(data["p"]))
        if cls is CompleteRandomization:
            return CompleteRandomization(n1=int(data["n1"]))
        if cls is GraphCluster:
            return GraphCluster(k=int(data["k"]), p=float(data["p"]),
                                partition_seed=int(data["partition_seed"]))
        return cls(p=float(data["p"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise DesignError(f"cannot parse design JSON: {exc}")
