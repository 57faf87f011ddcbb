"""Network representation: ingestion, generation, partitioning, row weights.

Graphs are immutable once built.  Node ids are dense 0-based integers;
string ids found while loading are mapped to dense ids in order of first
appearance and kept on the graph so files round-trip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import GraphFormatError
from .hashing import hash_uniform


class Graph:
    """Weighted graph with optional covariates and cluster labels.

    Undirected edges are stored once; neighbor queries are symmetric.
    Treat instances as immutable: helpers cache derived arrays on first use
    and concurrent readers share them safely.
    """

    def __init__(self, n, edges, directed=False, covariates=None,
                 cluster_labels=None, node_names=None):
        edges = tuple((int(s), int(d), float(w)) for s, d, w in
                      (e if len(e) == 3 else (*e, 1.0) for e in edges))
        for s, d, w in edges:
            if not (0 <= s < n and 0 <= d < n):
                raise ValueError(f"edge ({s},{d}) outside node range [0,{n})")
            if s == d:
                raise ValueError(f"self-loop at node {s}")
            if not (w >= 0.0 and np.isfinite(w)):
                raise ValueError(f"edge ({s},{d}) has invalid weight {w}")
        seen = set()
        for s, d, _ in edges:
            key = (s, d) if directed else (min(s, d), max(s, d))
            if key in seen:
                raise ValueError(f"duplicate edge ({s},{d})")
            seen.add(key)
        if covariates is not None:
            covariates = np.asarray(covariates, dtype=np.float64)
            if covariates.shape[0] != n:
                raise ValueError("covariates must have one row per node")
        if cluster_labels is not None:
            cluster_labels = np.asarray(cluster_labels, dtype=np.int64)
            if cluster_labels.shape != (int(n),):
                raise ValueError("cluster_labels must have one entry per node")
        if node_names is not None and len(node_names) != n:
            raise ValueError("node_names must have one entry per node")
        self.n = int(n)
        self.edges = edges
        self.directed = bool(directed)
        self.covariates = covariates
        self.cluster_labels = cluster_labels
        self.node_names = tuple(node_names) if node_names is not None else None
        self._adj = None
        self._rownorm = None

    @property
    def m(self) -> int:
        return len(self.edges)

    def adjacency(self) -> sp.csr_matrix:
        """Weighted adjacency; row i holds the peers whose behavior i sees."""
        if self._adj is None:
            if self.edges:
                src = np.array([e[0] for e in self.edges])
                dst = np.array([e[1] for e in self.edges])
                wts = np.array([e[2] for e in self.edges])
                if not self.directed:
                    src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
                    wts = np.concatenate([wts, wts])
                adj = sp.csr_matrix((wts, (src, dst)), shape=(self.n, self.n))
            else:
                adj = sp.csr_matrix((self.n, self.n))
            self._adj = adj
        return self._adj

    def row_normalized(self, binarize: bool = False) -> sp.csr_matrix:
        """Adjacency with each row scaled to sum 1; all-zero rows stay zero."""
        if binarize:
            adj = self.adjacency().copy()
            adj.data = (adj.data > 0).astype(np.float64)
            return _normalize_rows(adj)
        if self._rownorm is None:
            self._rownorm = _normalize_rows(self.adjacency().copy())
        return self._rownorm

    def neighbors(self, i: int) -> np.ndarray:
        adj = self.adjacency()
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]]

    def degree(self, i: int) -> int:
        adj = self.adjacency()
        return int(adj.indptr[i + 1] - adj.indptr[i])


def _normalize_rows(adj: sp.csr_matrix) -> sp.csr_matrix:
    sums = np.asarray(adj.sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    rows = np.repeat(np.arange(adj.shape[0]), np.diff(adj.indptr))
    adj.data = adj.data * scale[rows]
    return adj


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Per-node labels in [0, k) with no empty cluster."""

    labels: np.ndarray
    k: int

    def __eq__(self, other):
        if not isinstance(other, ClusterAssignment):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.k, self.labels.tobytes()))

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if self.k < 1:
            raise ValueError("cluster count must be at least 1")
        present = np.unique(labels)
        if present.size and (present[0] < 0 or present[-1] >= self.k):
            raise ValueError(f"labels outside [0,{self.k})")
        if present.size != self.k:
            raise ValueError(f"expected {self.k} non-empty clusters, found {present.size}")


def load_edge_list(text: str, n: int | None = None) -> Graph:
    """Parse edge-list CSV into a Graph.

    Optional first header line "# n=<count> directed=<0|1>"; other lines are
    "src,dst" or "src,dst,weight".  Blank and comment lines are skipped.
    Node ids may be integers or arbitrary strings; strings are mapped to
    dense ids in order of first appearance.
    """
    directed = False
    header_n = None
    lines = text.splitlines()
    start = 0
    if lines and lines[0].lstrip().startswith("#"):
        fields = dict(
            part.split("=", 1) for part in lines[0].lstrip("# ").split() if "=" in part
        )
        if "n" in fields:
            try:
                header_n = int(fields["n"])
            except ValueError:
                raise GraphFormatError(f"bad n value {fields['n']!r} in header", line=1)
        if "directed" in fields:
            if fields["directed"] not in ("0", "1"):
                raise GraphFormatError("directed must be 0 or 1 in header", line=1)
            directed = fields["directed"] == "1"
        start = 1

    raw: list[tuple[str, str, float, int]] = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = [p.strip() for p in stripped.split(",")]
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"expected 'src,dst[,weight]', got {stripped!r}", line=lineno)
        weight = 1.0
        if len(parts) == 3:
            try:
                weight = float(parts[2])
            except ValueError:
                raise GraphFormatError(f"bad weight {parts[2]!r}", line=lineno)
            if not (weight >= 0.0 and np.isfinite(weight)):
                raise GraphFormatError(f"negative or non-finite weight {parts[2]}", line=lineno)
        raw.append((parts[0], parts[1], weight, lineno))

    tokens = [t for s, d, _, _ in raw for t in (s, d)]
    integer_ids = all(_is_int(t) for t in tokens)
    names = None
    if integer_ids:
        ids = {t: int(t) for t in set(tokens)}
    else:
        ids = {}
        for t in tokens:
            if t not in ids:
                ids[t] = len(ids)
        names = [None] * len(ids)
        for t, i in ids.items():
            names[i] = t

    if n is None:
        n = header_n
    if n is None:
        n = (1 + max(ids.values())) if ids else 0
    if names is not None:
        if len(names) > n:
            raise GraphFormatError(f"{len(names)} distinct node names exceed n={n}")
        names = names + [str(i) for i in range(len(names), n)]

    edges = []
    seen = set()
    for s, d, w, lineno in raw:
        si, di = ids[s], ids[d]
        if si >= n or di >= n:
            raise GraphFormatError(f"node id {max(si, di)} >= n={n}", line=lineno)
        if si == di:
            raise GraphFormatError(f"self-loop at node {s}", line=lineno)
        key = (si, di) if directed else (min(si, di), max(si, di))
        if key in seen:
            raise GraphFormatError(f"duplicate edge ({s},{d})", line=lineno)
        seen.add(key)
        edges.append((si, di, w))
    return Graph(n, edges, directed=directed, node_names=names)


def dump_edge_list(graph: Graph) -> str:
    """Inverse of load_edge_list; reloading the output gives an equal graph."""
    out = [f"# n={graph.n} directed={int(graph.directed)}"]
    for s, d, w in graph.edges:
        sname = graph.node_names[s] if graph.node_names else str(s)
        dname = graph.node_names[d] if graph.node_names else str(d)
        out.append(f"{sname},{dname},{w!r}")
    return "\n".join(out) + "\n"


def load_clusters(text: str, n: int) -> ClusterAssignment:
    """Parse "node,label" CSV lines into a ClusterAssignment for n nodes."""
    labels = np.full(n, -1, dtype=np.int64)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = [p.strip() for p in stripped.split(",")]
        if len(parts) != 2 or not _is_int(parts[0]) or not _is_int(parts[1]):
            raise GraphFormatError(f"expected 'node,label', got {stripped!r}", line=lineno)
        node, label = int(parts[0]), int(parts[1])
        if not 0 <= node < n:
            raise GraphFormatError(f"node id {node} outside [0,{n})", line=lineno)
        if label < 0:
            raise GraphFormatError(f"negative label {label}", line=lineno)
        labels[node] = label
    if (labels < 0).any():
        missing = int(np.argmin(labels >= 0))
        raise GraphFormatError(f"node {missing} has no cluster label")
    # compact labels to [0, k) preserving order of first appearance
    order: dict[int, int] = {}
    for lab in labels:
        order.setdefault(int(lab), len(order))
    remapped = np.array([order[int(lab)] for lab in labels], dtype=np.int64)
    return ClusterAssignment(remapped, k=len(order))


def dump_clusters(clusters: ClusterAssignment) -> str:
    return "\n".join(f"{i},{int(lab)}" for i, lab in enumerate(clusters.labels)) + "\n"


def _is_int(token: str) -> bool:
    try:
        int(token)
        return True
    except ValueError:
        return False


def generate_disjoint_cliques(g: int, m: int) -> Graph:
    """g cliques of m nodes each; cluster_labels mark the cliques."""
    if g < 1 or m < 1:
        raise ValueError("need at least one group of at least one node")
    edges = []
    for c in range(g):
        base = c * m
        for i in range(m):
            for j in range(i + 1, m):
                edges.append((base + i, base + j, 1.0))
    labels = np.repeat(np.arange(g), m)
    return Graph(g * m, edges, directed=False, cluster_labels=labels)


def generate_random_graph(n: int, p: float, seed: int) -> Graph:
    """Undirected Erdős–Rényi graph; each pair is an edge with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability {p} outside [0,1]")
    rng = np.random.default_rng(seed)
    edges = []
    for i in range(n - 1):
        hits = np.nonzero(rng.random(n - 1 - i) < p)[0]
        edges.extend((i, i + 1 + int(j), 1.0) for j in hits)
    return Graph(n, edges, directed=False)


def cut_fraction(graph: Graph, clusters: ClusterAssignment) -> float:
    """Share of edges whose endpoints lie in different clusters."""
    if clusters.labels.shape[0] != graph.n:
        raise ValueError("cluster assignment does not match graph size")
    if not graph.edges:
        return 0.0
    labels = clusters.labels
    cut = sum(1 for s, d, _ in graph.edges if labels[s] != labels[d])
    return cut / len(graph.edges)


def row_weight(graph: Graph, i: int, j: int) -> float:
    """Row-normalized adjacency entry; 0 whenever i has no peers."""
    if not (0 <= i < graph.n and 0 <= j < graph.n):
        raise ValueError(f"node id outside [0,{graph.n})")
    rownorm = graph.row_normalized()
    lo, hi = rownorm.indptr[i], rownorm.indptr[i + 1]
    pos = np.searchsorted(rownorm.indices[lo:hi], j)
    if pos < hi - lo and rownorm.indices[lo + pos] == j:
        return float(rownorm.data[lo + pos])
    return 0.0


def partition(graph: Graph, k: int, seed: int) -> ClusterAssignment:
    """Split the graph into exactly k non-empty clusters.

    Label propagation (synchronous, ties toward the smallest label) finds
    natural communities, then clusters are greedily merged or split until
    exactly k remain.  Deterministic given (graph, k, seed); the seed only
    enters the hash ordering used when splitting oversized clusters.
    """
    if k < 1:
        raise ValueError("cluster count must be at least 1")
    if k > graph.n:
        raise ValueError(f"cannot make {k} non-empty clusters from {graph.n} nodes")

    labels = _label_propagation(graph)
    groups = _group_by_label(labels)

    # merge phase: fold the smallest cluster into its best-connected neighbor
    while len(groups) > k:
        sizes = {lab: len(members) for lab, members in groups.items()}
        smallest = min(sizes, key=lambda lab: (sizes[lab], lab))
        weight_to = {}
        adj = graph.adjacency()
        for node in groups[smallest]:
            lo, hi = adj.indptr[node], adj.indptr[node + 1]
            for idx in range(lo, hi):
                other = labels[adj.indices[idx]]
                if other != smallest:
                    weight_to[other] = weight_to.get(other, 0.0) + adj.data[idx]
        if weight_to:
            target = max(weight_to, key=lambda lab: (weight_to[lab], -lab))
        else:
            target = min(lab for lab in groups if lab != smallest)
        for node in groups[smallest]:
            labels[node] = target
        groups[target] = groups.pop(smallest) + groups[target]

    # split phase: halve the largest cluster, hash order decides who moves
    step = 0
    while len(groups) < k:
        largest = max(groups, key=lambda lab: (len(groups[lab]), -lab))
        members = sorted(groups[largest])
        ranked = sorted(members, key=lambda v: hash_uniform(f"split#{seed}#{step}", str(v)))
        movers = ranked[:len(members) // 2]
        new_label = max(groups) + 1
        for node in movers:
            labels[node] = new_label
        groups[largest] = [v for v in members if labels[v] == largest]
        groups[new_label] = movers
        step += 1

    return ClusterAssignment(_canonical_labels(labels), k=k)


def _label_propagation(graph: Graph, max_rounds: int = 50) -> np.ndarray:
    labels = np.arange(graph.n, dtype=np.int64)
    adj = graph.adjacency()
    for _ in range(max_rounds):
        new = labels.copy()
        for i in range(graph.n):
            lo, hi = adj.indptr[i], adj.indptr[i + 1]
            if lo == hi:
                continue
            tallies = {}
            for idx in range(lo, hi):
                lab = labels[adj.indices[idx]]
                tallies[lab] = tallies.get(lab, 0.0) + adj.data[idx]
            best = max(tallies, key=lambda lab: (tallies[lab], -lab))
            new[i] = best
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def _group_by_label(labels: np.ndarray) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for node, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(node)
    return groups


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    order: dict[int, int] = {}
    out = np.empty_like(labels)
    for node, lab in enumerate(labels):
        if int(lab) not in order:
            order[int(lab)] = len(order)
        out[node] = order[int(lab)]
    return out
