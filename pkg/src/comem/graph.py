"""Graph containers, community structures and partition utilities.

Nodes are integers ``0..n-1`` internally; the labels found in source data
are kept in ``Graph.original_ids`` so callers can map results back. Edge
types live in ``{0, .., r-1}`` where type 0 means "no edge present"; only
nonzero-typed pairs are stored. Plain static graphs use ``r = 2``.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Graph",
    "CommunityAssignment",
    "Partition",
    "PlantedParams",
    "BlockParams",
    "load_edge_list",
    "save_edge_list",
    "karate_graph",
    "sample_planted",
    "sample_blockmodel",
    "nmi",
    "NMI_VARIANT",
    "enumerate_partitions",
    "bell_number",
]

# Normalization used by nmi(); recorded in CLI / service output metadata.
NMI_VARIANT = "2*I(A;B) / (H(A) + H(B))"

_ENUMERATION_LIMIT = 12


class Graph:
    """Undirected graph with typed edges and persisted id remapping.

    Parameters
    ----------
    n : int
        Number of nodes.
    edges : iterable
        Items ``(u, v)`` or ``(u, v, type)`` with ``0 <= u, v < n``,
        ``u != v`` and ``1 <= type < r``. Later duplicates overwrite
        earlier ones; the overwrite count is kept in ``duplicate_count``.
    r : int
        Number of edge types including the absent type 0.
    original_ids : sequence, optional
        External label for each node, defaults to ``0..n-1``.
    """

    __slots__ = (
        "n",
        "r",
        "original_ids",
        "duplicate_count",
        "_keys",
        "_types",
        "_id_index",
        "_csr",
        "_degrees",
    )

    def __init__(self, n, edges=(), r=2, original_ids=None):
        if n < 0:
            raise ValueError("n must be nonnegative")
        if r < 2:
            raise ValueError("r must be at least 2")
        self.n = int(n)
        self.r = int(r)
        if original_ids is None:
            original_ids = list(range(n))
        if len(original_ids) != n:
            raise ValueError("original_ids length must equal n")
        self.original_ids = list(original_ids)
        self._id_index = {oid: i for i, oid in enumerate(self.original_ids)}
        if len(self._id_index) != n:
            raise ValueError("original_ids must be distinct")

        seen = {}
        dupes = 0
        for item in edges:
            if len(item) == 2:
                u, v = item
                t = 1
            else:
                u, v, t = item
            u = int(u)
            v = int(v)
            t = int(t)
            if u == v:
                raise ValueError(f"self loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u},{v}) out of range")
            if not (1 <= t < r):
                raise ValueError(f"edge type {t} out of range for r={r}")
            if u > v:
                u, v = v, u
            key = u * n + v
            if key in seen:
                dupes += 1
            seen[key] = t
        self.duplicate_count = dupes
        if seen:
            keys = np.fromiter(seen.keys(), dtype=np.int64, count=len(seen))
            order = np.argsort(keys, kind="stable")
            self._keys = keys[order]
            self._types = np.fromiter(seen.values(), dtype=np.int64, count=len(seen))[order]
        else:
            self._keys = np.empty(0, dtype=np.int64)
            self._types = np.empty(0, dtype=np.int64)
        self._csr = None
        self._degrees = None

    # -- basic queries -----------------------------------------------------

    @property
    def num_edges(self):
        return int(self._keys.size)

    def index_of(self, original_id):
        return self._id_index[original_id]

    def edge_type(self, u, v):
        """Type of pair (u, v); 0 when no edge is present."""
        if u == v:
            raise ValueError("no self pairs")
        if u > v:
            u, v = v, u
        key = u * self.n + v
        pos = np.searchsorted(self._keys, key)
        if pos < self._keys.size and self._keys[pos] == key:
            return int(self._types[pos])
        return 0

    def has_edge(self, u, v):
        return self.edge_type(u, v) != 0

    def edge_items(self):
        """Iterate ((u, v), type) for all present edges, u < v sorted."""
        n = self.n
        for key, t in zip(self._keys.tolist(), self._types.tolist()):
            yield (key // n, key % n), t

    def edge_arrays(self):
        """Present edges as numpy arrays (u, v, type), u < v."""
        u = self._keys // self.n
        v = self._keys % self.n
        return u, v, self._types

    def degrees(self):
        """Array of node degrees, counting any nonzero edge type once."""
        if self._degrees is None:
            u, v, _ = self.edge_arrays()
            d = np.zeros(self.n, dtype=np.int64)
            np.add.at(d, u, 1)
            np.add.at(d, v, 1)
            self._degrees = d
        return self._degrees

    def degree(self, v):
        return int(self.degrees()[v])

    def adjacency_csr(self):
        """CSR arrays (indptr, indices) with neighbor lists sorted."""
        if self._csr is None:
            u, v, _ = self.edge_arrays()
            src = np.concatenate([u, v])
            dst = np.concatenate([v, u])
            order = np.lexsort((dst, src))
            src = src[order]
            dst = dst[order]
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(indptr, src + 1, 1)
            np.cumsum(indptr, out=indptr)
            self._csr = (indptr, dst)
        return self._csr

    def neighbors(self, v):
        indptr, indices = self.adjacency_csr()
        return indices[indptr[v]:indptr[v + 1]]

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.num_edges}, r={self.r})"


# ---------------------------------------------------------------------------
# community structures


class CommunityAssignment:
    """Node-to-community labeling with a fixed number of communities m."""

    __slots__ = ("labels", "m")

    def __init__(self, labels, m):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be one dimensional")
        m = int(m)
        if m < 1:
            raise ValueError("m must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= m):
            raise ValueError("labels must lie in [0, m)")
        self.labels = labels
        self.m = m

    @property
    def n(self):
        return self.labels.size

    def to_partition(self):
        return Partition.from_labels(self.labels)

    def __eq__(self, other):
        return (
            isinstance(other, CommunityAssignment)
            and self.m == other.m
            and np.array_equal(self.labels, other.labels)
        )

    def __repr__(self):
        return f"CommunityAssignment(n={self.n}, m={self.m})"


class Partition:
    """Set partition of ``0..n-1`` in canonical form.

    Blocks are frozensets ordered by their smallest element; two objects
    compare equal exactly when they are the same set partition.
    """

    __slots__ = ("blocks", "n", "_block_of")

    def __init__(self, blocks, n=None):
        cleaned = []
        seen = set()
        for b in blocks:
            fb = frozenset(int(x) for x in b)
            if not fb:
                continue
            if seen & fb:
                raise ValueError("blocks must be disjoint")
            seen |= fb
            cleaned.append(fb)
        if n is None:
            n = (max(seen) + 1) if seen else 0
        if seen != set(range(n)):
            raise ValueError("blocks must cover 0..n-1 exactly")
        cleaned.sort(key=min)
        self.blocks = tuple(cleaned)
        self.n = n
        self._block_of = None

    @classmethod
    def from_labels(cls, labels):
        labels = np.asarray(labels, dtype=np.int64)
        groups = {}
        for node, lab in enumerate(labels.tolist()):
            groups.setdefault(lab, []).append(node)
        return cls(groups.values(), n=labels.size)

    def labels(self):
        """Canonical label array: block index by order of smallest element."""
        lab = np.empty(self.n, dtype=np.int64)
        for i, b in enumerate(self.blocks):
            for v in b:
                lab[v] = i
        return lab

    def block_of(self, v):
        if self._block_of is None:
            self._block_of = {v: i for i, b in enumerate(self.blocks) for v in b}
        return self._block_of[v]

    def same_block(self, v, w):
        return self.block_of(v) == self.block_of(w)

    @property
    def num_blocks(self):
        return len(self.blocks)

    def block_sizes(self):
        return [len(b) for b in self.blocks]

    def __eq__(self, other):
        return isinstance(other, Partition) and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    def __repr__(self):
        inner = ", ".join("{" + ",".join(map(str, sorted(b))) + "}" for b in self.blocks)
        return f"Partition([{inner}])"


# ---------------------------------------------------------------------------
# model parameters


@dataclass(frozen=True)
class PlantedParams:
    """Planted-partition model: m communities, within and between edge rates."""

    m: int
    p_in: float
    p_out: float

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be positive")
        for name in ("p_in", "p_out"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_block(self, r=2):
        if r != 2:
            raise ValueError("planted model only defines two edge types")
        m = self.m
        q = np.empty((m, m, 2))
        q[..., 1] = np.where(np.eye(m, dtype=bool), self.p_in, self.p_out)
        q[..., 0] = 1.0 - q[..., 1]
        return BlockParams(np.full(m, 1.0 / m), q)


class BlockParams:
    """General blockmodel: community prior p and edge-type table q.

    ``q[i, j, t]`` is the probability that a pair with communities (i, j)
    carries edge type t. Each (i, j) row must sum to one and the table must
    be symmetric in (i, j).
    """

    __slots__ = ("p", "q", "m", "r")

    def __init__(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.ndim != 1:
            raise ValueError("p must be a vector")
        m = p.size
        if q.shape[:2] != (m, m) or q.ndim != 3:
            raise ValueError("q must have shape (m, m, r)")
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("p must be a probability vector")
        if np.any(q < -1e-12) or np.any(np.abs(q.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("each q[i,j,:] must be a probability vector")
        if not np.allclose(q, np.swapaxes(q, 0, 1), atol=1e-9):
            raise ValueError("q must be symmetric in the community indices")
        self.p = np.clip(p, 0.0, 1.0)
        self.q = np.clip(q, 0.0, 1.0)
        self.m = m
        self.r = q.shape[2]

    def __repr__(self):
        return f"BlockParams(m={self.m}, r={self.r})"


# ---------------------------------------------------------------------------
# edge list io


def _coerce_id(token):
    try:
        return int(token)
    except ValueError:
        return token


def load_edge_list(source, comment="#"):
    """Read a whitespace-separated edge list into a Graph.

    ``source`` may be a filesystem path, a file-like object or an iterable
    of lines. Lines are ``u v`` or ``u v type``; anything after ``comment``
    is ignored. Node ids may be arbitrary tokens; they are remapped to
    ``0..n-1`` (numeric ids sort numerically, otherwise lexically) and the
    mapping is persisted on the returned graph. Duplicate pairs collapse,
    last read type wins, and the collapse count is recorded.
    """
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    elif isinstance(source, str):
        lines = source.splitlines()
    elif isinstance(source, io.IOBase):
        lines = source.readlines()
    else:
        lines = list(source)

    raw = []
    max_type = 1
    for lineno, line in enumerate(lines, start=1):
        if comment in line:
            line = line.split(comment, 1)[0]
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (2, 3):
            raise ValueError(f"line {lineno}: expected 2 or 3 columns, got {len(parts)}")
        u = _coerce_id(parts[0])
        v = _coerce_id(parts[1])
        t = int(parts[2]) if len(parts) == 3 else 1
        if u == v:
            raise ValueError(f"line {lineno}: self loop on {u!r}")
        if t < 1:
            raise ValueError(f"line {lineno}: edge type must be >= 1")
        max_type = max(max_type, t)
        raw.append((u, v, t))

    ids = sorted({x for u, v, _ in raw for x in (u, v)}, key=lambda x: (isinstance(x, str), x))
    index = {oid: i for i, oid in enumerate(ids)}
    edges = [(index[u], index[v], t) for u, v, t in raw]
    return Graph(len(ids), edges, r=max_type + 1, original_ids=ids)


def save_edge_list(graph, path):
    """Write a graph back out using its original node ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for (u, v), t in graph.edge_items():
            a = graph.original_ids[u]
            b = graph.original_ids[v]
            if graph.r > 2:
                fh.write(f"{a}\t{b}\t{t}\n")
            else:
                fh.write(f"{a}\t{b}\n")


def karate_graph():
    """The 34-node friendship network bundled as demo data."""
    path = os.path.join(os.path.dirname(__file__), "data", "karate.edges")
    return load_edge_list(path)


# ---------------------------------------------------------------------------
# sampling


def _decode_pair_index(k, n):
    # inverse of key(i,j) = i*(2n-i-1)/2 + (j-i-1) over pairs i<j
    k = np.asarray(k, dtype=np.float64)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * k)) / 2.0).astype(np.int64)
    base = i * (2 * n - i - 1) // 2
    kk = np.asarray(k, dtype=np.int64)
    # float guard: push i down/up if rounding crossed a row boundary
    too_big = base > kk
    while np.any(too_big):
        i[too_big] -= 1
        base = i * (2 * n - i - 1) // 2
        too_big = base > kk
    nxt = (i + 1) * (2 * n - i - 2) // 2
    too_small = kk >= nxt
    while np.any(too_small):
        i[too_small] += 1
        nxt = (i + 1) * (2 * n - i - 2) // 2
        too_small = kk >= nxt
        base = i * (2 * n - i - 1) // 2
    j = kk - base + i + 1
    return i, j


def _sample_pairs_gnp(rng, num_pairs, prob):
    """Sorted linear pair indices of a Bernoulli(prob) draw over num_pairs slots."""
    if prob <= 0.0 or num_pairs == 0:
        return np.empty(0, dtype=np.int64)
    if prob >= 1.0:
        return np.arange(num_pairs, dtype=np.int64)
    # geometric skipping keeps this O(expected edges)
    expected = prob * num_pairs
    out = []
    pos = -1
    log1mp = math.log1p(-prob)
    chunk = max(1024, int(expected * 1.2) + 16)
    while True:
        u = rng.random(chunk)
        steps = np.floor(np.log(u) / log1mp).astype(np.int64) + 1
        idx = pos + np.cumsum(steps)
        take = idx < num_pairs
        if not np.all(take):
            out.append(idx[take])
            break
        out.append(idx)
        pos = int(idx[-1])
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def sample_planted(n, params, seed=None):
    """Draw (assignment, graph) from the planted-partition model.

    Communities are uniform over ``m`` labels per node; each within pair
    carries an edge with probability ``p_in`` and each cross pair with
    probability ``p_out``. Scales to large n by sampling edge positions
    directly instead of testing all pairs.
    """
    rng = np.random.default_rng(seed)
    m = params.m
    labels = rng.integers(0, m, size=n)
    assignment = CommunityAssignment(labels, m)

    within_edges = []
    for c in range(m):
        members = np.flatnonzero(labels == c)
        k = members.size
        if k < 2:
            continue
        picked = _sample_pairs_gnp(rng, k * (k - 1) // 2, params.p_in)
        if picked.size:
            i, j = _decode_pair_index(picked, k)
            within_edges.append(np.stack([members[i], members[j]], axis=1))

    total_pairs = n * (n - 1) // 2
    picked = _sample_pairs_gnp(rng, total_pairs, params.p_out)
    cross = None
    if picked.size:
        i, j = _decode_pair_index(picked, n)
        keep = labels[i] != labels[j]
        cross = np.stack([i[keep], j[keep]], axis=1)

    chunks = within_edges + ([cross] if cross is not None and cross.size else [])
    if chunks:
        uv = np.concatenate(chunks, axis=0)
        edges = [(int(a), int(b)) for a, b in uv]
    else:
        edges = []
    return assignment, Graph(n, edges, r=2)


def sample_blockmodel(n, params, seed=None):
    """Draw (assignment, graph) from the general blockmodel H(n, p, q)."""
    rng = np.random.default_rng(seed)
    labels = rng.choice(params.m, size=n, p=params.p)
    assignment = CommunityAssignment(labels, params.m)
    edges = []
    cumq = np.cumsum(params.q, axis=2)
    for u in range(n):
        for v in range(u + 1, n):
            t = int(np.searchsorted(cumq[labels[u], labels[v]], rng.random(), side="right"))
            t = min(t, params.r - 1)
            if t > 0:
                edges.append((u, v, t))
    return assignment, Graph(n, edges, r=params.r)


# ---------------------------------------------------------------------------
# comparing partitions


def _as_labels(structure):
    if isinstance(structure, Partition):
        return structure.labels()
    if isinstance(structure, CommunityAssignment):
        return structure.labels
    return np.asarray(structure, dtype=np.int64)


def nmi(a, b):
    """Normalized mutual information between two community structures.

    Uses the symmetric normalization ``2 I(A;B) / (H(A) + H(B))`` (see
    NMI_VARIANT). Returns 1.0 exactly when the partitions coincide and 0.0
    when either side carries no information about the other. Both inputs
    must cover the same node set.
    """
    la = _as_labels(a)
    lb = _as_labels(b)
    if la.size != lb.size:
        raise ValueError("community structures cover different node sets")
    n = la.size
    if n == 0:
        raise ValueError("empty node set")
    _, ia = np.unique(la, return_inverse=True)
    _, ib = np.unique(lb, return_inverse=True)
    ka = int(ia.max()) + 1
    kb = int(ib.max()) + 1
    cont = np.zeros((ka, kb))
    np.add.at(cont, (ia, ib), 1.0)
    pa = cont.sum(axis=1) / n
    pb = cont.sum(axis=0) / n
    pab = cont / n
    ha = -np.sum(pa * np.log(pa, where=pa > 0, out=np.zeros_like(pa)))
    hb = -np.sum(pb * np.log(pb, where=pb > 0, out=np.zeros_like(pb)))
    mask = pab > 0
    outer = np.outer(pa, pb)
    info = np.sum(pab[mask] * np.log(pab[mask] / outer[mask]))
    denom = ha + hb
    if denom <= 0.0:
        # both sides are a single block, hence identical
        return 1.0
    return float(min(1.0, max(0.0, 2.0 * info / denom)))


# ---------------------------------------------------------------------------
# partition enumeration


def bell_number(n):
    """Number of set partitions of n elements (triangle recurrence)."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


def enumerate_partitions(n, max_blocks=None):
    """Yield every set partition of ``0..n-1`` in restricted growth order.

    The restricted growth string ``a`` satisfies ``a[0] = 0`` and
    ``a[i] <= max(a[:i]) + 1``; partitions are yielded in lexicographic
    order of these strings. ``max_blocks`` filters to partitions with at
    most that many blocks. Guarded to n <= 12 because the count is the
    Bell number.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if n > _ENUMERATION_LIMIT:
        raise ValueError(f"partition enumeration is limited to n <= {_ENUMERATION_LIMIT}")
    cap = n if max_blocks is None else min(int(max_blocks), n)
    if cap < 1:
        raise ValueError("max_blocks must be positive")
    a = [0] * n
    while True:
        if max(a) + 1 <= cap:
            yield Partition.from_labels(a)
        # successor: rightmost position that may grow by one
        i = n - 1
        while i > 0:
            if a[i] <= max(a[:i]):
                a[i] += 1
                for j in range(i + 1, n):
                    a[j] = 0
                break
            i -= 1
        else:
            return
