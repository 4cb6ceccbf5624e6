"""Hierarchy and image views over co-membership probabilities.

One minus the co-membership probability acts as a distance. It is not a
metric in general, so the triangle diagnostic reports how often triples
violate the inequality instead of assuming they cannot. Average-linkage
clustering over these distances yields a dendrogram; cutting it at two
heights coarse-grains the graph into meta-nodes and community outlines,
and ordering its leaves makes block structure visible when the
probability matrix is rendered as a grayscale image.
"""

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CoarseView",
    "Dendrogram",
    "TriangleReport",
    "average_linkage",
    "coarse_grain",
    "distance_matrix",
    "order_leaves",
    "render_matrix",
    "triangle_check",
]

_UPGMA_NODE_GUARD = 4000
_EXHAUSTIVE_TRIPLE_GUARD = 2000
_LEVEL_EPS = 1e-12


def _dense_probabilities(pvw):
    if hasattr(pvw, "to_dense"):
        return np.asarray(pvw.to_dense(), dtype=float)
    mat = np.asarray(pvw, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("probability matrix must be square")
    return mat


def _as_distances(distances):
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.allclose(d, d.T, atol=1e-9):
        raise ValueError("distance matrix must be symmetric")
    if np.abs(np.diagonal(d)).max() > 1e-9:
        raise ValueError("self-distances must be zero")
    if d.min() < 0:
        raise ValueError("distances must be nonnegative")
    return 0.5 * (d + d.T)


def distance_matrix(pvw):
    """Distances d = 1 - p, clamped to [0, 1], zero diagonal."""
    p = _dense_probabilities(pvw)
    d = np.clip(1.0 - p, 0.0, 1.0)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


# ---------------------------------------------------------------------------
# dendrogram


class Dendrogram:
    """Binary merge tree over n leaves.

    Leaves are ids 0..n-1; the i-th merge creates internal node n+i with
    recorded (left, right, height). Merge heights are non-decreasing
    (average linkage is reducible). ``leaf_order`` is the in-order leaf
    traversal of the stored child orientations.
    """

    def __init__(self, n, merges):
        self.n = int(n)
        self.merges = [(int(a), int(b), float(h)) for a, b, h in merges]
        if len(self.merges) != self.n - 1:
            raise ValueError("a binary tree over n leaves has n - 1 merges")
        heights = [h for _, _, h in self.merges]
        if any(b < a - 1e-12 for a, b in zip(heights, heights[1:])):
            raise ValueError("merge heights must be non-decreasing")
        self._leaves_under = None
        self.leaf_order = self._traverse()

    @property
    def root(self):
        return self.n + len(self.merges) - 1

    @property
    def root_height(self):
        return self.merges[-1][2] if self.merges else 0.0

    def heights(self):
        return np.array([h for _, _, h in self.merges])

    def children(self, node):
        a, b, _ = self.merges[node - self.n]
        return a, b

    def _traverse(self):
        if self.n == 1:
            return np.array([0])
        order = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node < self.n:
                order.append(node)
            else:
                a, b = self.children(node)
                stack.append(b)
                stack.append(a)
        return np.array(order)

    def leaves_under(self, node):
        if self._leaves_under is None:
            table = {leaf: np.array([leaf]) for leaf in range(self.n)}
            for i, (a, b, _) in enumerate(self.merges):
                table[self.n + i] = np.concatenate([table[a], table[b]])
            self._leaves_under = table
        return self._leaves_under[node]

    def cut(self, level):
        """Leaf labels after applying every merge with height <= level."""
        if level < -_LEVEL_EPS or level > self.root_height + _LEVEL_EPS:
            raise ValueError(f"level {level} outside [0, {self.root_height}]")
        parent = list(range(self.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b, h in self.merges:
            if h > level + _LEVEL_EPS:
                break
            ra = find(int(self.leaves_under(a)[0]))
            rb = find(int(self.leaves_under(b)[0]))
            parent[max(ra, rb)] = min(ra, rb)
        reps = np.array([find(v) for v in range(self.n)])
        _, labels = np.unique(reps, return_inverse=True)
        return labels

    def to_json(self):
        objs = {leaf: {"leaf": leaf} for leaf in range(self.n)}
        for i, (a, b, h) in enumerate(self.merges):
            objs[self.n + i] = {"height": h, "children": [objs[a], objs[b]]}
        return objs[self.root]

    @classmethod
    def from_json(cls, tree):
        if isinstance(tree, str):
            tree = json.loads(tree)
        if "leaf" in tree:
            return cls(1, [])
        internal = []  # (left_ref, right_ref, height) in child-before-parent order
        refs = {}
        stack = [(tree, False)]
        while stack:
            node, expanded = stack.pop()
            if "leaf" in node:
                refs[id(node)] = ("leaf", int(node["leaf"]))
            elif not expanded:
                stack.append((node, True))
                stack.append((node["children"][1], False))
                stack.append((node["children"][0], False))
            else:
                a = refs[id(node["children"][0])]
                b = refs[id(node["children"][1])]
                internal.append((a, b, float(node["height"])))
                refs[id(node)] = ("internal", len(internal) - 1)
        n = len(internal) + 1
        order = sorted(range(len(internal)), key=lambda i: (internal[i][2], i))
        new_id = {i: n + pos for pos, i in enumerate(order)}

        def ref_id(ref):
            kind, val = ref
            return val if kind == "leaf" else new_id[val]

        merges = [None] * len(internal)
        for i, (a, b, h) in enumerate(internal):
            merges[new_id[i] - n] = (ref_id(a), ref_id(b), h)
        return cls(n, merges)


def average_linkage(distances):
    """Agglomerative clustering with mean pairwise distance between blocks.

    Deterministic: ties on the minimum distance break toward the smallest
    canonical pair (a block's canon is its smallest leaf).
    """
    d = _as_distances(distances)
    n = d.shape[0]
    if n > _UPGMA_NODE_GUARD:
        raise ValueError(f"dendrogram limited to n <= {_UPGMA_NODE_GUARD}")
    if n < 1:
        raise ValueError("need at least one node")
    work = d.copy()
    np.fill_diagonal(work, np.inf)
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n)
    canon = np.arange(n)
    node_id = np.arange(n)
    merges = []
    for step in range(n - 1):
        idx = np.flatnonzero(active)
        sub = work[np.ix_(idx, idx)]
        best = float(sub.min())
        a, b = min(
            (
                (int(canon[idx[min(i, j)]]), int(canon[idx[max(i, j)]])),
                (int(idx[min(i, j)]), int(idx[max(i, j)])),
            )
            for i, j in np.argwhere(sub == best)
            if i != j
        )[1]
        if canon[a] > canon[b]:
            a, b = b, a
        merges.append((int(node_id[a]), int(node_id[b]), best))
        others = active.copy()
        others[[a, b]] = False
        merged = (sizes[a] * work[a, others] + sizes[b] * work[b, others]) / (
            sizes[a] + sizes[b]
        )
        work[a, others] = merged
        work[others, a] = merged
        work[b, :] = np.inf
        work[:, b] = np.inf
        sizes[a] += sizes[b]
        node_id[a] = n + step
        active[b] = False
    return Dendrogram(n, merges)


def order_leaves(dendrogram, distances):
    """Reorient every branch to pull similar blocks next to each other.

    Walking from the root down, each internal node keeps or swaps its two
    children depending on which orientation has the smaller average
    distance to the leaf blocks already fixed on its left and right.
    Ties keep the child with the smaller canon first. Idempotent.
    """
    d = _as_distances(distances)
    if d.shape[0] != dendrogram.n:
        raise ValueError("distance matrix does not match the dendrogram")
    leaves = dendrogram.leaves_under
    canon = {node: int(leaves(node).min()) for node in range(2 * dendrogram.n - 1)}

    def avg(xs, ys):
        if xs.size == 0 or ys.size == 0:
            return 0.0
        return float(d[np.ix_(xs, ys)].mean())

    oriented = {}
    empty = np.array([], dtype=int)
    stack = [(dendrogram.root, empty, empty)]
    while stack:
        node, lctx, rctx = stack.pop()
        if node < dendrogram.n:
            continue
        a, b = dendrogram.children(node)
        keep = (avg(lctx, leaves(a)) + avg(leaves(b), rctx), canon[a])
        swap = (avg(lctx, leaves(b)) + avg(leaves(a), rctx), canon[b])
        first, second = (a, b) if keep <= swap else (b, a)
        oriented[node] = (first, second)
        stack.append((first, lctx, leaves(second)))
        stack.append((second, leaves(first), rctx))
    merges = []
    for i, (a, b, h) in enumerate(dendrogram.merges):
        first, second = oriented[dendrogram.n + i]
        merges.append((first, second, h))
    return Dendrogram(dendrogram.n, merges)


# ---------------------------------------------------------------------------
# rendering


def render_matrix(pvw, ordering=None, path=None):
    """Probabilities as an 8-bit grayscale image, intensity round(255 p).

    Returns the pixel array; with ``path`` also writes it, as PNG when the
    suffix says so and binary PGM otherwise. Output bytes depend only on
    the probabilities and the ordering.
    """
    p = _dense_probabilities(pvw)
    n = p.shape[0]
    if ordering is None:
        ordering = np.arange(n)
    ordering = np.asarray(ordering, dtype=int)
    if sorted(ordering.tolist()) != list(range(n)):
        raise ValueError("ordering must be a permutation of the nodes")
    pixels = np.clip(np.round(255.0 * p[np.ix_(ordering, ordering)]), 0, 255).astype(np.uint8)
    if path is not None:
        path = str(path)
        if path.lower().endswith(".png"):
            from PIL import Image

            Image.fromarray(pixels, mode="L").save(path, format="PNG")
        else:
            with open(path, "wb") as fh:
                fh.write(pgm_bytes(pixels))
    return pixels


def pgm_bytes(pixels):
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


# ---------------------------------------------------------------------------
# coarse graining


@dataclass
class CoarseView:
    merge_level: float
    community_level: float
    blue_threshold: float
    red_threshold: float
    meta_nodes: tuple  # tuple of tuples of node ids
    communities: tuple  # tuple of tuples of meta-node indices
    meta_edges: list  # dicts: a, b, mean_p, edge_count, color

    @property
    def sizes(self):
        return tuple(len(m) for m in self.meta_nodes)

    def to_json(self):
        return {
            "merge_level": self.merge_level,
            "community_level": self.community_level,
            "blue_threshold": self.blue_threshold,
            "red_threshold": self.red_threshold,
            "meta_nodes": [list(m) for m in self.meta_nodes],
            "sizes": list(self.sizes),
            "communities": [list(c) for c in self.communities],
            "meta_edges": self.meta_edges,
        }


def _edge_color(mean_p, blue, red):
    if mean_p >= blue:
        return "blue"
    if mean_p <= red:
        return "red"
    return "neutral"


def coarse_grain(graph, pvw, dendrogram, merge_level, community_level, blue=0.6, red=0.018):
    """Merge dendrogram blocks below two heights into meta-nodes and outlines.

    Meta-nodes come from the merge-level cut and must refine the
    community-level cut, so community_level >= merge_level. A meta-edge
    exists where at least one original edge runs between two meta-nodes;
    its weight is the mean probability over all node pairs between them,
    colored by the blue/red thresholds. merge_level 0 therefore returns
    the original graph (singleton meta-nodes, one meta-edge per edge).
    """
    if community_level < merge_level:
        raise ValueError("community level must not be below the merge level")
    if graph.n != dendrogram.n:
        raise ValueError("graph and dendrogram node counts differ")
    p = _dense_probabilities(pvw)
    if p.shape[0] != graph.n:
        raise ValueError("probability matrix does not match the graph")
    merge_labels = dendrogram.cut(merge_level)
    community_labels = dendrogram.cut(community_level)

    groups = {}
    for v, lab in enumerate(merge_labels.tolist()):
        groups.setdefault(lab, []).append(v)
    meta_nodes = tuple(tuple(g) for g in sorted(groups.values(), key=lambda g: g[0]))
    meta_of = np.empty(graph.n, dtype=int)
    for i, members in enumerate(meta_nodes):
        meta_of[list(members)] = i

    comm = {}
    for i, members in enumerate(meta_nodes):
        labels = {int(community_labels[v]) for v in members}
        if len(labels) != 1:
            raise ValueError("community cut does not nest the merge cut")
        comm.setdefault(labels.pop(), []).append(i)
    communities = tuple(tuple(c) for c in sorted(comm.values(), key=lambda c: c[0]))

    u, v = graph.edge_arrays()[:2]
    mu, mv = meta_of[u], meta_of[v]
    lo, hi = np.minimum(mu, mv), np.maximum(mu, mv)
    cross = lo != hi
    pair_keys, edge_counts = np.unique(
        lo[cross].astype(np.int64) * len(meta_nodes) + hi[cross], return_counts=True
    )
    meta_edges = []
    for key, count in zip(pair_keys.tolist(), edge_counts.tolist()):
        a, b = key // len(meta_nodes), key % len(meta_nodes)
        block = p[np.ix_(list(meta_nodes[a]), list(meta_nodes[b]))]
        mean_p = float(block.mean())
        meta_edges.append(
            {
                "a": int(a),
                "b": int(b),
                "mean_p": mean_p,
                "edge_count": int(count),
                "color": _edge_color(mean_p, blue, red),
            }
        )
    return CoarseView(
        merge_level=float(merge_level),
        community_level=float(community_level),
        blue_threshold=float(blue),
        red_threshold=float(red),
        meta_nodes=meta_nodes,
        communities=communities,
        meta_edges=meta_edges,
    )


# ---------------------------------------------------------------------------
# triangle diagnostics


@dataclass
class TriangleReport:
    triples_checked: int
    violations: int
    worst_excess: float
    worst_triple: tuple  # (v, w, apex) with d(v,w) largest
    sampled: bool

    @property
    def violation_fraction(self):
        return self.violations / self.triples_checked if self.triples_checked else 0.0


def triangle_check(distances, tol=1e-12, samples=10**6, seed=0):
    """Count triples where one side exceeds the other two plus ``tol``.

    Exhaustive up to 2000 nodes, uniformly sampled triples beyond. At
    most one side of a triple can violate, so each bad triple is counted
    once, with the apex being the third node.
    """
    d = _as_distances(distances)
    n = d.shape[0]
    if n < 3:
        return TriangleReport(0, 0, -np.inf, (), False)
    if n <= _EXHAUSTIVE_TRIPLE_GUARD:
        violations = 0
        worst = -np.inf
        worst_triple = ()
        upper = np.triu(np.ones((n, n), dtype=bool), k=1)
        for x in range(n):
            excess = d - d[x][:, None] - d[x][None, :]
            mask = upper.copy()
            mask[x, :] = False
            mask[:, x] = False
            vals = excess[mask]
            violations += int((vals > tol).sum())
            peak = float(vals.max())
            if peak > worst:
                rows, cols = np.nonzero(mask & (excess == peak))
                worst = peak
                worst_triple = (int(rows[0]), int(cols[0]), x)
        checked = n * (n - 1) * (n - 2) // 6
        return TriangleReport(checked, violations, worst, worst_triple, False)

    rng = np.random.default_rng(seed)
    got = 0
    violations = 0
    worst = -np.inf
    worst_triple = ()
    while got < samples:
        batch = min(samples - got, 200_000)
        trip = rng.integers(0, n, size=(batch, 3))
        ok = (
            (trip[:, 0] != trip[:, 1])
            & (trip[:, 0] != trip[:, 2])
            & (trip[:, 1] != trip[:, 2])
        )
        trip = trip[ok]
        got += int(trip.shape[0])
        v, w, x = trip[:, 0], trip[:, 1], trip[:, 2]
        excess = d[v, w] - d[v, x] - d[w, x]
        violations += int((excess > tol).sum())
        peak = float(excess.max()) if excess.size else -np.inf
        if peak > worst:
            i = int(np.argmax(excess))
            worst = peak
            worst_triple = (int(v[i]), int(w[i]), int(x[i]))
    return TriangleReport(got, violations, worst, worst_triple, True)
