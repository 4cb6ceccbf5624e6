"""Exact posterior inference on static graphs, plus a Gibbs sampler.

Everything here treats the observed graph as evidence for a latent
community structure under either the general blockmodel (community prior
``p``, edge-type table ``q``) or the planted-partition model (uniform
random partition into at most ``m`` groups, within rate ``p_in``, cross
rate ``p_out``). Exact routines enumerate the latent space and are guarded
accordingly; they exist as ground truth for the scalable estimators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .graph import CommunityAssignment, Partition, enumerate_partitions

__all__ = [
    "EdgeCounts",
    "PosteriorTable",
    "GibbsResult",
    "joint_blockmodel",
    "joint_planted",
    "log_falling_factorial",
    "node_marginal_exact",
    "node_marginal_local",
    "pair_marginal_local",
    "exact_pvw_bruteforce",
    "gibbs_pvw_montecarlo",
]

_STATE_SPACE_LIMIT = 2e6
_BRUTEFORCE_LIMIT = 10


def _safe_log(x):
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    np.log(x, where=x > 0, out=out)
    return out


def log_falling_factorial(m, k):
    """log of m(m-1)...(m-k+1) for real m, defined as -inf when m < k-1.

    For integer m this is the usual falling factorial (zero when m < k).
    The real-m extension stays continuous and nonnegative, which keeps a
    continuum prior on the group count integrable.
    """
    if k == 0:
        return 0.0
    if m < k - 1:
        return -np.inf
    acc = 0.0
    for i in range(k):
        f = m - i
        if f <= 0.0:
            return -np.inf
        acc += math.log(f)
    return acc


# ---------------------------------------------------------------------------
# joint probabilities


@dataclass(frozen=True)
class EdgeCounts:
    """Edge and non-edge tallies of a graph relative to a partition."""

    within_edges: int
    within_gaps: int
    cross_edges: int
    cross_gaps: int

    @classmethod
    def from_partition(cls, graph, partition):
        labels = partition.labels()
        u, v, _ = graph.edge_arrays()
        within_edges = int(np.sum(labels[u] == labels[v])) if u.size else 0
        cross_edges = graph.num_edges - within_edges
        sizes = np.asarray(partition.block_sizes())
        within_pairs = int(np.sum(sizes * (sizes - 1) // 2))
        total_pairs = graph.n * (graph.n - 1) // 2
        return cls(
            within_edges,
            within_pairs - within_edges,
            cross_edges,
            (total_pairs - within_pairs) - cross_edges,
        )


def joint_blockmodel(assignment, graph, params):
    """log Pr(assignment, graph) under the blockmodel H(n, p, q).

    Every node contributes its community prior and every unordered pair
    contributes the q entry for its edge type (absent pairs use type 0).
    Zero-probability configurations return -inf.
    """
    labels = np.asarray(
        assignment.labels if isinstance(assignment, CommunityAssignment) else assignment,
        dtype=np.int64,
    )
    if labels.size != graph.n:
        raise ValueError("assignment does not cover the graph's nodes")
    m = params.m
    logp = _safe_log(params.p)
    logq = _safe_log(params.q)

    total = float(np.sum(logp[labels]))
    counts = np.bincount(labels, minlength=m)
    pair_counts = np.outer(counts, counts).astype(float)
    np.fill_diagonal(pair_counts, counts * (counts - 1) / 2.0)
    pair_counts = np.triu(pair_counts)

    u, v, t = graph.edge_arrays()
    if u.size:
        total += float(np.sum(logq[labels[u], labels[v], t]))
        edge_pair_counts = np.zeros((m, m))
        iu = np.minimum(labels[u], labels[v])
        iv = np.maximum(labels[u], labels[v])
        np.add.at(edge_pair_counts, (iu, iv), 1.0)
    else:
        edge_pair_counts = np.zeros((m, m))

    gap_counts = pair_counts - edge_pair_counts
    mask = gap_counts > 0
    if np.any(mask & np.isneginf(logq[..., 0])):
        return -np.inf
    total += float(np.sum(gap_counts[mask] * logq[..., 0][mask]))
    return total


def joint_planted(partition, graph, params):
    """log Pr(partition, graph) under the planted-partition model.

    The partition prior assigns each of n nodes one of m labels uniformly;
    a partition with k blocks therefore has prior (m)_k / m^n where (m)_k
    is the falling factorial (0 when k > m).
    """
    k = partition.num_blocks
    prior = log_falling_factorial(params.m, k) - graph.n * math.log(params.m)
    if prior == -np.inf:
        return -np.inf
    c = EdgeCounts.from_partition(graph, partition)
    total = prior
    for count, prob in (
        (c.within_edges, params.p_in),
        (c.within_gaps, 1.0 - params.p_in),
        (c.cross_edges, params.p_out),
        (c.cross_gaps, 1.0 - params.p_out),
    ):
        if count:
            if prob <= 0.0:
                return -np.inf
            total += count * math.log(prob)
    return total


class PosteriorTable:
    """Weighted table over latent structures with a log normalizer."""

    def __init__(self, items, log_weights):
        self.items = list(items)
        self.log_weights = np.asarray(log_weights, dtype=float)
        if len(self.items) != self.log_weights.size:
            raise ValueError("items and log_weights must align")
        self.log_z = float(logsumexp(self.log_weights)) if self.items else -np.inf

    def probabilities(self):
        return np.exp(self.log_weights - self.log_z)

    def map_item(self):
        return self.items[int(np.argmax(self.log_weights))]

    def export_text(self, path):
        probs = self.probabilities()
        order = np.argsort(-probs)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# entries={len(self.items)} log_z={self.log_z:.12g}\n")
            for i in order:
                fh.write(f"{probs[i]:.12g}\t{self.items[i]!r}\n")

    def __len__(self):
        return len(self.items)


# ---------------------------------------------------------------------------
# exact marginals


def _enumerate_label_chunks(n, m, chunk=1 << 14):
    total = m**n
    base = m ** np.arange(n - 1, -1, -1, dtype=np.int64)
    start = 0
    while start < total:
        stop = min(start + chunk, total)
        idx = np.arange(start, stop, dtype=np.int64)
        yield start, (idx[:, None] // base[None, :]) % m
        start = stop


def _all_pair_types(graph):
    pairs = []
    for u in range(graph.n):
        for v in range(u + 1, graph.n):
            pairs.append((u, v, graph.edge_type(u, v)))
    return pairs


def node_marginal_exact(graph, params, node=None):
    """Posterior community marginals by full enumeration of assignments.

    Sums the blockmodel joint over all m^n assignments (guarded to 2e6
    states) and renormalizes. Returns an (n, m) matrix, or one row when
    ``node`` is given.
    """
    n, m = graph.n, params.m
    if m**n > _STATE_SPACE_LIMIT:
        raise ValueError(f"state space m^n = {m**n} exceeds {int(_STATE_SPACE_LIMIT)}")
    logp = _safe_log(params.p)
    logq = _safe_log(params.q)
    pairs = _all_pair_types(graph)

    total_states = m**n
    log_joint = np.empty(total_states)
    for start, labels in _enumerate_label_chunks(n, m):
        acc = logp[labels].sum(axis=1)
        for u, v, t in pairs:
            acc += logq[labels[:, u], labels[:, v], t]
        log_joint[start:start + labels.shape[0]] = acc

    log_z = logsumexp(log_joint)
    weights = np.exp(log_joint - log_z)
    marg = np.zeros((n, m))
    for start, labels in _enumerate_label_chunks(n, m):
        w = weights[start:start + labels.shape[0]]
        for v in range(n):
            np.add.at(marg[v], labels[:, v], w)
    marg /= marg.sum(axis=1, keepdims=True)
    return marg if node is None else marg[node]


def node_marginal_local(graph, params, node):
    """Community marginal of one node from its incident evidence only.

    Proportional to p_i * prod over other nodes x of sum_j p_j q_{ij, t(v,x)}.
    Exact for the single node's posterior given just the star around it; a
    graph with one node returns the prior.
    """
    m = params.m
    acc = _safe_log(params.p).copy()
    for x in range(graph.n):
        if x == node:
            continue
        t = graph.edge_type(node, x)
        acc += _safe_log(params.q[:, :, t] @ params.p)
    acc -= logsumexp(acc)
    return np.exp(acc)


def pair_marginal_local(graph, params, v, w, include_cross=True):
    """Joint community marginal of a pair from its local evidence.

    Proportional to p_i p_j q_{ij, t(v,w)} times, when ``include_cross``
    is set, the product over other nodes x of
    sum_k p_k q_{ik, t(v,x)} q_{jk, t(w,x)}. Returns an (m, m) matrix
    summing to one; its diagonal sum is the pair's co-membership
    probability given that local evidence.
    """
    if v == w:
        raise ValueError("pair must be two distinct nodes")
    m = params.m
    logq = _safe_log(params.q)
    acc = _safe_log(params.p)[:, None] + _safe_log(params.p)[None, :]
    acc = acc + logq[:, :, graph.edge_type(v, w)]
    if include_cross:
        for x in range(graph.n):
            if x in (v, w):
                continue
            tv = graph.edge_type(v, x)
            tw = graph.edge_type(w, x)
            cross = (params.q[:, :, tv] * params.p[None, :]) @ params.q[:, :, tw].T
            acc = acc + _safe_log(cross)
    acc -= logsumexp(acc)
    return np.exp(acc)


# ---------------------------------------------------------------------------
# exact pairwise co-membership by partition sums


def _gauss_legendre_01(points):
    x, w = np.polynomial.legendre.leggauss(points)
    return 0.5 * (x + 1.0), 0.5 * w


def _log_m_grid(n, points):
    """Nodes and normalized weights of the log-uniform group-count prior on [2, n]."""
    if n < 2:
        raise ValueError("prior needs n >= 2")
    if n == 2:
        return np.array([2.0]), np.array([1.0])
    s, w = np.polynomial.legendre.leggauss(points)
    lo, hi = math.log(2.0), math.log(n)
    s = 0.5 * (s + 1.0) * (hi - lo) + lo
    w = w * 0.5  # d(log m) weight, normalized since the prior is uniform in log m
    return np.exp(s), w / w.sum()


class _TriangleBetaIntegrals:
    """log of 2 * I(a,b,c,d) = 2 * int_{0<=pO<=pI<=1} pI^a (1-pI)^b pO^c (1-pO)^d."""

    def __init__(self, points=64):
        x, w = _gauss_legendre_01(points)
        self._log_pi = np.log(x)[:, None]
        self._log_1m_pi = np.log1p(-x)[:, None]
        self._log_u = np.log(x)[None, :]
        self._po = x[:, None] * x[None, :]  # pI * u
        self._log_1m_po = np.log1p(-self._po)
        self._log_w2 = np.log(np.outer(w, w)) + math.log(2.0)
        self._cache = {}

    def log_value(self, a, b, c, d):
        key = (a, b, c, d)
        if key not in self._cache:
            # substitution pO = u * pI adds one power of pI as the Jacobian
            la = (a + c + 1) * self._log_pi + b * self._log_1m_pi
            lc = c * self._log_u + d * self._log_1m_po
            self._cache[key] = float(logsumexp(la + lc + self._log_w2))
        return self._cache[key]


def exact_pvw_bruteforce(
    graph,
    params=None,
    mode="fixed",
    quad_points=64,
    m_grid_points=33,
    return_posterior=False,
):
    """Pairwise co-membership probabilities by summing over all partitions.

    In ``fixed`` mode the planted parameters are known and
    Pr(v ~ w | G) = sum over partitions putting v, w together of the joint,
    normalized over all partitions. In ``integrated`` mode the parameters
    are unknown: the within/cross rates get a flat prior on the triangle
    p_out <= p_in and the group count a log-uniform continuum prior on
    [2, n]; both are integrated out of numerator and denominator before
    the ratio. Guarded to n <= 10 (Bell number growth).
    """
    n = graph.n
    if n > _BRUTEFORCE_LIMIT:
        raise ValueError(f"brute force limited to n <= {_BRUTEFORCE_LIMIT}")
    if mode not in ("fixed", "integrated"):
        raise ValueError("mode must be 'fixed' or 'integrated'")
    if mode == "fixed":
        if params is None:
            raise ValueError("fixed mode needs PlantedParams")
        parts = list(enumerate_partitions(n, max_blocks=params.m))
        logw = np.array([joint_planted(p, graph, params) for p in parts])
    else:
        parts = list(enumerate_partitions(n))
        integrals = _TriangleBetaIntegrals(quad_points)
        ms, mw = _log_m_grid(n, m_grid_points)
        log_mw = _safe_log(mw)
        # prior over the block count, integrated over the continuum m grid
        prior_by_blocks = {}
        for k in {p.num_blocks for p in parts}:
            terms = [
                log_mw[i] + log_falling_factorial(ms[i], k) - n * math.log(ms[i])
                for i in range(ms.size)
            ]
            prior_by_blocks[k] = float(logsumexp(np.array(terms)))
        logw = np.empty(len(parts))
        for i, p in enumerate(parts):
            c = EdgeCounts.from_partition(graph, p)
            logw[i] = prior_by_blocks[p.num_blocks] + integrals.log_value(
                c.within_edges, c.within_gaps, c.cross_edges, c.cross_gaps
            )

    log_z = logsumexp(logw)
    labels = np.stack([p.labels() for p in parts])
    pvw = np.eye(n)
    for v in range(n):
        for w in range(v + 1, n):
            mask = labels[:, v] == labels[:, w]
            if np.any(mask):
                pvw[v, w] = pvw[w, v] = math.exp(logsumexp(logw[mask]) - log_z)
            else:
                pvw[v, w] = pvw[w, v] = 0.0
    if return_posterior:
        return pvw, PosteriorTable(parts, logw)
    return pvw


# ---------------------------------------------------------------------------
# Gibbs sampling


@dataclass
class GibbsResult:
    """Co-membership estimates with batch-means Monte Carlo standard errors."""

    pvw: np.ndarray
    stderr: np.ndarray
    sweeps: int
    burn_in: int
    batches: int

    def z_scores(self, reference):
        """(estimate - reference) / stderr with a floor to avoid 0/0."""
        floor = 1.0 / max(self.sweeps - self.burn_in, 1)
        return (self.pvw - reference) / np.maximum(self.stderr, floor)


def _gibbs_conditional_logweights(labels, v, graph, params, log_in, log_gap_in, log_out, log_gap_out):
    m = params.m
    sizes = np.bincount(labels, minlength=m).astype(float)
    sizes[labels[v]] -= 1.0
    nbr = graph.neighbors(v)
    links = np.bincount(labels[nbr], minlength=m).astype(float)
    deg = float(nbr.size)
    other = graph.n - 1.0
    return (
        links * log_in
        + (sizes - links) * log_gap_in
        + (deg - links) * log_out
        + ((other - sizes) - (deg - links)) * log_gap_out
    )


def gibbs_pvw_montecarlo(graph, params, sweeps=4000, burn_in=None, seed=None, batches=20):
    """Single-site Gibbs sampler for planted-partition co-membership.

    Each sweep resamples every node's label from its full conditional.
    After ``burn_in`` sweeps (default 10 n) the co-membership indicator is
    averaged; standard errors come from batch means over ``batches``
    consecutive segments, which absorbs autocorrelation at the batch
    scale.
    """
    n = graph.n
    if burn_in is None:
        burn_in = 10 * n
    keep = sweeps - burn_in
    if keep < batches or keep % batches:
        raise ValueError("sweeps - burn_in must be a positive multiple of batches")
    rng = np.random.default_rng(seed)
    log_in = _safe_log(params.p_in)
    log_gap_in = _safe_log(1.0 - params.p_in)
    log_out = _safe_log(params.p_out)
    log_gap_out = _safe_log(1.0 - params.p_out)

    labels = rng.integers(0, params.m, size=n)
    batch_len = keep // batches
    batch_acc = np.zeros((batches, n, n))
    for sweep in range(sweeps):
        for v in range(n):
            lw = _gibbs_conditional_logweights(
                labels, v, graph, params, log_in, log_gap_in, log_out, log_gap_out
            )
            lw -= lw.max()
            w = np.exp(lw)
            w /= w.sum()
            labels[v] = rng.choice(params.m, p=w)
        if sweep >= burn_in:
            b = (sweep - burn_in) // batch_len
            batch_acc[b] += labels[:, None] == labels[None, :]

    batch_means = batch_acc / batch_len
    pvw = batch_means.mean(axis=0)
    stderr = batch_means.std(axis=0, ddof=1) / math.sqrt(batches)
    np.fill_diagonal(pvw, 1.0)
    np.fill_diagonal(stderr, 0.0)
    return GibbsResult(pvw=pvw, stderr=stderr, sweeps=sweeps, burn_in=burn_in, batches=batches)
