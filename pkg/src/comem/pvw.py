"""Pairwise co-membership probabilities from local evidence.

For a pair of nodes (v, w) in an n-node graph, the evidence kept is the
adjacency indicator kappa of the pair itself plus the split of the other
n - 2 nodes into counts (n0, n1, n2) by how many of {v, w} each is
adjacent to. Under a planted-partition prior with unknown rates and an
unknown group count, the posterior probability that v and w share a group
is a ratio of two integrals over the rate triangle p_out <= p_in. This
module computes that ratio exactly by quadrature (``pvw_integral``) and
through a closed-form peak approximation with empirical corrections
(``pvw_hat``), and scales the latter to whole graphs (``pvw_matrix_batch``)
by caching on the evidence triple (kappa, n1, n2).

Key densities, writing mu = 1/m, delta = mu p_in + (1 - mu) p_out and
psi = mu (1 - mu)(p_in - p_out)^2 when the pair shares a group (else
psi = -mu^2 (p_in - p_out)^2):

    f(delta, psi) = ((1-delta)^2 + psi)^n0 (delta(1-delta) - psi)^n1
                    (delta^2 + psi)^n2

The peak of f sits at delta_p = (n1 + 2 n2) / (2 (n-2)) and
psi_p = (4 n0 n2 - n1^2) / (4 (n-2)^2), where the three bases take the
closed forms n0/(n-2), n1/(2(n-2)) and n2/(n-2).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad_vec
from scipy.special import logsumexp

__all__ = [
    "PairEvidence",
    "PeakPoint",
    "PvwMatrix",
    "TripleCache",
    "common_neighbor_counts",
    "pair_evidence",
    "peak_location",
    "log_f",
    "lambda_tilde",
    "lambda_corrections",
    "mu_bar",
    "pvw_hat",
    "pvw_integral",
    "pvw_matrix_batch",
]

# empirical correction constants for the peak approximation
_LAMBDA0_COEF = 0.46
_LAMBDA0_EXP = -0.15
_LAMBDA0_CAP = 0.7197
_LAMBDA1_SLOPE = 0.56051044368284805729
_LAMBDA1_INTERCEPT = 1.598
_LAMBDA1_EXP = -0.7

_INTEGRAL_NODE_GUARD = 200


@dataclass(frozen=True)
class PairEvidence:
    """Local evidence for one pair: adjacency plus common-neighbor counts.

    ``kappa`` is 1 when the pair is an edge. Among the other n - 2 nodes,
    ``n2`` are adjacent to both endpoints, ``n1`` to exactly one and
    ``n0`` to neither.
    """

    kappa: int
    n0: int
    n1: int
    n2: int

    def __post_init__(self):
        if self.kappa not in (0, 1):
            raise ValueError("kappa must be 0 or 1")
        if min(self.n0, self.n1, self.n2) < 0:
            raise ValueError("counts must be nonnegative")
        if self.n0 + self.n1 + self.n2 < 1:
            raise ValueError("pair evidence needs at least one other node")

    @property
    def n(self):
        return self.n0 + self.n1 + self.n2 + 2

    @property
    def triple(self):
        return (self.kappa, self.n1, self.n2)


@dataclass(frozen=True)
class PeakPoint:
    delta: float
    psi: float


def pair_evidence(graph, v, w):
    """Evidence summary (kappa, n0, n1, n2) for one node pair."""
    if v == w:
        raise ValueError("pair must be two distinct nodes")
    if graph.n < 3:
        raise ValueError("pair evidence needs at least three nodes")
    kappa = 1 if graph.has_edge(v, w) else 0
    n2 = int(np.intersect1d(graph.neighbors(v), graph.neighbors(w)).size)
    n1 = graph.degree(v) + graph.degree(w) - 2 * n2 - 2 * kappa
    n0 = graph.n - 2 - n1 - n2
    return PairEvidence(kappa, n0, n1, n2)


def peak_location(evidence):
    """Location (delta_p, psi_p) of the maximum of f for this evidence."""
    d = evidence.n0 + evidence.n1 + evidence.n2
    delta = (evidence.n1 + 2 * evidence.n2) / (2.0 * d)
    psi = (4.0 * evidence.n0 * evidence.n2 - evidence.n1**2) / (4.0 * d * d)
    return PeakPoint(delta, psi)


def log_f(delta, psi, evidence):
    """log f(delta, psi); zero exponents skip their base (0^0 = 1)."""
    total = 0.0
    for count, base in (
        (evidence.n0, (1.0 - delta) ** 2 + psi),
        (evidence.n1, delta * (1.0 - delta) - psi),
        (evidence.n2, delta**2 + psi),
    ):
        if count:
            if base <= 0.0:
                return -np.inf
            total += count * math.log(base)
    return total


def _log_f_at_peak(evidence):
    # closed form: bases are n0/d, n1/(2d), n2/d
    d = evidence.n0 + evidence.n1 + evidence.n2
    total = 0.0
    for count, base in (
        (evidence.n0, evidence.n0 / d),
        (evidence.n1, evidence.n1 / (2.0 * d)),
        (evidence.n2, evidence.n2 / d),
    ):
        if count:
            total += count * math.log(base)
    return total


def log_lambda_tilde(evidence):
    peak = peak_location(evidence)
    lf_peak = _log_f_at_peak(evidence)
    lf_zero = log_f(peak.delta, 0.0, evidence)
    if lf_peak == -np.inf and lf_zero == -np.inf:
        # degenerate evidence, no usable likelihood ratio
        return 0.0
    if peak.psi >= 0.0:
        return lf_peak - lf_zero
    return lf_zero - lf_peak


def lambda_tilde(evidence):
    """Likelihood-ratio factor f at the peak versus f on the psi = 0 axis.

    Returns f(peak)/f(delta_p, 0) when psi_p >= 0 and the reciprocal
    otherwise, so psi_p >= 0 gives a ratio >= 1 and psi_p < 0 one <= 1.
    """
    try:
        return math.exp(log_lambda_tilde(evidence))
    except OverflowError:
        return math.inf


def lambda_corrections(evidence):
    """Empirical correction factors (lambda0, lambda1) for the peak ratio.

    lambda1 applies to adjacent pairs and grows linearly with n up to the
    cap delta_p^-0.7; lambda0 applies to non-adjacent pairs and is capped
    at a constant. At delta_p = 0 both power caps are infinite and the
    other branch applies.
    """
    peak = peak_location(evidence)
    n = evidence.n
    if peak.delta > 0.0:
        cap0 = _LAMBDA0_COEF * peak.delta**_LAMBDA0_EXP
        cap1 = peak.delta**_LAMBDA1_EXP
    else:
        cap0 = math.inf
        cap1 = math.inf
    lam0 = min(_LAMBDA0_CAP, cap0)
    lam1 = min(_LAMBDA1_SLOPE * n + _LAMBDA1_INTERCEPT, cap1)
    return lam0, lam1


def mu_bar(n):
    """Mean of 1/m under the log-uniform group-count prior on [2, n]."""
    if n < 2:
        raise ValueError("prior needs n >= 2")
    if n == 2:
        return 0.5
    return (0.5 - 1.0 / n) / math.log(n / 2.0)


def _posterior_from_log_ratio(log_ratio, n):
    odds_term = 1.0 / mu_bar(n) - 1.0
    # p = ratio / (ratio + odds_term), computed through the log for range safety
    x = log_ratio - math.log(odds_term)
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def pvw_hat(evidence):
    """Closed-form co-membership probability from the corrected peak ratio."""
    lam0, lam1 = lambda_corrections(evidence)
    lam = lam1 if evidence.kappa else lam0
    return _posterior_from_log_ratio(math.log(lam) + log_lambda_tilde(evidence), evidence.n)


# ---------------------------------------------------------------------------
# full integral


def _m_grid(n, points):
    s, w = np.polynomial.legendre.leggauss(points)
    lo, hi = math.log(2.0), math.log(n)
    s = 0.5 * (s + 1.0) * (hi - lo) + lo
    w = 0.5 * w  # uniform in log m; normalization cancels in the ratio
    return np.exp(s), w / w.sum()


def _log_f_grid(delta, psi, evidence):
    """Vectorized log f over arrays of (delta, psi)."""
    out = np.zeros(np.broadcast(delta, psi).shape)
    for count, base in (
        (evidence.n0, (1.0 - delta) ** 2 + psi),
        (evidence.n1, delta * (1.0 - delta) - psi),
        (evidence.n2, delta**2 + psi),
    ):
        if count:
            base = np.asarray(base)
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(base > 0.0, np.log(np.maximum(base, 1e-320)), -np.inf)
            out = out + count * term
    return out


def _integrand_columns(p_in, p_out, evidence, mus, shift):
    """Scaled integrand values over p_out nodes and the m grid.

    ``p_out`` has shape (q, 1) and ``mus`` (K,); the result has shape
    (2, q, K): leading index 0 is the co-member hypothesis, 1 the split
    hypothesis. ``shift`` rescales by exp(-shift) to keep the quadrature
    in a sane floating range.
    """
    diff = p_in - p_out
    delta = mus * p_in + (1.0 - mus) * p_out
    psi_plus = mus * (1.0 - mus) * diff * diff
    psi_minus = -((mus * diff) ** 2)
    if evidence.kappa:
        ej_same, ej_split = p_in, p_out
    else:
        ej_same, ej_split = 1.0 - p_in, 1.0 - p_out
    log_same = _log_f_grid(delta, psi_plus, evidence) - shift
    log_split = _log_f_grid(delta, psi_minus, evidence) - shift
    out = np.empty((2,) + log_same.shape)
    out[0] = ej_same * np.exp(log_same)
    out[1] = ej_split * np.exp(log_split)
    return out


def _inner_slice(p_in, evidence, mus, shift, u_nodes, u_weights):
    """Integral over p_out in [0, p_in] at fixed p_in, for both hypotheses.

    The integrand is a polynomial of bounded degree in p_out, so the
    scaled Gauss-Legendre rule evaluates this direction exactly.
    """
    p_out = (p_in * u_nodes)[:, None]
    cols = _integrand_columns(p_in, p_out, evidence, mus, shift)  # (2, q, K)
    return p_in * np.tensordot(cols, u_weights, axes=(1, 0))  # (2, K)


def _inner_rule(n):
    u, w = np.polynomial.legendre.leggauss(n + 4)
    return 0.5 * (u + 1.0), 0.5 * w


def _integral_adaptive(evidence, mus, shift, rel_tol):
    u_nodes, u_weights = _inner_rule(evidence.n)
    value, _ = quad_vec(
        lambda p_in: _inner_slice(p_in, evidence, mus, shift, u_nodes, u_weights),
        0.0,
        1.0,
        epsabs=1e-300,
        epsrel=rel_tol,
    )
    return value  # (2, len(mus)); flat prior density 2 cancels in the ratio


def _integral_tensor(evidence, mus, shift, points=None):
    # fixed rule sized so both directions integrate the polynomial exactly
    n = evidence.n
    if points is None:
        points = 2 * n + 8
    x_in, w_in = np.polynomial.legendre.leggauss(points)
    x_in = 0.5 * (x_in + 1.0)
    w_in = 0.5 * w_in
    u_nodes, u_weights = _inner_rule(n)
    total = np.zeros((2, mus.size))
    for xi, wi in zip(x_in, w_in):
        total += wi * _inner_slice(xi, evidence, mus, shift, u_nodes, u_weights)
    return total


def pvw_integral(
    evidence,
    rel_tol=1e-8,
    m_points=33,
    quadrature="adaptive",
    m_weighting="plain",
):
    """Co-membership probability by integrating out rates and group count.

    The two pair hypotheses (share a group or not) each get their evidence
    integral over the flat triangle prior p_out <= p_in, averaged over the
    log-uniform continuum prior on the group count m in [2, n]. The default
    ``m_weighting="plain"`` averages the conditional evidence over the m
    prior directly; "posterior" additionally carries the hypothesis
    probability 1/m (resp. 1 - 1/m) inside the m average, coupling the two
    priors. ``quadrature`` selects nested adaptive Gauss-Kronrod panels on
    the triangle (relative tolerance ``rel_tol``) or a fixed Gauss-Legendre
    tensor rule sized to integrate the polynomial integrand exactly.
    Guarded to n <= 200; beyond that the closed form ``pvw_hat`` applies.
    """
    n = evidence.n
    if n > _INTEGRAL_NODE_GUARD:
        raise ValueError(f"integral evidence limited to n <= {_INTEGRAL_NODE_GUARD}")
    if m_weighting not in ("posterior", "plain"):
        raise ValueError("m_weighting must be 'posterior' or 'plain'")
    ms, mw = _m_grid(n, m_points)
    mus = 1.0 / ms
    shift = _log_f_at_peak(evidence)
    if quadrature == "adaptive":
        vals = _integral_adaptive(evidence, mus, shift, rel_tol)
    elif quadrature == "tensor":
        vals = _integral_tensor(evidence, mus, shift)
    else:
        raise ValueError("quadrature must be 'adaptive' or 'tensor'")
    if m_weighting == "posterior":
        w_same = mw * mus
        w_split = mw * (1.0 - mus)
    else:
        w_same = w_split = mw
    num = float(vals[0] @ w_same)
    den = float(vals[1] @ w_split)
    if num <= 0.0 and den <= 0.0:
        return mu_bar(n)
    if den <= 0.0:
        return 1.0
    if num <= 0.0:
        return 0.0
    if m_weighting == "posterior":
        # weights already carry Pr(M | m); normalize them back to E[. | M]
        log_ratio = math.log(num) - math.log(den)
        log_ratio += math.log(float(mw @ (1.0 - mus))) - math.log(float(mw @ mus))
    else:
        log_ratio = math.log(num) - math.log(den)
    return _posterior_from_log_ratio(log_ratio, n)


# ---------------------------------------------------------------------------
# whole-graph batches


class TripleCache:
    """Cache of computed probabilities keyed by (kappa, n1, n2).

    The third count n0 follows from n, so pairs sharing a triple share a
    value. ``counts`` tracks how many pairs used each triple; the CSV
    export is one row per triple.
    """

    def __init__(self, n, method="hat", integral_opts=None):
        self.n = n
        self.method = method
        self.integral_opts = dict(integral_opts or {})
        self.values = {}
        self.counts = {}

    def compute(self, kappa, n1, n2):
        n0 = self.n - 2 - n1 - n2
        ev = PairEvidence(int(kappa), int(n0), int(n1), int(n2))
        if self.method == "hat":
            return pvw_hat(ev)
        if self.method == "integral":
            return pvw_integral(ev, **self.integral_opts)
        raise ValueError("method must be 'hat' or 'integral'")

    def get(self, kappa, n1, n2, count=1):
        key = (int(kappa), int(n1), int(n2))
        if key not in self.values:
            self.values[key] = self.compute(*key)
        self.counts[key] = self.counts.get(key, 0) + int(count)
        return self.values[key]

    def __len__(self):
        return len(self.values)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("kappa,n1,n2,p_hat,count\n")
            for key in sorted(self.values):
                fh.write(
                    f"{key[0]},{key[1]},{key[2]},{self.values[key]:.12g},{self.counts.get(key, 0)}\n"
                )


class PvwMatrix:
    """Symmetric sparse map from node pairs to co-membership probability.

    Pairs carrying structure (adjacent, or sharing common neighbors) are
    stored explicitly; any other pair falls back to its degree-class value
    (kappa = 0, n2 = 0, so the evidence triple depends only on the degree
    sum), which is never materialized per pair.
    """

    def __init__(self, n, keys, values, degrees=None, default_table=None, metadata=None):
        self.n = int(n)
        self.keys = np.asarray(keys, dtype=np.int64)
        self.values = np.asarray(values, dtype=float)
        if self.keys.size != self.values.size:
            raise ValueError("keys and values must align")
        self.degrees = None if degrees is None else np.asarray(degrees, dtype=np.int64)
        self.default_table = dict(default_table or {})
        self.metadata = dict(metadata or {})
        self._fallback = None

    def _default_for_degsum(self, s):
        s = int(s)
        if s > self.n - 2:
            # a pair with no edge and no common neighbor has disjoint
            # neighborhoods, so its degree sum is at most n - 2
            raise ValueError(f"degree sum {s} cannot belong to an untouched pair")
        if s not in self.default_table:
            if self._fallback is None:
                self._fallback = TripleCache(self.n, self.metadata.get("method", "hat"))
            self.default_table[s] = self._fallback.compute(0, s, 0)
        return self.default_table[s]

    def get(self, v, w):
        if v == w:
            return 1.0
        if v > w:
            v, w = w, v
        key = v * self.n + w
        pos = np.searchsorted(self.keys, key)
        if pos < self.keys.size and self.keys[pos] == key:
            return float(self.values[pos])
        if self.degrees is None:
            raise KeyError("no degree information for default lookup")
        return self._default_for_degsum(self.degrees[v] + self.degrees[w])

    def default_for(self, v, w):
        return self._default_for_degsum(self.degrees[v] + self.degrees[w])

    def entries(self):
        for key, val in zip(self.keys.tolist(), self.values.tolist()):
            yield (key // self.n, key % self.n), val

    def to_dense(self, limit=4000):
        if self.n > limit:
            raise ValueError(f"dense matrix refused for n > {limit}")
        out = np.full((self.n, self.n), np.nan)
        u = self.keys // self.n
        v = self.keys % self.n
        out[u, v] = self.values
        out[v, u] = self.values
        np.fill_diagonal(out, 1.0)
        hole = np.isnan(out)
        if np.any(hole):
            if self.degrees is None:
                raise KeyError("no degree information for default lookup")
            degsum = self.degrees[:, None] + self.degrees[None, :]
            wanted = np.unique(degsum[hole])
            lut = np.zeros(int(wanted.max()) + 1)
            for s in wanted.tolist():
                lut[s] = self._default_for_degsum(s)
            out[hole] = lut[degsum[hole]]
        return out

    def __len__(self):
        return int(self.keys.size)

    # -- persistence: JSON header, then raw little-endian triplets ---------

    _MAGIC = b"PVWM"

    def save(self, path):
        header = {
            "n": self.n,
            "count": int(self.keys.size),
            "has_degrees": self.degrees is not None,
            "default_table": {str(k): v for k, v in self.default_table.items()},
            "metadata": self.metadata,
        }
        blob = json.dumps(header).encode("utf-8")
        rec = np.empty(self.keys.size, dtype=[("u", "<u4"), ("v", "<u4"), ("p", "<f8")])
        rec["u"] = self.keys // self.n
        rec["v"] = self.keys % self.n
        rec["p"] = self.values
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(len(blob).to_bytes(4, "little"))
            fh.write(blob)
            fh.write(rec.tobytes())
            if self.degrees is not None:
                fh.write(self.degrees.astype("<i8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(4) != cls._MAGIC:
                raise ValueError("not a pvw matrix file")
            size = int.from_bytes(fh.read(4), "little")
            header = json.loads(fh.read(size).decode("utf-8"))
            rec = np.frombuffer(
                fh.read(header["count"] * 16), dtype=[("u", "<u4"), ("v", "<u4"), ("p", "<f8")]
            )
            degrees = None
            if header["has_degrees"]:
                degrees = np.frombuffer(fh.read(header["n"] * 8), dtype="<i8")
        keys = rec["u"].astype(np.int64) * header["n"] + rec["v"]
        return cls(
            header["n"],
            keys,
            rec["p"].astype(float),
            degrees=degrees,
            default_table={int(k): v for k, v in header["default_table"].items()},
            metadata=header["metadata"],
        )


def _pair_keys_for_rows(args):
    indptr, indices, n, rows = args
    chunks = []
    tri_cache = {}
    for x in rows:
        nb = indices[indptr[x]:indptr[x + 1]]
        d = nb.size
        if d < 2:
            continue
        if d not in tri_cache:
            tri_cache[d] = np.triu_indices(d, 1)
        iu, iv = tri_cache[d]
        chunks.append(nb[iu].astype(np.int64) * n + nb[iv])
    if not chunks:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    keys = np.concatenate(chunks)
    return np.unique(keys, return_counts=True)


def _merge_key_counts(parts):
    keys = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    if keys.size == 0:
        return keys, counts
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    counts = counts[order]
    boundaries = np.flatnonzero(np.diff(keys)) + 1
    starts = np.concatenate([[0], boundaries])
    uniq = keys[starts]
    summed = np.add.reduceat(counts, starts)
    return uniq, summed


def common_neighbor_counts(graph, workers=1):
    """Counts of common neighbors for every pair that has any.

    Returns sorted pair keys (u * n + v with u < v) and counts n2 > 0.
    With ``workers`` > 1 the per-node pair generation is split across
    processes and the partial tallies merged; results are identical to
    the serial path.
    """
    indptr, indices = graph.adjacency_csr()
    n = graph.n
    rows = np.arange(n)
    if workers <= 1:
        return _pair_keys_for_rows((indptr, indices, n, rows))
    import multiprocessing as mp

    # split rows so each chunk carries a similar amount of pair work
    work = np.array([indices[indptr[x]:indptr[x + 1]].size ** 2 for x in rows], dtype=float)
    order = np.argsort(-work, kind="stable")
    assignments = [[] for _ in range(workers)]
    loads = np.zeros(workers)
    for x in order:
        k = int(np.argmin(loads))
        assignments[k].append(int(x))
        loads[k] += work[x]
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        parts = pool.map(
            _pair_keys_for_rows,
            [(indptr, indices, n, np.array(rows_k, dtype=np.int64)) for rows_k in assignments],
        )
    return _merge_key_counts(parts)


def pvw_matrix_batch(graph, method="hat", workers=1, cache=None, integral_opts=None):
    """Co-membership probabilities for a whole graph.

    Explicit values are computed for every pair that is adjacent or has a
    common neighbor; their evidence triples (kappa, n1, n2) are deduplicated
    through a TripleCache so each distinct triple costs one evaluation.
    All remaining pairs have kappa = 0, n2 = 0 and are represented by their
    degree-class value, counted through the degree histogram rather than
    pair iteration. Returns (PvwMatrix, TripleCache).
    """
    n = graph.n
    if n < 3:
        raise ValueError("batch needs at least three nodes")
    if cache is None:
        cache = TripleCache(n, method=method, integral_opts=integral_opts)
    degrees = graph.degrees()

    pair_keys, n2_counts = common_neighbor_counts(graph, workers=workers)
    edge_keys = graph._keys
    extra_edges = edge_keys[~np.isin(edge_keys, pair_keys, assume_unique=True)]
    all_keys = np.concatenate([pair_keys, extra_edges])
    all_n2 = np.concatenate([n2_counts, np.zeros(extra_edges.size, dtype=n2_counts.dtype)])
    order = np.argsort(all_keys, kind="stable")
    all_keys = all_keys[order]
    all_n2 = all_n2[order]

    u = all_keys // n
    v = all_keys % n
    kappa = np.zeros(all_keys.size, dtype=np.int64)
    kappa[np.isin(all_keys, edge_keys, assume_unique=True)] = 1
    n1 = degrees[u] + degrees[v] - 2 * all_n2 - 2 * kappa
    triple_ids = (all_n2 * (2 * n + 1) + n1) * 2 + kappa
    uniq, inverse, counts = np.unique(triple_ids, return_inverse=True, return_counts=True)
    uniq_vals = np.empty(uniq.size)
    for i, tid in enumerate(uniq.tolist()):
        kap = tid & 1
        rest = tid >> 1
        nn2 = rest // (2 * n + 1)
        nn1 = rest % (2 * n + 1)
        uniq_vals[i] = cache.get(kap, nn1, nn2, count=int(counts[i]))
    values = uniq_vals[inverse]

    # degree-class bookkeeping for untouched pairs (kappa = 0, n2 = 0)
    hist = np.bincount(degrees, minlength=int(degrees.max()) + 1 if n else 1)
    deg_vals = np.flatnonzero(hist)
    pair_total = {}
    for i, a in enumerate(deg_vals.tolist()):
        for b in deg_vals.tolist()[i:]:
            s = a + b
            cnt = (
                hist[a] * (hist[a] - 1) // 2
                if a == b
                else int(hist[a]) * int(hist[b])
            )
            pair_total[s] = pair_total.get(s, 0) + cnt
    explicit_sums = degrees[u] + degrees[v]
    explicit_hist = np.bincount(explicit_sums, minlength=(int(degrees.max()) * 2) + 1)
    default_table = {}
    for s, total in sorted(pair_total.items()):
        remaining = total - int(explicit_hist[s]) if s < explicit_hist.size else total
        if remaining > 0:
            default_table[s] = cache.get(0, s, 0, count=remaining)

    meta = {"method": method, "n": n, "edges": graph.num_edges}
    matrix = PvwMatrix(
        n,
        all_keys,
        values,
        degrees=degrees,
        default_table=default_table,
        metadata=meta,
    )
    return matrix, cache
