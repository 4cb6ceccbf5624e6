"""Filters for communities evolving on dynamic graphs.

A continuous-time model moves nodes between communities (rate matrix per
node) and flips edge types (rate matrix per pair, chosen by the endpoint
communities). On top of it live three estimators:

- a full Bayesian filter over all m**n community assignments, exact but
  exponential (guarded at 2e6 states);
- a marginalized filter for per-node community probabilities, exact given
  pair and triple statistics supplied by an oracle;
- a pairwise filter for co-membership probabilities in the symmetric
  two-type case, exact given triple/quadruple statistics, and usable with
  truncation closures when those are unavailable.

The closure tooling (three-pair bounds, max-entropy triple probability,
diagnostics of the truncation error terms) lives here too. Probabilities
produced by truncated closures can leave [0,1]; they are clamped and the
violations are logged on the state rather than hidden.
"""

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

__all__ = [
    "InconsistentModelError",
    "DynamicBlockParams",
    "DynamicPlantedParams",
    "Event",
    "EventTimeline",
    "stationary_initial",
    "simulate",
    "KroneckerSum",
    "kronecker_sum",
    "dense_node_generator",
    "dense_edge_generator",
    "dense_joint_generator",
    "dense_predict_generator",
    "steady_state_distribution",
    "FullFilterState",
    "full_filter_init",
    "full_predict",
    "full_update",
    "run_full_filter",
    "FullFilterOracle",
    "NodeMarginalState",
    "marginal_init",
    "marginal_predict",
    "marginal_update",
    "run_marginal_filter",
    "third_order_bounds",
    "maxent_closure",
    "triple_split_probabilities",
    "IndependentPairsClosure",
    "MaxEntClosure",
    "FullOracleClosure",
    "PairwiseState",
    "pairwise_init",
    "pairwise_predict",
    "pairwise_update",
    "run_pairwise_filter",
    "ClosureDiagnostics",
    "closure_diagnostics",
]

_FULL_STATE_GUARD = 2_000_000
_DENSE_GUARD = 4096
_RATE_TOL = 1e-12


class InconsistentModelError(ValueError):
    """Observed data has zero probability under the model, or probability
    inputs contradict each other."""


# ---------------------------------------------------------------------------
# parameters


def _check_rate_matrix(mat, what):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("%s must be square" % what)
    off = mat - np.diag(np.diagonal(mat))
    if off.min() < -_RATE_TOL:
        raise ValueError("%s has a negative off-diagonal rate" % what)
    col = mat.sum(axis=0)
    if np.abs(col).max() > 1e-12:
        raise ValueError("%s columns must sum to zero" % what)
    return mat


@dataclass(frozen=True)
class DynamicBlockParams:
    """Rate matrices of the dynamic model.

    hop_rates[i, j] is the rate at which a node in community j moves to
    community i (columns sum to zero). edge_rates[i, j] is the r x r rate
    matrix for an edge between communities i and j; edge_rates[i, j, k, l]
    moves the edge from type l to type k. The collection must be symmetric
    in (i, j).
    """

    hop_rates: np.ndarray
    edge_rates: np.ndarray

    def __post_init__(self):
        A = _check_rate_matrix(self.hop_rates, "hop_rates")
        B = np.asarray(self.edge_rates, dtype=float)
        if B.ndim != 4 or B.shape[0] != B.shape[1] or B.shape[2] != B.shape[3]:
            raise ValueError("edge_rates must have shape (m, m, r, r)")
        if B.shape[0] != A.shape[0]:
            raise ValueError("hop_rates and edge_rates disagree on m")
        if not np.allclose(B, np.swapaxes(B, 0, 1)):
            raise ValueError("edge_rates must be symmetric in the community pair")
        for i in range(B.shape[0]):
            for j in range(i, B.shape[1]):
                _check_rate_matrix(B[i, j], "edge_rates[%d,%d]" % (i, j))
        object.__setattr__(self, "hop_rates", A)
        object.__setattr__(self, "edge_rates", B)

    @property
    def m(self):
        return self.hop_rates.shape[0]

    @property
    def r(self):
        return self.edge_rates.shape[2]

    def as_block(self):
        return self


@dataclass(frozen=True)
class DynamicPlantedParams:
    """Symmetric two-type special case: one hop rate, and on/off edge rates
    that depend only on whether the endpoints share a community."""

    n: int
    m: int
    hop_rate: float
    on_rate_within: float
    off_rate_within: float
    on_rate_between: float
    off_rate_between: float

    def __post_init__(self):
        if self.n < 2 or self.m < 2:
            raise ValueError("need n >= 2 nodes and m >= 2 communities")
        for name in (
            "hop_rate",
            "on_rate_within",
            "off_rate_within",
            "on_rate_between",
            "off_rate_between",
        ):
            if getattr(self, name) < 0:
                raise ValueError("%s must be >= 0" % name)

    def as_block(self):
        m = self.m
        A = np.full((m, m), self.hop_rate / (m - 1))
        np.fill_diagonal(A, -self.hop_rate)
        B = np.empty((m, m, 2, 2))
        within = np.array(
            [
                [-self.on_rate_within, self.off_rate_within],
                [self.on_rate_within, -self.off_rate_within],
            ]
        )
        between = np.array(
            [
                [-self.on_rate_between, self.off_rate_between],
                [self.on_rate_between, -self.off_rate_between],
            ]
        )
        B[:] = between
        for i in range(m):
            B[i, i] = within
        return DynamicBlockParams(A, B)


def _flip_rate_matrices(params, kappa):
    """(gamma_within, gamma_between): current flip rate of every pair under
    the same-community and different-community hypotheses."""
    on = kappa == 1
    g_in = np.where(on, params.off_rate_within, params.on_rate_within)
    g_out = np.where(on, params.off_rate_between, params.on_rate_between)
    return g_in.astype(float), g_out.astype(float)


# ---------------------------------------------------------------------------
# timelines


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # "hop" or "flip"
    target: object  # node id, or (u, v) pair
    old: int
    new: int


@dataclass
class EventTimeline:
    """Ground-truth history: initial state plus time-ordered events."""

    n: int
    m: int
    r: int
    horizon: float
    initial_phi: np.ndarray
    initial_kappa: np.ndarray
    events: list
    params: object = None

    def __post_init__(self):
        self.initial_phi = np.asarray(self.initial_phi, dtype=np.int64)
        self.initial_kappa = np.asarray(self.initial_kappa, dtype=np.int64)
        if self.initial_phi.shape != (self.n,):
            raise ValueError("initial_phi must have one entry per node")
        if self.initial_kappa.shape != (self.n, self.n):
            raise ValueError("initial_kappa must be n x n")
        if not np.array_equal(self.initial_kappa, self.initial_kappa.T):
            raise ValueError("initial_kappa must be symmetric")
        if self.initial_phi.min() < 0 or self.initial_phi.max() >= self.m:
            raise ValueError("initial_phi out of community range")
        if self.initial_kappa.min() < 0 or self.initial_kappa.max() >= self.r:
            raise ValueError("initial_kappa out of edge-type range")
        # replay to enforce consistency
        phi = self.initial_phi.copy()
        kappa = self.initial_kappa.copy()
        last = 0.0
        for ev in self.events:
            if not ev.time > last:
                raise ValueError("event times must be strictly increasing")
            if ev.time > self.horizon:
                raise ValueError("event beyond the horizon")
            last = ev.time
            if ev.kind == "hop":
                v = ev.target
                if phi[v] != ev.old or ev.old == ev.new or not 0 <= ev.new < self.m:
                    raise ValueError("inconsistent hop event at t=%g" % ev.time)
                phi[v] = ev.new
            elif ev.kind == "flip":
                u, v = ev.target
                if kappa[u, v] != ev.old or ev.old == ev.new or not 0 <= ev.new < self.r:
                    raise ValueError("inconsistent flip event at t=%g" % ev.time)
                kappa[u, v] = kappa[v, u] = ev.new
            else:
                raise ValueError("unknown event kind %r" % ev.kind)

    def flips(self):
        return [ev for ev in self.events if ev.kind == "flip"]

    def hops(self):
        return [ev for ev in self.events if ev.kind == "hop"]

    def assignment_at(self, t):
        phi = self.initial_phi.copy()
        for ev in self.events:
            if ev.time > t:
                break
            if ev.kind == "hop":
                phi[ev.target] = ev.new
        return phi

    def graph_at(self, t):
        kappa = self.initial_kappa.copy()
        for ev in self.events:
            if ev.time > t:
                break
            if ev.kind == "flip":
                u, v = ev.target
                kappa[u, v] = kappa[v, u] = ev.new
        return kappa

    def to_file(self, path):
        header = {
            "format": "dynet-timeline-1",
            "n": self.n,
            "m": self.m,
            "r": self.r,
            "horizon": self.horizon,
            "initial_phi": self.initial_phi.tolist(),
            "initial_edges": [
                [int(u), int(v), int(self.initial_kappa[u, v])]
                for u, v in zip(*np.triu_indices(self.n, k=1))
                if self.initial_kappa[u, v] != 0
            ],
            "params": _params_to_json(self.params),
        }
        lines = [json.dumps(header)]
        for ev in self.events:
            if ev.kind == "hop":
                lines.append("hop %r %d %d %d" % (ev.time, ev.target, ev.old, ev.new))
            else:
                u, v = ev.target
                lines.append("flip %r %d %d %d %d" % (ev.time, u, v, ev.old, ev.new))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        header = json.loads(lines[0])
        if header.get("format") != "dynet-timeline-1":
            raise ValueError("not a timeline file")
        n = header["n"]
        kappa = np.zeros((n, n), dtype=np.int64)
        for u, v, k in header["initial_edges"]:
            kappa[u, v] = kappa[v, u] = k
        events = []
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "hop":
                events.append(
                    Event(float(parts[1]), "hop", int(parts[2]), int(parts[3]), int(parts[4]))
                )
            elif parts[0] == "flip":
                events.append(
                    Event(
                        float(parts[1]),
                        "flip",
                        (int(parts[2]), int(parts[3])),
                        int(parts[4]),
                        int(parts[5]),
                    )
                )
            else:
                raise ValueError("bad event line: %r" % ln)
        return cls(
            n=n,
            m=header["m"],
            r=header["r"],
            horizon=header["horizon"],
            initial_phi=np.array(header["initial_phi"]),
            initial_kappa=kappa,
            events=events,
            params=_params_from_json(header.get("params")),
        )


def _params_to_json(params):
    if params is None:
        return None
    if isinstance(params, DynamicPlantedParams):
        return {
            "kind": "planted",
            "n": params.n,
            "m": params.m,
            "hop_rate": params.hop_rate,
            "on_rate_within": params.on_rate_within,
            "off_rate_within": params.off_rate_within,
            "on_rate_between": params.on_rate_between,
            "off_rate_between": params.off_rate_between,
        }
    return {
        "kind": "block",
        "hop_rates": params.hop_rates.tolist(),
        "edge_rates": params.edge_rates.tolist(),
    }


def _params_from_json(blob):
    if blob is None:
        return None
    if blob["kind"] == "planted":
        fields = {k: v for k, v in blob.items() if k != "kind"}
        return DynamicPlantedParams(**fields)
    return DynamicBlockParams(np.array(blob["hop_rates"]), np.array(blob["edge_rates"]))


def stationary_initial(params, n=None, seed=0):
    """Draw (phi0, kappa0) with communities uniform and each edge type drawn
    from the stationary law of its rate matrix."""
    block = params.as_block()
    if isinstance(params, DynamicPlantedParams):
        n = params.n if n is None else n
    if n is None:
        raise ValueError("n is required for block parameters")
    rng = np.random.default_rng(seed)
    phi = rng.integers(0, block.m, size=n)
    kappa = np.zeros((n, n), dtype=np.int64)
    stat = {}
    for i in range(block.m):
        for j in range(i, block.m):
            stat[(i, j)] = _stationary_law(block.edge_rates[i, j])
    for u in range(n):
        for v in range(u + 1, n):
            i, j = sorted((phi[u], phi[v]))
            k = rng.choice(block.r, p=stat[(i, j)])
            kappa[u, v] = kappa[v, u] = k
    return phi, kappa


def _stationary_law(rate_matrix):
    # null vector of the generator, normalized to a distribution
    vals, vecs = np.linalg.eig(rate_matrix)
    idx = np.argmax(vals.real)
    vec = np.abs(vecs[:, idx].real)
    return vec / vec.sum()


def simulate(params, initial, horizon, seed=0, n=None):
    """Exact event-driven simulation of the dynamic model.

    initial is either a (phi0, kappa0) pair or the string "stationary".
    Every node and every pair carries an exponential clock; after any event
    the affected rates are recomputed, which (by memorylessness) is the same
    as redrawing the clocks of pairs whose endpoint hopped.
    """
    block = params.as_block()
    if initial == "stationary":
        phi0, kappa0 = stationary_initial(params, n=n, seed=seed + 1)
    else:
        phi0, kappa0 = initial
    phi = np.asarray(phi0, dtype=np.int64).copy()
    kappa = np.asarray(kappa0, dtype=np.int64).copy()
    nn = phi.shape[0]
    A, B = block.hop_rates, block.edge_rates
    rng = np.random.default_rng(seed)

    iu, iv = np.triu_indices(nn, k=1)
    pairs_of = [np.flatnonzero((iu == v) | (iv == v)) for v in range(nn)]

    node_rate = -A[phi, phi]
    edge_rate = -B[phi[iu], phi[iv], kappa[iu, iv], kappa[iu, iv]]

    events = []
    t = 0.0
    while True:
        total = node_rate.sum() + edge_rate.sum()
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        u = rng.uniform(0.0, total)
        if u < node_rate.sum():
            v = int(np.searchsorted(np.cumsum(node_rate), u, side="right"))
            old = int(phi[v])
            rates = A[:, old].copy()
            rates[old] = 0.0
            new = int(rng.choice(block.m, p=rates / rates.sum()))
            events.append(Event(t, "hop", v, old, new))
            phi[v] = new
            node_rate[v] = -A[new, new]
            idx = pairs_of[v]
            edge_rate[idx] = -B[
                phi[iu[idx]], phi[iv[idx]], kappa[iu[idx], iv[idx]], kappa[iu[idx], iv[idx]]
            ]
        else:
            u -= node_rate.sum()
            e = int(np.searchsorted(np.cumsum(edge_rate), u, side="right"))
            a, b = int(iu[e]), int(iv[e])
            old = int(kappa[a, b])
            rates = B[phi[a], phi[b], :, old].copy()
            rates[old] = 0.0
            new = int(rng.choice(block.r, p=rates / rates.sum()))
            events.append(Event(t, "flip", (a, b), old, new))
            kappa[a, b] = kappa[b, a] = new
            edge_rate[e] = -B[phi[a], phi[b], new, new]
    return EventTimeline(
        n=nn,
        m=block.m,
        r=block.r,
        horizon=float(horizon),
        initial_phi=phi0,
        initial_kappa=kappa0,
        events=events,
        params=params,
    )


# ---------------------------------------------------------------------------
# Kronecker sums and dense generator oracles


class KroneckerSum:
    """Lazy sum-of-identities operator: applies each factor along its own
    axis of the product space without materializing the full matrix."""

    def __init__(self, factors):
        if not factors:
            raise ValueError("need at least one factor")
        self.factors = [np.asarray(f, dtype=float) for f in factors]
        for f in self.factors:
            if f.ndim != 2 or f.shape[0] != f.shape[1]:
                raise ValueError("factors must be square matrices")
        self.dims = tuple(f.shape[0] for f in self.factors)
        size = 1
        for d in self.dims:
            size *= d
            if size > 2**26:
                raise ValueError("product space too large for this operator")
        self.size = size

    @property
    def shape(self):
        return (self.size, self.size)

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        tensor = x.reshape(self.dims)
        out = np.zeros_like(tensor)
        for axis, f in enumerate(self.factors):
            out += np.moveaxis(np.tensordot(f, tensor, axes=([1], [axis])), 0, axis)
        return out.reshape(x.shape)

    def dense(self):
        if self.size > _DENSE_GUARD:
            raise ValueError("dense Kronecker sum would exceed the size guard")
        out = np.zeros((self.size, self.size))
        for axis, f in enumerate(self.factors):
            left = int(np.prod(self.dims[:axis], dtype=np.int64))
            right = int(np.prod(self.dims[axis + 1 :], dtype=np.int64))
            out += np.kron(np.eye(left), np.kron(f, np.eye(right)))
        return out


def kronecker_sum(generators):
    return KroneckerSum(generators)


def _pair_list(n):
    return list(itertools.combinations(range(n), 2))


def dense_node_generator(block, n):
    """Generator of the joint community process on assignment space."""
    return KroneckerSum([block.hop_rates] * n).dense()


def dense_edge_generator(block, n, phi):
    """Generator of the joint edge process given fixed communities phi."""
    factors = [block.edge_rates[phi[u], phi[v]] for u, v in _pair_list(n)]
    return KroneckerSum(factors).dense()


def dense_joint_generator(block, n):
    """Generator of the combined (assignment, graph) process; tiny n only."""
    m, r = block.m, block.r
    num_pairs = n * (n - 1) // 2
    m_n, r_n = m**n, r**num_pairs
    if m_n * r_n > _DENSE_GUARD:
        raise ValueError("joint space too large to build densely")
    node_gen = dense_node_generator(block, n)
    out = np.kron(node_gen, np.eye(r_n))
    phis = _assignments(m, n)
    for idx in range(m_n):
        edge_gen = dense_edge_generator(block, n, phis[idx])
        sl = slice(idx * r_n, (idx + 1) * r_n)
        out[sl, sl] += edge_gen
    return out


def dense_predict_generator(block, n, kappa):
    """Between graph changes the assignment distribution evolves under the
    node generator plus the (negative) self-rates of the observed edges."""
    if block.m**n > _DENSE_GUARD:
        raise ValueError("assignment space too large to build densely")
    out = dense_node_generator(block, n)
    out[np.diag_indices_from(out)] += _edge_self_rate_vector(block, n, kappa)
    return out


_ASSIGNMENT_CACHE = {}


def _assignments(m, n):
    """All community assignments, one row each, column v = node v."""
    key = (m, n)
    if key not in _ASSIGNMENT_CACHE:
        _ASSIGNMENT_CACHE.clear()  # keep at most one big table around
        grid = np.indices((m,) * n, dtype=np.int8)
        _ASSIGNMENT_CACHE[key] = grid.reshape(n, -1).T.copy()
    return _ASSIGNMENT_CACHE[key]


def _edge_self_rate_vector(block, n, kappa):
    """For each assignment, the summed self-rate of all observed edge types:
    the instantaneous log-rate at which the graph stays unchanged."""
    phis = _assignments(block.m, n)
    out = np.zeros(phis.shape[0])
    for u, v in _pair_list(n):
        k = kappa[u, v]
        out += block.edge_rates[:, :, k, k][phis[:, u], phis[:, v]]
    return out


def steady_state_distribution(block, n, kappa):
    """Normalized dominant eigenvector of the prediction generator: the
    limit of the normalized filter while the graph stays constant."""
    gen = dense_predict_generator(block, n, kappa)
    vals, vecs = np.linalg.eig(gen)
    vec = np.abs(vecs[:, np.argmax(vals.real)].real)
    return vec / vec.sum()


# ---------------------------------------------------------------------------
# full filter


@dataclass
class FullFilterState:
    """Posterior over all community assignments, plus the current graph."""

    params: DynamicBlockParams
    n: int
    time: float
    dist: np.ndarray
    kappa: np.ndarray
    log_evidence: float = 0.0
    _self_rates: np.ndarray = field(default=None, repr=False)

    def _check(self):
        if self.dist.min() < -1e-12:
            raise ValueError("distribution has negative entries")
        if abs(self.dist.sum() - 1.0) > 1e-9:
            raise ValueError("distribution is not normalized")

    @property
    def assignments(self):
        return _assignments(self.params.m, self.n)

    @property
    def self_rates(self):
        if self._self_rates is None:
            self._self_rates = _edge_self_rate_vector(self.params, self.n, self.kappa)
        return self._self_rates

    def copy(self):
        return replace(
            self,
            dist=self.dist.copy(),
            kappa=self.kappa.copy(),
            _self_rates=None if self._self_rates is None else self._self_rates.copy(),
        )

    def node_marginals(self):
        m = self.params.m
        tensor = self.dist.reshape((m,) * self.n)
        out = np.empty((self.n, m))
        for v in range(self.n):
            axes = tuple(ax for ax in range(self.n) if ax != v)
            out[v] = tensor.sum(axis=axes)
        return out

    def pair_joint(self, v, w):
        m = self.params.m
        tensor = self.dist.reshape((m,) * self.n)
        axes = tuple(ax for ax in range(self.n) if ax not in (v, w))
        marg = tensor.sum(axis=axes)
        return marg if v < w else marg.T

    def triple_joint(self, v, w, x):
        m = self.params.m
        tensor = self.dist.reshape((m,) * self.n)
        keep = sorted((v, w, x))
        axes = tuple(ax for ax in range(self.n) if ax not in keep)
        marg = tensor.sum(axis=axes)
        return np.moveaxis(marg, [keep.index(v), keep.index(w), keep.index(x)], [0, 1, 2])

    def comembership(self, v, w):
        phis = self.assignments
        return float(self.dist @ (phis[:, v] == phis[:, w]))

    def comembership_matrix(self):
        phis = self.assignments
        out = np.eye(self.n)
        for v, w in _pair_list(self.n):
            out[v, w] = out[w, v] = self.dist @ (phis[:, v] == phis[:, w])
        return out

    def triple_comembership(self, v, w, x):
        phis = self.assignments
        same = (phis[:, v] == phis[:, w]) & (phis[:, w] == phis[:, x])
        return float(self.dist @ same)

    def pair_pair_comembership(self, v, w, x, y):
        """Probability that v,w share a community and x,y share one."""
        phis = self.assignments
        both = (phis[:, v] == phis[:, w]) & (phis[:, x] == phis[:, y])
        return float(self.dist @ both)


def full_filter_init(params, n, kappa0, prior=None):
    block = params.as_block()
    if block.m**n > _FULL_STATE_GUARD:
        raise ValueError("assignment space exceeds the full-filter guard")
    kappa = np.asarray(kappa0, dtype=np.int64).copy()
    if kappa.shape != (n, n) or not np.array_equal(kappa, kappa.T):
        raise ValueError("kappa0 must be a symmetric n x n type matrix")
    size = block.m**n
    if prior is None:
        dist = np.full(size, 1.0 / size)
    else:
        dist = np.asarray(prior, dtype=float).copy()
        if dist.shape != (size,) or dist.min() < 0 or dist.sum() <= 0:
            raise ValueError("prior must be a distribution over assignments")
        dist /= dist.sum()
    state = FullFilterState(params=block, n=n, time=0.0, dist=dist, kappa=kappa)
    state._check()
    return state


def _node_generator_matvec(block, n, tensor_shape, vec):
    tensor = vec.reshape(tensor_shape)
    A = block.hop_rates
    m = A.shape[0]
    off = A[0, 1] if m > 1 else 0.0
    uniform = (
        m > 1
        and np.all(np.abs(np.diagonal(A) - A[0, 0]) < 1e-15)
        and np.all(np.abs((A - np.diag(np.diagonal(A)))[~np.eye(m, dtype=bool)] - off) < 1e-15)
    )
    if uniform:
        # every hop matrix row reads off*(sum - x) + diag*x
        out = (n * (A[0, 0] - off)) * tensor
        for axis in range(n):
            out += off * tensor.sum(axis=axis, keepdims=True)
        return out.reshape(vec.shape)
    out = np.zeros_like(tensor)
    for axis in range(n):
        out += np.moveaxis(np.tensordot(A, tensor, axes=([1], [axis])), 0, axis)
    return out.reshape(vec.shape)


def full_predict(state, dt, rtol=1e-10, atol=1e-14):
    """Evolve the posterior while the graph stays unchanged, accumulating
    the log-probability of observing no change."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    out = state.copy()
    if dt == 0:
        return out
    block = state.params
    m, n = block.m, state.n
    self_rates = out.self_rates
    size = m**n

    if size <= _DENSE_GUARD:
        gen = dense_predict_generator(block, n, out.kappa)
        vec = expm(gen * dt) @ out.dist
    else:
        shape = (m,) * n

        def rhs(_t, y):
            return _node_generator_matvec(block, n, shape, y) + self_rates * y

        # chunk so the unnormalized mass cannot underflow between renorms
        leak = float(np.max(-self_rates)) + float(np.max(-np.diagonal(block.hop_rates))) * n
        chunks = max(1, int(math.ceil(leak * dt / 30.0)))
        vec = out.dist
        step = dt / chunks
        t0 = state.time
        for _ in range(chunks):
            sol = solve_ivp(rhs, (t0, t0 + step), vec, rtol=rtol, atol=atol)
            if not sol.success:
                raise RuntimeError("prediction integration failed: %s" % sol.message)
            vec = sol.y[:, -1]
            t0 += step
            mass = vec.sum()
            if mass <= 0:
                raise InconsistentModelError("probability mass vanished during prediction")
            out.log_evidence += math.log(mass)
            vec = vec / mass

    mass = vec.sum()
    if mass <= 0:
        raise InconsistentModelError("probability mass vanished during prediction")
    if size <= _DENSE_GUARD:
        out.log_evidence += math.log(mass)
    out.dist = np.maximum(vec / mass, 0.0)
    out.dist /= out.dist.sum()
    out.time = state.time + dt
    out._check()
    return out


def full_update(state, edge, new_type, old_type=None):
    """Condition on a single observed edge-type change."""
    u, v = edge
    out = state.copy()
    old = int(out.kappa[u, v])
    if old_type is not None and old_type != old:
        raise ValueError("old_type disagrees with the tracked graph")
    if new_type == old or not 0 <= new_type < state.params.r:
        raise ValueError("flip must change the edge type")
    phis = out.assignments
    factor = state.params.edge_rates[:, :, new_type, old][phis[:, u], phis[:, v]]
    weighted = out.dist * factor
    mass = weighted.sum()
    if mass <= 0:
        raise InconsistentModelError("observed transition has zero rate under every hypothesis")
    out.dist = weighted / mass
    out.log_evidence += math.log(mass)
    out.kappa[u, v] = out.kappa[v, u] = new_type
    if out._self_rates is not None:
        delta = (
            state.params.edge_rates[:, :, new_type, new_type]
            - state.params.edge_rates[:, :, old, old]
        )
        out._self_rates = out._self_rates + delta[phis[:, u], phis[:, v]]
    out._check()
    return out


def _drive_timeline(timeline, advance, apply_flip, sample_times, collect):
    """Shared predict/update walk. Samples falling exactly on a flip time
    are collected after the update."""
    samples = []
    ts = sorted(sample_times)
    si = 0
    t = 0.0
    for ev in timeline.flips() + [None]:
        t_next = timeline.horizon if ev is None else ev.time
        while si < len(ts) and ts[si] < t_next:
            if ts[si] > t:
                advance(ts[si] - t)
                t = ts[si]
            samples.append((t, collect()))
            si += 1
        if t_next > t:
            advance(t_next - t)
            t = t_next
        if ev is not None:
            apply_flip(ev)
        while si < len(ts) and ts[si] == t:
            samples.append((t, collect()))
            si += 1
    return samples


def run_full_filter(params, timeline, prior=None, sample_times=(), collect=None, **predict_kw):
    """Run the exact filter over a timeline's graph history."""
    block = params.as_block()
    box = {"state": full_filter_init(block, timeline.n, timeline.initial_kappa, prior)}
    if collect is None:
        collect_fn = lambda: box["state"].comembership_matrix()
    else:
        collect_fn = lambda: collect(box["state"])

    def advance(dt):
        box["state"] = full_predict(box["state"], dt, **predict_kw)

    def apply_flip(ev):
        box["state"] = full_update(box["state"], ev.target, ev.new, ev.old)

    samples = _drive_timeline(timeline, advance, apply_flip, sample_times, collect_fn)
    return box["state"], samples


# ---------------------------------------------------------------------------
# marginalized node filter


class FullFilterOracle:
    """Supplies the pair and triple statistics the marginal filter needs,
    backed by a co-evolving exact filter."""

    def __init__(self, state):
        self.state = state

    def pair(self, v, w):
        return self.state.pair_joint(v, w)

    def triple(self, v, w, x):
        return self.state.triple_joint(v, w, x)


@dataclass
class NodeMarginalState:
    params: DynamicBlockParams
    time: float
    probs: np.ndarray  # (n, m), rows sum to 1
    kappa: np.ndarray

    @property
    def n(self):
        return self.probs.shape[0]

    def copy(self):
        return replace(self, probs=self.probs.copy(), kappa=self.kappa.copy())


def marginal_init(params, kappa0, probs0=None):
    block = params.as_block()
    kappa = np.asarray(kappa0, dtype=np.int64).copy()
    n = kappa.shape[0]
    if probs0 is None:
        probs = np.full((n, block.m), 1.0 / block.m)
    else:
        probs = np.asarray(probs0, dtype=float).copy()
        if probs.shape != (n, block.m):
            raise ValueError("probs0 must be (n, m)")
        probs /= probs.sum(axis=1, keepdims=True)
    return NodeMarginalState(params=block, time=0.0, probs=probs, kappa=kappa)


def _marginal_rhs_terms_literal(block, n, kappa, dist, probs):
    """Evidence terms of the marginal evolution, spelled out pair by pair
    and triple by triple. Quadratic cost; used to validate the fast path."""
    m = block.m
    P = dist.sum()
    tensor = dist.reshape((m,) * n) / P
    pair_cache = {}
    for v, w in _pair_list(n):
        axes = tuple(ax for ax in range(n) if ax not in (v, w))
        pair_cache[(v, w)] = tensor.sum(axis=axes)
    B = block.edge_rates
    total = 0.0
    for (v, w), joint in pair_cache.items():
        k = kappa[v, w]
        total += float(np.sum(B[:, :, k, k] * joint))
    evid = np.zeros((n, m))
    for v in range(n):
        for w in range(n):
            if w == v:
                continue
            a, b = min(v, w), max(v, w)
            joint = pair_cache[(a, b)]
            if v != a:
                joint = joint.T
            k = kappa[v, w]
            evid[v] += np.sum(B[:, :, k, k] * joint, axis=1)
        for w, x in _pair_list(n):
            if v in (w, x):
                continue
            keep = sorted((v, w, x))
            axes = tuple(ax for ax in range(n) if ax not in keep)
            marg = tensor.sum(axis=axes)
            marg = np.moveaxis(marg, [keep.index(v), keep.index(w), keep.index(x)], [0, 1, 2])
            k = kappa[w, x]
            evid[v] += np.einsum("jk,ijk->i", B[:, :, k, k], marg)
    return evid, total


def _marginal_rhs_terms_fast(block, n, self_rates, dist, probs):
    """Same evidence terms via one weighted marginalization: summing the
    per-assignment edge self-rate against the joint distribution collapses
    the pair and triple sums at once."""
    m = block.m
    P = dist.sum()
    weighted = self_rates * dist
    total = weighted.sum() / P
    tensor = weighted.reshape((m,) * n)
    evid = np.empty((n, m))
    for v in range(n):
        axes = tuple(ax for ax in range(n) if ax != v)
        evid[v] = tensor.sum(axis=axes)
    return evid / P, total


def marginal_predict(state, oracle, dt, literal=False, rtol=1e-10, atol=1e-12):
    """Evolve node marginals through a quiet interval, co-integrating the
    oracle's exact filter so its statistics stay current."""
    if not isinstance(oracle, FullFilterOracle):
        raise TypeError("oracle must wrap a full filter state")
    if abs(oracle.state.time - state.time) > 1e-9:
        raise ValueError("oracle and marginal state are out of sync")
    if dt < 0:
        raise ValueError("dt must be >= 0")
    out = state.copy()
    if dt == 0:
        return out
    block = state.params
    n, m = state.n, block.m
    full = oracle.state
    self_rates = full.self_rates
    size = full.dist.shape[0]
    shape = (m,) * n
    A = block.hop_rates

    def rhs(_t, y):
        dist = y[:size]
        probs = y[size:].reshape(n, m)
        d_dist = _node_generator_matvec(block, n, shape, dist) + self_rates * dist
        if literal:
            evid, total = _marginal_rhs_terms_literal(block, n, state.kappa, dist, probs)
        else:
            evid, total = _marginal_rhs_terms_fast(block, n, self_rates, dist, probs)
        d_probs = probs @ A.T + evid - probs * total
        return np.concatenate([d_dist, d_probs.ravel()])

    y0 = np.concatenate([full.dist, state.probs.ravel()])
    sol = solve_ivp(rhs, (state.time, state.time + dt), y0, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError("marginal integration failed: %s" % sol.message)
    y = sol.y[:, -1]
    new_dist = y[:size]
    mass = new_dist.sum()
    if mass <= 0:
        raise InconsistentModelError("probability mass vanished during prediction")
    new_full = full.copy()
    new_full.dist = np.maximum(new_dist / mass, 0.0)
    new_full.dist /= new_full.dist.sum()
    new_full.log_evidence += math.log(mass)
    new_full.time = state.time + dt
    oracle.state = new_full

    probs = y[size:].reshape(n, m)
    drift = float(np.abs(probs.sum(axis=1) - 1.0).max())
    if drift > 1e-6:
        warnings.warn("marginal rows drifted by %.3g; re-projecting" % drift)
    probs = np.maximum(probs, 0.0)
    probs /= probs.sum(axis=1, keepdims=True)
    out.probs = probs
    out.time = state.time + dt
    return out


def marginal_update(state, oracle, edge, new_type):
    """Condition node marginals on one edge flip, using the oracle's pair
    and triple statistics at the instant before the flip."""
    if not isinstance(oracle, FullFilterOracle):
        raise TypeError("oracle must wrap a full filter state")
    u, v = edge
    out = state.copy()
    old = int(state.kappa[u, v])
    B = state.params.edge_rates[:, :, new_type, old]
    pair_uv = oracle.pair(u, v)
    norm = float(np.sum(B * pair_uv))
    if norm <= 0:
        raise InconsistentModelError("flip has zero probability under the tracked marginals")
    n = state.n
    probs = np.empty_like(state.probs)
    for node in range(n):
        if node == u:
            probs[node] = np.sum(B * pair_uv, axis=1)
        elif node == v:
            probs[node] = np.sum(B * pair_uv.T, axis=1)
        else:
            probs[node] = np.einsum("jk,ijk->i", B, oracle.triple(node, u, v))
    out.probs = probs / norm
    out.kappa[u, v] = out.kappa[v, u] = new_type
    oracle.state = full_update(oracle.state, edge, new_type, old)
    out.time = oracle.state.time
    return out


def run_marginal_filter(params, timeline, prior=None, sample_times=(), literal=False, **kw):
    """Drive the marginal filter with its oracle across a timeline; samples
    record both the marginal rows and the oracle's exact marginals."""
    block = params.as_block()
    full0 = full_filter_init(block, timeline.n, timeline.initial_kappa, prior)
    oracle = FullFilterOracle(full0)
    box = {"state": marginal_init(block, timeline.initial_kappa, full0.node_marginals())}

    def advance(dt):
        box["state"] = marginal_predict(box["state"], oracle, dt, literal=literal, **kw)

    def apply_flip(ev):
        box["state"] = marginal_update(box["state"], oracle, ev.target, ev.new)

    def collect():
        return box["state"].probs.copy(), oracle.state.node_marginals()

    samples = _drive_timeline(timeline, advance, apply_flip, sample_times, collect)
    return box["state"], oracle.state, samples


# ---------------------------------------------------------------------------
# third-order bounds and the max-entropy closure


def third_order_bounds(p_wx, p_vx, p_vw):
    """Range of all-three-together probabilities consistent with the three
    pairwise probabilities of a node triple."""
    for val in (p_wx, p_vx, p_vw):
        if not 0.0 <= val <= 1.0:
            raise ValueError("pairwise probabilities must lie in [0, 1]")
    p_minus = 0.5 * (p_wx + p_vx + p_vw - 1.0)
    p_plus = min(p_wx, p_vx, p_vw)
    p0_minus = max(p_minus, 0.0)
    if p0_minus > p_plus + 1e-12:
        raise InconsistentModelError(
            "pairwise probabilities violate the triangle constraint"
        )
    return p_minus, p_plus, p0_minus


def triple_split_probabilities(p_wx, p_vx, p_vw, p_all):
    """The five ways a triple can split across communities, given the three
    pairwise probabilities and the all-together probability."""
    only_vw = p_vw - p_all
    only_vx = p_vx - p_all
    only_wx = p_wx - p_all
    none = 1.0 - p_wx - p_vx - p_vw + 2.0 * p_all
    return {
        "all_separate": none,
        "vw_together": only_vw,
        "vx_together": only_vx,
        "wx_together": only_wx,
        "all_together": p_all,
    }


def _maxent_root_vec(p_wx, p_vx, p_vw, m, iters=64, strict=True):
    """Vectorized max-entropy triple probability; bisection on the strictly
    decreasing entropy derivative, then a few Newton polish steps.

    strict=False projects inconsistent inputs onto the constraint instead
    of raising, for use inside running filters whose truncation error can
    push pairwise probabilities out of mutual consistency.
    """
    p_wx = np.asarray(p_wx, dtype=float)
    p_vx = np.asarray(p_vx, dtype=float)
    p_vw = np.asarray(p_vw, dtype=float)
    p_minus = 0.5 * (p_wx + p_vx + p_vw - 1.0)
    p_plus = np.minimum(np.minimum(p_wx, p_vx), p_vw)
    p0 = np.maximum(p_minus, 0.0)
    if strict and np.any(p0 > p_plus + 1e-12):
        raise InconsistentModelError(
            "pairwise probabilities violate the triangle constraint"
        )
    p0 = np.minimum(p0, p_plus)  # absorb roundoff (or projected) violations
    if m == 2:
        # no way to split three nodes across >2 groups: the value is pinned
        return np.clip(p_minus, p0, p_plus)
    const = math.log((m - 2) ** 2 / (4.0 * (m - 1.0)))
    tiny = 1e-300

    def h(p):
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (
                const
                + np.log(np.maximum(p_wx - p, tiny))
                + np.log(np.maximum(p_vx - p, tiny))
                + np.log(np.maximum(p_vw - p, tiny))
                - np.log(np.maximum(p, tiny))
                - 2.0 * np.log(np.maximum(p - p_minus, tiny))
            )
        return val

    lo = p0.copy()
    hi = p_plus.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = h(mid) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    root = 0.5 * (lo + hi)
    for _ in range(3):
        deriv = (
            -1.0 / np.maximum(p_wx - root, tiny)
            - 1.0 / np.maximum(p_vx - root, tiny)
            - 1.0 / np.maximum(p_vw - root, tiny)
            - 1.0 / np.maximum(root, tiny)
            - 2.0 / np.maximum(root - p_minus, tiny)
        )
        step = h(root) / deriv
        root = np.clip(root - np.where(np.isfinite(step), step, 0.0), lo, hi)
    forced = p0 >= p_plus
    return np.where(forced, p_plus, root)


def maxent_closure(p_wx, p_vx, p_vw, m):
    """All-three-together probability of maximal entropy, given the three
    pairwise probabilities. Forced to the endpoint when the bounds pinch."""
    p_minus, p_plus, p0 = third_order_bounds(p_wx, p_vx, p_vw)
    if p0 >= p_plus:
        return p_plus
    return float(_maxent_root_vec(p_wx, p_vx, p_vw, m))


# ---------------------------------------------------------------------------
# pairwise co-membership filter


class IndependentPairsClosure:
    """Truncates all dependence: triple and quadruple excesses are zero."""

    def triple_excess(self, probs, shared, mate, other):
        return 0.0

    def quad_excess(self, probs, v, w, x, y):
        return 0.0

    def triple_drive(self, probs, rate_gap):
        return np.zeros_like(probs)

    def quad_drive(self, probs, rate_gap):
        return np.zeros_like(probs)


class MaxEntClosure:
    """Closes triples by the max-entropy value and truncates quadruples."""

    def __init__(self, m):
        if m < 2:
            raise ValueError("need at least two communities")
        self.m = m

    def _triple_tensor(self, probs):
        n = probs.shape[0]
        trips = np.array(list(itertools.combinations(range(n), 3)))
        if len(trips) == 0:
            return np.zeros((n, n, n))
        p = np.clip(probs, 0.0, 1.0)
        a, b, c = trips[:, 0], trips[:, 1], trips[:, 2]
        vals = _maxent_root_vec(p[b, c], p[a, c], p[a, b], self.m, strict=False)
        out = np.zeros((n, n, n))
        for perm in itertools.permutations(range(3)):
            out[trips[:, perm[0]], trips[:, perm[1]], trips[:, perm[2]]] = vals
        return out

    def triple_excess(self, probs, shared, mate, other):
        p = np.clip(probs, 0.0, 1.0)
        p_all = float(
            _maxent_root_vec(
                p[mate, other], p[shared, other], p[shared, mate], self.m, strict=False
            )
        )
        return p_all - p[shared, mate] * p[shared, other]

    def quad_excess(self, probs, v, w, x, y):
        return 0.0

    def triple_drive(self, probs, rate_gap):
        # sum over third nodes of rate_gap times the triple excess, for
        # every tracked pair at once
        p = np.clip(probs, 0.0, 1.0)
        n = p.shape[0]
        tens = self._triple_tensor(p)
        g = rate_gap.copy()
        np.fill_diagonal(g, 0.0)
        gp = g * p
        first = np.einsum("vwx,vx->vw", tens, g)
        second = np.einsum("vwx,wx->vw", tens, g)
        row = gp.sum(axis=1)
        drive = (
            first
            - p * (row[:, None] - gp)
            + second
            - p * (row[None, :] - gp.T)
        )
        np.fill_diagonal(drive, 0.0)
        return drive

    def quad_drive(self, probs, rate_gap):
        return np.zeros_like(probs)


class FullOracleClosure:
    """Exact triple and quadruple statistics from a co-evolving full filter;
    turns the pairwise filter into an exact one for verification."""

    def __init__(self, state):
        self.state = state

    def triple_excess(self, probs, shared, mate, other):
        st = self.state
        p3 = st.triple_comembership(shared, mate, other)
        return p3 - st.comembership(shared, mate) * st.comembership(shared, other)

    def quad_excess(self, probs, v, w, x, y):
        st = self.state
        both = st.pair_pair_comembership(v, w, x, y)
        return both - st.comembership(v, w) * st.comembership(x, y)

    def _drives_from_dist(self, dist, rate_gap):
        st = self.state
        n = st.n
        scaled = dist / dist.sum()
        phis = st.assignments
        pair_mask = {(v, w): phis[:, v] == phis[:, w] for v, w in _pair_list(n)}
        p2 = np.eye(n)
        for (v, w), mask in pair_mask.items():
            p2[v, w] = p2[w, v] = scaled @ mask
        g = rate_gap.copy()
        np.fill_diagonal(g, 0.0)
        # weighted co-membership indicator over all pairs, for the quad sum
        weight_all = np.zeros(dist.shape[0])
        for (x, y), mask in pair_mask.items():
            weight_all += g[x, y] * mask
        gp = g * p2
        total_gp = gp.sum() / 2.0
        triple = np.zeros((n, n))
        quad = np.zeros((n, n))
        for v, w in _pair_list(n):
            mask_vw = pair_mask[(v, w)]
            t = 0.0
            # pairs {x,y} meeting {v,w} must be stripped from the quad
            # total; their joint probabilities reduce to pair/triple ones
            corr_s = g[v, w] * p2[v, w]
            corr_p = g[v, w] * p2[v, w]
            for x in range(n):
                if x in (v, w):
                    continue
                m_vx = pair_mask[(min(v, x), max(v, x))]
                p3 = float(scaled @ (mask_vw & m_vx))
                t += g[v, x] * (p3 - p2[v, w] * p2[v, x])
                t += g[w, x] * (p3 - p2[v, w] * p2[w, x])
                corr_s += (g[v, x] + g[w, x]) * p3
                corr_p += g[v, x] * p2[v, x] + g[w, x] * p2[w, x]
            triple[v, w] = triple[w, v] = t
            s_total = float(scaled @ (mask_vw * weight_all))
            quad[v, w] = quad[w, v] = (s_total - corr_s) - p2[v, w] * (total_gp - corr_p)
        return triple, quad

    def triple_drive(self, probs, rate_gap):
        return self._drives_from_dist(self.state.dist, rate_gap)[0]

    def quad_drive(self, probs, rate_gap):
        return self._drives_from_dist(self.state.dist, rate_gap)[1]


@dataclass
class PairwiseState:
    """Co-membership probabilities for the symmetric two-type model."""

    params: DynamicPlantedParams
    time: float
    probs: np.ndarray  # (n, n), diagonal 1
    kappa: np.ndarray  # (n, n) in {0, 1}
    violation_log: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=lambda: {"triple": [], "quad": []})

    @property
    def n(self):
        return self.probs.shape[0]

    def copy(self):
        return replace(
            self,
            probs=self.probs.copy(),
            kappa=self.kappa.copy(),
            violation_log=list(self.violation_log),
            diagnostics={k: list(v) for k, v in self.diagnostics.items()},
        )


def pairwise_init(params, kappa0, probs0=None):
    if not isinstance(params, DynamicPlantedParams):
        raise TypeError("the pairwise filter needs the symmetric two-type model")
    kappa = np.asarray(kappa0, dtype=np.int64).copy()
    n = kappa.shape[0]
    if probs0 is None:
        probs = np.full((n, n), 1.0 / params.m)
    else:
        probs = np.asarray(probs0, dtype=float).copy()
    np.fill_diagonal(probs, 1.0)
    return PairwiseState(params=params, time=0.0, probs=probs, kappa=kappa)


def _clamp_and_log(state, when):
    over = state.probs - 1.0
    under = -state.probs
    worst = max(float(over.max()), float(under.max()))
    if worst > 1e-12:
        count = int(np.sum((over > 1e-12) | (under > 1e-12)) // 2)
        state.violation_log.append(
            {"time": state.time, "step": when, "pairs": count, "excess": worst}
        )
    np.clip(state.probs, 0.0, 1.0, out=state.probs)
    np.fill_diagonal(state.probs, 1.0)


def _log_consistency_gap(state):
    """When some pair is (numerically) certainly together, the exact filter
    would force equal co-membership rows; record how far off we are."""
    p = state.probs
    certain = np.argwhere(np.triu(p >= 1.0 - 1e-9, k=1))
    gap = 0.0
    for v, w in certain:
        gap = max(gap, float(np.abs(p[v] - p[w]).max()))
    if certain.size:
        state.violation_log.append(
            {"time": state.time, "step": "consistency", "gap": gap}
        )
    return gap


def pairwise_predict(state, closure, dt, rtol=1e-10, atol=1e-12):
    """Evolve co-membership probabilities through a quiet interval."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    out = state.copy()
    if dt == 0:
        return out
    params = state.params
    n, m = state.n, params.m
    g_in, g_out = _flip_rate_matrices(params, state.kappa)
    rate_gap = g_in - g_out
    relax = 2.0 * params.hop_rate * m / (m - 1.0)
    oracle = isinstance(closure, FullOracleClosure)
    if oracle and abs(closure.state.time - state.time) > 1e-9:
        raise ValueError("oracle closure is out of sync with the pairwise state")

    iu, iv = np.triu_indices(n, k=1)
    triple0 = closure.triple_drive(state.probs, rate_gap)
    quad0 = closure.quad_drive(state.probs, rate_gap)
    out.diagnostics["triple"].append((state.time, triple0[iu, iv].copy()))
    out.diagnostics["quad"].append((state.time, quad0[iu, iv].copy()))

    def pair_rhs(p_mat, triple, quad):
        pc = np.clip(p_mat, 0.0, 1.0)
        own = rate_gap * pc * (1.0 - pc)
        d = relax * (1.0 / m - p_mat) - own - triple - quad
        np.fill_diagonal(d, 0.0)
        return d

    if oracle:
        full = closure.state
        size = full.dist.shape[0]
        shape = (params.m,) * n
        block = full.params
        self_rates = full.self_rates

        def rhs(_t, y):
            dist = y[:size]
            p_mat = _unpack_sym(y[size:], n)
            d_dist = _node_generator_matvec(block, n, shape, dist) + self_rates * dist
            triple, quad = closure._drives_from_dist(dist, rate_gap)
            d_p = pair_rhs(p_mat, triple, quad)
            return np.concatenate([d_dist, d_p[iu, iv]])

        y0 = np.concatenate([full.dist, state.probs[iu, iv]])
        sol = solve_ivp(rhs, (state.time, state.time + dt), y0, rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError("pairwise integration failed: %s" % sol.message)
        y = sol.y[:, -1]
        new_dist = y[:size]
        mass = new_dist.sum()
        if mass <= 0:
            raise InconsistentModelError("probability mass vanished during prediction")
        new_full = full.copy()
        new_full.dist = np.maximum(new_dist / mass, 0.0)
        new_full.dist /= new_full.dist.sum()
        new_full.log_evidence += math.log(mass)
        new_full.time = state.time + dt
        closure.state = new_full
        out.probs = _unpack_sym(y[size:], n)
    else:

        def rhs(_t, y):
            p_mat = _unpack_sym(y, n)
            triple = closure.triple_drive(p_mat, rate_gap)
            quad = closure.quad_drive(p_mat, rate_gap)
            return pair_rhs(p_mat, triple, quad)[iu, iv]

        sol = solve_ivp(
            rhs, (state.time, state.time + dt), state.probs[iu, iv], rtol=rtol, atol=atol
        )
        if not sol.success:
            raise RuntimeError("pairwise integration failed: %s" % sol.message)
        out.probs = _unpack_sym(sol.y[:, -1], n)

    out.time = state.time + dt
    _clamp_and_log(out, "predict")
    _log_consistency_gap(out)
    return out


def _unpack_sym(upper, n):
    iu, iv = np.triu_indices(n, k=1)
    mat = np.eye(n)
    mat[iu, iv] = upper
    mat[iv, iu] = upper
    return mat


def pairwise_update(state, edge, closure):
    """Condition co-membership probabilities on one edge flip."""
    a, b = edge
    params = state.params
    out = state.copy()
    p = state.probs
    g_in, g_out = _flip_rate_matrices(params, state.kappa)
    gap = g_in[a, b] - g_out[a, b]
    expected_flip = g_in[a, b] * p[a, b] + g_out[a, b] * (1.0 - p[a, b])
    if expected_flip <= 0:
        raise InconsistentModelError("flip has zero probability under current beliefs")
    n = state.n
    delta = np.zeros((n, n))
    for v, w in _pair_list(n):
        shared = {v, w} & {a, b}
        if len(shared) == 2:
            delta[v, w] = gap * p[a, b] * (1.0 - p[a, b])
        elif len(shared) == 1:
            s = shared.pop()
            mate = w if s == v else v
            other = b if s == a else a
            delta[v, w] = gap * closure.triple_excess(p, s, mate, other)
        else:
            delta[v, w] = gap * closure.quad_excess(p, v, w, a, b)
        delta[w, v] = delta[v, w]
    out.probs = p + delta / expected_flip
    out.kappa[a, b] = out.kappa[b, a] = 1 - state.kappa[a, b]
    if isinstance(closure, FullOracleClosure):
        closure.state = full_update(closure.state, edge, 1 - state.kappa[a, b])
    _clamp_and_log(out, "update")
    return out


def run_pairwise_filter(params, timeline, closure, probs0=None, sample_times=(), **kw):
    """Drive the pairwise filter across a timeline. Samples carry the
    co-membership matrix, plus the oracle's exact one when available."""
    box = {"state": pairwise_init(params, timeline.initial_kappa, probs0)}

    def advance(dt):
        box["state"] = pairwise_predict(box["state"], closure, dt, **kw)

    def apply_flip(ev):
        box["state"] = pairwise_update(box["state"], ev.target, closure)

    def collect():
        exact = None
        if isinstance(closure, FullOracleClosure):
            exact = closure.state.comembership_matrix()
        return box["state"].probs.copy(), exact

    samples = _drive_timeline(timeline, advance, apply_flip, sample_times, collect)
    return box["state"], samples


# ---------------------------------------------------------------------------
# closure diagnostics


@dataclass
class ClosureDiagnostics:
    """Samples of the truncation error terms, split by whether the tracked
    pair really shares a community."""

    times: list
    triple_within: np.ndarray
    triple_between: np.ndarray
    quad_within: np.ndarray
    quad_between: np.ndarray
    triple_excess_exact: np.ndarray
    triple_excess_closed: np.ndarray

    def summary(self):
        def stats(arr):
            return {"mean": float(arr.mean()), "std": float(arr.std())} if arr.size else {}

        return {
            "triple_within": stats(self.triple_within),
            "triple_between": stats(self.triple_between),
            "quad_within": stats(self.quad_within),
            "quad_between": stats(self.quad_between),
        }

    def histogram(self, which, bins=30):
        return np.histogram(getattr(self, which), bins=bins)


def closure_diagnostics(timeline, params=None, sample_times=None, closure_m=None, **solver_opts):
    """Run the exact filter over a timeline and sample the third- and
    fourth-order terms of the pairwise evolution, labeled by ground truth.

    Also collects the exact triple excesses next to the max-entropy closure
    evaluated on the exact pairwise probabilities, for direct comparison.
    """
    params = timeline.params if params is None else params
    if not isinstance(params, DynamicPlantedParams):
        raise TypeError("diagnostics are defined for the symmetric two-type model")
    if sample_times is None:
        sample_times = np.linspace(timeline.horizon / 8.0, timeline.horizon, 8)
    m = params.m if closure_m is None else closure_m
    n = timeline.n
    iu, iv = np.triu_indices(n, k=1)

    def collect(state):
        kappa = state.kappa
        g_in, g_out = _flip_rate_matrices(params, kappa)
        oracle = FullOracleClosure(state)
        triple, quad = oracle._drives_from_dist(state.dist, g_in - g_out)
        p2 = state.comembership_matrix()
        excess_exact = []
        excess_closed = []
        for v, w, x in itertools.combinations(range(n), 3):
            p3 = state.triple_comembership(v, w, x)
            root = maxent_closure(p2[w, x], p2[v, x], p2[v, w], m)
            excess_exact.append(p3 - p2[v, w] * p2[v, x])
            excess_closed.append(root - p2[v, w] * p2[v, x])
        return triple[iu, iv], quad[iu, iv], np.array(excess_exact), np.array(excess_closed)

    _, samples = run_full_filter(
        params, timeline, sample_times=sample_times, collect=collect, **solver_opts
    )

    t_in, t_out, q_in, q_out, ex_exact, ex_closed = [], [], [], [], [], []
    for t, (triple, quad, exact, closed) in samples:
        truth = timeline.assignment_at(t)
        within = truth[iu] == truth[iv]
        t_in.append(triple[within])
        t_out.append(triple[~within])
        q_in.append(quad[within])
        q_out.append(quad[~within])
        ex_exact.append(exact)
        ex_closed.append(closed)
    return ClosureDiagnostics(
        times=[t for t, _ in samples],
        triple_within=np.concatenate(t_in) if t_in else np.array([]),
        triple_between=np.concatenate(t_out) if t_out else np.array([]),
        quad_within=np.concatenate(q_in) if q_in else np.array([]),
        quad_between=np.concatenate(q_out) if q_out else np.array([]),
        triple_excess_exact=np.concatenate(ex_exact) if ex_exact else np.array([]),
        triple_excess_closed=np.concatenate(ex_closed) if ex_closed else np.array([]),
    )
