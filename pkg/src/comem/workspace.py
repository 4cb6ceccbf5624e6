"""Content-addressed artifact store shared by the CLI and the HTTP service.

A workspace is a directory holding graphs (keyed by a hash of their
canonical edge list) and derived artifacts (keyed by the hash of the
configuration that produced them). Rerunning a pipeline with an identical
configuration finds the existing artifacts and does nothing.
"""

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .graph import Graph, PlantedParams, load_edge_list
from .pvw import PvwMatrix, pvw_matrix_batch
from .exact import exact_pvw_bruteforce, gibbs_pvw_montecarlo
from .hierarchy import (
    Dendrogram,
    average_linkage,
    coarse_grain,
    distance_matrix,
    order_leaves,
    render_matrix,
)

DEFAULT_SEED = 7

METHODS = ("integral", "hat", "bruteforce", "gibbs")

_BRUTEFORCE_NODE_LIMIT = 10
_INTEGRAL_NODE_LIMIT = 200
_DENSE_NODE_LIMIT = 4000  # dendrogram / image pipelines hold an n x n matrix


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config):
    """Stable short hash of a JSON-serializable configuration mapping."""
    return hashlib.sha256(_canonical_json(config).encode("utf-8")).hexdigest()[:16]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


@dataclass
class JobConfig:
    """Validated description of one batch computation."""

    inputs: tuple = ()
    method: str = "hat"
    theta: float = None
    theta_grid: tuple = None
    blue: float = 0.6
    red: float = 0.018
    workers: int = 1
    out_dir: str = None
    seed: int = DEFAULT_SEED
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = tuple(str(p) for p in self.inputs)
        for p in self.inputs:
            if not Path(p).exists():
                raise FileNotFoundError(f"input file not found: {p}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {', '.join(METHODS)}")
        if self.theta is not None and not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.theta_grid is not None:
            self.theta_grid = tuple(float(t) for t in self.theta_grid)
            if not self.theta_grid:
                raise ValueError("theta grid must not be empty")
            if any(not 0.0 <= t <= 1.0 for t in self.theta_grid):
                raise ValueError("theta grid values must lie in [0, 1]")
        for name in ("blue", "red"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} threshold must lie in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.seed = int(self.seed)
        self.options = dict(self.options)

    def check_size(self, n):
        """Method-specific size guards, applied before any work starts."""
        if self.method == "bruteforce" and n > _BRUTEFORCE_NODE_LIMIT:
            raise ValueError(
                f"bruteforce is limited to n <= {_BRUTEFORCE_NODE_LIMIT} (got {n})"
            )
        if self.method == "integral" and n > _INTEGRAL_NODE_LIMIT:
            raise ValueError(
                f"integral method is limited to n <= {_INTEGRAL_NODE_LIMIT} (got {n})"
            )
        if self.method == "gibbs":
            missing = [k for k in ("m", "p_in", "p_out") if k not in self.options]
            if missing:
                raise ValueError(f"gibbs needs model parameters: {', '.join(missing)}")
        if n < 3:
            raise ValueError("pipelines need at least three nodes")

    def check_graph(self, graph):
        self.check_size(graph.n)

    def as_dict(self):
        d = asdict(self)
        d["theta_grid"] = list(self.theta_grid) if self.theta_grid is not None else None
        d["inputs"] = list(self.inputs)
        return d

    def hash(self):
        return config_hash(self.as_dict())


class Workspace:
    """Directory-backed store of graphs and the artifacts computed from them."""

    def __init__(self, root, create=True):
        self.root = Path(root)
        if create:
            (self.root / "graphs").mkdir(parents=True, exist_ok=True)
            (self.root / "artifacts").mkdir(exist_ok=True)
            (self.root / "runs").mkdir(exist_ok=True)
        elif not self.root.is_dir():
            raise FileNotFoundError(f"workspace directory not found: {root}")

    # -- graphs -------------------------------------------------------------

    def add_graph(self, source, name=None):
        """Store a graph (path, text, or Graph); returns its content id."""
        if isinstance(source, Graph):
            graph = source
        else:
            graph = load_edge_list(source)
        ids = graph.original_ids
        lines = []
        for (u, v), t in graph.edge_items():
            a, b = str(ids[u]), str(ids[v])
            lines.append(f"{a} {b} {t}" if graph.r > 2 else f"{a} {b}")
        canonical = "\n".join(sorted(lines)) + "\n"
        gid = hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
        gdir = self.root / "graphs"
        edges_path = gdir / f"{gid}.edges"
        if not edges_path.exists():
            edges_path.write_text(canonical, encoding="utf-8")
            meta = {
                "id": gid,
                "name": name or f"graph-{gid}",
                "nodes": graph.n,
                "edges": graph.num_edges,
                "edge_types": graph.r,
                "original_ids": [str(x) for x in graph.original_ids],
            }
            (gdir / f"{gid}.json").write_text(
                _canonical_json(meta) + "\n", encoding="utf-8"
            )
        return gid

    def has_graph(self, gid):
        return (self.root / "graphs" / f"{gid}.edges").exists()

    def graph_meta(self, gid):
        path = self.root / "graphs" / f"{gid}.json"
        if not path.exists():
            raise KeyError(f"unknown graph id {gid!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    def get_graph(self, gid):
        path = self.root / "graphs" / f"{gid}.edges"
        if not path.exists():
            raise KeyError(f"unknown graph id {gid!r}")
        return load_edge_list(path)

    def list_graphs(self):
        out = []
        for meta_path in sorted((self.root / "graphs").glob("*.json")):
            out.append(json.loads(meta_path.read_text(encoding="utf-8")))
        return out

    # -- artifacts ----------------------------------------------------------

    def artifact_dir(self, gid, chash, create=False):
        d = self.root / "artifacts" / gid / chash
        if create:
            d.mkdir(parents=True, exist_ok=True)
        return d

    def artifact_meta(self, gid, chash):
        path = self.artifact_dir(gid, chash) / "meta.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def current_hash(self, gid):
        path = self.root / "artifacts" / gid / "current"
        if not path.exists():
            return None
        return path.read_text(encoding="utf-8").strip()

    def set_current(self, gid, chash):
        path = self.root / "artifacts" / gid / "current"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(chash + "\n", encoding="utf-8")

    def resolve_hash(self, gid, chash=None):
        """Explicit artifact hash, or the graph's current one."""
        out = chash or self.current_hash(gid)
        if out is None or self.artifact_meta(gid, out) is None:
            raise KeyError(f"no computed artifacts for graph {gid!r}")
        return out

    # -- runs (timelines, filter outputs; not bound to a stored graph) ------

    def run_dir(self, chash, create=False):
        d = self.root / "runs" / chash
        if create:
            d.mkdir(parents=True, exist_ok=True)
        return d

    def run_meta(self, chash):
        path = self.run_dir(chash) / "meta.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# the batch pipeline shared by `pvw` runs started from the CLI or the service


def _matrix_from_dense(n, dense, method, extra_meta=None):
    iu, iv = np.triu_indices(n, k=1)
    keys = iu.astype(np.int64) * n + iv
    meta = {"method": method, "n": n}
    meta.update(extra_meta or {})
    return PvwMatrix(n, keys, dense[iu, iv], metadata=meta)


def _compute_matrix(graph, config):
    opts = config.options
    if config.method in ("hat", "integral"):
        integral_opts = None
        if config.method == "integral":
            integral_opts = {
                k: opts[k]
                for k in ("rel_tol", "m_points", "quadrature", "m_weighting")
                if k in opts
            }
        matrix, _ = pvw_matrix_batch(
            graph, method=config.method, workers=config.workers, integral_opts=integral_opts
        )
        return matrix
    if config.method == "bruteforce":
        if all(k in opts for k in ("m", "p_in", "p_out")):
            params = PlantedParams(int(opts["m"]), float(opts["p_in"]), float(opts["p_out"]))
            dense = exact_pvw_bruteforce(graph, params, mode="fixed")
        else:
            dense = exact_pvw_bruteforce(graph, mode="integrated")
        return _matrix_from_dense(graph.n, dense, "bruteforce")
    params = PlantedParams(int(opts["m"]), float(opts["p_in"]), float(opts["p_out"]))
    result = gibbs_pvw_montecarlo(
        graph,
        params,
        sweeps=int(opts.get("sweeps", 4000)),
        seed=config.seed,
    )
    return _matrix_from_dense(
        graph.n,
        result.pvw,
        "gibbs",
        {"sweeps": result.sweeps, "burn_in": result.burn_in},
    )


def _pairs_csv(graph, matrix, chash):
    """Per-pair evidence counts and probabilities for the explicit pairs."""
    buf = io.StringIO()
    buf.write(f"# config_hash {chash}\n")
    writer = csv.writer(buf)
    writer.writerow(["u", "v", "kappa", "n0", "n1", "n2", "p"])
    degrees = graph.degrees()
    adjacency = {}
    for (u, v), _t in graph.edge_items():
        adjacency.setdefault(u, set()).add(v)
        adjacency.setdefault(v, set()).add(u)
    n = matrix.n
    for (u, v), p in matrix.entries():
        common = len(adjacency.get(u, set()) & adjacency.get(v, set()))
        kappa = 1 if v in adjacency.get(u, set()) else 0
        n1 = int(degrees[u] + degrees[v]) - 2 * common - 2 * kappa
        n0 = (n - 2) - n1 - common
        writer.writerow([u, v, kappa, n0, n1, common, f"{p:.12g}"])
    return buf.getvalue()


def dendrogram_to_json(dend, order, chash):
    return {
        "config_hash": chash,
        "n": dend.n,
        "merges": [[a, b, h] for a, b, h in dend.merges],
        "leaf_order": [int(x) for x in order],
        "root_height": dend.root_height,
    }


def dendrogram_from_json(blob):
    dend = Dendrogram(blob["n"], [tuple(m) for m in blob["merges"]])
    return dend, np.asarray(blob["leaf_order"], dtype=int)


def run_pvw_pipeline(workspace, gid, config):
    """Compute and persist matrix, evidence CSV and dendrogram for a graph.

    No-op returning the recorded summary when artifacts for this exact
    configuration already exist.
    """
    chash = config.hash()
    existing = workspace.artifact_meta(gid, chash)
    if existing is not None:
        existing["cached"] = True
        return existing
    graph = workspace.get_graph(gid)
    config.check_graph(graph)
    started = time.monotonic()

    matrix = _compute_matrix(graph, config)
    matrix.metadata["config_hash"] = chash

    adir = workspace.artifact_dir(gid, chash, create=True)
    matrix.save(adir / "matrix.pvwm")
    (adir / "pairs.csv").write_text(_pairs_csv(graph, matrix, chash), encoding="utf-8")

    summary = {
        "graph": gid,
        "config": config.as_dict(),
        "config_hash": chash,
        "nodes": graph.n,
        "edges": graph.num_edges,
        "explicit_pairs": len(matrix),
        "cached": False,
    }
    if graph.n <= _DENSE_NODE_LIMIT:
        dense = matrix.to_dense()
        distances = distance_matrix(dense)
        dend = order_leaves(average_linkage(distances), distances)
        blob = dendrogram_to_json(dend, dend.leaf_order, chash)
        (adir / "dendrogram.json").write_text(
            _canonical_json(blob) + "\n", encoding="utf-8"
        )
        summary["root_height"] = dend.root_height
    summary["seconds"] = round(time.monotonic() - started, 3)
    (adir / "meta.json").write_text(_canonical_json(summary) + "\n", encoding="utf-8")
    workspace.set_current(gid, chash)
    return summary


def load_matrix(workspace, gid, chash):
    return PvwMatrix.load(workspace.artifact_dir(gid, chash) / "matrix.pvwm")


def load_dendrogram(workspace, gid, chash):
    path = workspace.artifact_dir(gid, chash) / "dendrogram.json"
    if not path.exists():
        raise KeyError(f"graph {gid!r} has no dendrogram for config {chash!r}")
    return json.loads(path.read_text(encoding="utf-8"))


def matrix_image_bytes(workspace, gid, chash, order="dendrogram"):
    """PNG of the probability matrix, cached per (config, ordering)."""
    if order not in ("dendrogram", "input"):
        raise ValueError("order must be 'dendrogram' or 'input'")
    adir = workspace.artifact_dir(gid, chash)
    cached = adir / f"matrix-{order}.png"
    if cached.exists():
        return cached.read_bytes()
    matrix = load_matrix(workspace, gid, chash)
    ordering = None
    if order == "dendrogram":
        _, ordering = dendrogram_from_json(load_dendrogram(workspace, gid, chash))
    render_matrix(matrix.to_dense(), ordering, path=cached)
    return cached.read_bytes()


def coarse_view_bytes(workspace, gid, chash, merge, community, blue=0.6, red=0.018):
    """Canonical JSON bytes of a coarse view, cached per query."""
    query = {
        "base": chash,
        "merge": float(merge),
        "community": float(community),
        "blue": float(blue),
        "red": float(red),
    }
    qhash = config_hash(query)
    adir = workspace.artifact_dir(gid, chash)
    cached = adir / f"coarse-{qhash}.json"
    if cached.exists():
        return cached.read_bytes()
    graph = workspace.get_graph(gid)
    matrix = load_matrix(workspace, gid, chash)
    dend, _ = dendrogram_from_json(load_dendrogram(workspace, gid, chash))
    view = coarse_grain(graph, matrix.to_dense(), dend, merge, community, blue=blue, red=red)
    payload = dict(view.to_json())
    payload["config_hash"] = chash
    payload["graph"] = gid
    blob = (_canonical_json(payload) + "\n").encode("utf-8")
    cached.write_bytes(blob)
    return blob
