"""Command line entry points: batch probability runs, community detection,
dynamic tracking demos, and the HTTP service."""

import csv
import itertools
import json
from pathlib import Path

import click
import numpy as np

from . import tracking as tr
from .detect import optimize_partition, read_community_file, theta_sweep, write_sweep_csv
from .graph import nmi
from .workspace import (
    DEFAULT_SEED,
    METHODS,
    JobConfig,
    Workspace,
    config_hash,
    file_digest,
    load_matrix,
    run_pvw_pipeline,
)


@click.group()
def main():
    """Co-membership probabilities, community detection and tracking."""


def _open_workspace(ws_dir):
    return Workspace(ws_dir)


def _echo_seed(seed):
    click.echo(f"seed: {seed}")


def _method_options(n_max, m, p_in, p_out, sweeps):
    options = {}
    if n_max is not None:
        options["n_max"] = int(n_max)
    if m is not None:
        options["m"] = int(m)
    if p_in is not None:
        options["p_in"] = float(p_in)
    if p_out is not None:
        options["p_out"] = float(p_out)
    if sweeps is not None:
        options["sweeps"] = int(sweeps)
    return options


def _run_matrix_pipeline(ws, edges, name, method, workers, seed, options):
    config = JobConfig(
        inputs=(edges,), method=method, workers=workers, seed=seed, options=options
    )
    gid = ws.add_graph(edges, name=name or Path(edges).name)
    if "n_max" in options:
        meta = ws.graph_meta(gid)
        if meta["nodes"] > options["n_max"]:
            raise ValueError(
                f"graph has {meta['nodes']} nodes, above the requested cap {options['n_max']}"
            )
    summary = run_pvw_pipeline(ws, gid, config)
    return gid, config, summary


@main.command("pvw")
@click.argument("edges", type=click.Path(exists=True))
@click.option("--method", type=click.Choice(METHODS), default="hat", show_default=True)
@click.option("--workspace", "ws_dir", type=click.Path(), default="comem-workspace", show_default=True)
@click.option("--threads", "--workers", "workers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--n-max", type=int, default=None, help="refuse graphs larger than this")
@click.option("--m", type=int, default=None, help="community count for bruteforce/gibbs")
@click.option("--p-in", type=float, default=None, help="within-community edge rate")
@click.option("--p-out", type=float, default=None, help="between-community edge rate")
@click.option("--sweeps", type=int, default=None, help="gibbs sweep count")
@click.option("--name", default=None, help="display name for the stored graph")
def pvw_cmd(edges, method, ws_dir, workers, seed, n_max, m, p_in, p_out, sweeps, name):
    """Compute and persist co-membership probabilities for a graph."""
    _echo_seed(seed)
    try:
        ws = _open_workspace(ws_dir)
        gid, config, summary = _run_matrix_pipeline(
            ws, edges, name, method, workers, seed,
            _method_options(n_max, m, p_in, p_out, sweeps),
        )
    except (ValueError, KeyError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"graph: {gid} ({summary['nodes']} nodes, {summary['edges']} edges)")
    if summary["cached"]:
        click.echo(f"cache hit ({summary['config_hash']}); nothing to do")
        return
    adir = ws.artifact_dir(gid, summary["config_hash"])
    click.echo(f"matrix: {adir / 'matrix.pvwm'} ({summary['explicit_pairs']} explicit pairs)")
    click.echo(f"pairs csv: {adir / 'pairs.csv'}")
    if (adir / "dendrogram.json").exists():
        click.echo(f"dendrogram: {adir / 'dendrogram.json'}")
    click.echo(f"wall time: {summary['seconds']} s")


@main.command("detect")
@click.argument("edges", type=click.Path(exists=True))
@click.option("--method", type=click.Choice(METHODS), default="hat", show_default=True)
@click.option("--theta", type=float, default=0.5, show_default=True)
@click.option("--sweep", is_flag=True, help="optimize across a threshold grid")
@click.option("--grid", default=None, help="comma-separated thresholds for --sweep")
@click.option("--truth", type=click.Path(exists=True), default=None,
              help="ground-truth communities, one 'node community' pair per line")
@click.option("--workspace", "ws_dir", type=click.Path(), default="comem-workspace", show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--name", default=None)
def detect_cmd(edges, method, theta, sweep, grid, truth, ws_dir, seed, name):
    """Find communities that maximize the expected pairwise utility."""
    _echo_seed(seed)
    if sweep and truth is None:
        raise click.UsageError("--sweep scores each threshold against ground truth; pass --truth")
    try:
        ws = _open_workspace(ws_dir)
        gid, mat_config, summary = _run_matrix_pipeline(
            ws, edges, name, method, 1, seed, {}
        )
        graph = ws.get_graph(gid)
        dense = load_matrix(ws, gid, summary["config_hash"]).to_dense()
        truth_part = read_community_file(truth, graph) if truth else None

        grid_values = None
        if grid is not None:
            grid_values = tuple(float(x) for x in grid.split(","))
        detect_conf = {
            "kind": "detect",
            "matrix": summary["config_hash"],
            "theta": None if sweep else theta,
            "grid": list(grid_values) if grid_values else None,
            "sweep": sweep,
            "truth": file_digest(truth) if truth else None,
            "seed": seed,
        }
        dhash = config_hash(detect_conf)
        adir = ws.artifact_dir(gid, dhash, create=True)
        meta_path = adir / "meta.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            click.echo(f"cache hit ({dhash}); nothing to do")
            click.echo(f"expected utility: {meta['expected_utility']:.6f}")
            if meta.get("nmi") is not None:
                click.echo(f"nmi: {meta['nmi']:.4f}")
            return

        if sweep:
            result = theta_sweep(dense, truth_part, grid=grid_values, seed=seed)
            write_sweep_csv(adir / "sweep.csv", result)
            partition = result.best_partition
            theta_used = result.theta_star
            value = float(result.curve[np.argmax(result.curve[:, 1]), 2])
            click.echo(f"sweep csv: {adir / 'sweep.csv'}")
            click.echo(f"best theta: {theta_used}")
        else:
            res = optimize_partition(dense, theta, seed=seed)
            partition = res.partition
            theta_used = theta
            value = res.expected_utility

        labels = partition.labels()
        with open(adir / "partition.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "community"])
            for v, lab in enumerate(labels.tolist()):
                writer.writerow([graph.original_ids[v], lab])
        score = None
        if truth_part is not None:
            score = float(nmi(labels, truth_part.labels()))
        meta = {
            "graph": gid,
            "config": detect_conf,
            "config_hash": dhash,
            "theta": theta_used,
            "expected_utility": float(value),
            "communities": partition.num_blocks,
            "nmi": score,
        }
        meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    except (ValueError, KeyError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"partition: {adir / 'partition.csv'} ({partition.num_blocks} communities)")
    click.echo(f"expected utility: {value:.6f}")
    if score is not None:
        click.echo(f"nmi: {score:.4f}")


def _assignment_labels(n, m):
    return ["".join(str(c) for c in combo) for combo in itertools.product(range(m), repeat=n)]


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


@main.command("track")
@click.option("--mode", type=click.Choice(["full", "pairwise", "verify-oracle", "simulate"]),
              default="full", show_default=True)
@click.option("--nodes", "-n", type=int, default=3, show_default=True)
@click.option("--communities", "-m", "m", type=int, default=2, show_default=True)
@click.option("--hop", type=float, default=1.0, show_default=True)
@click.option("--on-within", type=float, default=3.0, show_default=True)
@click.option("--off-within", type=float, default=1.0, show_default=True)
@click.option("--on-between", type=float, default=1.0, show_default=True)
@click.option("--off-between", type=float, default=3.0, show_default=True)
@click.option("--horizon", type=float, default=2.0, show_default=True)
@click.option("--samples", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--timeline", "timeline_path", type=click.Path(exists=True), default=None,
              help="replay a stored event history instead of simulating")
@click.option("--workspace", "ws_dir", type=click.Path(), default="comem-workspace", show_default=True)
def track_cmd(mode, nodes, m, hop, on_within, off_within, on_between, off_between,
              horizon, samples, seed, timeline_path, ws_dir):
    """Simulate a dynamic network and run the chosen tracking filter."""
    _echo_seed(seed)
    try:
        ws = _open_workspace(ws_dir)
        params = tr.DynamicPlantedParams(
            nodes, m, hop, on_within, off_within, on_between, off_between
        )
        conf = {
            "kind": "track",
            "mode": mode,
            "n": nodes,
            "m": m,
            "rates": [hop, on_within, off_within, on_between, off_between],
            "horizon": horizon,
            "samples": samples,
            "seed": seed,
            "timeline": file_digest(timeline_path) if timeline_path else None,
        }
        chash = config_hash(conf)
        rdir = ws.run_dir(chash, create=True)
        meta_path = rdir / "meta.json"
        if meta_path.exists():
            click.echo(f"cache hit ({chash}); nothing to do")
            return

        if timeline_path:
            timeline = tr.EventTimeline.from_file(timeline_path)
            horizon = timeline.horizon
            if not isinstance(timeline.params, tr.DynamicPlantedParams):
                raise ValueError("stored timeline lacks symmetric two-type parameters")
            params = timeline.params
            m = params.m
        else:
            timeline = tr.simulate(params, "stationary", horizon, seed=seed)
        timeline.to_file(rdir / "timeline.txt")
        click.echo(
            f"timeline: {rdir / 'timeline.txt'} "
            f"({len(timeline.hops())} hops, {len(timeline.flips())} flips)"
        )
        times = np.linspace(horizon / samples, horizon, samples)
        meta = {"config": conf, "config_hash": chash, "mode": mode,
                "hops": len(timeline.hops()), "flips": len(timeline.flips())}

        if mode == "full":
            state, snaps = tr.run_full_filter(
                params, timeline, sample_times=times, collect=lambda s: s.dist.copy()
            )
            labels = _assignment_labels(timeline.n, m)
            rows = [[f"{t:.6f}"] + [f"{x:.10g}" for x in dist] for t, dist in snaps]
            _write_csv(rdir / "snapshots.csv", ["time"] + [f"p_{s}" for s in labels], rows)
            click.echo(
                f"snapshots: {rdir / 'snapshots.csv'} "
                f"({len(labels)} assignment probabilities per row)"
            )
            click.echo(f"log evidence: {state.log_evidence:.6f}")
            meta["log_evidence"] = state.log_evidence
        elif mode == "pairwise":
            closure = tr.MaxEntClosure(m)
            state, snaps = tr.run_pairwise_filter(
                params, timeline, closure, sample_times=times
            )
            pairs = list(itertools.combinations(range(timeline.n), 2))
            rows = [
                [f"{t:.6f}"] + [f"{probs[v, w]:.10g}" for v, w in pairs]
                for t, (probs, _none) in snaps
            ]
            _write_csv(
                rdir / "pairwise.csv",
                ["time"] + [f"p_{v}_{w}" for v, w in pairs],
                rows,
            )
            (rdir / "violations.json").write_text(
                json.dumps(state.violation_log, indent=2) + "\n", encoding="utf-8"
            )
            click.echo(f"pair series: {rdir / 'pairwise.csv'}")
            click.echo(
                f"violation log: {rdir / 'violations.json'} "
                f"({len(state.violation_log)} entries)"
            )
            meta["violations"] = len(state.violation_log)
        elif mode == "verify-oracle":
            _, _, snaps = tr.run_marginal_filter(params, timeline, sample_times=times)
            worst = max(float(np.abs(p - exact).max()) for _, (p, exact) in snaps)
            rows = [
                [f"{t:.6f}"] + [f"{x:.10g}" for x in p.ravel()]
                for t, (p, _e) in snaps
            ]
            header = ["time"] + [
                f"p_{v}_{c}" for v in range(timeline.n) for c in range(m)
            ]
            _write_csv(rdir / "marginals.csv", header, rows)
            click.echo(f"marginals: {rdir / 'marginals.csv'}")
            click.echo(f"max marginal discrepancy: {worst:.3e}")
            meta["max_discrepancy"] = worst
        meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    except (ValueError, KeyError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc))


@main.command("serve")
@click.option("--workspace", "ws_dir", type=click.Path(), default="comem-workspace", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--describe", type=click.Path(), default=None,
              help="write the API description file to this path and exit")
def serve_cmd(ws_dir, host, port, describe):
    """Serve workspace artifacts over HTTP for the explorer UI."""
    from .service import build_app, write_api_description

    ws = _open_workspace(ws_dir)
    app = build_app(ws)
    if describe:
        write_api_description(app, describe)
        click.echo(f"api description: {describe}")
        return
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
