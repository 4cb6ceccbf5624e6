"""HTTP API over a workspace: graph uploads, background probability jobs,
and the dendrogram / matrix / coarse-view artifacts the explorer UI reads.

Artifact GETs stream stored bytes, so repeated reads of an unchanged
workspace are byte-identical.
"""

import json
import threading
import uuid
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .workspace import (
    DEFAULT_SEED,
    JobConfig,
    Workspace,
    coarse_view_bytes,
    matrix_image_bytes,
    run_pvw_pipeline,
)


class PvwJobRequest(BaseModel):
    method: Literal["integral", "hat", "bruteforce", "gibbs"] = "hat"
    workers: int = Field(1, ge=1)
    seed: int = DEFAULT_SEED
    m: Optional[int] = Field(None, ge=1)
    p_in: Optional[float] = Field(None, ge=0.0, le=1.0)
    p_out: Optional[float] = Field(None, ge=0.0, le=1.0)
    sweeps: Optional[int] = Field(None, ge=1)

    def to_config(self):
        options = {
            key: value
            for key, value in (
                ("m", self.m),
                ("p_in", self.p_in),
                ("p_out", self.p_out),
                ("sweeps", self.sweeps),
            )
            if value is not None
        }
        return JobConfig(
            method=self.method, workers=self.workers, seed=self.seed, options=options
        )


class JobRegistry:
    """In-process job table; at most one live job per graph id."""

    def __init__(self):
        self._lock = threading.Lock()
        self._jobs = {}
        self._active = {}

    def start(self, gid, config, runner):
        with self._lock:
            live = self._active.get(gid)
            if live is not None and self._jobs[live]["status"] in ("queued", "running"):
                return None, live
            jid = uuid.uuid4().hex[:12]
            job = {
                "id": jid,
                "graph": gid,
                "status": "queued",
                "config_hash": config.hash(),
                "cached": False,
                "error": None,
                "summary": None,
            }
            self._jobs[jid] = job
            self._active[gid] = jid
        thread = threading.Thread(target=self._run, args=(jid, runner), daemon=True)
        thread.start()
        return dict(job), None

    def _run(self, jid, runner):
        with self._lock:
            self._jobs[jid]["status"] = "running"
        try:
            summary = runner()
        except Exception as exc:
            with self._lock:
                self._jobs[jid]["status"] = "error"
                self._jobs[jid]["error"] = str(exc)
        else:
            with self._lock:
                self._jobs[jid]["status"] = "done"
                self._jobs[jid]["cached"] = bool(summary.get("cached"))
                self._jobs[jid]["summary"] = summary
        return None

    def get(self, jid):
        with self._lock:
            job = self._jobs.get(jid)
            return dict(job) if job else None


def _parse_upload(body, content_type):
    name = None
    text = None
    if "json" in (content_type or ""):
        try:
            payload = json.loads(body)
        except json.JSONDecodeError:
            raise ValueError("request body is not valid JSON")
        if not isinstance(payload, dict) or "edges" not in payload:
            raise ValueError("JSON uploads need an 'edges' field")
        name = payload.get("name")
        edges = payload["edges"]
        if isinstance(edges, str):
            text = edges
        elif isinstance(edges, list):
            text = "\n".join(" ".join(str(x) for x in row) for row in edges)
        else:
            raise ValueError("'edges' must be an edge-list string or list of pairs")
    else:
        text = body.decode("utf-8", errors="strict")
    if not text or not text.strip():
        raise ValueError("empty edge list")
    return text, name


def build_app(workspace):
    ws = workspace if isinstance(workspace, Workspace) else Workspace(workspace)
    app = FastAPI(
        title="comem service",
        version="0.1.0",
        description="Co-membership probabilities, dendrograms and coarse "
        "community views over a content-addressed workspace.",
    )
    app.state.workspace = ws
    app.state.jobs = JobRegistry()

    def _require_graph(gid):
        if not ws.has_graph(gid):
            raise HTTPException(status_code=404, detail=f"unknown graph id {gid!r}")

    def _resolve(gid, config):
        _require_graph(gid)
        try:
            return ws.resolve_hash(gid, config)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/graphs")
    def list_graphs():
        return JSONResponse({"graphs": ws.list_graphs()})

    @app.post("/graphs", status_code=201)
    async def upload_graph(request: Request):
        body = await request.body()
        try:
            text, name = _parse_upload(body, request.headers.get("content-type"))
            gid = ws.add_graph(text, name=name)
        except (ValueError, UnicodeDecodeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return JSONResponse(ws.graph_meta(gid), status_code=201)

    @app.get("/graphs/{gid}")
    def graph_detail(gid: str):
        _require_graph(gid)
        meta = dict(ws.graph_meta(gid))
        current = ws.current_hash(gid)
        meta["current_config"] = current
        meta["has_artifacts"] = bool(current and ws.artifact_meta(gid, current))
        return JSONResponse(meta)

    @app.post("/graphs/{gid}/pvw", status_code=202)
    def start_pvw(gid: str, req: PvwJobRequest):
        _require_graph(gid)
        try:
            config = req.to_config()
            config.check_size(ws.graph_meta(gid)["nodes"])
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        job, conflict = app.state.jobs.start(
            gid, config, lambda: run_pvw_pipeline(ws, gid, config)
        )
        if job is None:
            raise HTTPException(
                status_code=409,
                detail=f"graph {gid!r} already has a running job {conflict!r}",
            )
        return JSONResponse({"job": job["id"], "status": job["status"],
                             "config_hash": job["config_hash"]}, status_code=202)

    @app.get("/jobs/{jid}")
    def job_status(jid: str):
        job = app.state.jobs.get(jid)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job id {jid!r}")
        return JSONResponse(job)

    @app.get("/graphs/{gid}/dendrogram")
    def dendrogram(gid: str, config: Optional[str] = None):
        chash = _resolve(gid, config)
        path = ws.artifact_dir(gid, chash) / "dendrogram.json"
        if not path.exists():
            raise HTTPException(status_code=404,
                                detail=f"graph {gid!r} has no dendrogram artifact")
        return Response(path.read_bytes(), media_type="application/json")

    @app.get("/graphs/{gid}/matrix")
    def matrix_image(
        gid: str,
        order: Literal["dendrogram", "input"] = "dendrogram",
        config: Optional[str] = None,
    ):
        chash = _resolve(gid, config)
        try:
            blob = matrix_image_bytes(ws, gid, chash, order=order)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return Response(blob, media_type="image/png")

    @app.get("/graphs/{gid}/coarse")
    def coarse_view(
        gid: str,
        merge: float = Query(..., ge=0.0),
        community: float = Query(..., ge=0.0),
        blue: float = Query(0.6, ge=0.0, le=1.0),
        red: float = Query(0.018, ge=0.0, le=1.0),
        config: Optional[str] = None,
    ):
        chash = _resolve(gid, config)
        try:
            blob = coarse_view_bytes(ws, gid, chash, merge, community, blue=blue, red=red)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return Response(blob, media_type="application/json")

    write_api_description(app, ws.root / "openapi.json")
    return app


def write_api_description(app, path):
    blob = json.dumps(app.openapi(), sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(blob)
    return path
