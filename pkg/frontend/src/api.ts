// Thin typed client over fetch. Every request funnels through one helper so
// validation failures (422) surface as ApiError with the server's detail
// text, which the panels show inline instead of crashing the view.

import type {
  CoarseView,
  DendrogramData,
  GraphDetail,
  GraphMeta,
  JobInfo,
  JobStarted,
  PvwJobRequest,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function raiseFor(response: Response): Promise<never> {
  let detail = response.statusText || "request failed";
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") detail = body.detail;
    else if (body && Array.isArray(body.detail)) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, detail);
}

export class WorkspaceClient {
  constructor(public readonly baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.baseUrl + path);
    if (!response.ok) await raiseFor(response);
    return (await response.json()) as T;
  }

  async listGraphs(): Promise<GraphMeta[]> {
    const body = await this.getJson<{ graphs: GraphMeta[] }>("/graphs");
    return body.graphs;
  }

  async graphDetail(gid: string): Promise<GraphDetail> {
    return this.getJson<GraphDetail>(`/graphs/${gid}`);
  }

  async uploadGraph(edges: string, name?: string): Promise<GraphMeta> {
    const response = await fetch(this.baseUrl + "/graphs", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(name ? { edges, name } : { edges }),
    });
    if (!response.ok) await raiseFor(response);
    return (await response.json()) as GraphMeta;
  }

  async startJob(gid: string, request: PvwJobRequest = {}): Promise<JobStarted> {
    const response = await fetch(this.baseUrl + `/graphs/${gid}/pvw`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) await raiseFor(response);
    return (await response.json()) as JobStarted;
  }

  async jobStatus(jobId: string): Promise<JobInfo> {
    return this.getJson<JobInfo>(`/jobs/${jobId}`);
  }

  /** Poll until the job leaves the queue; resolves on done, rejects on error. */
  async waitForJob(jobId: string, pollMs = 500, timeoutMs = 600_000): Promise<JobInfo> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.jobStatus(jobId);
      if (job.status === "done") return job;
      if (job.status === "error") throw new ApiError(500, job.error ?? "job failed");
      if (Date.now() > deadline) throw new ApiError(408, "job polling timed out");
      await new Promise((resolve) => setTimeout(resolve, pollMs));
    }
  }

  async fetchDendrogram(gid: string, config?: string): Promise<DendrogramData> {
    const qs = config ? `?config=${config}` : "";
    return this.getJson<DendrogramData>(`/graphs/${gid}/dendrogram${qs}`);
  }

  /** The matrix is served as a rendered image; the client never sees cells. */
  matrixUrl(gid: string, order: "dendrogram" | "input" = "dendrogram", config?: string): string {
    const params = new URLSearchParams({ order });
    if (config) params.set("config", config);
    return `${this.baseUrl}/graphs/${gid}/matrix?${params.toString()}`;
  }

  async fetchMatrixPng(
    gid: string,
    order: "dendrogram" | "input" = "dendrogram",
    config?: string,
  ): Promise<Uint8Array> {
    const response = await fetch(this.matrixUrl(gid, order, config));
    if (!response.ok) await raiseFor(response);
    return new Uint8Array(await response.arrayBuffer());
  }

  async fetchCoarse(
    gid: string,
    merge: number,
    community: number,
    thresholds?: { blue?: number; red?: number },
    config?: string,
  ): Promise<CoarseView> {
    const params = new URLSearchParams({
      merge: String(merge),
      community: String(community),
    });
    if (thresholds?.blue !== undefined) params.set("blue", String(thresholds.blue));
    if (thresholds?.red !== undefined) params.set("red", String(thresholds.red));
    if (config) params.set("config", config);
    return this.getJson<CoarseView>(`/graphs/${gid}/coarse?${params.toString()}`);
  }
}
