// Browser entry point: owns one ViewState, re-renders every panel from
// fresh server payloads whenever the state changes. All numeric work
// happens on the server; this file is DOM plumbing.

import { ApiError, WorkspaceClient } from "./api.js";
import { renderAveragedPanel, renderCoarsePanel, renderDendrogram, renderMatrixPanel } from "./render.js";
import { clampViewState, initialViewState, type ViewState } from "./state.js";
import type { DendrogramData } from "./types.js";

interface PageElements {
  graphSelect: HTMLSelectElement;
  uploadBox: HTMLTextAreaElement;
  uploadButton: HTMLButtonElement;
  merge: HTMLInputElement;
  community: HTMLInputElement;
  blue: HTMLInputElement;
  red: HTMLInputElement;
  order: HTMLSelectElement;
  status: HTMLElement;
  panels: Record<"dendrogram" | "matrix" | "coarse" | "averaged", HTMLElement>;
}

function grab(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

export class ExplorerApp {
  private state: ViewState = initialViewState();
  private dendrogram: DendrogramData | null = null;
  private refreshToken = 0;

  constructor(
    private readonly client: WorkspaceClient,
    private readonly page: PageElements,
  ) {}

  static mount(baseUrl: string): ExplorerApp {
    const page: PageElements = {
      graphSelect: grab("graph-select") as HTMLSelectElement,
      uploadBox: grab("upload-box") as HTMLTextAreaElement,
      uploadButton: grab("upload-button") as HTMLButtonElement,
      merge: grab("merge-level") as HTMLInputElement,
      community: grab("community-level") as HTMLInputElement,
      blue: grab("blue-threshold") as HTMLInputElement,
      red: grab("red-threshold") as HTMLInputElement,
      order: grab("matrix-order") as HTMLSelectElement,
      status: grab("status-line"),
      panels: {
        dendrogram: grab("panel-dendrogram"),
        matrix: grab("panel-matrix"),
        coarse: grab("panel-coarse"),
        averaged: grab("panel-averaged"),
      },
    };
    const app = new ExplorerApp(new WorkspaceClient(baseUrl), page);
    app.wire();
    void app.reloadGraphList();
    return app;
  }

  private wire(): void {
    const { page } = this;
    page.graphSelect.addEventListener("change", () => {
      void this.selectGraph(page.graphSelect.value);
    });
    const levelInput = (field: "mergeLevel" | "communityLevel", el: HTMLInputElement) => {
      el.addEventListener("change", () => {
        this.update({ [field]: Number(el.value) });
      });
    };
    levelInput("mergeLevel", page.merge);
    levelInput("communityLevel", page.community);
    page.blue.addEventListener("change", () => this.update({ blueThreshold: Number(page.blue.value) }));
    page.red.addEventListener("change", () => this.update({ redThreshold: Number(page.red.value) }));
    page.order.addEventListener("change", () => {
      this.update({ matrixOrder: page.order.value === "input" ? "input" : "dendrogram" });
    });
    page.uploadButton.addEventListener("click", () => {
      void this.uploadAndCompute(page.uploadBox.value);
    });
  }

  private say(text: string, isError = false): void {
    this.page.status.textContent = text;
    this.page.status.classList.toggle("error", isError);
  }

  async reloadGraphList(): Promise<void> {
    const graphs = await this.client.listGraphs();
    const select = this.page.graphSelect;
    select.innerHTML = "";
    for (const g of graphs) {
      const option = document.createElement("option");
      option.value = g.id;
      option.textContent = `${g.name} (${g.nodes} nodes)`;
      select.appendChild(option);
    }
    const first = graphs[0];
    if (first && !this.state.graphId) await this.selectGraph(first.id);
  }

  async uploadAndCompute(edges: string): Promise<void> {
    try {
      this.say("uploading…");
      const meta = await this.client.uploadGraph(edges);
      const detail = await this.client.graphDetail(meta.id);
      if (!detail.has_artifacts) {
        this.say("computing co-membership matrix…");
        const started = await this.client.startJob(meta.id, {});
        await this.client.waitForJob(started.job);
      }
      await this.reloadGraphList();
      await this.selectGraph(meta.id);
    } catch (err) {
      this.say(err instanceof ApiError ? err.detail : String(err), true);
    }
  }

  async selectGraph(gid: string): Promise<void> {
    this.dendrogram = await this.client.fetchDendrogram(gid);
    // a new tree invalidates the old levels; restart from the whole graph
    this.state = clampViewState(initialViewState(), { graphId: gid });
    this.syncControls();
    await this.refresh();
  }

  /** Single entry point for state changes; keeps the invariants and redraws. */
  update(patch: Partial<ViewState>): void {
    this.state = clampViewState(this.state, patch);
    this.syncControls();
    void this.refresh();
  }

  private syncControls(): void {
    const { page, state } = this;
    page.merge.value = String(state.mergeLevel);
    page.community.value = String(state.communityLevel);
    page.blue.value = String(state.blueThreshold);
    page.red.value = String(state.redThreshold);
    const rootHeight = this.dendrogram?.root_height ?? 1;
    page.merge.max = page.community.max = String(rootHeight);
  }

  /** Re-render everything from the current state. Stale responses (the user
   * moved on) are dropped by token comparison, never drawn. */
  async refresh(): Promise<void> {
    const { state, dendrogram } = this;
    if (!state.graphId || !dendrogram) return;
    const token = ++this.refreshToken;
    try {
      const view = await this.client.fetchCoarse(
        state.graphId,
        state.mergeLevel,
        state.communityLevel,
        { blue: state.blueThreshold, red: state.redThreshold },
      );
      if (token !== this.refreshToken) return;
      const tree = renderDendrogram(dendrogram, state.mergeLevel, state.communityLevel);
      this.page.panels.dendrogram.innerHTML = tree.svg;
      this.page.panels.coarse.innerHTML = renderCoarsePanel(view);
      this.page.panels.averaged.innerHTML = renderAveragedPanel(view);
      this.page.panels.matrix.innerHTML = renderMatrixPanel(
        this.client.matrixUrl(state.graphId, state.matrixOrder),
        dendrogram,
        view,
      );
      this.say(
        `${view.meta_nodes.length} meta-nodes, ${view.communities.length} communities, ` +
          `${view.meta_edges.length} meta-edges`,
      );
    } catch (err) {
      if (err instanceof ApiError) this.say(err.detail, true);
      else throw err;
    }
  }
}
