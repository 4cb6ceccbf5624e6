// Pure string renderers: every panel is SVG markup computed from server
// payloads plus the view state, nothing else. Re-rendering with equal inputs
// yields byte-equal markup, which is what keeps reloads reproducible.

import { communityColor, communitySpans, layoutCoarseGraph } from "./layout.js";
import type { CoarseView, DendrogramData, EdgeColor } from "./types.js";

export const EDGE_STROKES: Record<EdgeColor, string> = {
  blue: "#2166ac",
  red: "#b2182b",
  neutral: "#b0b0b0",
};

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function fmt(x: number): string {
  return Number.isInteger(x) ? String(x) : x.toFixed(2);
}

function communityOf(view: CoarseView): Map<number, number> {
  const owner = new Map<number, number>();
  view.communities.forEach((members, ci) => {
    for (const metaIndex of members) owner.set(metaIndex, ci);
  });
  return owner;
}

/** Meta-node panel: disc area tracks member count, discs tinted by the
 * community outline they fall in, edge width by bundled edge count. */
export function renderCoarsePanel(view: CoarseView, size = 480): string {
  const layout = layoutCoarseGraph(view, size);
  const owner = communityOf(view);
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" class="coarse-panel" viewBox="0 0 ${layout.width} ${layout.height}">`,
  ];
  const maxCount = Math.max(1, ...view.meta_edges.map((e) => e.edge_count));
  for (const edge of view.meta_edges) {
    const a = layout.nodes[edge.a];
    const b = layout.nodes[edge.b];
    if (!a || !b) continue;
    const width = 1 + 3 * Math.sqrt(edge.edge_count / maxCount);
    parts.push(
      `<line class="edge edge-${edge.color}" x1="${fmt(a.x)}" y1="${fmt(a.y)}"` +
        ` x2="${fmt(b.x)}" y2="${fmt(b.y)}" stroke="${EDGE_STROKES[edge.color]}"` +
        ` stroke-width="${fmt(width)}"/>`,
    );
  }
  view.meta_nodes.forEach((members, i) => {
    const place = layout.nodes[i];
    if (!place) return;
    const color = communityColor(owner.get(i) ?? 0);
    parts.push(
      `<circle class="meta-node" data-size="${members.length}" cx="${fmt(place.x)}"` +
        ` cy="${fmt(place.y)}" r="${fmt(place.radius)}" fill="${color}"/>`,
    );
    parts.push(
      `<text class="meta-label" x="${fmt(place.x)}" y="${fmt(place.y)}"` +
        ` text-anchor="middle" dy="0.35em">${members.length}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n");
}

/** Averaged-probability panel: same geometry, edges labeled by their block
 * mean and classed by the server's threshold call. */
export function renderAveragedPanel(view: CoarseView, size = 480): string {
  const layout = layoutCoarseGraph(view, size);
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" class="averaged-panel" viewBox="0 0 ${layout.width} ${layout.height}">`,
  ];
  for (const edge of view.meta_edges) {
    const a = layout.nodes[edge.a];
    const b = layout.nodes[edge.b];
    if (!a || !b) continue;
    parts.push(
      `<g class="edge edge-${edge.color}">` +
        `<line x1="${fmt(a.x)}" y1="${fmt(a.y)}" x2="${fmt(b.x)}" y2="${fmt(b.y)}"` +
        ` stroke="${EDGE_STROKES[edge.color]}" stroke-width="2"/>` +
        `<text x="${fmt((a.x + b.x) / 2)}" y="${fmt((a.y + b.y) / 2)}"` +
        ` class="edge-label">${edge.mean_p.toFixed(3)}</text></g>`,
    );
  }
  layout.nodes.forEach((place, i) => {
    parts.push(
      `<circle class="meta-node" cx="${fmt(place.x)}" cy="${fmt(place.y)}"` +
        ` r="${fmt(place.radius)}" fill="#ffffff" stroke="#333333"/>` +
        `<text x="${fmt(place.x)}" y="${fmt(place.y)}" text-anchor="middle"` +
        ` dy="0.35em">${i}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n");
}

export interface DendrogramRender {
  svg: string;
  /** pixel y for a given height, exposed so the cut sliders line up */
  yOfHeight: (h: number) => number;
}

/** Classic merge-tree drawing with the two selected cut levels overlaid. */
export function renderDendrogram(
  dend: DendrogramData,
  mergeLevel: number,
  communityLevel: number,
  width = 480,
  height = 320,
): DendrogramRender {
  const pad = 10;
  const n = dend.n;
  const top = Math.max(dend.root_height, communityLevel, mergeLevel, 1e-9);
  const xOfLeaf = new Map<number, number>();
  dend.leaf_order.forEach((leaf, i) => {
    xOfLeaf.set(leaf, pad + ((width - 2 * pad) * (i + 0.5)) / n);
  });
  const yOf = (h: number) => height - pad - ((height - 2 * pad) * h) / top;

  // cluster -> (x center, height), built bottom-up
  const xs = new Array<number>(2 * n - 1);
  const hs = new Array<number>(2 * n - 1).fill(0);
  for (let leaf = 0; leaf < n; leaf++) xs[leaf] = xOfLeaf.get(leaf) ?? pad;
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" class="dendrogram-panel" viewBox="0 0 ${width} ${height}">`,
  ];
  dend.merges.forEach(([a, b, h], i) => {
    const xa = xs[a]!;
    const xb = xs[b]!;
    const y = yOf(h);
    parts.push(
      `<path class="merge" fill="none" stroke="#555555" d="M ${fmt(xa)} ${fmt(yOf(hs[a]!))}` +
        ` V ${fmt(y)} H ${fmt(xb)} V ${fmt(yOf(hs[b]!))}"/>`,
    );
    xs[n + i] = (xa + xb) / 2;
    hs[n + i] = h;
  });
  parts.push(
    `<line class="cut cut-merge" x1="0" x2="${width}" y1="${fmt(yOf(mergeLevel))}"` +
      ` y2="${fmt(yOf(mergeLevel))}" stroke="#2166ac" stroke-dasharray="6 3"/>`,
  );
  parts.push(
    `<line class="cut cut-community" x1="0" x2="${width}" y1="${fmt(yOf(communityLevel))}"` +
      ` y2="${fmt(yOf(communityLevel))}" stroke="#b2182b" stroke-dasharray="6 3"/>`,
  );
  parts.push("</svg>");
  return { svg: parts.join("\n"), yOfHeight: yOf };
}

/** Matrix panel: the server-rendered intensity image with community-block
 * outlines drawn along the diagonal in the shared palette. */
export function renderMatrixPanel(
  imageUrl: string,
  dend: DendrogramData,
  view: CoarseView | null,
  size = 480,
): string {
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" class="matrix-panel" viewBox="0 0 ${size} ${size}">`,
    `<image href="${esc(imageUrl)}" x="0" y="0" width="${size}" height="${size}"` +
      ` preserveAspectRatio="none" image-rendering="pixelated"/>`,
  ];
  if (view) {
    const cell = size / dend.n;
    const spans = communitySpans(dend.leaf_order, view.meta_nodes, view.communities);
    spans.forEach((runs, ci) => {
      for (const [start, end] of runs) {
        parts.push(
          `<rect class="community-outline" x="${fmt(start * cell)}" y="${fmt(start * cell)}"` +
            ` width="${fmt((end - start) * cell)}" height="${fmt((end - start) * cell)}"` +
            ` fill="none" stroke="${communityColor(ci)}" stroke-width="2"/>`,
        );
      }
    });
  }
  parts.push("</svg>");
  return parts.join("\n");
}
