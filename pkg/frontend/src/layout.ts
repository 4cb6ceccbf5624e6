// Deterministic geometry for the coarse-graph panels. No randomness and no
// iteration-order dependence: the same view always lands on the same pixels.

import type { CoarseView } from "./types.js";

export interface NodePlacement {
  x: number;
  y: number;
  radius: number;
}

export interface CoarseLayout {
  width: number;
  height: number;
  nodes: NodePlacement[];
}

/**
 * Meta-nodes on a circle, ordered by index, grouped so communities stay in
 * adjacent arcs; radius grows with the square root of the member count so
 * area tracks community size.
 */
export function layoutCoarseGraph(view: CoarseView, size = 480): CoarseLayout {
  const count = view.meta_nodes.length;
  const nodes: NodePlacement[] = new Array(count);
  const cx = size / 2;
  const cy = size / 2;
  const ring = size * 0.38;
  const maxSize = Math.max(1, ...view.sizes);

  // arc order: walk communities in index order, members sorted inside
  const order: number[] = [];
  for (const community of view.communities) {
    for (const member of [...community].sort((a, b) => a - b)) order.push(member);
  }
  for (let i = 0; i < order.length; i++) {
    const node = order[i]!;
    const angle = (2 * Math.PI * i) / count - Math.PI / 2;
    const members = view.sizes[node] ?? 1;
    nodes[node] = {
      x: cx + (count === 1 ? 0 : ring * Math.cos(angle)),
      y: cy + (count === 1 ? 0 : ring * Math.sin(angle)),
      radius: 6 + 18 * Math.sqrt(members / maxSize),
    };
  }
  return { width: size, height: size, nodes };
}

/** Fixed palette; community i always gets the same color in every panel. */
export function communityColor(index: number): string {
  const palette = [
    "#4c72b0",
    "#dd8452",
    "#55a868",
    "#c44e52",
    "#8172b3",
    "#937860",
    "#da8bc3",
    "#8c8c8c",
    "#ccb974",
    "#64b5cd",
  ];
  return palette[index % palette.length]!;
}

/**
 * Index spans of each community along the dendrogram leaf order, as maximal
 * runs of consecutive positions. Communities cut from the tree are contiguous
 * in its own order, so this normally yields one span apiece, but the code
 * does not rely on that.
 */
export function communitySpans(
  leafOrder: number[],
  metaNodes: number[][],
  communities: number[][],
): Array<Array<[number, number]>> {
  const position = new Map<number, number>();
  leafOrder.forEach((leaf, i) => position.set(leaf, i));
  return communities.map((metaIndices) => {
    const positions: number[] = [];
    for (const metaIndex of metaIndices) {
      for (const member of metaNodes[metaIndex] ?? []) {
        const p = position.get(member);
        if (p !== undefined) positions.push(p);
      }
    }
    positions.sort((a, b) => a - b);
    const spans: Array<[number, number]> = [];
    for (const p of positions) {
      const last = spans[spans.length - 1];
      if (last && p === last[1]) last[1] = p + 1;
      else spans.push([p, p + 1]);
    }
    return spans;
  });
}
