// View state and the rules that keep it valid. The rendered page is a pure
// function of (server artifacts, ViewState); the clamp below is the only
// place the level/threshold invariants are enforced.

export type PanelId = "dendrogram" | "matrix" | "coarse" | "averaged";

export interface ViewState {
  graphId: string | null;
  mergeLevel: number;
  communityLevel: number;
  blueThreshold: number;
  redThreshold: number;
  panels: PanelId[];
  matrixOrder: "dendrogram" | "input";
}

export const DEFAULT_PANELS: PanelId[] = ["dendrogram", "matrix", "coarse", "averaged"];

export function initialViewState(): ViewState {
  return {
    graphId: null,
    mergeLevel: 0,
    communityLevel: 0,
    blueThreshold: 0.6,
    redThreshold: 0.018,
    panels: DEFAULT_PANELS.slice(),
    matrixOrder: "dendrogram",
  };
}

function clamp01(x: number, fallback: number): number {
  if (!Number.isFinite(x)) return fallback;
  return Math.min(1, Math.max(0, x));
}

function nonNegative(x: number, fallback: number): number {
  if (!Number.isFinite(x)) return fallback;
  return Math.max(0, x);
}

/**
 * Apply a partial update and restore the invariants:
 * communityLevel >= mergeLevel >= 0, thresholds inside [0, 1].
 *
 * The field named in the patch wins on conflict: raising the merge level
 * drags the community level up with it, lowering the community level drags
 * the merge level down. Never mutates the input state.
 */
export function clampViewState(state: ViewState, patch: Partial<ViewState>): ViewState {
  const next: ViewState = { ...state, ...patch, panels: (patch.panels ?? state.panels).slice() };
  next.mergeLevel = nonNegative(next.mergeLevel, state.mergeLevel);
  next.communityLevel = nonNegative(next.communityLevel, state.communityLevel);
  next.blueThreshold = clamp01(next.blueThreshold, state.blueThreshold);
  next.redThreshold = clamp01(next.redThreshold, state.redThreshold);
  if (next.communityLevel < next.mergeLevel) {
    if (patch.communityLevel !== undefined && patch.mergeLevel === undefined) {
      next.mergeLevel = next.communityLevel;
    } else {
      next.communityLevel = next.mergeLevel;
    }
  }
  return next;
}

/** Key under which a view's coarse response may be memoized; equal states
 * must produce byte-equal requests. */
export function coarseRequestKey(state: ViewState): string {
  return [
    state.graphId ?? "",
    state.mergeLevel,
    state.communityLevel,
    state.blueThreshold,
    state.redThreshold,
  ].join("|");
}
