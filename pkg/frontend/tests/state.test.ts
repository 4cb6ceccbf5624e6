import { describe, expect, it } from "vitest";

import { clampViewState, coarseRequestKey, initialViewState } from "../src/state.js";

describe("clampViewState", () => {
  it("starts valid", () => {
    const s = initialViewState();
    expect(s.communityLevel).toBeGreaterThanOrEqual(s.mergeLevel);
    expect(s.blueThreshold).toBeGreaterThanOrEqual(0);
    expect(s.blueThreshold).toBeLessThanOrEqual(1);
  });

  it("raising the merge level drags the community level along", () => {
    const s = clampViewState(initialViewState(), { mergeLevel: 0.4 });
    expect(s.mergeLevel).toBe(0.4);
    expect(s.communityLevel).toBe(0.4);
  });

  it("lowering the community level drags the merge level down", () => {
    let s = clampViewState(initialViewState(), { mergeLevel: 0.3, communityLevel: 0.8 });
    s = clampViewState(s, { communityLevel: 0.1 });
    expect(s.communityLevel).toBe(0.1);
    expect(s.mergeLevel).toBe(0.1);
  });

  it("clamps thresholds into [0, 1]", () => {
    const s = clampViewState(initialViewState(), { blueThreshold: 1.7, redThreshold: -0.2 });
    expect(s.blueThreshold).toBe(1);
    expect(s.redThreshold).toBe(0);
  });

  it("ignores NaN and negative levels", () => {
    const base = clampViewState(initialViewState(), { mergeLevel: 0.2, communityLevel: 0.5 });
    const s = clampViewState(base, { mergeLevel: Number.NaN, communityLevel: -3 });
    expect(s.mergeLevel).toBe(0.2);
    expect(s.communityLevel).toBe(0.2); // 0 requested, dragged up to merge
  });

  it("does not mutate its input", () => {
    const before = initialViewState();
    const frozen = JSON.stringify(before);
    clampViewState(before, { mergeLevel: 0.9, blueThreshold: 2 });
    expect(JSON.stringify(before)).toBe(frozen);
  });

  it("holds the invariants under random update streams", () => {
    // tiny deterministic LCG; good enough to shake the clamp logic
    let seed = 123456789;
    const rand = () => {
      seed = (seed * 1103515245 + 12345) % 2147483648;
      return seed / 2147483648;
    };
    let s = initialViewState();
    for (let step = 0; step < 2000; step++) {
      const patch: Record<string, number> = {};
      if (rand() < 0.5) patch.mergeLevel = rand() * 3 - 0.5;
      if (rand() < 0.5) patch.communityLevel = rand() * 3 - 0.5;
      if (rand() < 0.3) patch.blueThreshold = rand() * 2 - 0.5;
      if (rand() < 0.3) patch.redThreshold = rand() * 2 - 0.5;
      s = clampViewState(s, patch);
      expect(s.communityLevel).toBeGreaterThanOrEqual(s.mergeLevel);
      expect(s.mergeLevel).toBeGreaterThanOrEqual(0);
      expect(s.blueThreshold).toBeGreaterThanOrEqual(0);
      expect(s.blueThreshold).toBeLessThanOrEqual(1);
      expect(s.redThreshold).toBeGreaterThanOrEqual(0);
      expect(s.redThreshold).toBeLessThanOrEqual(1);
    }
  });
});

describe("coarseRequestKey", () => {
  it("is stable for equal states and distinct for different levels", () => {
    const a = clampViewState(initialViewState(), { graphId: "g", mergeLevel: 0.25 });
    const b = clampViewState(initialViewState(), { graphId: "g", mergeLevel: 0.25 });
    expect(coarseRequestKey(a)).toBe(coarseRequestKey(b));
    const c = clampViewState(a, { mergeLevel: 0.3 });
    expect(coarseRequestKey(c)).not.toBe(coarseRequestKey(a));
  });
});
