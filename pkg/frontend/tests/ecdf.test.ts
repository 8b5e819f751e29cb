import { describe, expect, it } from "vitest";

import { ccdfPoints, cdfPoints, median } from "../src/ecdf";

describe("ccdfPoints", () => {
  it("rejects empty input", () => {
    expect(() => ccdfPoints([])).toThrow();
  });

  it("steps down at each distinct value", () => {
    const pts = ccdfPoints([2, 1, 4, 2]);
    expect(pts).toEqual([
      { x: 1, y: 1 },
      { x: 1, y: 3 / 4 },
      { x: 2, y: 1 / 4 },
      { x: 4, y: 0 },
    ]);
  });

  it("is exact at the tail", () => {
    const n = 1000;
    const samples = Array.from({ length: n }, (_, i) => i + 1);
    const pts = ccdfPoints(samples);
    const last = pts[pts.length - 2];
    expect(last.y).toBeCloseTo(1 / n, 12);
  });

  it("degenerate distribution is a single drop", () => {
    const pts = ccdfPoints([0.143, 0.143, 0.143]);
    expect(pts).toEqual([
      { x: 0.143, y: 1 },
      { x: 0.143, y: 0 },
    ]);
  });
});

describe("cdfPoints", () => {
  it("accumulates to one", () => {
    const pts = cdfPoints([3, 1, 2, 2]);
    expect(pts).toEqual([
      { x: 1, y: 1 / 4 },
      { x: 2, y: 3 / 4 },
      { x: 3, y: 1 },
    ]);
  });
});

describe("median", () => {
  it("matches the order statistic", () => {
    expect(median([5, 1, 3])).toBe(3);
    expect(median([4, 1, 2, 3])).toBe(2);
  });
});
