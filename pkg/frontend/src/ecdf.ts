/** Rank-based empirical distribution curves: tail points are exact down to 1/n. */

export interface CurvePoint {
  x: number;
  y: number;
}

function sorted(samples: number[]): number[] {
  if (samples.length === 0) {
    throw new Error("empty sample set");
  }
  return [...samples].sort((a, b) => a - b);
}

/**
 * Complementary CDF evaluated at every distinct sample value:
 * y(x) = P(X > x) = (# samples strictly greater) / n.
 * The leading point (min, 1) anchors the step curve.
 */
export function ccdfPoints(samples: number[]): CurvePoint[] {
  const xs = sorted(samples);
  const n = xs.length;
  const points: CurvePoint[] = [{ x: xs[0], y: 1 }];
  for (let i = 0; i < n; i++) {
    if (i === n - 1 || xs[i + 1] !== xs[i]) {
      points.push({ x: xs[i], y: (n - 1 - i) / n });
    }
  }
  return points;
}

/** CDF at every distinct sample value: y(x) = P(X <= x). */
export function cdfPoints(samples: number[]): CurvePoint[] {
  const xs = sorted(samples);
  const n = xs.length;
  const points: CurvePoint[] = [];
  for (let i = 0; i < n; i++) {
    if (i === n - 1 || xs[i + 1] !== xs[i]) {
      points.push({ x: xs[i], y: (i + 1) / n });
    }
  }
  return points;
}

/** Empirical median from the rank-based CDF. */
export function median(samples: number[]): number {
  const xs = sorted(samples);
  return xs[Math.floor((xs.length - 1) / 2)];
}
