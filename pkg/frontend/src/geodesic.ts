// Variance-guided shortest path over the exported latent grid.
//
// This mirrors the server's implementation operation for operation so both
// sides pick identical node paths: same linspace construction, sqrt of an
// explicit square sum for edge lengths (correctly rounded in both runtimes),
// canonical search direction (always from the smaller node index) and
// smaller-predecessor tie-breaking.

import { Bounds, ManifoldExport } from "./types.js";

export function linspace(lo: number, hi: number, n: number): Float64Array {
  const out = new Float64Array(n);
  if (n === 1) {
    out[0] = lo;
    return out;
  }
  const step = (hi - lo) / (n - 1);
  for (let i = 0; i < n; i++) out[i] = i * step + lo;
  out[n - 1] = hi;
  return out;
}

export function nodeCoords(bounds: Bounds, grid: number): Float64Array {
  const xs = linspace(bounds[0][0], bounds[0][1], grid);
  const ys = linspace(bounds[1][0], bounds[1][1], grid);
  const coords = new Float64Array(grid * grid * 2);
  for (let k = 0; k < grid * grid; k++) {
    coords[2 * k] = xs[k % grid];
    coords[2 * k + 1] = ys[Math.floor(k / grid)];
  }
  return coords;
}

/** Binary heap over (distance, node) pairs, popped in lexicographic order. */
class MinHeap {
  private dist: number[] = [];
  private node: number[] = [];

  get size(): number {
    return this.dist.length;
  }

  push(d: number, u: number): void {
    this.dist.push(d);
    this.node.push(u);
    let i = this.dist.length - 1;
    while (i > 0) {
      const parent = (i - 1) >> 1;
      if (!this.less(i, parent)) break;
      this.swap(i, parent);
      i = parent;
    }
  }

  pop(): [number, number] {
    const top: [number, number] = [this.dist[0], this.node[0]];
    const last = this.dist.length - 1;
    this.swap(0, last);
    this.dist.pop();
    this.node.pop();
    let i = 0;
    for (;;) {
      const l = 2 * i + 1;
      const r = l + 1;
      let smallest = i;
      if (l < this.dist.length && this.less(l, smallest)) smallest = l;
      if (r < this.dist.length && this.less(r, smallest)) smallest = r;
      if (smallest === i) break;
      this.swap(i, smallest);
      i = smallest;
    }
    return top;
  }

  private less(a: number, b: number): boolean {
    return (
      this.dist[a] < this.dist[b] ||
      (this.dist[a] === this.dist[b] && this.node[a] < this.node[b])
    );
  }

  private swap(a: number, b: number): void {
    [this.dist[a], this.dist[b]] = [this.dist[b], this.dist[a]];
    [this.node[a], this.node[b]] = [this.node[b], this.node[a]];
  }
}

function rescaled(logVariance: ArrayLike<number>): Float64Array {
  const n = logVariance.length;
  let min = Infinity;
  let max = -Infinity;
  for (let i = 0; i < n; i++) {
    if (logVariance[i] < min) min = logVariance[i];
    if (logVariance[i] > max) max = logVariance[i];
  }
  const span = max - min;
  const r = new Float64Array(n);
  if (span > 0) {
    for (let i = 0; i < n; i++) r[i] = (logVariance[i] - min) / span;
  }
  return r;
}

export function gridGeodesic(
  logVariance: ArrayLike<number>,
  bounds: Bounds,
  grid: number,
  start: number,
  goal: number,
): number[] {
  let flipped = false;
  if (start > goal) {
    [start, goal] = [goal, start];
    flipped = true;
  }
  const g = grid;
  if (logVariance.length !== g * g) {
    throw new Error(`need ${g * g} variance values, got ${logVariance.length}`);
  }
  const coords = nodeCoords(bounds, g);
  const r = rescaled(logVariance);

  const dist = new Float64Array(g * g).fill(Infinity);
  const pred = new Int32Array(g * g).fill(-1);
  const done = new Uint8Array(g * g);
  dist[start] = 0;
  const heap = new MinHeap();
  heap.push(0, start);
  while (heap.size > 0) {
    const [d, u] = heap.pop();
    if (done[u]) continue;
    done[u] = 1;
    if (u === goal) break;
    const ux = u % g;
    const uy = Math.floor(u / g);
    for (let dy = -1; dy <= 1; dy++) {
      for (let dx = -1; dx <= 1; dx++) {
        if (dx === 0 && dy === 0) continue;
        const vx = ux + dx;
        const vy = uy + dy;
        if (vx < 0 || vx >= g || vy < 0 || vy >= g) continue;
        const v = vy * g + vx;
        if (done[v]) continue;
        const ex = coords[2 * v] - coords[2 * u];
        const ey = coords[2 * v + 1] - coords[2 * u + 1];
        const step = Math.sqrt(ex * ex + ey * ey);
        const alt = d + step * (1 + Math.exp(0.5 * (r[u] + r[v])));
        if (alt < dist[v] || (alt === dist[v] && u < pred[v])) {
          dist[v] = alt;
          pred[v] = u;
          heap.push(alt, v);
        }
      }
    }
  }
  if (!done[goal]) throw new Error("goal unreachable");
  const path = [goal];
  while (path[path.length - 1] !== start) path.push(pred[path[path.length - 1]]);
  path.reverse();
  return flipped ? path.reverse() : path;
}

export function pathCost(
  logVariance: ArrayLike<number>,
  bounds: Bounds,
  grid: number,
  path: number[],
): number {
  const coords = nodeCoords(bounds, grid);
  const r = rescaled(logVariance);
  let total = 0;
  for (let i = 0; i + 1 < path.length; i++) {
    const u = path[i];
    const v = path[i + 1];
    const ex = coords[2 * v] - coords[2 * u];
    const ey = coords[2 * v + 1] - coords[2 * u + 1];
    total += Math.sqrt(ex * ex + ey * ey) * (1 + Math.exp(0.5 * (r[u] + r[v])));
  }
  return total;
}

/**
 * Evenly spaced (by arc length) samples along a polyline of [x, y] points.
 * Arc lengths, targets and the interpolation itself use the same operation
 * order as the server's resampler, so both sides emit identical frames.
 */
export function resamplePolyline(
  points: [number, number][],
  count: number,
): [number, number][] {
  const seg: number[] = [];
  const cum = [0];
  for (let i = 1; i < points.length; i++) {
    const dx = points[i][0] - points[i - 1][0];
    const dy = points[i][1] - points[i - 1][1];
    seg.push(Math.sqrt(dx * dx + dy * dy));
    cum.push(cum[i - 1] + seg[i - 1]);
  }
  const total = cum[cum.length - 1];
  if (total === 0) {
    return Array.from({ length: count }, () => [points[0][0], points[0][1]]);
  }
  const step = total / (count - 1);
  const out: [number, number][] = [];
  for (let i = 0; i < count; i++) {
    const t = i === count - 1 ? total : i * step;
    let k = cum.findIndex((c) => c > t) - 1;
    if (k < 0) k = seg.length - 1;
    const frac = seg[k] > 0 ? (t - cum[k]) / seg[k] : 0;
    out.push([
      points[k][0] + frac * (points[k + 1][0] - points[k][0]),
      points[k][1] + frac * (points[k + 1][1] - points[k][1]),
    ]);
  }
  return out;
}

/** Index of the grid node nearest to a latent point (first on exact ties). */
export function nearestNode(exp: ManifoldExport, x: number, y: number): number {
  const pick = (lo: number, hi: number, v: number): number => {
    if (exp.grid === 1) return 0;
    const step = (hi - lo) / (exp.grid - 1);
    const f = (v - lo) / step;
    const base = Math.max(0, Math.min(exp.grid - 1, Math.floor(f)));
    const frac = f - base;
    const next = Math.min(exp.grid - 1, base + 1);
    return frac > 0.5 ? next : base;
  };
  const ix = pick(exp.bounds[0][0], exp.bounds[0][1], x);
  const iy = pick(exp.bounds[1][0], exp.bounds[1][1], y);
  return iy * exp.grid + ix;
}

/**
 * Latent waypoints of the variance-guided interpolation between two points,
 * resampled to the requested frame count. Identical endpoints collapse to a
 * single frame.
 */
export function interpolationPath(
  exp: ManifoldExport,
  a: [number, number],
  b: [number, number],
  frames: number,
): [number, number][] {
  for (const [x, y] of [a, b]) {
    if (
      x < exp.bounds[0][0] || x > exp.bounds[0][1] ||
      y < exp.bounds[1][0] || y > exp.bounds[1][1]
    ) {
      throw new RangeError(`endpoint (${x}, ${y}) outside manifold bounds`);
    }
  }
  if (a[0] === b[0] && a[1] === b[1]) return [[a[0], a[1]]];
  const start = nearestNode(exp, a[0], a[1]);
  const goal = nearestNode(exp, b[0], b[1]);
  const nodes = gridGeodesic(exp.variance, exp.bounds, exp.grid, start, goal);
  const coords = nodeCoords(exp.bounds, exp.grid);
  const polyline: [number, number][] = [
    [a[0], a[1]],
    ...nodes.map((k): [number, number] => [coords[2 * k], coords[2 * k + 1]]),
    [b[0], b[1]],
  ];
  return resamplePolyline(polyline, frames);
}
