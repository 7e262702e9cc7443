// Service client. Decode requests are rate limited to one per interval
// (default 100 ms, i.e. at most 10 requests per second) with the newest
// pointer position superseding anything pending or in flight, and every
// remote failure degrades to the nearest cached thumbnail so the panel
// never blanks out while offline.

import { interpolationPath, nearestNode, nodeCoords } from "./geodesic.js";
import { parseManifold, thumbPixels } from "./manifold.js";
import {
  ApiError,
  DecodeResult,
  ManifoldExport,
  ProjectResponse,
  ProjectResult,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export interface ExplorerApiOptions {
  minIntervalMs?: number;
  fetchFn?: FetchLike;
}

async function errorFrom(res: { status: number; json(): Promise<unknown> }): Promise<ApiError> {
  let code = "unknown";
  let message = `request failed with status ${res.status}`;
  try {
    const body = (await res.json()) as { detail?: { code?: string; message?: string } };
    if (body?.detail?.code) code = body.detail.code;
    if (body?.detail?.message) message = body.detail.message;
  } catch {
    // keep the generic message when the body is not our error shape
  }
  return new ApiError(res.status, code, message);
}

export class ExplorerApi {
  private readonly fetchFn: FetchLike;
  private readonly minIntervalMs: number;
  private manifold: ManifoldExport | null = null;

  private pending: { x: [number, number]; j: number } | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private lastIssue = -Infinity;
  private ticket = 0;
  private listener: ((result: DecodeResult) => void) | null = null;

  constructor(
    private readonly baseUrl: string,
    options: ExplorerApiOptions = {},
  ) {
    this.minIntervalMs = options.minIntervalMs ?? 100;
    this.fetchFn = options.fetchFn ?? (fetch.bind(globalThis) as FetchLike);
  }

  async getManifold(): Promise<ManifoldExport> {
    if (this.manifold) return this.manifold;
    const res = await this.fetchFn(`${this.baseUrl}/manifold`);
    if (!res.ok) throw await errorFrom(res);
    this.manifold = parseManifold(await res.json());
    return this.manifold;
  }

  /** Inject an already loaded export (fixtures, embedded offline copies). */
  useManifold(exp: ManifoldExport): void {
    this.manifold = exp;
  }

  onDecode(listener: (result: DecodeResult) => void): void {
    this.listener = listener;
  }

  async decodeNow(x: [number, number], j = 25): Promise<DecodeResult> {
    const res = await this.fetchFn(`${this.baseUrl}/decode`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ x, j }),
    });
    if (!res.ok) throw await errorFrom(res);
    const body = (await res.json()) as { probs: number[]; log_variance: number };
    return {
      kind: "live",
      probs: Float64Array.from(body.probs),
      logVariance: body.log_variance,
    };
  }

  /** Cached stand-in for a decode at x: the nearest exported thumbnail. */
  cachedDecode(x: [number, number]): DecodeResult {
    if (!this.manifold) throw new Error("no manifold loaded for cached fallback");
    const k = nearestNode(this.manifold, x[0], x[1]);
    return {
      kind: "cached",
      probs: thumbPixels(this.manifold, k),
      logVariance: this.manifold.variance[k],
    };
  }

  /**
   * Rate-limited decode: remembers only the newest position and issues at
   * most one request per interval; results arrive via onDecode, older
   * in-flight responses are dropped.
   */
  requestDecode(x: [number, number], j = 25): void {
    this.pending = { x: [x[0], x[1]], j };
    if (this.timer !== null) return;
    const wait = Math.max(0, this.lastIssue + this.minIntervalMs - Date.now());
    this.timer = setTimeout(() => void this.flush(), wait);
  }

  private async flush(): Promise<void> {
    this.timer = null;
    if (!this.pending) return;
    const { x, j } = this.pending;
    this.pending = null;
    this.lastIssue = Date.now();
    const ticket = ++this.ticket;
    let result: DecodeResult;
    try {
      result = await this.decodeNow(x, j);
    } catch {
      result = this.cachedDecode(x);
    }
    if (ticket === this.ticket && this.listener) this.listener(result);
  }

  async project(pixels: ArrayLike<number>, noise?: number): Promise<ProjectResult> {
    const body: { pixels: number[]; noise?: number } = {
      pixels: Array.from(pixels),
    };
    if (noise !== undefined) body.noise = noise;
    try {
      const res = await this.fetchFn(`${this.baseUrl}/project`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
      if (!res.ok) throw await errorFrom(res);
      const got = (await res.json()) as ProjectResponse;
      return {
        kind: "live",
        x: [got.x[0], got.x[1]],
        probs: Float64Array.from(got.probs),
        ssimVsInput: got.ssim_vs_input,
      };
    } catch (err) {
      if (err instanceof ApiError && err.status < 500) throw err;
      return this.cachedProject(pixels);
    }
  }

  /** Offline projection: the thumbnail closest to the sketch in pixel space. */
  cachedProject(pixels: ArrayLike<number>): ProjectResult {
    if (!this.manifold) throw new Error("no manifold loaded for cached fallback");
    const exp = this.manifold;
    let bestK = 0;
    let bestD = Infinity;
    for (let k = 0; k < exp.thumbs.length; k++) {
      const thumb = thumbPixels(exp, k);
      let d = 0;
      for (let i = 0; i < thumb.length; i++) {
        const diff = thumb[i] - pixels[i];
        d += diff * diff;
      }
      if (d < bestD) {
        bestD = d;
        bestK = k;
      }
    }
    const coords = nodeCoords(exp.bounds, exp.grid);
    return {
      kind: "cached",
      x: [coords[2 * bestK], coords[2 * bestK + 1]],
      probs: thumbPixels(exp, bestK),
      ssimVsInput: null,
    };
  }

  /**
   * Frames for the interpolation strip: latent waypoints from the
   * client-side geodesic, each decoded live when possible and otherwise
   * served from the thumbnail cache.
   */
  async interpolate(
    a: [number, number],
    b: [number, number],
    frames = 8,
  ): Promise<DecodeResult[]> {
    if (!this.manifold) throw new Error("manifold not loaded");
    const waypoints = interpolationPath(this.manifold, a, b, frames);
    const out: DecodeResult[] = [];
    for (const point of waypoints) {
      try {
        out.push(await this.decodeNow(point));
      } catch {
        out.push(this.cachedDecode(point));
      }
    }
    return out;
  }
}
