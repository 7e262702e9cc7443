// Shapes shared with the model service. The JSON contract is the only
// coupling to the backend: GET /manifold, POST /decode, POST /project.

export type Bounds = [[number, number], [number, number]];

export interface ManifoldExport {
  grid: number;
  bounds: Bounds;
  width: number;
  height: number;
  /** Log predictive variance per grid node, row-major (k = iy * grid + ix). */
  variance: number[];
  /** Base64 raw 8-bit pixel buffers, one per grid node, row-major pixels. */
  thumbs: string[];
  latents: [number, number][];
}

export interface DecodeResponse {
  probs: number[];
  log_variance: number;
}

export interface ProjectResponse {
  x: number[];
  probs: number[];
  ssim_vs_input: number;
}

/** What the decode panel actually shows: a live response or a cached thumb. */
export interface DecodeResult {
  kind: "live" | "cached";
  probs: Float64Array;
  logVariance: number;
}

export interface ProjectResult {
  kind: "live" | "cached";
  x: [number, number];
  probs: Float64Array;
  ssimVsInput: number | null;
}

export const ZOOM_LEVELS = [1, 2, 4, 8] as const;
export type ZoomLevel = (typeof ZOOM_LEVELS)[number];

export interface ViewState {
  manifold: ManifoldExport | null;
  cursor: [number, number] | null;
  endpoints: [number, number][];
  zoom: ZoomLevel;
  lastDecode: DecodeResult | null;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export class MalformedExportError extends Error {}
