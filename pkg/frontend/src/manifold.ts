// Parsing, coordinate transforms and rasterization of the manifold export.

import { Bounds, ManifoldExport, MalformedExportError } from "./types.js";

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

export function parseManifold(raw: unknown): ManifoldExport {
  const fail = (msg: string): never => {
    throw new MalformedExportError(`manifold export: ${msg}`);
  };
  if (typeof raw !== "object" || raw === null) fail("not an object");
  const o = raw as Record<string, unknown>;
  if (!Number.isInteger(o.grid) || (o.grid as number) < 2) fail("bad grid");
  const grid = o.grid as number;
  if (!Number.isInteger(o.width) || (o.width as number) < 1) fail("bad width");
  if (!Number.isInteger(o.height) || (o.height as number) < 1) fail("bad height");
  const bounds = o.bounds as Bounds;
  if (
    !Array.isArray(bounds) || bounds.length !== 2 ||
    !bounds.every(
      (pair) =>
        Array.isArray(pair) && pair.length === 2 &&
        pair.every(isFiniteNumber) && pair[0] <= pair[1],
    )
  ) {
    fail("bad bounds");
  }
  const variance = o.variance as number[];
  if (!Array.isArray(variance) || variance.length !== grid * grid ||
      !variance.every(isFiniteNumber)) {
    fail("bad variance");
  }
  const thumbs = o.thumbs as string[];
  if (!Array.isArray(thumbs) || thumbs.length !== grid * grid ||
      !thumbs.every((t) => typeof t === "string")) {
    fail("bad thumbs");
  }
  const latents = o.latents as [number, number][];
  if (!Array.isArray(latents) ||
      !latents.every(
        (p) => Array.isArray(p) && p.length === 2 && p.every(isFiniteNumber),
      )) {
    fail("bad latents");
  }
  return {
    grid,
    bounds: [[bounds[0][0], bounds[0][1]], [bounds[1][0], bounds[1][1]]],
    width: o.width as number,
    height: o.height as number,
    variance: variance.slice(),
    thumbs: thumbs.slice(),
    latents: latents.map((p) => [p[0], p[1]]),
  };
}

const B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

export function decodeBase64(text: string): Uint8ClampedArray {
  const clean = text.replace(/=+$/, "");
  const out = new Uint8ClampedArray(Math.floor((clean.length * 3) / 4));
  let acc = 0;
  let bits = 0;
  let w = 0;
  for (const ch of clean) {
    const v = B64.indexOf(ch);
    if (v < 0) throw new MalformedExportError(`bad base64 character ${ch}`);
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out[w++] = (acc >> bits) & 0xff;
    }
  }
  return out;
}

/** Pixel probabilities of one grid cell's stored thumbnail, in [0, 1]. */
export function thumbPixels(exp: ManifoldExport, k: number): Float64Array {
  const bytes = decodeBase64(exp.thumbs[k]);
  if (bytes.length !== exp.width * exp.height) {
    throw new MalformedExportError(
      `thumb ${k} has ${bytes.length} pixels, expected ${exp.width * exp.height}`,
    );
  }
  const out = new Float64Array(bytes.length);
  for (let i = 0; i < bytes.length; i++) out[i] = bytes[i] / 255;
  return out;
}

/** Gray level for a log-variance value: low variance light, high dark. */
export function varianceShade(v: number, min: number, max: number): number {
  const span = max - min;
  const r = span > 0 ? (v - min) / span : 0;
  return Math.round(255 * (1 - r));
}

// The heat map canvas covers the bounds exactly: grid cell ix spans
// [ix * cellPx, (ix + 1) * cellPx) horizontally, and the latent y axis
// points up, so grid row iy lands at canvas row (grid - 1 - iy).

export function latentToCanvas(
  exp: ManifoldExport,
  cellPx: number,
  x: number,
  y: number,
): [number, number] {
  const side = exp.grid * cellPx;
  const [xb, yb] = exp.bounds;
  return [
    ((x - xb[0]) / (xb[1] - xb[0])) * side,
    (1 - (y - yb[0]) / (yb[1] - yb[0])) * side,
  ];
}

export function canvasToLatent(
  exp: ManifoldExport,
  cellPx: number,
  px: number,
  py: number,
): [number, number] {
  const side = exp.grid * cellPx;
  const [xb, yb] = exp.bounds;
  return [
    xb[0] + (px / side) * (xb[1] - xb[0]),
    yb[0] + (1 - py / side) * (yb[1] - yb[0]),
  ];
}

export function clampToBounds(
  bounds: Bounds,
  x: number,
  y: number,
): [number, number] {
  return [
    Math.min(bounds[0][1], Math.max(bounds[0][0], x)),
    Math.min(bounds[1][1], Math.max(bounds[1][0], y)),
  ];
}

export interface RasterImage {
  width: number;
  height: number;
  data: Uint8ClampedArray<ArrayBuffer>; // RGBA
}

export function heatmapImage(exp: ManifoldExport, cellPx: number): RasterImage {
  const side = exp.grid * cellPx;
  const data = new Uint8ClampedArray(side * side * 4);
  let min = Infinity;
  let max = -Infinity;
  for (const v of exp.variance) {
    if (v < min) min = v;
    if (v > max) max = v;
  }
  for (let py = 0; py < side; py++) {
    const iy = exp.grid - 1 - Math.floor(py / cellPx);
    for (let px = 0; px < side; px++) {
      const ix = Math.floor(px / cellPx);
      const shade = varianceShade(exp.variance[iy * exp.grid + ix], min, max);
      const at = (py * side + px) * 4;
      data[at] = shade;
      data[at + 1] = shade;
      data[at + 2] = shade;
      data[at + 3] = 255;
    }
  }
  return { width: side, height: side, data };
}

/** Grayscale RGBA raster of visible probabilities (white = on). */
export function probsImage(
  probs: ArrayLike<number>,
  width: number,
  height: number,
): RasterImage {
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    const level = Math.round(255 * Math.min(1, Math.max(0, probs[i])));
    data[4 * i] = level;
    data[4 * i + 1] = level;
    data[4 * i + 2] = level;
    data[4 * i + 3] = 255;
  }
  return { width, height, data };
}
