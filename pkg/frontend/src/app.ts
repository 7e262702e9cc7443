// DOM wiring. All interaction logic lives on the handle returned by
// createExplorer so tests can drive it without synthetic pointer events;
// the event listeners just forward to those methods.

import { ExplorerApi } from "./api.js";
import {
  canvasToLatent,
  clampToBounds,
  heatmapImage,
  latentToCanvas,
  probsImage,
  RasterImage,
} from "./manifold.js";
import {
  DecodeResult,
  ManifoldExport,
  ViewState,
  ZOOM_LEVELS,
  ZoomLevel,
} from "./types.js";

const CELL_PX = 8;
const STRIP_FRAMES = 8;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function context(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  return ctx;
}

function paint(canvas: HTMLCanvasElement, image: RasterImage): void {
  canvas.width = image.width;
  canvas.height = image.height;
  context(canvas).putImageData(
    new ImageData(image.data, image.width, image.height),
    0,
    0,
  );
}

export interface ExplorerHandle {
  state: ViewState;
  heatmap: HTMLCanvasElement;
  decodePanel: HTMLCanvasElement;
  badge: HTMLElement;
  banner: HTMLElement;
  strip: HTMLElement;
  sketch: HTMLCanvasElement;
  sketchPixels: Float64Array;
  pointerAt(px: number, py: number): void;
  clickAt(px: number, py: number): void;
  setZoom(zoom: ZoomLevel): void;
  paintSketch(col: number, row: number): void;
  corruptSketch(fraction?: number): void;
  clearSketch(): void;
  projectSketch(): Promise<void>;
}

function drawHeatmap(handle: ExplorerHandle, exp: ManifoldExport): void {
  paint(handle.heatmap, heatmapImage(exp, CELL_PX));
  const ctx = context(handle.heatmap);
  ctx.fillStyle = "#d33";
  for (const [x, y] of exp.latents) {
    const [px, py] = latentToCanvas(exp, CELL_PX, x, y);
    ctx.fillRect(Math.round(px) - 1, Math.round(py) - 1, 3, 3);
  }
}

function showDecode(handle: ExplorerHandle, exp: ManifoldExport, result: DecodeResult): void {
  handle.state.lastDecode = result;
  paint(handle.decodePanel, probsImage(result.probs, exp.width, exp.height));
  const suffix = result.kind === "cached" ? " (cached thumbnail)" : "";
  handle.badge.textContent = `log variance ${result.logVariance.toFixed(3)}${suffix}`;
}

async function showStrip(
  handle: ExplorerHandle,
  api: ExplorerApi,
  exp: ManifoldExport,
): Promise<void> {
  const [a, b] = handle.state.endpoints;
  const results = await api.interpolate(a, b, STRIP_FRAMES);
  handle.strip.replaceChildren();
  for (const frame of results) {
    const canvas = el("canvas", "frame");
    paint(canvas, probsImage(frame.probs, exp.width, exp.height));
    handle.strip.append(canvas);
  }
}

export async function createExplorer(
  root: HTMLElement,
  api: ExplorerApi,
): Promise<ExplorerHandle> {
  const banner = el("div", "banner");
  banner.hidden = true;
  const heatmap = el("canvas", "heatmap");
  const decodePanel = el("canvas", "decode");
  const badge = el("div", "badge", "hover the map");
  const strip = el("div", "strip");
  const sketch = el("canvas", "sketch");
  const zoomBar = el("div", "zoom");
  const tools = el("div", "tools");
  root.append(banner, heatmap, decodePanel, badge, zoomBar, strip, sketch, tools);

  const state: ViewState = {
    manifold: null,
    cursor: null,
    endpoints: [],
    zoom: 1,
    lastDecode: null,
  };

  let exp: ManifoldExport;
  try {
    exp = await api.getManifold();
  } catch (err) {
    banner.hidden = false;
    banner.textContent = `failed to load manifold: ${(err as Error).message}`;
    throw err;
  }
  state.manifold = exp;

  const sketchPixels = new Float64Array(exp.width * exp.height);

  const handle: ExplorerHandle = {
    state,
    heatmap,
    decodePanel,
    badge,
    banner,
    strip,
    sketch,
    sketchPixels,

    pointerAt(px: number, py: number): void {
      const raw = canvasToLatent(exp, CELL_PX, px, py);
      state.cursor = clampToBounds(exp.bounds, raw[0], raw[1]);
      api.requestDecode(state.cursor);
    },

    clickAt(px: number, py: number): void {
      const raw = canvasToLatent(exp, CELL_PX, px, py);
      const point = clampToBounds(exp.bounds, raw[0], raw[1]);
      if (state.endpoints.length >= 2) state.endpoints = [];
      state.endpoints.push(point);
      if (state.endpoints.length === 2) {
        void showStrip(handle, api, exp).catch((err) => {
          banner.hidden = false;
          banner.textContent = `interpolation failed: ${(err as Error).message}`;
        });
      }
    },

    setZoom(zoom: ZoomLevel): void {
      if (!ZOOM_LEVELS.includes(zoom)) return;
      state.zoom = zoom;
      decodePanel.style.width = `${exp.width * zoom}px`;
      decodePanel.style.height = `${exp.height * zoom}px`;
    },

    paintSketch(col: number, row: number): void {
      if (col < 0 || col >= exp.width || row < 0 || row >= exp.height) return;
      sketchPixels[row * exp.width + col] = 1;
      paint(sketch, probsImage(sketchPixels, exp.width, exp.height));
    },

    corruptSketch(fraction = 0.2): void {
      const total = sketchPixels.length;
      const count = Math.round(fraction * total);
      const order = Array.from({ length: total }, (_, i) => i);
      for (let i = total - 1; i > 0; i--) {
        const j = Math.floor(Math.random() * (i + 1));
        [order[i], order[j]] = [order[j], order[i]];
      }
      for (let i = 0; i < count; i++) {
        sketchPixels[order[i]] = Math.random() < 0.5 ? 0 : 1;
      }
      paint(sketch, probsImage(sketchPixels, exp.width, exp.height));
    },

    clearSketch(): void {
      sketchPixels.fill(0);
      paint(sketch, probsImage(sketchPixels, exp.width, exp.height));
    },

    async projectSketch(): Promise<void> {
      const result = await api.project(sketchPixels);
      showDecode(handle, exp, {
        kind: result.kind,
        probs: result.probs,
        logVariance: NaN,
      });
      const ssim = result.ssimVsInput === null ? "offline" : result.ssimVsInput.toFixed(3);
      badge.textContent =
        `projected to (${result.x[0].toFixed(3)}, ${result.x[1].toFixed(3)}), ` +
        `ssim ${ssim}${result.kind === "cached" ? " (cached thumbnail)" : ""}`;
    },
  };

  drawHeatmap(handle, exp);
  api.onDecode((result) => showDecode(handle, exp, result));

  for (const level of ZOOM_LEVELS) {
    const button = el("button", "zoom-level", `${level}x`);
    button.addEventListener("click", () => handle.setZoom(level));
    zoomBar.append(button);
  }
  const clearButton = el("button", "tool", "clear");
  clearButton.addEventListener("click", () => handle.clearSketch());
  const corruptButton = el("button", "tool", "corrupt 20%");
  corruptButton.addEventListener("click", () => handle.corruptSketch());
  const projectButton = el("button", "tool", "project");
  projectButton.addEventListener("click", () => void handle.projectSketch());
  tools.append(clearButton, corruptButton, projectButton);

  heatmap.addEventListener("pointermove", (ev) => {
    const rect = heatmap.getBoundingClientRect();
    handle.pointerAt(ev.clientX - rect.left, ev.clientY - rect.top);
  });
  heatmap.addEventListener("click", (ev) => {
    const rect = heatmap.getBoundingClientRect();
    handle.clickAt(ev.clientX - rect.left, ev.clientY - rect.top);
  });
  sketch.addEventListener("pointermove", (ev) => {
    if (ev.buttons !== 1) return;
    const rect = sketch.getBoundingClientRect();
    const scaleX = rect.width / exp.width;
    const scaleY = rect.height / exp.height;
    handle.paintSketch(
      Math.floor((ev.clientX - rect.left) / scaleX),
      Math.floor((ev.clientY - rect.top) / scaleY),
    );
  });

  handle.clearSketch();
  return handle;
}
