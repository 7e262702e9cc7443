// Export parsing, thumbnail decoding and the latent/canvas transforms.

import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import {
  canvasToLatent,
  clampToBounds,
  decodeBase64,
  heatmapImage,
  latentToCanvas,
  parseManifold,
  probsImage,
  thumbPixels,
  varianceShade,
} from "../src/manifold.js";
import { MalformedExportError } from "../src/types.js";

const rawText = readFileSync(
  new URL("./fixtures/manifold.json", import.meta.url),
  "utf8",
);
const raw = JSON.parse(rawText) as Record<string, unknown>;
const manifold = parseManifold(raw);

function mutated(patch: Record<string, unknown>): Record<string, unknown> {
  return { ...(JSON.parse(rawText) as Record<string, unknown>), ...patch };
}

describe("parseManifold", () => {
  it("accepts a real export", () => {
    expect(manifold.grid).toBe(8);
    expect(manifold.width).toBe(5);
    expect(manifold.height).toBe(5);
    expect(manifold.variance.length).toBe(64);
    expect(manifold.thumbs.length).toBe(64);
    expect(manifold.latents.length).toBe(6);
    expect(manifold.bounds[0][0]).toBeLessThan(manifold.bounds[0][1]);
  });

  it("copies instead of aliasing the raw payload", () => {
    const again = parseManifold(raw);
    again.variance[0] = 1e9;
    again.latents[0][0] = 1e9;
    expect(manifold.variance[0]).not.toBe(1e9);
    expect(manifold.latents[0][0]).not.toBe(1e9);
  });

  const badCases: [string, Record<string, unknown> | unknown, RegExp][] = [
    ["not an object", null, /not an object/],
    ["fractional grid", mutated({ grid: 7.5 }), /bad grid/],
    ["grid below two", mutated({ grid: 1 }), /bad grid/],
    ["string width", mutated({ width: "5" }), /bad width/],
    ["zero height", mutated({ height: 0 }), /bad height/],
    ["inverted bounds", mutated({ bounds: [[1, 0], [0, 1]] }), /bad bounds/],
    ["non-finite bounds", mutated({ bounds: [[0, Infinity], [0, 1]] }), /bad bounds/],
    ["missing bounds", mutated({ bounds: null }), /bad bounds/],
    ["short variance", mutated({ variance: [0.5] }), /bad variance/],
    [
      "non-finite variance",
      mutated({ variance: new Array(64).fill(NaN) }),
      /bad variance/,
    ],
    [
      "numeric thumbs",
      mutated({ thumbs: new Array(64).fill(7) }),
      /bad thumbs/,
    ],
    ["triple latents", mutated({ latents: [[0, 0, 0]] }), /bad latents/],
  ];

  for (const [name, payload, pattern] of badCases) {
    it(`rejects ${name}`, () => {
      expect(() => parseManifold(payload)).toThrow(MalformedExportError);
      expect(() => parseManifold(payload)).toThrow(pattern);
    });
  }
});

describe("decodeBase64", () => {
  it("matches the platform decoder on every thumbnail", () => {
    for (const thumb of manifold.thumbs) {
      const expected = Buffer.from(thumb, "base64");
      const got = decodeBase64(thumb);
      expect(got.length).toBe(expected.length);
      for (let i = 0; i < got.length; i++) expect(got[i]).toBe(expected[i]);
    }
  });

  it("handles padded and unpadded encodings of short buffers", () => {
    for (const bytes of [[0], [255, 0], [1, 2, 3], [250, 251, 252, 253]]) {
      const text = Buffer.from(bytes).toString("base64");
      expect(Array.from(decodeBase64(text))).toEqual(bytes);
    }
  });

  it("rejects characters outside the alphabet", () => {
    expect(() => decodeBase64("ab$c")).toThrow(/bad base64 character/);
  });
});

describe("thumbPixels", () => {
  it("returns probabilities in [0, 1] scaled from the stored bytes", () => {
    const bytes = Buffer.from(manifold.thumbs[3], "base64");
    const probs = thumbPixels(manifold, 3);
    expect(probs.length).toBe(manifold.width * manifold.height);
    for (let i = 0; i < probs.length; i++) {
      expect(probs[i]).toBe(bytes[i] / 255);
      expect(probs[i]).toBeGreaterThanOrEqual(0);
      expect(probs[i]).toBeLessThanOrEqual(1);
    }
  });

  it("rejects thumbnails whose pixel count disagrees with the header", () => {
    const small = { ...manifold, thumbs: manifold.thumbs.map(() => "AAAA") };
    expect(() => thumbPixels(small, 0)).toThrow(/expected 25/);
  });
});

describe("varianceShade", () => {
  it("maps the minimum to white and the maximum to black", () => {
    expect(varianceShade(-3, -3, 2)).toBe(255);
    expect(varianceShade(2, -3, 2)).toBe(0);
  });

  it("darkens monotonically as variance grows", () => {
    let previous = 256;
    for (const v of [-1, -0.5, 0, 0.25, 1]) {
      const shade = varianceShade(v, -1, 1);
      expect(shade).toBeLessThan(previous);
      previous = shade;
    }
  });

  it("treats a flat field as all white", () => {
    expect(varianceShade(4, 4, 4)).toBe(255);
  });
});

describe("heatmapImage", () => {
  it("renders one cell per grid node with the y axis pointing up", () => {
    const cell = 4;
    const img = heatmapImage(manifold, cell);
    expect(img.width).toBe(manifold.grid * cell);
    expect(img.height).toBe(manifold.grid * cell);

    let min = Infinity;
    let max = -Infinity;
    for (const v of manifold.variance) {
      min = Math.min(min, v);
      max = Math.max(max, v);
    }
    const at = (ix: number, iy: number) => {
      const py = (manifold.grid - 1 - iy) * cell;
      const px = ix * cell;
      return img.data[(py * img.width + px) * 4];
    };
    for (let iy = 0; iy < manifold.grid; iy++) {
      for (let ix = 0; ix < manifold.grid; ix++) {
        const expected = varianceShade(
          manifold.variance[iy * manifold.grid + ix],
          min,
          max,
        );
        expect(at(ix, iy)).toBe(expected);
      }
    }
  });

  it("draws low-variance cells lighter than high-variance cells", () => {
    const img = heatmapImage(manifold, 2);
    const variance = manifold.variance;
    const kMin = variance.indexOf(Math.min(...variance));
    const kMax = variance.indexOf(Math.max(...variance));
    const sample = (k: number) => {
      const ix = k % manifold.grid;
      const iy = Math.floor(k / manifold.grid);
      const py = (manifold.grid - 1 - iy) * 2;
      return img.data[(py * img.width + ix * 2) * 4];
    };
    expect(sample(kMin)).toBe(255);
    expect(sample(kMax)).toBe(0);
    expect(sample(kMin)).toBeGreaterThan(sample(kMax));
  });

  it("fills alpha completely", () => {
    const img = heatmapImage(manifold, 1);
    for (let i = 3; i < img.data.length; i += 4) expect(img.data[i]).toBe(255);
  });
});

describe("coordinate transforms", () => {
  const cell = 8;

  it("round-trips canvas positions through latent space", () => {
    for (const [px, py] of [[0, 0], [13, 47], [63.5, 1.25], [64, 64]]) {
      const [x, y] = canvasToLatent(manifold, cell, px, py);
      const [qx, qy] = latentToCanvas(manifold, cell, x, y);
      expect(qx).toBeCloseTo(px, 9);
      expect(qy).toBeCloseTo(py, 9);
    }
  });

  it("sends the lower-left bounds corner to the canvas bottom left", () => {
    const side = manifold.grid * cell;
    const [px, py] = latentToCanvas(
      manifold,
      cell,
      manifold.bounds[0][0],
      manifold.bounds[1][0],
    );
    expect(px).toBeCloseTo(0, 12);
    expect(py).toBeCloseTo(side, 12);
  });

  it("sends the upper-right bounds corner to the canvas top right", () => {
    const side = manifold.grid * cell;
    const [px, py] = latentToCanvas(
      manifold,
      cell,
      manifold.bounds[0][1],
      manifold.bounds[1][1],
    );
    expect(px).toBeCloseTo(side, 12);
    expect(py).toBeCloseTo(0, 12);
  });

  it("clamps out-of-range latent points to the bounds", () => {
    const clamped = clampToBounds(manifold.bounds, -100, 100);
    expect(clamped[0]).toBe(manifold.bounds[0][0]);
    expect(clamped[1]).toBe(manifold.bounds[1][1]);
    const inside = clampToBounds(manifold.bounds, 0.1, -0.2);
    expect(inside).toEqual([0.1, -0.2]);
  });
});

describe("probsImage", () => {
  it("renders grayscale with clamping", () => {
    const img = probsImage([0, 0.5, 1, 2, -1, 0.25], 3, 2);
    expect(img.width).toBe(3);
    expect(img.height).toBe(2);
    expect(img.data[0]).toBe(0);
    expect(img.data[4]).toBe(128);
    expect(img.data[8]).toBe(255);
    expect(img.data[12]).toBe(255);
    expect(img.data[16]).toBe(0);
    expect(img.data[20]).toBe(Math.round(255 * 0.25));
    for (let i = 0; i < img.data.length; i += 4) {
      expect(img.data[i + 1]).toBe(img.data[i]);
      expect(img.data[i + 2]).toBe(img.data[i]);
      expect(img.data[i + 3]).toBe(255);
    }
  });
});
