// Service client behavior: caching, rate limiting, supersession and the
// cached-thumbnail fallbacks that keep the panels alive offline.

import { readFileSync } from "node:fs";
import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ExplorerApi, FetchLike } from "../src/api.js";
import { nodeCoords } from "../src/geodesic.js";
import { parseManifold, thumbPixels } from "../src/manifold.js";
import { ApiError, DecodeResult } from "../src/types.js";

const rawManifold = JSON.parse(
  readFileSync(new URL("./fixtures/manifold.json", import.meta.url), "utf8"),
) as Record<string, unknown>;
const manifold = parseManifold(rawManifold);

type FakeResponse = { ok: boolean; status: number; json(): Promise<unknown> };

function okJson(payload: unknown): FakeResponse {
  return { ok: true, status: 200, json: async () => payload };
}

function errJson(status: number, code: string): FakeResponse {
  return {
    ok: false,
    status,
    json: async () => ({ detail: { code, message: `${code} happened` } }),
  };
}

function decodePayload(seed: number): { probs: number[]; log_variance: number } {
  const probs = Array.from(
    { length: manifold.width * manifold.height },
    (_, i) => ((i + seed) % 10) / 10,
  );
  return { probs, log_variance: -seed };
}

interface Recorded {
  url: string;
  body: unknown;
  at: number;
}

function recordingFetch(
  respond: (url: string, body: unknown) => FakeResponse | Promise<FakeResponse>,
): { fetchFn: FetchLike; calls: Recorded[] } {
  const calls: Recorded[] = [];
  const fetchFn: FetchLike = (url, init) => {
    const body = init?.body ? JSON.parse(init.body) : null;
    calls.push({ url, body, at: Date.now() });
    return Promise.resolve(respond(url, body));
  };
  return { fetchFn, calls };
}

async function microtasks(rounds = 12): Promise<void> {
  for (let i = 0; i < rounds; i++) await Promise.resolve();
}

describe("getManifold", () => {
  it("fetches once and caches the parsed export", async () => {
    const { fetchFn, calls } = recordingFetch(() => okJson(rawManifold));
    const api = new ExplorerApi("http://svc", { fetchFn });
    const first = await api.getManifold();
    const second = await api.getManifold();
    expect(calls.length).toBe(1);
    expect(calls[0].url).toBe("http://svc/manifold");
    expect(second).toBe(first);
    expect(first.grid).toBe(manifold.grid);
  });

  it("surfaces service errors with their code", async () => {
    const { fetchFn } = recordingFetch(() => errJson(409, "no_manifold"));
    const api = new ExplorerApi("http://svc", { fetchFn });
    const err = await api.getManifold().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).code).toBe("no_manifold");
  });
});

describe("decodeNow", () => {
  it("posts the latent point and parses the response", async () => {
    const { fetchFn, calls } = recordingFetch(() => okJson(decodePayload(2)));
    const api = new ExplorerApi("http://svc", { fetchFn });
    const result = await api.decodeNow([0.25, -1.5], 7);
    expect(calls[0].url).toBe("http://svc/decode");
    expect(calls[0].body).toEqual({ x: [0.25, -1.5], j: 7 });
    expect(result.kind).toBe("live");
    expect(result.logVariance).toBe(-2);
    expect(Array.from(result.probs)).toEqual(decodePayload(2).probs);
  });

  it("defaults to 25 samples", async () => {
    const { fetchFn, calls } = recordingFetch(() => okJson(decodePayload(0)));
    const api = new ExplorerApi("http://svc", { fetchFn });
    await api.decodeNow([0, 0]);
    expect((calls[0].body as { j: number }).j).toBe(25);
  });
});

describe("requestDecode rate limiting", () => {
  beforeEach(() => {
    vi.useFakeTimers({ toFake: ["setTimeout", "clearTimeout", "Date"] });
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("issues at most one request per interval while the pointer streams", async () => {
    const { fetchFn, calls } = recordingFetch(() => okJson(decodePayload(1)));
    const api = new ExplorerApi("http://svc", { fetchFn, minIntervalMs: 100 });
    api.useManifold(manifold);
    const seen: DecodeResult[] = [];
    api.onDecode((r) => seen.push(r));

    // two hundred pointer positions over one second
    for (let i = 0; i < 200; i++) {
      api.requestDecode([i / 200, 0]);
      await vi.advanceTimersByTimeAsync(5);
    }
    await vi.advanceTimersByTimeAsync(300);

    expect(calls.length).toBeGreaterThan(2);
    expect(calls.length).toBeLessThanOrEqual(12);
    for (let i = 1; i < calls.length; i++) {
      expect(calls[i].at - calls[i - 1].at).toBeGreaterThanOrEqual(100);
    }
    // the trailing request carries the newest position
    const last = calls[calls.length - 1].body as { x: number[] };
    expect(last.x[0]).toBe(199 / 200);
    expect(seen.length).toBe(calls.length);
  });

  it("drops an older in-flight response once a newer one lands", async () => {
    const resolvers: ((r: FakeResponse) => void)[] = [];
    const fetchFn: FetchLike = () =>
      new Promise<FakeResponse>((resolve) => resolvers.push(resolve));
    const api = new ExplorerApi("http://svc", { fetchFn, minIntervalMs: 100 });
    api.useManifold(manifold);
    const seen: number[] = [];
    api.onDecode((r) => seen.push(r.logVariance));

    api.requestDecode([0, 0]);
    await vi.advanceTimersByTimeAsync(0);
    api.requestDecode([1, 1]);
    await vi.advanceTimersByTimeAsync(100);
    expect(resolvers.length).toBe(2);

    resolvers[1](okJson(decodePayload(2))); // newer request answers first
    await microtasks();
    expect(seen).toEqual([-2]);

    resolvers[0](okJson(decodePayload(1))); // stale response must be ignored
    await microtasks();
    expect(seen).toEqual([-2]);
  });

  it("falls back to the nearest cached thumbnail when offline", async () => {
    const fetchFn: FetchLike = () => Promise.reject(new Error("offline"));
    const api = new ExplorerApi("http://svc", { fetchFn, minIntervalMs: 100 });
    api.useManifold(manifold);
    const seen: DecodeResult[] = [];
    api.onDecode((r) => seen.push(r));

    const coords = nodeCoords(manifold.bounds, manifold.grid);
    const k = 13;
    api.requestDecode([coords[2 * k], coords[2 * k + 1]]);
    await vi.advanceTimersByTimeAsync(0);
    await microtasks();

    expect(seen.length).toBe(1);
    expect(seen[0].kind).toBe("cached");
    expect(seen[0].logVariance).toBe(manifold.variance[k]);
    expect(Array.from(seen[0].probs)).toEqual(
      Array.from(thumbPixels(manifold, k)),
    );
  });
});

describe("project", () => {
  const pixels = new Float64Array(manifold.width * manifold.height).fill(0.5);

  it("parses a live projection", async () => {
    const { fetchFn, calls } = recordingFetch(() =>
      okJson({ x: [0.3, -0.4], probs: decodePayload(3).probs, ssim_vs_input: 0.91 }),
    );
    const api = new ExplorerApi("http://svc", { fetchFn });
    const result = await api.project(pixels, 0.2);
    expect(calls[0].url).toBe("http://svc/project");
    expect((calls[0].body as { noise: number }).noise).toBe(0.2);
    expect(result.kind).toBe("live");
    expect(result.x).toEqual([0.3, -0.4]);
    expect(result.ssimVsInput).toBe(0.91);
  });

  it("omits the noise field when not requested", async () => {
    const { fetchFn, calls } = recordingFetch(() =>
      okJson({ x: [0, 0], probs: decodePayload(0).probs, ssim_vs_input: 1 }),
    );
    const api = new ExplorerApi("http://svc", { fetchFn });
    await api.project(pixels);
    expect("noise" in (calls[0].body as object)).toBe(false);
  });

  it("rethrows client errors instead of hiding them in the cache", async () => {
    const { fetchFn } = recordingFetch(() => errJson(400, "pixel_out_of_range"));
    const api = new ExplorerApi("http://svc", { fetchFn });
    api.useManifold(manifold);
    const err = await api.project(pixels).catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe("pixel_out_of_range");
  });

  it("degrades to the nearest thumbnail on server failure", async () => {
    const { fetchFn } = recordingFetch(() => errJson(500, "boom"));
    const api = new ExplorerApi("http://svc", { fetchFn });
    api.useManifold(manifold);
    const k = 21;
    const result = await api.project(thumbPixels(manifold, k));
    const coords = nodeCoords(manifold.bounds, manifold.grid);
    expect(result.kind).toBe("cached");
    expect(result.x).toEqual([coords[2 * k], coords[2 * k + 1]]);
    expect(result.ssimVsInput).toBeNull();
    expect(Array.from(result.probs)).toEqual(Array.from(thumbPixels(manifold, k)));
  });

  it("degrades the same way when the network is down", async () => {
    const fetchFn: FetchLike = () => Promise.reject(new Error("offline"));
    const api = new ExplorerApi("http://svc", { fetchFn });
    api.useManifold(manifold);
    const result = await api.project(thumbPixels(manifold, 2));
    expect(result.kind).toBe("cached");
  });
});

describe("interpolate", () => {
  it("decodes every frame along the client-side geodesic", async () => {
    const { fetchFn, calls } = recordingFetch(() => okJson(decodePayload(4)));
    const api = new ExplorerApi("http://svc", { fetchFn });
    api.useManifold(manifold);
    const a = manifold.latents[0];
    const b = manifold.latents[1];
    const frames = await api.interpolate(a, b, 8);
    expect(frames.length).toBe(8);
    expect(frames.every((f) => f.kind === "live")).toBe(true);
    expect(calls.length).toBe(8);
    const first = calls[0].body as { x: number[] };
    const last = calls[7].body as { x: number[] };
    expect(first.x).toEqual([a[0], a[1]]);
    expect(last.x[0]).toBeCloseTo(b[0], 12);
    expect(last.x[1]).toBeCloseTo(b[1], 12);
  });

  it("serves frames from the thumbnail cache when decoding fails", async () => {
    const fetchFn: FetchLike = () => Promise.reject(new Error("offline"));
    const api = new ExplorerApi("http://svc", { fetchFn });
    api.useManifold(manifold);
    const frames = await api.interpolate(manifold.latents[0], manifold.latents[1], 5);
    expect(frames.length).toBe(5);
    expect(frames.every((f) => f.kind === "cached")).toBe(true);
  });

  it("requires a loaded manifold", async () => {
    const { fetchFn } = recordingFetch(() => okJson(decodePayload(0)));
    const api = new ExplorerApi("http://svc", { fetchFn });
    await expect(api.interpolate([0, 0], [1, 1], 8)).rejects.toThrow(
      /manifold not loaded/,
    );
  });
});
