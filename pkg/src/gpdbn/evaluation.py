"""Experiment drivers: projection under pixel corruption, variance-guided
latent interpolation, training-set scaling, and the packaged manifold
export consumed by the HTTP service and the explorer UI.

Grid convention shared with every consumer of the export: a grid of
resolution G covers the padded latent bounds with node k at
(xs[k % G], ys[k // G]) where xs and ys are G evenly spaced values per
dimension, endpoints included.  The variance list stores log predictive
variance (observation noise included), row-major in k.
"""

from __future__ import annotations

import base64
import heapq
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as gm
from . import trainer as tr
from .data import ImageDataset, salt_pepper, ssim

PAD_FRACTION = 0.2


# ---------------------------------------------------------------------------
# Projection experiment

@dataclass
class ProjectionReport:
    indices: list[int]
    ssim_recon: list[float]
    ssim_noisy: list[float]

    @property
    def mean_recon(self) -> float:
        return float(np.mean(self.ssim_recon))

    @property
    def mean_noisy(self) -> float:
        return float(np.mean(self.ssim_noisy))

    def to_csv(self) -> str:
        lines = ["index,ssim_recon,ssim_noisy"]
        for i, r, s in zip(self.indices, self.ssim_recon, self.ssim_noisy):
            lines.append(f"{i},{r:.6g},{s:.6g}")
        lines.append(f"mean,{self.mean_recon:.6g},{self.mean_noisy:.6g}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_csv())


def projection_experiment(
    model: gm.GPDBNModel,
    dataset: ImageDataset,
    rng: np.random.Generator,
    noise_fraction: float = 0.2,
    noise_mode: str = "resample",
    indices=None,
    **project_kwargs,
) -> ProjectionReport:
    """Corrupt, project back, and score reconstructions against the clean
    originals, next to the corrupted images' own score as the baseline."""
    if indices is None:
        indices = range(len(dataset))
    indices = [int(i) for i in indices]
    recon_scores, noisy_scores = [], []
    for i in indices:
        clean = dataset.images[i]
        noisy = salt_pepper(clean, noise_fraction, rng, mode=noise_mode)
        result = gm.project(model, noisy, rng, **project_kwargs)
        recon_scores.append(ssim(result.probs, clean, dataset.width, dataset.height))
        noisy_scores.append(ssim(noisy, clean, dataset.width, dataset.height))
    return ProjectionReport(indices, recon_scores, noisy_scores)


# ---------------------------------------------------------------------------
# Variance-guided geodesics

def padded_bounds(latents: np.ndarray, pad: float = PAD_FRACTION) -> np.ndarray:
    """Per-dimension [lo, hi] of the training latents, widened by pad."""
    lo = latents.min(axis=0)
    hi = latents.max(axis=0)
    margin = pad * (hi - lo)
    return np.stack([lo - margin, hi + margin], axis=1)


def grid_nodes(bounds: np.ndarray, grid_res: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(bounds[0, 0], bounds[0, 1], grid_res)
    ys = np.linspace(bounds[1, 0], bounds[1, 1], grid_res)
    return xs, ys


def node_coords(bounds: np.ndarray, grid_res: int) -> np.ndarray:
    """(G*G, 2) coordinates for node k = iy * G + ix."""
    xs, ys = grid_nodes(bounds, grid_res)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def grid_geodesic(
    log_variance: np.ndarray,
    bounds: np.ndarray,
    grid_res: int,
    start: int,
    goal: int,
) -> list[int]:
    """Dijkstra over the 8-connected grid.

    Edge weight is the Euclidean step length times (1 + exp(mean of the
    two endpoints' log variance rescaled to [0, 1] over the grid)), so
    high-variance cells repel the path.  The search always runs from the
    smaller node index and ties pick the smaller predecessor, which makes
    paths unique and exactly reversible.
    """
    flipped = start > goal
    if flipped:
        start, goal = goal, start
    g = grid_res
    coords = node_coords(bounds, g)
    lv = np.asarray(log_variance, dtype=np.float64).ravel()
    if lv.shape[0] != g * g:
        raise ValueError(f"need {g * g} variance values, got {lv.shape[0]}")
    span = lv.max() - lv.min()
    r = (lv - lv.min()) / span if span > 0 else np.zeros_like(lv)

    dist = np.full(g * g, np.inf)
    pred = np.full(g * g, -1, dtype=np.int64)
    dist[start] = 0.0
    heap = [(0.0, start)]
    done = np.zeros(g * g, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == goal:
            break
        ux, uy = u % g, u // g
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                vx, vy = ux + dx, uy + dy
                if not (0 <= vx < g and 0 <= vy < g):
                    continue
                v = vy * g + vx
                if done[v]:
                    continue
                # sqrt of the explicit sum is correctly rounded, so ports of
                # this routine in other languages get bit-identical weights.
                dvec = coords[v] - coords[u]
                step = float(np.sqrt(dvec[0] * dvec[0] + dvec[1] * dvec[1]))
                alt = d + step * (1.0 + np.exp(0.5 * (r[u] + r[v])))
                if alt < dist[v] or (alt == dist[v] and u < pred[v]):
                    dist[v] = alt
                    pred[v] = u
                    heapq.heappush(heap, (alt, v))
    if not done[goal]:
        raise RuntimeError("goal unreachable")
    path = [goal]
    while path[-1] != start:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return path[::-1] if flipped else path


def _resample_polyline(points: np.ndarray, count: int) -> np.ndarray:
    """Evenly spaced (by arc length) samples along a polyline."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0.0:
        return np.repeat(points[:1], count, axis=0)
    targets = np.linspace(0.0, cum[-1], count)
    out = np.empty((count, points.shape[1]))
    for i, t in enumerate(targets):
        k = min(int(np.searchsorted(cum, t, side="right")) - 1, len(seg) - 1)
        frac = (t - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        out[i] = points[k] + frac * (points[k + 1] - points[k])
    return out


def geodesic_path(
    model: gm.GPDBNModel,
    x_a: np.ndarray,
    x_b: np.ndarray,
    grid_res: int = 64,
    frames: int | None = None,
    predictor: gm.Predictor | None = None,
) -> np.ndarray:
    """Latent points along the variance-guided geodesic from x_a to x_b.

    Both endpoints must lie inside the padded training bounds.  With
    frames set, the endpoint-to-endpoint polyline is resampled to that
    many points; otherwise the raw grid path (plus exact endpoints) comes
    back.
    """
    if model.q != 2:
        raise ValueError("geodesics need a two-dimensional latent space")
    predictor = predictor or gm.Predictor(model)
    x_a = np.asarray(x_a, dtype=np.float64).reshape(2)
    x_b = np.asarray(x_b, dtype=np.float64).reshape(2)
    bounds = padded_bounds(model.latents.value)
    for x in (x_a, x_b):
        if np.any(x < bounds[:, 0]) or np.any(x > bounds[:, 1]):
            raise ValueError(f"endpoint {x} outside padded training bounds")
    coords = node_coords(bounds, grid_res)
    lv = predictor.log_variance(coords)
    start = int(np.argmin(np.linalg.norm(coords - x_a, axis=1)))
    goal = int(np.argmin(np.linalg.norm(coords - x_b, axis=1)))
    nodes = grid_geodesic(lv, bounds, grid_res, start, goal)
    polyline = np.vstack([x_a[None, :], coords[nodes], x_b[None, :]])
    if frames is None:
        return polyline
    return _resample_polyline(polyline, frames)


def interpolation_test(
    model: gm.GPDBNModel,
    dataset: ImageDataset,
    rng: np.random.Generator,
    frames: int = 8,
    repeats: int = 10,
    grid_res: int = 64,
    j: int = 25,
) -> tuple[float, float, list[float]]:
    """Decode along the geodesic between the latents of the first and last
    training items; score every frame against its best-matching family
    member.  Returns mean, standard deviation and the per-repeat scores."""
    predictor = gm.Predictor(model)
    path = geodesic_path(
        model,
        model.latents.value[0],
        model.latents.value[-1],
        grid_res=grid_res,
        frames=frames,
        predictor=predictor,
    )
    per_repeat = []
    for _ in range(repeats):
        decoded = predictor.mean_probs(path, j, rng)
        scores = [
            max(ssim(img, ref, dataset.width, dataset.height) for ref in dataset.images)
            for img in decoded
        ]
        per_repeat.append(float(np.mean(scores)))
    mean = float(np.mean(per_repeat))
    sd = float(np.std(per_repeat)) if repeats > 1 else 0.0
    return mean, sd, per_repeat


# ---------------------------------------------------------------------------
# Scaling

def scaling_experiment(
    dataset: ImageDataset,
    sizes: list[int],
    rng: np.random.Generator,
    q: int = 10,
    arch: tuple[int, ...] = (50, 100, 200),
    iters: int = 2000,
    learning_rate: float = 3e-3,
    batch_threshold: int = 256,
    batch_size: int = 100,
    noise_fraction: float = 0.2,
    test_count: int = 30,
    **project_kwargs,
) -> list[dict]:
    """Train on growing prefixes of a dataset and measure projection
    quality on the following held-out images.  Sets above the threshold
    train with mini-batches."""
    results = []
    for size in sizes:
        if size + test_count > len(dataset):
            raise ValueError(f"size {size} plus {test_count} test images exceeds dataset")
        train_ds = ImageDataset(dataset.images[:size], dataset.width, dataset.height)
        test_ds = ImageDataset(
            dataset.images[size : size + test_count], dataset.width, dataset.height
        )
        seed = int(rng.integers(2**31))
        model = tr.init_model(train_ds, q=q, arch=arch, seed=seed)
        cfg = tr.TrainConfig(
            iters=iters,
            learning_rate=learning_rate,
            batch_size=batch_size if size > batch_threshold else None,
            seed=seed,
            log_every=max(1, iters // 10),
        )
        t0 = time.perf_counter()
        tr.train(model, train_ds.images, cfg)
        train_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        report = projection_experiment(
            model, test_ds, rng, noise_fraction=noise_fraction, **project_kwargs
        )
        results.append(
            {
                "size": size,
                "ssim_recon": report.mean_recon,
                "ssim_noisy": report.mean_noisy,
                "train_seconds": train_s,
                "project_seconds": time.perf_counter() - t0,
            }
        )
    return results


# ---------------------------------------------------------------------------
# Manifold export

@dataclass
class ManifoldExport:
    grid: int
    bounds: list[list[float]]
    width: int
    height: int
    variance: list[float]
    thumbs: list[str]
    latents: list[list[float]]
    extra: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "grid": self.grid,
                "bounds": self.bounds,
                "width": self.width,
                "height": self.height,
                "variance": self.variance,
                "thumbs": self.thumbs,
                "latents": self.latents,
            }
        )

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    def thumb_pixels(self, k: int) -> np.ndarray:
        return np.frombuffer(base64.b64decode(self.thumbs[k]), dtype=np.uint8).astype(
            np.float64
        ) / 255.0


def load_manifold(path) -> ManifoldExport:
    with open(path) as f:
        raw = json.load(f)
    return ManifoldExport(
        grid=int(raw["grid"]),
        bounds=[[float(v) for v in pair] for pair in raw["bounds"]],
        width=int(raw["width"]),
        height=int(raw["height"]),
        variance=[float(v) for v in raw["variance"]],
        thumbs=list(raw["thumbs"]),
        latents=[[float(v) for v in row] for row in raw["latents"]],
    )


def export_manifold(
    model: gm.GPDBNModel,
    rng: np.random.Generator,
    grid_res: int = 40,
    j: int = 9,
) -> ManifoldExport:
    """Sweep the padded latent bounds: log predictive variance plus a mean
    decode per node, quantized to 8-bit thumbnails.  Deterministic for a
    fixed model and generator seed."""
    if model.q != 2:
        raise ValueError("manifold export needs a two-dimensional latent space")
    predictor = gm.Predictor(model)
    bounds = padded_bounds(model.latents.value)
    coords = node_coords(bounds, grid_res)
    lv = predictor.log_variance(coords)
    probs = predictor.mean_probs(coords, j, rng)
    levels = np.clip(np.rint(probs * 255.0), 0, 255).astype(np.uint8)
    thumbs = [base64.b64encode(levels[k].tobytes()).decode("ascii") for k in range(len(coords))]
    return ManifoldExport(
        grid=grid_res,
        bounds=[[float(lo), float(hi)] for lo, hi in zip(bounds[:, 0], bounds[:, 1])],
        width=model.width,
        height=model.height,
        variance=[float(v) for v in lv],
        thumbs=thumbs,
        latents=[[float(v) for v in row] for row in model.latents.value],
    )
