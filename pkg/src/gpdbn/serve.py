"""Read-only HTTP access to a trained model.

Endpoints are synchronous on purpose: the framework runs them on a
thread pool, and every handler works off a frozen Predictor plus a
per-request random generator, so concurrent readers never share mutable
state.  Only the request counter takes a lock.
"""

from __future__ import annotations

import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import evaluation as ev
from . import model as gm
from .data import salt_pepper, ssim

DECODE_J_MAX = 500


class DecodeRequest(BaseModel):
    x: list[float]
    j: int = 25


class ProjectRequest(BaseModel):
    pixels: list[float]
    noise: float | None = None


def _fail(status: int, code: str, message: str):
    raise HTTPException(status_code=status, detail={"code": code, "message": message})


def create_app(
    model: gm.GPDBNModel,
    *,
    seed: int = 0,
    manifold_grid: int = 40,
    manifold_j: int = 9,
    project_restarts: int = 3,
    project_steps: int = 100,
    project_v_samples: int = 5,
) -> FastAPI:
    predictor = gm.Predictor(model)
    manifold = (
        ev.export_manifold(model, np.random.default_rng(seed), manifold_grid, manifold_j)
        if model.q == 2
        else None
    )

    app = FastAPI(title="gpdbn")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.model = model
    app.state.manifold = manifold

    counter_lock = threading.Lock()
    counter = [0]

    def request_rng() -> np.random.Generator:
        with counter_lock:
            ticket = counter[0]
            counter[0] += 1
        return np.random.default_rng([seed, ticket])

    @app.get("/manifold")
    def get_manifold():
        if manifold is None:
            _fail(409, "no_manifold", "manifold export needs a two-dimensional latent space")
        return {
            "grid": manifold.grid,
            "bounds": manifold.bounds,
            "width": manifold.width,
            "height": manifold.height,
            "variance": manifold.variance,
            "thumbs": manifold.thumbs,
            "latents": manifold.latents,
        }

    @app.post("/decode")
    def decode(req: DecodeRequest):
        if len(req.x) != predictor.q:
            _fail(400, "bad_latent_dim",
                  f"x has {len(req.x)} coordinates, model expects {predictor.q}")
        if not all(np.isfinite(v) for v in req.x):
            _fail(422, "non_finite_input", "latent coordinates must be finite")
        if not 1 <= req.j <= DECODE_J_MAX:
            _fail(400, "bad_sample_count", f"j must be in [1, {DECODE_J_MAX}]")
        x = np.asarray(req.x, dtype=np.float64)
        probs = predictor.mean_probs(x, req.j, request_rng())[0]
        log_var = float(predictor.log_variance(x)[0])
        return {"probs": probs.tolist(), "log_variance": log_var}

    @app.post("/project")
    def project(req: ProjectRequest):
        if len(req.pixels) != predictor.p:
            _fail(400, "bad_pixel_count",
                  f"got {len(req.pixels)} pixels, model expects {predictor.p}")
        if not all(np.isfinite(v) for v in req.pixels):
            _fail(422, "non_finite_input", "pixels must be finite")
        pixels = np.asarray(req.pixels, dtype=np.float64)
        if np.any((pixels < 0.0) | (pixels > 1.0)):
            _fail(400, "pixel_out_of_range", "pixels must lie in [0, 1]")
        if req.noise is not None and not 0.0 <= req.noise < 1.0:
            _fail(400, "bad_noise_fraction", "noise must lie in [0, 1)")
        rng = request_rng()
        target = pixels if req.noise in (None, 0.0) else salt_pepper(pixels, req.noise, rng)
        result = gm.project(
            model, target, rng,
            restarts=project_restarts,
            steps=project_steps,
            v_samples=project_v_samples,
        )
        score = ssim(result.probs, pixels, predictor.width, predictor.height)
        return {
            "x": result.x.tolist(),
            "probs": result.probs.tolist(),
            "ssim_vs_input": score,
        }

    return app


def serve_checkpoint(path, host: str = "127.0.0.1", port: int = 8000, seed: int = 0, **kwargs):
    """Load a checkpoint and block serving it."""
    import uvicorn

    app = create_app(gm.load_checkpoint(path), seed=seed, **kwargs)
    uvicorn.run(app, host=host, port=port)
