"""Training loop: joint Adam minimization of the single objective over
latents, free activations, kernel hyperparameters, top scale and decoder
weights, with principal-component initialization of the latent space.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import model as gm
from . import numerics as nm
from .data import ImageDataset
from .decoder import DecoderConfig, GaussianTop, init_layers
from .gp import KernelParams
from .optim import Adam


class TrainingDiverged(RuntimeError):
    """The objective went non-finite; parameters were rolled back."""


@dataclass
class TrainConfig:
    iters: int = 1000
    batch_size: int | None = None
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 10
    checkpoint_path: str | None = None
    optimize_noise: bool = True


@dataclass
class LogRecord:
    iteration: int
    breakdown: gm.ObjectiveBreakdown
    ms: float


@dataclass
class TrainLog:
    records: list[LogRecord] = field(default_factory=list)

    @staticmethod
    def format_line(rec: LogRecord) -> str:
        b = rec.breakdown
        return (
            f"iter={rec.iteration} total={b.total:.6g} data={b.data_term:.6g} "
            f"joint={b.joint_term:.6g} complexity={b.complexity_term:.6g} "
            f"prior={b.prior_term:.6g} ms={rec.ms:.6g}"
        )

    def totals(self) -> np.ndarray:
        return np.array([r.breakdown.total for r in self.records])


def pca_latents(images: np.ndarray, q: int, rng: np.random.Generator) -> np.ndarray:
    """Project images onto their top principal components, one unit of
    variance per latent dimension, with a deterministic sign convention.
    Degenerate data (rank below q) falls back to small random coordinates."""
    n = images.shape[0]
    centered = images - images.mean(axis=0, keepdims=True)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    if n < 2 or s.shape[0] < q or s[q - 1] <= 1e-10 * max(s[0], 1.0):
        return 0.1 * rng.standard_normal((n, q))
    # Flip each component so its largest-magnitude loading is positive.
    for k in range(q):
        j = int(np.argmax(np.abs(vt[k])))
        if vt[k, j] < 0:
            vt[k] *= -1.0
            u[:, k] *= -1.0
    scores = u[:, :q] * s[:q]
    return scores / scores.std(axis=0, keepdims=True)


def init_model(
    dataset: ImageDataset,
    q: int = 2,
    arch: tuple[int, ...] = (50, 100, 200),
    seed: int = 0,
) -> gm.GPDBNModel:
    """Fresh model for a dataset; arch lists hidden widths from the
    Gaussian top down, the visible width comes from the data."""
    rng = np.random.default_rng(seed)
    cfg = DecoderConfig((*arch, dataset.width * dataset.height))
    d = cfg.top_units
    n = len(dataset)
    latents = nm.parameter(pca_latents(dataset.images, q, rng))
    amat = nm.parameter(0.01 * rng.standard_normal((n, d)))
    kernel = KernelParams.create(alpha2=1.0, lengthscale=1.0, noise=0.01)
    top = GaussianTop(nm.parameter(np.zeros((1, d))), np.zeros((1, d)))
    layers = init_layers(cfg, rng)
    return gm.GPDBNModel(
        latents, amat, kernel, top, layers, cfg, dataset.width, dataset.height
    )


def train(
    model: gm.GPDBNModel,
    images: np.ndarray,
    cfg: TrainConfig,
    log_stream=None,
) -> TrainLog:
    """Run the Adam loop; emits one log line per log_every iterations.

    A non-finite objective rolls the parameters back to the last logged
    state, checkpoints them if a path is configured, and raises
    TrainingDiverged.  Training a loaded checkpoint further is the
    supported way to resume (optimizer moments start fresh).
    """
    if images.shape != (model.n, model.p):
        raise ValueError(f"images shape {images.shape} does not match model")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters(cfg.optimize_noise)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    log = TrainLog()
    batch = cfg.batch_size if cfg.batch_size not in (None, model.n) else None
    last_good = [p.value.copy() for p in params]

    try:
        for it in range(1, cfg.iters + 1):
            t0 = time.perf_counter()
            if batch is None:
                breakdown = gm.objective(model, images, rng)
            else:
                indices = rng.choice(model.n, size=batch, replace=False)
                breakdown = gm.minibatch_objective(model, images, indices, rng)
            if not np.isfinite(breakdown.total):
                raise nm.NumericsError("objective total is not finite")
            opt.step(nm.gradient(breakdown.node, params))
            ms = (time.perf_counter() - t0) * 1000.0
            if it % cfg.log_every == 0 or it == cfg.iters:
                rec = LogRecord(it, breakdown, ms)
                log.records.append(rec)
                if log_stream is not None:
                    print(TrainLog.format_line(rec), file=log_stream, flush=True)
                last_good = [p.value.copy() for p in params]
    except nm.NumericsError as err:
        for p, value in zip(params, last_good):
            p.value = value.copy()
        gm.refresh_snapshot(model, rng)
        if cfg.checkpoint_path:
            gm.save_checkpoint(model, cfg.checkpoint_path)
        raise TrainingDiverged(f"aborted at a non-finite objective: {err}") from err

    gm.refresh_snapshot(model, rng)
    if cfg.checkpoint_path:
        gm.save_checkpoint(model, cfg.checkpoint_path)
    return log
