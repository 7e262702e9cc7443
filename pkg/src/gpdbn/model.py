"""The coupled model: GP-distributed top activations feeding the decoder.

Training treats the top activation matrix A as a free parameter.  Each
objective evaluation draws fresh Gaussian noise, forms the stochastic
activations H = A + sigma_gp * sigma_dbn * E, normalizes them to zero
column mean and unit top scale for the GP terms, and decodes the raw rows
to visible probabilities for the data term.  Everything is one scalar
objective minimized jointly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec
from . import gp
from . import numerics as nm
from .numerics import Tensor
from .optim import Adam

CHECKPOINT_MAGIC = b"GPDBN1\0"
VAR_FLOOR = 1e-12


@dataclass
class GPDBNModel:
    latents: Tensor
    amat: Tensor
    kernel: gp.KernelParams
    top: dec.GaussianTop
    layers: list[dec.ConcreteLayer]
    cfg: dec.DecoderConfig
    width: int
    height: int
    h_snapshot: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.latents.value.shape[0]

    @property
    def q(self) -> int:
        return self.latents.value.shape[1]

    @property
    def d(self) -> int:
        return self.cfg.top_units

    @property
    def p(self) -> int:
        return self.cfg.visible_units

    def parameters(self, optimize_noise: bool = True) -> list[Tensor]:
        params = [self.latents, self.amat, self.kernel.log_alpha2, self.kernel.log_lengthscale]
        if optimize_noise:
            params.append(self.kernel.log_noise)
        params.append(self.top.log_sigma)
        for layer in self.layers:
            params.extend((layer.w, layer.b))
        return params


@dataclass
class ObjectiveBreakdown:
    data_term: float
    joint_term: float
    complexity_term: float
    prior_term: float
    total: float
    node: Tensor | None = field(default=None, repr=False, compare=False)


@dataclass
class ProjectionResult:
    x: np.ndarray
    probs: np.ndarray
    loss: float
    trace: list[float] = field(repr=False)


@dataclass
class _Activations:
    xs: Tensor
    chol: Tensor
    h_raw: Tensor
    h_norm: Tensor
    h_mu: Tensor


def _activations(model: GPDBNModel, rng: np.random.Generator, indices=None) -> _Activations:
    """Draw one set of stochastic top activations and factorize the Gram
    matrix of the (possibly row-subset) latents."""
    if indices is None:
        xs, a = model.latents, model.amat
    else:
        xs = nm.take_rows(model.latents, indices)
        a = nm.take_rows(model.amat, indices)
    rows = xs.value.shape[0]

    bare = gp.gram(xs, model.kernel, with_noise=False)
    kmat = bare + nm.exp(model.kernel.log_noise) * nm.constant(np.eye(rows))
    chol = gp.gram_factor(kmat)

    # Noise-free posterior variance at each training latent shares the
    # factorization with the GP terms of the objective.
    solved = nm.chol_solve(chol, bare)
    quad = (bare * solved).sum(axis=0, keepdims=True).T
    var = nm.clamp(nm.exp(model.kernel.log_alpha2) - quad, lo=VAR_FLOOR)
    sigma_gp = nm.sqrt(var)

    sigma_dbn = nm.exp(model.top.log_sigma)
    e = nm.constant(rng.standard_normal((rows, model.d)))
    h_raw = a + sigma_gp * sigma_dbn * e
    h_mu = h_raw.mean(axis=0, keepdims=True)
    h_norm = (h_raw - h_mu) / sigma_dbn
    return _Activations(xs, chol, h_raw, h_norm, h_mu)


def build_h(model: GPDBNModel, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """Normalized top activations and the column-mean offset they subtract."""
    acts = _activations(model, rng)
    return acts.h_norm, acts.h_mu


def refresh_snapshot(model: GPDBNModel, rng: np.random.Generator):
    """Store one full activation draw on the model for later prediction."""
    acts = _activations(model, rng)
    model.h_snapshot = np.array(acts.h_norm.value)
    model.top.h_mu = np.array(acts.h_mu.value)


def _nll(y: Tensor, probs: Tensor) -> Tensor:
    return -(y * nm.log(probs) + (1.0 - y) * nm.log(1.0 - probs)).sum()


def objective(model: GPDBNModel, images: np.ndarray, rng: np.random.Generator) -> ObjectiveBreakdown:
    """Full-data training objective; draws fresh noise from the generator."""
    acts = _activations(model, rng)
    noise = dec.sample_noise(model.layers, model.n, rng)
    probs = dec.decode(model.layers, acts.h_raw, noise)

    data = _nll(nm.constant(images), probs)
    joint = 0.5 * (acts.h_norm * nm.chol_solve(acts.chol, acts.h_norm)).sum()
    complexity = (model.d / 2.0) * nm.chol_logdet(acts.chol)
    prior = nm.square(acts.xs).sum()
    total = data + joint + complexity + prior
    return ObjectiveBreakdown(
        data.item(), joint.item(), complexity.item(), prior.item(), total.item(), total
    )


def minibatch_objective(
    model: GPDBNModel,
    images: np.ndarray,
    indices: np.ndarray,
    rng: np.random.Generator,
) -> ObjectiveBreakdown:
    """Subset estimator of the objective, rescaled so that using the whole
    dataset as one batch reproduces the full objective exactly."""
    indices = np.asarray(indices, dtype=np.intp)
    b = indices.shape[0]
    n = model.n
    acts = _activations(model, rng, indices)
    noise = dec.sample_noise(model.layers, b, rng)
    probs = dec.decode(model.layers, acts.h_raw, noise)

    scale = n / b
    data = scale * _nll(nm.constant(images[indices]), probs)
    joint = (n / (2.0 * b)) * (acts.h_norm * nm.chol_solve(acts.chol, acts.h_norm)).sum()
    complexity = ((n * model.d) / (2.0 * b)) * nm.chol_logdet(acts.chol)
    prior = scale * nm.square(acts.xs).sum()
    total = data + joint + complexity + prior
    return ObjectiveBreakdown(
        data.item(), joint.item(), complexity.item(), prior.item(), total.item(), total
    )


class Predictor:
    """Read-only prediction context over a model's stored snapshot.

    Freezes every model value into constants and factorizes the training
    Gram matrix once, so repeated queries (and concurrent readers) share
    the expensive work and never touch live parameters.
    """

    def __init__(self, model: GPDBNModel):
        if model.h_snapshot is None:
            raise ValueError("model has no activation snapshot; train or load one first")
        self.q = model.q
        self.d = model.d
        self.p = model.p
        self.width = model.width
        self.height = model.height
        self.params = gp.KernelParams(
            nm.constant(model.kernel.log_alpha2.value),
            nm.constant(model.kernel.log_lengthscale.value),
            nm.constant(model.kernel.log_noise.value),
        )
        self.post = gp.posterior(
            nm.constant(model.latents.value), nm.constant(model.h_snapshot), self.params
        )
        self.layers = [
            dec.ConcreteLayer(nm.constant(l.w.value), nm.constant(l.b.value), l.lam)
            for l in model.layers
        ]
        self.sigma_dbn = nm.constant(np.exp(model.top.log_sigma.value))
        self.h_mu = nm.constant(model.top.h_mu)
        self.noise_var = float(np.exp(model.kernel.log_noise.value))
        self.latent_lo = model.latents.value.min(axis=0)
        self.latent_hi = model.latents.value.max(axis=0)

    def _tops(self, pred: gp.GPPrediction, rng: np.random.Generator) -> Tensor:
        eps = nm.constant(rng.standard_normal(pred.mean.value.shape))
        sigma_gp = nm.sqrt(nm.clamp(pred.variance, lo=VAR_FLOOR))
        return (pred.mean + sigma_gp * eps) * self.sigma_dbn + self.h_mu

    def sample_probs(self, xq: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One stochastic decode per query row."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        pred = self.post.predict(nm.constant(xq))
        h = self._tops(pred, rng)
        noise = dec.sample_noise(self.layers, xq.shape[0], rng)
        return dec.decode(self.layers, h, noise).value

    def mean_probs(self, xq: np.ndarray, j: int, rng: np.random.Generator) -> np.ndarray:
        """Average visible probabilities over j stochastic decodes."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        pred = self.post.predict(nm.constant(xq))
        acc = np.zeros((xq.shape[0], self.p))
        for _ in range(j):
            h = self._tops(pred, rng)
            noise = dec.sample_noise(self.layers, xq.shape[0], rng)
            acc += dec.decode(self.layers, h, noise).value
        return acc / j

    def log_variance(self, xq: np.ndarray) -> np.ndarray:
        """Log predictive variance (with observation noise) per query row."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        pred = self.post.predict(nm.constant(xq))
        return np.log(pred.variance.value[:, 0] + self.noise_var)


def sample_at(model: GPDBNModel, x, rng: np.random.Generator) -> np.ndarray:
    """Visible probabilities of one stochastic decode at latent point x."""
    return Predictor(model).sample_probs(x, rng)[0]


def predict_mean(model: GPDBNModel, x, rng: np.random.Generator, j: int = 25) -> np.ndarray:
    """Mean visible probabilities over j stochastic decodes at x."""
    return Predictor(model).mean_probs(x, j, rng)[0]


def log_predictive_variance(model: GPDBNModel, x) -> float:
    return float(Predictor(model).log_variance(x)[0])


def _projection_loss(
    predictor: Predictor,
    x_leaf: Tensor,
    y: Tensor,
    v_samples: int,
    rng: np.random.Generator,
) -> tuple[Tensor, Tensor]:
    """Reconstruction NLL (averaged over samples and pixels) and the log
    predictive variance at the candidate latent point."""
    pred = predictor.post.predict(x_leaf)
    sigma_gp = nm.sqrt(nm.clamp(pred.variance, lo=VAR_FLOOR))
    total = None
    for _ in range(v_samples):
        eps = nm.constant(rng.standard_normal((1, predictor.d)))
        h = (pred.mean + sigma_gp * eps) * predictor.sigma_dbn + predictor.h_mu
        noise = dec.sample_noise(predictor.layers, 1, rng)
        probs = dec.decode(predictor.layers, h, noise)
        nll = _nll(y, probs)
        total = nll if total is None else total + nll
    data = total * (1.0 / (v_samples * predictor.p))
    log_var = nm.log(pred.variance + predictor.noise_var)
    return data, log_var


def project(
    model: GPDBNModel,
    target: np.ndarray,
    rng: np.random.Generator,
    *,
    restarts: int = 10,
    v_samples: int = 5,
    steps: int = 200,
    lr: float = 0.05,
    gamma: float | str = "auto",
    j: int = 25,
) -> ProjectionResult:
    """Find the latent point whose decodes best explain a target image.

    Runs Adam from several random starts; the variance penalty keeps the
    search on the populated part of the manifold.  With gamma="auto" the
    penalty weight balances the two terms once, at the most promising
    random start.
    """
    predictor = Predictor(model)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if target.shape[0] != predictor.p:
        raise ValueError(f"target has {target.shape[0]} pixels, model expects {predictor.p}")
    y = nm.constant(target[None, :])

    inits = [rng.standard_normal((1, predictor.q)) for _ in range(restarts)]
    probes = []
    for x0 in inits:
        data, log_var = _projection_loss(predictor, nm.constant(x0), y, v_samples, rng)
        probes.append((data.item(), log_var.item()))
    if gamma == "auto":
        best_data, best_lv = min(probes)
        gamma_val = abs(best_data) / max(abs(best_lv), 1e-3)
    else:
        gamma_val = float(gamma)

    best = None
    for x0 in inits:
        x_leaf = nm.parameter(x0.copy())
        opt = Adam([x_leaf], lr=lr)
        trace = []
        for _ in range(steps):
            data, log_var = _projection_loss(predictor, x_leaf, y, v_samples, rng)
            loss = data + gamma_val * log_var
            opt.step(nm.gradient(loss, [x_leaf]))
            trace.append(loss.item())
        data, log_var = _projection_loss(predictor, x_leaf, y, v_samples, rng)
        final = data.item() + gamma_val * log_var.item()
        if best is None or final < best[0]:
            best = (final, x_leaf.value.copy(), trace)

    loss, x_best, trace = best
    probs = predictor.mean_probs(x_best, j, rng)[0]
    return ProjectionResult(x=x_best[0], probs=probs, loss=loss, trace=trace)


# ---------------------------------------------------------------------------
# Checkpoints

def _write_array(f, arr: np.ndarray):
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(model: GPDBNModel, path):
    """Binary model state; same seed and config always produce the same bytes."""
    if model.h_snapshot is None:
        raise ValueError("refusing to save a model without an activation snapshot")
    sizes = ",".join(str(s) for s in model.cfg.layer_sizes)
    header = (
        f"n={model.n}\nq={model.q}\nwidth={model.width}\nheight={model.height}\n"
        f"layer_sizes={sizes}\n"
    ).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        _write_array(f, model.latents.value)
        _write_array(f, model.amat.value)
        for t in model.kernel.tensors():
            _write_array(f, t.value)
        _write_array(f, model.top.log_sigma.value)
        _write_array(f, model.top.h_mu)
        _write_array(f, model.h_snapshot)
        for layer in model.layers:
            _write_array(f, layer.w.value)
            _write_array(f, layer.b.value)


def load_checkpoint(path) -> GPDBNModel:
    raw = open(path, "rb").read()
    if raw[:7] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:7]!r}")
    (hlen,) = struct.unpack("<I", raw[7:11])
    fields = dict(
        line.split("=", 1) for line in raw[11 : 11 + hlen].decode().strip().split("\n")
    )
    n, q = int(fields["n"]), int(fields["q"])
    width, height = int(fields["width"]), int(fields["height"])
    sizes = tuple(int(s) for s in fields["layer_sizes"].split(","))
    cfg = dec.DecoderConfig(sizes)
    d = cfg.top_units

    offset = [11 + hlen]

    def read(shape) -> np.ndarray:
        count = int(np.prod(shape))
        if offset[0] + count * 8 > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset[0])
        offset[0] += count * 8
        return arr.reshape(shape).astype(np.float64)

    latents = nm.parameter(read((n, q)))
    amat = nm.parameter(read((n, d)))
    kernel = gp.KernelParams(
        nm.parameter(read(())), nm.parameter(read(())), nm.parameter(read(()))
    )
    top = dec.GaussianTop(nm.parameter(read((1, d))), read((1, d)))
    h_snapshot = read((n, d))
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = nm.parameter(read((fan_in, fan_out)))
        b = nm.parameter(read((1, fan_out)))
        layers.append(dec.ConcreteLayer(w, b))
    if offset[0] != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset[0]} trailing bytes")
    return GPDBNModel(latents, amat, kernel, top, layers, cfg, width, height, h_snapshot)
