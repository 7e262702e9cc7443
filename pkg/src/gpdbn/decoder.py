"""Stack of relaxed-Bernoulli decoder layers.

Hidden layers sample through the binary Concrete relaxation at a fixed
temperature so the whole decode stays differentiable; the visible layer
always emits sigmoid probabilities and is never sampled.  Noise enters
explicitly as uniform draws supplied by the caller, which keeps every
stochastic path reproducible from a single generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor

LAMBDA = 0.1
CONCRETE_CLAMP = 1e-7
PROB_CLAMP = 1e-6


@dataclass
class DecoderConfig:
    """Layer widths from the Gaussian top down to the visible pixels."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least a top size and a visible size")

    @property
    def top_units(self) -> int:
        return self.layer_sizes[0]

    @property
    def visible_units(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class ConcreteLayer:
    w: Tensor
    b: Tensor
    lam: float = LAMBDA


@dataclass
class GaussianTop:
    """Top-layer scale (log space, trainable) and the column-mean offset
    captured at the latest activation normalization."""

    log_sigma: Tensor
    h_mu: np.ndarray


def init_layers(cfg: DecoderConfig, rng: np.random.Generator) -> list[ConcreteLayer]:
    """Fresh weights ~ N(0, sqrt(2/(fan_in+fan_out))), zero biases."""
    layers = []
    for fan_in, fan_out in zip(cfg.layer_sizes, cfg.layer_sizes[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        w = nm.parameter(rng.normal(0.0, std, size=(fan_in, fan_out)))
        b = nm.parameter(np.zeros((1, fan_out)))
        layers.append(ConcreteLayer(w, b))
    return layers


def concrete_sample(p: Tensor, u: Tensor, lam: float = LAMBDA) -> Tensor:
    """Relaxed Bernoulli draw: squash the shifted logistic sample back
    through a sigmoid, sharpened by 1/lam."""
    pc = nm.clamp(p, CONCRETE_CLAMP, 1.0 - CONCRETE_CLAMP)
    uc = nm.clamp(u, CONCRETE_CLAMP, 1.0 - CONCRETE_CLAMP)
    logits = nm.log(pc) - nm.log(1.0 - pc) + nm.log(uc) - nm.log(1.0 - uc)
    return nm.sigmoid(logits * (1.0 / lam))


def layer_down(layer: ConcreteLayer, h: Tensor, u: Tensor | None = None) -> Tensor:
    """One step down the stack; sampled when uniform noise is supplied."""
    act = nm.sigmoid(h @ layer.w + layer.b)
    if u is None:
        return act
    return concrete_sample(act, u, layer.lam)


def sample_noise(layers: list[ConcreteLayer], batch: int, rng: np.random.Generator) -> list[Tensor]:
    """Uniform noise for every hidden (non-visible) layer of a decode."""
    return [
        nm.constant(rng.random(size=(batch, layer.w.value.shape[1])))
        for layer in layers[:-1]
    ]


def decode(
    layers: list[ConcreteLayer],
    h: Tensor,
    noise: list[Tensor] | None = None,
    stochastic: bool = True,
) -> Tensor:
    """Propagate top activations to visible probabilities in [1e-6, 1-1e-6].

    Stochastic decodes need one uniform tensor per hidden layer; the
    deterministic path propagates probabilities instead of samples.
    """
    if stochastic:
        if noise is None or len(noise) != len(layers) - 1:
            got = 0 if noise is None else len(noise)
            raise ValueError(f"expected {len(layers) - 1} noise tensors, got {got}")
    elif noise:
        raise ValueError("deterministic decode takes no noise")

    for i, layer in enumerate(layers[:-1]):
        h = layer_down(layer, h, noise[i] if stochastic else None)
    probs = layer_down(layers[-1], h, None)
    return nm.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
