"""Generative shape model: a GP latent variable model driving a stack of
relaxed-Bernoulli decoder layers, trained end to end by a single objective."""

__version__ = "0.1.0"
