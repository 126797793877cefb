"""
Fully connected networks.

Weights are stored ``(fan_in, fan_out)`` so a layer is ``h @ W + b`` for both a
single input row and a batch. The activation applies to hidden layers only;
the output layer is affine, so ``widths=[n, m]`` is a plain linear map.
"""

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .rng import make_rng

ACTIVATIONS = {
    "tanh": ad.tanh,
    "relu": ad.relu,
    "softplus": ad.softplus,
}


@dataclass(frozen=True)
class Mlp:
    widths: tuple[int, ...]
    activation: str
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(self.n_layers):
            names.extend([f"W{i}", f"b{i}"])
        return names

    def with_parameters(self, params: Sequence[np.ndarray]) -> "Mlp":
        if len(params) != 2 * self.n_layers:
            raise ShapeError(f"Expected {2 * self.n_layers} parameter arrays, got {len(params)}")
        weights = tuple(np.asarray(p, dtype=np.float64) for p in params[0::2])
        biases = tuple(np.asarray(p, dtype=np.float64) for p in params[1::2])
        for w_old, w_new in zip(self.weights, weights):
            if w_old.shape != w_new.shape:
                raise ShapeError(f"Weight shape {w_new.shape} does not match {w_old.shape}")
        return dataclasses.replace(self, weights=weights, biases=biases)


def mlp_init(widths: Sequence[int], activation: str = "tanh", seed: int = 0) -> Mlp:
    """
    Initialize an MLP with Glorot-uniform weights and zero biases.

    Each weight is drawn from U(-a, a) with ``a = sqrt(6 / (fan_in + fan_out))``
    using the ``"init"`` stream of ``seed``.

    Raises:
        ConfigError: fewer than two widths, a non-positive width, or an unknown activation.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ConfigError(f"An MLP needs at least input and output widths, got {list(widths)}")
    if any(w < 1 for w in widths):
        raise ConfigError(f"All MLP widths must be >= 1, got {list(widths)}")
    if activation not in ACTIVATIONS:
        raise ConfigError(
            f"Unknown activation {activation!r} (expected one of {', '.join(ACTIVATIONS)})"
        )

    rng = make_rng(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(widths, activation, tuple(weights), tuple(biases))


def forward(net: Mlp, x, tape: "ad.Tape | None" = None, *, params=None, gates=None):
    """
    Evaluate ``net`` on ``x`` (shape ``(..., widths[0])``).

    With ``tape`` the parameters are bound as leaves and the result is a
    ``Var``; passing ``params`` uses those (already bound) values instead.
    ``gates`` optionally multiplies each layer's output (after the
    activation for hidden layers) elementwise; one gate per layer.
    """
    if ad.value_of(x).shape[-1:] != (net.input_dim,):
        raise ShapeError(
            f"MLP expects input width {net.input_dim}, got shape {ad.value_of(x).shape}"
        )
    if params is None:
        params = tape.bind(net) if tape is not None else net.parameters()
    if gates is not None and len(gates) != net.n_layers:
        raise ShapeError(f"Expected {net.n_layers} gates, got {len(gates)}")

    act = ACTIVATIONS[net.activation]
    h = x
    for i in range(net.n_layers):
        h = ad.add(ad.matmul(h, params[2 * i]), params[2 * i + 1])
        if i < net.n_layers - 1:
            h = act(h)
        if gates is not None:
            h = ad.mul(h, gates[i])
    return h
