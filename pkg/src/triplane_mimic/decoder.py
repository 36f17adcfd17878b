"""MLP decoder: sampled tri-plane features -> (color, density)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DENSITY_BIAS_INIT = -1.0   # near-transparent start stabilizes early fitting


@dataclass
class DecoderParams:
    """Dense layers (weights, biases); head emits d_c color units + 1 density."""

    weights: list
    biases: list
    d_c: int = 3

    @classmethod
    def init(cls, in_width, hidden, depth, d_c, rng, dtype=np.float64):
        widths = [in_width] + [hidden] * depth + [d_c + 1]
        weights, biases = [], []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(w_in)
            weights.append(ad.Tensor(
                rng.uniform(-bound, bound, size=(w_in, w_out)).astype(dtype),
                requires_grad=True))
            biases.append(ad.Tensor(np.zeros(w_out, dtype=dtype), requires_grad=True))
        biases[-1].data[d_c] = DENSITY_BIAS_INIT
        return cls(weights=weights, biases=biases, d_c=d_c)

    @property
    def in_width(self):
        return self.weights[0].shape[0]

    def parameters(self):
        return list(self.weights) + list(self.biases)


def decode(params, feats):
    """Map (N, C) features to color in (0,1)^{d_c} and density >= 0.

    Color channels go through a sigmoid (first three are RGB), density
    through a softplus.
    """
    if feats.shape[1] != params.in_width:
        raise ValueError(
            f"decode: feature width {feats.shape[1]} != decoder input {params.in_width}")
    n = feats.shape[0]
    h = feats
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.matmul(h, w) + ad.broadcast_to(ad.reshape(b, (1, b.shape[0])),
                                              (n, b.shape[0]))
        if i != last:
            h = ad.leaky_relu(h, 0.2)
    color = ad.sigmoid(h[:, :params.d_c])
    sigma = ad.softplus(ad.reshape(h[:, params.d_c:], (n,)))
    return color, sigma
