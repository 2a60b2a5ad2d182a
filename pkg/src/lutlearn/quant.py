"""Binarization: sign with clipped straight-through gradients, two-level
residual binarization with trainable level scales, and the l2 sparsity
regularizer used during high-precision training."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grad import Tensor, l2_norm, parameter

LEVELS = 2
GAMMA_FLOOR = 1e-3


def sign(x) -> np.ndarray:
    """Elementwise sign with sign(0) = +1."""
    x = np.asarray(x)
    return np.where(x >= 0, 1.0, -1.0)


def sign_ste(x: Tensor) -> Tensor:
    """Binary forward, gradient passed where |x| <= 1."""
    pass_mask = np.abs(x.data) <= 1.0
    return Tensor(sign(x.data), _parents=(x,), _backward=lambda g: x._accumulate(g * pass_mask))


def residual_binarize_np(x, gammas) -> tuple[np.ndarray, np.ndarray]:
    """Returns (bits, approx) with bits stacked on a new leading axis."""
    x = np.asarray(x, dtype=np.float64)
    eps = x
    bits = np.empty((len(gammas),) + x.shape)
    approx = np.zeros_like(x)
    for b, g in enumerate(gammas):
        bits[b] = sign(eps)
        approx = approx + g * bits[b]
        eps = eps - g * bits[b]
    return bits, approx


def _residual_forward(x: np.ndarray, gammas: np.ndarray, surrogate: bool):
    squash = (lambda e: np.clip(e, -1.0, 1.0)) if surrogate else sign
    eps = [x]
    outs = []
    for b in range(LEVELS):
        outs.append(squash(eps[b]))
        if b + 1 < LEVELS:
            eps.append(eps[b] - gammas[b] * outs[b])
    return eps, outs


def residual_binarize(x: Tensor, gammas: Tensor, surrogate: bool = False) -> Tensor:
    """Two bit-planes of ``x`` stacked as shape (2, *x.shape).

    Level 1 is sign(x); level 2 is the sign of the residual x - gamma_1*sign(x).
    The backward pass is the exact gradient of the clipped surrogate in which
    every sign() is replaced by clip(., -1, 1); with ``surrogate=True`` the
    forward pass is that surrogate too, which makes it finite-difference
    checkable.
    """
    g = gammas.data
    eps, outs = _residual_forward(x.data, g, surrogate)

    def bw(up):
        d_eps2 = up[1] * (np.abs(eps[1]) <= 1.0)
        gammas._accumulate(np.array([-(d_eps2 * outs[0]).sum(), 0.0]))
        d_out1 = up[0] - g[0] * d_eps2
        x._accumulate(d_eps2 + d_out1 * (np.abs(eps[0]) <= 1.0))
    return Tensor(np.stack(outs), _parents=(x, gammas), _backward=bw)


@dataclass
class ResidualBinarizer:
    """Per-layer trainable levels; gamma is initialised from the first batch it
    sees so that each level matches the mean absolute residual."""
    gammas: Tensor = field(default_factory=lambda: parameter(np.ones(LEVELS), name="gamma"))
    initialized: bool = False

    def init_from(self, x: np.ndarray) -> None:
        eps = np.asarray(x, dtype=np.float64)
        vals = []
        for _ in range(LEVELS):
            g = max(float(np.mean(np.abs(eps))), GAMMA_FLOOR)
            vals.append(g)
            eps = eps - g * sign(eps)
        self.gammas.data[:] = vals
        self.initialized = True

    def __call__(self, x: Tensor) -> Tensor:
        if not self.initialized:
            self.init_from(x.data)
        return residual_binarize(x, self.gammas)

    def clamp(self) -> None:
        np.maximum(self.gammas.data, GAMMA_FLOOR, out=self.gammas.data)


def sparsity_regularizer(weights: Sequence[Tensor | np.ndarray], lam: float) -> Tensor:
    """lam * sqrt(sum over layers and channels of squared weights)."""
    if lam < 0:
        raise ValueError("regularization factor must be >= 0")
    ts = [w if isinstance(w, Tensor) else Tensor(w) for w in weights]
    return l2_norm(ts) * lam
