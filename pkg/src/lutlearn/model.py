"""Block-structured networks trained in three modes.

A block is a linear layer (dense or conv), an optional batch norm and an
optional max-pool.  In ``real`` mode blocks exchange hard-tanh activations.
In ``binary`` and ``lut`` modes each block residual-binarizes its input into
two bit-planes, pushes both through the same binary operator and recombines
them with the binarizer's levels.  ``hard`` mode evaluates the frozen
network: sign weights or sign vertex tables, integer level scales, and the
exact float affine that the netlist's thresholds are derived from.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError
from .grad import (BatchNormState, Tensor, batchnorm, conv2d, conv_geometry, dense, hardtanh, im2col, maxpool2d,
                   mul, parameter, patches, reshape, take)
from .lutops import TiledLutLayer, expand_layer, lut_array
from .prune import PruneMask, prune_threshold, threshold_for_density
from .quant import ResidualBinarizer, sign, sign_ste

GAMMA_BITS = 16
ALPHA_FLOOR = 1e-4
LFC = ("dense:256", "bn", "dense:256", "bn", "dense:256", "bn", "dense:256", "bn", "dense:10", "bn", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | conv2d | maxpool | batchnorm | softmax
    dims: tuple = ()
    activation: str = "sign"

    @classmethod
    def parse(cls, token: str) -> "LayerSpec":
        head, *rest = token.split(":")
        kind = {"conv": "conv2d", "bn": "batchnorm", "pool": "maxpool"}.get(head, head)
        if kind not in ("dense", "conv2d", "maxpool", "batchnorm", "softmax"):
            raise ConfigError(f"unknown layer kind {head!r}")
        dims = tuple(int(r) for r in rest if r not in ("same", "valid"))
        pad = "same" if "same" in rest else "valid"
        if kind == "dense" and len(dims) != 1:
            raise ConfigError(f"dense needs one width: {token!r}")
        if kind == "conv2d":
            if len(dims) not in (2, 3):
                raise ConfigError(f"conv needs outputs:kernel[:stride]: {token!r}")
            dims = dims + (1,) * (3 - len(dims)) + ((1,) if pad == "same" else (0,))
        if kind == "maxpool" and len(dims) != 1:
            raise ConfigError(f"maxpool needs a size: {token!r}")
        return cls(kind, dims)


@dataclass
class Block:
    kind: str
    out: int
    in_shape: tuple
    kernel: int = 1
    stride: int = 1
    padding: str = "valid"
    pool: int = 0
    use_bn: bool = False
    w: Tensor | None = None
    alpha: Tensor = field(default_factory=lambda: parameter(np.ones(1), name="alpha"))
    bn_scale: Tensor | None = None
    bn_shift: Tensor | None = None
    bn_state: BatchNormState | None = None
    binarizer: ResidualBinarizer = field(default_factory=ResidualBinarizer)
    mask: PruneMask | None = None
    lut: TiledLutLayer | None = None

    @property
    def channels(self) -> int:
        return self.in_shape[-1]

    @property
    def fan_in(self) -> int:
        return int(self.w.shape[1])

    @property
    def conv_out(self) -> tuple:
        if self.kind == "dense":
            return (self.out,)
        h, w, _ = self.in_shape
        ho, wo, _, _ = conv_geometry(h, w, self.kernel, self.kernel, self.stride, self.padding)
        return (ho, wo, self.out)

    @property
    def out_shape(self) -> tuple:
        s = self.conv_out
        if self.pool:
            return (s[0] // self.pool, s[1] // self.pool, s[2])
        return s

    def eff_weights(self) -> np.ndarray:
        w = sign(self.w.data)
        return w * self.mask.keep if self.mask is not None else w

    # frozen affine shared by the trainer's hardened forward and the netlist
    def hard_gammas(self) -> np.ndarray:
        return np.round(self.binarizer.gammas.data * 2 ** GAMMA_BITS).astype(np.int64)

    def hard_affine_params(self) -> tuple[np.ndarray, np.ndarray]:
        scale = self.alpha.data[0] / 2 ** GAMMA_BITS
        if self.use_bn:
            a = self.bn_scale.data / np.sqrt(self.bn_state.var + self.bn_state.eps)
            return scale * a, self.bn_shift.data - self.bn_state.mean * a
        return np.full(self.out, scale), np.zeros(self.out)

    def hard_affine(self, s) -> np.ndarray:
        k1, c0 = self.hard_affine_params()
        return s * k1 + c0


def level_code(z: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """2-bit code of the two residual bits, ordered so that it is monotone in z."""
    b1 = sign(z)
    b2 = sign(z - gammas[0] * b1)
    return (2 * (b1 > 0) + (b2 > 0)).astype(np.int64)


class Network:
    def __init__(self, layers, input_shape, seed: int = 0):
        specs = [LayerSpec.parse(t) if isinstance(t, str) else t for t in layers]
        self.specs = specs
        self.input_shape = tuple(input_shape)
        rng = np.random.default_rng(seed)
        self.blocks: list[Block] = []
        shape = self.input_shape
        for spec in specs:
            if spec.kind in ("dense", "conv2d"):
                if spec.kind == "dense":
                    fan_in = int(np.prod(shape))
                    b = Block("dense", spec.dims[0], (fan_in,))
                else:
                    if len(shape) != 3:
                        raise ConfigError("conv layers need an (H, W, C) input")
                    o, k, s, same = spec.dims
                    b = Block("conv", o, shape, kernel=k, stride=s, padding="same" if same else "valid")
                    fan_in = k * k * shape[2]
                    b.conv_out  # validates geometry
                b.w = parameter(rng.uniform(-1, 1, size=(b.out, fan_in)) * np.sqrt(3.0 / fan_in), name="w")
                self.blocks.append(b)
                shape = b.out_shape
            elif not self.blocks:
                raise ConfigError(f"{spec.kind} before any linear layer")
            elif spec.kind == "batchnorm":
                b = self.blocks[-1]
                b.use_bn = True
                b.bn_scale = parameter(np.ones(b.out), name="bn_scale")
                b.bn_shift = parameter(np.zeros(b.out), name="bn_shift")
                b.bn_state = BatchNormState(np.zeros(b.out), np.ones(b.out))
            elif spec.kind == "maxpool":
                b = self.blocks[-1]
                if b.kind != "conv":
                    raise ConfigError("maxpool must follow a conv layer")
                b.pool = spec.dims[0]
                if min(b.conv_out[:2]) < b.pool:
                    raise ConfigError("pool larger than its input")
                shape = b.out_shape
        if not self.blocks:
            raise ConfigError("network has no linear layers")
        if self.blocks[-1].pool:
            raise ConfigError("the output layer cannot be pooled")
        self.n_classes = self.blocks[-1].out

    # ------------------------------------------------------------ parameters

    def parameters(self, mode: str = "real") -> list[Tensor]:
        out = []
        for b in self.blocks:
            if mode == "lut" and b.lut is not None:
                out += b.lut.parameters()
            else:
                out.append(b.w)
            out.append(b.alpha)
            if b.use_bn:
                out += [b.bn_scale, b.bn_shift]
            if mode in ("binary", "lut"):
                out.append(b.binarizer.gammas)
        return out

    def weights(self) -> list[Tensor]:
        return [b.w for b in self.blocks]

    def post_step(self, mode: str) -> None:
        for b in self.blocks:
            np.clip(b.w.data, -1.0, 1.0, out=b.w.data)
            if b.mask is not None:
                b.w.data[~b.mask.keep] = 0.0
            np.maximum(b.alpha.data, ALPHA_FLOOR, out=b.alpha.data)
            b.binarizer.clamp()
            if b.lut is not None:
                b.lut.clamp()

    def zero_grad(self) -> None:
        for b in self.blocks:
            for t in (b.w, b.alpha, b.bn_scale, b.bn_shift, b.binarizer.gammas):
                if t is not None:
                    t.zero_grad()
            if b.lut is not None:
                b.lut.coeffs.zero_grad()
                b.lut.pvals.zero_grad()

    # --------------------------------------------------------------- pruning

    def prune(self, theta: float | None = None, density: float | None = None,
              per_layer: dict[int, float] | None = None) -> float:
        """Apply magnitude pruning; returns the global threshold used."""
        if (theta is None) == (density is None):
            raise ConfigError("give exactly one of theta and density")
        if theta is None:
            theta = threshold_for_density([b.w.data for b in self.blocks], density)
        for i, b in enumerate(self.blocks):
            t = (per_layer or {}).get(i, theta)
            b.mask = prune_threshold(b.w.data, t)
            b.w.data[~b.mask.keep] = 0.0
        return theta

    def masks(self) -> list[PruneMask]:
        return [b.mask for b in self.blocks if b.mask is not None]

    # ------------------------------------------------------------- expansion

    def expand(self, targets, k: int, p: int, t_in: int, t_out: int, rng: np.random.Generator,
               reconnect: str = "zero") -> None:
        for i in targets:
            if not 0 <= i < len(self.blocks):
                raise ConfigError(f"no layer {i} to expand")
            b = self.blocks[i]
            keep = b.mask.keep if b.mask is not None else np.ones(b.w.shape, dtype=bool)
            b.lut = expand_layer(keep, b.eff_weights(), k, p, t_in, t_out, rng, channels=b.channels,
                                 prepruning_weights=b.w.data, reconnect=reconnect)

    # ---------------------------------------------------------------- forward

    def _flat_in(self, b: Block, h):
        if b.kind == "dense" and h.data.ndim > 2:
            return reshape(h, (h.shape[0], -1)) if isinstance(h, Tensor) else h.reshape(h.shape[0], -1)
        return h

    def _linear(self, b: Block, h: Tensor, mode: str) -> Tensor:
        """h is (N, ...) real or (2, N, ...) bit-planes; returns the raw sum."""
        lead = h.shape[:2] if mode != "real" else h.shape[:1]
        if mode != "real":
            h = reshape(h, (lead[0] * lead[1],) + h.shape[2:])
        h = self._flat_in(b, h)
        if b.lut is not None and mode == "lut":
            if b.kind == "conv":
                cols = patches(h, b.kernel, b.kernel, b.stride, b.padding, pad_value=-1.0)
                n, ho, wo, f = cols.shape
                y = reshape(lut_array(reshape(cols, (n * ho * wo, f)), b.lut), (n, ho, wo, b.out))
            else:
                y = lut_array(h, b.lut)
        else:
            w = b.w
            if mode != "real":
                w = mul(sign_ste(w), Tensor(b.mask.keep.astype(float))) if b.mask is not None else sign_ste(w)
            if b.kind == "conv":
                y = conv2d(h, w, b.kernel, b.kernel, b.stride, b.padding, pad_value=0.0 if mode == "real" else -1.0)
            else:
                y = dense(h, w)
        return reshape(y, lead + y.shape[1:])

    def forward(self, x: np.ndarray, mode: str = "real", train: bool = False) -> Tensor:
        """Logits for a batch ``x`` of shape (N, *input_shape)."""
        if mode not in ("real", "binary", "lut"):
            raise ConfigError(f"unknown mode {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ConfigError(f"input shape {x.shape[1:]} does not match {self.input_shape}")
        h = Tensor(x)
        for i, b in enumerate(self.blocks):
            if mode == "real":
                if i:
                    h = hardtanh(h)
                y = self._linear(b, h, mode)
            else:
                planes = b.binarizer(h)
                y2 = self._linear(b, planes, mode)
                g = b.binarizer.gammas
                y = take(y2, 0) * take(g, 0) + take(y2, 1) * take(g, 1)
            y = y * b.alpha
            if b.use_bn:
                y = batchnorm(y, b.bn_scale, b.bn_shift, b.bn_state, train)
            if b.pool:
                y = maxpool2d(y, b.pool)
            h = y
        return h

    def predict(self, x: np.ndarray, mode: str = "real", batch: int = 500) -> np.ndarray:
        out = [np.argmax(self.forward(x[i:i + batch], mode).data, axis=1) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    # ------------------------------------------------------------- hardened

    def _hard_counts(self, b: Block, bits: np.ndarray) -> np.ndarray:
        """Signed sums of the frozen binary operator for one +/-1 plane."""
        n = bits.shape[0]
        if b.kind == "conv":
            cols, geom = im2col(bits, b.kernel, b.kernel, b.stride, b.padding, pad_value=-1.0)
            out_shape = (n,) + b.conv_out
        else:
            cols = bits.reshape(n, -1)
            out_shape = (n, b.out)
        if b.lut is None:
            y = cols @ b.eff_weights().T
        else:
            L = b.lut
            vt = sign(L.tables())
            wq = L.param_weights(sign(L.pvals.data)) if L.p else np.ones((L.n_ops, 1))
            xT = np.ascontiguousarray((cols > 0).T, dtype=np.uint8)
            yT, _ = _kernels.lut_forward(xT, L.op_sel, L.op_phys, L.op_out, np.ascontiguousarray(wq), vt, L.out_features)
            y = yT.T
        return y.reshape(out_shape)

    def hardened_forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Frozen-parameter forward: returns (logits, integer sums of the last layer)."""
        h = np.asarray(x, dtype=np.float64)
        for i, b in enumerate(self.blocks):
            g = b.binarizer.gammas.data
            bits = self._planes(h, g)
            gi = b.hard_gammas()
            s = gi[0] * self._hard_counts(b, bits[0]) + gi[1] * self._hard_counts(b, bits[1])
            z = b.hard_affine(s)
            if b.pool:
                z = _pool_np(z, b.pool)
            h = z
        return h, s.astype(np.int64)

    @staticmethod
    def _planes(z: np.ndarray, g: np.ndarray) -> np.ndarray:
        b1 = sign(z)
        return np.stack([b1, sign(z - g[0] * b1)])


def _pool_np(z: np.ndarray, size: int) -> np.ndarray:
    n, h, w, c = z.shape
    ho, wo = h // size, w // size
    return z[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c).max(axis=(2, 4))
