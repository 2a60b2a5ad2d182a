"""K-input LUT inference operators.

A node computes the multilinear (Lagrange) interpolant

    g(z) = sum_{d in {-1,1}^K} c_d * prod_k (z_k - d_k)

of a Boolean function, where ``z`` is the node's activation inputs followed by
its parameter inputs.  Coefficient index ``i`` encodes ``d`` with bit ``k``
set when ``d_k = +1``; the same encoding is used for vertices ``v``.  At a
vertex only the ``d = -v`` term survives, so

    g(v) = c_{-v} * 2^K * prod_k v_k,

which lets training run on per-node vertex tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, InternalError
from .grad import Tensor, parameter

MAX_K = 6


def feasible(k: int, p: int) -> bool:
    """(K, P) is usable when the 2^(2^(K-P)) functions of the activation inputs
    cover the 2^P parameter selections."""
    if k > MAX_K:
        raise ConfigError(f"K={k} exceeds the device LUT width {MAX_K}")
    if k < 1 or p < 0:
        raise ConfigError(f"invalid (K, P) = ({k}, {p})")
    if p >= k:
        return False
    return 2 ** (2 ** (k - p)) >= 2 ** p


# ------------------------------------------------------------------ vertices

def vertices(k: int) -> np.ndarray:
    """(2^k, k) array of +/-1; row u has v_j = +1 iff bit j of u is set."""
    u = np.arange(2 ** k)[:, None]
    return np.where((u >> np.arange(k)) & 1, 1.0, -1.0)


def vertex_index(v) -> int:
    return int(sum(1 << j for j, x in enumerate(v) if x > 0))


def _vertex_scale(k: int) -> np.ndarray:
    """2^K * prod_k v_k for each vertex u."""
    return (2.0 ** k) * np.prod(vertices(k), axis=1) if k else np.ones(1)


def coeffs_to_table(c: np.ndarray) -> np.ndarray:
    """Vertex values g(v) from coefficients; works on (..., 2^K)."""
    n = c.shape[-1]
    k = n.bit_length() - 1
    return _vertex_scale(k) * c[..., (n - 1) ^ np.arange(n)]


def table_to_coeffs(t: np.ndarray) -> np.ndarray:
    n = t.shape[-1]
    k = n.bit_length() - 1
    return (t / _vertex_scale(k))[..., (n - 1) ^ np.arange(n)]


def _basis(z: np.ndarray) -> np.ndarray:
    """prod_k (z_k - d_k) for every d, indexed like the coefficients; z is (..., K)."""
    out = np.ones(z.shape[:-1] + (1,))
    for k in range(z.shape[-1]):
        zk = z[..., k:k + 1]
        out = np.concatenate([out * (zk + 1.0), out * (zk - 1.0)], axis=-1)
    return out


# --------------------------------------------------------------------- nodes

@dataclass
class LutNode:
    k: int
    p: int
    selection: np.ndarray  # K-P activation input indices; [0] is the preserved connection
    coeffs: np.ndarray  # 2^K reals

    def __post_init__(self):
        self.selection = np.asarray(self.selection, dtype=np.int64)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.k - self.p < 1:
            raise ConfigError("a node needs at least one activation input")
        if len(set(self.selection.tolist())) != len(self.selection):
            raise ConfigError("selection indices must be distinct")
        if self.coeffs.shape != (2 ** self.k,):
            raise ConfigError(f"expected {2 ** self.k} coefficients, got {self.coeffs.shape}")


def _join(node_or_coeffs, x, p) -> tuple[np.ndarray, np.ndarray]:
    c = node_or_coeffs.coeffs if isinstance(node_or_coeffs, LutNode) else np.asarray(node_or_coeffs, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    p = np.zeros(x.shape[:-1] + (0,)) if p is None else np.asarray(p, dtype=np.float64)
    z = np.concatenate([x, p], axis=-1)
    if (1 << z.shape[-1]) != c.shape[-1]:
        raise ConfigError(f"{z.shape[-1]} inputs do not match {c.shape[-1]} coefficients")
    return c, z


def lagrange_eval(node, x, p=None):
    """Evaluate the interpolant at real inputs ``x`` (activations) and ``p``
    (parameters); leading axes broadcast."""
    c, z = _join(node, x, p)
    return _basis(z) @ c


def lagrange_grad(node, x, p=None, upstream=1.0):
    """Returns (d_coeffs, d_x, d_p) scaled by ``upstream``."""
    c, z = _join(node, x, p)
    nx = np.asarray(x).shape[-1]
    up = np.asarray(upstream, dtype=np.float64)[..., None]
    dc = up * _basis(z)
    dz = np.empty(z.shape)
    for j in range(z.shape[-1]):
        # setting z_j = 0 turns each factor (z_j - d_j) into -d_j; dividing it out leaves the partial
        zj = z.copy()
        zj[..., j] = 0.0
        d = np.where((np.arange(c.shape[-1]) >> j) & 1, 1.0, -1.0)
        dz[..., j] = _basis(zj) @ (c / -d)
    dz = up * dz
    return dc, dz[..., :nx], dz[..., nx:]


def init_coeffs(k: int, p: int, w, rng: np.random.Generator | None = None,
                mode: str = "memory") -> tuple[np.ndarray, np.ndarray]:
    """Coefficients making the node reproduce sum_i x_i * w_i.

    With P = 0 the solution is unique.  With P > 0 the first
    q = min(P, K-P) parameter inputs are seeded with the matching weights and
    the rest drawn from {-1, 1}:

    * ``memory``: the weights of the first q activation inputs are read from
      the parameter inputs, g(x, p) = sum_{i<q} x_i p_i + sum_{i>=q} x_i w_i,
      so the identity holds whenever p equals its initial value and one
      coefficient set serves every tile.
    * ``replicate``: g(x, p) = sum_i x_i w_i on every parameter branch.
    """
    kx = k - p
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (kx,):
        raise ConfigError(f"expected {kx} weights, got {w.shape}")
    q = min(p, kx)
    p_init = np.empty(p)
    p_init[:q] = w[:q]
    if p > q:
        if rng is None:
            raise ConfigError("rng required to draw the remaining parameter inputs")
        p_init[q:] = rng.choice([-1.0, 1.0], size=p - q)
    v = vertices(k)
    if p == 0 or mode == "replicate":
        table = v[:, :kx] @ w
    elif mode == "memory":
        table = (v[:, :q] * v[:, kx:kx + q]).sum(axis=1) + v[:, q:kx] @ w[q:]
    else:
        raise ConfigError(f"unknown init mode {mode!r}")
    coeffs = table_to_coeffs(table)

    xs = vertices(kx)
    if mode == "replicate" and p:
        ps = vertices(p)
        got = lagrange_eval(coeffs, np.repeat(xs, len(ps), axis=0), np.tile(ps, (len(xs), 1)))
        want = np.repeat(xs @ w, len(ps))
    else:
        got = lagrange_eval(coeffs, xs, np.broadcast_to(p_init, (len(xs), p)))
        want = xs @ w
    if np.max(np.abs(got - want)) > 1e-9:
        raise InternalError("coefficient initialisation failed its identity check")
    return coeffs, p_init


# ---------------------------------------------------------------- tiled layer

@dataclass
class TiledLutLayer:
    """LUT array replacing the surviving connections of one layer.

    Fan-in indices follow the layer's patch layout (position-major, channel
    minor).  Input channels split into ``t_in`` contiguous groups and outputs
    into ``t_out`` groups; physical node ``m`` sits at (relative output,
    relative fan-in) and is reused by every tile, each use being one logical
    operation with its own parameter word.
    """
    k: int
    p: int
    t_in: int
    t_out: int
    fan_in: int
    out_features: int
    channels: int  # input channels per window position
    requested_k: int
    phys_out: np.ndarray  # (M,)
    phys_sel: np.ndarray  # (M, K-P) relative fan-in indices
    coeffs: Tensor  # (M, 2^K)
    op_phys: np.ndarray  # (N,)
    op_tile_in: np.ndarray
    op_tile_out: np.ndarray
    op_out: np.ndarray  # absolute output index
    op_sel: np.ndarray  # (N, K-P) absolute fan-in indices
    pvals: Tensor  # (N, P)
    table_mode: str = "real"
    meta: dict = field(default_factory=dict)

    @property
    def kx(self) -> int:
        return self.k - self.p

    @property
    def n_phys(self) -> int:
        return int(self.phys_out.shape[0])

    @property
    def n_ops(self) -> int:
        return int(self.op_phys.shape[0])

    @property
    def tile(self) -> int:
        return self.t_in * self.t_out

    def tables(self) -> np.ndarray:
        return coeffs_to_table(self.coeffs.data)

    def param_weights(self, pv: np.ndarray | None = None) -> np.ndarray:
        """Multilinear weights over the 2^P parameter vertices, (N, 2^P)."""
        pv = self.pvals.data if pv is None else pv
        if self.p == 0:
            return np.ones((self.n_ops, 1))
        qs = vertices(self.p)
        return np.prod((1.0 + qs[None, :, :] * pv[:, None, :]) / 2.0, axis=2)

    def parameters(self) -> list[Tensor]:
        return [self.coeffs, self.pvals] if self.p else [self.coeffs]

    def clamp(self) -> None:
        np.clip(self.pvals.data, -1.0, 1.0, out=self.pvals.data)


def fanin_layout(fan_in: int, channels: int, t_in: int):
    if channels <= 0 or fan_in % channels:
        raise ConfigError("fan-in is not a whole number of channel groups")
    if channels % t_in:
        raise ConfigError(f"T_i={t_in} does not divide {channels} input channels")
    return fan_in // channels, channels // t_in


def rel_to_abs(rel: np.ndarray, tile_in: np.ndarray, channels: int, t_in: int) -> np.ndarray:
    """Absolute fan-in index of relative index ``rel`` (N, k) in input tile ``tile_in`` (N,)."""
    cg = channels // t_in
    pos, c = np.divmod(rel, cg)
    return pos * channels + np.asarray(tile_in)[:, None] * cg + c


def expand_layer(keep: np.ndarray, eff_weights: np.ndarray, k: int, p: int, t_in: int, t_out: int,
                 rng: np.random.Generator, channels: int | None = None,
                 prepruning_weights: np.ndarray | None = None, reconnect: str = "zero",
                 init_mode: str = "memory") -> TiledLutLayer:
    """Replace each surviving connection of a pruned layer with a LUT node.

    ``keep`` and ``eff_weights`` are (O, F); ``eff_weights`` holds the binary
    weights the pruned layer used.  ``channels`` is the number of input
    channels per window position (defaults to F for dense layers).  Extra
    activation inputs are drawn without replacement from the same window and
    input-channel group as the preserved connection.  ``reconnect`` picks the
    initial weight of those extra inputs: ``zero`` keeps every node an exact
    copy of its original connection, ``prepruning`` uses the real weight the
    connection had before pruning when it was pruned away.
    """
    if not feasible(k, p):
        raise ConfigError(f"(K, P) = ({k}, {p}) is infeasible")
    if p == 0 and t_in * t_out != 1:
        raise ConfigError("P = 0 layers must be unrolled (T_i = T_o = 1)")
    keep = np.asarray(keep, dtype=bool)
    o_total, fan_in = keep.shape
    channels = fan_in if channels is None else channels
    positions, cg = fanin_layout(fan_in, channels, t_in)
    if o_total % t_out:
        raise ConfigError(f"T_o={t_out} does not divide {o_total} outputs")
    if init_mode == "replicate" and t_in * t_out != 1:
        raise ConfigError("replicated initialisation cannot share coefficients across tiles")
    if reconnect not in ("zero", "prepruning"):
        raise ConfigError(f"unknown reconnect mode {reconnect!r}")
    og = o_total // t_out
    rel_fan = positions * cg
    kx = min(k - p, rel_fan)
    k_eff = kx + p

    oo, jj = np.nonzero(keep)
    to, orel = np.divmod(oo, og)
    pos, c = np.divmod(jj, channels)
    ti, crel = np.divmod(c, cg)
    jrel = pos * cg + crel
    key = orel * rel_fan + jrel
    phys_keys, op_phys = np.unique(key, return_inverse=True)
    phys_out, phys_first = np.divmod(phys_keys, rel_fan)
    m = phys_keys.shape[0]

    sel = np.empty((m, kx), dtype=np.int64)
    sel[:, 0] = phys_first
    for i in range(m):
        if kx > 1:
            pool = np.delete(np.arange(rel_fan), phys_first[i])
            sel[i, 1:] = rng.choice(pool, size=kx - 1, replace=False)

    op_sel = rel_to_abs(sel[op_phys], ti, channels, t_in)
    first_w = eff_weights[oo, jj]
    n = oo.shape[0]
    w_ops = np.zeros((n, kx))
    w_ops[:, 0] = first_w
    if reconnect == "prepruning" and kx > 1:
        extra = prepruning_weights[oo[:, None], op_sel[:, 1:]]
        w_ops[:, 1:] = np.where(keep[oo[:, None], op_sel[:, 1:]], 0.0, extra)

    # with zero-weight extras only the preserved connection reads its weight
    # from memory, so every node starts as an exact XNOR
    q = min(p, kx) if reconnect == "prepruning" else min(p, 1)
    v = vertices(k_eff)
    # extras not read from memory share one weight per physical node
    shared = np.zeros((m, kx))
    np.add.at(shared, op_phys, w_ops)
    counts = np.bincount(op_phys, minlength=m)[:, None]
    shared /= counts
    if p == 0 or init_mode == "replicate":
        tables = shared @ v[:, :kx].T
    else:
        tables = (v[:, :q] * v[:, kx:kx + q]).sum(axis=1)[None, :] + shared[:, q:] @ v[:, q:kx].T
    pvals = np.empty((n, p))
    pvals[:, :q] = w_ops[:, :q]
    if p > q:
        pvals[:, q:] = rng.choice([-1.0, 1.0], size=(n, p - q))

    layer = TiledLutLayer(
        k=k_eff, p=p, t_in=t_in, t_out=t_out, fan_in=fan_in, out_features=o_total, channels=channels,
        requested_k=k, phys_out=phys_out, phys_sel=sel, coeffs=parameter(table_to_coeffs(tables), name="lut_coeffs"),
        op_phys=op_phys.astype(np.int64), op_tile_in=ti, op_tile_out=to, op_out=oo.astype(np.int64),
        op_sel=op_sel.astype(np.int64), pvals=parameter(pvals, name="lut_params"),
        meta={"reconnect": reconnect, "init_mode": init_mode},
    )
    if reconnect == "zero" or layer.tile == 1:
        _check_init(layer, w_ops)
    return layer


def _check_init(layer: TiledLutLayer, w_ops: np.ndarray) -> None:
    xs = vertices(layer.kx)
    tables = layer.tables()
    wq = layer.param_weights()
    # value of every op at every activation vertex, parameters at their initial values
    vals = np.einsum("nuq,nq->nu",
                     tables[layer.op_phys].reshape(layer.n_ops, 2 ** layer.p, 2 ** layer.kx).transpose(0, 2, 1), wq)
    if np.max(np.abs(vals - w_ops @ xs.T), initial=0.0) > 1e-9:
        raise InternalError("expanded layer does not reproduce the pruned layer")


def tiled_forward_reference(layer: TiledLutLayer, x: np.ndarray) -> np.ndarray:
    """Direct evaluation of the interpolants at (possibly real) activations
    ``x`` of shape (B, F); slow, used as an oracle."""
    out = np.zeros((x.shape[0], layer.out_features))
    c = layer.coeffs.data
    for n in range(layer.n_ops):
        z = x[:, layer.op_sel[n]]
        pv = np.broadcast_to(layer.pvals.data[n], (x.shape[0], layer.p))
        out[:, layer.op_out[n]] += lagrange_eval(c[layer.op_phys[n]], z, pv)
    return out


def lut_array(bits: Tensor, layer: TiledLutLayer) -> Tensor:
    """Sum of node outputs per output channel for a +/-1 input plane (B, F)."""
    xT = np.ascontiguousarray((bits.data > 0).T, dtype=np.uint8)
    table = layer.tables()
    hard = layer.table_mode == "ste"
    vt = np.where(table >= 0, 1.0, -1.0) if hard else table
    wq = np.ascontiguousarray(layer.param_weights())
    yT, uu = _kernels.lut_forward(xT, layer.op_sel, layer.op_phys, layer.op_out, wq, vt, layer.out_features)

    def bw(g):
        gV, gwq, gxT = _kernels.lut_backward(uu, layer.op_sel, layer.op_phys, layer.op_out, wq, vt,
                                             np.ascontiguousarray(g.T), bits.requires_grad, xT.shape[0])
        if hard:
            gV = gV * (np.abs(table) <= 1.0)
        n = gV.shape[1]
        layer.coeffs._accumulate((gV * _vertex_scale(layer.k))[:, (n - 1) ^ np.arange(n)])
        if layer.p:
            layer.pvals._accumulate(_param_weight_grad(layer.pvals.data, gwq, layer.p))
        if bits.requires_grad:
            bits._accumulate(gxT.T)
    return Tensor(yT.T, _parents=(bits, layer.coeffs, layer.pvals), _backward=bw)


def _param_weight_grad(pv: np.ndarray, gwq: np.ndarray, p: int) -> np.ndarray:
    qs = vertices(p)
    fac = (1.0 + qs[None, :, :] * pv[:, None, :]) / 2.0  # (N, Q, P)
    out = np.zeros_like(pv)
    for k in range(p):
        others = np.prod(np.delete(fac, k, axis=2), axis=2) if p > 1 else np.ones(fac.shape[:2])
        out[:, k] = np.sum(gwq * others * qs[None, :, k] / 2.0, axis=1)
    return out
