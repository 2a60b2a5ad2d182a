"""Hardening of trained networks into LUT netlists, plus area models and a
bit-exact integer simulator.

Signals are +/-1 values carried as bits (1 for +1).  A LUT mask bit ``u``
holds the output for the input pattern whose bit ``j`` is input ``j``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .errors import ConfigError, InternalError
from .grad import im2col
from .lutops import rel_to_abs
from .model import Block, Network, level_code
from .quant import sign

MAX_LUT = 6
PAIR_LIMIT = 5  # a fracturable 6-LUT holds two functions over at most five distinct inputs


# ------------------------------------------------------------------- LUTs

@dataclass
class HardLut:
    mask: np.ndarray  # uint8, 2^k entries
    inputs: list  # ("x", relative fan-in index) or ("p", parameter bit)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.mask.shape != (1 << len(self.inputs),):
            raise ConfigError(f"mask of {self.mask.size} entries for {len(self.inputs)} inputs")
        self.inputs = [tuple(i) for i in self.inputs]

    @property
    def k(self) -> int:
        return len(self.inputs)

    @property
    def constant(self) -> int | None:
        """Output (+1/-1) of a constant LUT, else None."""
        if self.mask.min() == self.mask.max():
            return 1 if self.mask[0] else -1
        return None


def depends_on(mask: np.ndarray, j: int) -> bool:
    u = np.arange(mask.size)
    lo = u[(u >> j) & 1 == 0]
    return bool(np.any(mask[lo] != mask[lo | (1 << j)]))


def cofactor(mask: np.ndarray, j: int, value: int) -> np.ndarray:
    """Mask of the function with input ``j`` fixed, remaining inputs renumbered."""
    u = np.arange(mask.size)
    keep = u[(u >> j) & 1 == value]
    return mask[keep]


def simplify(lut: HardLut) -> HardLut:
    """Drop every input whose two cofactors agree."""
    mask, inputs = lut.mask, list(lut.inputs)
    j = 0
    while j < len(inputs):
        if depends_on(mask, j):
            j += 1
        else:
            mask = cofactor(mask, j, 0)
            del inputs[j]
    return HardLut(mask, inputs)


def init_string(lut: HardLut, width: int = MAX_LUT) -> int:
    """INIT value of a ``width``-input primitive with unused inputs ignored."""
    if lut.k > width:
        raise InternalError(f"{lut.k}-input LUT does not fit a {width}-input primitive")
    u = np.arange(1 << width) & ((1 << lut.k) - 1)
    bits = lut.mask[u]
    return int(sum(int(b) << a for a, b in enumerate(bits)))


# --------------------------------------------------------------- popcount

@dataclass
class Popcount:
    n: int
    levels: list  # per level, list of (left width, right width or 0 for pass-through)
    cost: int

    @property
    def width(self) -> int:
        """Width annotation ceil(log2 n) of the summed count."""
        return 0 if self.n == 0 else max(1, math.ceil(math.log2(self.n)))

    @property
    def tree_width(self) -> int:
        """Bits needed to hold the full count 0..n."""
        return self.n.bit_length()


def build_popcount(n: int) -> Popcount:
    """Balanced adder tree over ``n`` one-bit inputs.  Cost model: one LUT per
    produced sum bit; pass-through wires are free."""
    if n < 0:
        raise ConfigError("popcount size must be >= 0")
    widths = [1] * n
    levels, cost = [], 0
    while len(widths) > 1:
        nxt, level = [], []
        for i in range(0, len(widths) - 1, 2):
            a, b = widths[i], widths[i + 1]
            w = max(a, b) + 1
            level.append((a, b))
            nxt.append(w)
            cost += w
        if len(widths) % 2:
            level.append((widths[-1], 0))
            nxt.append(widths[-1])
        levels.append(level)
        widths = nxt
    return Popcount(n, levels, cost)


# ---------------------------------------------------------------- packing

@dataclass
class Packing:
    pairs: list  # (i, j) index pairs sharing a physical LUT
    singles: list
    absorbed: list  # single-input LUTs folded into their consumer
    removed: list  # constant LUTs

    @property
    def physical(self) -> int:
        return len(self.pairs) + len(self.singles)


def _signals(i: int, lut: HardLut) -> set:
    # stored parameter bits are private to their LUT
    return {s if s[0] == "x" else (s[0], i, s[1]) for s in lut.inputs}


def can_pair(a: HardLut, b: HardLut, ia: int = 0, ib: int = 1) -> bool:
    if max(a.k, b.k) > PAIR_LIMIT:
        return False
    return len(_signals(ia, a) | _signals(ib, b)) <= PAIR_LIMIT


def pack_estimate(luts: list[HardLut], absorb_single_input: bool = True) -> Packing:
    """Greedy pairing of logical LUTs into physical 6-LUTs.

    LUTs are visited from widest to narrowest; each takes the unpaired partner
    sharing the most inputs, falling back to the widest partner that fits
    without sharing.
    """
    removed = [i for i, l in enumerate(luts) if l.k == 0]
    absorbed = [i for i, l in enumerate(luts) if l.k == 1] if absorb_single_input else []
    skip = set(removed) | set(absorbed)
    order = sorted((i for i in range(len(luts)) if i not in skip), key=lambda i: (-luts[i].k, i))
    users: dict = {}
    by_k: dict[int, list] = {k: [] for k in range(MAX_LUT + 1)}
    for i in order:
        for s in _signals(i, luts[i]):
            users.setdefault(s, []).append(i)
        by_k[luts[i].k].append(i)
    for k in by_k:
        by_k[k].reverse()  # pop() yields the lowest index first
    free = set(order)
    pairs, singles = [], []
    for i in order:
        if i not in free:
            continue
        free.discard(i)
        a = luts[i]
        best, best_key = None, None
        if a.k <= PAIR_LIMIT:
            shared: dict[int, int] = {}
            for s in _signals(i, a):
                for j in users.get(s, ()):
                    if j in free:
                        shared[j] = shared.get(j, 0) + 1
            for j, c in shared.items():
                b = luts[j]
                if b.k <= PAIR_LIMIT and a.k + b.k - c <= PAIR_LIMIT:
                    key = (c, b.k, -j)
                    if best_key is None or key > best_key:
                        best, best_key = j, key
            if best is None:
                for kb in range(min(PAIR_LIMIT - a.k, PAIR_LIMIT), 0, -1):
                    stack = by_k[kb]
                    while stack and stack[-1] not in free:
                        stack.pop()
                    if stack:
                        best = stack[-1]
                        break
        if best is None:
            singles.append(i)
        else:
            free.discard(best)
            pairs.append((i, best))
    return Packing(pairs, singles, absorbed, removed)


def audit_packing(luts: list[HardLut], packing: Packing) -> list[str]:
    """Violations of the pairing rules; empty when the packing is sound."""
    problems = []
    seen: dict[int, int] = {}
    for i, j in packing.pairs:
        if not can_pair(luts[i], luts[j], i, j):
            problems.append(f"pair ({i}, {j}) exceeds the shared-input limit")
    for i in [x for p in packing.pairs for x in p] + packing.singles + packing.absorbed + packing.removed:
        seen[i] = seen.get(i, 0) + 1
    for i in range(len(luts)):
        if seen.get(i, 0) != 1:
            problems.append(f"LUT {i} placed {seen.get(i, 0)} times")
    return problems


# -------------------------------------------------------- parameter counts

@dataclass(frozen=True)
class ParameterCount:
    mask: Fraction
    rom: Fraction

    @property
    def total(self) -> Fraction:
        return self.mask + self.rom

    def as_ints(self) -> tuple:
        return tuple(int(v) if v.denominator == 1 else float(v) for v in (self.mask, self.rom, self.total))


def parameter_count(n_nodes: int, density, k: int, p: int, t_in: int, t_out: int) -> ParameterCount:
    """Mask bits n*w*2^K/(Ti*To) and stored parameter bits n*w*P*Ti*To."""
    w = Fraction(density)
    if not 0 < w <= 1:
        raise ConfigError("density must be in (0, 1]")
    t = t_in * t_out
    return ParameterCount(n_nodes * w * Fraction(2 ** k, t), n_nodes * w * p * t)


# ---------------------------------------------------------------- netlist

@dataclass
class HardLayer:
    kind: str
    in_shape: tuple
    out: int
    kernel: int
    stride: int
    padding: str
    pool: int
    t_in: int
    t_out: int
    p: int
    luts: list  # live physical HardLuts
    lut_out: np.ndarray  # relative output channel of each LUT
    op_phys: np.ndarray
    op_out: np.ndarray
    op_tile: np.ndarray  # to * t_in + ti
    op_src: np.ndarray  # (N, MAX_LUT) absolute activation index or -1
    op_base: np.ndarray  # stored parameter bits shifted into place
    op_rom: np.ndarray  # raw parameter word of each op
    gammas: np.ndarray  # integer level scales
    bias: np.ndarray  # folded contribution of constant LUTs, per output
    k1: np.ndarray  # affine applied to the integer sum
    c0: np.ndarray
    thresholds: np.ndarray | None = None  # (O, 3)
    direction: np.ndarray | None = None  # +1, -1, or 0 for a constant code
    const_code: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.in_shape[-1]

    @property
    def tile(self) -> int:
        return self.t_in * self.t_out

    @property
    def fan_in(self) -> int:
        return self.kernel * self.kernel * self.channels if self.kind == "conv" else int(self.in_shape[0])

    def masks_array(self) -> np.ndarray:
        m = np.zeros((max(len(self.luts), 1), 1 << MAX_LUT), dtype=np.uint8)
        for i, l in enumerate(self.luts):
            m[i, :l.mask.size] = l.mask
        return m

    def popcounts(self) -> list[Popcount]:
        per = np.bincount(self.lut_out, minlength=self.out // self.t_out) if len(self.luts) else \
            np.zeros(self.out // self.t_out, dtype=np.int64)
        return [build_popcount(int(n)) for n in per]

    def active(self) -> np.ndarray:
        """Live operations per (tile, output channel)."""
        a = np.zeros((self.tile, self.out), dtype=np.int64)
        np.add.at(a, (self.op_tile, self.op_out), 1)
        return a


@dataclass
class HardNetlist:
    input_shape: tuple
    layers: list

    def simulate(self, planes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer evaluation on residual bit-planes of shape (2, N, *input).

        Returns (integer sums of the last layer, predicted classes).
        """
        planes = np.asarray(planes)
        bits = (planes > 0).astype(np.uint8)
        for li, L in enumerate(self.layers):
            s = L.gammas[0] * self._counts(L, bits[0]) + L.gammas[1] * self._counts(L, bits[1])
            if li == len(self.layers) - 1:
                s = s + L.bias
                return s, np.argmax(s * L.k1 + L.c0, axis=-1)
            code = threshold_codes(L, s)
            if L.pool:
                code = _pool_codes(code, L.pool)
            bits = np.stack([(code >> 1) & 1, code & 1]).astype(np.uint8)
        raise InternalError("empty netlist")

    @staticmethod
    def _counts(L: HardLayer, bits: np.ndarray) -> np.ndarray:
        n = bits.shape[0]
        if L.kind == "conv":
            cols, geom = im2col(bits, L.kernel, L.kernel, L.stride, L.padding, pad_value=0)
            ho, wo = geom[4], geom[5]
            shape = (n, ho, wo, L.out)
        else:
            cols = bits.reshape(n, -1)
            shape = (n, L.out)
        out = _kernels.hard_counts(np.ascontiguousarray(cols, dtype=np.uint8), L.op_src, L.op_base, L.op_phys,
                                   L.op_out, L.masks_array(), L.out)
        return out.reshape(shape)

    def area(self) -> "AreaReport":
        return AreaReport.of(self)


def threshold_codes(L: HardLayer, s: np.ndarray) -> np.ndarray:
    t = L.thresholds
    up = (s[..., None] >= t).sum(axis=-1)
    down = (s[..., None] <= t).sum(axis=-1)
    return np.where(L.direction > 0, up, np.where(L.direction < 0, down, L.const_code)).astype(np.int64)


def _pool_codes(code: np.ndarray, size: int) -> np.ndarray:
    n, h, w, c = code.shape
    ho, wo = h // size, w // size
    return code[:, :ho * size, :wo * size, :].reshape(n, ho, size, wo, size, c).max(axis=(2, 4))


def derive_thresholds(block: Block, next_gammas: np.ndarray, bias: np.ndarray, bound: np.ndarray):
    """Integer thresholds reproducing level_code(hard_affine(S + bias)) for
    every live sum S in [-bound, bound]."""
    k1, c0 = block.hard_affine_params()
    o = k1.shape[0]

    def code(s):
        return level_code((s + bias) * k1 + c0, next_gammas)

    direction = np.sign(k1).astype(np.int64)
    lo0, hi0 = -bound - 1, bound + 1
    thr = np.zeros((o, 3), dtype=np.int64)
    for j in range(1, 4):
        lo, hi = lo0.copy(), hi0.copy()
        # increasing: first S with code >= j; decreasing: last S with code >= j
        inc = direction > 0
        while np.any(hi - lo > 1):
            mid = (lo + hi) // 2
            ok = code(mid.astype(np.float64)) >= j
            hi = np.where(inc == ok, mid, hi)
            lo = np.where(inc != ok, mid, lo)
        thr[:, j - 1] = np.where(direction > 0, hi, lo)
    const_code = code(np.zeros(o))
    return thr, direction, const_code


def harden_layer(block: Block, next_block: Block | None) -> HardLayer:
    """Freeze one block: sign masks and parameter words, constant-LUT
    folding, simplification and threshold derivation."""
    if block.lut is not None:
        L = block.lut
        kx, p = L.kx, L.p
        tables = L.tables()
        prom = (L.pvals.data >= 0).astype(np.int64) @ (1 << np.arange(p)) if p else np.zeros(L.n_ops, dtype=np.int64)
        raw = []
        for m in range(L.n_phys):
            inputs = [("x", int(r)) for r in L.phys_sel[m]] + [("p", i) for i in range(p)]
            raw.append(HardLut((tables[m] >= 0).astype(np.uint8), inputs))
        t_in, t_out = L.t_in, L.t_out
        op_phys, op_out, op_rel_in = L.op_phys, L.op_out, L.op_tile_in
        op_tile = L.op_tile_out * t_in + L.op_tile_in
        if t_in * t_out == 1 and p:
            # unrolled: parameter bits are constants, fold them into the mask
            for n in range(L.n_ops):
                m = op_phys[n]
                raw[m] = HardLut(raw[m].mask[int(prom[n]) << kx:(int(prom[n]) + 1) << kx], raw[m].inputs[:kx])
            prom = np.zeros(L.n_ops, dtype=np.int64)
            p_eff = 0
        else:
            p_eff = p
        phys_out = L.phys_out
    else:
        w = block.eff_weights()
        oo, jj = np.nonzero(w)
        raw = [HardLut(np.array([0, 1] if w[o, j] > 0 else [1, 0]), [("x", int(j))]) for o, j in zip(oo, jj)]
        op_phys = np.arange(len(raw))
        op_out = oo.astype(np.int64)
        op_rel_in = np.zeros(len(raw), dtype=np.int64)
        op_tile = np.zeros(len(raw), dtype=np.int64)
        prom = np.zeros(len(raw), dtype=np.int64)
        t_in = t_out = 1
        p_eff = 0
        phys_out = oo.astype(np.int64)

    o_total = block.out
    gam = block.hard_gammas()
    simple = [simplify(l) for l in raw]
    live = [m for m, l in enumerate(simple) if l.constant is None]
    new_index = -np.ones(len(simple), dtype=np.int64)
    new_index[live] = np.arange(len(live))
    bias = np.zeros(o_total, dtype=np.int64)
    const_ops = 0
    keep_ops = []
    for n in range(len(op_phys)):
        c = simple[op_phys[n]].constant
        if c is None:
            keep_ops.append(n)
        else:
            bias[op_out[n]] += c * (gam[0] + gam[1])
            const_ops += 1
    keep_ops = np.array(keep_ops, dtype=np.int64)
    n_live = len(keep_ops)
    channels, cg = block.channels, block.channels // t_in
    op_src = -np.ones((n_live, MAX_LUT), dtype=np.int64)
    op_base = np.zeros(n_live, dtype=np.int64)
    for row, n in enumerate(keep_ops):
        lut = simple[op_phys[n]]
        for j, (kind, idx) in enumerate(lut.inputs):
            if kind == "x":
                pos, c = divmod(idx, cg)
                op_src[row, j] = pos * channels + op_rel_in[n] * cg + c
            else:
                op_base[row] |= ((int(prom[n]) >> idx) & 1) << j
    layer = HardLayer(
        kind=block.kind, in_shape=tuple(block.in_shape), out=o_total, kernel=block.kernel, stride=block.stride,
        padding=block.padding, pool=block.pool, t_in=t_in, t_out=t_out, p=p_eff,
        luts=[simple[m] for m in live], lut_out=np.asarray(phys_out, dtype=np.int64)[live],
        op_phys=new_index[op_phys[keep_ops]] if n_live else np.zeros(0, dtype=np.int64),
        op_out=np.asarray(op_out, dtype=np.int64)[keep_ops] if n_live else np.zeros(0, dtype=np.int64),
        op_tile=np.asarray(op_tile, dtype=np.int64)[keep_ops] if n_live else np.zeros(0, dtype=np.int64),
        op_src=op_src, op_base=op_base,
        op_rom=np.asarray(prom, dtype=np.int64)[keep_ops] if n_live else np.zeros(0, dtype=np.int64),
        gammas=gam, bias=bias, k1=block.hard_affine_params()[0], c0=block.hard_affine_params()[1],
        stats={"logical_ops": int(len(op_phys)), "repruned_ops": const_ops,
               "repruned_luts": len(simple) - len(live), "k_requested": int(block.lut.requested_k if block.lut else 1)},
    )
    if next_block is not None:
        counts = np.bincount(layer.op_out, minlength=o_total) if n_live else np.zeros(o_total, dtype=np.int64)
        bound = counts * (np.abs(gam).sum())
        layer.thresholds, layer.direction, layer.const_code = derive_thresholds(
            block, next_block.binarizer.gammas.data, bias, bound)
    return layer


def harden(net: Network) -> HardNetlist:
    layers = []
    for i, b in enumerate(net.blocks):
        nxt = net.blocks[i + 1] if i + 1 < len(net.blocks) else None
        layers.append(harden_layer(b, nxt))
    return HardNetlist(tuple(net.input_shape), layers)


def input_planes(net: Network, x: np.ndarray) -> np.ndarray:
    """Residual bit-planes of raw inputs, as the first layer sees them."""
    g = net.blocks[0].binarizer.gammas.data
    b1 = sign(x)
    return np.stack([b1, sign(x - g[0] * b1)])


# ------------------------------------------------------------------- area

@dataclass
class AreaReport:
    layers: list  # per-layer dicts

    @classmethod
    def of(cls, netlist: HardNetlist) -> "AreaReport":
        rows = []
        for i, L in enumerate(netlist.layers):
            pk = pack_estimate(L.luts)
            problems = audit_packing(L.luts, pk)
            if problems:
                raise InternalError("; ".join(problems[:3]))
            pcs = L.popcounts()
            rows.append({
                "layer": i,
                "logical_luts": len(L.luts),
                "physical_luts": pk.physical,
                "absorbed_single_input": len(pk.absorbed),
                "repruned_luts": L.stats.get("repruned_luts", 0),
                "popcount_luts": sum(pc.cost for pc in pcs),
                "mask_bits": int(sum(l.mask.size for l in L.luts)),
                "rom_bits": int(len(L.op_rom) * L.p) if L.tile > 1 else 0,
                "tiling": f"{L.t_in}x{L.t_out}",
            })
        return cls(rows)

    def totals(self) -> dict:
        keys = ["logical_luts", "physical_luts", "absorbed_single_input", "repruned_luts", "popcount_luts",
                "mask_bits", "rom_bits"]
        return {k: sum(r[k] for r in self.layers) for k in keys}

    def to_json(self) -> str:
        return json.dumps({"model": "greedy pairing estimate; popcount cost is one LUT per sum bit",
                           "note": "tile multiplexing logic is not counted",
                           "layers": self.layers, "totals": self.totals()}, indent=2, sort_keys=True)

    def table(self) -> str:
        cols = ["layer", "logical_luts", "physical_luts", "popcount_luts", "mask_bits", "rom_bits", "tiling"]
        rows = [[str(r[c]) for c in cols] for r in self.layers]
        t = self.totals()
        rows.append(["total"] + [str(t.get(c, "")) for c in cols[1:-1]] + [""])
        widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(cols)]
        fmt = "  ".join("{:>%d}" % w for w in widths)
        return "\n".join([fmt.format(*cols)] + [fmt.format(*r) for r in rows])
