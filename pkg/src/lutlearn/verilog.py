"""Verilog emission for hardened LUT layers.

Each layer yields three modules:

* ``<name>_array``: combinational LUT array plus one popcount tree per
  physical output.  Tiled layers take a ``tile`` index (``to * T_i + ti``)
  that selects activation inputs, stored parameter bits and enables.
* ``<name>_acc``: sequential accumulator turning per-tile counts of both
  bit-planes into signed sums, starting from the folded constant bias.
* ``<name>_thr``: combinational comparators producing the 2-bit level code
  of the next layer (omitted for the output layer, whose sums are exported).

``generic`` style writes truth tables as indexed ``localparam`` vectors;
``primitive`` style instantiates 6-input ``LUT6`` cells.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, InternalError
from .netlist import MAX_LUT, HardLayer, HardNetlist, build_popcount, init_string


def _bits(n: int) -> int:
    return max(1, (n - 1).bit_length())


def _hex(value: int, width: int) -> str:
    return f"{width}'h{value:0{(width + 3) // 4}x}"


def _bin(values, width: int) -> str:
    return f"{width}'b" + "".join("1" if v else "0" for v in reversed(list(values)))


def _signed(v: int, width: int) -> str:
    return f"-{width}'sd{-v}" if v < 0 else f"{width}'sd{v}"


def _sum_width(L: HardLayer) -> int:
    act = L.active().sum(axis=0) if len(L.op_out) else np.zeros(L.out, dtype=np.int64)
    bound = int(act.max(initial=0) * np.abs(L.gammas).sum() + np.abs(L.bias).max(initial=0))
    if L.thresholds is not None:
        bound = max(bound, int(np.abs(L.thresholds + L.bias[:, None]).max(initial=0)))
    return bound.bit_length() + 2


def _array_module(name: str, L: HardLayer, style: str) -> list[str]:
    tiled = L.tile > 1
    tw = _bits(L.tile)
    og = L.out // L.t_out
    cg = L.channels // L.t_in
    lines = [f"module {name}_array ("]
    ports = [f"    input  wire [{L.fan_in - 1}:0] x"]
    if tiled:
        ports.append(f"    input  wire [{tw - 1}:0] tile")
    pcs = L.popcounts()
    for o in range(og):
        ports.append(f"    output wire [{max(pcs[o].tree_width, 1) - 1}:0] cnt_{o}")
    lines.append(",\n".join(ports))
    lines.append(");")

    # per-LUT enable and stored parameter words, indexed by tile
    en = np.zeros((len(L.luts), L.tile), dtype=bool)
    rom = np.zeros((len(L.luts), L.tile), dtype=np.int64)
    en[L.op_phys, L.op_tile] = True
    rom[L.op_phys, L.op_tile] = L.op_rom

    used = sorted({idx for lut in L.luts for kind, idx in lut.inputs if kind == "x"})
    if tiled:
        for r in used:
            pos, c = divmod(r, cg)
            srcs = [pos * L.channels + (t % L.t_in) * cg + c for t in range(L.tile)]
            expr = f"x[{srcs[-1]}]"
            for t in range(L.tile - 2, -1, -1):
                expr = f"(tile == {tw}'d{t}) ? x[{srcs[t]}] : {expr}"
            lines.append(f"    wire xr_{r};")
            lines.append(f"    assign xr_{r} = {expr};")

    def signal(m: int, kind: str, idx: int) -> str:
        if kind == "x":
            return f"xr_{idx}" if tiled else f"x[{idx}]"
        return f"p_{m}_{idx}"

    for m, lut in enumerate(L.luts):
        if lut.k > MAX_LUT:
            raise InternalError(f"LUT {m} has {lut.k} inputs")
        for kind, idx in lut.inputs:
            if kind == "p":
                word = [(int(v) >> idx) & 1 for v in rom[m]]
                lines.append(f"    localparam [{L.tile - 1}:0] PROM_{m}_{idx} = {_bin(word, L.tile)};")
                lines.append(f"    wire p_{m}_{idx};")
                lines.append(f"    assign p_{m}_{idx} = PROM_{m}_{idx}[tile];")
        ins = [signal(m, k, i) for k, i in lut.inputs]
        lines.append(f"    wire g_{m};")
        if style == "generic":
            n = 1 << lut.k
            lines.append(f"    localparam [{n - 1}:0] LUT_{m} = {_hex(int(sum(int(b) << a for a, b in enumerate(lut.mask))), n)};")
            lines.append(f"    assign g_{m} = LUT_{m}[{{{', '.join(reversed(ins))}}}];")
        else:
            pins = ins + ["1'b0"] * (MAX_LUT - lut.k)
            conn = ", ".join(f".I{j}({s})" for j, s in enumerate(pins))
            lines.append(f"    LUT6 #(.INIT({_hex(init_string(lut), 64)})) u_lut_{m} (.O(g_{m}), {conn});")
        lines.append(f"    wire e_{m};")
        if tiled:
            lines.append(f"    localparam [{L.tile - 1}:0] EN_{m} = {_bin(en[m], L.tile)};")
            lines.append(f"    assign e_{m} = g_{m} & EN_{m}[tile];")
        else:
            lines.append(f"    assign e_{m} = g_{m};")

    members: list[list[int]] = [[] for _ in range(og)]
    for m, o in enumerate(L.lut_out):
        members[int(o)].append(m)
    for o in range(og):
        terms = [(f"e_{m}", 1) for m in members[o]]
        level = 0
        while len(terms) > 1:
            nxt = []
            for i in range(0, len(terms) - 1, 2):
                (a, wa), (b, wb) = terms[i], terms[i + 1]
                w = max(wa, wb) + 1
                s = f"pc_{o}_{level}_{i // 2}"
                lines.append(f"    wire [{w - 1}:0] {s};")
                lines.append(f"    assign {s} = {a} + {b};")
                nxt.append((s, w))
            if len(terms) % 2:
                nxt.append(terms[-1])
            terms = nxt
            level += 1
        out = terms[0][0] if terms else "1'b0"
        lines.append(f"    assign cnt_{o} = {out};")
    lines.append("endmodule")
    return lines


def _acc_module(name: str, L: HardLayer) -> list[str]:
    og = L.out // L.t_out
    tw = _bits(L.tile)
    sw = _sum_width(L)
    pcs = L.popcounts()
    act = L.active()
    lines = [f"module {name}_acc ("]
    ports = ["    input  wire clk", "    input  wire clear", "    input  wire plane", f"    input  wire [{tw - 1}:0] tile"]
    ports += [f"    input  wire [{max(pcs[o].tree_width, 1) - 1}:0] cnt_{o}" for o in range(og)]
    ports += [f"    output reg signed [{sw - 1}:0] s_{o}" for o in range(L.out)]
    lines.append(",\n".join(ports))
    lines.append(");")
    lines.append(f"    wire signed [{sw - 1}:0] g = plane ? {_signed(int(L.gammas[1]), sw)} : {_signed(int(L.gammas[0]), sw)};")
    lines.append("    always @(posedge clk) begin")
    lines.append("        if (clear) begin")
    for o in range(L.out):
        lines.append(f"            s_{o} <= {_signed(int(L.bias[o]), sw)};")
    lines.append("        end else begin")
    lines.append("            case (tile)")
    for t in range(L.tile):
        to = t // L.t_in
        lines.append(f"                {tw}'d{t}: begin")
        for o in range(og):
            a = to * og + o
            lines.append(f"                    s_{a} <= s_{a} + g * ($signed({{1'b0, cnt_{o}}}) * 2 - {int(act[t, a])});")
        lines.append("                end")
    lines.append("                default: ;")
    lines.append("            endcase")
    lines.append("        end")
    lines.append("    end")
    lines.append("endmodule")
    return lines


def _thr_module(name: str, L: HardLayer) -> list[str]:
    sw = _sum_width(L)
    lines = [f"module {name}_thr ("]
    ports = [f"    input  wire signed [{sw - 1}:0] s_{o}" for o in range(L.out)]
    ports += [f"    output wire [1:0] code_{o}" for o in range(L.out)]
    lines.append(",\n".join(ports))
    lines.append(");")
    for o in range(L.out):
        d = int(L.direction[o])
        if d == 0:
            lines.append(f"    assign code_{o} = 2'd{int(L.const_code[o])};")
            continue
        op = ">=" if d > 0 else "<="
        # the accumulator includes the constant-LUT bias; stored thresholds do not
        terms = [f"(s_{o} {op} {_signed(int(t + L.bias[o]), sw)})" for t in L.thresholds[o]]
        lines.append(f"    assign code_{o} = {' + '.join(terms)};")
    lines.append("endmodule")
    return lines


def emit_verilog(netlist: HardNetlist, style: str = "generic", prefix: str = "lutnet") -> str:
    if style not in ("generic", "primitive"):
        raise ConfigError(f"unknown style {style!r}")
    out = [f"// hardened LUT network, {len(netlist.layers)} layers, {style} style",
           "// +/-1 signals are carried as bits (1 = +1); level codes are {sign, residual sign}",
           "`default_nettype none", ""]
    for i, L in enumerate(netlist.layers):
        name = f"{prefix}_l{i}"
        out.append(f"// layer {i}: {L.kind}, {len(L.luts)} LUTs, tiling {L.t_in}x{L.t_out}")
        out += _array_module(name, L, style)
        out.append("")
        out += _acc_module(name, L)
        out.append("")
        if L.thresholds is not None:
            out += _thr_module(name, L)
            out.append("")
    out.append("`default_nettype wire")
    return "\n".join(out) + "\n"
