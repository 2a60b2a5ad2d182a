import re

import numpy as np
import pytest

from helpers import trained_lut_net
from lutlearn.errors import ConfigError
from lutlearn.model import level_code
from lutlearn.netlist import HardLut, HardNetlist, harden, input_planes, threshold_codes
from lutlearn.verilog import emit_verilog
from verilog_eval import evaluate, parse_modules


@pytest.fixture(scope="module")
def tiled_net():
    return trained_lut_net(k=3, p=1, tile=(2, 2), targets=(1, 2), steps=6)


def _layer_inputs(nl, net, x, i):
    """Bit-planes (2, N, F) entering layer ``i`` according to the simulator."""
    planes = input_planes(net, x)
    if i == 0:
        return (planes > 0).astype(int)
    s, _ = HardNetlist(nl.input_shape, nl.layers[:i]).simulate(planes)
    prev = nl.layers[i - 1]
    code = threshold_codes(prev, s - prev.bias)
    return np.stack([(code >> 1) & 1, code & 1])


@pytest.mark.parametrize("style", ["generic", "primitive"])
def test_array_and_accumulator_match_simulator(tiled_net, rng, style):
    nl = harden(tiled_net)
    mods = parse_modules(emit_verilog(nl, style))
    x = rng.uniform(-1, 1, size=(3, 16))
    for i, L in enumerate(nl.layers):
        bits = _layer_inputs(nl, tiled_net, x, i)
        want, _ = HardNetlist(nl.input_shape, nl.layers[:i + 1]).simulate(input_planes(tiled_net, x))
        if i < len(nl.layers) - 1:
            want = want + L.bias  # the simulator only folds the bias into the output layer
        act = L.active()
        og = L.out // L.t_out
        for n in range(len(x)):
            s = L.bias.astype(np.int64).copy()
            for plane in range(2):
                xv = int(sum(int(b) << j for j, b in enumerate(bits[plane, n])))
                for t in range(L.tile):
                    env = evaluate(mods[f"lutnet_l{i}_array"], {"x": xv, "tile": t})
                    to = t // L.t_in
                    for o in range(og):
                        a = to * og + o
                        s[a] += L.gammas[plane] * (2 * env[f"cnt_{o}"] - act[t, a])
            assert np.array_equal(s, want[n]), f"layer {i} sample {n}"


def test_accumulator_constants(tiled_net):
    nl = harden(tiled_net)
    text = emit_verilog(nl)
    for i, L in enumerate(nl.layers):
        body = parse_modules(text)[f"lutnet_l{i}_acc"][1]
        subs = [int(v) for v in re.findall(r"\* 2 - (\d+)\)", body)]
        og = L.out // L.t_out
        act = L.active()
        assert subs == [int(act[t, (t // L.t_in) * og + o]) for t in range(L.tile) for o in range(og)]


def test_threshold_module_matches_level_code(tiled_net):
    nl = harden(tiled_net)
    mods = parse_modules(emit_verilog(nl))
    L = nl.layers[1]
    gam = tiled_net.blocks[2].binarizer.gammas.data
    block = tiled_net.blocks[1]
    span = int(L.active().sum(axis=0).max() * np.abs(L.gammas).sum())
    for live in range(-span, span + 1, max(1, span // 40)):
        env = evaluate(mods["lutnet_l1_thr"], {f"s_{o}": live + int(L.bias[o]) for o in range(L.out)})
        got = np.array([env[f"code_{o}"] for o in range(L.out)])
        ref = level_code(block.hard_affine(np.full(L.out, live + L.bias, dtype=np.float64)), gam)
        assert np.array_equal(got, ref)


def test_buffer_lut_is_identity():
    L = trained_lut_net(k=1, targets=(1,), steps=1)
    nl = harden(L)
    mods = parse_modules(emit_verilog(nl))
    layer = nl.layers[0]
    assert all(lut.k == 1 for lut in layer.luts)
    # each buffer drives its enable wire with its input or the inverse
    for xv in (0, (1 << 16) - 1, 0x5A5A):
        env = evaluate(mods["lutnet_l0_array"], {"x": xv})
        for m, lut in enumerate(layer.luts):
            bit = (xv >> lut.inputs[0][1]) & 1
            assert env[f"g_{m}"] == (bit if lut.mask.tolist() == [0, 1] else 1 - bit)


def test_xnor_init_value(tiled_net):
    nl = harden(tiled_net)
    nl.layers[0].luts[0] = HardLut([1, 0, 0, 1], [("x", 0), ("x", 1)])
    text = emit_verilog(nl, "primitive")
    assert "LUT6 #(.INIT(64'h9999999999999999)) u_lut_0 " in text


def test_emission_deterministic(tiled_net):
    assert emit_verilog(harden(tiled_net)) == emit_verilog(harden(tiled_net))
    assert emit_verilog(harden(tiled_net), "primitive") == emit_verilog(harden(tiled_net), "primitive")


def test_unknown_style(tiled_net):
    with pytest.raises(ConfigError):
        emit_verilog(harden(tiled_net), "netlistish")
