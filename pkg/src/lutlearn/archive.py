"""Versioned, byte-deterministic archives for trained networks and hardened
netlists.

An archive is a zip file holding ``manifest.json`` plus one ``.npy`` entry
per array.  Entries are sorted and carry a fixed timestamp, so identical
content always produces identical bytes.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .grad import BatchNormState, parameter
from .lutops import TiledLutLayer
from .model import Network
from .netlist import MAX_LUT, HardLayer, HardLut, HardNetlist
from .prune import PruneMask

FORMAT = "lutlearn-archive"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack(manifest: dict, arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        entries = {"manifest.json": json.dumps({"format": FORMAT, "version": VERSION, **manifest},
                                               sort_keys=True, indent=1).encode()}
        for name, arr in arrays.items():
            b = io.BytesIO()
            np.save(b, np.ascontiguousarray(arr), allow_pickle=False)
            entries[f"{name}.npy"] = b.getvalue()
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])
    return buf.getvalue()


def unpack(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as e:
        raise FormatError(f"not an archive: {e}") from None
    with zf:
        names = zf.namelist()
        if "manifest.json" not in names:
            raise FormatError("archive has no manifest")
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise FormatError("unknown archive format")
        if manifest.get("version") != VERSION:
            raise FormatError(f"unsupported archive version {manifest.get('version')}")
        arrays = {n[:-4]: np.load(io.BytesIO(zf.read(n)), allow_pickle=False) for n in names if n.endswith(".npy")}
    return manifest, arrays


def save(path, manifest: dict, arrays: dict) -> None:
    atomic_write(path, pack(manifest, arrays))


def load(path) -> tuple[dict, dict]:
    return unpack(Path(path).read_bytes())


# ----------------------------------------------------------------- networks

_LUT_ARRAYS = ("phys_out", "phys_sel", "op_phys", "op_tile_in", "op_tile_out", "op_out", "op_sel")
_LUT_SCALARS = ("k", "p", "t_in", "t_out", "fan_in", "out_features", "channels", "requested_k", "table_mode")


def network_to_archive(net: Network, extra: dict | None = None) -> tuple[dict, dict]:
    blocks, arrays = [], {}
    for i, b in enumerate(net.blocks):
        pre = f"b{i}/"
        arrays[pre + "w"] = b.w.data
        arrays[pre + "alpha"] = b.alpha.data
        arrays[pre + "gammas"] = b.binarizer.gammas.data
        info = {"gammas_initialized": b.binarizer.initialized, "bn": b.use_bn, "mask": b.mask is not None,
                "lut": b.lut is not None}
        if b.use_bn:
            arrays[pre + "bn_scale"] = b.bn_scale.data
            arrays[pre + "bn_shift"] = b.bn_shift.data
            arrays[pre + "bn_mean"] = b.bn_state.mean
            arrays[pre + "bn_var"] = b.bn_state.var
        if b.mask is not None:
            arrays[pre + "mask"] = b.mask.keep
            info["theta"] = b.mask.theta
        if b.lut is not None:
            L = b.lut
            for name in _LUT_ARRAYS:
                arrays[pre + "lut_" + name] = getattr(L, name)
            arrays[pre + "lut_coeffs"] = L.coeffs.data
            arrays[pre + "lut_pvals"] = L.pvals.data
            info["lut_info"] = {name: getattr(L, name) for name in _LUT_SCALARS}
            info["lut_info"]["meta"] = L.meta
        blocks.append(info)
    manifest = {"kind": "network", "layers": [_spec_token(s) for s in net.specs],
                "input_shape": list(net.input_shape), "blocks": blocks, **(extra or {})}
    return manifest, arrays


def _spec_token(spec) -> str:
    if spec.kind == "conv2d":
        o, k, s, same = spec.dims
        return f"conv:{o}:{k}:{s}" + (":same" if same else "")
    name = {"batchnorm": "bn"}.get(spec.kind, spec.kind)
    return ":".join([name] + [str(d) for d in spec.dims])


def network_from_archive(manifest: dict, arrays: dict) -> Network:
    if manifest.get("kind") != "network":
        raise FormatError("archive does not hold a network")
    net = Network(manifest["layers"], manifest["input_shape"])
    for i, (b, info) in enumerate(zip(net.blocks, manifest["blocks"])):
        pre = f"b{i}/"
        b.w.data[...] = arrays[pre + "w"]
        b.alpha.data[...] = arrays[pre + "alpha"]
        b.binarizer.gammas.data[...] = arrays[pre + "gammas"]
        b.binarizer.initialized = info["gammas_initialized"]
        if info["bn"]:
            b.bn_scale.data[...] = arrays[pre + "bn_scale"]
            b.bn_shift.data[...] = arrays[pre + "bn_shift"]
            b.bn_state = BatchNormState(arrays[pre + "bn_mean"].copy(), arrays[pre + "bn_var"].copy())
        if info["mask"]:
            b.mask = PruneMask(arrays[pre + "mask"].astype(bool), info["theta"])
        if info["lut"]:
            li = dict(info["lut_info"])
            meta = li.pop("meta", {})
            b.lut = TiledLutLayer(
                **li, **{name: arrays[pre + "lut_" + name].astype(np.int64) for name in _LUT_ARRAYS},
                coeffs=parameter(arrays[pre + "lut_coeffs"], name="lut_coeffs"),
                pvals=parameter(arrays[pre + "lut_pvals"], name="lut_params"), meta=meta)
    return net


def save_network(path, net: Network, extra: dict | None = None) -> None:
    save(path, *network_to_archive(net, extra))


def load_network(path) -> tuple[Network, dict]:
    manifest, arrays = load(path)
    return network_from_archive(manifest, arrays), manifest


# ----------------------------------------------------------------- netlists

_LAYER_ARRAYS = ("lut_out", "op_phys", "op_out", "op_tile", "op_src", "op_base", "op_rom", "gammas", "bias", "k1", "c0")
_LAYER_OPTIONAL = ("thresholds", "direction", "const_code")
_LAYER_SCALARS = ("kind", "out", "kernel", "stride", "padding", "pool", "t_in", "t_out", "p")


def netlist_to_archive(nl: HardNetlist) -> tuple[dict, dict]:
    layers, arrays = [], {}
    for i, L in enumerate(nl.layers):
        pre = f"l{i}/"
        info = {name: getattr(L, name) for name in _LAYER_SCALARS}
        info["in_shape"] = list(L.in_shape)
        info["stats"] = L.stats
        for name in _LAYER_ARRAYS:
            arrays[pre + name] = getattr(L, name)
        for name in _LAYER_OPTIONAL:
            if getattr(L, name) is not None:
                arrays[pre + name] = getattr(L, name)
        # LUTs: masks padded to 64 entries; inputs as (kind, index) with kind 0=x, 1=p, -1=unused
        arrays[pre + "lut_k"] = np.array([l.k for l in L.luts], dtype=np.int64)
        arrays[pre + "lut_masks"] = L.masks_array()[:len(L.luts)]
        wires = -np.ones((len(L.luts), MAX_LUT, 2), dtype=np.int64)
        for m, l in enumerate(L.luts):
            for j, (kind, idx) in enumerate(l.inputs):
                wires[m, j] = (0 if kind == "x" else 1, idx)
        arrays[pre + "lut_inputs"] = wires
        layers.append(info)
    return {"kind": "netlist", "input_shape": list(nl.input_shape), "layers": layers}, arrays


def netlist_from_archive(manifest: dict, arrays: dict) -> HardNetlist:
    if manifest.get("kind") != "netlist":
        raise FormatError("archive does not hold a netlist")
    layers = []
    for i, info in enumerate(manifest["layers"]):
        pre = f"l{i}/"
        luts = []
        for m, k in enumerate(arrays[pre + "lut_k"]):
            ins = [("x" if kind == 0 else "p", int(idx)) for kind, idx in arrays[pre + "lut_inputs"][m, :k]]
            luts.append(HardLut(arrays[pre + "lut_masks"][m, :1 << int(k)].copy(), ins))
        kw = {name: info[name] for name in _LAYER_SCALARS}
        kw.update({name: arrays[pre + name] for name in _LAYER_ARRAYS})
        kw.update({name: arrays.get(pre + name) for name in _LAYER_OPTIONAL})
        layers.append(HardLayer(in_shape=tuple(info["in_shape"]), luts=luts, stats=info["stats"], **kw))
    return HardNetlist(tuple(manifest["input_shape"]), layers)


def save_netlist(path, nl: HardNetlist) -> None:
    save(path, *netlist_to_archive(nl))


def load_netlist(path) -> HardNetlist:
    return netlist_from_archive(*load(path))
