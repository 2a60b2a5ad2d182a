"""Three-phase flow: real-valued training, pruning with binarized retraining,
LUT expansion with retraining; then hardening and export."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive
from .data import Dataset, default_mnist_dir, digits, load_mnist, synthetic
from .errors import ConfigError, InternalError
from .grad import check_finite, make_optimizer, softmax_cross_entropy
from .lutops import feasible
from .model import LFC, Network
from .netlist import AreaReport, HardNetlist, harden, input_planes
from .prune import density as mask_density
from .quant import sparsity_regularizer
from .verilog import emit_verilog

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
METRIC_COLUMNS = ("phase", "epoch", "loss", "top1_error", "density", "logical_luts", "est_physical_luts")
PHASE_FILES = {1: "phase1.lla", 2: "phase2.lla", 3: "phase3.lla"}


@dataclass
class PipelineConfig:
    layers: list = field(default_factory=lambda: list(LFC))
    dataset: str = "mnist"  # mnist | synthetic | digits
    data_path: str | None = None
    n_train: int | None = None
    n_test: int | None = None
    density: float | None = 0.15
    theta: float | None = None
    targets: list | None = None  # expanded layer indices; default all but the first
    klut: int = 4
    pinputs: int = 0
    tile: tuple = (1, 1)
    layer_overrides: dict = field(default_factory=dict)  # "index" -> {klut, pinputs, tile}
    phase_epochs: tuple = (20, 5, 20)
    lr: tuple = (1e-3, 1e-2, 1e-3)
    batch_size: int = 100
    lam: float = 5e-7
    optimizer: str = "adam"
    seed: int = 0
    out_dir: str = "runs/default"
    reconnect: str = "zero"
    table_mode: str = "ste"  # ste: sign tables forward, straight-through backward; real: interpolant values
    check_tol: float = 1e-6
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.tile = tuple(self.tile)
        self.phase_epochs = tuple(int(e) for e in self.phase_epochs)
        self.lr = tuple(float(v) for v in self.lr)

    def validate(self, n_blocks: int | None = None) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} is not supported")
        if len(self.phase_epochs) != 3 or min(self.phase_epochs) < 0:
            raise ConfigError("phase_epochs needs three non-negative counts")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if (self.density is None) == (self.theta is None):
            raise ConfigError("set exactly one of density and theta")
        if self.table_mode not in ("real", "ste"):
            raise ConfigError(f"unknown table mode {self.table_mode!r}")
        for idx in self.target_layers(n_blocks or 0) if n_blocks else []:
            k, p, (ti, to) = self.lut_params(idx)
            if not feasible(k, p):
                raise ConfigError(f"layer {idx}: (K, P) = ({k}, {p}) is infeasible")
            if p == 0 and ti * to != 1:
                raise ConfigError(f"layer {idx}: P = 0 must be unrolled")

    def target_layers(self, n_blocks: int) -> list[int]:
        t = list(range(1, n_blocks)) if self.targets is None else [int(i) for i in self.targets]
        for i in t:
            if not 0 <= i < n_blocks:
                raise ConfigError(f"target layer {i} does not exist")
        return t

    def lut_params(self, idx: int):
        o = self.layer_overrides.get(str(idx), {})
        return int(o.get("klut", self.klut)), int(o.get("pinputs", self.pinputs)), tuple(o.get("tile", self.tile))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def choose_tiling(out_channels: int, in_channels: int, total: int) -> tuple[int, int]:
    """Split a tiling factor, giving output tiling as much of it as divides."""
    for to in range(total, 0, -1):
        if total % to == 0 and out_channels % to == 0 and in_channels % (total // to) == 0:
            return total // to, to
    raise ConfigError(f"no tiling of {total} fits {in_channels} inputs and {out_channels} outputs")


# ------------------------------------------------------------------ metrics

class Metrics:
    def __init__(self, rows: list[dict] | None = None):
        self.rows = rows or []

    def add(self, **row) -> None:
        self.rows.append({c: row.get(c, "") for c in METRIC_COLUMNS})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Metrics":
        rows = []
        for r in csv.DictReader(io.StringIO(text)):
            rows.append({k: _parse(v) for k, v in r.items()})
        return cls(rows)

    def merge_phase(self, other: "Metrics", phase) -> "Metrics":
        keep = [r for r in self.rows if str(r["phase"]) != str(phase)]
        return Metrics(keep + [r for r in other.rows if str(r["phase"]) == str(phase)])


def _parse(v: str):
    if v == "":
        return ""
    for t in (int, float):
        try:
            return t(v)
        except ValueError:
            pass
    return v


# --------------------------------------------------------------------- data

def load_dataset(cfg: PipelineConfig) -> Dataset:
    if cfg.dataset == "mnist":
        path = cfg.data_path or default_mnist_dir()
        if path is None:
            raise FileNotFoundError("MNIST not found: set data_path, $LUTLEARN_MNIST, or place IDX files in data/mnist")
        ds = load_mnist(path, seed=cfg.seed)
    elif cfg.dataset == "synthetic":
        ds = synthetic(seed=cfg.seed)
    elif cfg.dataset == "digits":
        ds = digits(seed=cfg.seed, image=any(str(t).startswith("conv") for t in cfg.layers))
    else:
        raise ConfigError(f"unknown dataset {cfg.dataset!r}")
    return ds.subset(cfg.n_train, cfg.n_test)


# ----------------------------------------------------------------- training

def _lut_count(net: Network) -> int:
    total = 0
    for b in net.blocks:
        if b.lut is not None:
            total += b.lut.n_ops
        elif b.mask is not None:
            total += b.mask.kept
        else:
            total += b.w.data.size
    return total


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, mode: str, batch: int = 500) -> float:
    if len(x) == 0:
        return float("nan")
    return float(np.mean(net.predict(x, mode, batch) != y))


def train_epochs(net: Network, ds: Dataset, mode: str, epochs: int, lr: float, cfg: PipelineConfig,
                 phase: int, metrics: Metrics, lam: float = 0.0) -> None:
    params = net.parameters(mode)
    opt = make_optimizer(cfg.optimizer, params, lr)
    weights = net.weights()
    for epoch in range(1, epochs + 1):
        order = np.random.default_rng([cfg.seed, phase, epoch]).permutation(len(ds.x_train))
        total, seen, omega = 0.0, 0, 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            net.zero_grad()
            logits = check_finite(net.forward(ds.x_train[idx], mode, train=True), "logits")
            loss = softmax_cross_entropy(logits, ds.y_train[idx])
            if lam > 0:
                reg = sparsity_regularizer(weights, lam)
                omega = float(reg.data)
                loss = loss + reg
            loss.backward()
            opt.step()
            net.post_step(mode)
            total += float(loss.data) * len(idx)
            seen += len(idx)
        err = evaluate(net, ds.x_test, ds.y_test, mode)
        dens = mask_density(net.masks()) if net.masks() else 1.0
        log.info("phase %d epoch %d loss %.5f err %.4f omega %.3g", phase, epoch, total / max(seen, 1), err, omega)
        metrics.add(phase=phase, epoch=epoch, loss=total / max(seen, 1), top1_error=err, density=dens,
                    logical_luts=_lut_count(net))


def run_phase1_train(cfg: PipelineConfig, ds: Dataset, metrics: Metrics | None = None) -> Network:
    metrics = metrics if metrics is not None else Metrics()
    net = Network(cfg.layers, ds.input_shape, seed=cfg.seed)
    cfg.validate(len(net.blocks))
    if net.n_classes < ds.n_classes:
        raise ConfigError(f"network has {net.n_classes} outputs for {ds.n_classes} classes")
    train_epochs(net, ds, "real", cfg.phase_epochs[0], cfg.lr[0], cfg, 1, metrics, lam=cfg.lam)
    return net


def run_phase2_prune_retrain(net: Network, cfg: PipelineConfig, ds: Dataset, metrics: Metrics | None = None) -> Network:
    metrics = metrics if metrics is not None else Metrics()
    theta = net.prune(theta=cfg.theta, density=cfg.density if cfg.theta is None else None)
    # binarizer levels start from the inputs each layer sees
    net.forward(ds.x_train[:cfg.batch_size * 10], "binary", train=False)
    err = evaluate(net, ds.x_test, ds.y_test, "binary")
    log.info("pruned at theta %.6g, density %.4f, error before retraining %.4f", theta, mask_density(net.masks()), err)
    metrics.add(phase=2, epoch=0, top1_error=err, density=mask_density(net.masks()), logical_luts=_lut_count(net))
    train_epochs(net, ds, "binary", cfg.phase_epochs[1], cfg.lr[1], cfg, 2, metrics)
    return net


def check_expansion(before: np.ndarray, after: np.ndarray, tol: float) -> float:
    diff = float(np.max(np.abs(before - after), initial=0.0))
    if diff > tol:
        raise InternalError(f"expanded network departs from its source by {diff:.3g} (limit {tol:.1g})")
    return diff


def run_phase3_expand_retrain(net: Network, cfg: PipelineConfig, ds: Dataset, metrics: Metrics | None = None) -> Network:
    metrics = metrics if metrics is not None else Metrics()
    if not net.masks():
        raise ConfigError("phase 3 needs a pruned network from phase 2")
    targets = cfg.target_layers(len(net.blocks))
    cfg.validate(len(net.blocks))
    rng = np.random.default_rng([cfg.seed, 3])
    probe = np.random.default_rng([cfg.seed, 4]).uniform(-1, 1, size=(100,) + net.input_shape)
    before = net.forward(probe, "binary").data
    for idx in targets:
        k, p, (ti, to) = cfg.lut_params(idx)
        net.expand([idx], k, p, ti, to, rng, reconnect=cfg.reconnect)
        net.blocks[idx].lut.table_mode = cfg.table_mode
    # zero-weight extras start every table at exactly +/-1, so both table modes reproduce the source
    if cfg.reconnect == "zero":
        diff = check_expansion(before, net.forward(probe, "lut").data, cfg.check_tol)
        log.info("expansion check passed (max difference %.3g)", diff)
    err = evaluate(net, ds.x_test, ds.y_test, "lut")
    metrics.add(phase=3, epoch=0, top1_error=err, density=mask_density(net.masks()), logical_luts=_lut_count(net))
    train_epochs(net, ds, "lut", cfg.phase_epochs[2], cfg.lr[2], cfg, 3, metrics)
    return net


# ------------------------------------------------------------------- export

@dataclass
class ExportResult:
    netlist: HardNetlist
    area: AreaReport
    files: dict


def export(net: Network, cfg: PipelineConfig, ds: Dataset | None = None, metrics: Metrics | None = None,
           out_dir=None) -> ExportResult:
    out = Path(out_dir or cfg.out_dir)
    nl = harden(net)
    area = nl.area()
    files = {
        "netlist": out / "netlist.lla",
        "verilog": out / "lutnet.v",
        "verilog_primitive": out / "lutnet_primitive.v",
        "area_json": out / "area.json",
        "area_table": out / "area.txt",
    }
    archive.save_netlist(files["netlist"], nl)
    archive.atomic_write(files["verilog"], emit_verilog(nl, "generic"))
    archive.atomic_write(files["verilog_primitive"], emit_verilog(nl, "primitive"))
    archive.atomic_write(files["area_json"], area.to_json() + "\n")
    archive.atomic_write(files["area_table"], area.table() + "\n")
    if metrics is not None and ds is not None:
        _, pred = nl.simulate(input_planes(net, ds.x_test))
        t = area.totals()
        m = Metrics()
        m.add(phase="export", epoch=0, top1_error=float(np.mean(pred != ds.y_test)) if len(pred) else "",
              density=mask_density(net.masks()) if net.masks() else 1.0, logical_luts=t["logical_luts"],
              est_physical_luts=t["physical_luts"])
        merged = metrics.merge_phase(m, "export")
        metrics.rows = merged.rows
        write_metrics(out, metrics)
        files["metrics"] = out / "metrics.csv"
    return ExportResult(nl, area, files)


def write_metrics(out: Path, metrics: Metrics) -> None:
    archive.atomic_write(Path(out) / "metrics.csv", metrics.to_csv())


def read_metrics(out: Path) -> Metrics:
    p = Path(out) / "metrics.csv"
    return Metrics.from_csv(p.read_text()) if p.exists() else Metrics()


# ------------------------------------------------------------------ staging

def save_phase(out: Path, phase: int, net: Network, cfg: PipelineConfig) -> Path:
    path = Path(out) / PHASE_FILES[phase]
    # the output location is not part of the model
    conf = {k: v for k, v in json.loads(cfg.to_json()).items() if k != "out_dir"}
    archive.save_network(path, net, {"phase": phase, "config": conf})
    return path


def load_phase(out: Path, phase: int) -> Network:
    path = Path(out) / PHASE_FILES[phase]
    if not path.exists():
        raise FileNotFoundError(f"{path} is missing; run the phase {phase} step first")
    net, manifest = archive.load_network(path)
    if manifest.get("phase") != phase:
        raise ConfigError(f"{path} holds phase {manifest.get('phase')}, expected {phase}")
    return net


def run_all(cfg: PipelineConfig, ds: Dataset | None = None) -> ExportResult:
    out = Path(cfg.out_dir)
    ds = ds if ds is not None else load_dataset(cfg)
    archive.atomic_write(out / "config.json", cfg.to_json() + "\n")
    metrics = Metrics()
    net = run_phase1_train(cfg, ds, metrics)
    save_phase(out, 1, net, cfg)
    run_phase2_prune_retrain(net, cfg, ds, metrics)
    save_phase(out, 2, net, cfg)
    run_phase3_expand_retrain(net, cfg, ds, metrics)
    save_phase(out, 3, net, cfg)
    write_metrics(out, metrics)
    return export(net, cfg, ds, metrics)
