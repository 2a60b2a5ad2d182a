"""Command-line entry point.

    lutlearn train   --config cfg.json --out runs/a
    lutlearn prune   --out runs/a --density 0.15
    lutlearn expand  --out runs/a --klut 4 --pinputs 1 --tile 2x2
    lutlearn export  --out runs/a
    lutlearn simulate --out runs/a
    lutlearn report  --out runs/a
    lutlearn run     ...  (all of the above in sequence)
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import archive, pipeline
from .errors import ConfigError, FormatError, InternalError
from .netlist import input_planes


def _tile(text: str) -> tuple[int, int]:
    try:
        ti, to = text.lower().split("x")
        return int(ti), int(to)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tile must look like 2x4, got {text!r}") from None


def _epochs(text: str) -> tuple[int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("phase epochs take three comma-separated counts")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lutlearn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", dest="out_dir", help="run directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--dataset", choices=["mnist", "synthetic", "digits"])
        p.add_argument("--data-path")
        p.add_argument("--n-train", type=int)
        p.add_argument("--n-test", type=int)
        p.add_argument("--phase-epochs", type=_epochs, help="e.g. 20,5,20")
        p.add_argument("--density", type=float)
        p.add_argument("--theta", type=float)
        p.add_argument("--klut", type=int)
        p.add_argument("--pinputs", type=int)
        p.add_argument("--tile", type=_tile, help="TIxTO, e.g. 2x4")
        p.add_argument("--targets", type=lambda s: [int(v) for v in s.split(",")])
        p.add_argument("--table-mode", choices=["real", "ste"])
        p.add_argument("--reconnect", choices=["zero", "prepruning"])
        p.add_argument("--optimizer", choices=["adam", "sgd"])

    for name, help_ in [("train", "phase 1: real-valued training"),
                        ("prune", "phase 2: prune and retrain binarized"),
                        ("expand", "phase 3: expand into LUTs and retrain"),
                        ("export", "harden; write netlist, Verilog and area report"),
                        ("simulate", "run the integer simulator on the test set"),
                        ("report", "print the area report and metrics"),
                        ("run", "all phases and export")]:
        common(sub.add_parser(name, help=help_))
    return ap


def resolve_config(args) -> pipeline.PipelineConfig:
    base = {}
    out = args.out_dir
    if args.config:
        base = json.loads(Path(args.config).read_text())
    elif out and (Path(out) / "config.json").exists():
        base = json.loads((Path(out) / "config.json").read_text())
    if args.density is not None:
        base["density"], base["theta"] = args.density, None
    if args.theta is not None:
        base["theta"], base["density"] = args.theta, None
    for key in ("out_dir", "seed", "dataset", "data_path", "n_train", "n_test", "phase_epochs", "klut", "pinputs",
                "tile", "targets", "table_mode", "reconnect", "optimizer"):
        v = getattr(args, key, None)
        if v is not None:
            base[key] = list(v) if isinstance(v, tuple) else v
    return pipeline.PipelineConfig.from_dict(base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out_dir)
        cmd = args.command
        if cmd == "run":
            res = pipeline.run_all(cfg)
            print(res.area.table())
            return 0
        if cmd in ("train", "prune", "expand", "export", "simulate"):
            ds = pipeline.load_dataset(cfg)
        metrics = pipeline.read_metrics(out)
        if cmd == "train":
            archive.atomic_write(out / "config.json", cfg.to_json() + "\n")
            m = pipeline.Metrics()
            net = pipeline.run_phase1_train(cfg, ds, m)
            pipeline.save_phase(out, 1, net, cfg)
            pipeline.write_metrics(out, metrics.merge_phase(m, 1))
        elif cmd in ("prune", "expand"):
            phase = 2 if cmd == "prune" else 3
            net = pipeline.load_phase(out, phase - 1)
            archive.atomic_write(out / "config.json", cfg.to_json() + "\n")
            m = pipeline.Metrics()
            step = pipeline.run_phase2_prune_retrain if phase == 2 else pipeline.run_phase3_expand_retrain
            step(net, cfg, ds, m)
            pipeline.save_phase(out, phase, net, cfg)
            pipeline.write_metrics(out, metrics.merge_phase(m, phase))
        elif cmd == "export":
            net = pipeline.load_phase(out, 3)
            res = pipeline.export(net, cfg, ds, metrics)
            print(res.area.table())
        elif cmd == "simulate":
            net = pipeline.load_phase(out, 3)
            nl = archive.load_netlist(out / "netlist.lla")
            s, pred = nl.simulate(input_planes(net, ds.x_test))
            logits, s_ref = net.hardened_forward(ds.x_test)
            mism = int(np.sum(np.any((s != s_ref).reshape(len(s), -1), axis=1)))
            print(f"simulated top-1 error {np.mean(pred != ds.y_test):.4f} on {len(pred)} samples; "
                  f"{mism} mismatches against the hardened trainer")
            return 1 if mism else 0
        elif cmd == "report":
            area = archive.load_netlist(out / "netlist.lla").area()
            print(area.table())
            print()
            print(metrics.to_csv(), end="")
        return 0
    except (ConfigError, FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except InternalError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
