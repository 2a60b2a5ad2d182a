"""Compare a pruned BNN with a (K, P) LUT network at matched density.

    python3 scripts/pruning_robustness.py --data-path data/mnist --out runs/robustness.json

Defaults follow the LFC-style MNIST setup.  Writes a JSON summary and prints
whether the expected ordering held.
"""
import argparse
import json
from pathlib import Path

from lutlearn.experiments import pruning_robustness, robustness_verdict
from lutlearn.pipeline import PipelineConfig, load_dataset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-path", help="MNIST IDX directory (default: $LUTLEARN_MNIST or data/mnist)")
    ap.add_argument("--density", type=float, default=0.15)
    ap.add_argument("--klut", type=int, default=4)
    ap.add_argument("--pinputs", type=int, default=0)
    ap.add_argument("--phase-epochs", default="20,5,20")
    ap.add_argument("--lr", default="1e-3,1e-2,1e-3", help="per-phase learning rates")
    ap.add_argument("--table-mode", default="ste", choices=["ste", "real"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/robustness.json")
    args = ap.parse_args(argv)

    cfg = PipelineConfig(dataset="mnist", data_path=args.data_path, density=args.density, klut=args.klut,
                         pinputs=args.pinputs, phase_epochs=tuple(int(v) for v in args.phase_epochs.split(",")),
                         lr=tuple(float(v) for v in args.lr.split(",")), table_mode=args.table_mode,
                         seed=args.seed)
    res = pruning_robustness(cfg, load_dataset(cfg), log=lambda s: print(s, flush=True))
    ok, failed = robustness_verdict(res)
    res["trend_holds"] = ok
    res["failed"] = failed
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(res, indent=2) + "\n")
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
