"""Reduced CNV-style convolutional recipe on the 8x8 scikit-learn digits.

    python3 scripts/cnv_digits.py --out runs/cnv_digits

Runs all three phases and export through the regular pipeline, then prints
the area report and the hardened test error.  Needs the ``digits`` extra.
"""
import argparse

from lutlearn.experiments import hardened_error
from lutlearn.pipeline import PipelineConfig, load_dataset, load_phase, run_all

CNV_SMALL = ["conv:16:3:1:same", "bn", "conv:16:3:1:same", "bn", "maxpool:2",
             "conv:32:3:1:same", "bn", "conv:32:3:1:same", "bn", "maxpool:2",
             "dense:64", "bn", "dense:10", "bn", "softmax"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/cnv_digits")
    ap.add_argument("--density", type=float, default=0.3)
    ap.add_argument("--klut", type=int, default=4)
    ap.add_argument("--pinputs", type=int, default=1)
    ap.add_argument("--tile", default="2x2")
    ap.add_argument("--phase-epochs", default="15,5,10")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cfg = PipelineConfig(layers=CNV_SMALL, dataset="digits", density=args.density, klut=args.klut,
                         pinputs=args.pinputs, tile=tuple(int(v) for v in args.tile.split("x")),
                         phase_epochs=tuple(int(v) for v in args.phase_epochs.split(",")),
                         batch_size=50, seed=args.seed, out_dir=args.out)
    ds = load_dataset(cfg)
    res = run_all(cfg, ds)
    print(res.area.table())
    err = hardened_error(load_phase(args.out, 3), ds.x_test, ds.y_test)
    print(f"hardened test error {err:.4f} on {len(ds.x_test)} images")


if __name__ == "__main__":
    main()
