"""Pruning-robustness comparison: an unpruned binarized baseline, a pruned
binarized network and a LUT network expanded from the same pruned source.

All three start from one real-valued training run.  The pruned BNN receives
the same number of retraining epochs as the LUT network (phase 2 plus phase
3), so the comparison isolates the expansion itself.  Accuracies are
measured on the hardened integer model.
"""
from __future__ import annotations

import copy
import dataclasses
import time

import numpy as np

from .data import Dataset
from .netlist import harden, input_planes
from .pipeline import (Metrics, PipelineConfig, run_phase1_train, run_phase2_prune_retrain, run_phase3_expand_retrain,
                       train_epochs)


def hardened_error(net, x: np.ndarray, y: np.ndarray, batch: int = 1000) -> float:
    nl = harden(net)
    wrong = 0
    for i in range(0, len(x), batch):
        _, pred = nl.simulate(input_planes(net, x[i:i + batch]))
        wrong += int(np.sum(pred != y[i:i + batch]))
    return wrong / len(x)


def pruning_robustness(cfg: PipelineConfig, ds: Dataset, log=print) -> dict:
    t0 = time.time()
    res = {"density": cfg.density, "klut": cfg.klut, "pinputs": cfg.pinputs, "n_train": len(ds.x_train),
           "n_test": len(ds.x_test)}
    e1, e2, e3 = cfg.phase_epochs
    real = run_phase1_train(cfg, ds, Metrics())
    res["real_error"] = float(np.mean(real.predict(ds.x_test) != ds.y_test))
    log(f"phase 1 done: real-valued error {res['real_error']:.4f} ({time.time() - t0:.0f} s)")

    dense_cfg = dataclasses.replace(cfg, density=1.0, theta=None)
    base = copy.deepcopy(real)
    run_phase2_prune_retrain(base, dense_cfg, ds, Metrics())
    train_epochs(base, ds, "binary", e3, cfg.lr[2], cfg, 4, Metrics())
    res["bnn_unpruned_error"] = hardened_error(base, ds.x_test, ds.y_test)
    log(f"unpruned BNN error {res['bnn_unpruned_error']:.4f} ({time.time() - t0:.0f} s)")

    pruned = copy.deepcopy(real)
    run_phase2_prune_retrain(pruned, cfg, ds, Metrics())
    lut = copy.deepcopy(pruned)
    train_epochs(pruned, ds, "binary", e3, cfg.lr[2], cfg, 4, Metrics())
    res["bnn_pruned_error"] = hardened_error(pruned, ds.x_test, ds.y_test)
    log(f"pruned BNN error {res['bnn_pruned_error']:.4f} ({time.time() - t0:.0f} s)")

    run_phase3_expand_retrain(lut, cfg, ds, Metrics())
    res["lut_error"] = hardened_error(lut, ds.x_test, ds.y_test)
    log(f"LUT network error {res['lut_error']:.4f} ({time.time() - t0:.0f} s)")
    res["seconds"] = time.time() - t0
    return res


def robustness_verdict(res: dict, baseline_min: float = 0.97, margin: float = 0.02) -> tuple[bool, list[str]]:
    """Checks the expected trend; returns (ok, failed conditions)."""
    acc = {k: 1.0 - res[k] for k in ("bnn_unpruned_error", "bnn_pruned_error", "lut_error")}
    base = acc["bnn_unpruned_error"]
    checks = {
        f"baseline accuracy {base:.4f} >= {baseline_min}": base >= baseline_min,
        f"LUT accuracy {acc['lut_error']:.4f} > pruned BNN {acc['bnn_pruned_error']:.4f}":
            acc["lut_error"] > acc["bnn_pruned_error"],
        f"pruned BNN within {margin:.0%} of baseline": base - acc["bnn_pruned_error"] <= margin,
        f"LUT network within {margin:.0%} of baseline": base - acc["lut_error"] <= margin,
    }
    failed = [k for k, v in checks.items() if not v]
    return not failed, failed
