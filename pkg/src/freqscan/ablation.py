"""Ablations over the causal band order and the number of bands K."""

from __future__ import annotations

import csv
import io
from dataclasses import replace

import numpy as np

from freqscan.serialization import sequence_length
from freqscan.train import TrainConfig, train

ORDER_VARIANTS = ("low_to_high", "high_to_low", "random")
K_VALUES = (1, 2, 3, 4, 5, 6)
TABLE_BASE_GRID = 14

ORDER_FIELDS = ["order", "seeds", "accuracies", "mean", "std"]
K_FIELDS = ["K", "band_grids", "length", "length_base14", "accuracy"]

# Desk-scale base for the ablations: ~2 min per run on one CPU core.
DESK_ABLATION = TrainConfig(n_train=512, n_test=256, epochs=8, batch_size=16)


def run_order_ablation(base: TrainConfig, seeds=(0, 1, 2), variants=ORDER_VARIANTS, log=None) -> list[dict]:
    """Train each order variant once per seed; the random order is redrawn per seed."""
    rows = []
    for order in variants:
        accs = []
        for seed in seeds:
            cfg = replace(base, seed=seed, order=order, order_seed=seed)
            accs.append(train(cfg).test_accuracy)
            if log is not None:
                log(f"order={order} seed={seed} accuracy={accs[-1]:.4f}")
        rows.append({"order": order, "seeds": list(seeds), "accuracies": accs,
                     "mean": float(np.mean(accs)), "std": float(np.std(accs))})
    return rows


def run_k_ablation(base: TrainConfig, k_values=K_VALUES, log=None) -> list[dict]:
    """Train once per K; also report the length the same K gives on a 14x14 base grid."""
    rows = []
    for K in k_values:
        cfg = replace(base, K=K)
        ser = cfg.model_config().serialization
        acc = train(cfg).test_accuracy
        rows.append({"K": K, "band_grids": ser.band_grids, "length": ser.seq_len,
                     "length_base14": sequence_length(K, TABLE_BASE_GRID, True), "accuracy": acc})
        if log is not None:
            log(f"K={K} length={ser.seq_len} accuracy={acc:.4f}")
    return rows


def run_ablation(base: TrainConfig, axis: str, seeds=(0, 1, 2), log=None) -> list[dict]:
    if axis == "order":
        return run_order_ablation(base, seeds, log=log)
    if axis == "K":
        return run_k_ablation(base, log=log)
    raise ValueError(f"unknown ablation axis {axis!r}; choose order or K")


def ablation_csv(rows: list[dict], axis: str) -> str:
    buf = io.StringIO()
    fields = ORDER_FIELDS if axis == "order" else K_FIELDS
    w = csv.DictWriter(buf, fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        out = dict(r)
        if axis == "order":
            out["seeds"] = ";".join(map(str, r["seeds"]))
            out["accuracies"] = ";".join(f"{a:.6f}" for a in r["accuracies"])
            out["mean"], out["std"] = f"{r['mean']:.6f}", f"{r['std']:.6f}"
        else:
            out["band_grids"] = ";".join(map(str, r["band_grids"]))
            out["accuracy"] = f"{r['accuracy']:.6f}"
        w.writerow(out)
    return buf.getvalue()

