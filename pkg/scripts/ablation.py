"""Table-1 style comparison of tres_cnn, its no-skip/no-dropout ablation and the MLP baseline.

    python scripts/ablation.py --seed 14 --kinds tres_cnn tres_cnn_plain
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import time

from tresdiag.config import load_config
from tresdiag.datagen import generate_dataset
from tresdiag.evaluate import evaluate
from tresdiag.model import build_model
from tresdiag.numerics import Rng
from tresdiag.train import train


def run_kind(kind, ds, cfg):
    arch = dataclasses.replace(cfg.arch, n_params=len(ds.names), n_times=ds.config.n_samples)
    arch = arch.ablated() if kind == "tres_cnn_plain" else dataclasses.replace(arch, kind=kind)
    model = build_model(arch, Rng(cfg.seed).child("init"), ds.names)
    start = time.perf_counter()
    trained, tlog = train(model, ds, dataclasses.replace(cfg.train, seed=cfg.seed))
    return evaluate(trained, ds.test_cases), tlog, time.perf_counter() - start


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--kinds", nargs="+", default=["tres_cnn", "tres_cnn_plain", "mlp_baseline"])
    a = p.parse_args(argv)
    cfg = load_config(a.config)
    if a.seed is not None:
        cfg.seed = a.seed
    ds = generate_dataset(cfg.dataset, seed=cfg.seed)
    print("| Model | SSE (average) | Micro-F1 | Accuracy | Iterations | Time (s) |")
    print("|---|---|---|---|---|---|")
    for kind in a.kinds:
        m, tlog, secs = run_kind(kind, ds, cfg)
        print(f"| {kind} | {m.sse_avg:.4f} | {m.micro_f1:.3f} | {m.accuracy:.3f} | "
              f"{tlog.final_iteration} ({tlog.termination}) | {secs:.0f} |", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
