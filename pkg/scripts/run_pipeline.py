"""Run generate -> train -> attribute -> select -> retrain -> report under one root directory.

    python scripts/run_pipeline.py runs/seed14 --seed 14
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from tresdiag.cli import main as cli


def run_pipeline(root: Path, seed: int | None = None, config: str | None = None, k: int | None = None,
                 force: bool = False, workers: int = 1) -> int:
    common = []
    if config:
        common += ["--config", config]
    if seed is not None:
        common += ["--seed", str(seed)]
    if force:
        common.append("--force")
    d = {name: str(root / name) for name in ("dataset", "full", "attributions", "selection", "selected", "report")}
    steps = [
        ["generate", "--out", d["dataset"], "--workers", str(workers)],
        ["train", "--dataset", d["dataset"], "--out", d["full"]],
        ["attribute", "--checkpoint", str(Path(d["full"]) / "checkpoint.json"), "--dataset", d["dataset"],
         "--out", d["attributions"]],
        ["select", "--attributions", d["attributions"], "--out", d["selection"]] + (["--k", str(k)] if k else []),
        ["train", "--dataset", d["dataset"], "--channels", str(Path(d["selection"]) / "selected_channels.txt"),
         "--out", d["selected"]],
        ["report", "--full", d["full"], "--selected", d["selected"], "--dataset", d["dataset"],
         "--selection", d["selection"], "--out", d["report"]],
    ]
    for step in steps:
        start = time.perf_counter()
        print(f"== {step[0]}", flush=True)
        code = cli(step + common)
        print(f"   ({time.perf_counter() - start:.1f} s)", flush=True)
        if code:
            return code
    return 0


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("root", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    a = p.parse_args(argv)
    return run_pipeline(a.root, a.seed, a.config, a.k, a.force, a.workers)


if __name__ == "__main__":
    sys.exit(main())
