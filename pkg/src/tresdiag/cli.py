"""Command-line entry point: ``tres-diag <generate|train|attribute|select|report>``.

Every randomized stage draws from one master seed through named child
streams (dataset, init, shuffle, dropout, lime).  Exit codes: 0 success,
2 configuration or validation error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig, load_config
from .datagen import MANIFEST, generate_dataset, load_dataset, read_manifest, save_dataset
from .errors import ConfigError, NumericError, TresDiagError, ValidationError
from .evaluate import Metrics, compare_runs, evaluate, render_markdown
from .interpret import attribution_filename, explain_cases, load_attribution, save_attribution
from .model import build_model, load_model, save_model
from .numerics import Rng
from .select import read_channel_file, select_from_attributions, write_selection
from .train import TrainLog, train

log = logging.getLogger("tresdiag")

CHECKPOINT = "checkpoint.json"
TRAIN_LOG = "train_log.jsonl"
RUN_METRICS = "metrics.json"
REPORT_JSON = "report.json"
REPORT_MD = "report.md"


def _write_json(path: Path, doc) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path, what: str):
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and not path.is_dir():
        raise ConfigError(f"output path {path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    return cfg


def _resolve_channels(spec: str | None, catalog_names: Sequence[str]) -> list[str]:
    """'all' or a channel file; the result keeps catalog order."""
    if spec is None or spec == "all":
        return list(catalog_names)
    names = read_channel_file(spec)
    if not names:
        raise ConfigError(f"channel file {spec} lists no channels")
    unknown = [n for n in names if n not in catalog_names]
    if unknown:
        raise ConfigError(f"channel file {spec} names unknown channels: {unknown}")
    if len(set(names)) != len(names):
        raise ConfigError(f"channel file {spec} repeats channels")
    wanted = set(names)
    return [n for n in catalog_names if n in wanted]


# --------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> int:
    cfg = _config(args)
    gen = cfg.dataset
    if args.cases is not None:
        gen = dataclasses.replace(gen, n_cases=int(args.cases))
    out = _prepare_out(Path(args.out or cfg.paths.dataset), args.force)
    ds = generate_dataset(gen, seed=cfg.seed, workers=args.workers)
    save_dataset(ds, out)
    print(f"wrote {len(ds.cases)} cases to {out}: {len(ds.train_cases)} train / "
          f"{len(ds.test_cases)} test, {len(ds.names)} channels")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.dataset or cfg.paths.dataset)
    channels = _resolve_channels(args.channels, ds.names)
    arch = dataclasses.replace(cfg.arch, n_params=len(channels), n_times=ds.config.n_samples)
    if args.kind:
        arch = arch.ablated() if args.kind == "tres_cnn_plain" else dataclasses.replace(arch, kind=args.kind)
    arch.validate()
    out = _prepare_out(Path(args.out or cfg.paths.run_full), args.force)
    tcfg = dataclasses.replace(cfg.train, seed=cfg.seed)
    model = build_model(arch, Rng(cfg.seed).child("init"), channels)
    model.metadata["selected_channels"] = channels if len(channels) < len(ds.names) else None
    trained, tlog = train(model, ds, tcfg, progress=args.verbose)
    metrics = evaluate(trained, ds.test_cases)
    save_model(trained, out / CHECKPOINT)
    tlog.save(out / TRAIN_LOG)
    _write_json(out / RUN_METRICS, {
        "metrics": metrics.to_dict(),
        "test_case_ids": [c.case_id for c in ds.test_cases],
        "channels": channels,
        "kind": arch.kind,
        "iterations": tlog.final_iteration,
        "termination": tlog.termination,
        "seed": cfg.seed,
    })
    print(f"{arch.kind} on {len(channels)} channels: terminated after {tlog.final_iteration} "
          f"iterations ({tlog.termination}); test accuracy {metrics.accuracy:.4f}, "
          f"micro-F1 {metrics.micro_f1:.4f}, SSE(avg) {metrics.sse_avg:.5f}")
    return 0


def cmd_attribute(args) -> int:
    cfg = _config(args)
    ckpt = Path(args.checkpoint or Path(cfg.paths.run_full) / CHECKPOINT)
    dataset_dir = Path(args.dataset or cfg.paths.dataset)
    out = Path(args.out or cfg.paths.attributions)
    if args.dry_run:
        manifest = read_manifest(dataset_dir)
        reads = [str(ckpt), str(dataset_dir / MANIFEST)]
        reads += [str(dataset_dir / e["file"]) for e in manifest["cases"] if e["split"] == "train"]
        for r in reads:
            print(f"read {r}")
        for e in manifest["cases"]:
            if e["split"] == "train":
                print(f"write {out / attribution_filename(int(e['case_id']))}")
        return 0
    model = load_model(ckpt)
    ds = load_dataset(dataset_dir, splits={"train"})
    missing = [c for c in model.channels if c not in ds.names]
    if missing:
        raise ValidationError(f"checkpoint channels absent from the dataset: {missing}")
    cases = [c.select(model.channels) if tuple(c.names) != tuple(model.channels) else c
             for c in ds.train_cases]
    _prepare_out(out, args.force)
    start = time.perf_counter()
    pairs = explain_cases(model, cases, cfg.interpret, Rng(cfg.seed).child("lime"))
    for smap, lime in pairs:
        save_attribution(out, smap, lime)
    print(f"wrote {len(pairs)} attribution files to {out} "
          f"({time.perf_counter() - start:.1f} s)")
    return 0


def cmd_select(args) -> int:
    cfg = _config(args)
    src = Path(args.attributions or cfg.paths.attributions)
    files = sorted(src.glob("attr_*.json")) if src.is_dir() else []
    if not files:
        raise ValidationError(f"no attribution files in {src}")
    k = int(args.k if args.k is not None else cfg.select.k)
    pairs = [load_attribution(f) for f in files]
    lumped, ranking = select_from_attributions(
        pairs, k, (cfg.select.gradcam_weight, cfg.select.lime_weight))
    out = _prepare_out(Path(args.out or cfg.paths.selection), args.force)
    write_selection(out, lumped, ranking)
    print(f"selected {k} of {len(ranking.channels)} parameters from {len(files)} cases:")
    for r, name in enumerate(ranking.selected, 1):
        print(f"  {r:2d}. {name}")
    return 0


def _load_run(path: Path) -> tuple[dict, Metrics, TrainLog]:
    doc = _read_json(path / RUN_METRICS, "run metrics")
    log_path = path / TRAIN_LOG
    if not log_path.is_file():
        raise FileNotFoundError(f"training log not found: {log_path}")
    m = doc["metrics"]
    return doc, Metrics(m["accuracy"], m["micro_f1"], m["sse_avg"], m["n_cases"]), TrainLog.load(log_path)


def selection_recovery(manifest: dict, selected: Sequence[str], ranked: Sequence[str] | None = None) -> dict:
    flags = {c["name"]: bool(c["informative"]) for c in manifest["catalog"]}
    sel_flags = [flags[n] for n in selected]
    rec = {
        "k": len(selected),
        "selected": list(selected),
        "flags": sel_flags,
        "n_informative": int(sum(sel_flags)),
        "fraction": sum(sel_flags) / len(selected) if selected else 0.0,
    }
    if ranked is not None:
        top5 = list(ranked[:5])
        rec["top5"] = top5
        rec["decoys_in_top5"] = [n for n in top5 if not flags[n]]
    return rec


def cmd_report(args) -> int:
    cfg = _config(args)
    full_dir = Path(args.full or cfg.paths.run_full)
    sel_dir = Path(args.selected or cfg.paths.run_selected)
    doc_f, mf, log_f = _load_run(full_dir)
    doc_s, ms, log_s = _load_run(sel_dir)
    if doc_f["test_case_ids"] != doc_s["test_case_ids"]:
        raise ValidationError("the two runs were evaluated on different test splits")
    selected = doc_s["channels"]
    report = compare_runs((mf, log_f), (ms, log_s), selected)
    body = {"comparison": report.to_dict(include_wall_time=False)}
    n_full = len(doc_f["channels"])
    recovery = None
    manifest_dir = Path(args.dataset or cfg.paths.dataset)
    if (manifest_dir / MANIFEST).is_file():
        ranked = None
        sel_path = Path(args.selection or cfg.paths.selection) / "significance.json"
        if sel_path.is_file():
            sig = _read_json(sel_path, "significance file")
            ranked = [r["name"] for r in sig["ranking"]]
            selected_ranked = list(sig["selected"])
            if sorted(selected_ranked) == sorted(selected):
                selected = selected_ranked
        recovery = selection_recovery(read_manifest(manifest_dir), selected, ranked)
        body["recovery"] = recovery
    out = Path(args.out or cfg.paths.report)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / REPORT_JSON, body)
    with open(out / REPORT_MD, "w", newline="\n") as fh:
        fh.write(render_markdown(report, recovery, n_full))
    print(render_markdown(report, recovery, n_full), end="")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline configuration (JSON)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tres-diag", description="Break diagnosis with attribution-driven input selection.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic transient dataset")
    g.add_argument("--cases", type=int, help="number of cases (default from config)")
    g.add_argument("--workers", type=int, default=1, help="parallel generator processes")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train a diagnosis model")
    t.add_argument("--dataset", help="dataset directory")
    t.add_argument("--channels", default="all", help="'all' or a file with one channel name per line")
    t.add_argument("--kind", choices=("tres_cnn", "tres_cnn_plain", "mlp_baseline"),
                   help="architecture variant (default from config)")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attribute", parents=[common], help="Grad-CAM++ and LIME for every training case")
    a.add_argument("--checkpoint", help="checkpoint JSON of the trained model")
    a.add_argument("--dataset", help="dataset directory")
    a.add_argument("--dry-run", action="store_true", help="list the files that would be read and written")
    a.set_defaults(func=cmd_attribute)

    s = sub.add_parser("select", parents=[common], help="rank parameters and select the top k")
    s.add_argument("--attributions", help="directory of attribution files")
    s.add_argument("--k", type=int, help="number of parameters to keep (default 15)")
    s.set_defaults(func=cmd_select)

    r = sub.add_parser("report", parents=[common], help="compare the full and the reduced run")
    r.add_argument("--full", help="run directory of the all-channel model")
    r.add_argument("--selected", help="run directory of the reduced model")
    r.add_argument("--dataset", help="dataset directory (for ground-truth recovery)")
    r.add_argument("--selection", help="selection directory (for the ranked order)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except TresDiagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
