"""``drifa`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint
from . import config as config_mod
from .ablation import GRIDS, parse_grid, run_ablation
from .errors import (BadFractions, CheckpointCorrupt, ConfigError, ConfigMismatch, DataNotFound,
                     InvalidFlag, InvalidSpec, InvalidTaskOrClass, ShapeMismatch)
from .net import DrifaNet, saliency
from .training import build_model, evaluate, fit, load_split
from .uncertainty import deterministic_predict, mc_predict, uncertainty_report

log = logging.getLogger("drifa")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(data={"seed": args.seed}, train={"seed": args.seed})
    return cfg


def _load_model(cfg, args, data) -> DrifaNet:
    path = Path(args.checkpoint) if args.checkpoint else Path(args.out) / "checkpoint.drif"
    state = checkpoint.load(path)
    model = build_model(cfg, data.train)
    try:
        model.load_state_dict(state)
    except (KeyError, ShapeMismatch, ValueError) as exc:
        raise _Fail(EXIT_CHECKPOINT, f"checkpoint {path} does not fit this config: {exc}") from exc
    return model


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


def cmd_train(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.dump(cfg, out / "config.json")
    data = load_split(cfg)
    model = build_model(cfg, data.train)
    start = time.perf_counter()
    result = fit(model, data, cfg.train,
                 on_epoch=lambda e: log.info("epoch %3d  lr %.2g  train %.4f  val %.4f  val_acc %.4f",
                                             e.epoch, e.lr, e.train_loss, e.val_loss, e.val_accuracy))
    elapsed = time.perf_counter() - start
    checkpoint.save(out / "checkpoint.drif", model.state_dict())
    _write(out, "train_log.csv", result.log_csv())
    report = evaluate(model, data.test, config_hash=cfg.hash())
    report.wall_clock = elapsed
    _write(out, "metrics.csv", report.to_csv())
    _write(out, "metrics.txt", report.to_table() + f"best epoch: {result.best_epoch}\n")
    print(report.to_table(), end="")
    print(f"trained in {elapsed:.1f}s; best epoch {result.best_epoch}; wrote {out / 'checkpoint.drif'}")


def cmd_eval(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_split(cfg)
    model = _load_model(cfg, args, data)
    start = time.perf_counter()
    report = evaluate(model, data.test, config_hash=cfg.hash())
    report.wall_clock = time.perf_counter() - start
    _write(out, "eval_metrics.csv", report.to_csv())
    _write(out, "eval_metrics.txt", report.to_table())
    print(report.to_table(), end="")


def cmd_ablate(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = parse_grid(args.grid)
    seeds = list(range(args.seeds))
    result = run_ablation(cfg, rows, seeds, grid_name=args.grid if args.grid in GRIDS else "custom",
                          progress=lambda row, s, m: log.info("%-40s seed %d  acc %.4f", row, s, m[0]))
    _write(out, "ablation.csv", result.to_csv())
    _write(out, "ablation.txt", result.to_table())
    print(result.to_table(), end="")


def cmd_uq(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_split(cfg)
    model = _load_model(cfg, args, data)
    test = data.test
    ens = cfg.ensemble_config()
    mc = mc_predict(model, test.inputs, ens, workers=args.workers)
    det = deterministic_predict(model, test.inputs)
    deltas = ["task,metric,deterministic,uq,delta"]
    summary = [f"MC dropout: {ens.ensembles} ensembles x {ens.iterations} iterations = {ens.passes} passes, "
               f"rate {ens.dropout_rate}"]
    for k, (d_mc, d_det) in enumerate(zip(mc, det)):
        labels = test.labels[:, k]
        rep = uncertainty_report(d_mc, labels, test.ids)
        base = uncertainty_report(d_det, labels, test.ids).metrics
        suffix = "" if len(mc) == 1 else f"_task{k}"
        _write(out, f"uq_samples{suffix}.csv", rep.samples_csv())
        summary += [f"task {k}", rep.summary()]
        for name, a, b in zip(("accuracy", "precision", "recall", "f1"), base.as_row(), rep.metrics.as_row()):
            deltas.append(f"{k},{name},{a:.6f},{b:.6f},{b - a:.6f}")
    _write(out, "uq_deltas.csv", "\n".join(deltas) + "\n")
    _write(out, "uq_summary.txt", "\n".join(summary))
    print("\n".join(summary), end="")
    print("\n".join(deltas))


def write_pgm(path: Path, image: np.ndarray) -> None:
    pixels = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    magic, dims, maxval, rest = blob.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(rest, dtype=np.uint8, count=w * h).reshape(h, w)


def cmd_saliency(args) -> None:
    cfg = _load_config(args)
    out = Path(args.out)
    maps_dir = out / "saliency"
    maps_dir.mkdir(parents=True, exist_ok=True)
    data = load_split(cfg)
    model = _load_model(cfg, args, data)
    test = data.test if args.limit is None else data.test.subset(np.arange(min(args.limit, len(data.test))))
    maps = saliency(model, test.inputs, args.task, args.cls)
    index = ["sample_id,modality,label,path"]
    for k, sample_id in enumerate(test.ids):
        for i, m in enumerate(maps):
            name = f"sample{int(sample_id):06d}_mod{i}.pgm"
            write_pgm(maps_dir / name, m[k])
            index.append(f"{int(sample_id)},{i},{int(test.labels[k, args.task])},saliency/{name}")
    _write(out, "saliency_index.csv", "\n".join(index) + "\n")
    print(f"wrote {len(index) - 1} maps to {maps_dir}")


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "uq": cmd_uq, "saliency": cmd_saliency}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="override data and train seeds")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="drifa", description="Dual-attention multimodal fusion networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train and write a best-validation checkpoint")
    for name, text in (("eval", "evaluate a checkpoint on the test split"),
                       ("uq", "MC-dropout uncertainty report"),
                       ("saliency", "export Grad-CAM maps as PGM files")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", default=None, help="default: <out>/checkpoint.drif")
    ablate = sub.add_parser("ablate", parents=[common], help="run an ablation grid")
    ablate.add_argument("--grid", default="table2",
                        help=f"one of {sorted(GRIDS)} or comma-separated rows such as 'none,mfa,mfa+mifa'")
    ablate.add_argument("--seeds", type=int, default=5, help="number of seeds (default: 5)")
    sub.choices["uq"].add_argument("--workers", type=int, default=1)
    sal = sub.choices["saliency"]
    sal.add_argument("--task", type=int, default=0)
    sal.add_argument("--class", dest="cls", type=int, default=0)
    sal.add_argument("--limit", type=int, default=None, help="only the first N test samples")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ConfigMismatch, InvalidFlag, InvalidTaskOrClass) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataNotFound, InvalidSpec, BadFractions) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointCorrupt as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
