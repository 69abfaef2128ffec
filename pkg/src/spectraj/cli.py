"""Command-line entry point: ``spectraj {train,eval,predict,ablate,plot}``.

Exit codes: 0 success, 2 usage or configuration problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import config as C
from .checkpoint import load_model, read_checkpoint
from .context import SceneOccupancy, build_scene_stats, cache_dir, read_occupancy, write_occupancy
from .data import SplitProtocol, load_dataset, make_split
from .errors import ConfigError, DataError, NumericError, ParseError
from .evaluation import ABLATIONS, evaluate, format_table, predict_batch, run_ablation, variant_config
from .synthetic import synthetic_samples
from .training import build_model, train

log = logging.getLogger("spectraj")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key by dotted path")
    common.add_argument("--seed", type=int, help="overrides train.seed and eval.seed")
    common.add_argument("--checkpoint", help="checkpoint to evaluate, predict with, or resume from")
    common.add_argument("--k", type=int, help="number of predictions per agent (eval.K)")
    common.add_argument("--out", default="runs", help="base directory for run outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="spectraj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", parents=[common], help="train both sub-networks")
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint, keeping its epoch counter")
    sub.add_parser("eval", parents=[common], help="best-of-K ADE/FDE on the test split")
    p = sub.add_parser("predict", parents=[common], help="write K predicted trajectories per selected sample")
    p.add_argument("--samples", default="all", help="'all' or comma separated test-sample indices")
    p = sub.add_parser("ablate", parents=[common], help="train and evaluate ablation variants")
    p.add_argument("--variants", default=",".join(ABLATIONS), help="comma separated variant names")
    p = sub.add_parser("plot", parents=[common], help="render predictions to PNG")
    p.add_argument("--predictions", required=True, help="predictions CSV written by 'predict'")
    p.add_argument("--observations", required=True, help="observations CSV written by 'predict'")
    p.add_argument("--groundtruth", help="optional ground-truth CSV written by 'predict'")
    return parser


# --------------------------------------------------------------------------
# helpers


def _resolve_config(args) -> dict:
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"eval.seed={args.seed}"]
    if args.k is not None:
        overrides.append(f"eval.K={args.k}")
    return C.load_config(args.config, overrides)


def _run_dir(args, cfg: dict) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    digest = C.config_hash({"command": args.command, "config": cfg, "checkpoint": args.checkpoint})
    path = Path(args.out) / f"{args.command}-{digest}-{stamp}"
    suffix = 1
    while path.exists():
        path = Path(args.out) / f"{args.command}-{digest}-{stamp}-{suffix}"
        suffix += 1
    path.mkdir(parents=True)
    return path


def _scene_stats(cfg: dict, collection, scenes) -> dict[str, SceneOccupancy]:
    grid = int(cfg["context"]["scene_grid"])
    directory = cache_dir(cfg["context"]["cache_dir"])
    stats = {}
    for scene in scenes:
        tracks = collection.tracks[scene]
        cache = None
        if directory is not None:
            h = hashlib.sha256()
            for t in tracks:
                h.update(t.time_index.tobytes())
                h.update(t.positions.tobytes())
            cache = directory / f"{scene}-g{grid}-{h.hexdigest()[:12]}.occ"
            if cache.is_file():
                stats[scene] = read_occupancy(cache)
                continue
        stats[scene] = build_scene_stats(tracks, [scene], grid)[scene]
        if cache is not None:
            directory.mkdir(parents=True, exist_ok=True)
            write_occupancy(stats[scene], cache)
    return stats


def load_samples(cfg: dict, t_h: int, t_f: int):
    """Return ``(train_samples, test_samples, scene_stats, dataset_name)``."""
    d = cfg["data"]
    if d["format"] == "synthetic":
        samples = synthetic_samples(d["synthetic_linear"], d["synthetic_sine"], t_h, t_f, d["synthetic_seed"])
        return samples, samples, None, "synthetic"
    if not d["path"]:
        raise ConfigError("data.path is required for ethucy/sdd data")
    collection = load_dataset(d["path"], d["format"], d["source_fps"], d["target_fps"])
    scenes = collection.scenes
    if d["protocol"] == "none":
        train_scenes = test_scenes = scenes
        name = Path(d["path"]).stem
    elif d["protocol"] == SplitProtocol.LEAVE_ONE_OUT.value:
        split = make_split(scenes, SplitProtocol.LEAVE_ONE_OUT, d["test_scene"])
        train_scenes, test_scenes = split.train_scenes, split.test_scenes
        name = str(d["test_scene"])
    else:
        split = make_split(scenes, SplitProtocol.FIXED_SPLIT, d["manifest"])
        train_scenes, test_scenes = split.train_scenes, split.test_scenes
        name = Path(d["manifest"]).stem
    stride = int(d["window_stride"])
    train_samples = collection.samples(train_scenes, t_h, t_f, stride)
    test_samples = collection.samples(test_scenes, t_h, t_f, stride)
    stats = _scene_stats(cfg, collection, train_scenes)
    return train_samples, test_samples, stats, name


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_train(args, cfg: dict) -> int:
    tcfg = C.train_config(cfg)
    if args.resume:
        if not args.checkpoint:
            raise ConfigError("--resume needs --checkpoint")
        model, payload = load_model(args.checkpoint)
        start_epoch, start_step, opt_state = payload["epoch"], payload["step"], payload["optimizer"]
    else:
        model = build_model(C.model_config(cfg), tcfg.seed)
        start_epoch, start_step, opt_state = 0, 0, None
    train_samples, _, stats, _ = load_samples(cfg, model.cfg.t_h, model.cfg.t_f)
    if not train_samples:
        raise ConfigError("dataset produced no training windows")
    cfg = cfg | {"model": model.cfg.to_dict()}
    run_dir = _run_dir(args, cfg)
    C.dump_config(cfg, run_dir / "config.yaml")
    result = train(model, train_samples, tcfg, C.loss_weights(cfg), stats, run_dir, start_epoch, start_step, opt_state)
    print(json.dumps({"run_dir": str(run_dir), "checkpoint": str(result.checkpoint), "epochs": result.epochs_done, "steps": result.steps_done}))
    return EXIT_OK


def _model_from_checkpoint(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    model, _ = load_model(args.checkpoint)
    return model


def cmd_eval(args, cfg: dict) -> int:
    model = _model_from_checkpoint(args)
    _, test_samples, stats, name = load_samples(cfg, model.cfg.t_h, model.cfg.t_f)
    K, seed = int(cfg["eval"]["K"]), int(cfg["eval"]["seed"])
    variant = read_checkpoint(args.checkpoint)["meta"].get("variant", "full")
    report = evaluate(model, test_samples, K, seed, stats, name, variant)
    run_dir = _run_dir(args, cfg)
    (run_dir / "report.json").write_text(report.to_json() + "\n")
    (run_dir / "report.txt").write_text(format_table([report]) + "\n")
    print(report.to_json())
    return EXIT_OK


def _select(selector: str, n: int) -> list[int]:
    selector = (selector or "").strip()
    if not selector:
        raise ConfigError("empty sample selector")
    if selector == "all":
        return list(range(n))
    try:
        idx = [int(tok) for tok in selector.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad sample selector {selector!r}") from None
    if not idx or any(i < 0 or i >= n for i in idx):
        raise ConfigError(f"sample selector {selector!r} out of range for {n} samples")
    return idx


def cmd_predict(args, cfg: dict) -> int:
    model = _model_from_checkpoint(args)
    _, test_samples, stats, _ = load_samples(cfg, model.cfg.t_h, model.cfg.t_f)
    chosen = _select(args.samples, len(test_samples))
    K, seed = int(cfg["eval"]["K"]), int(cfg["eval"]["seed"])
    run_dir = _run_dir(args, cfg)
    samples = [test_samples[i] for i in chosen]
    preds = []
    chunk = max(1, 16384 // K)
    for i in range(0, len(samples), chunk):
        preds.extend(predict_batch(model, samples[i : i + chunk], K, seed, stats))
    with open(run_dir / "predictions.csv", "w", newline="") as fp, open(run_dir / "observations.csv", "w", newline="") as fo, open(
        run_dir / "groundtruth.csv", "w", newline=""
    ) as fg:
        wp, wo, wg = csv.writer(fp), csv.writer(fo), csv.writer(fg)
        wp.writerow(["sample_id", "k", "step", "x", "y"])
        wo.writerow(["sample_id", "step", "x", "y"])
        wg.writerow(["sample_id", "step", "x", "y"])
        for sid, s, p in zip(chosen, samples, preds):
            for t, (x, y) in enumerate(s.observation + s.anchor):
                wo.writerow([sid, t - s.t_h + 1, f"{x:.6f}", f"{y:.6f}"])
            for t, (x, y) in enumerate(s.future + s.anchor):
                wg.writerow([sid, t + 1, f"{x:.6f}", f"{y:.6f}"])
            for k, traj in enumerate(p.trajectories):
                for t, (x, y) in enumerate(traj):
                    wp.writerow([sid, k, t + 1, f"{x:.6f}", f"{y:.6f}"])
    print(json.dumps({"run_dir": str(run_dir), "samples": len(chosen), "K": K}))
    return EXIT_OK


def cmd_ablate(args, cfg: dict) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown or not variants:
        raise ConfigError(f"unknown ablation variants {unknown}; choose from {sorted(ABLATIONS)}")
    base = C.model_config(cfg)
    tcfg = C.train_config(cfg)
    K = int(cfg["eval"]["K"])
    run_dir = _run_dir(args, cfg)
    reports = []
    for v in variants:
        vcfg = variant_config(base, v)
        train_samples, test_samples, stats, name = load_samples(cfg, vcfg.t_h, vcfg.t_f)
        report, _ = run_ablation(v, train_samples, test_samples, base, tcfg, K, stats, name, run_dir / v)
        reports.append(report)
        log.info("%s: ADE %.4f FDE %.4f", v, report.ade, report.fde)
    table = format_table(reports)
    (run_dir / "ablation.txt").write_text(table + "\n")
    _write_json(run_dir / "ablation.json", [json.loads(r.to_json()) for r in reports])
    print(table)
    return EXIT_OK


def _read_csv(path: str, with_k: bool) -> dict:
    if not Path(path).is_file():
        raise ConfigError(f"{path!r} not found")
    out = defaultdict(lambda: defaultdict(list)) if with_k else defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            point = (float(row["x"]), float(row["y"]))
            if with_k:
                out[int(row["sample_id"])][int(row["k"])].append(point)
            else:
                out[int(row["sample_id"])].append(point)
    return out


def cmd_plot(args, cfg: dict) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    preds = _read_csv(args.predictions, with_k=True)
    obs = _read_csv(args.observations, with_k=False)
    gt = _read_csv(args.groundtruth, with_k=False) if args.groundtruth else {}
    if not preds:
        raise ConfigError("prediction file holds no rows")
    run_dir = _run_dir(args, cfg)
    for sid in sorted(preds):
        fig, ax = plt.subplots(figsize=(5, 5))
        for k, pts in sorted(preds[sid].items()):
            pts = np.asarray(pts)
            ax.plot(pts[:, 0], pts[:, 1], "-", color="tab:red", alpha=0.35, lw=1, label="predictions" if k == 0 else None)
        if sid in obs:
            o = np.asarray(obs[sid])
            ax.plot(o[:, 0], o[:, 1], "o-", color="tab:blue", ms=3, lw=2, label="observed")
        if sid in gt:
            g = np.asarray(gt[sid])
            ax.plot(g[:, 0], g[:, 1], "s--", color="tab:green", ms=2, lw=1, label="ground truth")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best", fontsize=8)
        ax.set_title(f"sample {sid}")
        fig.savefig(run_dir / f"sample_{sid}.png", dpi=100)
        plt.close(fig)
    print(json.dumps({"run_dir": str(run_dir), "images": len(preds)}))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "ablate": cmd_ablate, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except NumericError as exc:
        print(f"spectraj: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError, DataError, FileNotFoundError) as exc:
        print(f"spectraj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
