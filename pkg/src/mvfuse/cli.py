"""Command line entry points.

Six subcommands cover the desk-scale workflow: ``synth`` writes a labelled
synthetic dataset, ``assert`` reports cross-view agreement, ``train`` fits
the refinement head, ``fuse`` writes final per-point labels, ``eval``
scores predictions against ground truth, and ``sweep`` reruns the pipeline
across one parameter. Every command validates its configuration and inputs
before writing, logs the configuration verbatim into the output directory,
and is deterministic for a fixed seed.

Exit codes: 0 success, 1 usage or configuration problems, 2 malformed or
inconsistent data, 3 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures
from .assertion import similarity_histogram, uncertainty_mask
from .config import RunConfig, load_config
from .dataio import (RemapTable, SceneConfig, generate_synthetic_scene,
                     read_labels, read_point_cloud, read_predictions,
                     read_scores, synthetic_scorer, write_labels,
                     write_point_cloud, write_predictions, write_scores)
from .errors import ConfigError, DataError, DivergenceError
from .fusion import SOURCE_HEAD, fuse_predictions
from .metrics import (StratumResult, accumulate, class_iou, confusion_matrix,
                      fw_iou, miou, stratified_confusions)
from .pointhead import (Scan, load_point_head, save_point_head,
                        train_point_head)
from .util import derive_seed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

# run-level rng branch tags
_TAG_SCENE = 10
_TAG_SCORER_A = 11
_TAG_SCORER_B = 12


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _scan_name(i: int) -> str:
    return f"scan_{i:03d}"


def _load_scans(cfg: RunConfig, need_labels: bool = True) -> list[Scan]:
    """Materialize the run's scans, synthesizing or reading them."""
    if cfg.synthetic:
        scans = []
        for i in range(cfg.num_scans):
            scene = SceneConfig(
                seed=derive_seed(cfg.seed, _TAG_SCENE, i),
                num_points=cfg.points_per_scan,
                num_classes=cfg.num_classes,
                primitives=cfg.primitives,
            )
            cloud, labels = generate_synthetic_scene(scene)
            sa = synthetic_scorer(cloud, labels, cfg.num_classes, cfg.scorer_a,
                                  derive_seed(cfg.seed, _TAG_SCORER_A, i))
            sb = synthetic_scorer(cloud, labels, cfg.num_classes, cfg.scorer_b,
                                  derive_seed(cfg.seed, _TAG_SCORER_B, i))
            scans.append(Scan(cloud=cloud, scores_a=sa, scores_b=sb,
                              labels=labels, name=_scan_name(i)))
        return scans

    root = cfg.data_dir
    if not root.is_dir():
        raise DataError(f"data directory {root} does not exist")
    if not cfg.remap_path.is_file():
        raise DataError(f"remap table {cfg.remap_path} does not exist")
    remap = RemapTable.from_text(cfg.remap_path.read_text(), cfg.num_classes)
    stems = sorted(p.stem for p in root.glob("scan_*.cloud"))
    if not stems:
        raise DataError(f"no scan_*.cloud files under {root}")
    if cfg.num_scans and len(stems) != cfg.num_scans:
        raise DataError(f"{root} holds {len(stems)} scans, config says {cfg.num_scans}")
    scans = []
    for stem in stems:
        cloud = read_point_cloud((root / f"{stem}.cloud").read_bytes())
        labels = None
        lab_path = root / f"{stem}.labels"
        if lab_path.is_file():
            labels = read_labels(lab_path.read_bytes(), remap)
        elif need_labels:
            raise DataError(f"missing labels for {stem}")
        sa = read_scores((root / f"{stem}.scores_a").read_bytes()) \
            if (root / f"{stem}.scores_a").is_file() else None
        sb = read_scores((root / f"{stem}.scores_b").read_bytes()) \
            if (root / f"{stem}.scores_b").is_file() else None
        if sa is None or sb is None:
            raise DataError(f"missing score files for {stem}")
        for name, arr in (("labels", labels), ("scores_a", sa), ("scores_b", sb)):
            if arr is not None and arr.shape[0] != cloud.n:
                raise DataError(
                    f"{stem}: {name} covers {arr.shape[0]} points, cloud has {cloud.n}"
                )
        if sa.shape[1] != cfg.num_classes:
            raise DataError(
                f"{stem}: scores carry {sa.shape[1]} classes, config says {cfg.num_classes}"
            )
        scans.append(Scan(cloud=cloud, scores_a=sa, scores_b=sb,
                          labels=labels, name=stem))
    return scans


def _prepare_out(cfg: RunConfig, out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.ini").write_text(cfg.raw_text)
    return path


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header] + [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.4f}"


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    if not cfg.synthetic:
        raise ConfigError("synth needs a [scene] configuration")
    out = _prepare_out(cfg, args.out)
    scans = _load_scans(cfg)
    for scan in scans:
        (out / f"{scan.name}.cloud").write_bytes(write_point_cloud(scan.cloud))
        (out / f"{scan.name}.labels").write_bytes(write_labels(scan.labels))
        (out / f"{scan.name}.scores_a").write_bytes(write_scores(scan.scores_a))
        (out / f"{scan.name}.scores_b").write_bytes(write_scores(scan.scores_b))
    (out / "remap.txt").write_text(RemapTable.identity(cfg.num_classes).to_text())
    print(f"wrote {len(scans)} scans of {cfg.points_per_scan} points to {out}")
    return EXIT_OK


def cmd_assert(cfg: RunConfig, args) -> int:
    tau = cfg.tau if args.tau is None else args.tau
    if not 0.0 <= tau <= 1.0:
        raise _UsageError(f"--tau {tau} outside [0, 1]")
    scans = _load_scans(cfg, need_labels=False)
    sims = []
    uncertain = 0
    for scan in scans:
        mask = uncertainty_mask(scan.scores_a, scan.scores_b, tau)
        sims.append(mask.similarity)
        uncertain += mask.num_uncertain
    sim = np.concatenate(sims)
    counts, edges = similarity_histogram(sim, bins=cfg.histogram_bins)
    fraction = uncertain / sim.size

    out = _prepare_out(cfg, args.out)
    _write_csv(out / "histogram.csv", "bin_lo,bin_hi,count",
               [(f"{lo:.4f}", f"{hi:.4f}", int(c))
                for lo, hi, c in zip(edges[:-1], edges[1:], counts)])
    _write_csv(out / "summary.csv", "metric,value", [
        ("tau", f"{tau:.4f}"),
        ("total_points", sim.size),
        ("uncertain_points", uncertain),
        ("uncertain_fraction", f"{fraction:.6f}"),
    ])
    figures.save_similarity_histogram(counts, edges, tau, out / "similarity_hist.png")
    print(f"uncertain fraction {fraction:.4f} at tau {tau:g} "
          f"({uncertain} of {sim.size} points)")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    scans = _load_scans(cfg)
    head_cfg = cfg.head
    if args.augment:
        head_cfg = replace(head_cfg, augment=cfg.augment)
    model, history = train_point_head(scans, head_cfg)
    out = _prepare_out(cfg, args.out)
    (out / "model.bin").write_bytes(save_point_head(model))
    _write_csv(out / "loss.csv", "epoch,mean_loss,lr",
               [(h.epoch, f"{h.mean_loss:.6f}", f"{h.lr:.6f}") for h in history])
    if history:
        figures.save_loss_curve(history, out / "loss_curve.png")
        print(f"trained {model.parameter_count()} parameters, "
              f"final loss {history[-1].mean_loss:.4f}")
    else:
        print(f"initialized {model.parameter_count()} parameters (no epochs)")
    return EXIT_OK


def cmd_fuse(cfg: RunConfig, args) -> int:
    scans = _load_scans(cfg, need_labels=False)
    model = None
    if args.checkpoint is not None:
        path = Path(args.checkpoint)
        if not path.is_file():
            raise DataError(f"model file {path} does not exist")
        model = load_point_head(path.read_bytes())
        if model.num_classes != cfg.num_classes:
            raise DataError(
                f"model expects {model.num_classes} classes, config says {cfg.num_classes}"
            )
    results = []
    for scan in scans:
        table = scan.neighbor_table(model.num_neighbors) if model is not None else None
        results.append(fuse_predictions(scan.cloud, scan.scores_a, scan.scores_b,
                                        cfg.tau, model, table))
    out = _prepare_out(cfg, args.out)
    total = head_points = 0
    for scan, res in zip(scans, results):
        (out / f"{scan.name}.pred").write_bytes(
            write_predictions(res.labels, cfg.num_classes))
        total += res.num_points
        head_points += int((res.source == SOURCE_HEAD).sum())
    _write_csv(out / "summary.csv", "metric,value", [
        ("tau", f"{cfg.tau:.4f}"),
        ("num_scans", len(scans)),
        ("total_points", total),
        ("head_points", head_points),
        ("head_fraction", f"{head_points / total:.6f}"),
    ])
    print(f"fused {len(scans)} scans, head refined {head_points} of {total} points")
    return EXIT_OK


def _read_predictions_for(scans, pred_dir: Path, num_classes: int) -> list[np.ndarray]:
    if not pred_dir.is_dir():
        raise DataError(f"prediction directory {pred_dir} does not exist")
    preds = []
    for scan in scans:
        path = pred_dir / f"{scan.name}.pred"
        if not path.is_file():
            raise DataError(f"missing predictions for {scan.name}")
        p = read_predictions(path.read_bytes())
        if p.shape[0] != scan.cloud.n:
            raise DataError(
                f"{scan.name}: {p.shape[0]} predictions for {scan.cloud.n} points"
            )
        if p.size and p.max() >= num_classes:
            raise DataError(f"{scan.name}: prediction id {int(p.max())} out of range")
        preds.append(p)
    return preds


def cmd_eval(cfg: RunConfig, args) -> int:
    scans = _load_scans(cfg)
    preds = _read_predictions_for(scans, Path(args.pred), cfg.num_classes)
    k = cfg.num_classes
    edges = cfg.strata_edges
    global_cm = accumulate(
        confusion_matrix(p, s.labels, k) for p, s in zip(preds, scans)
    )
    strata_cms = None
    dropped = 0
    for p, s in zip(preds, scans):
        cms, out_of_range = stratified_confusions(
            p, s.labels, s.cloud.planar_radius(), edges, k)
        dropped += out_of_range
        strata_cms = cms if strata_cms is None else [a + b for a, b in zip(strata_cms, cms)]
    strata = []
    for lo, hi, cm in zip(edges[:-1], edges[1:], strata_cms):
        try:
            value = miou(cm)
        except DataError:
            value = float("nan")
        strata.append(StratumResult(r_lo=lo, r_hi=hi, cm=cm, miou=value))

    iou = class_iou(global_cm)
    mean_iou = miou(global_cm)
    fw = fw_iou(global_cm)

    out = _prepare_out(cfg, args.out)
    rows = [(f"class_{i:02d}", _fmt(100.0 * iou[i])) for i in range(k)]
    rows += [("miou", _fmt(100.0 * mean_iou)), ("fw_iou", _fmt(100.0 * fw)),
             ("evaluated_points", global_cm.total), ("ignored_points", global_cm.ignored)]
    _write_csv(out / "metrics.csv", "metric,value", rows)
    _write_csv(out / "strata.csv", "r_lo,r_hi,points,miou",
               [(f"{s.r_lo:.2f}", f"{s.r_hi:.2f}", s.cm.total, _fmt(100.0 * s.miou))
                for s in strata])
    figures.save_iou_bars(iou, out / "per_class_iou.png")
    figures.save_strata_curve(strata, out / "strata_miou.png")
    print(f"miou {100.0 * mean_iou:.4f}  fw_iou {100.0 * fw:.4f}  "
          f"({global_cm.total} points, {dropped} outside strata)")
    return EXIT_OK


def _pipeline_miou(scans, head_cfg, fuse_tau, num_classes) -> float:
    """Train, fuse, and score in memory; the sweep's inner loop."""
    model, _ = train_point_head(scans, head_cfg)
    cm = None
    for scan in scans:
        table = scan.neighbor_table(model.num_neighbors)
        res = fuse_predictions(scan.cloud, scan.scores_a, scan.scores_b,
                               fuse_tau, model, table)
        piece = confusion_matrix(res.labels, scan.labels, num_classes)
        cm = piece if cm is None else cm + piece
    return miou(cm)


def cmd_sweep(cfg: RunConfig, args) -> int:
    try:
        if args.axis == "tau":
            values = [float(v) for v in args.values.split(",") if v.strip()]
            bad = [v for v in values if not 0.0 <= v <= 1.0]
            if bad:
                raise _UsageError(f"tau values {bad} outside [0, 1]")
        else:
            values = [int(v) for v in args.values.split(",") if v.strip()]
            if any(v < 1 for v in values):
                raise _UsageError("neighbour counts must be positive")
    except ValueError:
        raise _UsageError(f"cannot parse --values {args.values!r}") from None
    if not values:
        raise _UsageError("--values lists nothing")

    scans = _load_scans(cfg)
    base = cfg.head
    if args.augment:
        base = replace(base, augment=cfg.augment)
    mious = []
    for v in values:
        if args.axis == "tau":
            head_cfg = replace(base, tau=v)
            fuse_tau = v
        else:
            head_cfg = replace(base, num_neighbors=v)
            fuse_tau = cfg.tau
        value_miou = _pipeline_miou(scans, head_cfg, fuse_tau, cfg.num_classes)
        mious.append(value_miou)
        print(f"{args.axis} {v:g}: miou {100.0 * value_miou:.4f}")

    out = _prepare_out(cfg, args.out)
    _write_csv(out / "sweep.csv", "value,miou",
               [(f"{v:g}", _fmt(100.0 * m)) for v, m in zip(values, mious)])
    figures.save_sweep_curve(values, mious, args.axis, out / "sweep.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvfuse",
                     description="multi-view late fusion for point cloud labels")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration (INI)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")

    p = sub.add_parser("synth", help="write a synthetic labelled dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("assert", help="report cross-view agreement")
    common(p)
    p.add_argument("--tau", type=float, default=None,
                   help="override the agreement threshold")
    p.set_defaults(func=cmd_assert)

    p = sub.add_parser("train", help="fit the refinement head")
    common(p)
    p.add_argument("--augment", action="store_true",
                   help="draw per-epoch augmentations while training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="write fused per-point labels")
    common(p)
    p.add_argument("--checkpoint", default=None,
                   help="trained head checkpoint; omit for the pure ensemble")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred", required=True, help="directory of .pred files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="rerun the pipeline across one parameter")
    common(p)
    p.add_argument("--axis", choices=("tau", "neighbors"), required=True)
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--augment", action="store_true",
                   help="draw per-epoch augmentations while training")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed,
                          head=replace(cfg.head, seed=args.seed))
        return args.func(cfg, args)
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
