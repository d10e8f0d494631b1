"""Command-line entry point orchestrating the pipeline end to end.

Subcommands mirror the pipeline stages: ``train``, ``infer``, ``eval``,
``post``, ``build-labels``, ``bench``, plus ``make-data`` for generating
synthetic frames to demo the whole flow.  Exit codes: 0 success, 1 a
requested metric floor was violated, 2 usage/configuration/IO error.
"""

from __future__ import annotations

import sys
from functools import wraps
from pathlib import Path

import click
import numpy as np

from . import dataset_builder, lidar_io, postprocess, report, synthetic
from .config import PipelineConfig
from .errors import CurbsegError
from .evaluate import ToleranceSpec, measure_throughput, strict_metrics, tolerance_metrics
from .lidar_io import CLASS_CURB
from .net import (
    load_checkpoint,
    predict_point_scores,
    save_checkpoint,
    train_toy,
)
from .voxel import voxelize


def pipeline_errors(fn):
    """Map pipeline/IO failures onto exit code 2."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (CurbsegError, OSError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def load_config(config_path: str | None) -> PipelineConfig:
    if config_path is None:
        return PipelineConfig()
    return PipelineConfig.from_file(config_path)


@click.group()
def main() -> None:
    """Curb detection pipeline: voxel segmentation plus curve-fit refinement."""


@main.command("make-data")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--frames", "n_frames", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@pipeline_errors
def cmd_make_data(out_dir: Path, n_frames: int, seed: int) -> None:
    """Generate synthetic labeled frames for demos and tests."""
    ids = synthetic.write_dataset(out_dir, n_frames, seed=seed)
    outputs = [f"{i}.bin" for i in ids] + [f"{i}.label" for i in ids]
    report.write_manifest(out_dir, "make-data", outputs, seed=seed)
    click.echo(f"wrote {n_frames} frames to {out_dir}")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--epochs", type=int, default=None, help="override config epochs")
@click.option("--lr", type=float, default=None, help="override config learning rate")
@click.option("--seed", type=int, default=None, help="override config seed")
@pipeline_errors
def cmd_train(data_dir, out_dir, config_path, epochs, lr, seed) -> None:
    """Train the toy network on a directory of (.bin, .label) frames."""
    cfg = load_config(config_path)
    epochs = epochs if epochs is not None else cfg.train.epochs
    lr = lr if lr is not None else cfg.train.lr
    seed = seed if seed is not None else cfg.seed
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")

    frames = lidar_io.load_frames(data_dir)
    if not frames:
        raise FileNotFoundError(f"no .bin frames in {data_dir}")
    result = train_toy(
        frames, cfg.grid, epochs=epochs, lr=lr, batch_size=cfg.train.batch_size,
        widths=cfg.net.widths, loss_cfg=cfg.loss, seed=seed,
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.ckpt"
    save_checkpoint(result.params, ckpt)
    curve_rows = [(i + 1, *vals) for i, vals in enumerate(result.loss_curve)]
    report.write_csv(out_dir / "loss_curve.csv", ("epoch", "total", "ace", "iou"), curve_rows)
    report.fig_loss_curve(result.loss_curve, out_dir / "loss_curve.png")
    report.write_manifest(
        out_dir, "train", ["checkpoint.ckpt", "loss_curve.csv", "loss_curve.png"], seed=seed
    )
    click.echo(f"trained {result.epochs_run} epochs; final loss {result.loss_curve[-1][0]:.6f}")


@main.command("infer")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(path_type=Path))
@click.option("--frame", "frame_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--post", "run_post", is_flag=True, help="refine curb points and write polylines")
@pipeline_errors
def cmd_infer(ckpt_path, frame_path, out_dir, config_path, run_post) -> None:
    """Predict per-point classes for one frame; optionally refine curbs."""
    cfg = load_config(config_path)
    params = load_checkpoint(ckpt_path)
    cloud = lidar_io.read_point_cloud(frame_path)
    out_dir.mkdir(parents=True, exist_ok=True)

    grid = _grid_from_meta(params.meta, cfg)
    vox = voxelize(cloud, grid)
    pred = predict_point_scores(params, vox).argmax(axis=1) if len(cloud) else np.empty(0, np.int64)

    stem = frame_path.stem
    label_out = out_dir / f"{stem}.label"
    lidar_io.write_pipeline_labels(pred, label_out)
    outputs = [label_out.name]

    if run_post:
        curb_points = cloud.xyz[pred == CLASS_CURB].astype(np.float64)
        result = postprocess.refine(
            curb_points, cfg.dbscan, degree=cfg.post.degree, delta_dist=cfg.post.delta_dist
        )
        poly_out = out_dir / f"{stem}_polylines.csv"
        lidar_io.write_polylines(result.clusters, poly_out, frame_id=stem)
        fig_out = out_dir / f"{stem}_refine.png"
        report.fig_refinement(result, fig_out)
        outputs += [poly_out.name, fig_out.name]
        click.echo(
            f"refined: kept {len(result.kept_indices)}, removed {len(result.removed_indices)}"
        )

    report.write_manifest(out_dir, "infer", outputs)
    click.echo(f"wrote predictions for {len(cloud)} points to {label_out}")


def _grid_from_meta(meta: dict, cfg: PipelineConfig):
    """The checkpoint owns the grid geometry it was trained on."""
    if "grid" in meta:
        from .voxel import VoxelGridSpec

        return VoxelGridSpec.from_dict(meta["grid"])
    return cfg.grid


@main.command("eval")
@click.option("--pred", "pred_dir", required=True, type=click.Path(path_type=Path))
@click.option("--truth", "truth_dir", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--tolerances", default=None, help="comma-separated taus in meters")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--min-f1", "min_f1", type=float, default=None,
              help="exit 1 when the aggregate strict F1 falls below this floor")
@pipeline_errors
def cmd_eval(pred_dir, truth_dir, out_dir, tolerances, config_path, min_f1) -> None:
    """Score predicted labels against ground truth, strict and per tolerance."""
    cfg = load_config(config_path)
    tol = (
        ToleranceSpec(taus=tuple(float(t) for t in tolerances.split(",")))
        if tolerances
        else cfg.tolerance
    )

    truth_frames = lidar_io.frame_pairs(truth_dir)
    if not truth_frames:
        raise FileNotFoundError(f"no frames in {truth_dir}")
    missing = [b.stem for b, _ in truth_frames if not (pred_dir / f"{b.stem}.label").exists()]
    if missing:
        raise FileNotFoundError(f"predictions missing for frames: {', '.join(missing)}")

    rows = []
    strict_total = None
    tol_totals = {tau: None for tau in tol.taus}
    for bin_path, label_path in truth_frames:
        cloud = lidar_io.read_point_cloud(bin_path)
        truth = lidar_io.read_labels(label_path, len(cloud)).pipeline_classes()
        pred = lidar_io.read_labels(pred_dir / f"{bin_path.stem}.label", len(cloud)).pipeline_classes()

        strict = strict_metrics(pred, truth)
        strict_total = strict if strict_total is None else strict_total + strict
        rows.append((bin_path.stem, "strict", strict.tp, strict.fp, strict.fn,
                     strict.precision, strict.recall, strict.f1))

        pred_pts = cloud.xyz[pred == CLASS_CURB].astype(np.float64)
        true_pts = cloud.xyz[truth == CLASS_CURB].astype(np.float64)
        for tau, rep in tolerance_metrics(pred_pts, true_pts, tol).items():
            tol_totals[tau] = rep if tol_totals[tau] is None else tol_totals[tau] + rep
            rows.append((bin_path.stem, f"{tau:.2f}", rep.tp, rep.fp, rep.fn,
                         rep.precision, rep.recall, rep.f1))

    rows.append(("ALL", "strict", strict_total.tp, strict_total.fp, strict_total.fn,
                 strict_total.precision, strict_total.recall, strict_total.f1))
    for tau in tol.taus:
        rep = tol_totals[tau]
        rows.append(("ALL", f"{tau:.2f}", rep.tp, rep.fp, rep.fn,
                     rep.precision, rep.recall, rep.f1))

    out_dir.mkdir(parents=True, exist_ok=True)
    header = ("frame", "tolerance", "tp", "fp", "fn", "precision", "recall", "f1")
    report.write_csv(out_dir / "metrics.csv", header, rows)
    text = report.write_text_table(out_dir / "metrics.txt", header, rows)
    report.fig_tolerance_curves(
        tol.taus,
        [tol_totals[t].precision for t in tol.taus],
        [tol_totals[t].recall for t in tol.taus],
        [tol_totals[t].f1 for t in tol.taus],
        out_dir / "metrics.png",
    )
    report.write_manifest(out_dir, "eval", ["metrics.csv", "metrics.txt", "metrics.png"])
    click.echo(text)

    if min_f1 is not None and strict_total.f1 < min_f1:
        click.echo(f"strict F1 {strict_total.f1:.4f} below floor {min_f1}", err=True)
        sys.exit(1)


@main.command("post")
@click.option("--frame", "frame_path", required=True, type=click.Path(path_type=Path))
@click.option("--pred", "pred_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@pipeline_errors
def cmd_post(frame_path, pred_path, out_dir, config_path) -> None:
    """Refine an existing prediction: cluster, fit curves, drop noise."""
    cfg = load_config(config_path)
    cloud = lidar_io.read_point_cloud(frame_path)
    pred = lidar_io.read_labels(pred_path, len(cloud)).pipeline_classes()
    curb_points = cloud.xyz[pred == CLASS_CURB].astype(np.float64)

    result = postprocess.refine(
        curb_points, cfg.dbscan, degree=cfg.post.degree, delta_dist=cfg.post.delta_dist
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = frame_path.stem
    poly_out = out_dir / f"{stem}_polylines.csv"
    lidar_io.write_polylines(result.clusters, poly_out, frame_id=stem)

    refined = pred.copy()
    curb_idx = np.flatnonzero(pred == CLASS_CURB)
    refined[curb_idx[result.removed_indices]] = lidar_io.CLASS_OTHER
    label_out = out_dir / f"{stem}.label"
    lidar_io.write_pipeline_labels(refined, label_out)

    fig_out = out_dir / f"{stem}_refine.png"
    report.fig_refinement(result, fig_out)
    report.write_manifest(out_dir, "post", [poly_out.name, label_out.name, fig_out.name])
    click.echo(f"kept {len(result.kept_indices)}, removed {len(result.removed_indices)}")


@main.command("build-labels")
@click.option("--data", "data_dir", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@pipeline_errors
def cmd_build_labels(data_dir, out_dir, config_path) -> None:
    """Propose curb labels from road labels (ground plane + boundary band)."""
    cfg = load_config(config_path)
    pairs = lidar_io.frame_pairs(data_dir)
    if not pairs:
        raise FileNotFoundError(f"no frames in {data_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for bin_path, label_path in pairs:
        cloud = lidar_io.read_point_cloud(bin_path)
        labels = lidar_io.read_labels(label_path, len(cloud))
        plane = dataset_builder.fit_ground_plane(cloud)
        proposals = dataset_builder.propose_curb_labels(cloud, labels, plane, cfg.crop)
        stem = bin_path.stem
        lidar_io.write_labels(proposals.labels.labels, out_dir / f"{stem}.label")
        dataset_builder.write_review_file(out_dir / f"{stem}_review.csv", cloud, plane, proposals)
        outputs += [f"{stem}.label", f"{stem}_review.csv"]
        click.echo(f"{stem}: {len(proposals.proposal_indices)} curb proposals")
    report.write_manifest(out_dir, "build-labels", outputs)


@main.command("bench")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(path_type=Path))
@click.option("--data", "data_dir", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@pipeline_errors
def cmd_bench(ckpt_path, data_dir, out_dir, config_path) -> None:
    """Wall-clock throughput of model inference and post-processing."""
    cfg = load_config(config_path)
    params = load_checkpoint(ckpt_path)
    grid = _grid_from_meta(params.meta, cfg)
    clouds = [lidar_io.read_point_cloud(p) for p, _ in _bins_with_optional_labels(data_dir)]
    if len(clouds) < 10:
        raise ValueError(f"need at least 10 frames for a stable benchmark, got {len(clouds)}")

    def inference(cloud):
        vox = voxelize(cloud, grid)
        return predict_point_scores(params, vox).argmax(axis=1)

    predictions = {id(c): inference(c) for c in clouds}

    def post_stage(cloud):
        pred = predictions[id(cloud)]
        pts = cloud.xyz[pred == CLASS_CURB].astype(np.float64)
        return postprocess.refine(pts, cfg.dbscan, cfg.post.degree, cfg.post.delta_dist)

    infer_t = measure_throughput(inference, clouds)
    post_t = measure_throughput(post_stage, clouds)

    out_dir.mkdir(parents=True, exist_ok=True)
    header = ("Stage", "FPS / ms")
    table_rows = [
        ("Model Inference", f"{infer_t.fps:.2f} / {infer_t.ms_per_frame:.2f}"),
        ("Post-Processing", f"{post_t.fps:.2f} / {post_t.ms_per_frame:.2f}"),
    ]
    text = report.write_text_table(out_dir / "bench.txt", header, table_rows)
    report.write_csv(
        out_dir / "bench.csv",
        ("stage", "fps", "ms_per_frame"),
        [
            ("model_inference", infer_t.fps, infer_t.ms_per_frame),
            ("post_processing", post_t.fps, post_t.ms_per_frame),
        ],
    )
    report.fig_throughput(
        ["inference", "post-processing"], [infer_t.fps, post_t.fps], out_dir / "bench.png"
    )
    report.write_manifest(out_dir, "bench", ["bench.txt", "bench.csv", "bench.png"])
    click.echo(text)


def _bins_with_optional_labels(data_dir: Path):
    bins = sorted(Path(data_dir).glob("*.bin"))
    return [(b, b.with_suffix(".label")) for b in bins]


if __name__ == "__main__":
    main()
