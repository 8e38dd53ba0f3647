"""Command-line pipeline: synth, segment, train, classify, localize, evaluate.

Each subcommand is a pure function of its input files plus the JSON run
configuration; all randomness is seeded from the config (the CEGL_SEED
environment variable overrides the configured seeds when set). Outputs
are written atomically so failures never leave partial files behind.

Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, metrics, segmentation
from .dataio import Annotations, FeatureMatrix, SynthConfig
from .errors import CeglError, ConfigError, DataError, FormatError, NumericError
from .graph import SimilarityConfig, build_segment_graphs
from .localization import LocalizationResult, node_scores, topk_select, write_localization
from .model import (
    ModelParams,
    TrainConfig,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .segmentation import Partition, SegmentationConfig, default_penalty, pelt

SEED_ENV_VAR = "CEGL_SEED"


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig | None
    synth_videos: int
    penalty: float | None  # None selects the per-video default
    min_len: int
    cost_kind: str
    similarity: SimilarityConfig
    layer_dims: tuple[int, ...] | None
    aggregator_kind: str
    readout_kind: str
    a_dim: int | None
    attention_averaged: bool
    train: TrainConfig
    ks: tuple[int, ...]
    localize_all: bool

    def segmentation_config(self, features: FeatureMatrix) -> SegmentationConfig:
        beta = self.penalty
        if beta is None:
            beta = default_penalty(features.frame_count, features.feature_dim)
        return SegmentationConfig(penalty=beta, min_len=self.min_len, cost_kind=self.cost_kind)


def _require_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config root must be a JSON object: {path}")
    return parse_run_config(obj)


def parse_run_config(obj: dict) -> RunConfig:
    _require_keys(
        obj,
        {"synth", "segmentation", "similarity", "model", "train", "ks", "localize_all_segments"},
        "top-level",
    )
    seed_override = os.environ.get(SEED_ENV_VAR)
    if seed_override is not None:
        try:
            seed_override = int(seed_override)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc

    synth_obj = obj.get("synth")
    synth_cfg = None
    synth_videos = 1
    if synth_obj is not None:
        allowed = {
            "segment_count",
            "mean_segment_len",
            "feature_dim",
            "abnormal_segment_fraction",
            "abnormal_frame_fraction",
            "cluster_spread",
            "abnormal_offset_norm",
            "seed",
            "videos",
        }
        _require_keys(synth_obj, allowed, "synth")
        synth_videos = int(synth_obj.get("videos", 1))
        if synth_videos < 1:
            raise ConfigError("synth.videos must be at least 1")
        kwargs = {k: v for k, v in synth_obj.items() if k != "videos"}
        if seed_override is not None:
            kwargs["seed"] = seed_override
        try:
            synth_cfg = SynthConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"incomplete synth config: {exc}") from exc

    seg_obj = obj.get("segmentation", {})
    _require_keys(seg_obj, {"penalty", "min_len", "cost_kind"}, "segmentation")
    penalty = seg_obj.get("penalty")
    if penalty is not None:
        penalty = float(penalty)
    min_len = int(seg_obj.get("min_len", 5))
    cost_kind = seg_obj.get("cost_kind", "gaussian_mean_l2")
    # Validate eagerly with a stand-in penalty.
    SegmentationConfig(penalty=penalty if penalty is not None else 1.0,
                       min_len=min_len, cost_kind=cost_kind)

    similarity = SimilarityConfig.from_dict(obj.get("similarity", {}))

    model_obj = obj.get("model", {})
    _require_keys(
        model_obj,
        {"layer_dims", "aggregator_kind", "readout_kind", "a_dim", "attention_averaged"},
        "model",
    )
    layer_dims = model_obj.get("layer_dims")
    if layer_dims is not None:
        layer_dims = tuple(int(d) for d in layer_dims)
    a_dim = model_obj.get("a_dim")
    if a_dim is not None:
        a_dim = int(a_dim)

    train_obj = dict(obj.get("train", {}))
    _require_keys(
        train_obj,
        {"learning_rate", "batch_size", "epochs", "seed", "init_scale", "shuffle", "class_weighting"},
        "train",
    )
    if seed_override is not None:
        train_obj["seed"] = seed_override
    train_cfg = TrainConfig(**train_obj)

    ks = tuple(int(k) for k in obj.get("ks", (1, 2, 3, 5, 7, 9)))
    if not ks or list(ks) != sorted(ks) or ks[0] < 1:
        raise ConfigError("ks must be an ascending list of positive ints")

    return RunConfig(
        synth=synth_cfg,
        synth_videos=synth_videos,
        penalty=penalty,
        min_len=min_len,
        cost_kind=cost_kind,
        similarity=similarity,
        layer_dims=layer_dims,
        aggregator_kind=model_obj.get("aggregator_kind", "gated"),
        readout_kind=model_obj.get("readout_kind", "attention"),
        a_dim=a_dim,
        attention_averaged=bool(model_obj.get("attention_averaged", True)),
        train=train_cfg,
        ks=ks,
        localize_all=bool(obj.get("localize_all_segments", False)),
    )


# ---------------------------------------------------------------------------
# Atomic output helpers


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Shared pipeline pieces


def _list_videos(data_dir: Path) -> list[Path]:
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    files = sorted(data_dir.glob("*.cegf"))
    if not files:
        raise ConfigError(f"no .cegf feature files in {data_dir}")
    return files


def _load_video(cegf_path: Path) -> tuple[FeatureMatrix, Annotations]:
    features = dataio.read_feature_matrix(cegf_path)
    ann_path = cegf_path.with_name(cegf_path.stem + ".annotations.json")
    if not ann_path.exists():
        raise FileNotFoundError(f"annotations file not found: {ann_path}")
    return features, dataio.read_annotations(ann_path)


def _predictions_obj(features, partition, graphs, params) -> dict:
    segments = []
    for i, ((s, e), g) in enumerate(zip(partition.spans(), graphs)):
        y_hat = forward(g, params).prediction
        segments.append(
            {
                "segment_id": i,
                "start": s,
                "end": e,
                "score": y_hat,
                "predicted": int(y_hat >= 0.5),
            }
        )
    return {"video_id": features.video_id, "segments": segments}


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.synth is None:
        raise ConfigError("config has no synth section")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []
    try:
        for i in range(cfg.synth_videos):
            video_id = f"video-{i:03d}"
            per_video = SynthConfig(
                segment_count=cfg.synth.segment_count,
                mean_segment_len=cfg.synth.mean_segment_len,
                feature_dim=cfg.synth.feature_dim,
                abnormal_segment_fraction=cfg.synth.abnormal_segment_fraction,
                abnormal_frame_fraction=cfg.synth.abnormal_frame_fraction,
                cluster_spread=cfg.synth.cluster_spread,
                abnormal_offset_norm=cfg.synth.abnormal_offset_norm,
                seed=cfg.synth.seed + i,
            )
            features, ann, true_partition = dataio.synth_video(per_video, video_id)
            cegf = out_dir / f"{video_id}.cegf"
            created.append(cegf)
            dataio.write_feature_matrix(features, cegf, format="cegf")
            ann_path = out_dir / f"{video_id}.annotations.json"
            created.append(ann_path)
            dataio.write_annotations(ann, ann_path)
            part_path = out_dir / f"{video_id}.true_partition.json"
            created.append(part_path)
            segmentation.write_partition(true_partition, video_id, part_path)
    except BaseException:
        for p in created:
            p.unlink(missing_ok=True)
        raise
    return 0


def cmd_segment(args) -> int:
    cfg = load_run_config(args.config)
    features = dataio.read_feature_matrix(args.features)
    partition = pelt(features, cfg.segmentation_config(features))
    obj = {"video_id": features.video_id, "boundaries": list(partition.boundaries)}
    _atomic_write_text(Path(args.out), _dump_json(obj))
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    videos = _list_videos(Path(args.data))
    labelled = []
    feature_dim = None
    for cegf in videos:
        features, ann = _load_video(cegf)
        if ann.frame_labels is None:
            raise ConfigError(f"annotations for {features.video_id} carry no frame labels")
        if feature_dim is None:
            feature_dim = features.feature_dim
        elif features.feature_dim != feature_dim:
            raise ConfigError(
                f"feature dim mismatch across videos: {features.feature_dim} vs {feature_dim}"
            )
        partition = pelt(features, cfg.segmentation_config(features))
        graphs = build_segment_graphs(features, partition, cfg.similarity, annotations=ann)
        labelled.extend((g, g.weak_label) for g in graphs)

    layer_dims = cfg.layer_dims or (feature_dim, 32, 16)
    if layer_dims[0] != feature_dim:
        raise ConfigError(
            f"model layer_dims[0]={layer_dims[0]} does not match feature dim {feature_dim}"
        )
    params = init_params(
        layer_dims,
        aggregator_kind=cfg.aggregator_kind,
        readout_kind=cfg.readout_kind,
        seed=cfg.train.seed,
        a_dim=cfg.a_dim,
        init_scale=cfg.train.init_scale,
        attention_averaged=cfg.attention_averaged,
    )
    params, _history = train(labelled, params, cfg.train)

    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    try:
        save_checkpoint(params, tmp, similarity=cfg.similarity)
        os.replace(tmp, out)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return 0


def _load_model(path) -> tuple[ModelParams, SimilarityConfig]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    params, similarity = load_checkpoint(path)
    return params, similarity or SimilarityConfig()


def cmd_classify(args) -> int:
    params, similarity = _load_model(args.model)
    features = dataio.read_feature_matrix(args.features)
    _video_id, partition = segmentation.read_partition(args.partition)
    graphs = build_segment_graphs(features, partition, similarity)
    obj = _predictions_obj(features, partition, graphs, params)
    _atomic_write_text(Path(args.out), _dump_json(obj))
    return 0


def cmd_localize(args) -> int:
    params, similarity = _load_model(args.model)
    features = dataio.read_feature_matrix(args.features)
    _video_id, partition = segmentation.read_partition(args.partition)
    if args.k < 1:
        raise ConfigError(f"k must be at least 1, got {args.k}")
    graphs = build_segment_graphs(features, partition, similarity)
    results = []
    for i, ((s, e), g) in enumerate(zip(partition.spans(), graphs)):
        predicted = int(forward(g, params).prediction >= 0.5)
        if predicted or args.all_segments:
            scores = node_scores(g, params)
            selected = topk_select(scores, args.k) + s
        else:
            scores = np.zeros(0)
            selected = np.zeros(0, dtype=np.int64)
        results.append(
            LocalizationResult(
                segment_id=i,
                start=s,
                end=e,
                predicted=predicted,
                k=args.k,
                scores=scores,
                selected=selected,
            )
        )
    payload = _dump_json([r.to_json_obj() for r in results])
    _atomic_write_text(Path(args.out), payload)
    return 0


def cmd_coverage_curve(args) -> int:
    params, similarity = _load_model(args.model)
    try:
        ks = [int(k) for k in args.ks.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--ks must be comma-separated ints: {args.ks!r}") from exc
    if not ks or ks != sorted(ks) or ks[0] < 1:
        raise ConfigError("--ks must be ascending positive ints")

    data = []
    for cegf in _list_videos(Path(args.data)):
        features, ann = _load_video(cegf)
        if ann.frame_labels is None:
            raise ConfigError(f"annotations for {features.video_id} carry no frame labels")
        seg_cfg = SegmentationConfig(
            penalty=default_penalty(features.frame_count, features.feature_dim)
        )
        data.append((features, ann, pelt(features, seg_cfg)))

    curve = metrics.coverage_curve(params, data, ks, similarity=similarity)
    lines = ["k,coverage"] + [f"{k},{c!r}" for k, c in curve]
    _atomic_write_text(Path(args.out), "\n".join(lines) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    preds_path = Path(args.preds)
    if not preds_path.exists():
        raise FileNotFoundError(f"predictions file not found: {preds_path}")
    try:
        preds_obj = json.loads(preds_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed predictions JSON {preds_path}: {exc}") from exc
    if not isinstance(preds_obj, dict) or "segments" not in preds_obj:
        raise FormatError(f"predictions JSON must hold a segments list: {preds_path}")

    ann = dataio.read_annotations(args.annotations)
    _video_id, partition = segmentation.read_partition(args.partition)
    labels = dataio.derive_segment_labels(ann, partition)
    segments = sorted(preds_obj["segments"], key=lambda s: s["segment_id"])
    if len(segments) != partition.segment_count:
        raise ConfigError(
            f"predictions cover {len(segments)} segments, partition has {partition.segment_count}"
        )
    preds = [int(s["predicted"]) for s in segments]
    report = metrics.weighted_metrics(metrics.confusion(preds, labels))
    _atomic_write_text(Path(args.out), _dump_json(report.to_json_obj()))
    return 0


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cegl",
        description="Weakly supervised abnormality localization pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic videos with planted abnormalities")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="detect change points in a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train the segment classifier on a data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="score segments of one video")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("localize", help="select top-k frames per abnormal segment")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--k", required=True, type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--all-segments", action="store_true",
                   help="score every segment, not only predicted-abnormal ones")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("coverage-curve", help="coverage at each k over a data directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coverage_curve)

    p = sub.add_parser("evaluate", help="segment-classification metrics from predictions")
    p.add_argument("--preds", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"cegl {args.command}: {exc}", file=sys.stderr)
        return 2
    except (NumericError, CeglError, OSError) as exc:
        print(f"cegl {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
