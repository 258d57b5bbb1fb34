"""Batch command-line pipeline.

Sub-commands cover scene generation and every pipeline stage, plus `run`
for the whole chain: segment -> mean covariance -> dictionary/code init ->
unfolded updates -> feature projection -> CNN training -> classification
-> metrics. Each stage writes artifacts that its stand-alone sub-command
can reload, so a run is resumable stage by stage.

Configuration is a flat, line-oriented `key = value` file; command-line
flags override file values. Exit codes: 0 success, 1 usage error, 2 stage
failure (the failing stage is named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cnn, data, dictlearn, metrics, network, superpixels
from .coding import SrsrConfig
from .errors import DimensionMismatchError, RiemsarError, StageFailureError


@dataclass
class PipelineConfig:
    """Flat pipeline configuration; defaults mirror the reference setup."""

    covariance: str = ""
    labels: str = ""
    superpixels: str = ""  # optional externally computed superpixel map
    output_dir: str = "out"
    delta: float = 100.0
    compactness: float = 10.0
    segmenter_iterations: int = 10
    atoms_per_class: int = 100
    lam: float = 0.5
    step: float = 1e-4
    layers: int = 4
    init_iterations: int = 30
    trace_penalty: float = 1e-2
    dict_iterations: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 50
    patch_size: int = 9
    train_ratio: float = 0.10
    seed: int = 0
    freeze_dictionary: bool = False
    skip_unfolding: bool = False
    cnn_only: bool = False
    threads: int = 0  # reserved; the implementation is serial


_BOOL_KEYS = {"freeze_dictionary", "skip_unfolding", "cnn_only"}
_INT_KEYS = {
    "segmenter_iterations",
    "atoms_per_class",
    "layers",
    "init_iterations",
    "dict_iterations",
    "batch_size",
    "epochs",
    "patch_size",
    "seed",
    "threads",
}
_FLOAT_KEYS = {
    "delta",
    "compactness",
    "lam",
    "step",
    "trace_penalty",
    "learning_rate",
    "train_ratio",
}


def _coerce(key: str, value: str):
    if key in _BOOL_KEYS:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"bad boolean for {key}: {value!r}")
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def parse_config_file(path) -> dict:
    """Read a flat key = value file; '#' starts a comment."""
    known = {f.name for f in PipelineConfig.__dataclass_fields__.values()}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_pipeline_config(path=None, overrides=None) -> PipelineConfig:
    values = {}
    if path:
        values.update(parse_config_file(path))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return PipelineConfig(**values)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_layout(text: str):
    kind, _, rest = text.partition(":")
    if kind == "grid":
        r, _, c = rest.partition("x")
        return data.GridLayout(int(r), int(c))
    if kind == "voronoi":
        return data.VoronoiLayout(int(rest))
    raise ValueError(f"unknown layout {text!r} (use grid:RxC or voronoi:N)")


def _stage(name):
    """Decorator tagging any error with the owning pipeline stage."""

    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageFailureError:
                raise
            except (RiemsarError, OSError, ValueError, np.linalg.LinAlgError) as exc:
                raise StageFailureError(name, str(exc)) from exc

        return inner

    return wrap


# ---------------------------------------------------------------- stages


@_stage("generate")
def _do_generate(args):
    layout = _parse_layout(args.layout)
    protos = data.default_prototypes(args.classes)
    spec = data.SceneSpec(
        args.height, args.width, protos, looks=args.looks, layout=layout, seed=args.seed
    )
    img, labels = data.generate_wishart_scene(spec)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    data.save_covariance(f"{prefix}.cov", img)
    data.save_labels(f"{prefix}.lab", labels)
    data.save_ppm(f"{prefix}.ppm", data.pauli_rgb(img))
    print(f"wrote {prefix}.cov, {prefix}.lab, {prefix}.ppm")


@_stage("segment")
def _do_segment_files(cov_path, out_path, cfg: PipelineConfig):
    img = data.load_covariance(cov_path)
    seg_cfg = superpixels.SegmenterConfig(
        cfg.delta, cfg.compactness, cfg.segmenter_iterations
    )
    seg = superpixels.segment(img, seg_cfg)
    data.save_labels(out_path, seg)
    return seg


@_stage("segment")
def _segment_or_ingest(img, cfg: PipelineConfig):
    if cfg.superpixels:
        return superpixels.ingest_labels(cfg.superpixels)
    seg_cfg = superpixels.SegmenterConfig(
        cfg.delta, cfg.compactness, cfg.segmenter_iterations
    )
    return superpixels.segment(img, seg_cfg)


@_stage("mean-covariance")
def _mean_covariance(img, seg):
    return superpixels.mean_covariance(img, seg)


@_stage("encode")
def _encode(img, labels, sps, cfg: PipelineConfig):
    net = network.init_network(
        labels,
        img,
        cfg.atoms_per_class,
        seed=cfg.seed,
        config=SrsrConfig(
            lam=cfg.lam,
            step=cfg.step,
            layers=cfg.layers,
            init_iterations=cfg.init_iterations,
        ),
        dict_config=dictlearn.DictLearnConfig(
            trace_penalty=cfg.trace_penalty, max_iterations=cfg.dict_iterations
        ),
        freeze_dictionary=cfg.freeze_dictionary,
        skip_unfolding=cfg.skip_unfolding,
    )
    field, diags = network.forward(net, sps)
    return field, diags


@_stage("train")
def _train_cnn(features, labels, cfg: PipelineConfig):
    tc = cnn.TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        patch_size=cfg.patch_size,
        seed=cfg.seed,
        train_ratio=cfg.train_ratio,
    )
    train_set, _ = cnn.extract_patches(features, labels, tc)
    model = cnn.init_model(features.shape[2], int(labels.max()), seed=cfg.seed)
    model, losses = cnn.train(model, train_set, tc)
    return model, losses


@_stage("classify")
def _classify(model, features, patch_size):
    return cnn.classify_image(model, features, patch_size)


@_stage("evaluate")
def _evaluate(pred, truth):
    return metrics.report(metrics.confusion(pred, truth))


def _write_trace_csv(path, diags: network.ForwardDiagnostics):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "mean_objective", "dict_change", "failed_steps"])
        means = diags.mean_objective
        writer.writerow([0, f"{means[0]:.12g}", "", ""])
        for k in range(1, len(means)):
            change = diags.dict_change[k - 1] if k - 1 < len(diags.dict_change) else ""
            failed = (
                diags.failed_counts[k - 1] if k - 1 < len(diags.failed_counts) else ""
            )
            writer.writerow([k, f"{means[k]:.12g}", change, failed])


def _write_loss_csv(path, losses):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(losses, 1):
            writer.writerow([i, f"{loss:.12g}"])


def run_pipeline(cfg: PipelineConfig) -> metrics.MetricsReport:
    """Execute the whole pipeline per the configuration; returns the report."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    img = data.load_covariance(cfg.covariance)
    truth = data.load_labels(cfg.labels)
    if truth.shape != img.shape[:2]:
        raise StageFailureError("load", "covariance and label rasters disagree")

    if cfg.cnn_only:
        features = network.raw_pixel_features(img)
    else:
        seg = _segment_or_ingest(img, cfg)
        data.save_labels(out / "superpixels.lab", seg)
        sps = _mean_covariance(img, seg)
        field, diags = _encode(img, truth, sps, cfg)
        network.save_features(out / "features.fea", field)
        _write_trace_csv(out / "objective_trace.csv", diags)
        features = network.project_to_pixels(field, seg)

    model, losses = _train_cnn(features, truth, cfg)
    cnn.save_model(out / "model.cnn", model)
    _write_loss_csv(out / "loss_curve.csv", losses)

    pred = _classify(model, features, cfg.patch_size)
    data.save_labels(out / "classification.lab", pred)
    data.save_ppm(out / "classification.ppm", data.labels_to_rgb(pred))

    rep = _evaluate(pred, truth)
    (out / "metrics.txt").write_text(metrics.report_text(rep))
    (out / "metrics.csv").write_text(metrics.report_csv(rep))
    return rep


# ------------------------------------------------------------ sub-commands


def _add_config_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--covariance")
    p.add_argument("--labels")
    p.add_argument("--superpixels")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--delta", type=float)
    p.add_argument("--compactness", type=float)
    p.add_argument("--atoms-per-class", dest="atoms_per_class", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--init-iterations", dest="init_iterations", type=int)
    p.add_argument("--trace-penalty", dest="trace_penalty", type=float)
    p.add_argument("--dict-iterations", dest="dict_iterations", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--train-ratio", dest="train_ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="reserved; execution is serial")
    p.add_argument("--freeze-dictionary", dest="freeze_dictionary",
                   action="store_const", const=True, default=None)
    p.add_argument("--skip-unfolding", dest="skip_unfolding",
                   action="store_const", const=True, default=None)
    p.add_argument("--cnn-only", dest="cnn_only",
                   action="store_const", const=True, default=None)


class UsageError(Exception):
    """Bad invocation (unknown config key, unparseable value): exit code 1."""


def _config_from_args(args) -> PipelineConfig:
    keys = set(PipelineConfig.__dataclass_fields__)
    overrides = {k: v for k, v in vars(args).items() if k in keys}
    try:
        return load_pipeline_config(args.config, overrides)
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="riemsar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="synthesize a Wishart scene")
    g.add_argument("--height", type=int, required=True)
    g.add_argument("--width", type=int, required=True)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--looks", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--layout", default="grid:1x3")
    g.add_argument("--out", required=True, help="output path prefix")

    s = sub.add_parser("segment", help="superpixel-segment a covariance raster")
    _add_config_flags(s)
    s.add_argument("--out", required=True)

    e = sub.add_parser("encode", help="sparse-encode superpixels")
    _add_config_flags(e)
    e.add_argument("--segmentation", help="PSARLAB1 superpixel map to reuse")
    e.add_argument("--out", required=True, help="feature field path")
    e.add_argument("--trace", help="objective trace CSV path")

    t = sub.add_parser("train", help="train the CNN on projected features")
    _add_config_flags(t)
    t.add_argument("--features", help="PSARFEA1 feature field")
    t.add_argument("--segmentation", help="superpixel map for projection")
    t.add_argument("--out", required=True, help="model checkpoint path")
    t.add_argument("--loss-curve", dest="loss_curve")

    c = sub.add_parser("classify", help="classify an image with a trained model")
    _add_config_flags(c)
    c.add_argument("--model", required=True)
    c.add_argument("--features")
    c.add_argument("--segmentation")
    c.add_argument("--out", required=True, help="classification map path prefix")

    v = sub.add_parser("evaluate", help="compare a classification map to truth")
    v.add_argument("--pred", required=True)
    v.add_argument("--truth", required=True)
    v.add_argument("--out", help="report path prefix (writes .csv and .txt)")

    r = sub.add_parser("run", help="run the full pipeline")
    _add_config_flags(r)
    return parser


def _pixel_features(args, cfg: PipelineConfig):
    """Features for train/classify: projected field or the raw baseline."""
    if cfg.cnn_only:
        img = data.load_covariance(cfg.covariance)
        return network.raw_pixel_features(img)
    if not args.features or not args.segmentation:
        raise StageFailureError(
            "features", "--features and --segmentation required unless --cnn-only"
        )
    field = network.load_features(args.features)
    seg = superpixels.ingest_labels(args.segmentation)
    return network.project_to_pixels(field, seg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            _do_generate(args)
        elif args.command == "segment":
            cfg = _config_from_args(args)
            seg = _do_segment_files(cfg.covariance, args.out, cfg)
            print(f"wrote {args.out} ({superpixels.segment_count(seg)} segments)")
        elif args.command == "encode":
            cfg = _config_from_args(args)
            img = data.load_covariance(cfg.covariance)
            truth = data.load_labels(cfg.labels)
            if args.segmentation:
                seg = superpixels.ingest_labels(args.segmentation)
            else:
                # keep the map the features refer to reloadable downstream
                seg = _segment_or_ingest(img, cfg)
                data.save_labels(f"{args.out}.superpixels.lab", seg)
                print(f"wrote {args.out}.superpixels.lab")
            sps = _mean_covariance(img, seg)
            field, diags = _encode(img, truth, sps, cfg)
            network.save_features(args.out, field)
            if args.trace:
                _write_trace_csv(args.trace, diags)
            print(f"wrote {args.out} ({field.shape[0]} segments x {field.shape[1]})")
        elif args.command == "train":
            cfg = _config_from_args(args)
            truth = data.load_labels(cfg.labels)
            features = _pixel_features(args, cfg)
            model, losses = _train_cnn(features, truth, cfg)
            cnn.save_model(args.out, model)
            if args.loss_curve:
                _write_loss_csv(args.loss_curve, losses)
            print(f"wrote {args.out} (final loss {losses[-1]:.4g})" if losses
                  else f"wrote {args.out}")
        elif args.command == "classify":
            cfg = _config_from_args(args)
            model = cnn.load_model(args.model)
            features = _pixel_features(args, cfg)
            pred = _classify(model, features, cfg.patch_size)
            data.save_labels(f"{args.out}.lab", pred)
            data.save_ppm(f"{args.out}.ppm", data.labels_to_rgb(pred))
            print(f"wrote {args.out}.lab, {args.out}.ppm")
        elif args.command == "evaluate":
            pred = data.load_labels(args.pred)
            truth = data.load_labels(args.truth)
            if pred.shape != truth.shape:
                raise DimensionMismatchError(
                    f"prediction {pred.shape} vs truth {truth.shape}"
                )
            rep = _evaluate(pred, truth)
            text = metrics.report_text(rep)
            sys.stdout.write(text)
            if args.out:
                Path(f"{args.out}.txt").write_text(text)
                Path(f"{args.out}.csv").write_text(metrics.report_csv(rep))
        elif args.command == "run":
            cfg = _config_from_args(args)
            rep = run_pipeline(cfg)
            print(f"oa={rep.oa:.4f} aa={rep.aa:.4f} kappa={rep.kappa:.4f}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except StageFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RiemsarError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
