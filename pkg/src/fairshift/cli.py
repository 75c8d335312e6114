"""Command line interface.

Subcommands mirror the pipeline stages: ingest a raw CSV, draw a biased
source/target split, estimate densities, train one model, evaluate a saved
model, or run the whole experiment grid from a JSON config.  Exit codes:
0 on success, 1 for usage errors, 2 for data/domain/numerical failures.

Set FAIRSHIFT_LOG to error (default), info, or debug to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .baselines import fit_hardt, train_fair_lr, train_lr
from .core import FairnessCriterion
from .data import (
    Dataset,
    FeatureMap,
    SchemaConfig,
    continuous_feature_names,
    load_csv,
    write_dataset_csv,
    zscore_normalize,
)
from .density import (
    DensityConfig,
    build_density_info,
    default_epsilon,
    read_density_csv,
    write_density_csv,
)
from .errors import DataError, FairshiftError
from .evaluation import ExperimentConfig, evaluate, run_experiment, write_manifest
from .models import load_model, save_model
from .shift import ShiftConfig, biased_split
from .training import TrainConfig, fit_fair_robust_shift, train_rba

log = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> None:
    name = os.environ.get("FAIRSHIFT_LOG", "error").strip().lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(name, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _ingest(data_path: str, schema_path: str) -> tuple[Dataset, SchemaConfig]:
    """Load, one-hot encode, and z-score a raw CSV."""
    schema = SchemaConfig.from_json(schema_path)
    data = load_csv(data_path, schema)
    data = zscore_normalize(data, continuous_feature_names(data, schema))
    return data, schema


def _processed_schema(schema: SchemaConfig) -> SchemaConfig:
    """Schema for files this package writes: encoded values, no categoricals."""
    return SchemaConfig(
        label_column=schema.label_column,
        attribute_column=schema.attribute_column,
        positive_label_value="1",
        privileged_attribute_value="1",
        categorical_columns=(),
    )


def _write_schema(schema: SchemaConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


def _write_labels_csv(path: str, labels: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "label"])
        for i, y in enumerate(labels):
            writer.writerow([i, int(y)])


def _read_labels_csv(path: str, expected_n: int) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row_index", "label"]:
            raise DataError(f"{path}: expected header row_index,label")
        labels = np.full(expected_n, -1, dtype=int)
        for row in reader:
            if not row:
                continue
            try:
                idx, value = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise DataError(f"{path}: malformed row {row!r}") from None
            if not 0 <= idx < expected_n:
                raise DataError(f"{path}: row_index {idx} out of range")
            if labels[idx] != -1:
                raise DataError(f"{path}: duplicate row_index {idx}")
            if value not in (0, 1):
                raise DataError(f"{path}: label must be 0 or 1, got {value}")
            labels[idx] = value
    if (labels == -1).any():
        raise DataError(f"{path}: missing labels for some rows")
    return labels


def _file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cmd_ingest(args: argparse.Namespace) -> int:
    data, schema = _ingest(args.data, args.schema)
    write_dataset_csv(data, schema, args.out)
    _write_schema(_processed_schema(schema), args.out_schema)
    print(f"wrote {args.out} ({data.n} rows, {data.dim} feature columns) "
          f"and {args.out_schema}")
    return 0


def cmd_shift_sample(args: argparse.Namespace) -> int:
    data, schema = _ingest(args.data, args.schema)
    split = biased_split(data, ShiftConfig(
        alpha=args.alpha, beta=args.beta, sample_fraction=args.fraction,
        seed=args.seed, alpha_in_std_units=not args.alpha_absolute,
    ))
    os.makedirs(args.outdir, exist_ok=True)
    out_schema = _processed_schema(schema)
    source_path = os.path.join(args.outdir, "source.csv")
    target_path = os.path.join(args.outdir, "target.csv")
    labels_path = os.path.join(args.outdir, "target_labels.csv")
    schema_path = os.path.join(args.outdir, "split_schema.json")
    write_dataset_csv(split.source, out_schema, source_path)
    write_dataset_csv(split.target_unlabeled, out_schema, target_path)
    _write_labels_csv(labels_path, split.target_labels_sealed.unseal())
    _write_schema(out_schema, schema_path)
    log.info("source projection mean %.4f std %.4f; target mean %.4f std %.4f",
             split.source_projection_mean, split.source_projection_std,
             split.target_projection_mean, split.target_projection_std)
    print(f"wrote {source_path} ({split.source.n} rows), {target_path} "
          f"({split.target_unlabeled.n} rows), {labels_path}, {schema_path}")
    return 0


def cmd_densities(args: argparse.Namespace) -> int:
    schema = SchemaConfig.from_json(args.schema)
    source = load_csv(args.source, schema)
    target = load_csv(args.target, schema)
    epsilon = args.epsilon
    if epsilon is None:
        epsilon = default_epsilon(source.n + target.n)
    cfg = DensityConfig(bandwidth=args.bandwidth, epsilon=epsilon,
                        num_components=args.components)
    info_src, info_trg = build_density_info(source, target, cfg)
    os.makedirs(args.outdir, exist_ok=True)
    src_path = os.path.join(args.outdir, "densities_source.csv")
    trg_path = os.path.join(args.outdir, "densities_target.csv")
    write_density_csv(info_src, src_path)
    write_density_csv(info_trg, trg_path)
    print(f"wrote {src_path} and {trg_path} (bandwidth={cfg.bandwidth}, "
          f"epsilon={cfg.epsilon}, components={cfg.num_components})")
    return 0


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise DataError(message)


def cmd_train(args: argparse.Namespace) -> int:
    schema = SchemaConfig.from_json(args.schema)
    source = load_csv(args.source, schema)
    feature_map = FeatureMap.for_dataset(source)
    criterion = FairnessCriterion(args.criterion)
    cfg = TrainConfig(l2_strength=args.l2_strength, max_iters=args.max_iters,
                      seed=args.seed)
    needs_src_density = args.method in ("lr_iw", "rba", "fair_lr_iw",
                                        "fair_robust_shift")
    src_info = None
    if args.densities_source is not None:
        src_info = read_density_csv(args.densities_source)
    _require(not needs_src_density or src_info is not None,
             f"method {args.method!r} needs --densities-source")
    if src_info is not None:
        _require(len(src_info) == source.n,
                 "--densities-source row count does not match the source file")

    mu = None
    if args.method == "lr":
        model = train_lr(source, None, feature_map, cfg)
    elif args.method == "lr_iw":
        model = train_lr(source, src_info.ratio_ts, feature_map, cfg,
                         method="lr_iw")
    elif args.method == "rba":
        model = train_rba(source, src_info, feature_map, cfg)
    elif args.method == "hardt":
        model = fit_hardt(source, feature_map, cfg)
    elif args.method == "fair_lr":
        model, search = train_fair_lr(source, None, feature_map, criterion, cfg)
        mu = search.mu
    elif args.method == "fair_lr_iw":
        model, search = train_fair_lr(source, src_info.ratio_ts, feature_map,
                                      criterion, cfg)
        mu = search.mu
    else:
        _require(args.target is not None,
                 "method 'fair_robust_shift' needs --target")
        _require(args.densities_target is not None,
                 "method 'fair_robust_shift' needs --densities-target")
        target = load_csv(args.target, schema).without_labels()
        trg_info = read_density_csv(args.densities_target)
        _require(len(trg_info) == target.n,
                 "--densities-target row count does not match the target file")
        model, search = fit_fair_robust_shift(
            source, target, (src_info, trg_info), criterion, cfg, feature_map
        )
        mu = search.mu
    save_model(model, args.out)
    summary = f"trained {args.method} (converged={model.converged}"
    if mu is not None:
        summary += f", mu={mu:.6g}"
    print(summary + f"); wrote {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    schema = SchemaConfig.from_json(args.schema)
    data = load_csv(args.data, schema)
    if data.labels is None:
        _require(args.labels is not None,
                 f"{args.data} has no label column; pass --labels")
        data = Dataset(features=data.features, attribute=data.attribute,
                       labels=_read_labels_csv(args.labels, data.n),
                       feature_names=data.feature_names)
    model = load_model(args.model)
    density = None
    if args.densities is not None:
        density = read_density_csv(args.densities)
        _require(len(density) == data.n,
                 "--densities row count does not match the data file")
    rng = np.random.default_rng(args.seed)
    predictions = model.predict_proba(data, density, rng)
    report = evaluate(predictions, data.labels, data.attribute, args.threshold)
    doc = {"method": model.method, "n": data.n, "threshold": args.threshold}
    doc.update(report.to_dict())
    text = json.dumps(doc, indent=2)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {args.config}: {exc}") from exc
    cfg = ExperimentConfig.from_dict(doc)
    data, _ = _ingest(args.data, args.schema)
    result = run_experiment(data, cfg)
    os.makedirs(args.outdir, exist_ok=True)
    results_path = os.path.join(args.outdir, "results.csv")
    aggregate_path = os.path.join(args.outdir, "aggregate.csv")
    plot_path = os.path.join(args.outdir, "plotdata.json")
    manifest_path = os.path.join(args.outdir, "manifest.json")
    result.write_results_csv(results_path)
    result.write_aggregate_csv(aggregate_path)
    result.write_plotdata_json(plot_path)
    write_manifest(manifest_path, doc, cfg.base_seed, extra={
        "data_file": args.data,
        "data_sha256": _file_sha256(args.data),
        "rows": data.n,
        "feature_columns": data.dim,
        "l2_strength": result.l2_strength,
        "density_epsilon": result.density_config.epsilon,
        "outputs": ["results.csv", "aggregate.csv", "plotdata.json"],
    })
    failures = sum(1 for r in result.records if r.failure is not None)
    print(f"wrote {results_path}, {aggregate_path}, {plot_path}, "
          f"{manifest_path} ({len(result.records)} cells, {failures} failed)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairshift",
        description="Fair robust log-loss classification under covariate shift.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="encode and normalize a raw CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-schema", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("shift-sample",
                       help="draw a biased source/target split")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--alpha", type=float, required=True,
                   help="mean offset of the source sampler along the first "
                        "principal component")
    p.add_argument("--beta", type=float, required=True,
                   help="factor by which the source sampler narrows the "
                        "projection std")
    p.add_argument("--fraction", type=float, default=0.4,
                   help="fraction of rows in each of source and target")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha-absolute", action="store_true",
                   help="treat --alpha as an absolute offset instead of "
                        "a multiple of the projection std")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_shift_sample)

    p = sub.add_parser("densities",
                       help="estimate source/target densities and ratios")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--bandwidth", type=float, default=0.3)
    p.add_argument("--epsilon", type=float, default=None,
                   help="density floor; defaults by combined sample size")
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_densities)

    p = sub.add_parser("train", help="train one model on a source sample")
    p.add_argument("--method", required=True,
                   choices=["lr", "lr_iw", "rba", "hardt", "fair_lr",
                            "fair_lr_iw", "fair_robust_shift"])
    p.add_argument("--source", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--target", default=None,
                   help="unlabeled target CSV (fair_robust_shift only)")
    p.add_argument("--densities-source", default=None)
    p.add_argument("--densities-target", default=None)
    p.add_argument("--criterion", default="equalized_opportunity",
                   choices=[c.value for c in FairnessCriterion])
    p.add_argument("--l2-strength", type=float, default=None,
                   help="L2 regularization; cross-validated when omitted")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on labeled data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--labels", default=None,
                   help="row_index,label CSV when --data has no label column")
    p.add_argument("--densities", default=None,
                   help="density CSV evaluated at the data rows (needed by "
                        "rba and fair_robust_shift models)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0,
                   help="seed for randomized predictions (hardt)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment",
                       help="run the full grid from a JSON config")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except FairshiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
