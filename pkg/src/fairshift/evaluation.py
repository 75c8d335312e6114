"""Metrics, confidence intervals, and the full experiment orchestrator.

run_experiment drives the whole protocol for one dataset: for every
(alpha, beta) sampling setting and repetition it draws a biased split,
estimates densities, trains each requested method on the labeled source
plus unlabeled target, and scores the predictions against the sealed
target labels.  Per-cell failures are recorded, not fatal.  All randomness
derives from one base seed, so reruns reproduce results exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy

from . import __version__ as _pkg_version
from .baselines import fit_hardt, train_fair_lr, train_lr
from .core import FairnessCriterion
from .data import Dataset, FeatureMap
from .density import DensityConfig, build_density_info, default_epsilon
from .errors import ConvergenceWarningFlag, DataError, DomainError, FairshiftError
from .shift import SealedLabels, ShiftConfig, ShiftSplit, biased_split
from .training import TrainConfig, fit_fair_robust_shift, select_l2_strength, train_rba

log = logging.getLogger(__name__)

METHODS = (
    "lr",
    "lr_iw",
    "rba",
    "hardt",
    "fair_lr",
    "fair_lr_iw",
    "fair_robust_shift",
)

_METRICS = ("error", "deo", "dp_gap", "deodds")


@dataclass
class MetricReport:
    """Classification error and group-rate fairness gaps on one sample.

    The error rate thresholds the predicted probabilities; the per-group
    rates average them directly, so tpr_k is the expected positive rate of
    the probabilistic classifier on group k's positives.  On hard 0/1
    predictions the two readings coincide.
    """

    error: float
    deo: float | None
    dp_gap: float | None
    deodds: float | None
    tpr_0: float | None
    tpr_1: float | None
    fpr_0: float | None
    fpr_1: float | None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "error": self.error,
            "deo": self.deo,
            "dp_gap": self.dp_gap,
            "deodds": self.deodds,
            "tpr_0": self.tpr_0,
            "tpr_1": self.tpr_1,
            "fpr_0": self.fpr_0,
            "fpr_1": self.fpr_1,
            "flags": list(self.flags),
        }


def _rate(pred: np.ndarray, mask: np.ndarray) -> float | None:
    if not mask.any():
        return None
    return float(pred[mask].mean())


def _gap(a: float | None, b: float | None) -> float | None:
    if a is None or b is None:
        return None
    return abs(a - b)


def evaluate(predictions: np.ndarray, truth: np.ndarray | SealedLabels,
             attribute: np.ndarray, threshold: float = 0.5) -> MetricReport:
    """Score per-row positive probabilities against the true labels.

    error applies the decision threshold; the group rates behind deo,
    dp_gap, and deodds average the probabilities themselves, reading each
    prediction as the chance the classifier outputs 1 for that row.  Rates
    that would divide by an empty group (e.g. the true positive rate of a
    group with no positives) are reported as None and flagged rather than
    silently zeroed.
    """
    if isinstance(truth, SealedLabels):
        truth = truth.unseal()
    predictions = np.asarray(predictions, dtype=float)
    truth = np.asarray(truth, dtype=int)
    attribute = np.asarray(attribute, dtype=int)
    if not (len(predictions) == len(truth) == len(attribute)):
        raise DataError("predictions, truth, and attribute must align")
    if len(predictions) == 0:
        raise DataError("nothing to evaluate")
    pred = (predictions >= threshold).astype(int)

    error = float((pred != truth).mean())
    flags: list[str] = []
    tpr = {}
    fpr = {}
    pos_rate = {}
    for k in (0, 1):
        group = attribute == k
        tpr[k] = _rate(predictions, group & (truth == 1))
        fpr[k] = _rate(predictions, group & (truth == 0))
        pos_rate[k] = _rate(predictions, group)
        if tpr[k] is None:
            flags.append(f"{ConvergenceWarningFlag.UNDEFINED_TPR}_group_{k}")
    deo = _gap(tpr[1], tpr[0])
    dp_gap = _gap(pos_rate[1], pos_rate[0])
    fpr_gap = _gap(fpr[1], fpr[0])
    deodds = None if (deo is None or fpr_gap is None) else deo + fpr_gap
    return MetricReport(
        error=error, deo=deo, dp_gap=dp_gap, deodds=deodds,
        tpr_0=tpr[0], tpr_1=tpr[1], fpr_0=fpr[0], fpr_1=fpr[1], flags=flags,
    )


def aggregate_ci(values) -> tuple[float, float]:
    """Mean and normal-approximation 95% halfwidth over repetitions.

    Uses the sample standard deviation; a single value yields halfwidth 0
    (callers should flag it).
    """
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise DataError("aggregate_ci needs at least one value")
    if values.size == 1:
        return float(values[0]), 0.0
    sd = float(values.std(ddof=1))
    return float(values.mean()), 1.96 * sd / float(np.sqrt(values.size))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything run_experiment needs beyond the dataset itself."""

    dataset_name: str = "dataset"
    settings: tuple[tuple[float, float], ...] = ((0.0, 1.0), (1.0, 2.0), (1.5, 3.0))
    repetitions: int = 10
    methods: tuple[str, ...] = METHODS
    criterion: FairnessCriterion = FairnessCriterion.EQUALIZED_OPPORTUNITY
    sample_fraction: float = 0.4
    base_seed: int = 0
    threshold: float = 0.5
    alpha_in_std_units: bool = True
    density: DensityConfig | None = None
    train: TrainConfig = TrainConfig()
    jobs: int = 1

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise DomainError(f"unknown methods {unknown}; choose from {METHODS}")
        if self.repetitions < 1:
            raise DomainError("repetitions must be at least 1")
        if not self.settings:
            raise DomainError("need at least one (alpha, beta) setting")
        if self.base_seed < 0:
            raise DomainError("base_seed must be non-negative")
        if self.jobs < 1:
            raise DomainError("jobs must be at least 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        """Build a config from a plain JSON document, rejecting unknown keys."""
        doc = dict(doc)
        kwargs: dict = {}
        for key in ("dataset_name", "repetitions", "sample_fraction",
                    "base_seed", "threshold", "alpha_in_std_units", "jobs"):
            if key in doc:
                kwargs[key] = doc.pop(key)
        settings = doc.pop("settings", None)
        if settings is not None:
            try:
                kwargs["settings"] = tuple(
                    (float(a), float(b)) for a, b in settings
                )
            except (TypeError, ValueError) as exc:
                raise DomainError(
                    f"settings must be [alpha, beta] pairs: {exc}"
                ) from None
        methods = doc.pop("methods", None)
        if methods is not None:
            kwargs["methods"] = tuple(str(m) for m in methods)
        criterion = doc.pop("criterion", None)
        if criterion is not None:
            try:
                kwargs["criterion"] = FairnessCriterion(criterion)
            except ValueError:
                raise DomainError(f"unknown criterion {criterion!r}") from None
        density = doc.pop("density", None)
        if density is not None:
            kwargs["density"] = _density_config_from_dict(density)
        train = doc.pop("train", None)
        if train is not None:
            kwargs["train"] = _train_config_from_dict(train)
        if doc:
            raise DomainError(f"unknown experiment config keys {sorted(doc)}")
        return cls(**kwargs)


def _density_config_from_dict(doc: dict) -> DensityConfig:
    doc = dict(doc)
    kwargs: dict = {}
    for key in ("bandwidth", "epsilon", "num_components"):
        if key in doc:
            kwargs[key] = doc.pop(key)
    clip = doc.pop("ratio_clip", None)
    if clip is not None:
        kwargs["ratio_clip"] = (float(clip[0]), float(clip[1]))
    if doc:
        raise DomainError(f"unknown density config keys {sorted(doc)}")
    return DensityConfig(**kwargs)


def _train_config_from_dict(doc: dict) -> TrainConfig:
    doc = dict(doc)
    kwargs: dict = {}
    for key in ("learning_rate", "decay_iters", "max_iters", "grad_norm_tol",
                "l2_strength", "mu_tol", "mu_grid_points", "solver_tol",
                "seed"):
        if key in doc:
            kwargs[key] = doc.pop(key)
    grid = doc.pop("l2_grid", None)
    if grid is not None:
        kwargs["l2_grid"] = tuple(float(c) for c in grid)
    interval = doc.pop("mu_interval", None)
    if interval is not None:
        kwargs["mu_interval"] = (float(interval[0]), float(interval[1]))
    if doc:
        raise DomainError(f"unknown train config keys {sorted(doc)}")
    return TrainConfig(**kwargs)


@dataclass
class CellRecord:
    """One (setting, repetition, method) outcome."""

    dataset: str
    alpha: float
    beta: float
    setting_index: int
    repetition: int
    seed: int
    method: str
    report: MetricReport | None
    mu: float | None
    converged: bool | None
    flags: list[str]
    failure: str | None = None
    source_projection_mean: float | None = None
    source_projection_std: float | None = None
    target_projection_mean: float | None = None
    target_projection_std: float | None = None

    def metric(self, name: str) -> float | None:
        if self.report is None:
            return None
        return getattr(self.report, name)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _train_method(name: str, split: ShiftSplit, densities, feature_map,
                  criterion, tcfg: TrainConfig, dcfg: DensityConfig):
    """Returns (model, mu, extra flags)."""
    src_info, trg_info = densities
    if name == "lr":
        model = train_lr(split.source, None, feature_map, tcfg)
        return model, None, []
    if name == "lr_iw":
        model = train_lr(split.source, src_info.ratio_ts, feature_map, tcfg,
                         method="lr_iw")
        return model, None, []
    if name == "rba":
        model = train_rba(split.source, src_info, feature_map, tcfg)
        return model, None, []
    if name == "hardt":
        model = fit_hardt(split.source, feature_map, tcfg)
        return model, None, []
    if name == "fair_lr":
        model, search = train_fair_lr(split.source, None, feature_map,
                                      criterion, tcfg)
        return model, search.mu, search.flags
    if name == "fair_lr_iw":
        model, search = train_fair_lr(split.source, src_info.ratio_ts,
                                      feature_map, criterion, tcfg)
        return model, search.mu, search.flags
    if name == "fair_robust_shift":
        model, search = fit_fair_robust_shift(
            split.source, split.target_unlabeled, densities, criterion,
            tcfg, feature_map, dcfg,
        )
        return model, search.mu, search.flags
    raise DomainError(f"unknown method {name!r}")


def _run_cell(data: Dataset, cfg: ExperimentConfig, dcfg: DensityConfig,
              tcfg: TrainConfig, feature_map: FeatureMap, setting_index: int,
              alpha: float, beta: float, repetition: int) -> list[CellRecord]:
    split_seed = _derive_seed(cfg.base_seed, setting_index, repetition)
    split = biased_split(data, ShiftConfig(
        alpha=alpha, beta=beta, sample_fraction=cfg.sample_fraction,
        seed=split_seed, alpha_in_std_units=cfg.alpha_in_std_units,
    ))
    densities = build_density_info(split.source, split.target_unlabeled, dcfg)
    records = []
    for method_index, name in enumerate(cfg.methods):
        method_seed = _derive_seed(cfg.base_seed, setting_index, repetition,
                                   1000 + method_index)
        rng = np.random.default_rng(method_seed)
        cell_cfg = replace(tcfg, seed=method_seed)
        record = CellRecord(
            dataset=cfg.dataset_name, alpha=alpha, beta=beta,
            setting_index=setting_index, repetition=repetition,
            seed=split_seed, method=name, report=None, mu=None,
            converged=None, flags=[],
            source_projection_mean=split.source_projection_mean,
            source_projection_std=split.source_projection_std,
            target_projection_mean=split.target_projection_mean,
            target_projection_std=split.target_projection_std,
        )
        try:
            model, mu, extra = _train_method(
                name, split, densities, feature_map, cfg.criterion,
                cell_cfg, dcfg,
            )
            predictions = model.predict_proba(
                split.target_unlabeled, densities[1], rng
            )
            report = evaluate(predictions, split.target_labels_sealed,
                              split.target_unlabeled.attribute, cfg.threshold)
            record.report = report
            record.mu = mu
            record.converged = bool(model.converged)
            record.flags = list(report.flags) + list(extra)
            if not model.converged:
                record.flags.append(ConvergenceWarningFlag.MAX_ITERS)
        except FairshiftError as exc:
            log.warning("cell (%s a=%g b=%g rep=%d) failed: %s",
                        name, alpha, beta, repetition, exc)
            record.failure = str(exc)
            record.flags = ["failed"]
        records.append(record)
    return records


def _run_cell_star(args) -> list[CellRecord]:
    return _run_cell(*args)


@dataclass
class AggregateRow:
    dataset: str
    alpha: float
    beta: float
    method: str
    n_reps: int
    means: dict
    cis: dict
    flags: list[str]


@dataclass
class ExperimentResult:
    """All cell records plus the resolved configuration."""

    records: list[CellRecord]
    config: ExperimentConfig
    l2_strength: float
    density_config: DensityConfig

    def aggregates(self) -> list[AggregateRow]:
        rows = []
        for si, (alpha, beta) in enumerate(self.config.settings):
            for method in self.config.methods:
                cells = [
                    r for r in self.records
                    if r.setting_index == si and r.method == method
                ]
                ok = [r for r in cells if r.failure is None]
                means: dict = {}
                cis: dict = {}
                flags: list[str] = []
                if len(ok) < len(cells):
                    flags.append(f"failed_repetitions={len(cells) - len(ok)}")
                for metric in _METRICS:
                    values = [r.metric(metric) for r in ok]
                    values = [v for v in values if v is not None]
                    if not values:
                        means[metric] = None
                        cis[metric] = None
                        if ok:
                            flags.append(f"undefined_{metric}")
                        continue
                    if len(values) < len(ok):
                        flags.append(
                            f"undefined_{metric}_repetitions={len(ok) - len(values)}"
                        )
                    mean, ci = aggregate_ci(values)
                    means[metric] = mean
                    cis[metric] = ci
                    if len(values) == 1:
                        flags.append(ConvergenceWarningFlag.SINGLETON_CI)
                if not ok:
                    flags.append("no_successful_repetitions")
                rows.append(AggregateRow(
                    dataset=self.config.dataset_name, alpha=alpha, beta=beta,
                    method=method, n_reps=len(ok), means=means, cis=cis,
                    flags=sorted(set(flags)),
                ))
        return rows

    def write_results_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "dataset", "alpha", "beta", "seed", "repetition", "method",
                "error", "deo", "dp_gap", "deodds", "mu", "converged", "flags",
            ])
            for r in self.records:
                writer.writerow([
                    r.dataset, r.alpha, r.beta, r.seed, r.repetition, r.method,
                    _fmt(r.metric("error")), _fmt(r.metric("deo")),
                    _fmt(r.metric("dp_gap")), _fmt(r.metric("deodds")),
                    _fmt(r.mu), "" if r.converged is None else r.converged,
                    ";".join(r.flags),
                ])

    def write_aggregate_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            header = ["dataset", "alpha", "beta", "method", "n_reps"]
            for metric in _METRICS:
                header += [f"{metric}_mean", f"{metric}_ci"]
            header.append("flags")
            writer.writerow(header)
            for row in self.aggregates():
                out = [row.dataset, row.alpha, row.beta, row.method, row.n_reps]
                for metric in _METRICS:
                    out += [_fmt(row.means[metric]), _fmt(row.cis[metric])]
                out.append(";".join(row.flags))
                writer.writerow(out)

    def plotdata(self) -> dict:
        """Per-setting method points with CI bars on the error/DEO axes."""
        settings = []
        aggregates = self.aggregates()
        for si, (alpha, beta) in enumerate(self.config.settings):
            methods = {}
            for row in aggregates:
                if (row.alpha, row.beta) != (alpha, beta):
                    continue
                methods[row.method] = {
                    "error_mean": row.means["error"],
                    "error_ci": row.cis["error"],
                    "deo_mean": row.means["deo"],
                    "deo_ci": row.cis["deo"],
                    "n_reps": row.n_reps,
                }
            settings.append({"alpha": alpha, "beta": beta, "methods": methods})
        return {
            "format": "fairshift-plotdata",
            "version": 1,
            "dataset": self.config.dataset_name,
            "criterion": self.config.criterion.value,
            "l2_strength": self.l2_strength,
            "ci": "normal approximation, mean +/- 1.96 sd / sqrt(reps)",
            "settings": settings,
        }

    def write_plotdata_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.plotdata(), fh, indent=2)
            fh.write("\n")


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def run_experiment(data: Dataset, cfg: ExperimentConfig) -> ExperimentResult:
    """Run the full settings x repetitions x methods grid on one dataset.

    The L2 strength is cross-validated once, on the source of the first
    split, and reused everywhere.  Every cell's randomness is derived from
    (base seed, setting index, repetition index), so cells are independent
    and the run is reproducible and order-insensitive.
    """
    if data.labels is None:
        raise DataError("run_experiment needs a labeled dataset")
    feature_map = FeatureMap.for_dataset(data)
    dcfg = cfg.density or DensityConfig(epsilon=default_epsilon(data.n))
    tcfg = cfg.train
    if tcfg.l2_strength is None:
        alpha0, beta0 = cfg.settings[0]
        first = biased_split(data, ShiftConfig(
            alpha=alpha0, beta=beta0, sample_fraction=cfg.sample_fraction,
            seed=_derive_seed(cfg.base_seed, 0, 0),
            alpha_in_std_units=cfg.alpha_in_std_units,
        ))
        tcfg = replace(tcfg, l2_strength=select_l2_strength(
            first.source, feature_map, tcfg
        ))
    log.info("experiment %s: %d settings x %d repetitions x %d methods (C=%g)",
             cfg.dataset_name, len(cfg.settings), cfg.repetitions,
             len(cfg.methods), tcfg.l2_strength)

    tasks = [
        (data, cfg, dcfg, tcfg, feature_map, si, alpha, beta, rep)
        for si, (alpha, beta) in enumerate(cfg.settings)
        for rep in range(cfg.repetitions)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(_run_cell_star, tasks))
    else:
        chunks = [_run_cell_star(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    return ExperimentResult(records=records, config=cfg,
                            l2_strength=float(tcfg.l2_strength),
                            density_config=dcfg)


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path: str, config_payload: dict, base_seed: int,
                   extra: dict | None = None) -> None:
    """Record enough context to reproduce a run byte for byte."""
    manifest = {
        "config_hash": config_hash(config_payload),
        "config": config_payload,
        "base_seed": base_seed,
        "versions": {
            "fairshift": _pkg_version,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")
