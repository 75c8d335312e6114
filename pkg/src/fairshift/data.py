"""Tabular loading, encoding, and the joint feature map.

A Dataset keeps the raw design matrix separate from the binary protected
attribute and the (optional) binary labels.  Categorical columns are one-hot
encoded at load time; continuous columns can be z-scored in place.  The
feature map phi(x, a, y) used by every model in this package pairs the
covariates with the positive label only: phi(x, a, 0) is identically zero,
so a model's score for a row is theta @ phi(x, a, 1).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, SchemaError


@dataclass(frozen=True)
class SchemaConfig:
    """Describes how to read one CSV: which columns mean what.

    positive_label_value and privileged_attribute_value are the raw strings
    that map to 1; the remaining value in each column maps to 0.
    """

    label_column: str
    attribute_column: str
    positive_label_value: str
    privileged_attribute_value: str
    categorical_columns: tuple[str, ...] = ()

    @classmethod
    def from_json(cls, path: str) -> "SchemaConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read schema {path}: {exc}") from exc
        required = (
            "label_column",
            "attribute_column",
            "positive_label_value",
            "privileged_attribute_value",
        )
        missing = [key for key in required if key not in raw]
        if missing:
            raise SchemaError(f"schema {path} is missing keys: {missing}")
        return cls(
            label_column=str(raw["label_column"]),
            attribute_column=str(raw["attribute_column"]),
            positive_label_value=str(raw["positive_label_value"]),
            privileged_attribute_value=str(raw["privileged_attribute_value"]),
            categorical_columns=tuple(raw.get("categorical_columns", ())),
        )

    def to_dict(self) -> dict:
        return {
            "label_column": self.label_column,
            "attribute_column": self.attribute_column,
            "positive_label_value": self.positive_label_value,
            "privileged_attribute_value": self.privileged_attribute_value,
            "categorical_columns": list(self.categorical_columns),
        }


@dataclass
class Dataset:
    """Encoded table: features (n x d), binary attribute, optional labels."""

    features: np.ndarray
    attribute: np.ndarray
    labels: np.ndarray | None
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d array")
        self.attribute = np.asarray(self.attribute, dtype=int)
        if self.attribute.shape != (self.features.shape[0],):
            raise DataError("attribute length must match feature rows")
        if not np.isin(self.attribute, (0, 1)).all():
            raise DataError("attribute values must be 0 or 1")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.features.shape[0],):
                raise DataError("label length must match feature rows")
            if not np.isin(self.labels, (0, 1)).all():
                raise DataError("label values must be 0 or 1")
        if not np.isfinite(self.features).all():
            bad = np.argwhere(~np.isfinite(self.features))[0]
            raise DataError(
                f"non-finite feature value at row {bad[0]}, column "
                f"{self.feature_names[bad[1]] if self.feature_names else bad[1]}"
            )
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.features.shape[1])]
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError("feature_names length must match feature columns")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index: np.ndarray) -> "Dataset":
        """Row subset; keeps labels when present."""
        return Dataset(
            features=self.features[index],
            attribute=self.attribute[index],
            labels=None if self.labels is None else self.labels[index],
            feature_names=list(self.feature_names),
        )

    def without_labels(self) -> "Dataset":
        return replace(self, labels=None)


def _map_binary(values: list[str], positive: str, column: str) -> np.ndarray:
    """Map a raw string column to {0, 1} with positive -> 1."""
    distinct = sorted(set(values))
    if positive not in distinct:
        raise ValueError(
            f"column {column!r}: configured positive value {positive!r} "
            f"does not occur (saw {distinct[:8]})"
        )
    others = [v for v in distinct if v != positive]
    if len(others) > 1:
        raise ValueError(
            f"column {column!r} is not binary: values {distinct[:8]} "
            f"cannot be mapped onto {{0, 1}}"
        )
    return np.array([1 if v == positive else 0 for v in values], dtype=int)


def load_csv(path: str, schema: SchemaConfig) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row into a Dataset.

    Categorical columns become one indicator column per distinct value
    (named "col=value", values in sorted order); everything else except the
    label and attribute columns is parsed as float.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = [row for row in reader if row]
    if not rows:
        raise DataError(f"{path}: no data rows")
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {i + 1} has {len(row)} fields, header has {len(header)}"
            )
    columns = {name: [row[j] for row in rows] for j, name in enumerate(header)}

    if schema.attribute_column not in columns:
        raise SchemaError(
            f"{path}: column {schema.attribute_column!r} not found in header"
        )
    for cat in schema.categorical_columns:
        if cat not in columns:
            raise SchemaError(f"{path}: categorical column {cat!r} not in header")

    # A file without the label column is an unlabeled sample, not an error.
    try:
        labels = None
        if schema.label_column in columns:
            labels = _map_binary(
                columns[schema.label_column], schema.positive_label_value,
                schema.label_column,
            )
        attribute = _map_binary(
            columns[schema.attribute_column],
            schema.privileged_attribute_value,
            schema.attribute_column,
        )
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None

    blocks: list[np.ndarray] = []
    names: list[str] = []
    categorical = set(schema.categorical_columns)
    for name in header:
        if name in (schema.label_column, schema.attribute_column):
            continue
        values = columns[name]
        if name in categorical:
            for level in sorted(set(values)):
                blocks.append(
                    np.array([1.0 if v == level else 0.0 for v in values])
                )
                names.append(f"{name}={level}")
        else:
            parsed = np.empty(len(values))
            for i, v in enumerate(values):
                try:
                    parsed[i] = float(v)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {v!r} at row {i + 1}, "
                        f"column {name!r}"
                    ) from None
                if not math.isfinite(parsed[i]):
                    raise DataError(
                        f"{path}: non-finite value at row {i + 1}, column {name!r}"
                    )
            blocks.append(parsed)
            names.append(name)
    if not blocks:
        raise DataError(f"{path}: no feature columns besides label and attribute")
    features = np.column_stack(blocks)
    return Dataset(features=features, attribute=attribute, labels=labels,
                   feature_names=names)


def write_dataset_csv(data: Dataset, schema: SchemaConfig, path: str,
                      include_labels: bool = True) -> None:
    """Write an encoded dataset back out as CSV.

    The emitted file round-trips through load_csv with a schema whose
    positive and privileged values are "1" and whose categorical list is
    empty.  The label column is omitted for unlabeled data.
    """
    with_labels = include_labels and data.labels is not None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = list(data.feature_names) + [schema.attribute_column]
        if with_labels:
            header.append(schema.label_column)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            row.append(str(int(data.attribute[i])))
            if with_labels:
                row.append(str(int(data.labels[i])))
            writer.writerow(row)


def continuous_feature_names(data: Dataset, schema: SchemaConfig) -> list[str]:
    """Feature columns that did not come from one-hot encoding."""
    onehot_prefixes = tuple(f"{c}=" for c in schema.categorical_columns)
    if not onehot_prefixes:
        return list(data.feature_names)
    return [n for n in data.feature_names if not n.startswith(onehot_prefixes)]


def zscore_normalize(data: Dataset, columns: list[str] | None = None) -> Dataset:
    """Center and scale the selected columns to zero mean and unit std.

    Uses the population standard deviation (divide by n).  Zero-variance
    columns are set to all zeros rather than dividing by zero.  Columns
    default to every feature column.
    """
    if columns is None:
        columns = list(data.feature_names)
    index = []
    for name in columns:
        if name not in data.feature_names:
            raise DataError(f"unknown column {name!r}")
        index.append(data.feature_names.index(name))
    features = data.features.copy()
    for j in index:
        col = features[:, j]
        std = col.std()
        if std == 0.0:
            features[:, j] = 0.0
        else:
            features[:, j] = (col - col.mean()) / std
    return replace(data, features=features)


@dataclass(frozen=True)
class FeatureMap:
    """Layout of phi(x, a, 1): covariates, then attribute, then intercept."""

    num_features: int
    include_attribute: bool = True
    include_intercept: bool = True

    @property
    def dimension(self) -> int:
        return self.num_features + int(self.include_attribute) + int(self.include_intercept)

    @classmethod
    def for_dataset(cls, data: Dataset, include_attribute: bool = True,
                    include_intercept: bool = True) -> "FeatureMap":
        return cls(num_features=data.dim, include_attribute=include_attribute,
                   include_intercept=include_intercept)

    def to_dict(self) -> dict:
        return {
            "num_features": self.num_features,
            "include_attribute": self.include_attribute,
            "include_intercept": self.include_intercept,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FeatureMap":
        return cls(
            num_features=int(raw["num_features"]),
            include_attribute=bool(raw["include_attribute"]),
            include_intercept=bool(raw["include_intercept"]),
        )


def phi(x: np.ndarray, a: int, y: int, feature_map: FeatureMap) -> np.ndarray:
    """Joint feature vector; identically zero for the negative label."""
    x = np.asarray(x, dtype=float)
    if x.shape != (feature_map.num_features,):
        raise DataError(
            f"expected {feature_map.num_features} covariates, got {x.shape}"
        )
    if y not in (0, 1):
        raise DataError("y must be 0 or 1")
    out = np.zeros(feature_map.dimension)
    if y == 0:
        return out
    out[: feature_map.num_features] = x
    pos = feature_map.num_features
    if feature_map.include_attribute:
        out[pos] = float(a)
        pos += 1
    if feature_map.include_intercept:
        out[pos] = 1.0
    return out


def feature_matrix(data: Dataset, feature_map: FeatureMap) -> np.ndarray:
    """Stacked phi(x_i, a_i, 1) rows, shape (n, feature_map.dimension)."""
    if data.dim != feature_map.num_features:
        raise DataError("feature map does not match dataset width")
    blocks = [data.features]
    if feature_map.include_attribute:
        blocks.append(data.attribute.astype(float)[:, None])
    if feature_map.include_intercept:
        blocks.append(np.ones((data.n, 1)))
    return np.hstack(blocks)
