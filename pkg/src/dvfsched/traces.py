"""Trace file I/O and dataset transforms.

Trace CSV format: header ``app_id,mem_clock,core_clock,<feature...>,avg_power,
exec_time,energy``, UTF-8, ``.`` decimal, one record per row. Device specs are
small JSON documents. Floats are written with ``repr`` so a write/load
round-trip reproduces the dataset exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .schema import (
    Dataset,
    DeviceSpec,
    FeatureSchema,
    FrequencyConfig,
    Measurement,
    NormStats,
    TrainingRecord,
    ValidationError,
    compute_norm_stats,
)

LEADING_COLUMNS = ("app_id", "mem_clock", "core_clock")
TRAILING_COLUMNS = ("avg_power", "exec_time", "energy")


class TraceParseError(ValueError):
    """A trace file is structurally malformed; the message names the line."""


def load_dataset(path: str | Path, device: DeviceSpec) -> Dataset:
    """Load and validate a trace CSV against ``device``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if tuple(header[:3]) != LEADING_COLUMNS or tuple(header[-3:]) != TRAILING_COLUMNS:
            raise TraceParseError(
                f"{path}: line 1: header must start with {','.join(LEADING_COLUMNS)} "
                f"and end with {','.join(TRAILING_COLUMNS)}")
        feature_names = header[3:-3]
        if not feature_names:
            raise TraceParseError(f"{path}: line 1: header declares no feature columns")
        schema = FeatureSchema(names=tuple(feature_names))
        n_cols = len(header)

        supported = set(device.supported_configs)
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise TraceParseError(
                    f"{path}: line {lineno}: expected {n_cols} fields, got {len(row)}")
            try:
                app_id = row[0]
                mem = int(row[1])
                core = int(row[2])
                feats = tuple(float(v) for v in row[3:-3])
                power, time, energy = (float(v) for v in row[-3:])
            except ValueError as exc:
                raise TraceParseError(f"{path}: line {lineno}: {exc}") from None
            try:
                config = FrequencyConfig(mem_clock=mem, core_clock=core)
                if config not in supported:
                    raise ValidationError(
                        f"config ({mem}, {core}) not in the supported set of "
                        f"device {device.name!r}")
                records.append(TrainingRecord(
                    app_id=app_id,
                    config=config,
                    features=feats,
                    measurement=Measurement(avg_power=power, exec_time=time, energy=energy),
                ))
            except ValidationError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None

    try:
        return Dataset(schema=schema, device=device, records=tuple(records))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_dataset(d: Dataset, path: str | Path) -> None:
    """Write a trace CSV. norm_stats are not representable in the format and
    are dropped; write raw datasets if a lossless round-trip is wanted."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(LEADING_COLUMNS[:1]) + list(LEADING_COLUMNS[1:])
                        + list(d.schema.names) + list(TRAILING_COLUMNS))
        for r in d.records:
            m = r.measurement
            writer.writerow(
                [r.app_id, r.config.mem_clock, r.config.core_clock]
                + [repr(v) for v in r.features]
                + [repr(m.avg_power), repr(m.exec_time), repr(m.energy)])


def load_device(path: str | Path) -> DeviceSpec:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from None
    return DeviceSpec.from_dict(data)


def save_device(device: DeviceSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(device.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def normalize(d: Dataset) -> Dataset:
    """Z-score every feature column using stats computed from ``d`` itself.

    Constant columns use std 1.0 and pass through shifted to zero. The input
    dataset is unchanged; the returned dataset stores the stats so the
    transform can be inverted or applied to incoming query profiles.
    """
    if len(d) < 2:
        raise ValidationError("normalize needs at least 2 records")
    stats = compute_norm_stats(d.feature_matrix())
    Z = stats.transform(d.feature_matrix())
    records = tuple(
        TrainingRecord(app_id=r.app_id, config=r.config,
                       features=tuple(float(v) for v in Z[i]),
                       measurement=r.measurement)
        for i, r in enumerate(d.records))
    return Dataset(schema=d.schema, device=d.device, records=records, norm_stats=stats)


def denormalize(d: Dataset) -> Dataset:
    """Invert :func:`normalize` using the stored stats."""
    if d.norm_stats is None:
        raise ValidationError("dataset has no norm_stats to invert")
    X = d.norm_stats.inverse(d.feature_matrix())
    records = tuple(
        TrainingRecord(app_id=r.app_id, config=r.config,
                       features=tuple(float(v) for v in X[i]),
                       measurement=r.measurement)
        for i, r in enumerate(d.records))
    return Dataset(schema=d.schema, device=d.device, records=records, norm_stats=None)


def split(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Grouped train/test split: all records of one app land on one side.

    Split the raw dataset first, then normalize the train side; the children
    carry no norm_stats.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must be in (0,1), got {test_fraction}")
    apps = d.app_ids()
    if len(apps) < 2:
        raise ValidationError(f"grouped split needs >= 2 distinct apps, got {len(apps)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(apps))
    n_test = int(round(test_fraction * len(apps)))
    n_test = max(1, min(len(apps) - 1, n_test))
    test_apps = {apps[i] for i in order[:n_test]}
    train_apps = [a for a in apps if a not in test_apps]
    return d.subset(train_apps), d.subset(test_apps)
