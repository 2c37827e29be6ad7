"""Core dataset types for the DVFS modelling pipeline.

A trace dataset couples per-application profiling features with energy/time
measurements taken at specific (memory clock, core clock) operating points of
one device. All types are immutable after construction and validate their
invariants eagerly, so anything downstream can trust a constructed value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import math

import numpy as np

# |energy - power * time| must stay within this fraction of energy.
ENERGY_CONSISTENCY_TOL = 0.05

# Tolerance for the "stored features are z-scored" check on normalized datasets.
NORM_CHECK_TOL = 1e-9


class ValidationError(ValueError):
    """A domain invariant was violated."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


@dataclass(frozen=True)
class FrequencyConfig:
    """One (memory clock, core clock) operating point, in MHz."""

    mem_clock: int
    core_clock: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "mem_clock", int(self.mem_clock))
        object.__setattr__(self, "core_clock", int(self.core_clock))
        _require(self.mem_clock > 0 and self.core_clock > 0,
                 f"clocks must be positive MHz, got mem={self.mem_clock} core={self.core_clock}")

    def as_tuple(self) -> tuple[int, int]:
        return (self.mem_clock, self.core_clock)


@dataclass(frozen=True)
class DeviceSpec:
    """A device and the frequency configurations it supports.

    ``max_config`` must be the supported config with the highest core clock
    (ties broken by highest memory clock); ``default_config`` is the shipped
    operating point used for mini-profiling and the default-clock baseline.
    """

    name: str
    supported_configs: tuple[FrequencyConfig, ...]
    default_config: FrequencyConfig
    max_config: FrequencyConfig
    idle_power: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "supported_configs", tuple(self.supported_configs))
        object.__setattr__(self, "idle_power", float(self.idle_power))
        _require(len(self.supported_configs) > 0, f"device {self.name!r} has no supported configs")
        _require(len(set(self.supported_configs)) == len(self.supported_configs),
                 f"device {self.name!r} has duplicate configs")
        _require(self.idle_power >= 0.0, f"idle_power must be >= 0, got {self.idle_power}")
        _require(self.default_config in self.supported_configs,
                 f"default config {self.default_config} not in supported set of {self.name!r}")
        _require(self.max_config in self.supported_configs,
                 f"max config {self.max_config} not in supported set of {self.name!r}")
        top = max(self.supported_configs, key=lambda c: (c.core_clock, c.mem_clock))
        _require(self.max_config == top,
                 f"max_config {self.max_config} is not the top operating point {top} of {self.name!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "supported_configs": [list(c.as_tuple()) for c in self.supported_configs],
            "default_config": list(self.default_config.as_tuple()),
            "max_config": list(self.max_config.as_tuple()),
            "idle_power": self.idle_power,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceSpec":
        try:
            return cls(
                name=str(d["name"]),
                supported_configs=tuple(FrequencyConfig(m, c) for m, c in d["supported_configs"]),
                default_config=FrequencyConfig(*d["default_config"]),
                max_config=FrequencyConfig(*d["max_config"]),
                idle_power=float(d["idle_power"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed device spec: {exc}") from exc


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature names; the order is fixed for the dataset's lifetime.

    ``units`` is documentation only and does not participate in equality.
    """

    names: tuple[str, ...]
    units: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "units", tuple(str(u) for u in self.units))
        _require(len(self.names) > 0, "feature schema must name at least one feature")
        _require(len(set(self.names)) == len(self.names),
                 f"duplicate feature names: {sorted(self.names)}")
        if self.units:
            _require(len(self.units) == len(self.names),
                     "units list must match feature names in length")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown feature {name!r}") from None


@dataclass(frozen=True)
class Measurement:
    """Average power (W), execution time (s) and energy (J) of one run."""

    avg_power: float
    exec_time: float
    energy: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "avg_power", float(self.avg_power))
        object.__setattr__(self, "exec_time", float(self.exec_time))
        object.__setattr__(self, "energy", float(self.energy))
        _require(self.avg_power > 0 and self.exec_time > 0 and self.energy > 0,
                 f"measurement values must be positive: {self}")
        expected = self.avg_power * self.exec_time
        _require(abs(self.energy - expected) <= ENERGY_CONSISTENCY_TOL * self.energy,
                 f"inconsistent measurement: energy={self.energy} J but power*time={expected:.6g} J")


@dataclass(frozen=True)
class TrainingRecord:
    """One profiled (application, config) observation."""

    app_id: str
    config: FrequencyConfig
    features: tuple[float, ...]
    measurement: Measurement

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        _require(bool(self.app_id), "app_id must be non-empty")
        _require(all(math.isfinite(v) for v in self.features),
                 f"non-finite feature value for app {self.app_id!r}")


@dataclass(frozen=True)
class NormStats:
    """Per-feature mean and std used for z-score normalization.

    Constant columns store std 1.0 so they pass through shifted, never scaled.
    """

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        _require(len(self.mean) == len(self.std), "mean/std length mismatch")
        _require(all(s > 0 for s in self.std), "stored std values must be positive")

    def __len__(self) -> int:
        return len(self.mean)

    def transform(self, x: Sequence[float] | np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        return (arr - np.array(self.mean)) / np.array(self.std)

    def inverse(self, z: Sequence[float] | np.ndarray) -> np.ndarray:
        arr = np.asarray(z, dtype=float)
        return arr * np.array(self.std) + np.array(self.mean)


def compute_norm_stats(X: np.ndarray) -> NormStats:
    """Population mean/std per column; constant columns get std 1.0."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return NormStats(mean=tuple(mean.tolist()), std=tuple(std.tolist()))


@dataclass(frozen=True)
class Dataset:
    """A validated collection of training records for one device.

    ``norm_stats`` is present only on self-normalized datasets: the stats were
    computed from this dataset's original features and the stored features are
    their z-scores.
    """

    schema: FeatureSchema
    device: DeviceSpec
    records: tuple[TrainingRecord, ...]
    norm_stats: NormStats | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        supported = set(self.device.supported_configs)
        for rec in self.records:
            _require(len(rec.features) == len(self.schema),
                     f"record for app {rec.app_id!r} has {len(rec.features)} features, "
                     f"schema has {len(self.schema)}")
            _require(rec.config in supported,
                     f"config {rec.config} of app {rec.app_id!r} not supported by "
                     f"device {self.device.name!r}")
        if self.norm_stats is not None:
            _require(len(self.norm_stats) == len(self.schema), "norm_stats length mismatch")
            if self.records:
                X = self.feature_matrix()
                mean = X.mean(axis=0)
                std = X.std(axis=0)
                for j in range(X.shape[1]):
                    _require(abs(mean[j]) <= NORM_CHECK_TOL,
                             f"normalized column {self.schema.names[j]!r} has mean {mean[j]:.3g}")
                    _require(std[j] == 0.0 or abs(std[j] - 1.0) <= NORM_CHECK_TOL,
                             f"normalized column {self.schema.names[j]!r} has std {std[j]:.3g}")

    def __len__(self) -> int:
        return len(self.records)

    def app_ids(self) -> tuple[str, ...]:
        return tuple(sorted({r.app_id for r in self.records}))

    def feature_matrix(self) -> np.ndarray:
        return np.array([r.features for r in self.records], dtype=float)

    def energies(self) -> np.ndarray:
        return np.array([r.measurement.energy for r in self.records], dtype=float)

    def times(self) -> np.ndarray:
        return np.array([r.measurement.exec_time for r in self.records], dtype=float)

    def records_for(self, app_id: str) -> tuple[TrainingRecord, ...]:
        return tuple(r for r in self.records if r.app_id == app_id)

    def default_profile(self, app_id: str) -> tuple[float, ...]:
        """Feature vector of the app's record at the device default config."""
        for r in self.records:
            if r.app_id == app_id and r.config == self.device.default_config:
                return r.features
        raise ValidationError(
            f"app {app_id!r} has no record at the default clock config "
            f"{self.device.default_config}")

    def subset(self, app_ids: Iterable[str]) -> "Dataset":
        """Records of the given apps only; drops norm_stats (a subset of a
        normalized dataset is no longer self-normalized)."""
        keep = set(app_ids)
        return Dataset(
            schema=self.schema,
            device=self.device,
            records=tuple(r for r in self.records if r.app_id in keep),
            norm_stats=None,
        )
