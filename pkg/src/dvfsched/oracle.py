"""Synthetic ground truth standing in for real profiled applications.

Each synthetic application is a set of latent coefficients. Execution time is
a roofline-style two-term hyperbola in the clocks plus a fixed part; average
power is idle power plus a cubic core-clock term and a linear memory-clock
term. Energy is their product. Measurements in generated datasets get
multiplicative lognormal noise; the latent coefficients stay available so
tests and experiments can query exact values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import CANDIDATE_LABELS, model_fingerprint
from .schema import (
    Dataset,
    DeviceSpec,
    FeatureSchema,
    FrequencyConfig,
    Measurement,
    NormStats,
    TrainingRecord,
    ValidationError,
)

# Work terms are in "mega-cycles": dividing by a clock in MHz yields seconds.
FEATURE_NAMES = (
    "compute_work_mcycles",
    "mem_work_mcycles",
    "fixed_time_s",
    "compute_intensity",
    "mem_intensity",
    "compute_mem_log_ratio",
    "dyn_power_coeff_w_mhz3",
    "mem_power_coeff_w_mhz",
    "default_exec_time_s",
    "default_avg_power_w",
    "default_energy_j",
    "busy_fraction_default",
    "compute_time_share_default",
    "mem_time_share_default",
    "profile_core_clock_mhz",
    "profile_mem_clock_mhz",
)

FEATURE_UNITS = (
    "Mcycle", "Mcycle", "s", "ratio", "ratio", "log-ratio", "W/MHz^3", "W/MHz",
    "s", "W", "J", "ratio", "ratio", "ratio", "MHz", "MHz",
)


def synthetic_schema() -> FeatureSchema:
    return FeatureSchema(names=FEATURE_NAMES, units=FEATURE_UNITS)


@dataclass(frozen=True)
class OracleSpec:
    """Latent coefficients of one synthetic application."""

    app_id: str
    compute_work: float      # Mcycles on the core clock domain
    mem_work: float          # Mcycles on the memory clock domain
    fixed_time: float        # clock-independent seconds
    dyn_power_coeff: float   # W / MHz^3 on the core clock
    mem_power_coeff: float   # W / MHz on the memory clock
    noise_sigma: float       # relative std-dev of multiplicative noise
    seed: int                # per-application noise stream seed

    def __post_init__(self) -> None:
        for name in ("compute_work", "mem_work", "fixed_time",
                     "dyn_power_coeff", "mem_power_coeff"):
            value = float(getattr(self, name))
            object.__setattr__(self, name, value)
            if value < 0:
                raise ValidationError(f"{name} must be >= 0, got {value}")
        object.__setattr__(self, "noise_sigma", float(self.noise_sigma))
        object.__setattr__(self, "seed", int(self.seed))
        if not 0.0 <= self.noise_sigma <= 0.5:
            raise ValidationError(f"noise_sigma must be in [0, 0.5], got {self.noise_sigma}")

    def to_dict(self) -> dict:
        return {"app_id": self.app_id, "compute_work": self.compute_work,
                "mem_work": self.mem_work, "fixed_time": self.fixed_time,
                "dyn_power_coeff": self.dyn_power_coeff,
                "mem_power_coeff": self.mem_power_coeff,
                "noise_sigma": self.noise_sigma, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "OracleSpec":
        return cls(**d)


def oracle_eval(spec: OracleSpec, config: FrequencyConfig, idle_power: float) -> Measurement:
    """Noiseless ground-truth measurement of ``spec`` at ``config``.

    ``idle_power`` is the device's static draw, included in average power.
    """
    exec_time = (spec.compute_work / config.core_clock
                 + spec.mem_work / config.mem_clock
                 + spec.fixed_time)
    avg_power = (idle_power
                 + spec.dyn_power_coeff * float(config.core_clock) ** 3
                 + spec.mem_power_coeff * config.mem_clock)
    return Measurement(avg_power=avg_power, exec_time=exec_time,
                       energy=avg_power * exec_time)


def profile_features(spec: OracleSpec, config: FrequencyConfig,
                     device: DeviceSpec) -> tuple[float, ...]:
    """Noiseless feature vector of ``spec`` profiled at ``config``.

    Intensity features derive from the latent coefficients and the device's
    default operating point; the last two columns carry the profiled run's
    clocks, matching :data:`FEATURE_NAMES`.
    """
    cw, mw, ft = spec.compute_work, spec.mem_work, spec.fixed_time
    total_work = cw + mw
    compute_intensity = cw / total_work if total_work > 0 else 0.0
    mem_intensity = mw / total_work if total_work > 0 else 0.0
    log_ratio = float(np.log((cw + 1.0) / (mw + 1.0)))
    default = device.default_config
    m_def = oracle_eval(spec, default, device.idle_power)
    compute_share = (cw / default.core_clock) / m_def.exec_time
    mem_share = (mw / default.mem_clock) / m_def.exec_time
    busy = compute_share + mem_share
    return (
        cw, mw, ft,
        compute_intensity, mem_intensity, log_ratio,
        spec.dyn_power_coeff, spec.mem_power_coeff,
        m_def.exec_time, m_def.avg_power, m_def.energy,
        busy, compute_share, mem_share,
        float(config.core_clock), float(config.mem_clock),
    )


@dataclass(frozen=True)
class OracleRanges:
    """Sampling ranges for synthetic application coefficients.

    Defaults are tuned so a moderate app population on the bundled desk device
    leaves a substantial oracle-optimal energy-saving margin below the max
    clock while keeping the optimum's slowdown versus the default clock small.
    """

    compute_work: tuple[float, float] = (500.0, 850.0)
    mem_work: tuple[float, float] = (150.0, 300.0)
    fixed_time: tuple[float, float] = (0.1, 0.2)
    dyn_power_coeff: tuple[float, float] = (2.5e-8, 3.8e-8)
    mem_power_coeff: tuple[float, float] = (0.025, 0.045)
    noise_sigma: float = 0.05

    def __post_init__(self) -> None:
        for name in ("compute_work", "mem_work", "fixed_time",
                     "dyn_power_coeff", "mem_power_coeff"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValidationError(f"bad range for {name}: ({lo}, {hi})")


def generate_synthetic(n_apps: int, device: DeviceSpec,
                       ranges: OracleRanges | None = None,
                       seed: int = 0) -> tuple[Dataset, list[OracleSpec]]:
    """One TrainingRecord per (app, supported config), plus the latent specs.

    Feature vectors are noiseless; measurements are the oracle values times
    ``exp(N(0, noise_sigma))`` drawn independently for time and power, with
    energy kept exactly power * time. Deterministic for a fixed seed.
    """
    if n_apps < 1:
        raise ValidationError(f"n_apps must be >= 1, got {n_apps}")
    if len(device.supported_configs) < 2:
        raise ValidationError("device needs at least 2 supported configs")
    ranges = ranges or OracleRanges()
    rng = np.random.default_rng(seed)

    specs = []
    for i in range(n_apps):
        specs.append(OracleSpec(
            app_id=f"app{i:03d}",
            compute_work=rng.uniform(*ranges.compute_work),
            mem_work=rng.uniform(*ranges.mem_work),
            fixed_time=rng.uniform(*ranges.fixed_time),
            dyn_power_coeff=rng.uniform(*ranges.dyn_power_coeff),
            mem_power_coeff=rng.uniform(*ranges.mem_power_coeff),
            noise_sigma=ranges.noise_sigma,
            seed=int(rng.integers(0, 2**31 - 1)),
        ))

    records = []
    for spec in specs:
        noise_rng = np.random.default_rng(spec.seed)
        for config in device.supported_configs:
            truth = oracle_eval(spec, config, device.idle_power)
            t_factor = float(np.exp(spec.noise_sigma * noise_rng.standard_normal()))
            p_factor = float(np.exp(spec.noise_sigma * noise_rng.standard_normal()))
            exec_time = truth.exec_time * t_factor
            avg_power = truth.avg_power * p_factor
            records.append(TrainingRecord(
                app_id=spec.app_id,
                config=config,
                features=profile_features(spec, config, device),
                measurement=Measurement(avg_power=avg_power, exec_time=exec_time,
                                        energy=avg_power * exec_time),
            ))

    dataset = Dataset(schema=synthetic_schema(), device=device, records=tuple(records))
    return dataset, specs


def save_oracles(specs: Sequence[OracleSpec], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([s.to_dict() for s in specs], indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def load_oracles(path: str | Path) -> list[OracleSpec]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a JSON list of oracle specs")
    return [OracleSpec.from_dict(d) for d in data]


def oracle_best_config(spec: OracleSpec, device: DeviceSpec,
                       max_time: float) -> tuple[FrequencyConfig, Measurement]:
    """Minimum-energy config whose noiseless time fits in ``max_time``.

    Falls back to the fastest config when nothing fits; ties break toward
    lower clocks, mirroring the scheduler's ordering.
    """
    rows = [(c, oracle_eval(spec, c, device.idle_power))
            for c in device.supported_configs]
    feasible = [(c, m) for c, m in rows if m.exec_time <= max_time]
    if feasible:
        return min(feasible, key=lambda cm: (cm[1].energy, cm[0].core_clock,
                                             cm[0].mem_clock))
    return min(rows, key=lambda cm: (cm[1].exec_time, cm[1].energy,
                                     cm[0].core_clock, cm[0].mem_clock))


class OracleModel:
    """Exact oracle-backed predictor, drop-in for a fitted model.

    Inverts the z-score normalization of the profile part of the input,
    reads the latent coefficients back out of the feature columns, and
    evaluates the ground-truth formulas at the candidate clocks. Only works
    with the synthetic feature schema.
    """

    def __init__(self, target: str, schema: FeatureSchema, stats: NormStats,
                 idle_power: float):
        if target not in ("energy", "time"):
            raise ValidationError(f"unknown target {target!r}")
        self.target = target
        self.stats = stats
        self.idle_power = float(idle_power)
        self.input_labels = tuple(schema.names) + CANDIDATE_LABELS
        self.fingerprint = model_fingerprint(self.input_labels)
        self.kind_name = "oracle"
        self._idx = {name: schema.index(name) for name in (
            "compute_work_mcycles", "mem_work_mcycles", "fixed_time_s",
            "dyn_power_coeff_w_mhz3", "mem_power_coeff_w_mhz")}

    @property
    def n_inputs(self) -> int:
        return len(self.input_labels)

    def predict(self, x: Sequence[float] | np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_inputs,):
            raise ValidationError(
                f"input has shape {x.shape}, model expects ({self.n_inputs},)")
        feats = self.stats.inverse(x[:-2])
        core, mem = x[-2], x[-1]
        cw = feats[self._idx["compute_work_mcycles"]]
        mw = feats[self._idx["mem_work_mcycles"]]
        ft = feats[self._idx["fixed_time_s"]]
        dpc = feats[self._idx["dyn_power_coeff_w_mhz3"]]
        mpc = feats[self._idx["mem_power_coeff_w_mhz"]]
        exec_time = cw / core + mw / mem + ft
        if self.target == "time":
            return float(exec_time)
        avg_power = self.idle_power + dpc * core ** 3 + mpc * mem
        return float(avg_power * exec_time)

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.array([self.predict(row) for row in X])
