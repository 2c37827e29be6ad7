"""Frequency-selection policies.

The data-driven policy predicts energy and time for every supported config of
the device and picks the cheapest one that still meets the job's deadline from
its start time; the two baselines always run at the device's default or max
clock. All functions here are pure over immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .matcher import KnowledgeBase, match_application
from .schema import DeviceSpec, FrequencyConfig, ValidationError


class Policy(str, Enum):
    DATA_DRIVEN = "data-driven"
    DEFAULT_CLOCK = "default-clock"
    MAX_CLOCK = "max-clock"


@dataclass(frozen=True)
class Job:
    """An arriving application with a deadline and a default-clock mini-profile."""

    job_id: str
    app_id: str
    arrival_time: float
    deadline: float
    default_profile: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "arrival_time", float(self.arrival_time))
        object.__setattr__(self, "deadline", float(self.deadline))
        object.__setattr__(self, "default_profile",
                           tuple(float(v) for v in self.default_profile))
        if not self.deadline > self.arrival_time:
            raise ValidationError(
                f"job {self.job_id!r}: deadline {self.deadline} must be after "
                f"arrival {self.arrival_time}")
        if not all(math.isfinite(v) for v in self.default_profile):
            raise ValidationError(f"job {self.job_id!r}: non-finite profile values")


@dataclass(frozen=True)
class CandidatePrediction:
    config: FrequencyConfig
    predicted_time: float
    predicted_energy: float


@dataclass(frozen=True)
class ScheduleDecision:
    job_id: str
    chosen_config: FrequencyConfig
    predicted_time: float
    predicted_energy: float
    feasible: bool
    candidates: tuple[CandidatePrediction, ...]


def predict_all_configs(job: Job, kb: KnowledgeBase, energy_model, time_model,
                        device: DeviceSpec) -> tuple[CandidatePrediction, ...]:
    """One (predicted time, predicted energy) row per supported config.

    The job's mini-profile is matched against the knowledge base and the
    matched application's stored profile is what the models are queried with,
    concatenated with each candidate config's clocks.
    """
    expected = kb.fingerprint
    for name, m in (("energy", energy_model), ("time", time_model)):
        if m.fingerprint != expected:
            raise ValidationError(
                f"{name} model fingerprint {m.fingerprint[:12]}... does not match "
                f"knowledge base schema {expected[:12]}...")
    match = match_application(job.default_profile, kb)
    profile = np.asarray(kb.profile_of(match.app_id), dtype=float)
    rows = []
    for config in device.supported_configs:
        x = np.concatenate([profile, [float(config.core_clock), float(config.mem_clock)]])
        rows.append(CandidatePrediction(
            config=config,
            predicted_time=float(time_model.predict(x)),
            predicted_energy=float(energy_model.predict(x)),
        ))
    return tuple(rows)


def _row_for(table: Sequence[CandidatePrediction],
             config: FrequencyConfig) -> CandidatePrediction:
    for row in table:
        if row.config == config:
            return row
    raise ValidationError(f"candidate table has no row for config {config}")


def select_frequency(table: Sequence[CandidatePrediction], start_time: float,
                     deadline: float, policy: Policy, device: DeviceSpec,
                     job_id: str = "") -> ScheduleDecision:
    """Pick a config from the candidate table under ``policy``.

    Data-driven: minimum predicted energy among configs predicted to finish by
    the deadline (ties: lower core then lower mem clock); when nothing fits,
    fall back to the minimum predicted time and flag the decision infeasible.
    The baselines always pick the device's default/max config and only compute
    the feasibility flag from the table.
    """
    table = tuple(table)
    if not table:
        raise ValidationError("candidate table is empty")

    def fits(row: CandidatePrediction) -> bool:
        return start_time + row.predicted_time <= deadline

    if policy is Policy.DATA_DRIVEN:
        feasible_rows = [r for r in table if fits(r)]
        if feasible_rows:
            chosen = min(feasible_rows,
                         key=lambda r: (r.predicted_energy, r.config.core_clock,
                                        r.config.mem_clock))
            feasible = True
        else:
            chosen = min(table,
                         key=lambda r: (r.predicted_time, r.predicted_energy,
                                        r.config.core_clock, r.config.mem_clock))
            feasible = False
    elif policy is Policy.DEFAULT_CLOCK:
        chosen = _row_for(table, device.default_config)
        feasible = fits(chosen)
    elif policy is Policy.MAX_CLOCK:
        chosen = _row_for(table, device.max_config)
        feasible = fits(chosen)
    else:
        raise ValidationError(f"unknown policy {policy!r}")

    return ScheduleDecision(
        job_id=job_id,
        chosen_config=chosen.config,
        predicted_time=chosen.predicted_time,
        predicted_energy=chosen.predicted_energy,
        feasible=feasible,
        candidates=table,
    )
