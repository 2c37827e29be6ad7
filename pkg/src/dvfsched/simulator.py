"""Discrete-event execution of a job stream under a frequency policy.

Jobs arrive by a Poisson process and wait in one shared queue ordered by
earliest deadline first (FIFO available for ablation). When a device frees,
the scheduler predicts all configs for the head job, picks one under the
active policy, and the job runs non-preemptively; its actual time and energy
come from the ground-truth oracle at the chosen config, scaled by the job's
own frozen noise draw. Devices accrue idle power between jobs, so total-energy
comparisons across policies are well defined.
"""

from __future__ import annotations

import csv
import heapq
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .matcher import KnowledgeBase
from .oracle import OracleSpec, oracle_eval, profile_features
from .policies import Job, Policy, ScheduleDecision, predict_all_configs, select_frequency
from .schema import DeviceSpec, ValidationError


@dataclass(frozen=True)
class WorkloadMeta:
    seed: int
    arrival_rate: float
    slack_range: tuple[float, float]


@dataclass(frozen=True)
class Workload:
    """Jobs sorted by arrival plus each job's frozen execution-noise factors."""

    jobs: tuple[Job, ...]
    noise: Mapping[str, tuple[float, float]]  # job_id -> (time factor, power factor)
    meta: WorkloadMeta

    def __post_init__(self) -> None:
        arrivals = [j.arrival_time for j in self.jobs]
        if any(b < a for a, b in zip(arrivals, arrivals[1:])):
            raise ValidationError("workload arrivals must be non-decreasing")
        ids = [j.job_id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate job ids in workload")


def generate_workload(apps: Sequence[OracleSpec], n_jobs: int, arrival_rate: float,
                      slack_factor_range: tuple[float, float], seed: int,
                      device: DeviceSpec) -> Workload:
    """Poisson arrivals over the given application population.

    Each job samples an app uniformly; its deadline is the arrival plus a
    uniform slack factor times the app's noiseless default-clock execution
    time. The job's noise factors are drawn here and frozen so reruns are
    reproducible.
    """
    lo, hi = slack_factor_range
    if n_jobs < 1:
        raise ValidationError(f"n_jobs must be >= 1, got {n_jobs}")
    if not (lo > 0 and hi >= lo):
        raise ValidationError(f"bad slack factor range ({lo}, {hi})")
    if arrival_rate <= 0:
        raise ValidationError(f"arrival_rate must be > 0, got {arrival_rate}")
    if not apps:
        raise ValidationError("no applications to draw jobs from")

    rng = np.random.default_rng(seed)
    arrivals = np.cumsum(rng.exponential(scale=1.0 / arrival_rate, size=n_jobs))
    app_idx = rng.integers(0, len(apps), size=n_jobs)
    slacks = rng.uniform(lo, hi, size=n_jobs)
    z = rng.standard_normal(size=(n_jobs, 2))

    default_times = {s.app_id: oracle_eval(s, device.default_config,
                                           device.idle_power).exec_time for s in apps}
    default_profiles = {s.app_id: profile_features(s, device.default_config, device)
                        for s in apps}

    jobs = []
    noise = {}
    for i in range(n_jobs):
        spec = apps[int(app_idx[i])]
        arrival = float(arrivals[i])
        job_id = f"job{i:04d}"
        jobs.append(Job(
            job_id=job_id,
            app_id=spec.app_id,
            arrival_time=arrival,
            deadline=arrival + float(slacks[i]) * default_times[spec.app_id],
            default_profile=default_profiles[spec.app_id],
        ))
        noise[job_id] = (float(np.exp(spec.noise_sigma * z[i, 0])),
                         float(np.exp(spec.noise_sigma * z[i, 1])))
    return Workload(jobs=tuple(jobs), noise=noise,
                    meta=WorkloadMeta(seed=int(seed), arrival_rate=float(arrival_rate),
                                      slack_range=(float(lo), float(hi))))


@dataclass(frozen=True)
class JobOutcome:
    job_id: str
    app_id: str
    device_index: int
    decision: ScheduleDecision
    start: float
    finish: float
    actual_time: float
    actual_energy: float
    deadline_met: bool
    normalized_completion: float


@dataclass(frozen=True)
class SimulationResult:
    policy: Policy
    outcomes: tuple[JobOutcome, ...]
    active_energy: float          # sum of per-job actual energies
    idle_energy: float            # idle-power draw outside job execution
    total_energy: float           # active + idle
    per_app_energy: Mapping[str, float]  # mean actual energy per app
    mean_app_energy: float        # mean of per_app_energy values
    violations: int
    violation_rate: float
    mean_normalized_completion: float
    makespan: float


def simulate(workload: Workload, devices: Sequence[DeviceSpec], policy: Policy,
             kb: KnowledgeBase, energy_model, time_model,
             ground_truth: Sequence[OracleSpec],
             switch_overhead_s: float = 0.0,
             queue: str = "edf") -> SimulationResult:
    """Run ``workload`` on ``devices`` under ``policy``.

    The frequency decision for a job is made when it reaches the head of the
    queue and a device is free, so queue wait has already eroded its slack.
    ``switch_overhead_s`` extends the job's occupancy (billed at idle power
    via the idle-energy account); zero keeps oracle-equivalence exact.
    """
    if not devices:
        raise ValidationError("need at least one device")
    if queue not in ("edf", "fifo"):
        raise ValidationError(f"unknown queue discipline {queue!r}")
    specs = {s.app_id: s for s in ground_truth}
    for job in workload.jobs:
        if job.app_id not in specs:
            raise ValidationError(f"job {job.job_id!r}: no ground truth for app "
                                  f"{job.app_id!r}")

    if queue == "edf":
        def order_key(j: Job):  # earliest deadline first
            return (j.deadline, j.job_id)
    else:
        def order_key(j: Job):
            return (j.arrival_time, j.job_id)

    pending = list(workload.jobs)  # sorted by arrival
    next_arrival = 0
    waiting: list[Job] = []
    free: list[tuple[float, int]] = [(0.0, i) for i in range(len(devices))]
    heapq.heapify(free)
    clock = 0.0
    outcomes = []

    def absorb(upto: float) -> None:
        nonlocal next_arrival
        while next_arrival < len(pending) and pending[next_arrival].arrival_time <= upto:
            waiting.append(pending[next_arrival])
            next_arrival += 1

    while next_arrival < len(pending) or waiting:
        if not waiting:
            clock = max(clock, pending[next_arrival].arrival_time)
            absorb(clock)
            continue
        free_at, dev_idx = heapq.heappop(free)
        clock = max(clock, free_at)
        absorb(clock)
        job = min(waiting, key=order_key)
        waiting.remove(job)
        device = devices[dev_idx]

        start = max(free_at, job.arrival_time)
        table = predict_all_configs(job, kb, energy_model, time_model, device)
        decision = select_frequency(table, start, job.deadline, policy, device,
                                    job_id=job.job_id)

        truth = oracle_eval(specs[job.app_id], decision.chosen_config, device.idle_power)
        t_factor, p_factor = workload.noise[job.job_id]
        actual_time = truth.exec_time * t_factor
        actual_power = truth.avg_power * p_factor
        actual_energy = actual_power * actual_time
        finish = start + switch_overhead_s + actual_time

        heapq.heappush(free, (finish, dev_idx))
        outcomes.append(JobOutcome(
            job_id=job.job_id,
            app_id=job.app_id,
            device_index=dev_idx,
            decision=decision,
            start=start,
            finish=finish,
            actual_time=actual_time,
            actual_energy=actual_energy,
            deadline_met=finish <= job.deadline,
            normalized_completion=(finish - job.arrival_time)
                                  / (job.deadline - job.arrival_time),
        ))

    outcomes.sort(key=lambda o: o.job_id)
    active_energy = sum(o.actual_energy for o in outcomes)
    makespan = max((o.finish for o in outcomes), default=0.0)
    idle_energy = 0.0
    for i, device in enumerate(devices):
        busy = sum(o.actual_time for o in outcomes if o.device_index == i)
        idle_energy += device.idle_power * max(0.0, makespan - busy)

    per_app: dict[str, float] = {}
    for app in sorted({o.app_id for o in outcomes}):
        energies = [o.actual_energy for o in outcomes if o.app_id == app]
        per_app[app] = sum(energies) / len(energies)

    n = len(outcomes)
    violations = sum(1 for o in outcomes if not o.deadline_met)
    return SimulationResult(
        policy=policy,
        outcomes=tuple(outcomes),
        active_energy=active_energy,
        idle_energy=idle_energy,
        total_energy=active_energy + idle_energy,
        per_app_energy=per_app,
        mean_app_energy=(sum(per_app.values()) / len(per_app)) if per_app else 0.0,
        violations=violations,
        violation_rate=violations / n if n else 0.0,
        mean_normalized_completion=(sum(o.normalized_completion for o in outcomes) / n)
                                   if n else 0.0,
        makespan=makespan,
    )


@dataclass(frozen=True)
class PolicyComparison:
    results: Mapping[str, SimulationResult]
    # savings_pct[p][q]: % of total energy policy p saves versus policy q;
    # active_savings_pct is the same over job energies only (no idle dilution)
    savings_pct: Mapping[str, Mapping[str, float]]
    active_savings_pct: Mapping[str, Mapping[str, float]]


def compare_policies(workload: Workload, devices: Sequence[DeviceSpec],
                     policies: Sequence[Policy], kb: KnowledgeBase,
                     energy_model, time_model,
                     ground_truth: Sequence[OracleSpec],
                     switch_overhead_s: float = 0.0,
                     queue: str = "edf") -> PolicyComparison:
    """Simulate the same workload once per policy and tabulate savings."""
    results = {}
    for policy in policies:
        results[policy.value] = simulate(workload, devices, policy, kb,
                                         energy_model, time_model, ground_truth,
                                         switch_overhead_s=switch_overhead_s,
                                         queue=queue)

    def table(attr: str) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for p, rp in results.items():
            out[p] = {}
            for q, rq in results.items():
                base = getattr(rq, attr)
                out[p][q] = (100.0 * (base - getattr(rp, attr)) / base) if base > 0 else 0.0
        return out

    return PolicyComparison(results=results, savings_pct=table("total_energy"),
                            active_savings_pct=table("active_energy"))


def oracle_optimal_active_energy(workload: Workload, device: DeviceSpec,
                                 ground_truth: Sequence[OracleSpec]) -> float:
    """Lower bound on active energy: per-job brute-force minimum over configs
    whose actual time (with the job's own noise) meets the deadline from the
    job's arrival. Exact for lightly loaded single-device runs where jobs
    never queue."""
    specs = {s.app_id: s for s in ground_truth}
    total = 0.0
    for job in workload.jobs:
        t_factor, p_factor = workload.noise[job.job_id]
        best = None
        fallback = None
        for config in device.supported_configs:
            m = oracle_eval(specs[job.app_id], config, device.idle_power)
            actual_time = m.exec_time * t_factor
            actual_energy = m.avg_power * p_factor * actual_time
            if fallback is None or actual_time < fallback[0]:
                fallback = (actual_time, actual_energy)
            if job.arrival_time + actual_time <= job.deadline:
                if best is None or actual_energy < best:
                    best = actual_energy
        total += best if best is not None else fallback[1]
    return total


# ---------------------------------------------------------------------------
# serialization

_JOB_CSV_COLUMNS = (
    "job_id", "app_id", "device_index", "arrival", "start", "finish", "deadline",
    "chosen_mem_clock", "chosen_core_clock", "predicted_time", "predicted_energy",
    "feasible", "actual_time", "actual_energy", "deadline_met",
    "normalized_completion",
)


def result_to_dict(result: SimulationResult, workload: Workload) -> dict:
    deadlines = {j.job_id: j for j in workload.jobs}
    return {
        "policy": result.policy.value,
        "aggregates": {
            "active_energy_j": result.active_energy,
            "idle_energy_j": result.idle_energy,
            "total_energy_j": result.total_energy,
            "mean_app_energy_j": result.mean_app_energy,
            "per_app_energy_j": dict(result.per_app_energy),
            "violations": result.violations,
            "violation_rate": result.violation_rate,
            "mean_normalized_completion": result.mean_normalized_completion,
            "makespan_s": result.makespan,
            "n_jobs": len(result.outcomes),
        },
        "jobs": [
            {
                "job_id": o.job_id,
                "app_id": o.app_id,
                "device_index": o.device_index,
                "arrival": deadlines[o.job_id].arrival_time,
                "deadline": deadlines[o.job_id].deadline,
                "start": o.start,
                "finish": o.finish,
                "chosen_config": list(o.decision.chosen_config.as_tuple()),
                "predicted_time": o.decision.predicted_time,
                "predicted_energy": o.decision.predicted_energy,
                "feasible": o.decision.feasible,
                "actual_time": o.actual_time,
                "actual_energy": o.actual_energy,
                "deadline_met": o.deadline_met,
                "normalized_completion": o.normalized_completion,
            }
            for o in result.outcomes
        ],
    }


def write_result_json(result: SimulationResult, workload: Workload,
                      path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(result_to_dict(result, workload), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def write_result_csv(result: SimulationResult, workload: Workload,
                     path: str | Path) -> None:
    """Per-job rows followed by one aggregate row."""
    deadlines = {j.job_id: j for j in workload.jobs}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_JOB_CSV_COLUMNS)
        for o in result.outcomes:
            job = deadlines[o.job_id]
            writer.writerow([
                o.job_id, o.app_id, o.device_index,
                repr(job.arrival_time), repr(o.start), repr(o.finish),
                repr(job.deadline),
                o.decision.chosen_config.mem_clock, o.decision.chosen_config.core_clock,
                repr(o.decision.predicted_time), repr(o.decision.predicted_energy),
                int(o.decision.feasible),
                repr(o.actual_time), repr(o.actual_energy), int(o.deadline_met),
                repr(o.normalized_completion),
            ])
        writer.writerow([
            "__aggregate__", result.policy.value, len(result.outcomes),
            "", "", repr(result.makespan), "",
            "", "", "", repr(result.total_energy), "",
            "", repr(result.active_energy), result.violations,
            repr(result.mean_normalized_completion),
        ])
