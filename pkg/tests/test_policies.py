import itertools

import numpy as np
import pytest

from dvfsched.matcher import build_knowledge_base
from dvfsched.models import OLSKind, fit
from dvfsched.oracle import OracleModel, OracleRanges, generate_synthetic, oracle_eval
from dvfsched.policies import (
    CandidatePrediction,
    Job,
    Policy,
    predict_all_configs,
    select_frequency,
)
from dvfsched.schema import DeviceSpec, FrequencyConfig, ValidationError
from dvfsched.traces import normalize


@pytest.fixture
def three_config_device():
    configs = tuple(FrequencyConfig(715, c) for c in (500, 1000, 1500))
    return DeviceSpec(name="three", supported_configs=configs,
                      default_config=FrequencyConfig(715, 1000),
                      max_config=FrequencyConfig(715, 1500), idle_power=5.0)


@pytest.fixture
def example_table(three_config_device):
    times = {500: 4.0, 1000: 2.0, 1500: 1.5}
    energies = {500: 40.0, 1000: 50.0, 1500: 90.0}
    return tuple(
        CandidatePrediction(config=c, predicted_time=times[c.core_clock],
                            predicted_energy=energies[c.core_clock])
        for c in three_config_device.supported_configs)


def test_data_driven_picks_min_energy_feasible(example_table, three_config_device):
    # brute force over all three candidates: feasible at deadline 2.5 are
    # {1000, 1500}; the cheaper one is 1000 MHz at 50 J
    brute = [r for r in example_table if r.predicted_time <= 2.5]
    assert min(brute, key=lambda r: r.predicted_energy).config.core_clock == 1000

    d = select_frequency(example_table, start_time=0.0, deadline=2.5,
                         policy=Policy.DATA_DRIVEN, device=three_config_device)
    assert d.chosen_config.core_clock == 1000
    assert d.predicted_energy == 50.0
    assert d.feasible is True


def test_data_driven_falls_back_to_min_time(example_table, three_config_device):
    d = select_frequency(example_table, start_time=0.0, deadline=1.0,
                         policy=Policy.DATA_DRIVEN, device=three_config_device)
    assert d.chosen_config.core_clock == 1500
    assert d.feasible is False


def test_baselines_ignore_the_deadline(example_table, three_config_device):
    for deadline in (0.5, 2.5, 100.0):
        d = select_frequency(example_table, 0.0, deadline, Policy.MAX_CLOCK,
                             three_config_device)
        assert d.chosen_config == three_config_device.max_config
        d2 = select_frequency(example_table, 0.0, deadline, Policy.DEFAULT_CLOCK,
                              three_config_device)
        assert d2.chosen_config == three_config_device.default_config
    # feasibility flag still reflects the table
    tight = select_frequency(example_table, 0.0, 1.0, Policy.MAX_CLOCK,
                             three_config_device)
    assert tight.feasible is False


def test_queue_wait_erodes_slack(example_table, three_config_device):
    d = select_frequency(example_table, start_time=1.0, deadline=2.5,
                         policy=Policy.DATA_DRIVEN, device=three_config_device)
    assert d.chosen_config.core_clock == 1500  # only 1.5 s fits now
    assert d.feasible is True


def test_decision_invariant_under_row_permutation(example_table, three_config_device):
    want = select_frequency(example_table, 0.0, 2.5, Policy.DATA_DRIVEN,
                            three_config_device)
    for perm in itertools.permutations(example_table):
        got = select_frequency(perm, 0.0, 2.5, Policy.DATA_DRIVEN,
                               three_config_device)
        assert got.chosen_config == want.chosen_config
        assert got.predicted_energy == want.predicted_energy


def test_decision_invariant_under_energy_scaling(example_table, three_config_device):
    want = select_frequency(example_table, 0.0, 2.5, Policy.DATA_DRIVEN,
                            three_config_device).chosen_config
    for factor in (0.001, 3.0, 1e6):
        scaled = tuple(
            CandidatePrediction(config=r.config, predicted_time=r.predicted_time,
                                predicted_energy=r.predicted_energy * factor)
            for r in example_table)
        got = select_frequency(scaled, 0.0, 2.5, Policy.DATA_DRIVEN,
                               three_config_device).chosen_config
        assert got == want


def test_energy_ties_break_to_lower_clocks(three_config_device):
    table = tuple(
        CandidatePrediction(config=c, predicted_time=1.0, predicted_energy=10.0)
        for c in three_config_device.supported_configs)
    d = select_frequency(table, 0.0, 5.0, Policy.DATA_DRIVEN, three_config_device)
    assert d.chosen_config.core_clock == 500


def test_empty_table_is_an_error(three_config_device):
    with pytest.raises(ValidationError):
        select_frequency((), 0.0, 1.0, Policy.DATA_DRIVEN, three_config_device)


def test_job_validation():
    with pytest.raises(ValidationError):
        Job(job_id="j", app_id="a", arrival_time=5.0, deadline=5.0,
            default_profile=(1.0,))
    with pytest.raises(ValidationError):
        Job(job_id="j", app_id="a", arrival_time=0.0, deadline=1.0,
            default_profile=(float("nan"),))


def _oracle_setup(device, n_apps=6, seed=51):
    d, specs = generate_synthetic(n_apps, device,
                                  ranges=OracleRanges(noise_sigma=0.0), seed=seed)
    nd = normalize(d)
    kb = build_knowledge_base(nd, seed=0)
    em = OracleModel("energy", nd.schema, nd.norm_stats, device.idle_power)
    tm = OracleModel("time", nd.schema, nd.norm_stats, device.idle_power)
    return nd, specs, kb, em, tm


def test_predict_all_configs_shape_and_purity(toy_device):
    nd, specs, kb, em, tm = _oracle_setup(toy_device)
    job = Job(job_id="j1", app_id=specs[0].app_id, arrival_time=0.0, deadline=10.0,
              default_profile=nd.norm_stats.inverse(kb.profile_of(specs[0].app_id)))
    table = predict_all_configs(job, kb, em, tm, toy_device)
    assert len(table) == len(toy_device.supported_configs)
    assert [r.config for r in table] == list(toy_device.supported_configs)
    twin = Job(job_id="j2", app_id=specs[0].app_id, arrival_time=3.0, deadline=30.0,
               default_profile=job.default_profile)
    assert predict_all_configs(twin, kb, em, tm, toy_device) == table


def test_predict_all_configs_matches_oracle_enumeration(toy_device):
    nd, specs, kb, em, tm = _oracle_setup(toy_device)
    for spec in specs:
        job = Job(job_id=spec.app_id, app_id=spec.app_id, arrival_time=0.0,
                  deadline=100.0,
                  default_profile=nd.norm_stats.inverse(kb.profile_of(spec.app_id)))
        table = predict_all_configs(job, kb, em, tm, toy_device)
        for row in table:
            truth = oracle_eval(spec, row.config, toy_device.idle_power)
            assert row.predicted_time == pytest.approx(truth.exec_time, rel=1e-9)
            assert row.predicted_energy == pytest.approx(truth.energy, rel=1e-9)


def test_predict_all_configs_rejects_fingerprint_mismatch(toy_device):
    nd, specs, kb, em, tm = _oracle_setup(toy_device)
    rng = np.random.default_rng(0)
    alien = fit(OLSKind(), rng.normal(size=(10, 3)), rng.normal(size=10), seed=0,
                input_labels=("a", "b", "c"))
    job = Job(job_id="j", app_id=specs[0].app_id, arrival_time=0.0, deadline=10.0,
              default_profile=nd.norm_stats.inverse(kb.profile_of(specs[0].app_id)))
    with pytest.raises(ValidationError, match="fingerprint"):
        predict_all_configs(job, kb, alien, tm, toy_device)


def test_exact_models_match_brute_force_selection(toy_device):
    nd, specs, kb, em, tm = _oracle_setup(toy_device, n_apps=8, seed=52)
    rng = np.random.default_rng(53)
    for _ in range(50):
        spec = specs[int(rng.integers(len(specs)))]
        t_def = oracle_eval(spec, toy_device.default_config,
                            toy_device.idle_power).exec_time
        slack = float(rng.uniform(0.6, 3.0))
        job = Job(job_id="j", app_id=spec.app_id, arrival_time=0.0,
                  deadline=slack * t_def,
                  default_profile=nd.norm_stats.inverse(kb.profile_of(spec.app_id)))
        table = predict_all_configs(job, kb, em, tm, toy_device)
        decision = select_frequency(table, 0.0, job.deadline, Policy.DATA_DRIVEN,
                                    toy_device, job_id=job.job_id)
        # independent enumeration against the raw oracle
        rows = [(c, oracle_eval(spec, c, toy_device.idle_power))
                for c in toy_device.supported_configs]
        fits_ = [(c, m) for c, m in rows if m.exec_time <= job.deadline]
        if fits_:
            want = min(fits_, key=lambda cm: (cm[1].energy, cm[0].core_clock,
                                              cm[0].mem_clock))[0]
            assert decision.feasible
        else:
            want = min(rows, key=lambda cm: (cm[1].exec_time, cm[1].energy,
                                             cm[0].core_clock, cm[0].mem_clock))[0]
            assert not decision.feasible
        assert decision.chosen_config == want


def test_data_driven_never_beats_max_on_predicted_energy_when_max_fits(
        example_table, three_config_device):
    d = select_frequency(example_table, 0.0, 2.5, Policy.DATA_DRIVEN,
                         three_config_device)
    m = select_frequency(example_table, 0.0, 2.5, Policy.MAX_CLOCK,
                         three_config_device)
    assert m.feasible
    assert d.predicted_energy <= m.predicted_energy
