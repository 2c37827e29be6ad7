import numpy as np
import pytest

from dvfsched.schema import (
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


def test_frequency_config_rejects_nonpositive_clocks():
    with pytest.raises(ValidationError):
        FrequencyConfig(mem_clock=0, core_clock=1000)
    with pytest.raises(ValidationError):
        FrequencyConfig(mem_clock=715, core_clock=-5)
    assert FrequencyConfig(715, 1000).as_tuple() == (715, 1000)


def test_device_membership_rules(toy_device):
    with pytest.raises(ValidationError):
        DeviceSpec(name="bad", supported_configs=toy_device.supported_configs,
                   default_config=FrequencyConfig(999, 999),
                   max_config=toy_device.max_config, idle_power=1.0)
    # max_config must be the top core clock (ties by mem clock)
    with pytest.raises(ValidationError):
        DeviceSpec(name="bad", supported_configs=toy_device.supported_configs,
                   default_config=toy_device.default_config,
                   max_config=FrequencyConfig(405, 1500), idle_power=1.0)
    with pytest.raises(ValidationError):
        DeviceSpec(name="bad",
                   supported_configs=toy_device.supported_configs * 2,
                   default_config=toy_device.default_config,
                   max_config=toy_device.max_config, idle_power=1.0)
    with pytest.raises(ValidationError):
        DeviceSpec(name="bad", supported_configs=toy_device.supported_configs,
                   default_config=toy_device.default_config,
                   max_config=toy_device.max_config, idle_power=-0.1)


def test_device_dict_round_trip(toy_device):
    assert DeviceSpec.from_dict(toy_device.to_dict()) == toy_device


def test_feature_schema_invariants():
    with pytest.raises(ValidationError):
        FeatureSchema(names=("a", "a"))
    with pytest.raises(ValidationError):
        FeatureSchema(names=())
    with pytest.raises(ValidationError):
        FeatureSchema(names=("a", "b"), units=("x",))
    s = FeatureSchema(names=("a", "b"), units=("W", "s"))
    assert s.index("b") == 1
    with pytest.raises(ValidationError):
        s.index("nope")
    # units are documentation only
    assert s == FeatureSchema(names=("a", "b"))


def test_measurement_consistency_window():
    Measurement(avg_power=10.0, exec_time=5.0, energy=50.0)
    # 4.8% off is inside the 5% window, 10% is not
    Measurement(avg_power=10.0, exec_time=5.0, energy=52.4)
    with pytest.raises(ValidationError):
        Measurement(avg_power=10.0, exec_time=5.0, energy=100.0)
    with pytest.raises(ValidationError):
        Measurement(avg_power=-1.0, exec_time=5.0, energy=50.0)
    with pytest.raises(ValidationError):
        Measurement(avg_power=10.0, exec_time=0.0, energy=50.0)


def test_training_record_rejects_bad_values():
    m = Measurement(avg_power=10.0, exec_time=5.0, energy=50.0)
    with pytest.raises(ValidationError):
        TrainingRecord(app_id="", config=FrequencyConfig(715, 1000),
                       features=(1.0,), measurement=m)
    with pytest.raises(ValidationError):
        TrainingRecord(app_id="a", config=FrequencyConfig(715, 1000),
                       features=(float("nan"),), measurement=m)


def test_dataset_checks_config_membership_and_width(toy_device):
    schema = FeatureSchema(names=("f0", "f1"))
    m = Measurement(avg_power=10.0, exec_time=5.0, energy=50.0)
    good = TrainingRecord(app_id="a", config=toy_device.default_config,
                          features=(1.0, 2.0), measurement=m)
    Dataset(schema=schema, device=toy_device, records=(good,))
    alien = TrainingRecord(app_id="a", config=FrequencyConfig(999, 999),
                           features=(1.0, 2.0), measurement=m)
    with pytest.raises(ValidationError):
        Dataset(schema=schema, device=toy_device, records=(alien,))
    narrow = TrainingRecord(app_id="a", config=toy_device.default_config,
                            features=(1.0,), measurement=m)
    with pytest.raises(ValidationError):
        Dataset(schema=schema, device=toy_device, records=(narrow,))


def test_dataset_norm_stats_invariant(toy_device):
    schema = FeatureSchema(names=("f0",))
    m = Measurement(avg_power=10.0, exec_time=5.0, energy=50.0)
    records = tuple(
        TrainingRecord(app_id=f"a{i}", config=toy_device.default_config,
                       features=(float(i),), measurement=m)
        for i in range(3))
    stats = NormStats(mean=(0.0,), std=(1.0,))
    # features are not z-scored, so attaching stats must fail
    with pytest.raises(ValidationError):
        Dataset(schema=schema, device=toy_device, records=records, norm_stats=stats)


def test_norm_stats_round_trip():
    X = np.array([[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    stats = compute_norm_stats(X)
    assert stats.std[1] == 1.0  # constant column
    Z = stats.transform(X)
    back = stats.inverse(Z)
    assert np.allclose(back, X, rtol=0, atol=1e-12)


def test_dataset_default_profile_lookup(toy_device):
    schema = FeatureSchema(names=("f0",))
    m = Measurement(avg_power=10.0, exec_time=5.0, energy=50.0)
    rec = TrainingRecord(app_id="a", config=toy_device.supported_configs[0],
                         features=(1.0,), measurement=m)
    d = Dataset(schema=schema, device=toy_device, records=(rec,))
    with pytest.raises(ValidationError, match="'a'"):
        d.default_profile("a")
