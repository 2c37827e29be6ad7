import numpy as np
import pytest

from dvfsched.schema import (
    Dataset,
    DeviceSpec,
    FeatureSchema,
    FrequencyConfig,
    Measurement,
    TrainingRecord,
)


@pytest.fixture
def toy_device():
    """Two memory clocks, three core clocks; default mid, max top."""
    configs = tuple(FrequencyConfig(m, c) for m in (405, 715) for c in (500, 1000, 1500))
    return DeviceSpec(
        name="toy",
        supported_configs=configs,
        default_config=FrequencyConfig(715, 1000),
        max_config=FrequencyConfig(715, 1500),
        idle_power=10.0,
    )


@pytest.fixture
def desk_device():
    from dvfsched.cli import builtin_device
    return builtin_device()


def make_manual_dataset(device, n_apps=4, n_features=3, seed=0):
    """Small hand-rolled dataset with one record per (app, config)."""
    rng = np.random.default_rng(seed)
    schema = FeatureSchema(names=tuple(f"f{i}" for i in range(n_features)))
    records = []
    for a in range(n_apps):
        feats = tuple(float(v) for v in rng.uniform(1.0, 5.0, size=n_features))
        for cfg in device.supported_configs:
            power = float(rng.uniform(20.0, 80.0))
            time = float(rng.uniform(0.5, 3.0))
            records.append(TrainingRecord(
                app_id=f"app{a:03d}", config=cfg, features=feats,
                measurement=Measurement(avg_power=power, exec_time=time,
                                        energy=power * time)))
    return Dataset(schema=schema, device=device, records=tuple(records))
