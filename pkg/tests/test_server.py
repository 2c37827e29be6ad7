import json
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from dvfsched import models as mdl
from dvfsched.server import MAX_BODY_BYTES, ModelServer, serve

LABELS = ("f0", "f1", "f2", "candidate_core_clock_mhz", "candidate_mem_clock_mhz")


@pytest.fixture(scope="module")
def served():
    rng = np.random.default_rng(71)
    X = rng.normal(size=(60, 5))
    energy = mdl.fit(mdl.GBRTKind(n_trees=30), X, rng.normal(size=60) + 5.0,
                     seed=0, target="energy", input_labels=LABELS)
    time = mdl.fit(mdl.OLSKind(), X, rng.normal(size=60) + 2.0, seed=0,
                   target="time", input_labels=LABELS)
    srv = serve({"energy": energy, "time": time})
    yield srv, {"energy": energy, "time": time}
    srv.shutdown()


def call(srv, path, body=None, method=None, raw=None):
    url = srv.url + path
    data = raw if raw is not None else (
        json.dumps(body).encode("utf-8") if body is not None else None)
    req = urllib.request.Request(url, data=data,
                                 method=method or ("POST" if data is not None else "GET"))
    if data is not None:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def good_body(features=(0.1, -0.5, 2.0), target="energy"):
    return {"target": target, "features": list(features),
            "config": {"mem_clock": 715, "core_clock": 999}}


def test_health_reports_fingerprints(served):
    srv, models = served
    code, doc = call(srv, "/v1/health")
    assert code == 200
    assert doc["status"] == "ok"
    assert doc["models"]["energy"]["fingerprint"] == models["energy"].fingerprint
    assert doc["models"]["time"]["kind"] == "ols"


def test_schema_endpoint_names_columns(served):
    srv, _ = served
    code, doc = call(srv, "/v1/schema")
    assert code == 200
    assert doc["feature_names"] == ["f0", "f1", "f2"]
    assert doc["config_labels"] == ["candidate_core_clock_mhz",
                                    "candidate_mem_clock_mhz"]


def test_served_prediction_matches_in_process(served):
    srv, models = served
    body = good_body()
    code, doc = call(srv, "/v1/predict", body)
    assert code == 200
    x = np.array(body["features"] + [999.0, 715.0])
    assert doc["prediction"] == models["energy"].predict(x)
    assert doc["fingerprint"] == models["energy"].fingerprint
    assert doc["model_kind"] == "gbrt"


def test_hundred_random_requests_bit_equal(served):
    srv, models = served
    rng = np.random.default_rng(72)
    for _ in range(100):
        target = "energy" if rng.random() < 0.5 else "time"
        feats = [float(v) for v in rng.normal(size=3)]
        core = int(rng.integers(500, 1500))
        mem = int(rng.integers(400, 900))
        code, doc = call(srv, "/v1/predict", {
            "target": target, "features": feats,
            "config": {"mem_clock": mem, "core_clock": core}})
        assert code == 200
        expected = models[target].predict(np.array(feats + [float(core), float(mem)]))
        assert doc["prediction"] == expected  # bit-for-bit through JSON


def test_malformed_request_matrix(served):
    srv, _ = served
    assert call(srv, "/v1/predict", {})[0] == 400
    assert call(srv, "/v1/predict", raw=b"{not json")[0] == 400
    assert call(srv, "/v1/predict", {**good_body(), "features": "nope"})[0] == 400
    assert call(srv, "/v1/predict", {**good_body(), "features": [1.0, None, 2.0]})[0] == 400
    assert call(srv, "/v1/predict", {**good_body(), "config": {"mem_clock": 715}})[0] == 400
    assert call(srv, "/v1/predict",
                {**good_body(), "config": {"mem_clock": 0, "core_clock": 999}})[0] == 400
    assert call(srv, "/v1/predict", good_body(target="power"))[0] == 404
    assert call(srv, "/v1/predict", good_body(features=(1.0,) * 9))[0] == 422
    assert call(srv, "/nope")[0] == 404
    assert call(srv, "/v1/health", body={}, method="POST")[0] == 404


def test_oversized_body_is_rejected(served):
    srv, _ = served
    blob = b"x" * (MAX_BODY_BYTES + 1)
    code, _ = call(srv, "/v1/predict", raw=blob)
    assert code == 413


def test_concurrent_identical_requests_agree(served):
    srv, models = served
    body = good_body()
    expected = models["energy"].predict(np.array(body["features"] + [999.0, 715.0]))

    def one(_):
        return call(srv, "/v1/predict", body)

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(one, range(32)))
    assert all(code == 200 for code, _ in results)
    assert {doc["prediction"] for _, doc in results} == {expected}


def test_fingerprint_stable_across_lifetime(served):
    srv, models = served
    before = call(srv, "/v1/health")[1]
    for _ in range(5):
        call(srv, "/v1/predict", good_body())
    after = call(srv, "/v1/health")[1]
    assert before["models"] == after["models"]


def test_server_requires_consistent_models():
    rng = np.random.default_rng(73)
    a = mdl.fit(mdl.OLSKind(), rng.normal(size=(10, 2)), rng.normal(size=10),
                seed=0, input_labels=("a", "b"))
    b = mdl.fit(mdl.OLSKind(), rng.normal(size=(10, 3)), rng.normal(size=10),
                seed=0, input_labels=("a", "b", "c"))
    with pytest.raises(ValueError):
        ModelServer({"energy": a, "time": b})
    with pytest.raises(ValueError):
        ModelServer({})
