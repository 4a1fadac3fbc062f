"""HTTP service contract: endpoints, errors, determinism, explanations."""

import json
import threading

import numpy as np
import pytest
import requests

from conftest import build_toy_bundle
from xdx import imaging
from xdx.config import ServiceConfig
from xdx.service import make_server

TIMEOUT = 10


@pytest.fixture(scope="module")
def server_url(toy_service_config):
    config = ServiceConfig.load(toy_service_config)
    server = make_server(config, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    yield f"http://{host}:{port}"
    server.shutdown()
    server.server_close()


def _pgm_bytes(seed=0, size=32):
    img = np.random.default_rng(seed).integers(0, 256, size=(size, size)).astype(np.uint8)
    return imaging.write_pgm_bytes(img)


def _predict(url, body, explain=None, content_type="image/x-portable-graymap"):
    params = {"explain": explain} if explain else None
    return requests.post(
        f"{url}/v1/predict", data=body, params=params,
        headers={"Content-Type": content_type}, timeout=TIMEOUT,
    )


def test_health(server_url):
    r = requests.get(f"{server_url}/v1/health", timeout=TIMEOUT)
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_models_metadata(server_url):
    r = requests.get(f"{server_url}/v1/models", timeout=TIMEOUT)
    assert r.status_code == 200
    models = r.json()["models"]
    assert [m["stage"] for m in models] == [1, 2, 3]
    for m in models:
        assert len(m["weights_sha256"]) == 64
        assert m["input_size"] == 32
    assert models[1]["classes"][-1] == "Chest"
    assert len(models[2]["classes"]) == 14


def test_predict_pgm_report_obeys_invariants(server_url):
    r = _predict(server_url, _pgm_bytes())
    assert r.status_code == 200
    report = r.json()
    assert set(report) == {"stage1", "stage2", "stage3", "explanations", "notes"}
    assert report["stage1"]["is_xray"] is True  # crafted gate bias
    assert report["stage2"]["type"] == "Chest"
    assert report["stage3"] is not None
    assert abs(sum(report["stage2"]["probs"].values()) - 1.0) <= 1e-6
    assert set(report["stage3"]["probs"]) == set(
        json.loads(requests.get(f"{server_url}/v1/models", timeout=TIMEOUT).text)["models"][2]["classes"]
    )


def test_predict_deterministic_for_identical_bytes(server_url):
    body = _pgm_bytes(7)
    a = _predict(server_url, body).content
    b = _predict(server_url, body).content
    assert a == b


def test_predict_explain_returns_heatmap_with_preset_dims(server_url):
    r = _predict(server_url, _pgm_bytes(3), explain="Cardiomegaly")
    assert r.status_code == 200
    report = r.json()
    hm = report["explanations"]["Cardiomegaly"]
    # toy preset at 32px input: final feature map has side 4
    assert hm["width"] == 4 and hm["height"] == 4
    assert len(hm["values"]) == 16
    assert all(0.0 <= v <= 1.0 for v in hm["values"])


def test_predict_explain_unknown_condition_400(server_url):
    r = _predict(server_url, _pgm_bytes(), explain="Scoliosis")
    assert r.status_code == 400
    assert "error" in r.json()


def test_predict_png_optional_capability(server_url):
    from PIL import Image
    import io

    arr = np.random.default_rng(9).integers(0, 256, size=(32, 32), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    r = _predict(server_url, buf.getvalue(), content_type="image/png")
    assert r.status_code == 200
    assert r.json()["stage1"]["is_xray"] is True


def test_predict_garbage_400_with_json_error(server_url):
    r = _predict(server_url, b"this is not an image")
    assert r.status_code == 400
    assert isinstance(r.json()["error"], str)


def test_predict_oversized_body_413(server_url):
    r = _predict(server_url, b"P5 " + b"\x00" * (1024 * 1024 + 100))
    assert r.status_code == 413
    assert "error" in r.json()


def test_unknown_path_404_json(server_url):
    r = requests.get(f"{server_url}/v1/nope", timeout=TIMEOUT)
    assert r.status_code == 404
    assert "error" in r.json()
    r = requests.post(f"{server_url}/v1/nope", data=b"x", timeout=TIMEOUT)
    assert r.status_code == 404
    assert "error" in r.json()


def test_concurrent_requests_consistent(server_url):
    body = _pgm_bytes(21)
    results = []
    errors = []

    def hit():
        try:
            results.append(_predict(server_url, body).content)
        except Exception as exc:  # surface thread failures in the assert
            errors.append(exc)

    threads = [threading.Thread(target=hit) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(set(results)) == 1


def test_not_xray_gate_routing(tmp_path):
    config_path = build_toy_bundle(tmp_path / "neg", stage1_bias=-5.0)
    config = ServiceConfig.load(config_path)
    server = make_server(config, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        host, port = server.server_address
        r = _predict(f"http://{host}:{port}", _pgm_bytes())
        report = r.json()
        assert report["stage1"]["is_xray"] is False
        assert report["stage2"] is None and report["stage3"] is None
        assert "not an X-ray" in report["notes"]
    finally:
        server.shutdown()
        server.server_close()
