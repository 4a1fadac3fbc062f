"""Routing invariants, report structure, end-to-end composition."""

import numpy as np
import pytest

from xdx import model
from xdx.cascade import (
    NOTE_NO_MODEL,
    NOTE_NOT_XRAY,
    CascadeConfig,
    CascadeModels,
    CascadeReport,
    end_to_end_accuracy,
    route,
    run_cascade,
)
from xdx.labels import CHEST_CONDITIONS, XRAY_TYPES
from xdx.model import Head, build_network


def _assert_invariants(report, config):
    assert report.stage1["is_xray"] == (report.stage2 is not None)
    chest = report.stage2 is not None and report.stage2["type"] == "Chest"
    assert chest == (report.stage3 is not None)
    if report.stage2 is not None:
        assert abs(sum(report.stage2["probs"].values()) - 1.0) <= 1e-6
    if report.stage3 is not None:
        expect = [
            name
            for name, p in report.stage3["probs"].items()
            if p >= config.stage3_threshold
        ]
        assert report.stage3["positive"] == expect


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def test_gate_rejection_stops_pipeline():
    cfg = CascadeConfig()
    report = route(0.1, None, None, cfg)
    assert report.stage1 == {"is_xray": False, "p_xray": 0.1}
    assert report.stage2 is None and report.stage3 is None
    assert NOTE_NOT_XRAY in report.notes
    _assert_invariants(report, cfg)


def test_non_chest_type_skips_stage3():
    cfg = CascadeConfig()
    probs = np.full(14, 0.01)
    probs[XRAY_TYPES.index("Wrist")] = 0.87
    probs /= probs.sum()
    report = route(0.9, probs, None, cfg)
    assert report.stage2["type"] == "Wrist"
    assert report.stage3 is None
    assert NOTE_NO_MODEL in report.notes
    _assert_invariants(report, cfg)


def test_chest_type_reaches_stage3():
    cfg = CascadeConfig()
    probs = np.full(14, 0.001)
    probs[XRAY_TYPES.index("Chest")] = 1.0
    probs /= probs.sum()
    cond = np.linspace(0.0, 1.0, 14)
    report = route(0.9, probs, cond, cfg)
    assert report.stage2["type"] == "Chest"
    assert len(report.stage3["probs"]) == 14
    _assert_invariants(report, cfg)


def test_routing_fuzz_never_violates_invariants():
    rng = np.random.default_rng(0)
    for _ in range(500):
        cfg = CascadeConfig(
            stage1_threshold=float(rng.uniform(0.05, 0.95)),
            stage3_threshold=float(rng.uniform(0.05, 0.95)),
        )
        p_xray = float(rng.uniform())
        type_probs = _softmax(rng.normal(size=14) * 3)
        cond = rng.uniform(size=14)
        report = route(p_xray, type_probs, cond, cfg)
        _assert_invariants(report, cfg)


def test_gate_is_monotone_in_threshold():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = float(rng.uniform())
        lo = CascadeConfig(stage1_threshold=0.3)
        hi = CascadeConfig(stage1_threshold=0.7)
        r_lo = route(p, _softmax(rng.normal(size=14)), rng.uniform(size=14), lo)
        r_hi = route(p, _softmax(rng.normal(size=14)), rng.uniform(size=14), hi)
        # raising the threshold never turns "not an X-ray" into "X-ray"
        if not r_lo.stage1["is_xray"]:
            assert not r_hi.stage1["is_xray"]


def test_positive_set_uses_inclusive_threshold():
    cfg = CascadeConfig(stage3_threshold=0.5)
    probs = np.full(14, 0.001)
    probs[XRAY_TYPES.index("Chest")] = 1.0
    probs /= probs.sum()
    cond = np.zeros(14)
    cond[3] = 0.5  # exactly at threshold -> positive
    report = route(0.9, probs, cond, cfg)
    assert report.stage3["positive"] == [CHEST_CONDITIONS[3]]


def test_config_rejects_bad_thresholds():
    with pytest.raises(ValueError, match="stage1_threshold"):
        CascadeConfig(stage1_threshold=0.0)
    with pytest.raises(ValueError, match="explain"):
        CascadeConfig(explain_classes="some")


def test_report_json_schema():
    cfg = CascadeConfig()
    report = route(0.2, None, None, cfg)
    d = report.to_json_dict()
    assert set(d) == {"stage1", "stage2", "stage3", "explanations", "notes"}
    assert d["stage2"] is None and d["stage3"] is None and d["explanations"] is None


# -- end-to-end composition ---------------------------------------------------------


def test_composition_of_reported_stage_accuracies():
    v = end_to_end_accuracy(0.987, 0.976, 0.947)
    assert v == pytest.approx(0.9123, abs=5e-4)
    assert round(v, 2) == 0.91


def test_composition_identity_and_commutativity():
    assert end_to_end_accuracy(1.0, 1.0, 1.0) == 1.0
    a, b, c = 0.9, 0.8, 0.7
    assert end_to_end_accuracy(a, b, c) == pytest.approx(end_to_end_accuracy(c, a, b), abs=1e-15)


def test_composition_rejects_out_of_range():
    with pytest.raises(ValueError, match="acc2"):
        end_to_end_accuracy(0.5, 1.5, 0.5)


# -- full cascade over real (tiny) networks --------------------------------------------


def _toy_models(bias_stage1=5.0, favored_type="Chest"):
    size = 32
    m1 = build_network(model.toy_spec(Head("binary_sigmoid", 1), size), 1)
    m2 = build_network(model.toy_spec(Head("softmax", 14), size), 2)
    m3 = build_network(model.toy_spec(Head("multilabel_sigmoid", 14), size), 3)
    # Pin deterministic routing by biasing the heads.
    m1.head.weight.data[...] = 0.0
    m1.head.bias.data[...] = bias_stage1
    m2.head.weight.data[...] = 0.0
    m2.head.bias.data[...] = 0.0
    m2.head.bias.data[XRAY_TYPES.index(favored_type)] = 9.0
    return CascadeModels(m1, m2, m3, input_size=size)


def _image(seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(32, 32)).astype(np.uint8)


def test_run_cascade_chest_route_with_explanations():
    models = _toy_models()
    cfg = CascadeConfig(explain_classes="positives")
    report = run_cascade(_image(), models, cfg)
    _assert_invariants(report, cfg)
    assert report.stage2["type"] == "Chest"
    assert report.stage3 is not None
    if report.explanations:
        for name, hm in report.explanations.items():
            assert name in report.stage3["positive"]
            assert hm.values.shape == (8, 8) or hm.values.shape == (
                models.stage3.spec.feature_size(),
                models.stage3.spec.feature_size(),
            )


def test_run_cascade_explain_override_single_condition():
    models = _toy_models()
    report = run_cascade(_image(), models, CascadeConfig(), explain_request="Cardiomegaly")
    assert set(report.explanations) == {"Cardiomegaly"}
    side = models.stage3.spec.feature_size()
    hm = report.explanations["Cardiomegaly"]
    assert (hm.height, hm.width) == (side, side)


def test_run_cascade_explain_all():
    models = _toy_models()
    report = run_cascade(_image(), models, CascadeConfig(), explain_request="all")
    assert set(report.explanations) == set(CHEST_CONDITIONS)


def test_run_cascade_not_xray_stops():
    models = _toy_models(bias_stage1=-5.0)
    report = run_cascade(_image(), models, CascadeConfig())
    assert not report.stage1["is_xray"]
    assert report.stage2 is None and report.stage3 is None


def test_run_cascade_wrist_route_skips_stage3():
    models = _toy_models(favored_type="Wrist")
    report = run_cascade(_image(), models, CascadeConfig(explain_classes="all"))
    assert report.stage2["type"] == "Wrist"
    assert report.stage3 is None
    assert report.explanations is None
    assert NOTE_NO_MODEL in report.notes


def test_run_cascade_unknown_explain_condition_rejected():
    models = _toy_models()
    with pytest.raises(ValueError, match="unknown condition"):
        run_cascade(_image(), models, CascadeConfig(), explain_request="Scoliosis")


def test_run_cascade_deterministic():
    models = _toy_models()
    img = _image(3)
    a = run_cascade(img, models, CascadeConfig()).to_json_dict()
    b = run_cascade(img, models, CascadeConfig()).to_json_dict()
    assert a == b
