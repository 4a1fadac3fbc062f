"""Shared fixtures: synthetic corpora and crafted toy model bundles."""

import json

import numpy as np
import pytest

from xdx import model, synth
from xdx.cli import main as cli_main
from xdx.labels import XRAY_TYPES
from xdx.model import Head, build_network, save_weights

INPUT_SIZE = 32


def build_toy_bundle(out_dir, stage1_bias=5.0, favored_type="Chest", seed=1):
    """Three toy networks with crafted heads (deterministic routing),
    saved as weight files, plus a service config JSON. Returns the
    config path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    m1 = build_network(model.toy_spec(Head("binary_sigmoid", 1), INPUT_SIZE), seed)
    m2 = build_network(model.toy_spec(Head("softmax", 14), INPUT_SIZE), seed + 1)
    m3 = build_network(model.toy_spec(Head("multilabel_sigmoid", 14), INPUT_SIZE), seed + 2)
    m1.head.weight.data[...] = 0.0
    m1.head.bias.data[...] = stage1_bias
    m2.head.weight.data[...] = 0.0
    m2.head.bias.data[...] = 0.0
    m2.head.bias.data[XRAY_TYPES.index(favored_type)] = 9.0
    for stage, net in ((1, m1), (2, m2), (3, m3)):
        save_weights(net, out_dir / f"stage{stage}.xdxw")
    config = {
        "input_size": INPUT_SIZE,
        "stage1": {"spec": {"preset": "toy"}, "weights": str(out_dir / "stage1.xdxw")},
        "stage2": {"spec": {"preset": "toy"}, "weights": str(out_dir / "stage2.xdxw")},
        "stage3": {"spec": {"preset": "toy"}, "weights": str(out_dir / "stage3.xdxw")},
        "stage1_threshold": 0.5,
        "stage3_threshold": 0.5,
        "explain": "none",
        "body_limit": 1024 * 1024,
    }
    config_path = out_dir / "service.json"
    config_path.write_text(json.dumps(config, indent=2))
    return config_path


@pytest.fixture(scope="session")
def toy_service_config(tmp_path_factory):
    return build_toy_bundle(tmp_path_factory.mktemp("bundle"))


@pytest.fixture(scope="session")
def stage2_corpus_dir(tmp_path_factory):
    """Split 3-class corpus shared by training tests."""
    out = tmp_path_factory.mktemp("corpus")
    synth.stage2_corpus(out, ("Spine", "Elbow", "Finger"), per_class=20, size=INPUT_SIZE, seed=5)
    assert cli_main(["split", "--manifest", str(out / "manifest.jsonl"), "--seed", "11"]) == 0
    return out
