import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_network
from disth2 import io as dio
from disth2.bench import example_one_certificate
from disth2.errors import FormatError
from disth2.synthesis import synthesize_central


def _through_text(d):
    return json.loads(json.dumps(d))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_model_roundtrip_is_bit_exact(seed):
    model = random_network(np.random.default_rng(seed))
    back = dio.model_from_dict(_through_text(dio.model_to_dict(model)))
    assert back == model


def test_model_file_uses_one_based_nodes(triangle, tmp_path):
    path = tmp_path / "tri.json"
    dio.save_json(dio.model_to_dict(triangle), path)
    d = dio.load_json(path)
    assert [n["node"] for n in d["nodes"]] == [1, 2, 3]
    assert sorted(tuple(e["nodes"]) for e in d["edges"]) == [(1, 2), (1, 3), (2, 3)]
    # zero blocks are left out
    assert "D_zd" not in d["nodes"][0]["blocks"]
    assert dio.load_model(path) == triangle


def test_certificate_roundtrip(ex1, tmp_path):
    cert = example_one_certificate()
    path = tmp_path / "cert.json"
    dio.save_json(dio.certificate_to_dict(cert), path)
    back = dio.load_certificate(path, ex1)
    assert back.gamma == cert.gamma and back.rho == cert.rho
    assert all(np.array_equal(a, b) for a, b in zip(back.X, cert.X))
    assert back.multipliers.x11.keys() == cert.multipliers.x11.keys()


def test_controller_roundtrip(triangle_design, tmp_path):
    path = tmp_path / "ctrl.json"
    dio.save_json(dio.controllers_to_dict(triangle_design.controllers, "distributed",
                                          triangle_design.summary()), path)
    back = dio.load_controllers(path)
    assert back == triangle_design.controllers


def test_central_roundtrip(triangle):
    c = synthesize_central(triangle, 0.3).controller
    back = dio.central_from_dict(_through_text(dio.central_to_dict(c)))
    for k in ("Ak", "Bk", "Ck", "Dk"):
        assert np.array_equal(getattr(back, k), getattr(c, k))


@pytest.mark.parametrize("doc", [
    {"format": "something-else"},
    {"format": "disth2.model", "nodes": [{"node": 2, "k": 1, "n": 0, "f": 1, "q": 1,
                                          "m": 0, "p": 0}]},
    {"format": "disth2.model", "nodes": [{"node": 1, "k": 1, "n": 0, "f": 1, "q": 1,
                                          "m": 0, "p": 0, "blocks": {"A_QQ": [[1]]}}]},
    {"format": "disth2.model", "nodes": [{"node": 1, "k": 1, "n": 0, "f": 1, "q": 1,
                                          "m": 0, "p": 0, "blocks": {"A_TT": [[1, 2]]}}]},
    {"format": "disth2.model", "nodes": [{"node": 1, "k": 1}]},
])
def test_malformed_models_raise_format_error(doc):
    with pytest.raises(FormatError):
        dio.model_from_dict(doc)


def test_unreadable_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError):
        dio.load_model(bad)
    with pytest.raises(FormatError):
        dio.load_model(tmp_path / "missing.json")
