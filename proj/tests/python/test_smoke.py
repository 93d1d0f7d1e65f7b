import json
import math

import numpy as np
import pytest

import gmi_lab


def test_resolve_config_and_seed_derivation():
    cfg = gmi_lab.resolve_config("bound", {"synth": {"shift": 2.0}})
    assert cfg["synth"]["shift"] == 2.0
    assert cfg["synth"]["d"] == 16
    assert cfg["decoder"]["seed"] == gmi_lab.derive_seed(0, 2)
    assert gmi_lab.resolve_config("bound", {}, seed=9)["seed"] == 9
    with pytest.raises(gmi_lab.ConfigError):
        gmi_lab.resolve_config("bound", {"no_such_key": 1})


def test_w1_translation_and_estimators():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(40, 3))
    exact = gmi_lab.w1_exact(a, a + np.array([0.6, 0.0, 0.8]))
    assert exact["value"] == pytest.approx(1.0, abs=1e-9)
    b = rng.normal(size=(40, 3)) + 1.0
    e = gmi_lab.w1_exact(a, b)["value"]
    s = gmi_lab.w1_sliced(a, b, seed=1)
    assert s["value"] <= e + 3 * s["params"]["mc_std"] + 1e-12
    assert gmi_lab.w1_sinkhorn(a, b)["value"] == pytest.approx(e, rel=0.05)


def test_gmi_uniform_and_high_margin():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(200, 3))
    c = np.arange(200) % 2
    y = rng.integers(0, 4, size=200)
    uniform = gmi_lab.Decoder(np.zeros((4, 3)), contexts=2)
    assert abs(gmi_lab.estimate_gmi(uniform, c, z, y)["value"]) <= 3 / math.sqrt(200)

    n = 4
    w = np.zeros((2000, n))
    w[:n] = 50 * np.eye(n)
    dec = gmi_lab.Decoder(w)
    b = np.array(dec.b)
    b[n:] = -1e4
    dec.b = b
    tokens = np.arange(80) % n
    g = gmi_lab.estimate_gmi(dec, np.zeros(80, dtype=np.int64), np.eye(n)[tokens], tokens)
    assert g["value"] >= math.log(n) - 0.05
    assert g["value"] <= math.log(80) + 1e-9


def test_decoder_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    dec = gmi_lab.Decoder(rng.normal(size=(3, 2)))
    z = rng.normal(size=2)
    grad, floor = dec.grad_log_score(0, z, 1)
    if not floor:
        h = 1e-6
        fd = [(dec.log_score(0, z + h * e, 1) - dec.log_score(0, z - h * e, 1)) / (2 * h) for e in np.eye(2)]
        assert np.allclose(grad, fd, rtol=1e-6, atol=1e-8)


def test_synthetic_pipeline_end_to_end():
    modal, text = gmi_lab.generate_pair({"shift": 1.0, "seed": 3})
    assert modal["data"].shape == text["data"].shape == (512, 16)
    assert sorted(modal["strata"]) == sorted(text["strata"])
    dec, converged, _ = gmi_lab.train_decoder(text, seed=1, vocab=10, init_scale=0.01)
    report = gmi_lab.evaluate_bound(dec, modal, text)
    assert report["holds_support"]
    assert report["lhs"] <= report["bound_support"]
    spectrum = gmi_lab.mode_alignment(modal["data"].astype(float), text["data"].astype(float), k=8)
    assert len(spectrum["modes"]) > 0
    probe = gmi_lab.run_probe_protocol(text, "topic", seeds=[0, 1])
    assert 0.0 <= probe["mean"] <= 1.0


def test_missing_attribute_raises_named_error():
    modal, _ = gmi_lab.generate_pair({})
    with pytest.raises(gmi_lab.MissingAttributeError):
        gmi_lab.run_probe_protocol(modal, "not_an_attribute")


def test_run_writes_outputs_and_reports_failures(tmp_path):
    code, failures = gmi_lab.run("synth", {"mi_samples": 2000}, out=tmp_path / "synth")
    assert code == 0 and failures == []
    resolved = json.loads((tmp_path / "synth" / "config.json").read_text())
    assert resolved["subcommand"] == "synth"

    code, failures = gmi_lab.run("probe", {"synth": {}, "attributes": ["missing"], "seeds": [0]},
                                 out=tmp_path / "probe")
    assert code == 1
    assert len(failures) == 2
