import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitt.data import DatasetManifest, Scaler
from vitt.evaluation import (
    DegenerateReferenceError,
    ExperimentReport,
    LoadingProtocol,
    emit_comparison,
    emit_report,
    gru_comparison,
    linear_cyclic,
    make_protocol,
    monotonic,
    relative_error,
    ret_comparison,
    run_unseen_suite,
    sinusoidal,
)
from vitt.models import GRUConfig, ViTTransformer, ViTTransformerConfig
from vitt.presets import J2Study, get_preset
from vitt.training import TrainConfig

TINY = ViTTransformerConfig(
    patch_size=8, image_side=32, enc_embed=8, enc_heads=2, enc_ff=16, enc_layers=1, enc_out=4,
    dec_embed=8, dec_heads=2, dec_ff=16, dec_layers=1, dec_in=10, out_ffn_dim=16,
)


def test_relative_error_examples():
    ref = np.random.default_rng(0).normal(size=(10, 6))
    assert relative_error(ref, ref) == 0.0
    assert relative_error(2 * ref, ref) == pytest.approx(1.0, abs=1e-15)
    assert relative_error(np.zeros_like(ref), ref) == 1.0
    with pytest.raises(DegenerateReferenceError):
        relative_error(ref, np.zeros_like(ref))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_relative_error_scale_invariance(seed, s):
    rng = np.random.default_rng(seed)
    p, r = rng.normal(size=(7, 6)), rng.normal(size=(7, 6))
    assert relative_error(s * p, s * r) == pytest.approx(relative_error(p, r), rel=1e-12)


def test_monotonic_protocol():
    E = make_protocol(monotonic())
    assert E.shape == (50, 6)
    assert E[-1, 2] == 0.02 and E[-1, 0] == pytest.approx(-0.01, abs=1e-15)
    assert np.all(E[:, 3:] == 0.0)


def test_linear_cyclic_protocols():
    E = make_protocol(linear_cyclic(False))
    assert E.shape == (100, 6)
    assert E[:, 2].max() == pytest.approx(0.01) and E[:, 2].min() == pytest.approx(-0.01)
    assert E[:, 0].max() == pytest.approx(0.005) and E[:, 0].min() == pytest.approx(-0.005)
    steps = np.abs(np.diff(np.vstack([np.zeros(6), E]), axis=0))
    np.testing.assert_allclose(steps[:, 2], 0.0004, atol=1e-15)
    np.testing.assert_allclose(steps[:, 0], 0.0002, atol=1e-15)
    assert abs(E[49, 2]) < 1e-15 and abs(E[99, 2]) < 1e-15  # returns through zero
    S = make_protocol(linear_cyclic(True))
    np.testing.assert_allclose(np.diff(S[:, 3:], axis=0), np.tile([0.0001, -0.0001, 0.000075], (99, 1)), atol=1e-15)
    assert S[0, 5] == 0.000075
    np.testing.assert_array_equal(S[:, :3], E[:, :3])


def test_sinusoidal_protocol():
    E = make_protocol(sinusoidal(100))
    assert E.shape == (100, 6) and np.all(E[:, 3:] == 0)
    assert np.abs(E[:, 2]).max() == pytest.approx(0.01, rel=1e-12)
    assert np.abs(E[:, 0]).max() == pytest.approx(0.005, rel=1e-12)
    S = make_protocol(sinusoidal(50, shear_like_normal=True))
    np.testing.assert_array_equal(S[:, 3], S[:, 0])
    np.testing.assert_array_equal(S[:, 5], S[:, 1])
    X = make_protocol(sinusoidal(100, period=50))
    np.testing.assert_allclose(X[50:], X[:50], atol=1e-15)


@pytest.mark.parametrize("proto", [monotonic(), linear_cyclic(False), linear_cyclic(True), sinusoidal(100)])
def test_replaying_increments_reconstructs_path(proto):
    E = make_protocol(proto)
    inc = np.diff(np.vstack([np.zeros(6), E]), axis=0)
    np.testing.assert_allclose(np.cumsum(inc, axis=0), E, rtol=0, atol=1e-15)


def test_protocol_validation():
    with pytest.raises(ValueError):
        LoadingProtocol("zigzag", 10)
    with pytest.raises(ValueError):
        LoadingProtocol("monotonic", 0)


def _unseen(seed=0):
    m = ViTTransformer(TINY, seed=0)
    man = DatasetManifest(image_side=32)
    return run_unseen_suite(m, Scaler(-0.02, 0.02, -3.0, 3.0), man, seed=seed)


def test_unseen_suite_contract():
    rep = _unseen()
    assert [c.name for c in rep.cases] == [
        "monotonic", "linear_cyclic", "linear_cyclic_shear", "sinusoidal", "random_radius"]
    for c in rep.cases:
        assert c.reference.shape == c.predicted.shape == c.strains.shape
        assert c.image.shape == (32, 32)
        if c.name in ("monotonic", "linear_cyclic", "sinusoidal"):
            assert np.all(c.reference[:, 3:] == 0.0)
    assert rep.mean_error == pytest.approx(np.mean([c.error for c in rep.cases]))


def test_emit_report_files(tmp_path):
    rep = _unseen()
    emit_report(rep, tmp_path / "a")
    emit_report(rep, tmp_path / "b")
    for c in rep.cases:
        rows = list(csv.reader(open(tmp_path / "a" / f"{c.name}.csv")))
        assert rows[0] == ["step", "component", "reference", "predicted"]
        assert len(rows) - 1 == len(c.reference) * 6
        assert (tmp_path / "a" / f"{c.name}.csv").read_bytes() == (tmp_path / "b" / f"{c.name}.csv").read_bytes()
    summary = list(csv.reader(open(tmp_path / "a" / "summary.csv")))
    vals = [float(r[1]) for r in summary[1:-1]]
    assert summary[-1][0] == "mean" and float(summary[-1][1]) == pytest.approx(np.mean(vals), rel=1e-15)


def test_emit_plots_are_reproducible(tmp_path):
    pytest.importorskip("matplotlib")
    rep = _unseen()
    rep.cases = rep.cases[:1]
    emit_report(rep, tmp_path / "a", plots=True)
    emit_report(rep, tmp_path / "b", plots=True)
    a, b = (tmp_path / d / "monotonic.svg" for d in "ab")
    assert a.read_bytes() == b.read_bytes() and b"<svg" in a.read_bytes()


def _tiny_preset():
    p = get_preset("desk")
    return replace(
        p, decoder=TINY, gru=GRUConfig(layers=1, hidden=6),
        train=TrainConfig(epochs=2, batch_size=10, l_min=5),
        study=J2Study(n_train=20, n_test=5, seq_len=12, eval_lengths=(6, 12), period=12, extended_len=24),
    )


def test_ret_comparison_shape(tmp_path):
    comp = ret_comparison(_tiny_preset(), tmp_path)
    assert set(comp.reports) == {"traditional", "ret"}
    for rep in comp.reports.values():
        assert [c.name for c in rep.cases] == ["sin6", "sin12"]
    emit_comparison(comp, tmp_path / "rep")
    rows = list(csv.reader(open(tmp_path / "rep" / "comparison.csv")))
    assert len(rows) == 5 and (tmp_path / "traditional" / "losses.csv").exists()


def test_gru_comparison_halves():
    comp = gru_comparison(_tiny_preset())
    for rep in comp.reports.values():
        assert [c.name for c in rep.cases] == ["first_half", "second_half"]
        assert all(len(c.reference) == 12 for c in rep.cases)
    assert set(comp.train_mse) == {"transformer", "gru"}
