"""Acceptance suite: one test per criterion, labelled for the terminal summary in conftest.py.

The three training criteria run at desk scale and take several minutes each.
"""
import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from vitt import attention as A
from vitt import tensor as T
from vitt.cli import main
from vitt.data import AUGMENTATIONS, DihedralTransform, MicrostructureSpec, build_dataset, generate_image, load_dataset, random_walk_strain, stream
from vitt.evaluation import gru_comparison, ret_comparison
from vitt.gradcheck import check_gradients
from vitt.material import (
    ElasticParams,
    J2Params,
    MaterialState,
    elastic_stress,
    fiber_fraction,
    homogenize_path,
    j2_path,
    j2_step,
    uniaxial_stress_path,
    von_mises,
)
from vitt.models import GRUConfig, GRUModel, ViTTransformer, ViTTransformerConfig
from vitt.presets import get_preset
from vitt.tensor import Tensor
from vitt.training import LrSchedule, mse_loss, train

CRITERIA = {
    "test_gradient_fidelity": "gradient fidelity (tiny ViT-Transformer and GRU)",
    "test_decoder_causality": "decoder causality",
    "test_softmax_and_mask_invariants": "softmax / mask invariants",
    "test_lr_schedule_trace": "learning-rate schedule",
    "test_j2_oracle": "J2 oracle",
    "test_homogenization_identities": "homogenization identities",
    "test_augmentation_equivariance": "augmentation equivariance",
    "test_parameter_count": "parameter count",
    "test_desk_learning": "desk-scale learning",
    "test_ret_direction": "RET direction",
    "test_gru_direction": "GRU direction",
    "test_cli_determinism": "determinism",
}

TINY = ViTTransformerConfig(
    patch_size=2, image_side=4, enc_embed=8, enc_heads=2, enc_ff=16, enc_layers=1, enc_out=4,
    dec_embed=8, dec_heads=2, dec_ff=16, dec_layers=1, dec_in=10, out_ffn_dim=16,
)
M, F = J2Params(), ElasticParams()


def test_gradient_fidelity():
    rng = np.random.default_rng(0)
    E, Y = rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 3, 6))
    images = (rng.random((2, 4, 4)) < 0.5).astype(np.uint8)
    for model in (ViTTransformer(TINY, seed=1), GRUModel(GRUConfig(layers=2, hidden=6), seed=1)):
        loss = lambda: mse_loss(model.forward(Tensor(E), images), Y)
        errs = check_gradients(loss, model.params, rng, h=1e-5, max_entries=None)
        worst = max(errs, key=errs.get)
        assert errs[worst] < 1e-4, (model.kind, worst, errs[worst])


def test_decoder_causality():
    model = ViTTransformer(TINY, seed=2)
    rng = np.random.default_rng(3)
    n = 16
    image = (rng.random((4, 4)) < 0.5).astype(np.uint8)
    base = rng.normal(size=(n, 6))
    with T.no_grad():
        ref = model.predict(image, base).data
        for _ in range(100):
            t = int(rng.integers(0, n))
            E = base.copy()
            E[t] += rng.normal(size=6) * 10.0 ** rng.uniform(-3, 1)
            out = model.predict(image, E).data
            np.testing.assert_array_equal(out[:t], ref[:t])
            assert not np.array_equal(out[t:], ref[t:])


def test_softmax_and_mask_invariants():
    rng = np.random.default_rng(4)
    for n in (1, 2, 7, 50, 200):
        for scale in (0.1, 3.0, 30.0):
            Q, K = (Tensor(rng.normal(size=(3, n, 8)) * scale) for _ in range(2))
            mask = A.causal_mask(n)
            # V = I returns the weight matrix through the differentiable path the model uses
            W = A.scaled_dot_attention(Q, K, Tensor(np.broadcast_to(np.eye(n), (3, n, n)).copy()), mask).data
            np.testing.assert_allclose(W.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
            assert np.all(W[..., ~mask] < 1e-30)


def reference_lr_trace(losses, lr0, g1, n1, g2, n2, g3, n3, floor1, floor2):
    """Learning rate in force during each epoch, written independently of LrSchedule."""
    out, lr, best, stale = [], lr0, math.inf, 0
    for epoch, loss in enumerate(losses):
        out.append(lr)
        stale = 0 if loss < best else stale + 1
        best = min(best, loss)
        if epoch < n1:
            lr = lr * g1
            continue
        if lr > floor1:
            lr = lr * g2 if (epoch - n1) % n2 == 0 else lr
            continue
        if stale >= n3 and lr > floor2:
            lr, stale = lr * g3, 0
    return out


def test_lr_schedule_trace():
    rng = np.random.default_rng(5)
    # improving, then noisy plateaus so that every branch of the schedule is exercised
    losses = list(1.0 / np.arange(1, 301)) + list(rng.uniform(0.5, 1.0, 600))
    losses[400:460] = list(np.linspace(1e-3, 1e-4, 60))
    s = LrSchedule()
    trace = []
    for e, loss in enumerate(losses):
        trace.append(s.lr)
        s.update(e, loss)
    ref = reference_lr_trace(losses, 1e-5, 1.0965, 50, 0.8, 20, 0.8, 10, 1e-4, 1e-5)
    np.testing.assert_allclose(trace, ref, rtol=1e-15, atol=0)

    # warmup lands a factor ~100 above lr0
    assert 99 <= trace[50] / 1e-5 <= 101
    # stepped decay: exactly every 20 epochs from n1 while above the first floor
    drops = [e for e in range(50, 400) if trace[e + 1] < trace[e]]
    phase2 = [e for e in drops if trace[e] > 1e-4]
    assert phase2 == list(range(50, 50 + 20 * len(phase2), 20)) and len(phase2) >= 5
    for e in phase2:
        assert trace[e + 1] == pytest.approx(trace[e] * 0.8, rel=1e-15)

    # plateau decay fires on the 10th consecutive non-improving epoch, never the 9th
    s = LrSchedule(lr0=1e-4, lr_min1=1e-4, n1=0)
    lrs, loss = [], 1.0
    for e in range(60):
        loss = loss * 0.5 if e < 5 else loss
        lrs.append(s.update(e, loss))
    changes = [e for e in range(1, 60) if lrs[e] != lrs[e - 1]]
    assert changes[:3] == [14, 24, 34]


def test_j2_oracle():
    eps = np.linspace(0, 0.05, 501)[1:]
    _, stresses, _ = uniaxial_stress_path(eps, M)
    ey = M.sigma_y / M.E
    exact = np.where(eps <= ey, M.E * eps, M.sigma_y + M.E * M.H / (M.E + M.H) * (eps - ey))
    np.testing.assert_allclose(stresses[:, 0], exact, rtol=1e-8, atol=0)

    worst = 0.0
    for seed in range(20):
        state = MaterialState.zeros()
        for e in random_walk_strain(80, 2e-3, stream(seed, "j2-oracle")):
            sig, new = j2_step(state, e, M)
            if new.alpha > state.alpha:
                worst = max(worst, abs(von_mises(sig) - (M.sigma_y + M.H * new.alpha)))
            state = new
    assert worst < 1e-8 * M.sigma_y


def test_homogenization_identities():
    side = 64
    for seed in range(3):
        E = random_walk_strain(60, 1e-3, seed)
        np.testing.assert_array_equal(homogenize_path(np.ones((side, side), np.uint8), E, M, F), elastic_stress(E, F))
        np.testing.assert_array_equal(homogenize_path(np.zeros((side, side), np.uint8), E, M, F), j2_path(E, M))
        img = generate_image(MicrostructureSpec(5, 0.13, side, seed))
        f = fiber_fraction(img)
        expect = f * elastic_stress(E, F) + (1 - f) * j2_path(E, M)
        np.testing.assert_allclose(homogenize_path(img, E, M, F), expect, rtol=0, atol=1e-12)


def test_augmentation_equivariance():
    groups = ((3, 0.175), (5, 0.13), (10, 0.1))
    for i in range(20):
        rng = stream(0, "equivariance", i)
        n, r = groups[i % 3]
        img = generate_image(MicrostructureSpec(n, r, 32, int(rng.integers(2**31))))
        E = random_walk_strain(30, 1e-3, rng)
        base = homogenize_path(img, E, M, F)
        for g in AUGMENTATIONS:
            t = DihedralTransform(g)
            got = homogenize_path(t.apply_image(img), t.apply_voigt(E), M, F)
            np.testing.assert_allclose(got, t.apply_voigt(base), rtol=0, atol=1e-10)


def test_parameter_count():
    n = ViTTransformer(ViTTransformerConfig()).params.count()
    assert 2.0e6 <= n <= 2.5e6, n


# ---------------------------------------------------------------------------
# desk-scale training
# ---------------------------------------------------------------------------

def window_means(values, start, width=10):
    v = np.asarray(values[start:])
    k = len(v) // width
    return v[:k * width].reshape(k, width).mean(axis=1)


@pytest.mark.slow
def test_desk_learning(tmp_path):
    p = get_preset("desk")
    build_dataset(p.dataset, tmp_path / "data")
    m, tr, te = load_dataset(tmp_path / "data")
    assert len(tr) + len(te) >= 600
    hist = train(ViTTransformer(p.model, seed=p.train.seed), tr, te, m.scaler, p.train)
    assert hist.train_mse[-1] < 0.01 * hist.train_mse[0], (hist.train_mse[0], hist.train_mse[-1])
    for curve in (hist.train_mse, hist.test_mse):
        w = window_means(curve, p.train.n1)
        assert np.all(np.diff(w) <= 0), w


@pytest.fixture(scope="session")
def comparisons(tmp_path_factory):
    p = get_preset("desk")
    ret = ret_comparison(p, tmp_path_factory.mktemp("ret"))
    gru = gru_comparison(p, tmp_path_factory.mktemp("gru"),
                         transformer=(ret.models["traditional"], ret.train_mse["traditional"]))
    return p, ret, gru


@pytest.mark.slow
def test_ret_direction(comparisons):
    p, comp, _ = comparisons
    short, long_ = (f"sin{L}" for L in p.study.eval_lengths)
    trad, ret = comp.reports["traditional"].errors, comp.reports["ret"].errors
    print(f"traditional {trad}  ret {ret}  train_mse {comp.train_mse}")
    assert ret[short] < trad[short]
    assert max(ret[short], ret[long_]) < 2 * min(ret[short], ret[long_])


@pytest.mark.slow
def test_gru_direction(comparisons):
    _, _, comp = comparisons
    tf, gru = comp.reports["transformer"].errors, comp.reports["gru"].errors
    a, b = comp.train_mse["transformer"], comp.train_mse["gru"]
    print(f"transformer {tf}  gru {gru}  train_mse {comp.train_mse}")
    assert max(a, b) <= 3 * min(a, b)
    assert tf["second_half"] <= gru["second_half"]


# ---------------------------------------------------------------------------
# determinism of the command line
# ---------------------------------------------------------------------------

SMALL = ["dataset.originals_per_group=1", "dataset.n_pure_matrix=2", "dataset.n_pure_fiber=2",
         "dataset.n_train=30", "dataset.seq_len=10", "train.epochs=2", "train.l_min=4",
         "study.n_train=20", "study.n_test=5", "study.seq_len=12", "study.eval_lengths=6,12", "study.period=12", "study.extended_len=24"]


def snapshot(root: Path) -> dict:
    return {str(f.relative_to(root)): hashlib.sha256(f.read_bytes()).hexdigest()
            for f in sorted(root.rglob("*")) if f.is_file()}


def test_cli_determinism(tmp_path):
    data, run = tmp_path / "data", tmp_path / "run"
    commands = [
        ["gen-data", "--out", str(data)],
        ["train", "--data", str(data), "--out", str(run)],
        ["eval", "--suite", "unseen", "--ckpt", str(run / "ckpt.vttf"), "--out", str(tmp_path / "unseen")],
        ["eval", "--suite", "ret-compare", "--out", str(tmp_path / "ret")],
        ["eval", "--suite", "gru-compare", "--out", str(tmp_path / "gru")],
    ]
    snaps = []
    for _ in range(2):
        for cmd in commands:
            assert main([*cmd, "--seed", "7", *SMALL]) == 0, cmd
        snaps.append(snapshot(tmp_path))
    assert snaps[0] == snaps[1]
    names = snaps[0]
    assert {"data/train.vttf", "data/test.vttf", "run/ckpt.vttf", "unseen/summary.csv",
            "ret/comparison.csv", "gru/comparison.csv"} <= set(names)
