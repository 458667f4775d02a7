"""Loading protocols, relative error, unseen-microstructure suite, RET and GRU comparisons, report files."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import (
    DatasetManifest,
    MicrostructureSpec,
    Scaler,
    SequenceData,
    generate_image,
    j2_sequences,
    stream,
)
from .material import J2Params, j2_path, mixture_path
from .models import DecoderOnly, GRUModel
from .tensor import DimensionError, Tensor
from .training import TrainConfig, TrainResult, evaluate_mse, train

COMPONENTS = ("11", "22", "33", "12", "13", "23")


class DegenerateReferenceError(ValueError):
    pass


def relative_error(pred, ref) -> float:
    """||pred - ref|| / ||ref|| over every step and component."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise DimensionError(f"relative_error: {pred.shape} vs {ref.shape}")
    denom = np.linalg.norm(ref.ravel())
    if denom == 0.0:
        raise DegenerateReferenceError("reference path is identically zero")
    return float(np.linalg.norm((pred - ref).ravel()) / denom)


# ---------------------------------------------------------------------------
# loading protocols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadingProtocol:
    """Macroscopic strain program; row ``k`` of the path is step ``k + 1`` (step 0 is zero strain).

    ``increments`` drive the piecewise-linear kinds (normal components follow a
    triangle wave of ``period`` steps, shear components ramp linearly);
    ``peaks`` are the signed sinusoid amplitudes.
    """

    kind: str
    n_steps: int
    increments: tuple = (0.0,) * 6
    peaks: tuple = (0.0,) * 6
    period: int | None = None

    KINDS = ("monotonic", "linear_cyclic", "linear_cyclic_shear", "sinusoidal")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if self.n_steps < 1 or (self.period is not None and self.period < 1):
            raise ValueError("protocol needs a positive step count and period")


def _triangle(k: np.ndarray, period: int) -> np.ndarray:
    """Step count of a 0 -> +q -> -q -> 0 wave, q = period / 4."""
    q = period / 4.0
    ph = np.mod(k, period)
    return np.where(ph <= q, ph, np.where(ph <= 3 * q, 2 * q - ph, ph - period))


def make_protocol(p: LoadingProtocol) -> np.ndarray:
    k = np.arange(1, p.n_steps + 1, dtype=np.float64)
    inc = np.asarray(p.increments, dtype=np.float64)
    period = p.period or p.n_steps
    if p.kind == "monotonic":
        return k[:, None] * inc
    if p.kind == "sinusoidal":
        return np.sin(2.0 * np.pi * k / period)[:, None] * np.asarray(p.peaks, dtype=np.float64)
    path = np.zeros((p.n_steps, 6))
    path[:, :3] = _triangle(k, period)[:, None] * inc[:3]
    if p.kind == "linear_cyclic_shear":
        path[:, 3:] = k[:, None] * inc[3:]
    return path


def monotonic() -> LoadingProtocol:
    return LoadingProtocol("monotonic", 50, increments=(-0.0002, -0.0002, 0.0004, 0.0, 0.0, 0.0))


def linear_cyclic(shear: bool = False) -> LoadingProtocol:
    inc = (-0.0002, -0.0002, 0.0004) + ((0.0001, -0.0001, 0.000075) if shear else (0.0, 0.0, 0.0))
    return LoadingProtocol("linear_cyclic_shear" if shear else "linear_cyclic", 100, increments=inc)


def sinusoidal(n_steps: int = 100, period: int | None = None, shear_like_normal: bool = False) -> LoadingProtocol:
    """E11 = E22 = -0.005 sin, E33 = 0.01 sin; optionally E12 = E11 and E23 = E22."""
    a = (-0.005, -0.005, 0.01)
    shear = (a[0], 0.0, a[1]) if shear_like_normal else (0.0, 0.0, 0.0)
    return LoadingProtocol("sinusoidal", n_steps, peaks=a + shear, period=period)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class CaseResult:
    name: str
    strains: np.ndarray
    reference: np.ndarray
    predicted: np.ndarray
    error: float
    image: np.ndarray | None = None


@dataclass
class ExperimentReport:
    name: str
    cases: list = field(default_factory=list)
    runtime_s: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def errors(self) -> dict:
        return {c.name: c.error for c in self.cases}

    @property
    def mean_error(self) -> float:
        return float(np.mean([c.error for c in self.cases]))

    def add(self, name, strains, reference, predicted, image=None) -> CaseResult:
        c = CaseResult(name, strains, reference, predicted, relative_error(predicted, reference), image)
        self.cases.append(c)
        return c


@dataclass
class Comparison:
    """Two model arms evaluated on the same cases."""

    name: str
    reports: dict = field(default_factory=dict)
    train_mse: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)


def predict_stress(model, scaler: Scaler, strains, image=None) -> np.ndarray:
    """Physical-unit stress path from a physical-unit strain path (single sequence)."""
    E = scaler.strain(np.asarray(strains, dtype=np.float64))[None]
    imgs = None if image is None else np.asarray(image)[None]
    with T.no_grad():
        out = model.forward(Tensor(E), imgs).data[0]
    return scaler.stress_inverse(out)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

UNSEEN_CASES = (
    ("monotonic", monotonic, 0),
    ("linear_cyclic", lambda: linear_cyclic(False), 1),
    ("linear_cyclic_shear", lambda: linear_cyclic(True), 3),
    ("sinusoidal", lambda: sinusoidal(100), 4),
)
RANDOM_RADIUS = (8, 0.07, 0.14)  # fiber count, radius range


def run_unseen_suite(model, scaler: Scaler, manifest: DatasetManifest, seed: int = 0) -> ExperimentReport:
    """Four protocols on fresh microstructures of groups 1, 2, 4, 5, plus a random-radius cell."""
    t0 = time.perf_counter()
    rep = ExperimentReport("unseen", meta={"seed": seed})
    side = manifest.image_side
    for i, (name, proto, g) in enumerate(UNSEEN_CASES):
        n, r = manifest.groups[g]
        img_seed = int(stream(seed, "unseen", i).integers(2**63))
        image = generate_image(MicrostructureSpec(n, r, side, img_seed))
        E = make_protocol(proto())
        ref = mixture_path(image, E, manifest.matrix, manifest.fiber)
        rep.add(name, E, ref, predict_stress(model, scaler, E, image), image)
    rng = stream(seed, "unseen-radius")
    count, lo, hi = RANDOM_RADIUS
    radii = rng.uniform(lo, hi, size=count)
    image = generate_image(MicrostructureSpec(count, 0.0, side, int(rng.integers(2**63))), radii=radii)
    E = make_protocol(linear_cyclic(True))
    ref = mixture_path(image, E, manifest.matrix, manifest.fiber)
    rep.add("random_radius", E, ref, predict_stress(model, scaler, E, image), image)
    rep.runtime_s = time.perf_counter() - t0
    return rep


def study_data(study, matrix: J2Params | None = None) -> tuple[SequenceData, SequenceData, Scaler]:
    """Random-walk J2 sequences split train/test, with full-dataset min-max bounds."""
    allseq = j2_sequences(study.n_train + study.n_test, study.seq_len, study.step_range, study.seed, matrix)
    tr = SequenceData(allseq.strains[:study.n_train], allseq.stresses[:study.n_train])
    te = SequenceData(allseq.strains[study.n_train:], allseq.stresses[study.n_train:])
    return tr, te, Scaler.fit(allseq.strains, allseq.stresses)


def _fit(model, data, scaler, cfg: TrainConfig, run_dir, log) -> tuple[TrainResult, float]:
    hist = train(model, data[0], data[1], scaler, cfg, run_dir, log)
    return hist, evaluate_mse(model, data[0], scaler)


def _arm_dir(out, arm):
    return None if out is None else Path(out) / arm


def ret_comparison(preset, out_dir=None, log: Callable[[str], None] | None = None, matrix: J2Params | None = None) -> Comparison:
    """Decoder-only models trained with fixed-length batches and with RET, on sinusoids of two lengths."""
    study = preset.study
    data = study_data(study, matrix)
    scaler = data[2]
    comp = Comparison("ret-compare")
    for arm, ret in (("traditional", False), ("ret", True)):
        t0 = time.perf_counter()
        model = DecoderOnly(preset.decoder, seed=preset.train.seed)
        cfg = replace(preset.train, ret=ret, l_min=min(preset.train.l_min, study.seq_len))
        hist, mse = _fit(model, data, scaler, cfg, _arm_dir(out_dir, arm), log)
        rep = ExperimentReport(arm, meta={"seed": study.seed})
        for L in study.eval_lengths:
            E = make_protocol(sinusoidal(L, period=study.period, shear_like_normal=True))
            rep.add(f"sin{L}", E, j2_path(E, matrix or J2Params()), predict_stress(model, scaler, E))
        rep.runtime_s = time.perf_counter() - t0
        comp.reports[arm] = rep
        comp.train_mse[arm] = mse
        comp.histories[arm] = hist
        comp.models[arm] = model
    comp.models["scaler"] = scaler
    return comp


def gru_comparison(preset, out_dir=None, log: Callable[[str], None] | None = None, transformer=None,
                   matrix: J2Params | None = None) -> Comparison:
    """Decoder vs GRU on an extended sinusoid, scored on each half of the path.

    ``transformer`` may carry an already trained ``(model, train_mse)`` pair
    from the same study data; otherwise the decoder is trained here with
    fixed-length batches, the same procedure as the GRU.
    """
    study = preset.study
    data = study_data(study, matrix)
    scaler = data[2]
    comp = Comparison("gru-compare")
    E = make_protocol(sinusoidal(study.extended_len, period=study.period))
    ref = j2_path(E, matrix or J2Params())
    half = study.extended_len // 2
    cfg = replace(preset.train, ret=False)
    for arm in ("transformer", "gru"):
        t0 = time.perf_counter()
        hist = None
        if arm == "transformer" and transformer is not None:
            model, mse = transformer
        else:
            model = DecoderOnly(preset.decoder, preset.train.seed) if arm == "transformer" else GRUModel(preset.gru, preset.train.seed)
            hist, mse = _fit(model, data, scaler, cfg, _arm_dir(out_dir, arm), log)
        pred = predict_stress(model, scaler, E)
        rep = ExperimentReport(arm, meta={"seed": study.seed})
        rep.add("first_half", E[:half], ref[:half], pred[:half])
        rep.add("second_half", E[half:], ref[half:], pred[half:])
        rep.runtime_s = time.perf_counter() - t0
        comp.reports[arm] = rep
        comp.train_mse[arm] = mse
        comp.histories[arm] = hist
        comp.models[arm] = model
    return comp


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def emit_report(report: ExperimentReport, out_dir, plots: bool = False) -> list[Path]:
    """One ``<case>.csv`` (step, component, reference, predicted) per case plus ``summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for c in report.cases:
        path = out / f"{c.name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "component", "reference", "predicted"])
            for k in range(len(c.reference)):
                for j, comp in enumerate(COMPONENTS):
                    w.writerow([k + 1, comp, repr(float(c.reference[k, j])), repr(float(c.predicted[k, j]))])
        written.append(path)
    path = out / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "relative_error"])
        for c in report.cases:
            w.writerow([c.name, repr(c.error)])
        w.writerow(["mean", repr(report.mean_error)])
    written.append(path)
    if plots:
        written += _plot(report, out)
    return written


def emit_comparison(comp: Comparison, out_dir, plots: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for arm, rep in comp.reports.items():
        written += emit_report(rep, out / arm, plots)
    path = out / "comparison.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "case", "relative_error", "train_mse"])
        for arm, rep in comp.reports.items():
            for c in rep.cases:
                w.writerow([arm, c.name, repr(c.error), repr(float(comp.train_mse[arm]))])
    written.append(path)
    return written


def _plot(report: ExperimentReport, out: Path) -> list[Path]:
    import matplotlib
    from matplotlib.figure import Figure

    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "vitt", "svg.fonttype": "none"}):
        for c in report.cases:
            fig = Figure(figsize=(12, 6))
            axes = fig.subplots(2, 6)
            steps = np.arange(1, len(c.reference) + 1)
            for j, comp in enumerate(COMPONENTS):
                top, bottom = axes[0, j], axes[1, j]
                top.plot(steps, c.reference[:, j], "r-", lw=1)
                top.plot(steps, c.predicted[:, j], "b--", lw=1)
                top.set_title(f"S{comp}")
                top.set_xlabel("step")
                bottom.plot(c.strains[:, j], c.reference[:, j], "r-", lw=1)
                bottom.plot(c.strains[:, j], c.predicted[:, j], "b--", lw=1)
                bottom.set_xlabel(f"E{comp}")
            fig.tight_layout()
            path = out / f"{c.name}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            paths.append(path)
    return paths
