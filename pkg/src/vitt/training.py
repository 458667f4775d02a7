"""Adam, MSE loss, Random Extract Training, warmup/decay learning-rate schedule, checkpoints."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import ConfigError
from .container import read_arrays, read_manifest, write_arrays, write_manifest
from .data import Scaler, SequenceData, stream
from .models import GRUConfig, ViTTransformerConfig, build_model
from .tensor import DimensionError, GraphError, NumericError, ParameterSet, Tensor


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def mse_loss(pred: Tensor, target) -> Tensor:
    """Squared Euclidean norm of each step's residual, averaged over samples and steps."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    steps = int(np.prod(pred.shape[:-1]))
    return T.square(pred - target).sum() * (1.0 / steps)


class Adam:
    """Bias-corrected Adam; gradients are cleared after every step."""

    def __init__(self, params: ParameterSet, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, lr: float) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise GraphError(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


@dataclass
class LrSchedule:
    """Epoch-level schedule: geometric warmup, stepped decay, then plateau decay."""

    lr0: float = 1e-5
    gamma1: float = 1.0965
    n1: int = 50
    gamma2: float = 0.8
    n2: int = 20
    gamma3: float = 0.8
    n3: int = 10
    lr_min1: float = 1e-4
    lr_min2: float = 1e-5
    lr: float = field(init=False)
    best: float = field(init=False, default=math.inf)
    plateau: int = field(init=False, default=0)

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError("initial learning rate must be positive")
        self.lr = self.lr0

    def update(self, epoch: int, train_loss: float) -> float:
        """Call once after each epoch with that epoch's mean training loss."""
        if train_loss < self.best:
            self.best = train_loss
            self.plateau = 0
        else:
            self.plateau += 1
        if epoch < self.n1:
            self.lr *= self.gamma1
        elif self.lr > self.lr_min1:
            if (epoch - self.n1) % self.n2 == 0:
                self.lr *= self.gamma2
        elif self.plateau >= self.n3 and self.lr > self.lr_min2:
            self.lr *= self.gamma3
            self.plateau = 0
        return self.lr


@dataclass(frozen=True)
class RetPolicy:
    """Per-batch prefix length: uniform integer in [l_min, l], forced to l on the penultimate epoch."""

    l: int
    l_min: int
    n_epochs: int
    enabled: bool = True

    def __post_init__(self):
        if self.l_min > self.l or self.l_min < 1:
            raise ConfigError(f"l_min={self.l_min} must lie in [1, l={self.l}]")

    def draw(self, epoch: int, rng: np.random.Generator) -> int:
        if not self.enabled:
            return self.l
        n = int(rng.integers(self.l_min, self.l + 1))
        if epoch == self.n_epochs - 2:
            n = self.l
        return n


def ret_slice(strains, stresses, images, policy: RetPolicy, epoch: int, rng: np.random.Generator):
    """First ``n`` steps of every sequence in the batch; images pass through untouched."""
    n = policy.draw(epoch, rng)
    return strains[:, :n], stresses[:, :n], images, n


@dataclass
class TrainConfig:
    epochs: int = 900
    batch_size: int = 20
    lr0: float = 1e-5
    gamma1: float = 1.0965
    n1: int = 50
    gamma2: float = 0.8
    n2: int = 20
    gamma3: float = 0.8
    n3: int = 10
    lr_min1: float = 1e-4
    lr_min2: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ret: bool = True
    l_min: int = 20
    shuffle: bool = True
    seed: int = 0
    ckpt_every: int = 0

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr0, self.gamma1, self.n1, self.gamma2, self.n2, self.gamma3, self.n3,
                          self.lr_min1, self.lr_min2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    train_mse: list = field(default_factory=list)
    test_mse: list = field(default_factory=list)
    lr: list = field(default_factory=list)


def evaluate_mse(model, data: SequenceData, scaler: Scaler, batch: int = 50) -> float:
    """Full-length normalised MSE over a split."""
    E = scaler.strain(data.strains)
    Y = scaler.stress(data.stresses)
    total = 0.0
    with T.no_grad():
        for s in range(0, len(E), batch):
            imgs = None if data.images is None else data.images[s:s + batch]
            pred = model.forward(Tensor(E[s:s + batch]), imgs)
            total += float(((pred.data - Y[s:s + batch]) ** 2).sum())
    return total / (E.shape[0] * E.shape[1])


def train(model, train_data: SequenceData, test_data: SequenceData, scaler: Scaler, cfg: TrainConfig,
          run_dir=None, log: Callable[[str], None] | None = None) -> TrainResult:
    """Mini-batch Adam with optional RET slicing and per-epoch schedule updates."""
    E = scaler.strain(train_data.strains)
    Y = scaler.stress(train_data.stresses)
    images = train_data.images
    n, l = E.shape[:2]
    policy = RetPolicy(l, min(cfg.l_min, l), cfg.epochs, cfg.ret)
    shuffle_rng = stream(cfg.seed, "shuffle")
    ret_rng = stream(cfg.seed, "ret")
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    sched = cfg.schedule()
    result = TrainResult()
    writer = None
    fh = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        fh = open(run_dir / "losses.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "test_mse", "lr"])
    try:
        for epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
            lr = sched.lr
            losses = []
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                bi = None if images is None else images[idx]
                xs, ys, bi, _ = ret_slice(E[idx], Y[idx], bi, policy, epoch, ret_rng)
                try:
                    with np.errstate(over="ignore", invalid="ignore"):
                        loss = mse_loss(model.forward(Tensor(xs), bi), ys)
                except NumericError as exc:  # NaN reached an attention softmax
                    raise TrainingDiverged(epoch, b) from exc
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(epoch, b)
                loss.backward()
                opt.step(lr)
                losses.append(value)
            train_mse = float(np.mean(losses))
            test_mse = evaluate_mse(model, test_data, scaler) if test_data is not None and len(test_data) else float("nan")
            result.train_mse.append(train_mse)
            result.test_mse.append(test_mse)
            result.lr.append(lr)
            sched.update(epoch, train_mse)
            if writer is not None:
                writer.writerow([epoch, repr(train_mse), repr(test_mse), repr(lr)])
                fh.flush()
            if log is not None:
                log(f"epoch {epoch:4d}  train {train_mse:.4e}  test {test_mse:.4e}  lr {lr:.3e}")
            if run_dir is not None and cfg.ckpt_every and (epoch + 1) % cfg.ckpt_every == 0:
                save_checkpoint(run_dir / f"ckpt_e{epoch + 1:04d}.vttf", model, scaler, {"epoch": epoch + 1})
        if run_dir is not None:
            save_checkpoint(run_dir / "ckpt.vttf", model, scaler, {"epoch": cfg.epochs})
    finally:
        if fh is not None:
            fh.close()
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _manifest_path(path: Path) -> Path:
    return path.with_suffix(".txt")


def save_checkpoint(path, model, scaler: Scaler | None = None, extra: dict | None = None) -> None:
    """Parameters into a VTTF file plus a sibling ``.txt`` manifest of the model config."""
    path = Path(path)
    write_arrays(path, model.params.state_dict())
    entries = {"kind": model.kind}
    entries.update({f"model.{k}": v for k, v in model.cfg.to_dict().items()})
    if scaler is not None:
        entries.update({f"scaler.{k}": v for k, v in scaler.to_dict().items()})
    entries.update(extra or {})
    write_manifest(_manifest_path(path), entries)


def load_checkpoint(path):
    """Rebuild the model recorded in a checkpoint; returns ``(model, scaler_or_None)``."""
    path = Path(path)
    meta = read_manifest(_manifest_path(path))
    kind = meta["kind"]
    cfg_items = {k[len("model."):]: v for k, v in meta.items() if k.startswith("model.")}
    cfg = GRUConfig.from_dict(cfg_items) if kind == "gru" else ViTTransformerConfig.from_dict(cfg_items)
    model = build_model(kind, cfg)
    model.params.load_state_dict(read_arrays(path))
    sc = {k[len("scaler."):]: v for k, v in meta.items() if k.startswith("scaler.")}
    return model, (Scaler.from_dict(sc) if sc else None)
