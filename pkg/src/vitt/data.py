"""Microstructure images, random-walk strains, dihedral augmentation, scaling and dataset assembly."""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .container import read_arrays, read_manifest, write_arrays, write_manifest
from .material import ElasticParams, J2Params, j2_path, mixture_path

FORMAT_VERSION = 1
PACKING_BUDGET = 10_000
_RESTART_AFTER = 500


class PackingError(RuntimeError):
    pass


class OracleError(RuntimeError):
    pass


class DegenerateRangeError(ValueError):
    pass


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Named, independently seeded generator: one per (seed, purpose, index...)."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode()), *index]))


# ---------------------------------------------------------------------------
# microstructures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MicrostructureSpec:
    n_fibers: int
    radius: float
    image_side: int = 128
    rng_seed: int = 0


def place_fibers(radii, rng: np.random.Generator, image_side: int = 128, budget: int = PACKING_BUDGET):
    """Random sequential placement of discs fully inside the unit cell.

    Discs keep a one-pixel gap. The whole attempt restarts after a run of
    failures; :class:`PackingError` once ``budget`` attempts are spent.
    """
    radii = [float(r) for r in radii]
    margin = 1.0 / image_side
    attempts = 0
    while True:
        centers: list[np.ndarray] = []
        fails = 0
        while len(centers) < len(radii):
            attempts += 1
            if attempts > budget:
                raise PackingError(f"could not place {len(radii)} fibers within {budget} attempts")
            r = radii[len(centers)]
            c = rng.uniform(r, 1.0 - r, size=2)
            if all(np.hypot(*(c - o)) >= r + ro + margin for o, ro in zip(centers, radii)):
                centers.append(c)
                fails = 0
            else:
                fails += 1
                if fails >= _RESTART_AFTER:
                    break
        if len(centers) == len(radii):
            return np.array(centers).reshape(-1, 2), np.array(radii)


def rasterize(centers, radii, image_side: int = 128) -> np.ndarray:
    """1 where the pixel centre lies in any disc. Row 0 is the top edge (y = 1)."""
    coords = (np.arange(image_side) + 0.5) / image_side
    x = coords[None, :]
    y = 1.0 - coords[:, None]
    img = np.zeros((image_side, image_side), dtype=np.uint8)
    for (cx, cy), r in zip(centers, radii):
        img[(x - cx) ** 2 + (y - cy) ** 2 <= r * r] = 1
    return img


def generate_image(spec: MicrostructureSpec, radii=None) -> np.ndarray:
    """Binary microstructure image; ``radii`` overrides the spec's single radius."""
    if spec.n_fibers == 0 and radii is None:
        return np.zeros((spec.image_side, spec.image_side), dtype=np.uint8)
    rng = np.random.default_rng(spec.rng_seed)
    radii = [spec.radius] * spec.n_fibers if radii is None else list(radii)
    centers, radii = place_fibers(radii, rng, spec.image_side)
    return rasterize(centers, radii, spec.image_side)


def random_walk_strain(l: int, step_range: float, seed) -> np.ndarray:
    """Cumulative sum of i.i.d. uniform increments in [-step_range, step_range]; starts from zero."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.cumsum(rng.uniform(-step_range, step_range, size=(l, 6)), axis=0)


# ---------------------------------------------------------------------------
# dihedral transforms
# ---------------------------------------------------------------------------

# in-plane maps (x right, y up, z = fiber axis) as 3x3 orthogonal matrices
_Q = {
    "identity": ((1, 0), (0, 1)),
    "rot90": ((0, 1), (-1, 0)),      # 90 deg clockwise
    "rot180": ((-1, 0), (0, -1)),
    "rot270": ((0, -1), (1, 0)),     # 270 deg clockwise
    "flip_x": ((1, 0), (0, -1)),     # mirror about the x-axis
    "flip_y": ((-1, 0), (0, 1)),     # mirror about the y-axis
    "flip_diag": ((0, 1), (1, 0)),
    "flip_anti": ((0, -1), (-1, 0)),
}

# original + the five variants used for augmentation
AUGMENTATIONS = ("identity", "flip_y", "rot180", "flip_x", "rot90", "rot270")

_VOIGT_IJ = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def voigt_to_tensor(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    A = np.empty((*v.shape[:-1], 3, 3))
    for k, (i, j) in enumerate(_VOIGT_IJ):
        A[..., i, j] = v[..., k]
        A[..., j, i] = v[..., k]
    return A


def tensor_to_voigt(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    return np.stack([A[..., i, j] for i, j in _VOIGT_IJ], axis=-1)


@dataclass(frozen=True)
class DihedralTransform:
    name: str

    def __post_init__(self):
        if self.name not in _Q:
            raise KeyError(f"unknown dihedral element {self.name!r}")

    @property
    def Q(self) -> np.ndarray:
        Q = np.eye(3)
        Q[:2, :2] = _Q[self.name]
        return Q

    @property
    def voigt_matrix(self) -> np.ndarray:
        """6x6 signed permutation T with T v = voigt(Q tensor(v) Q^T)."""
        Q = self.Q
        cols = [tensor_to_voigt(Q @ voigt_to_tensor(e) @ Q.T) for e in np.eye(6)]
        return np.round(np.array(cols).T)

    def apply_voigt(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) @ self.voigt_matrix.T

    def apply_image(self, image) -> np.ndarray:
        """Move the pixel at (x, y) to Q(x, y), coordinates centred on the image."""
        image = np.asarray(image)
        H, W = image.shape[-2:]
        if H != W:
            raise ValueError("dihedral maps need square images")
        r, c = np.indices((H, W))
        x = c - (W - 1) / 2.0
        y = (H - 1) / 2.0 - r
        Qi = np.asarray(_Q[self.name], dtype=np.float64).T  # inverse of an orthogonal map
        xs = Qi[0, 0] * x + Qi[0, 1] * y
        ys = Qi[1, 0] * x + Qi[1, 1] * y
        src_c = np.rint(xs + (W - 1) / 2.0).astype(int)
        src_r = np.rint((H - 1) / 2.0 - ys).astype(int)
        return image[..., src_r, src_c]

    def compose(self, other: "DihedralTransform") -> "DihedralTransform":
        """self after other."""
        M = np.asarray(_Q[self.name]) @ np.asarray(_Q[other.name])
        for name, q in _Q.items():
            if np.array_equal(np.asarray(q), M):
                return DihedralTransform(name)
        raise AssertionError("dihedral group is closed")

    def inverse(self) -> "DihedralTransform":
        M = np.asarray(_Q[self.name]).T
        for name, q in _Q.items():
            if np.array_equal(np.asarray(q), M):
                return DihedralTransform(name)
        raise AssertionError("dihedral group is closed")


@dataclass
class Sample:
    image: np.ndarray
    strain: np.ndarray
    stress: np.ndarray


def augment(sample: Sample, g: DihedralTransform) -> Sample:
    return Sample(g.apply_image(sample.image), g.apply_voigt(sample.strain), g.apply_voigt(sample.stress))


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

def normalize(x, lo: float, hi: float) -> np.ndarray:
    if not hi > lo:
        raise DegenerateRangeError(f"normalization range [{lo}, {hi}] is empty")
    return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo)


def denormalize(x, lo: float, hi: float) -> np.ndarray:
    if not hi > lo:
        raise DegenerateRangeError(f"normalization range [{lo}, {hi}] is empty")
    return np.asarray(x, dtype=np.float64) * (hi - lo) + lo


@dataclass(frozen=True)
class Scaler:
    """Min-max bounds over all samples, steps and components (one pair for strain, one for stress)."""

    eps_min: float
    eps_max: float
    sig_min: float
    sig_max: float

    @classmethod
    def fit(cls, strains, stresses) -> "Scaler":
        return cls(float(np.min(strains)), float(np.max(strains)), float(np.min(stresses)), float(np.max(stresses)))

    def strain(self, x):
        return normalize(x, self.eps_min, self.eps_max)

    def stress(self, x):
        return normalize(x, self.sig_min, self.sig_max)

    def stress_inverse(self, x):
        return denormalize(x, self.sig_min, self.sig_max)

    def to_dict(self) -> dict:
        return {"eps_min": self.eps_min, "eps_max": self.eps_max, "sig_min": self.sig_min, "sig_max": self.sig_max}

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        return cls(float(d["eps_min"]), float(d["eps_max"]), float(d["sig_min"]), float(d["sig_max"]))


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

PAPER_GROUPS = ((3, 0.175), (5, 0.13), (6, 0.135), (8, 0.125), (10, 0.1))


@dataclass
class DatasetManifest:
    groups: tuple = PAPER_GROUPS
    originals_per_group: int = 200
    n_pure_matrix: int = 1000
    n_pure_fiber: int = 1000
    seq_len: int = 100
    step_range: float = 4e-4
    image_side: int = 128
    n_train: int = 7500
    seed: int = 0
    matrix: J2Params = field(default_factory=J2Params)
    fiber: ElasticParams = field(default_factory=ElasticParams)
    normalization: str = "full-dataset"
    scaler: Scaler | None = None
    format_version: int = FORMAT_VERSION

    @property
    def n_total(self) -> int:
        return len(self.groups) * self.originals_per_group * len(AUGMENTATIONS) + self.n_pure_matrix + self.n_pure_fiber

    @property
    def n_test(self) -> int:
        return self.n_total - self.n_train

    def to_entries(self) -> dict:
        e = {
            "format_version": self.format_version,
            "seed": self.seed,
            "groups": ";".join(f"{n}:{r!r}" for n, r in self.groups),
            "originals_per_group": self.originals_per_group,
            "augmentations": ",".join(AUGMENTATIONS),
            "n_pure_matrix": self.n_pure_matrix,
            "n_pure_fiber": self.n_pure_fiber,
            "n_total": self.n_total,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seq_len": self.seq_len,
            "step_range": float(self.step_range),
            "image_side": self.image_side,
            "quadrature": "pixel-average-iso-strain",
            "matrix_E": float(self.matrix.E),
            "matrix_nu": float(self.matrix.nu),
            "matrix_sigma_y": float(self.matrix.sigma_y),
            "matrix_H": float(self.matrix.H),
            "fiber_E": float(self.fiber.E),
            "fiber_nu": float(self.fiber.nu),
            "normalization": self.normalization,
        }
        if self.scaler is not None:
            e.update(self.scaler.to_dict())
        return e

    @classmethod
    def from_entries(cls, e) -> "DatasetManifest":
        groups = tuple(
            (int(n), float(r)) for n, r in (g.split(":") for g in e["groups"].split(";") if g)
        )
        scaler = Scaler.from_dict(e) if "eps_min" in e else None
        return cls(
            groups=groups,
            originals_per_group=int(e["originals_per_group"]),
            n_pure_matrix=int(e["n_pure_matrix"]),
            n_pure_fiber=int(e["n_pure_fiber"]),
            seq_len=int(e["seq_len"]),
            step_range=float(e["step_range"]),
            image_side=int(e["image_side"]),
            n_train=int(e["n_train"]),
            seed=int(e["seed"]),
            matrix=J2Params(float(e["matrix_E"]), float(e["matrix_nu"]), float(e["matrix_sigma_y"]), float(e["matrix_H"])),
            fiber=ElasticParams(float(e["fiber_E"]), float(e["fiber_nu"])),
            normalization=e.get("normalization", "full-dataset"),
            scaler=scaler,
            format_version=int(e["format_version"]),
        )

    def replace(self, **kw) -> "DatasetManifest":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return DatasetManifest(**vals)


def _original(job) -> tuple:
    """One labelled original: (image, strain, stress). Runs in worker processes."""
    index, n_fibers, radius, m = job
    try:
        rng = stream(m.seed, "sample", index)
        if n_fibers < 0:  # pure phases
            value = 1 if n_fibers == -2 else 0
            image = np.full((m.image_side, m.image_side), value, dtype=np.uint8)
        else:
            seed = int(rng.integers(2**63))
            image = generate_image(MicrostructureSpec(n_fibers, radius, m.image_side, seed))
        strain = random_walk_strain(m.seq_len, m.step_range, rng)
        stress = mixture_path(image, strain, m.matrix, m.fiber)
    except Exception as exc:  # noqa: BLE001 - re-raised with the sample index
        raise OracleError(f"sample {index}: {exc}") from exc
    if not np.isfinite(stress).all():
        raise OracleError(f"sample {index}: non-finite stress")
    return image, strain, stress


def _jobs(m: DatasetManifest) -> list:
    jobs = []
    idx = 0
    for n, r in m.groups:
        for _ in range(m.originals_per_group):
            jobs.append((idx, n, r, m))
            idx += 1
    for _ in range(m.n_pure_matrix):
        jobs.append((idx, -1, 0.0, m))
        idx += 1
    for _ in range(m.n_pure_fiber):
        jobs.append((idx, -2, 0.0, m))
        idx += 1
    return jobs


def assemble(m: DatasetManifest, workers: int = 1):
    """All samples in canonical order: grouped originals with their variants, then pure phases."""
    jobs = _jobs(m)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_original, jobs, chunksize=16))
    else:
        results = [_original(j) for j in jobs]
    n_aug = len(m.groups) * m.originals_per_group
    images, strains, stresses = [], [], []
    transforms = [DihedralTransform(g) for g in AUGMENTATIONS]
    for k, (img, eps, sig) in enumerate(results):
        variants = transforms if k < n_aug else transforms[:1]
        for g in variants:
            s = augment(Sample(img, eps, sig), g)
            images.append(s.image)
            strains.append(s.strain)
            stresses.append(s.stress)
    return np.array(images, dtype=np.uint8), np.array(strains), np.array(stresses)


def build_dataset(m: DatasetManifest, out_dir, workers: int = 1) -> DatasetManifest:
    """Generate, label, split and write ``manifest.txt``, ``train.vttf``, ``test.vttf``."""
    if not 0 < m.n_train <= m.n_total:
        raise ValueError(f"n_train={m.n_train} does not fit {m.n_total} samples")
    images, strains, stresses = assemble(m, workers)
    scaler = Scaler.fit(strains, stresses)
    order = stream(m.seed, "split").permutation(len(images))
    tr, te = order[: m.n_train], order[m.n_train:]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = m.replace(scaler=scaler)
    write_manifest(out / "manifest.txt", m.to_entries())
    for name, idx in (("train", tr), ("test", te)):
        write_arrays(out / f"{name}.vttf", {
            "images": images[idx], "strains": strains[idx], "stresses": stresses[idx],
        })
    return m


@dataclass
class SequenceData:
    """Physical-unit arrays of one split; ``images`` is None for microstructure-free data."""

    strains: np.ndarray
    stresses: np.ndarray
    images: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.strains)


def load_dataset(path) -> tuple[DatasetManifest, SequenceData, SequenceData]:
    path = Path(path)
    m = DatasetManifest.from_entries(read_manifest(path / "manifest.txt"))
    splits = []
    for name in ("train", "test"):
        a = read_arrays(path / f"{name}.vttf")
        splits.append(SequenceData(a["strains"], a["stresses"], a["images"]))
    return m, splits[0], splits[1]


def j2_sequences(n: int, length: int, step_range: float, seed: int, matrix: J2Params | None = None) -> SequenceData:
    """Microstructure-free random-walk J2 sequences."""
    matrix = matrix or J2Params()
    strains = np.empty((n, length, 6))
    stresses = np.empty((n, length, 6))
    for i in range(n):
        strains[i] = random_walk_strain(length, step_range, stream(seed, "j2-walk", i))
        stresses[i] = j2_path(strains[i], matrix)
    return SequenceData(strains, stresses, None)
