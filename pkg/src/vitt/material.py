"""Ground-truth stress paths: isotropic elastic fiber, J2 matrix, pixel-quadrature averaging.

Voigt ordering is ``[11, 22, 33, 12, 13, 23]`` with *tensor* shear components
(``eps12``, not ``2 * eps12``). Units: GPa for moduli and stress.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SHEAR = slice(3, 6)
NORMAL = slice(0, 3)
# contraction weights for a:b with tensor-shear Voigt vectors
_CONTRACT = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ElasticParams:
    E: float = 324.0
    nu: float = 0.1

    def __post_init__(self):
        if not self.E > 0 or not -1.0 < self.nu < 0.5:
            raise ValidationError(f"invalid elastic constants E={self.E}, nu={self.nu}")

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def mu(self) -> float:
        return self.E / (2 * (1 + self.nu))


@dataclass(frozen=True)
class J2Params:
    E: float = 71.7
    nu: float = 0.33
    sigma_y: float = 0.3
    H: float = 0.013 * 71.7

    def __post_init__(self):
        ElasticParams(self.E, self.nu)
        if not self.sigma_y > 0 or self.H < 0:
            raise ValidationError(f"invalid plasticity constants sigma_y={self.sigma_y}, H={self.H}")

    @property
    def elastic(self) -> ElasticParams:
        return ElasticParams(self.E, self.nu)


@dataclass
class MaterialState:
    """Plastic strain (Voigt, tensor shear) and accumulated plastic strain.

    Arrays may carry leading axes to hold many independent integration points.
    """

    eps_p: np.ndarray = field(default_factory=lambda: np.zeros(6))
    alpha: np.ndarray | float = 0.0

    @classmethod
    def zeros(cls, shape=()) -> "MaterialState":
        return cls(np.zeros((*shape, 6)), np.zeros(shape) if shape else 0.0)

    def copy(self) -> "MaterialState":
        return MaterialState(np.array(self.eps_p, copy=True), np.array(self.alpha, copy=True) if np.ndim(self.alpha) else float(self.alpha))


def elastic_stress(eps, p: ElasticParams) -> np.ndarray:
    """sigma = lam tr(eps) I + 2 mu eps."""
    eps = np.asarray(eps, dtype=np.float64)
    sig = 2.0 * p.mu * eps
    sig[..., NORMAL] += (p.lam * eps[..., NORMAL].sum(axis=-1))[..., None]
    return sig


def deviator(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=np.float64, copy=True)
    out[..., NORMAL] -= (v[..., NORMAL].sum(axis=-1) / 3.0)[..., None]
    return out


def von_mises(sig) -> np.ndarray:
    """sqrt(3/2 s:s) of the deviatoric part."""
    s = deviator(np.asarray(sig, dtype=np.float64))
    return np.sqrt(1.5 * (s * s * _CONTRACT).sum(axis=-1))


def j2_step(state: MaterialState, eps_new, p: J2Params) -> tuple[np.ndarray, MaterialState]:
    """Strain-driven radial return with linear isotropic hardening.

    Works on a single point or on arrays of points (leading axes). The input
    state is not modified.
    """
    eps_new = np.asarray(eps_new, dtype=np.float64)
    el = p.elastic
    mu = el.mu
    trial = elastic_stress(eps_new - state.eps_p, el)
    s = deviator(trial)
    q = np.sqrt(1.5 * (s * s * _CONTRACT).sum(axis=-1))
    alpha = np.asarray(state.alpha, dtype=np.float64)
    f = q - (p.sigma_y + p.H * alpha)
    plastic = f > 0
    if not np.any(plastic):
        return trial, state.copy()
    dgamma = np.where(plastic, f, 0.0) / (3.0 * mu + p.H)
    safe_q = np.where(plastic, q, 1.0)
    # flow direction 3/2 s/q; shear entries of eps_p use tensor convention
    n = 1.5 * s / safe_q[..., None]
    eps_p = state.eps_p + dgamma[..., None] * n
    stress = trial - 2.0 * mu * dgamma[..., None] * n
    new_alpha = alpha + dgamma
    if np.ndim(state.alpha) == 0:
        new_alpha = float(new_alpha)
    return stress, MaterialState(eps_p, new_alpha)


def j2_path(strains, p: J2Params, state: MaterialState | None = None) -> np.ndarray:
    """Stress path of a single J2 point driven by ``strains`` of shape ``(n, 6)``."""
    strains = np.asarray(strains, dtype=np.float64)
    state = state or MaterialState.zeros()
    out = np.empty_like(strains)
    for t, eps in enumerate(strains):
        out[t], state = j2_step(state, eps, p)
    return out


def _validate_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2 or not np.isin(image, (0, 1)).all():
        raise ValidationError("microstructure image must be a 2-D binary array")
    return image


def fiber_fraction(image) -> float:
    image = _validate_image(image)
    return float(image.mean())


def homogenize_path(image, strains, matrix: J2Params, fiber: ElasticParams) -> np.ndarray:
    """Pixel-quadrature volume average of the stress under uniform macroscopic strain.

    Every pixel is an integration point of equal volume; fiber pixels are
    linear elastic and each matrix pixel integrates its own J2 history.
    """
    image = _validate_image(image).astype(bool)
    strains = np.asarray(strains, dtype=np.float64)
    n_q = image.size
    n_matrix = int((~image).sum())
    n_fiber = n_q - n_matrix
    state = MaterialState.zeros((n_matrix,))
    out = np.empty_like(strains)
    for t, E in enumerate(strains):
        parts = []
        if n_fiber:
            parts.append(elastic_stress(np.broadcast_to(E, (n_fiber, 6)), fiber))
        if n_matrix:
            sig_m, state = j2_step(state, np.broadcast_to(E, (n_matrix, 6)), matrix)
            parts.append(sig_m)
        # correctly rounded sums: the average cannot depend on pixel order
        pixels = np.concatenate(parts)
        out[t] = [math.fsum(col) / n_q for col in pixels.T]
    return out


def mixture_path(image, strains, matrix: J2Params, fiber: ElasticParams) -> np.ndarray:
    """Closed-form reduction of :func:`homogenize_path`: f sigma_fiber + (1 - f) sigma_matrix."""
    f = fiber_fraction(image)
    strains = np.asarray(strains, dtype=np.float64)
    out = np.zeros_like(strains)
    if f > 0:
        out += f * elastic_stress(strains, fiber)
    if f < 1:
        out += (1.0 - f) * j2_path(strains, matrix)
    return out


def uniaxial_stress_path(axial, p: J2Params, tol: float = 1e-15, max_iter: int = 50) -> tuple[np.ndarray, np.ndarray, list]:
    """Drive a J2 point in uniaxial stress: prescribed eps11, lateral strains solved so sigma22 = sigma33 = 0.

    Returns ``(strains, stresses, states)``. Lateral strains are found by a
    secant iteration, which is exact on each (piecewise-linear) branch.
    """
    state = MaterialState.zeros()
    lat = 0.0
    strains, stresses, states = [], [], []
    for e11 in np.asarray(axial, dtype=np.float64):

        def residual(x):
            eps = np.array([e11, x, x, 0.0, 0.0, 0.0])
            sig, st = j2_step(state, eps, p)
            return sig[1], eps, sig, st

        x0, x1 = lat, lat - p.nu * 1e-4 - 1e-6
        r0 = residual(x0)[0]
        for _ in range(max_iter):
            r1, eps, sig, st = residual(x1)
            if abs(r1) <= tol * p.E or r1 == r0:
                break
            x0, x1, r0 = x1, x1 - r1 * (x1 - x0) / (r1 - r0), r1
        lat = x1
        state = st
        strains.append(eps)
        stresses.append(sig)
        states.append(st)
    return np.array(strains), np.array(stresses), states
