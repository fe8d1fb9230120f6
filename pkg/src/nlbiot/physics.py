"""Model parameters and dilation-dependent hydraulic conductivity laws."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

CONSTANT = "Constant"
QUADRATIC_DIV = "QuadraticDiv"
SQUARED_AFFINE = "SquaredAffine"
EXPONENTIAL = "Exponential"
VARIANTS = (CONSTANT, QUADRATIC_DIV, SQUARED_AFFINE, EXPONENTIAL)

# short labels used in configs and CSV files: models (o), (i), (ii), (iii)
ALIASES = {
    "o": CONSTANT, "constant": CONSTANT, "linear": CONSTANT,
    "i": QUADRATIC_DIV, "quadratic": QUADRATIC_DIV, "quadraticdiv": QUADRATIC_DIV,
    "ii": SQUARED_AFFINE, "squared": SQUARED_AFFINE, "squaredaffine": SQUARED_AFFINE,
    "iii": EXPONENTIAL, "exp": EXPONENTIAL, "exponential": EXPONENTIAL,
}

POSITIVITY_GUARD = 1e-16
DEFAULT_Z_RANGE = (-1.0, 1.0)


class ConductivityBreakdown(ArithmeticError):
    """Conductivity evaluated to a non-positive value."""

    def __init__(self, message, z=None, value=None):
        super().__init__(message)
        self.z = z
        self.value = value


@dataclass(frozen=True)
class ModelParameters:
    lam: float = 1e2
    mu: float = 0.5
    alpha: float = 1.0
    S: float = 1e-4
    tau: float = 1e-2
    L: float = 1.0 / (1e2 + 0.5)

    def __post_init__(self):
        if not (self.lam >= 0 and self.mu > 0 and self.alpha > 0 and self.S >= 0
                and self.tau > 0 and self.L > 0):
            raise ValueError(f"invalid model parameters: {self}")


@dataclass(frozen=True)
class PermeabilityModel:
    variant: str = CONSTANT
    K0: float = 1e-6
    K1: float = 0.0

    def __post_init__(self):
        v = ALIASES.get(str(self.variant).lower(), self.variant)
        if v not in VARIANTS:
            raise ValueError(f"unknown conductivity law {self.variant!r}")
        object.__setattr__(self, "variant", v)
        if not self.K0 > 0:
            raise ValueError("K0 must be positive")

    @property
    def is_linear(self) -> bool:
        return self.variant == CONSTANT or self.K1 == 0.0


@dataclass(frozen=True)
class AssumptionConstants:
    k_min: float
    k_max: float
    k_lip: float
    z_range: tuple[float, float]


def _raw_K(model: PermeabilityModel, z):
    K0, K1 = model.K0, model.K1
    if model.variant == CONSTANT:
        return np.full_like(np.asarray(z, dtype=float), K0)
    if model.variant == QUADRATIC_DIV:
        return K0 + K1 * np.square(z)
    if model.variant == SQUARED_AFFINE:
        return np.square(K0 + K1 * np.asarray(z))
    return K0 * np.exp(K1 * np.asarray(z))


def eval_K(model: PermeabilityModel, z):
    """Conductivity K(z); works elementwise on arrays.

    Raises ConductivityBreakdown if any value drops to 1e-16*K0 or below.
    """
    val = _raw_K(model, z)
    bad = ~(val > POSITIVITY_GUARD * model.K0)
    if np.any(bad):
        zb = np.asarray(z, dtype=float)[bad] if np.ndim(z) else z
        raise ConductivityBreakdown(
            f"{model.variant} conductivity non-positive at dilation {np.ravel(zb)[0]:.6g}",
            z=zb, value=np.asarray(val)[bad] if np.ndim(val) else val,
        )
    return float(val) if np.ndim(val) == 0 else val


def derivative_K(model: PermeabilityModel, z):
    K0, K1 = model.K0, model.K1
    z = np.asarray(z, dtype=float)
    if model.variant == CONSTANT:
        d = np.zeros_like(z)
    elif model.variant == QUADRATIC_DIV:
        d = 2.0 * K1 * z
    elif model.variant == SQUARED_AFFINE:
        d = 2.0 * K1 * (K0 + K1 * z)
    else:
        d = K0 * K1 * np.exp(K1 * z)
    return float(d) if d.ndim == 0 else d


def assumption_constants(model: PermeabilityModel, z_lo: float = DEFAULT_Z_RANGE[0],
                         z_hi: float = DEFAULT_Z_RANGE[1]) -> AssumptionConstants:
    """Bounds and Lipschitz constant of K restricted to [z_lo, z_hi]."""
    if not z_lo < z_hi:
        raise ValueError("empty dilation range")
    K0, K1 = model.K0, model.K1
    # every law is monotone away from its single critical point
    critical = {QUADRATIC_DIV: 0.0, SQUARED_AFFINE: -K0 / K1 if K1 else math.inf}
    cands = [z_lo, z_hi]
    zc = critical.get(model.variant, math.inf)
    if z_lo < zc < z_hi:
        cands.append(zc)
    vals = _raw_K(model, np.array(cands))
    k_min, k_max = float(vals.min()), float(vals.max())
    # |K'| is affine or exponential in z, so its maximum sits at an endpoint
    k_lip = float(np.abs(derivative_K(model, np.array([z_lo, z_hi]))).max())
    if not k_min > 0:
        raise ConductivityBreakdown(
            f"{model.variant} conductivity vanishes on [{z_lo}, {z_hi}]", value=k_min
        )
    return AssumptionConstants(k_min, k_max, k_lip, (z_lo, z_hi))


def scale_parameters(lam: float, mu: float, alpha: float, S: float,
                     model: PermeabilityModel):
    """Rescale to unit shear modulus 2*mu = 1 and unit Biot coefficient.

    Returns ``(lam_scaled, S_scaled, model_scaled)`` with
    ``K_scaled(z) = 2*mu/alpha**2 * K(z)``.
    """
    if not (mu > 0 and alpha > 0):
        raise ValueError("mu and alpha must be positive")
    factor = 2.0 * mu / alpha**2
    if model.variant == SQUARED_AFFINE:
        root = math.sqrt(factor)
        scaled = replace(model, K0=model.K0 * root, K1=model.K1 * root)
    elif model.variant == QUADRATIC_DIV:
        scaled = replace(model, K0=model.K0 * factor, K1=model.K1 * factor)
    else:
        scaled = replace(model, K0=model.K0 * factor)
    return lam / (2.0 * mu), factor * S, scaled


def unscale_parameters(lam_s: float, S_s: float, model_s: PermeabilityModel,
                       mu: float, alpha: float):
    """Inverse of :func:`scale_parameters`."""
    factor = 2.0 * mu / alpha**2
    if model_s.variant == SQUARED_AFFINE:
        root = math.sqrt(factor)
        model = replace(model_s, K0=model_s.K0 / root, K1=model_s.K1 / root)
    elif model_s.variant == QUADRATIC_DIV:
        model = replace(model_s, K0=model_s.K0 / factor, K1=model_s.K1 / factor)
    else:
        model = replace(model_s, K0=model_s.K0 / factor)
    return lam_s * 2.0 * mu, S_s / factor, model
