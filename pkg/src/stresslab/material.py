"""Isotropic linear-elastic material and its plane-strain elasticity matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stresslab.errors import IncompressibleMaterial, InvalidParameters


@dataclass(frozen=True)
class Material:
    """Young's modulus in MPa and Poisson's ratio.

    The default values are a generic structural steel; stresses of the
    traction-loaded cantilever do not depend on ``youngs_modulus``.
    """

    youngs_modulus: float = 200_000.0
    poisson_ratio: float = 0.3

    def __post_init__(self):
        if not np.isfinite(self.youngs_modulus) or self.youngs_modulus <= 0:
            raise InvalidParameters(f"youngs_modulus must be > 0, got {self.youngs_modulus}")
        if not 0.0 <= self.poisson_ratio:
            raise InvalidParameters(f"poisson_ratio must be >= 0, got {self.poisson_ratio}")
        if self.poisson_ratio >= 0.5:
            raise IncompressibleMaterial(f"poisson_ratio must be < 0.5, got {self.poisson_ratio}")

    def to_dict(self) -> dict:
        return {"youngs_modulus": self.youngs_modulus, "poisson_ratio": self.poisson_ratio}


def elasticity_matrix(material: Material) -> np.ndarray:
    """Plane-strain constitutive matrix in Voigt form (sx, sy, txy) <- (ex, ey, gxy)."""
    E, nu = material.youngs_modulus, material.poisson_ratio
    if nu >= 0.5:
        raise IncompressibleMaterial(f"poisson_ratio must be < 0.5, got {nu}")
    f = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    c = np.array(
        [
            [1.0 - nu, nu, 0.0],
            [nu, 1.0 - nu, 0.0],
            [0.0, 0.0, (1.0 - 2.0 * nu) / 2.0],
        ]
    )
    return f * c
