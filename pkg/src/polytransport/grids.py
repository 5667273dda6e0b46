"""Structured (x, z) grid: periodic uniform in x, node-inclusive uniform in z."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GridMismatch


@dataclass(frozen=True)
class SpatialGrid:
    nx: int
    nz: int
    length_x: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.nz < 3:
            raise ConfigError("spatial grid needs nx >= 1 and nz >= 3")
        if not (self.length_x > 0 and self.height > 0):
            raise ConfigError("grid extents must be positive")

    @property
    def dx(self) -> float:
        return self.length_x / self.nx

    @property
    def dz(self) -> float:
        return self.height / (self.nz - 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.height, self.nz)

    @property
    def z_faces(self) -> np.ndarray:
        """Interior cell faces ``z_{j+1/2}``, ``j = 0 .. nz-2``."""
        z = self.z
        return 0.5 * (z[:-1] + z[1:])

    @property
    def z_weights(self) -> np.ndarray:
        """Trapezoid weights, equal to the finite-volume cell sizes."""
        wts = np.full(self.nz, self.dz)
        wts[0] = wts[-1] = self.dz / 2
        return wts

    def integrate(self, field: np.ndarray) -> np.ndarray:
        """Integrate over (x, z), the two leading axes."""
        field = np.asarray(field)
        self.check_field(field, 2)
        return np.tensordot(self.z_weights, field.sum(axis=0) * self.dx, axes=(0, 0))

    def integrate_x(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field)
        if field.shape[0] != self.nx:
            raise GridMismatch(f"surface field has {field.shape[0]} x-nodes, grid has {self.nx}")
        return field.sum(axis=0) * self.dx

    def check_field(self, field: np.ndarray, ndim_min: int = 2) -> None:
        if field.ndim < ndim_min or field.shape[:2] != (self.nx, self.nz):
            raise GridMismatch(
                f"field shape {field.shape} does not match grid ({self.nx}, {self.nz})"
            )

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.z, indexing="ij")

    def refined(self) -> "SpatialGrid":
        """Grid with both spacings halved."""
        return SpatialGrid(2 * self.nx, 2 * (self.nz - 1) + 1, self.length_x, self.height)
