"""Vertical bounding cylinder fitted to a converged point cloud.

The fit intersects two coaxial candidates centered on the cloud centroid:
the smallest cylinder enclosing every point, and a statistical cylinder
sized from per-axis standard deviations (six sigma tall, three sigma
wide). Intersection = component-wise minimum of radius and height.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegeneratePoints(ValueError):
    """Point cloud with zero variance along every axis."""


@dataclass(frozen=True)
class BoundingCylinder:
    center: np.ndarray  # axis midpoint, world frame
    radius: float
    height: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("radius and height must be positive")

    @property
    def z_bottom(self) -> float:
        return float(self.center[2] - self.height / 2.0)

    @property
    def z_top(self) -> float:
        return float(self.center[2] + self.height / 2.0)


def fit_bounding_cylinder(points: np.ndarray) -> BoundingCylinder:
    """Fit the vertical bounding cylinder of a point cloud.

    Needs at least 4 non-coincident points.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 4:
        raise ValueError(f"need at least 4 points, got {pts.shape[0]}")
    centroid = pts.mean(axis=0)
    sigma = pts.std(axis=0)  # population std
    if np.all(sigma <= 0):
        raise DegeneratePoints("all points coincide")

    horizontal = np.linalg.norm(pts[:, :2] - centroid[:2], axis=1)
    enclosing_radius = float(horizontal.max())
    enclosing_height = float(pts[:, 2].max() - pts[:, 2].min())

    stat_radius = 3.0 * float(max(sigma[0], sigma[1]))
    stat_height = 6.0 * float(sigma[2])

    return BoundingCylinder(
        center=centroid,
        radius=min(enclosing_radius, stat_radius),
        height=min(enclosing_height, stat_height),
    )
