"""Waypoint generators for the three motion modes.

Search flies a boustrophedon over the survey polygon; target refinement
orbits the point-cloud center at the search altitude; close-range mapping
stacks circles around the bounding cylinder so the vertical scan band
sweeps the whole wall bottom-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounding_cylinder import BoundingCylinder


class EmptyPolygon(ValueError):
    """Survey polygon with fewer than three vertices."""


class TargetAboveSearchPlane(ValueError):
    """Orbit center at or above the search altitude."""


class InvalidScanGeometry(ValueError):
    """Upper scanning ray does not descend."""


@dataclass(frozen=True)
class Waypoint:
    position: np.ndarray
    yaw: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)) or not np.isfinite(self.yaw):
            raise ValueError("waypoint must be finite")
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class PlannerConfig:
    cam_depression: float = np.deg2rad(60.0)  # camera axis angle below horizontal
    estimation_view_angle: float = np.deg2rad(45.0)  # target depression on the orbit
    scan_fov: float = np.deg2rad(40.0)  # vertical scanning field of view
    standoff: float = 4.0  # distance kept from the cylinder surface (m)
    search_altitude: float = 30.0
    survey_polygon: tuple = ((0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0))
    lane_spacing: float = 30.0
    waypoint_spacing: float = np.deg2rad(15.0)  # circle discretization

    def __post_init__(self):
        if not 0.0 < self.cam_depression <= np.pi / 2.0:
            raise ValueError("cam_depression must be in (0, pi/2]")
        if not 0.0 < self.scan_fov < 2.0 * self.cam_depression:
            raise ValueError("scan_fov must be in (0, 2 * cam_depression)")
        if self.standoff <= 0:
            raise ValueError("standoff must be positive")
        if not 0.0 < self.estimation_view_angle < np.pi / 2.0:
            raise ValueError("estimation_view_angle must be in (0, pi/2)")


def _lane_span(polygon: np.ndarray, y: float) -> tuple[float, float] | None:
    """x-extent of a horizontal line's intersection with a convex polygon."""
    xs = []
    n = len(polygon)
    for i in range(n):
        (x0, y0), (x1, y1) = polygon[i], polygon[(i + 1) % n]
        if y0 == y1:
            if y0 == y:
                xs.extend([x0, x1])
            continue
        t = (y - y0) / (y1 - y0)
        if 0.0 <= t <= 1.0:
            xs.append(x0 + t * (x1 - x0))
    if not xs:
        return None
    return min(xs), max(xs)


def lawnmower(polygon, lane_spacing: float, altitude: float) -> list[Waypoint]:
    """Serpentine lanes over a convex polygon at a fixed altitude.

    Lane lines run along x; yaw points along the direction of travel.
    """
    poly = np.asarray(polygon, dtype=float).reshape(-1, 2)
    if poly.shape[0] < 3:
        raise EmptyPolygon(f"{poly.shape[0]} vertices")
    if lane_spacing <= 0:
        raise ValueError("lane spacing must be positive")
    y_min, y_max = poly[:, 1].min(), poly[:, 1].max()
    extent = y_max - y_min
    if extent < lane_spacing:
        lane_ys = np.array([(y_min + y_max) / 2.0])
    else:
        n_lanes = int(np.ceil(extent / lane_spacing)) + 1
        lane_ys = np.linspace(y_min, y_max, n_lanes)

    waypoints: list[Waypoint] = []
    for i, y in enumerate(lane_ys):
        span = _lane_span(poly, float(y))
        if span is None:
            continue
        x_lo, x_hi = span
        if i % 2 == 0:
            x_start, x_end, yaw = x_lo, x_hi, 0.0
        else:
            x_start, x_end, yaw = x_hi, x_lo, np.pi
        waypoints.append(Waypoint(np.array([x_start, y, altitude]), yaw))
        if x_hi - x_lo > 1e-9:
            waypoints.append(Waypoint(np.array([x_end, y, altitude]), yaw))
    return waypoints


def _circle_loop(
    center_xy: np.ndarray,
    radius: float,
    altitude: float,
    start_angle: float,
    spacing: float,
) -> list[Waypoint]:
    """Closed circle of waypoints, yaw facing the center."""
    n_seg = max(3, int(round(2.0 * np.pi / spacing)))
    waypoints = []
    for k in range(n_seg + 1):
        angle = start_angle + 2.0 * np.pi * k / n_seg
        pos = np.array(
            [
                center_xy[0] + radius * np.cos(angle),
                center_xy[1] + radius * np.sin(angle),
                altitude,
            ]
        )
        yaw = float(np.arctan2(center_xy[1] - pos[1], center_xy[0] - pos[0]))
        waypoints.append(Waypoint(pos, yaw))
    return waypoints


def estimation_circle(
    center: np.ndarray,
    search_altitude: float,
    view_angle: float,
    current_position: np.ndarray,
    waypoint_spacing: float,
) -> list[Waypoint]:
    """Orbit at the search altitude seeing the center at `view_angle` down.

    Starts at the circle point closest to the current position and closes
    the full loop.
    """
    c = np.asarray(center, dtype=float).reshape(3)
    dz = search_altitude - c[2]
    if dz <= 0:
        raise TargetAboveSearchPlane(f"center z {c[2]} >= altitude {search_altitude}")
    radius = dz / np.tan(view_angle)
    cur = np.asarray(current_position, dtype=float).reshape(3)
    offset = cur[:2] - c[:2]
    start_angle = float(np.arctan2(offset[1], offset[0])) if np.linalg.norm(offset) > 1e-9 else 0.0
    return _circle_loop(c[:2], radius, search_altitude, start_angle, waypoint_spacing)


def mapping_circles(
    cyl: BoundingCylinder,
    cfg: PlannerConfig,
    current_position: np.ndarray | None = None,
) -> list[Waypoint]:
    """Circle stack around the cylinder covering the wall bottom-up.

    The lowest circle puts the lower scan ray on the wall base; circles
    step up by the scan-band height until the upper ray clears the top
    center.
    """
    gamma_l = cfg.cam_depression + cfg.scan_fov / 2.0
    gamma_u = cfg.cam_depression - cfg.scan_fov / 2.0
    if gamma_u <= 0:
        raise InvalidScanGeometry("upper scanning ray must descend")
    r_c = cyl.radius + cfg.standoff
    z = cyl.z_bottom + cfg.standoff * np.tan(gamma_l)
    dz = cfg.standoff * (np.tan(gamma_l) - np.tan(gamma_u))

    if current_position is not None:
        offset = np.asarray(current_position, dtype=float)[:2] - cyl.center[:2]
        start_angle = float(np.arctan2(offset[1], offset[0])) if np.linalg.norm(offset) > 1e-9 else 0.0
    else:
        start_angle = 0.0

    waypoints: list[Waypoint] = []
    while True:
        waypoints.extend(
            _circle_loop(cyl.center[:2], r_c, z, start_angle, cfg.waypoint_spacing)
        )
        if z - r_c * np.tan(gamma_u) >= cyl.z_top:
            break
        z += dz
    return waypoints
