"""Multi-box tracker in the SORT style.

Tracks axis-aligned boxes with a constant-velocity Kalman filter over
(center u, center v, area, aspect ratio), associates detections by IoU
with the Hungarian algorithm, and gates what it publishes downstream:
a track is registered only after `min_hits` consecutive detections and
deleted after `max_misses` consecutive missed frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .detector import Detection


def iou(a, b) -> float:
    """Intersection over union of two (u_min, v_min, u_max, v_max) boxes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def hungarian_assign(cost: np.ndarray, maximize: bool = False):
    """Optimal one-to-one assignment.

    Returns (pairs, unmatched_rows, unmatched_cols) where pairs is a list
    of (row, col) tuples.
    """
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    if cost.size == 0:
        return [], list(range(cost.shape[0])), list(range(cost.shape[1]))
    rows, cols = linear_sum_assignment(cost, maximize=maximize)
    pairs = list(zip(rows.tolist(), cols.tolist()))
    unmatched_rows = [r for r in range(cost.shape[0]) if r not in set(rows.tolist())]
    unmatched_cols = [c for c in range(cost.shape[1]) if c not in set(cols.tolist())]
    return pairs, unmatched_rows, unmatched_cols


@dataclass(frozen=True)
class TrackerConfig:
    min_hits: int = 3  # consecutive detections before a track registers
    max_misses: int = 5  # consecutive missed frames before deletion
    iou_min: float = 0.3
    process_noise_scale: float = 1.0
    measurement_noise_scale: float = 1.0

    def __post_init__(self):
        if self.min_hits < 1 or self.max_misses < 1:
            raise ValueError("min_hits and max_misses must be >= 1")
        if not 0.0 < self.iou_min < 1.0:
            raise ValueError("iou_min must be in (0, 1)")


@dataclass(frozen=True)
class TrackedBox:
    """Immutable snapshot of a registered track."""

    track_id: int
    bbox: np.ndarray
    hit_streak: int
    miss_streak: int


def _bbox_to_z(bbox: np.ndarray) -> np.ndarray:
    w = bbox[2] - bbox[0]
    h = bbox[3] - bbox[1]
    return np.array([bbox[0] + w / 2.0, bbox[1] + h / 2.0, w * h, w / h])


def _x_to_bbox(x: np.ndarray) -> np.ndarray:
    s = max(x[2], 1e-9)
    r = max(x[3], 1e-9)
    w = np.sqrt(s * r)
    h = s / w
    return np.array([x[0] - w / 2.0, x[1] - h / 2.0, x[0] + w / 2.0, x[1] + h / 2.0])


class _KalmanBoxState:
    """Constant-velocity filter over (u, v, s, r, du, dv, ds)."""

    F = np.eye(7)
    F[0, 4] = F[1, 5] = F[2, 6] = 1.0
    H = np.zeros((4, 7))
    H[:4, :4] = np.eye(4)

    def __init__(self, bbox: np.ndarray, cfg: TrackerConfig):
        self.x = np.zeros(7)
        self.x[:4] = _bbox_to_z(bbox)
        self.P = np.diag([10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4])
        self.Q = cfg.process_noise_scale * np.diag(
            [1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4]
        )
        self.R = cfg.measurement_noise_scale * np.diag([1.0, 1.0, 10.0, 10.0])

    def predict(self):
        if self.x[2] + self.x[6] <= 0:  # keep predicted area positive
            self.x[6] = 0.0
        self.x = self.F @ self.x
        self.P = self.F @ self.P @ self.F.T + self.Q

    def update(self, bbox: np.ndarray):
        z = _bbox_to_z(bbox)
        y = z - self.H @ self.x
        s = self.H @ self.P @ self.H.T + self.R
        k = self.P @ self.H.T @ np.linalg.inv(s)
        self.x = self.x + k @ y
        self.P = (np.eye(7) - k @ self.H) @ self.P

    def bbox(self) -> np.ndarray:
        return _x_to_bbox(self.x)


class _Track:
    def __init__(self, track_id: int, bbox: np.ndarray, cfg: TrackerConfig):
        self.track_id = track_id
        self.kf = _KalmanBoxState(bbox, cfg)
        self.hit_streak = 1
        self.miss_streak = 0
        self.registered = False

    def snapshot(self) -> TrackedBox:
        return TrackedBox(
            track_id=self.track_id,
            bbox=self.kf.bbox(),
            hit_streak=self.hit_streak,
            miss_streak=self.miss_streak,
        )


class BoxTracker:
    """Stateful per-frame tracker; call step() once per frame in order."""

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self._tracks: list[_Track] = []
        self._next_id = 1

    @property
    def track_count(self) -> int:
        return len(self._tracks)

    def step(self, detections: list[Detection]) -> list[TrackedBox]:
        """Predict, associate, update; returns registered tracks only."""
        cfg = self.cfg
        for track in self._tracks:
            track.kf.predict()

        det_boxes = [d.bbox for d in detections]
        if self._tracks and det_boxes:
            iou_matrix = np.array(
                [[iou(db, t.kf.bbox()) for t in self._tracks] for db in det_boxes]
            )
            pairs, unmatched_dets, _ = hungarian_assign(iou_matrix, maximize=True)
        else:
            iou_matrix = np.zeros((len(det_boxes), len(self._tracks)))
            pairs = []
            unmatched_dets = list(range(len(det_boxes)))

        matched_track_idx = set()
        for d_idx, t_idx in pairs:
            if iou_matrix[d_idx, t_idx] < cfg.iou_min:
                unmatched_dets.append(d_idx)
                continue
            track = self._tracks[t_idx]
            track.kf.update(det_boxes[d_idx])
            track.hit_streak += 1
            track.miss_streak = 0
            if track.hit_streak >= cfg.min_hits:
                track.registered = True
            matched_track_idx.add(t_idx)

        for t_idx, track in enumerate(self._tracks):
            if t_idx not in matched_track_idx:
                track.miss_streak += 1
                track.hit_streak = 0

        for d_idx in sorted(unmatched_dets):
            track = _Track(self._next_id, det_boxes[d_idx], cfg)
            self._next_id += 1
            if cfg.min_hits <= 1:
                track.registered = True
            self._tracks.append(track)

        self._tracks = [t for t in self._tracks if t.miss_streak < cfg.max_misses]
        # publish only tracks that matched a detection this frame; a track
        # coasting through misses keeps its identity but stays silent
        return [t.snapshot() for t in self._tracks if t.registered and t.miss_streak == 0]
