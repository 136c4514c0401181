"""Keypoint sequences: layouts, cleaning, normalization, and motion features.

Two layouts are built in: ``pose19`` (the 19 body keypoints left after
dropping the 6 foot points from a BODY_25-style detector) and ``lip20``
(face contour points 48-67). Each layout carries its anchor point,
left/right swap pairs, and symmetry classes used by keypoint attention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.signal import savgol_filter


@dataclass(frozen=True)
class KeypointLayout:
    name: str
    keypoint_names: tuple[str, ...]
    anchor: int | None  # anchor keypoint index; None -> per-frame centroid
    lr_pairs: tuple[tuple[int, int], ...]
    symmetry_classes: tuple[tuple[int, ...], ...]

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoint_names)

    def class_of(self) -> np.ndarray:
        """Map keypoint index -> symmetry class index."""
        out = np.full(self.num_keypoints, -1, dtype=np.intp)
        for ci, members in enumerate(self.symmetry_classes):
            for k in members:
                out[k] = ci
        return out


POSE19 = KeypointLayout(
    name="pose19",
    keypoint_names=(
        "nose", "neck",
        "right_shoulder", "right_elbow", "right_wrist",
        "left_shoulder", "left_elbow", "left_wrist",
        "mid_hip",
        "right_hip", "right_knee", "right_ankle",
        "left_hip", "left_knee", "left_ankle",
        "right_eye", "left_eye", "right_ear", "left_ear",
    ),
    anchor=8,  # mid_hip
    lr_pairs=((2, 5), (3, 6), (4, 7), (9, 12), (10, 13), (11, 14), (15, 16), (17, 18)),
    symmetry_classes=(
        (0,), (1,), (8,),
        (2, 5), (3, 6), (4, 7),
        (9, 12), (10, 13), (11, 14),
        (15, 16), (17, 18),
    ),
)

# Mouth contour points 48-67: outer ring 48-59, inner ring 60-67, mirror
# pairs taken about the vertical midline of the mouth.
LIP20 = KeypointLayout(
    name="lip20",
    keypoint_names=tuple(f"lip_{i}" for i in range(48, 68)),
    anchor=None,
    lr_pairs=((0, 6), (1, 5), (2, 4), (7, 11), (8, 10), (12, 16), (13, 15), (17, 19)),
    symmetry_classes=(
        (0, 6), (1, 5), (2, 4), (3,), (7, 11), (8, 10), (9,),
        (12, 16), (13, 15), (14,), (17, 19), (18,),
    ),
)

LAYOUTS: dict[str, KeypointLayout] = {"pose19": POSE19, "lip20": LIP20}


@dataclass
class KeypointSequence:
    """Per-frame 2-D keypoints with confidences at a fixed frame rate."""

    layout: str
    fps: float
    frames: np.ndarray       # (T, K, 2)
    confidence: np.ndarray   # (T, K) in [0, 1]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown keypoint layout {self.layout!r}")
        k = LAYOUTS[self.layout].num_keypoints
        if self.frames.ndim != 3 or self.frames.shape[1:] != (k, 2):
            raise ValueError(
                f"frames must have shape (T, {k}, 2) for layout {self.layout!r}, "
                f"got {self.frames.shape}"
            )
        if self.confidence.shape != self.frames.shape[:2]:
            raise ValueError(
                f"confidence shape {self.confidence.shape} does not match "
                f"frames {self.frames.shape[:2]}"
            )
        if self.num_frames < 2:
            raise ValueError("keypoint sequence needs at least 2 frames")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_keypoints(self) -> int:
        return self.frames.shape[1]

    def layout_def(self) -> KeypointLayout:
        return LAYOUTS[self.layout]


@dataclass
class MotionFeatures:
    """Per-keypoint motion channels, shape (C, T); C = 4K with acceleration."""

    channels: np.ndarray
    fps: float


def _rolling_median_mad(x: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Windowed median and median absolute deviation with edge replication."""
    half = window // 2
    padded = np.pad(x, half, mode="edge")
    wins = np.lib.stride_tricks.sliding_window_view(padded, window)
    med = np.median(wins, axis=1)
    mad = np.median(np.abs(wins - med[:, None]), axis=1)
    return med, mad


def clean_keypoints(raw: KeypointSequence, median_window: int = 5,
                    sg_window: int = 9, sg_order: int = 2,
                    mad_scale: float = 3.0,
                    confidence_floor: float = 0.1) -> KeypointSequence:
    """Outlier removal, gap interpolation, and Savitzky-Golay smoothing.

    A point is marked missing when either coordinate deviates from its
    windowed median by more than ``mad_scale`` times the windowed MAD, or
    when its confidence is below ``confidence_floor``. Missing values are
    linearly interpolated from the nearest valid frames (edges held), then
    every coordinate channel is smoothed with a Savitzky-Golay filter.
    """
    if median_window % 2 == 0 or sg_window % 2 == 0:
        raise ValueError("median_window and sg_window must be odd")
    if sg_order >= sg_window:
        raise ValueError("sg_order must be smaller than sg_window")
    t, k, _ = raw.frames.shape
    if t < sg_window:
        raise ValueError(f"sequence of {t} frames is shorter than sg_window {sg_window}")

    frames = raw.frames.copy()
    missing = raw.confidence < confidence_floor
    for ki in range(k):
        for c in range(2):
            x = frames[:, ki, c]
            med, mad = _rolling_median_mad(x, median_window)
            missing[:, ki] |= np.abs(x - med) > mad_scale * mad

    times = np.arange(t, dtype=np.float64)
    for ki in range(k):
        bad = missing[:, ki]
        if bad.all():
            raise ValueError(f"keypoint {ki} has no valid frame in the whole clip")
        if bad.any():
            good = ~bad
            for c in range(2):
                frames[bad, ki, c] = np.interp(times[bad], times[good], frames[good, ki, c])

    smoothed = savgol_filter(frames, sg_window, sg_order, axis=0, mode="interp")
    return KeypointSequence(raw.layout, raw.fps, smoothed, raw.confidence.copy())


def normalize_pose(kps: KeypointSequence) -> KeypointSequence:
    """Subtract the per-frame anchor and rescale so max |coordinate| is 1.

    The pose anchor is the mid-hip keypoint; lip layouts use the per-frame
    centroid instead. The anchor lands exactly at (0, 0) in every frame.
    """
    layout = kps.layout_def()
    if layout.anchor is not None:
        anchor = kps.frames[:, layout.anchor, :]
    else:
        anchor = kps.frames.mean(axis=1)
    centered = kps.frames - anchor[:, None, :]
    scale = np.abs(centered).max()
    if scale <= 0.0:
        raise ValueError("degenerate clip: all keypoints coincide, scale undefined")
    return KeypointSequence(kps.layout, kps.fps, centered / scale, kps.confidence.copy())


def motion_features(kps: KeypointSequence, include_acceleration: bool = True) -> MotionFeatures:
    """Velocity (and acceleration) channels, shape (4K, T) or (2K, T).

    v[t] = p[t] - p[t-1] with v[0] = v[1]; a[t] = v[t] - v[t-1] with
    a[0] = a[1]. Velocity channels come first, keypoint-major with x then y.
    """
    t, k, _ = kps.frames.shape
    if t < 3:
        raise ValueError(f"motion features need at least 3 frames, got {t}")
    flat = kps.frames.reshape(t, 2 * k)
    v = np.empty_like(flat)
    v[1:] = flat[1:] - flat[:-1]
    v[0] = v[1]
    blocks = [v]
    if include_acceleration:
        a = np.empty_like(v)
        a[1:] = v[1:] - v[:-1]
        a[0] = a[1]
        blocks.append(a)
    return MotionFeatures(np.concatenate(blocks, axis=1).T.copy(), kps.fps)


def position_features(kps: KeypointSequence) -> MotionFeatures:
    """Raw position channels (2K, T), for the no-motion-input ablation."""
    t, k, _ = kps.frames.shape
    return MotionFeatures(kps.frames.reshape(t, 2 * k).T.copy(), kps.fps)


def channel_keypoint_map(num_keypoints: int, num_channels: int) -> np.ndarray:
    """Map each motion/position channel to its keypoint index."""
    per_block = np.repeat(np.arange(num_keypoints, dtype=np.intp), 2)
    blocks = num_channels // (2 * num_keypoints)
    if blocks * 2 * num_keypoints != num_channels:
        raise ValueError(
            f"{num_channels} channels is not a multiple of 2*{num_keypoints} keypoints"
        )
    return np.tile(per_block, blocks)


def hflip(kps: KeypointSequence) -> KeypointSequence:
    """Mirror an anchor-centered sequence: negate x and swap left/right points."""
    layout = kps.layout_def()
    if not layout.lr_pairs:
        raise ValueError(f"layout {kps.layout!r} has no left/right swap table")
    frames = kps.frames.copy()
    conf = kps.confidence.copy()
    frames[:, :, 0] *= -1.0
    for a, b in layout.lr_pairs:
        frames[:, [a, b]] = frames[:, [b, a]]
        conf[:, [a, b]] = conf[:, [b, a]]
    return KeypointSequence(kps.layout, kps.fps, frames, conf)


def write_keypoints(path: str | Path, kps: KeypointSequence) -> None:
    """JSON Lines: a header line, then one record per frame."""
    path = Path(path)
    with path.open("w") as f:
        header = {"layout": kps.layout, "fps": kps.fps,
                  "num_keypoints": kps.num_keypoints}
        f.write(json.dumps(header) + "\n")
        for i in range(kps.num_frames):
            rec = {"frame": i,
                   "points": [[float(x), float(y)] for x, y in kps.frames[i]],
                   "conf": [float(c) for c in kps.confidence[i]]}
            f.write(json.dumps(rec) + "\n")


def read_keypoints(path: str | Path) -> KeypointSequence:
    path = Path(path)
    with path.open() as f:
        lines = f.readlines()
    if not lines:
        raise ValueError(f"{path}: empty keypoint file")

    def fail(line_no: int, msg: str):
        raise ValueError(f"{path}:{line_no}: {msg}")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        fail(1, f"bad header: {e}")
    for field in ("layout", "fps", "num_keypoints"):
        if field not in header:
            fail(1, f"header missing {field!r}")
    k = int(header["num_keypoints"])
    frames, conf = [], []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            fail(line_no, f"bad record: {e}")
        pts = rec.get("points")
        cf = rec.get("conf")
        if pts is None or cf is None:
            fail(line_no, "record needs 'points' and 'conf'")
        if len(pts) != k or len(cf) != k:
            fail(line_no, f"expected {k} keypoints, got {len(pts)} points / {len(cf)} conf")
        frames.append(pts)
        conf.append(cf)
    if len(frames) < 2:
        fail(len(lines), "need at least 2 frames")
    return KeypointSequence(header["layout"], float(header["fps"]),
                            np.asarray(frames), np.asarray(conf))
