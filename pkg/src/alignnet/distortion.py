"""Monotonic temporal distortions with exactly computable ground truth.

A warp is a piecewise-linear, strictly increasing map of [0,1] onto [0,1]
whose segment slopes stay within configured bounds. Applying it to a clip
resamples frames by linear interpolation; the matching ground-truth
correspondence (normalized source position per distorted frame) falls out
in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .keypoints import KeypointSequence


@dataclass
class WarpFunction:
    """Piecewise-linear monotonic time remapping on [0, 1].

    ``control_points`` is an (P, 2) array of (u, s) pairs: u is distorted
    time, s is source time; both endpoints are pinned to (0,0) and (1,1).
    """

    control_points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.control_points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"control points must be (P>=2, 2), got {pts.shape}")
        if not (pts[0] == 0.0).all() or not (pts[-1] == 1.0).all():
            raise ValueError("warp endpoints must be (0,0) and (1,1)")
        if np.any(np.diff(pts[:, 0]) <= 0) or np.any(np.diff(pts[:, 1]) <= 0):
            raise ValueError("warp control points must be strictly increasing in u and s")
        self.control_points = pts

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return np.interp(u, self.control_points[:, 0], self.control_points[:, 1])

    def slopes(self) -> np.ndarray:
        du = np.diff(self.control_points[:, 0])
        ds = np.diff(self.control_points[:, 1])
        return ds / du

    def inverse(self) -> "WarpFunction":
        return WarpFunction(self.control_points[:, ::-1].copy())

    def to_json(self) -> str:
        return json.dumps({"control_points": self.control_points.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "WarpFunction":
        return cls(np.asarray(json.loads(text)["control_points"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "WarpFunction":
        return cls.from_json(Path(path).read_text())


@dataclass
class GroundTruthCorrespondence:
    """Exact per-frame normalized source-audio positions, plus level copies."""

    values: np.ndarray                 # (n_video,), strictly increasing in (-1,1] ends at +-1
    level_values: list[np.ndarray]     # window-averaged copies at pyramid lengths

    def denormalized(self, m_audio: int) -> np.ndarray:
        return (self.values + 1.0) / 2.0 * (m_audio - 1)


def identity_warp() -> WarpFunction:
    return WarpFunction(np.array([[0.0, 0.0], [1.0, 1.0]]))


def sample_warp(rng: np.random.Generator, n_segments: int,
                slope_min: float = 0.5, slope_max: float = 2.0) -> WarpFunction:
    """Draw a random monotonic piecewise-linear warp with bounded slopes.

    Interior s-knots are sampled sequentially inside the interval that keeps
    both the current segment's slope and the remaining average slope within
    [slope_min, slope_max], so the draw never needs rejection.
    """
    if not 1 <= n_segments <= 16:
        raise ValueError(f"n_segments must be in [1, 16], got {n_segments}")
    if not 0.0 < slope_min <= 1.0 <= slope_max:
        raise ValueError(
            f"need 0 < slope_min <= 1 <= slope_max for a feasible warp, "
            f"got [{slope_min}, {slope_max}]"
        )
    if n_segments == 1 or slope_min == slope_max:
        return identity_warp()

    # u-knots: sorted uniforms, retried until segments are non-degenerate
    for _ in range(100):
        u = np.sort(rng.uniform(size=n_segments - 1))
        u = np.concatenate([[0.0], u, [1.0]])
        if np.diff(u).min() > 1e-3:
            break
    else:
        u = np.linspace(0.0, 1.0, n_segments + 1)

    s = np.empty_like(u)
    s[0], s[-1] = 0.0, 1.0
    for i in range(1, n_segments):
        du = u[i] - u[i - 1]
        rest = 1.0 - u[i]
        lo = max(s[i - 1] + slope_min * du, 1.0 - slope_max * rest)
        hi = min(s[i - 1] + slope_max * du, 1.0 - slope_min * rest)
        s[i] = rng.uniform(lo, hi)
    return WarpFunction(np.stack([u, s], axis=1))


def apply_warp(kps: KeypointSequence, w: WarpFunction, out_frames: int) -> KeypointSequence:
    """Resample a keypoint sequence through a warp by linear interpolation.

    Output frame i samples the source at fractional index
    w(i/(out_frames-1)) * (T-1); confidence is the min of the two
    neighboring source frames.
    """
    if out_frames < 2:
        raise ValueError(f"out_frames must be >= 2, got {out_frames}")
    t = kps.num_frames
    u = np.arange(out_frames, dtype=np.float64) / (out_frames - 1)
    pos = w(u) * (t - 1)
    i0 = np.floor(pos).astype(np.intp)
    i0 = np.minimum(i0, t - 2)
    frac = pos - i0
    frames = (1.0 - frac)[:, None, None] * kps.frames[i0] \
        + frac[:, None, None] * kps.frames[i0 + 1]
    conf = np.minimum(kps.confidence[i0], kps.confidence[i0 + 1])
    return KeypointSequence(kps.layout, kps.fps, frames, conf)


def downsample_correspondence(values: np.ndarray, out_len: int) -> np.ndarray:
    """Average within contiguous windows, mirroring pyramid strides."""
    n = values.size
    if out_len > n:
        raise ValueError(f"cannot downsample length {n} to {out_len}")
    bounds = (np.arange(out_len + 1) * n) // out_len
    return np.asarray([values[bounds[j]:bounds[j + 1]].mean() for j in range(out_len)])


def warp_to_correspondence(w: WarpFunction, n_video: int, m_audio: int,
                           level_lengths: list[int] | None = None
                           ) -> GroundTruthCorrespondence:
    """Ground-truth normalized audio position for each distorted frame.

    value[i] = 2 * w(i/(n-1)) - 1; the audio length cancels out of the
    normalization but is kept in the signature as the denormalization
    context. Level copies are window-averaged to the requested lengths.
    """
    if n_video < 2 or m_audio < 2:
        raise ValueError(f"need n_video, m_audio >= 2, got {n_video}, {m_audio}")
    u = np.arange(n_video, dtype=np.float64) / (n_video - 1)
    values = 2.0 * w(u) - 1.0
    levels = [downsample_correspondence(values, ln) for ln in (level_lengths or [])]
    return GroundTruthCorrespondence(values, levels)
