"""Alignment quality metrics and correspondence-driven resampling.

Sign convention: positive error means the reconstructed audio event happens
later than the truth (audio lag, the 125 ms side of the broadcast window);
both window boundaries are inclusive.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .keypoints import KeypointSequence

ITU_LAG_MS = 125.0
ITU_LEAD_MS = 45.0


@dataclass
class AlignmentReport:
    afe_frames: float
    itu_accuracy_pct: float
    fps: float
    afe_video_frames: float = 0.0
    per_keypoint: list[tuple[str, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.itu_accuracy_pct <= 100.0:
            raise ValueError(f"accuracy {self.itu_accuracy_pct} outside [0, 100]")
        if self.afe_frames < 0:
            raise ValueError(f"AFE must be non-negative, got {self.afe_frames}")


def denormalize(values: np.ndarray, m_audio: int) -> np.ndarray:
    """Map normalized (-1,1) positions to fractional audio frame indices."""
    return (np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * (m_audio - 1)


def afe(pred: np.ndarray, gt: np.ndarray, m_audio: int) -> float:
    """Average frame error: mean |predicted - true| audio frame index."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    return float(np.abs(denormalize(pred, m_audio) - denormalize(gt, m_audio)).mean())


def itu_accuracy(pred: np.ndarray, gt: np.ndarray, m_audio: int,
                 audio_fps: float) -> float:
    """Percent of frames inside the broadcast sync window.

    A frame is accepted iff its error lies in [-45 ms, +125 ms] (inclusive),
    positive meaning audio lag. The per-frame millisecond error is computed
    as frame_difference * (1000/audio_fps) so exact-boundary inputs stay
    exact in floating point.
    """
    if audio_fps <= 0:
        raise ValueError(f"audio_fps must be positive, got {audio_fps}")
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    err_ms = (denormalize(pred, m_audio) - denormalize(gt, m_audio)) * (1000.0 / audio_fps)
    ok = (err_ms >= -ITU_LEAD_MS) & (err_ms <= ITU_LAG_MS)
    return float(100.0 * ok.mean())


def velocity(frames: np.ndarray) -> np.ndarray:
    """Per-frame keypoint velocity, first frame copied from the second."""
    v = np.empty_like(frames)
    v[1:] = frames[1:] - frames[:-1]
    v[0] = v[1]
    return v


def per_keypoint_error(aligned: KeypointSequence, reference: KeypointSequence
                       ) -> list[tuple[str, float, float]]:
    """Mean L1 location and velocity error for every keypoint.

    Both sequences must share layout and length and should already be
    anchor-normalized. Velocities of the pair are jointly rescaled to
    max-abs 1 before comparison.
    """
    if aligned.layout != reference.layout:
        raise ValueError(
            f"layout mismatch: {aligned.layout!r} vs {reference.layout!r}"
        )
    if aligned.num_frames != reference.num_frames:
        raise ValueError(
            f"length mismatch: {aligned.num_frames} vs {reference.num_frames} frames"
        )
    va = velocity(aligned.frames)
    vr = velocity(reference.frames)
    vscale = max(np.abs(va).max(), np.abs(vr).max())
    if vscale > 0:
        va = va / vscale
        vr = vr / vscale
    names = aligned.layout_def().keypoint_names
    out = []
    for k, name in enumerate(names):
        loc = np.abs(aligned.frames[:, k] - reference.frames[:, k]).sum(axis=1).mean()
        vel = np.abs(va[:, k] - vr[:, k]).sum(axis=1).mean()
        out.append((name, float(loc), float(vel)))
    return out


def apply_correspondence(seq: KeypointSequence, corr: np.ndarray,
                         target_len: int) -> KeypointSequence:
    """Resample a sequence at the source positions named by a correspondence.

    Output frame i interpolates ``seq`` at the source-frame position encoded
    by corr (resampled to target_len if needed): (v+1)/2 * (T_src - 1).
    Non-monotone correspondences are rejected.
    """
    corr = np.asarray(corr, dtype=np.float64)
    drops = np.where(np.diff(corr) < 0)[0]
    if drops.size:
        i = int(drops[0])
        raise ValueError(
            f"correspondence not monotone: value drops from {corr[i]:.6f} to "
            f"{corr[i + 1]:.6f} at frame {i} -> {i + 1}"
        )
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    if corr.size != target_len:
        grid = np.linspace(0.0, corr.size - 1.0, target_len)
        corr = np.interp(grid, np.arange(corr.size), corr)
    t = seq.num_frames
    pos = np.clip((corr + 1.0) / 2.0 * (t - 1), 0.0, t - 1.0)
    i0 = np.minimum(np.floor(pos).astype(np.intp), t - 2)
    frac = pos - i0
    frames = (1.0 - frac)[:, None, None] * seq.frames[i0] \
        + frac[:, None, None] * seq.frames[i0 + 1]
    conf = np.minimum(seq.confidence[i0], seq.confidence[i0 + 1])
    return KeypointSequence(seq.layout, seq.fps, frames, conf)


def invert_correspondence(corr: np.ndarray, n_out: int | None = None) -> np.ndarray:
    """Invert a monotone correspondence curve by swapping its graph axes.

    Treats corr as samples of s = w(u) on the uniform u grid and returns
    2*w^{-1}(u) - 1 sampled on a uniform grid of length n_out. A running
    max is applied first so slightly non-monotone model outputs invert
    cleanly.
    """
    corr = np.asarray(corr, dtype=np.float64)
    n = corr.size
    if n_out is None:
        n_out = n
    s = np.maximum.accumulate((corr + 1.0) / 2.0)
    u = np.arange(n, dtype=np.float64) / (n - 1)
    grid = np.linspace(0.0, 1.0, n_out)
    inv = np.interp(grid, s, u, left=0.0, right=1.0)
    return 2.0 * inv - 1.0


def report_to_json(report: AlignmentReport) -> str:
    return json.dumps({
        "afe_audio_frames": report.afe_frames,
        "afe_video_frames": report.afe_video_frames,
        "itu_accuracy_pct": report.itu_accuracy_pct,
        "fps": report.fps,
        "per_keypoint": [
            {"keypoint": n, "location_l1": l, "velocity_l1": v}
            for n, l, v in report.per_keypoint
        ],
    }, indent=2)


def write_report_csv(path: str | Path, rows: list[dict]) -> None:
    """Rows of clip-level results with stable column order."""
    if not rows:
        raise ValueError("no rows to write")
    keys = list(rows[0].keys())
    with Path(path).open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
