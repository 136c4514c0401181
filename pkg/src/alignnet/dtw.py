"""Dynamic time warping baseline over frontend features.

Classic O(n*m) dynamic program under squared-Euclidean local cost with
steps (1,0), (0,1), (1,1). Since the learned-embedding baseline is out of
scope, the aligner runs on matched-dimension rhythm envelopes derived from
the same frontend features the network consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import MelSpectrogram, onset_envelope
from .keypoints import KeypointSequence, motion_features


@dataclass
class WarpPath:
    """Monotone step path through the (n_x, n_y) cost lattice."""

    steps: list[tuple[int, int]]
    total_cost: float


def dtw(x: np.ndarray, y: np.ndarray) -> WarpPath:
    """Globally optimal alignment of column sequences x (d, n) and y (d, m).

    Local cost is squared Euclidean distance between columns. Traceback ties
    prefer the diagonal step, then (1,0).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] != y.shape[0]:
        raise ValueError(
            f"feature dimensions differ: x has {x.shape[0]}, y has {y.shape[0]}"
        )
    n, m = x.shape[1], y.shape[1]
    if n < 1 or m < 1:
        raise ValueError("dtw needs at least one frame on each side")

    diff = x[:, :, None] - y[:, None, :]
    local = np.einsum("dij,dij->ij", diff, diff)

    acc = np.full((n, m), np.inf)
    move = np.zeros((n, m), dtype=np.int8)  # 0 diag, 1 up (i-1), 2 left (j-1)
    acc[0, 0] = local[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + local[0, j]
        move[0, j] = 2
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + local[i, 0]
        move[i, 0] = 1
        prev_row = acc[i - 1]
        row = acc[i]
        for j in range(1, m):
            # tie order: diagonal, then (1,0), then (0,1)
            best = prev_row[j - 1]
            mv = 0
            if prev_row[j] < best:
                best = prev_row[j]
                mv = 1
            if row[j - 1] < best:
                best = row[j - 1]
                mv = 2
            row[j] = best + local[i, j]
            move[i, j] = mv

    steps = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        mv = move[i, j]
        if mv == 0:
            i, j = i - 1, j - 1
        elif mv == 1:
            i -= 1
        else:
            j -= 1
        steps.append((i, j))
    steps.reverse()
    return WarpPath(steps, float(acc[n - 1, m - 1]))


def path_to_correspondence(path: WarpPath, n_video: int, m_audio: int) -> np.ndarray:
    """Per-video-frame mean matched audio index, normalized to (-1, 1)."""
    sums = np.zeros(n_video)
    counts = np.zeros(n_video)
    for i, j in path.steps:
        sums[i] += j
        counts[i] += 1
    if np.any(counts == 0):
        missing = int(np.where(counts == 0)[0][0])
        raise ValueError(f"path never visits video frame {missing}")
    mean_idx = sums / counts
    return 2.0 * mean_idx / (m_audio - 1) - 1.0


def rhythm_envelopes(kps: KeypointSequence, mel: MelSpectrogram
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Matched 2-D rhythm features for both modalities at video rate.

    Video: mean keypoint speed and mean absolute acceleration per frame.
    Audio: mel column energy and spectral flux, averaged 3 -> 1 down to
    video rate. Each feature row is z-scored so the squared-distance cost
    weighs the modalities comparably.
    """
    mf = motion_features(kps)
    k = kps.num_keypoints
    v = mf.channels[: 2 * k].reshape(k, 2, -1)
    a = mf.channels[2 * k:].reshape(k, 2, -1)
    speed = np.sqrt((v ** 2).sum(axis=1)).mean(axis=0)
    accel = np.sqrt((a ** 2).sum(axis=1)).mean(axis=0)
    video = np.stack([speed, accel])

    n = kps.num_frames
    if mel.n_frames < 3 * n:
        raise ValueError(
            f"mel has {mel.n_frames} frames, need {3 * n} for {n} video frames"
        )
    cols = mel.values[:, : 3 * n]
    energy = cols.mean(axis=0).reshape(n, 3).mean(axis=1)
    flux = onset_envelope(cols).reshape(n, 3).mean(axis=1)
    audio = np.stack([energy, flux])

    def zscore(rows):
        mean = rows.mean(axis=1, keepdims=True)
        std = rows.std(axis=1, keepdims=True)
        std[std < 1e-12] = 1.0
        return (rows - mean) / std

    return zscore(video), zscore(audio)


def baseline_align(kps: KeypointSequence, mel: MelSpectrogram) -> np.ndarray:
    """DTW alignment of a clip against its reference audio.

    Returns a normalized correspondence vector of length n_video, expressed
    in full-rate audio frames (3 per video frame).
    """
    video, audio = rhythm_envelopes(kps, mel)
    path = dtw(video, audio)
    n = kps.num_frames
    corr = path_to_correspondence(path, n, audio.shape[1])
    # re-express video-rate audio indices at the 3x mel rate
    idx = (corr + 1.0) / 2.0 * (audio.shape[1] - 1)
    m = 3 * n
    return 2.0 * (idx * 3.0 + 1.0) / (m - 1) - 1.0
