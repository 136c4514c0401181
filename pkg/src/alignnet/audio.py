"""Audio frontend: WAV loading, normalized log-mel spectrograms, masking.

The mel scale is the HTK variant (2595 * log10(1 + f/700)) with 128
triangular filters spanning 0 Hz to Nyquist. Frames are Hann-windowed and
zero-centered; the log floor is 1e-6 and each clip is standardized to zero
mean and unit variance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

LOG_FLOOR = 1e-6


@dataclass
class MelSpectrogram:
    values: np.ndarray      # (n_mels, n_frames)
    hop_seconds: float
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"mel values must be 2-D, got shape {self.values.shape}")
        if self.hop_seconds <= 0:
            raise ValueError(f"hop_seconds must be positive, got {self.hop_seconds}")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate: float) -> np.ndarray:
    """Triangular filters (n_mels, fft_size//2 + 1), 0 Hz to Nyquist.

    A low filter narrower than one FFT bin would collect nothing and pin its
    output to the log floor, breaking per-clip standardization invariances;
    such filters fall back to the single FFT bin nearest their center.
    """
    nyquist = sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, bin_freqs.size))
    for b in range(n_mels):
        left, center, right = hz_pts[b], hz_pts[b + 1], hz_pts[b + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        weights = np.maximum(0.0, np.minimum(rising, falling))
        if not weights.any():
            weights[np.argmin(np.abs(bin_freqs - center))] = 1.0
        fb[b] = weights
    return fb


def mel_center_frequencies(n_mels: int, sample_rate: float) -> np.ndarray:
    """Center frequency in Hz of each mel bin."""
    nyquist = sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2)
    return mel_to_hz(mel_pts[1:-1])


def standardize(values: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per clip; all-zero output for constant clips."""
    mean = values.mean()
    std = values.std()
    if std < 1e-12:
        return np.zeros_like(values)
    return (values - mean) / std


def _frames(wav: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    half = fft_size // 2
    padded = np.pad(wav, half)
    n = 1 + (padded.size - fft_size) // hop
    return np.lib.stride_tricks.sliding_window_view(padded, fft_size)[::hop][:n]


def log_mel(wav: np.ndarray, sample_rate: float, hop_seconds: float,
            fft_size: int, n_mels: int = 128, normalize: bool = True) -> MelSpectrogram:
    """Normalized log-mel spectrogram of a mono waveform.

    Frames are centered (zero padding of fft_size//2 on both ends), windowed
    with a periodic Hann window of length fft_size.
    """
    wav = np.asarray(wav, dtype=np.float64)
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate}")
    if fft_size < 1 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    hop = int(round(hop_seconds * sample_rate))
    if hop < 1:
        raise ValueError(f"hop of {hop_seconds}s is under one sample at {sample_rate} Hz")
    if wav.size < fft_size:
        raise ValueError(f"audio of {wav.size} samples is shorter than one "
                         f"window ({fft_size} samples)")
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(fft_size) / fft_size)
    frames = _frames(wav, fft_size, hop)
    spectra = np.abs(np.fft.rfft(frames * window, axis=1))
    mel = mel_filterbank(n_mels, fft_size, sample_rate) @ spectra.T
    values = np.log(mel + LOG_FLOOR)
    if normalize:
        values = standardize(values)
    # store the realized hop (integer samples) in seconds
    return MelSpectrogram(values, hop / sample_rate, normalized=normalize)


def mel_at_video_rate(wav: np.ndarray, sample_rate: float, fps: float,
                      n_video: int, fft_size: int = 512,
                      n_mels: int = 128) -> MelSpectrogram:
    """Log-mel with exactly 3 audio frames per video frame.

    The hop is 1/(3*fps) seconds so the model's first 1/3 temporal factor
    brings audio down to video rate; the frame count is pinned to 3*n_video.
    """
    target = 3 * n_video
    mel = log_mel(wav, sample_rate, 1.0 / (3.0 * fps), fft_size,
                  n_mels=n_mels, normalize=False)
    values = mel.values
    if values.shape[1] < target:
        pad = target - values.shape[1]
        values = np.concatenate([values, np.repeat(values[:, -1:], pad, axis=1)], axis=1)
    else:
        values = values[:, :target]
    return MelSpectrogram(standardize(values), mel.hop_seconds, normalized=True)


def spec_augment(mel: MelSpectrogram, time_masks: int, max_t: int,
                 freq_masks: int, max_f: int, rng: np.random.Generator) -> MelSpectrogram:
    """Random contiguous time/frequency masks filled with the clip mean.

    Mask widths are drawn uniformly from 1..max; the fill value is the mean
    of the input clip, computed before any masking.
    """
    if max_t > mel.n_frames:
        raise ValueError(f"max_t {max_t} exceeds {mel.n_frames} frames")
    if max_f > mel.n_mels:
        raise ValueError(f"max_f {max_f} exceeds {mel.n_mels} mel bins")
    values = mel.values.copy()
    fill = values.mean()
    for _ in range(time_masks):
        if max_t < 1:
            break
        w = int(rng.integers(1, max_t + 1))
        start = int(rng.integers(0, mel.n_frames - w + 1))
        values[:, start:start + w] = fill
    for _ in range(freq_masks):
        if max_f < 1:
            break
        w = int(rng.integers(1, max_f + 1))
        start = int(rng.integers(0, mel.n_mels - w + 1))
        values[start:start + w, :] = fill
    return MelSpectrogram(values, mel.hop_seconds, normalized=mel.normalized)


def onset_envelope(values: np.ndarray) -> np.ndarray:
    """Spectral flux: per-frame sum of positive mel increments (first frame 0)."""
    flux = np.zeros(values.shape[1])
    if values.shape[1] > 1:
        diff = values[:, 1:] - values[:, :-1]
        flux[1:] = np.maximum(diff, 0.0).sum(axis=0)
    return flux


def load_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a PCM WAV as float64 in [-1, 1]; stereo is averaged to mono."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        wav = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        wav = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        wav = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}")
    if wav.ndim == 2:
        wav = wav.mean(axis=1)
    return wav, int(rate)


def write_wav(path: str | Path, wav: np.ndarray, sample_rate: int) -> None:
    """Write mono float audio as 16-bit PCM."""
    clipped = np.clip(np.asarray(wav, dtype=np.float64), -1.0, 32767.0 / 32768.0)
    wavfile.write(str(path), sample_rate, (clipped * 32768.0).astype(np.int16))


MEL_MAGIC = b"MELS"


def write_mel(path: str | Path, mel: MelSpectrogram) -> None:
    """Binary cache: magic, u32 n_mels, u32 n_frames, f64 hop, f32 values."""
    with Path(path).open("wb") as f:
        f.write(MEL_MAGIC)
        f.write(struct.pack("<IId", mel.n_mels, mel.n_frames, mel.hop_seconds))
        f.write(mel.values.astype("<f4").tobytes())


def read_mel(path: str | Path) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    if raw[:4] != MEL_MAGIC:
        raise ValueError(f"{path}: not a mel cache file (bad magic {raw[:4]!r})")
    n_mels, n_frames, hop = struct.unpack("<IId", raw[4:20])
    values = np.frombuffer(raw, dtype="<f4", count=n_mels * n_frames, offset=20)
    values = values.reshape(n_mels, n_frames).astype(np.float64)
    normalized = abs(values.mean()) < 1e-6 and abs(values.var() - 1.0) < 1e-3
    return MelSpectrogram(values, hop, normalized=normalized)
