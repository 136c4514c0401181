"""The dense audio-visual correspondence network.

Coarse-to-fine estimation over two learnable 1-D conv feature pyramids:
keypoint (spatial) attention reweights motion channels with one shared
parameter per symmetry class; temporal attention gates audio frames; at
each level the reference audio features are warped by the upsampled coarser
estimate, a column-normalized affinity map is built from scaled dot
products, and a small conv head emits a residual that refines the
correspondence inside (-1, 1) via tanh.

Design notes baked in here:
- affinity normalization is a softmax over the audio axis with 1/sqrt(C)
  temperature (a raw dot-product sum can be negative and unstable);
- the monotonicity hinge uses a one-audio-frame margin in normalized
  units, kappa * 2/(m_l - 1), scaled by the configurable kappa;
- prediction heads see the pooled affinity columns plus the upsampled
  coarser estimate plus a fixed coordinate ramp; a stride-respecting conv
  cannot otherwise locate a column relative to the warped diagonal;
- the regression loss averages per level, the monotonicity loss sums.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .keypoints import (
    LAYOUTS,
    KeypointSequence,
    channel_keypoint_map,
    motion_features,
    position_features,
)
from .distortion import GroundTruthCorrespondence
from .optim import ParamStore
from .tensor import Tensor


ABLATION_FLAGS = ("FP", "MI", "SA", "KA", "TA")


@dataclass
class AlignNetConfig:
    layout: str = "pose19"
    channels: tuple[int, ...] = (128, 64, 32, 16)
    factors: tuple[float, ...] = (1 / 3, 1 / 2, 1 / 2, 1 / 2)
    kernel_size: int = 3
    n_mels: int = 128
    head_pool: int = 32
    head_hidden: int = 16
    ta_hidden: int = 8
    leaky_slope: float = 0.1
    conv_bias: bool = True
    kappa: float = 0.5
    mu: float = 0.1
    level_weights: tuple[float, ...] | None = None
    include_acceleration: bool = True
    ablation: dict[str, bool] = field(
        default_factory=lambda: dict.fromkeys(ABLATION_FLAGS, True))

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.factors = tuple(self.factors)
        if len(self.channels) != len(self.factors):
            raise ValueError(
                f"{len(self.channels)} channel specs vs {len(self.factors)} factors"
            )
        for f in self.factors:
            if not 0.0 < f <= 1.0:
                raise ValueError(f"temporal factors must be in (0, 1], got {f}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        unknown = set(self.ablation) - set(ABLATION_FLAGS)
        if unknown:
            raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
        for flag in ABLATION_FLAGS:
            self.ablation.setdefault(flag, True)
        if self.level_weights is not None:
            self.level_weights = tuple(self.level_weights)
            if any(w < 0 for w in self.level_weights):
                raise ValueError("level weights must be non-negative")
        if self.kappa < 0 or self.mu < 0:
            raise ValueError("kappa and mu must be non-negative")

    # -- derived structure ------------------------------------------------
    @property
    def flags(self) -> dict[str, bool]:
        return {k: bool(self.ablation[k]) for k in ABLATION_FLAGS}

    @property
    def num_levels(self) -> int:
        return len(self.channels) if self.ablation["FP"] else 1

    @property
    def strides(self) -> tuple[int, ...]:
        out = []
        for f in self.factors[: self.num_levels]:
            s = round(1.0 / f)
            if abs(1.0 / s - f) > 1e-9:
                raise ValueError(f"factor {f} is not the inverse of an integer stride")
            out.append(s)
        return tuple(out)

    @property
    def level_channels(self) -> tuple[int, ...]:
        return self.channels[: self.num_levels]

    @property
    def num_keypoints(self) -> int:
        return LAYOUTS[self.layout].num_keypoints

    @property
    def video_in_channels(self) -> int:
        k = self.num_keypoints
        if not self.ablation["MI"]:
            return 2 * k
        return 4 * k if self.include_acceleration else 2 * k

    def level_lengths(self, length: int) -> list[int]:
        """ceil chain of per-level lengths, finest (level 1) first."""
        out = []
        for s in self.strides:
            length = -(-length // s)
            out.append(length)
        return out

    def min_input_length(self) -> int:
        return int(np.prod(self.strides))

    def weight_for(self, level: int) -> float:
        """Loss weight for level index 0 (full resolution) .. num_levels."""
        if self.level_weights is None:
            return 1.0
        return self.level_weights[level]

    # -- serialization -----------------------------------------------------
    def to_json(self) -> str:
        d = asdict(self)
        d["ablation"] = self.flags
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AlignNetConfig":
        d = json.loads(text)
        for key in ("channels", "factors"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        if d.get("level_weights") is not None:
            d["level_weights"] = tuple(d["level_weights"])
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "AlignNetConfig":
        return cls.from_json(Path(path).read_text())


@dataclass
class Correspondence:
    """Per-level predictions plus the upsampled full-resolution output."""

    final: Tensor                  # (1, n)
    level_preds: list[Tensor]      # finest (level 1) .. coarsest
    video_lengths: list[int]
    audio_lengths: list[int]
    n_video: int
    m_audio: int
    gates: Tensor | None = None
    affinities: list[np.ndarray] = field(default_factory=list)

    def final_values(self) -> np.ndarray:
        return self.final.data.ravel().copy()


def video_input_channels(kps: KeypointSequence, cfg: AlignNetConfig) -> np.ndarray:
    """Model-ready video channels per the motion-input flag."""
    if cfg.ablation["MI"]:
        return motion_features(kps, include_acceleration=cfg.include_acceleration).channels
    return position_features(kps).channels


def keypoint_attention(features: Tensor, weights: Tensor, layout_name: str) -> Tensor:
    """Reweight per-keypoint channels with symmetry-tied softmax attention.

    ``weights`` holds one raw parameter per symmetry class; after expansion
    to all K keypoints a softmax over keypoints is scaled by K so uniform
    attention is the identity.
    """
    layout = LAYOUTS[layout_name]
    if not layout.symmetry_classes:
        raise ValueError(f"layout {layout_name!r} has no symmetry table")
    k = layout.num_keypoints
    if weights.shape != (len(layout.symmetry_classes),):
        raise T.ShapeError(
            f"expected {len(layout.symmetry_classes)} class weights, got {weights.shape}"
        )
    expanded = T.index_select(weights, layout.class_of())        # (K,)
    attn = T.mul(T.softmax(expanded, axis=0), float(k))          # (K,)
    chan_map = channel_keypoint_map(k, features.shape[0])
    per_channel = T.index_select(attn, chan_map)                 # (C,)
    return T.mul(features, T.reshape(per_channel, (features.shape[0], 1)))


def uniform_grid(length: int) -> np.ndarray:
    if length == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, length)


def upsample_linear(values: Tensor, target_len: int) -> Tensor:
    """Align-corners linear upsampling of (C, L) to (C, target_len)."""
    src = values.shape[1]
    positions = np.linspace(0.0, src - 1.0, target_len) if src > 1 \
        else np.zeros(target_len)
    return T.interp_gather(values, Tensor(positions))


def warp_features(audio_l: Tensor, corr: Tensor, target_len: int) -> Tensor:
    """Warp audio features by a correspondence estimate (the warping layer).

    ``corr`` (1, L) is upsampled to ``target_len`` and each normalized value
    v is mapped to fractional audio index (v+1)/2 * (m_l - 1); gradients flow
    through both the features and the positions.
    """
    m_l = audio_l.shape[1]
    up = upsample_linear(corr, target_len) if corr.shape[1] != target_len else corr
    positions = T.mul(T.add(up, 1.0), 0.5 * (m_l - 1))
    return T.interp_gather(audio_l, T.reshape(positions, (target_len,)))


def affinity(video_l: Tensor, audio_l: Tensor) -> Tensor:
    """Column-normalized similarity map (audio rows, video columns).

    Raw scores are channel dot products scaled by 1/sqrt(C); a softmax over
    the audio axis makes every video column a distribution.
    """
    if video_l.shape[0] != audio_l.shape[0]:
        raise T.ShapeError(
            f"channel mismatch: video {video_l.shape} vs audio {audio_l.shape}"
        )
    c = video_l.shape[0]
    raw = T.mul(T.matmul(T.transpose(audio_l), video_l), 1.0 / np.sqrt(c))
    return T.softmax(raw, axis=0)


def _pool_matrix(rows: int, pooled: int) -> np.ndarray:
    """Adaptive-average-pooling matrix (pooled, rows)."""
    mat = np.zeros((pooled, rows))
    for j in range(pooled):
        start = (j * rows) // pooled
        end = -((-(j + 1) * rows) // pooled)
        mat[j, start:end] = 1.0 / (end - start)
    return mat


class AlignNet:
    """Network parameters plus the forward pass and training losses."""

    def __init__(self, cfg: AlignNetConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.store = ParamStore()
        rng = rng or np.random.default_rng(0)
        k = cfg.kernel_size

        def conv_init(name, c_out, c_in, ksize, zero=False):
            if zero:
                w = np.zeros((c_out, c_in, ksize))
                b = np.zeros(c_out)
            else:
                bound = 1.0 / np.sqrt(c_in * ksize)
                w = rng.uniform(-bound, bound, size=(c_out, c_in, ksize))
                b = rng.uniform(-bound, bound, size=c_out)
            self.store.add(f"{name}.weight", w)
            if cfg.conv_bias:
                self.store.add(f"{name}.bias", b)

        if cfg.ablation["KA"]:
            layout = LAYOUTS[cfg.layout]
            self.store.add("ka.weights", np.zeros(len(layout.symmetry_classes)))
        if cfg.ablation["TA"]:
            conv_init("ta.conv1", cfg.ta_hidden, cfg.n_mels, k)
            conv_init("ta.conv2", 1, cfg.ta_hidden, k, zero=True)

        c_prev_v, c_prev_a = cfg.video_in_channels, cfg.n_mels
        for lvl, c_out in enumerate(cfg.level_channels, start=1):
            conv_init(f"video.pyr{lvl}", c_out, c_prev_v, k)
            conv_init(f"audio.pyr{lvl}", c_out, c_prev_a, k)
            c_prev_v = c_prev_a = c_out
            conv_init(f"head{lvl}.conv1", cfg.head_hidden, cfg.head_pool + 2, k)
            conv_init(f"head{lvl}.conv2", 1, cfg.head_hidden, k, zero=True)

    # -- submodules --------------------------------------------------------
    def _conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        bias = self.store[f"{name}.bias"] if f"{name}.bias" in self.store else None
        pad = self.cfg.kernel_size // 2
        return T.conv1d(x, self.store[f"{name}.weight"], bias,
                        stride=stride, padding=pad)

    def temporal_attention(self, audio: Tensor) -> tuple[Tensor, Tensor]:
        """Gate audio frames; gate 0.5 is the identity under the 2x scaling."""
        h = T.leaky_relu(self._conv("ta.conv1", audio), self.cfg.leaky_slope)
        gates = T.sigmoid(self._conv("ta.conv2", h))          # (1, T)
        reweighted = T.mul(audio, T.mul(gates, 2.0))
        return reweighted, gates

    def build_pyramid(self, x: Tensor, branch: str) -> list[Tensor]:
        """Strided conv chain; level lengths follow ceil(T/stride)."""
        if x.shape[1] < self.cfg.min_input_length():
            raise ValueError(
                f"{branch} input of {x.shape[1]} frames is too short for "
                f"{self.cfg.num_levels} levels (need >= {self.cfg.min_input_length()})"
            )
        levels = []
        for lvl, stride in enumerate(self.cfg.strides, start=1):
            x = T.leaky_relu(self._conv(f"{branch}.pyr{lvl}", x, stride=stride),
                             self.cfg.leaky_slope)
            levels.append(x)
        return levels

    def predict_level(self, lvl: int, aff: Tensor, prev: Tensor) -> Tensor:
        """Residual head: tanh(prev + conv(pooled affinity, prev, coord))."""
        n_l = aff.shape[1]
        pooled = T.matmul(Tensor(_pool_matrix(aff.shape[0], self.cfg.head_pool)), aff)
        coord = Tensor(uniform_grid(n_l).reshape(1, n_l))
        h = T.concat([pooled, prev, coord], axis=0)
        h = T.leaky_relu(self._conv(f"head{lvl}.conv1", h), self.cfg.leaky_slope)
        residual = self._conv(f"head{lvl}.conv2", h)
        return T.tanh(T.add(prev, residual))

    # -- forward -----------------------------------------------------------
    def forward(self, video_channels: np.ndarray, mel_values: np.ndarray,
                collect_affinities: bool = False) -> Correspondence:
        if video_channels.shape[0] != self.cfg.video_in_channels:
            raise T.ShapeError(
                f"video input has {video_channels.shape[0]} channels, "
                f"config expects {self.cfg.video_in_channels}"
            )
        if mel_values.shape[0] != self.cfg.n_mels:
            raise T.ShapeError(
                f"audio input has {mel_values.shape[0]} mel bins, "
                f"config expects {self.cfg.n_mels}"
            )
        n, m = video_channels.shape[1], mel_values.shape[1]
        video = Tensor(video_channels)
        audio = Tensor(mel_values)

        gates = None
        if self.cfg.ablation["KA"]:
            video = keypoint_attention(video, self.store["ka.weights"], self.cfg.layout)
        if self.cfg.ablation["TA"]:
            audio, gates = self.temporal_attention(audio)

        vpyr = self.build_pyramid(video, "video")
        apyr = self.build_pyramid(audio, "audio")
        n_lengths = [t.shape[1] for t in vpyr]
        m_lengths = [t.shape[1] for t in apyr]

        preds: list[Tensor | None] = [None] * len(vpyr)
        affinities: list[np.ndarray | None] = [None] * len(vpyr)
        corr = None
        for idx in range(len(vpyr) - 1, -1, -1):
            lvl = idx + 1
            n_l = n_lengths[idx]
            if corr is None:
                prev = Tensor(np.zeros((1, n_l)))
                audio_in = apyr[idx]
            else:
                prev = upsample_linear(corr, n_l)
                audio_in = warp_features(apyr[idx], prev, n_l)
            aff = affinity(vpyr[idx], audio_in)
            if collect_affinities:
                affinities[idx] = aff.data.copy()
            corr = self.predict_level(lvl, aff, prev)
            preds[idx] = corr

        final = upsample_linear(preds[0], n)
        return Correspondence(
            final=final,
            level_preds=list(preds),
            video_lengths=n_lengths,
            audio_lengths=m_lengths,
            n_video=n,
            m_audio=m,
            gates=gates,
            affinities=[a for a in affinities if a is not None] if collect_affinities else [],
        )

    # -- losses ------------------------------------------------------------
    def loss_fs(self, result: Correspondence, gt: GroundTruthCorrespondence) -> Tensor:
        """Weighted per-level mean L1 between predicted and true correspondence."""
        pairs = [(result.final, gt.values, self.cfg.weight_for(0))]
        if len(gt.level_values) != len(result.level_preds):
            raise ValueError(
                f"ground truth has {len(gt.level_values)} level copies, "
                f"model predicts {len(result.level_preds)} levels"
            )
        for idx, pred in enumerate(result.level_preds):
            pairs.append((pred, gt.level_values[idx], self.cfg.weight_for(idx + 1)))
        total = None
        for pred, target, lam in pairs:
            target = np.asarray(target, dtype=np.float64)
            if pred.shape[1] != target.size:
                raise ValueError(
                    f"level length mismatch: pred {pred.shape[1]} vs gt {target.size}"
                )
            term = T.mul(T.tmean(T.absolute(T.add(pred, Tensor(-target.reshape(1, -1))))), lam)
            total = term if total is None else T.add(total, term)
        return total

    def loss_mono(self, result: Correspondence) -> Tensor:
        """Hinge penalty on decreases, margin of one audio frame per level."""
        entries = [(result.final, result.m_audio, self.cfg.weight_for(0))]
        for idx, pred in enumerate(result.level_preds):
            entries.append((pred, result.audio_lengths[idx], self.cfg.weight_for(idx + 1)))
        total = None
        for pred, m_l, lam in entries:
            length = pred.shape[1]
            if length < 2:
                continue
            margin = self.cfg.kappa * (2.0 / (m_l - 1) if m_l > 1 else 2.0)
            lead = T.narrow(pred, 1, 0, length - 1)
            lag = T.narrow(pred, 1, 1, length - 1)
            hinge = T.relu(T.add(T.add(lead, T.mul(lag, -1.0)), margin))
            term = T.mul(T.tsum(hinge), lam)
            total = term if total is None else T.add(total, term)
        return total if total is not None else Tensor(np.zeros(()))

    def total_loss(self, result: Correspondence,
                   gt: GroundTruthCorrespondence) -> tuple[Tensor, float, float]:
        fs = self.loss_fs(result, gt)
        mono = self.loss_mono(result)
        total = T.add(fs, T.mul(mono, self.cfg.mu))
        return total, fs.item(), mono.item()
