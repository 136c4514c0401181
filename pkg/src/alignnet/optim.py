"""Named parameter store, Adam updates, and checkpoint serialization.

Checkpoints are a JSON manifest (parameter names, shapes, byte offsets into
the blob) next to a flat little-endian float64 binary blob; round-trips are
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered map of learnable parameters plus Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step_count: int = 0

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        self.moment1[name] = np.zeros_like(t.data)
        self.moment2[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            src = values[name]
            if src.shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r}: stored shape {src.shape} != model shape {t.data.shape}"
                )
            t.data = np.ascontiguousarray(src, dtype=np.float64)


def adam_step(store: ParamStore, lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update with bias correction; caller zeroes gradients."""
    for name, t in store.params.items():
        if t.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    store.step_count += 1
    k = store.step_count
    bc1 = 1.0 - beta1 ** k
    bc2 = 1.0 - beta2 ** k
    for name, t in store.params.items():
        g = t.grad
        m = store.moment1[name]
        v = store.moment2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def save_checkpoint(store: ParamStore, stem: str | Path) -> None:
    """Write ``<stem>.json`` (manifest) and ``<stem>.bin`` (LE float64 blob)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, t in store.params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.data.shape), "offset": offset})
        offset += len(raw)
        chunks.append(raw)
    manifest = {"dtype": "<f8", "total_bytes": offset, "params": entries}
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    stem.with_suffix(".bin").write_bytes(b"".join(chunks))


def load_checkpoint(stem: str | Path) -> dict[str, np.ndarray]:
    """Read a manifest+blob checkpoint back into name -> array."""
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    blob = stem.with_suffix(".bin").read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise ValueError(
            f"checkpoint blob is {len(blob)} bytes, manifest expects {manifest['total_bytes']}"
        )
    out = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return out
