"""Frozen transformer stack standing in for the pretrained language model.

Only the positional table (plus the adapter arrays registered by
:mod:`orca_swh.model`) is trainable.  Weights are seeded, not pretrained;
:func:`init_backbone` can overwrite them from an ``ORCAW v1`` file.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, gelu, layer_norm, softmax

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"ORCAW v1\n"

# adapter and positional arrays: the only ones an optimizer may touch
TRAINABLE = frozenset({
    "wpe", "soft_prompt",
    "prompt.w1", "prompt.b1", "prompt.w2", "prompt.b2",
    "loc.w3", "loc.b3", "patch.w4", "patch.b4", "head.w5", "head.b5",
})


class CapacityError(ValueError):
    """The token sequence is longer than the positional table."""


class WeightsError(ValueError):
    """An external weights file does not fit the model."""


@dataclass
class BackboneConfig:
    layers: int = 2
    heads: int = 4
    width: int = 64
    ffn_mult: int = 4
    max_tokens: int = 256
    seed: int = 0
    vocab_size: int = 2

    def __post_init__(self):
        if self.layers < 0 or self.heads < 1 or self.width < 1 or self.ffn_mult < 1:
            raise ValueError(f"invalid backbone config {self}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")


@dataclass
class ModelParams:
    """Named arrays plus the per-array trainable flag."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    trainable: dict[str, bool] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> None:
        self.arrays[name] = value
        self.trainable[name] = name in TRAINABLE

    def trainable_names(self) -> list[str]:
        return [n for n in self.arrays if self.trainable[n]]

    def frozen_names(self) -> list[str]:
        return [n for n in self.arrays if not self.trainable[n]]

    def copy(self) -> ModelParams:
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, dict(self.trainable))

    def astype(self, dtype) -> ModelParams:
        return ModelParams({k: v.astype(dtype) for k, v in self.arrays.items()}, dict(self.trainable))

    def bind(self, dtype=None) -> dict[str, Tensor]:
        """Wrap every array as a tensor; trainable ones request gradients."""
        return {k: Tensor(v, requires_grad=self.trainable[k], name=k, dtype=dtype or v.dtype)
                for k, v in self.arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays


def init_backbone(config: BackboneConfig, weights: str | Path | None = None) -> ModelParams:
    """Seeded scaled-normal weights (std 0.02), zero biases, unit norm gains."""
    rng = np.random.default_rng(config.seed)
    D, H = config.width, config.ffn_mult * config.width
    std = 0.02
    p = ModelParams()
    p.add("wte", rng.normal(0, std, (config.vocab_size, D)))
    p.add("wpe", rng.normal(0, std / 2, (config.max_tokens, D)))
    for i in range(config.layers):
        pre = f"h{i}."
        p.add(pre + "ln1.g", np.ones(D))
        p.add(pre + "ln1.b", np.zeros(D))
        p.add(pre + "attn.w_qkv", rng.normal(0, std, (D, 3 * D)))
        p.add(pre + "attn.b_qkv", np.zeros(3 * D))
        p.add(pre + "attn.w_o", rng.normal(0, std / np.sqrt(2 * max(config.layers, 1)), (D, D)))
        p.add(pre + "attn.b_o", np.zeros(D))
        p.add(pre + "ln2.g", np.ones(D))
        p.add(pre + "ln2.b", np.zeros(D))
        p.add(pre + "mlp.w_fc", rng.normal(0, std, (D, H)))
        p.add(pre + "mlp.b_fc", np.zeros(H))
        p.add(pre + "mlp.w_proj", rng.normal(0, std / np.sqrt(2 * max(config.layers, 1)), (H, D)))
        p.add(pre + "mlp.b_proj", np.zeros(D))
    p.add("ln_f.g", np.ones(D))
    p.add("ln_f.b", np.zeros(D))
    for k in p.arrays:
        p.arrays[k] = p.arrays[k].astype(np.float32)
    if weights is not None:
        load_into(p, read_weights(weights), strict=False)
    return p


# ---------------------------------------------------------------------------
# weights file


def write_weights(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        for name, arr in arrays.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_weights(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if not buf.startswith(WEIGHTS_MAGIC):
        raise WeightsError(f"{path}: not an ORCAW v1 file")
    pos, out = len(WEIGHTS_MAGIC), {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(buf):
                raise WeightsError(f"{path}: array {name!r} is truncated")
            out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise WeightsError(f"{path}: truncated record") from exc
    return out


def load_into(params: ModelParams, arrays: dict[str, np.ndarray], strict: bool = True) -> ModelParams:
    """Overwrite ``params`` in place from ``arrays``.

    Every shape mismatch is reported at once.  With ``strict`` every array of
    ``params`` must be present in ``arrays``.
    """
    bad = [f"{k}: file {tuple(v.shape)} vs model {params.arrays[k].shape}"
           for k, v in arrays.items() if k in params.arrays and tuple(v.shape) != params.arrays[k].shape]
    if bad:
        raise WeightsError("shape mismatch for " + "; ".join(bad))
    if strict:
        missing = [k for k in params.arrays if k not in arrays]
        if missing:
            raise WeightsError("weights file lacks " + ", ".join(missing))
    unknown = [k for k in arrays if k not in params.arrays]
    if unknown:
        log.warning("ignoring %d unknown arrays in weights file: %s", len(unknown), ", ".join(unknown))
    for k, v in arrays.items():
        if k in params.arrays:
            params.arrays[k] = v.astype(params.arrays[k].dtype)
    return params


# ---------------------------------------------------------------------------
# forward


def _attention(x: Tensor, p: dict, pre: str, heads: int) -> Tensor:
    B, I, D = x.shape
    dh = D // heads
    qkv = x @ p[pre + "attn.w_qkv"] + p[pre + "attn.b_qkv"]
    qkv = qkv.reshape(B, I, 3, heads, dh).transpose(2, 0, 3, 1, 4)  # 3, B, h, I, dh
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    att = softmax(scores, axis=-1)  # no causal mask
    out = (att @ v).transpose(0, 2, 1, 3).reshape(B, I, D)
    return out @ p[pre + "attn.w_o"] + p[pre + "attn.b_o"]


def backbone_forward(H_input: Tensor, p: dict, layers: int, heads: int) -> Tensor:
    """Run each (feature, buoy) fibre of ``H_input`` (I x F x M x D) through the stack.

    Positional encodings are added first.  Each layer is pre-norm attention
    followed by a pre-norm GELU feed-forward block, and the final layer norm
    closes the stack, so a zero-layer stack returns its input plus positions.
    """
    H_input = as_tensor(H_input)
    I, F, M, D = H_input.shape
    wpe = p["wpe"]
    if I > wpe.shape[0]:
        raise CapacityError(f"{I} tokens exceed the positional table of {wpe.shape[0]}")
    if wpe.shape[1] != D:
        raise ShapeError(f"backbone: input width {D} != model width {wpe.shape[1]}")
    x = H_input.transpose(1, 2, 0, 3).reshape(F * M, I, D) + wpe[:I]
    for i in range(layers):
        pre = f"h{i}."
        x = x + _attention(layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"]), p, pre, heads)
        h = layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h = gelu(h @ p[pre + "mlp.w_fc"] + p[pre + "mlp.b_fc"])
        x = x + (h @ p[pre + "mlp.w_proj"] + p[pre + "mlp.b_proj"])
    if layers:
        x = layer_norm(x, p["ln_f.g"], p["ln_f.b"])
    return x.reshape(F, M, I, D).transpose(2, 0, 1, 3)


def pool_and_project(H_LLM: Tensor, w5: Tensor, b5: Tensor, grid_shape: tuple[int, int, int]) -> Tensor:
    """Mean over the feature axis, flatten as (token, buoy, width), project, reshape (k, j, t)."""
    H_LLM = as_tensor(H_LLM)
    I, F, M, D = H_LLM.shape
    K, J, T = grid_shape
    if w5.shape != (I * M * D, K * J * T) or b5.shape != (K * J * T,):
        raise ShapeError(
            f"pool_and_project: head must be ({I * M * D}, {K * J * T}) + ({K * J * T},), "
            f"got {w5.shape} + {b5.shape}")
    pooled = H_LLM.mean(axis=1)
    flat = pooled.reshape(1, I * M * D)
    return (flat @ w5 + b5).reshape(K, J, T)
