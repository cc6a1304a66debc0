"""Spatial (Z-order) and temporal (patch) encodings and input assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import GridSpec, RegionError
from .tensor import ShapeError, Tensor, as_tensor, broadcast_to, concat, relu


def zorder_bits_per_axis(spec: GridSpec) -> int:
    return max(1, math.ceil(math.log2(max(spec.rows, spec.cols))))


def zorder_encode(G, spec: GridSpec) -> np.ndarray:
    """Morton bits of each ``(row, col)``, most significant level first.

    At each level the row bit precedes the column bit, so ``A`` is twice the
    bits needed for the larger grid side.  Returns an ``M x A`` 0/1 array.
    """
    G = np.asarray(G, dtype=np.int64).reshape(-1, 2)
    for i, (u, v) in enumerate(G):
        if not (0 <= u < spec.rows and 0 <= v < spec.cols):
            raise RegionError(f"cell ({u}, {v}) of buoy {i} is outside a {spec.rows}x{spec.cols} grid")
    nbits = zorder_bits_per_axis(spec)
    shifts = np.arange(nbits - 1, -1, -1)
    u_bits = (G[:, :1] >> shifts) & 1
    v_bits = (G[:, 1:] >> shifts) & 1
    Z = np.empty((len(G), 2 * nbits), dtype=np.float64)
    Z[:, 0::2] = u_bits
    Z[:, 1::2] = v_bits
    return Z


def zorder_decode(Z) -> np.ndarray:
    Z = np.asarray(Z).astype(np.int64)
    nbits = Z.shape[1] // 2
    weights = 1 << np.arange(nbits - 1, -1, -1)
    return np.stack([Z[:, 0::2] @ weights, Z[:, 1::2] @ weights], axis=1)


def morton_value(Z) -> np.ndarray:
    """Integer reading of each Z row (first bit most significant)."""
    Z = np.asarray(Z).astype(np.int64)
    return Z @ (1 << np.arange(Z.shape[1] - 1, -1, -1))


def spatial_embed(Z, w3: Tensor, b3: Tensor) -> Tensor:
    Z = as_tensor(Z)
    if Z.ndim != 2 or Z.shape[1] != w3.shape[0]:
        raise ShapeError(f"spatial_embed: Z is {Z.shape}, weight expects {w3.shape[0]} bits (axis 1)")
    return relu(Z @ w3 + b3)


@dataclass
class PatchSet:
    patches: np.ndarray  # S x F x M x L
    stride: int
    patch_len: int

    @property
    def count(self) -> int:
        return self.patches.shape[0]

    def starts(self) -> np.ndarray:
        return np.arange(self.count) * self.stride


def patch_count(T: int, L: int, W: int) -> int:
    return (T - L) // W + 2


def make_patches(X, L: int, W: int) -> PatchSet:
    """Overlapping windows of length ``L`` at stride ``W`` along the last axis.

    The series is padded at the end by repeating its final step ``W`` times;
    windows start at ``0, W, 2W, ...`` which gives ``(T - L) // W + 2`` of them.
    Requires ``W <= L`` so that windows overlap or abut.
    """
    X = np.asarray(X)
    T = X.shape[-1]
    if T < 1:
        raise ValueError("make_patches: series is empty")
    if W < 1 or L < 1:
        raise ValueError(f"make_patches: need L >= 1 and W >= 1, got L={L}, W={W}")
    if W > L:
        raise ValueError(f"make_patches: stride {W} exceeds patch length {L}, windows would leave gaps")
    if L > T + W:
        raise ValueError(f"make_patches: patch length {L} exceeds padded length {T + W}")
    padded = np.concatenate([X, np.repeat(X[..., -1:], W, axis=-1)], axis=-1)
    S = patch_count(T, L, W)
    patches = np.stack([padded[..., s * W:s * W + L] for s in range(S)], axis=0)
    return PatchSet(patches, W, L)


def temporal_embed(C, w4: Tensor, b4: Tensor) -> Tensor:
    C = as_tensor(C)
    if C.shape[-1] != w4.shape[0]:
        raise ShapeError(f"temporal_embed: patch length {C.shape[-1]} != weight rows {w4.shape[0]} (axis -1)")
    return relu(C @ w4 + b4)


def assemble_input(H_prompt: Tensor, H_loc: Tensor | None, H_temp: Tensor) -> Tensor:
    """Token axis first: ``[prompt (R+E) | location (1) | patches (S)] x F x M x D``.

    Prompt rows are copied across every (feature, buoy) pair; the location
    token carries buoy m's embedding for all features.  ``H_loc=None`` drops
    the location token.
    """
    S, F, M, D = H_temp.shape
    if H_prompt.ndim != 2 or H_prompt.shape[1] != D:
        raise ShapeError(f"assemble_input: prompt width {H_prompt.shape[-1]} != {D}")
    parts = [broadcast_to(H_prompt.reshape(H_prompt.shape[0], 1, 1, D), (H_prompt.shape[0], F, M, D))]
    if H_loc is not None:
        if H_loc.shape != (M, D):
            raise ShapeError(f"assemble_input: location embedding is {H_loc.shape}, expected ({M}, {D})")
        parts.append(broadcast_to(H_loc.reshape(1, 1, M, D), (1, F, M, D)))
    parts.append(H_temp)
    return concat(parts, axis=0)
