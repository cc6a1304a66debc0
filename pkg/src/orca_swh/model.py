"""Full estimator: prompt + spatio-temporal encodings -> backbone -> grid estimate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig, ModelParams, backbone_forward, init_backbone, pool_and_project
from .data import BuoyDataset, GridSpec
from .encoding import assemble_input, make_patches, patch_count, spatial_embed, temporal_embed, zorder_encode
from .prompt import (DatasetMeta, PromptTemplate, Vocabulary, build_prompt_repr, encode_soft_prompt,
                     prompt_vocabulary, render_prompt)
from .tensor import Tensor


@dataclass
class ModelConfig:
    width: int = 64
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    max_tokens: int = 256
    soft_prompt_len: int = 8
    patch_len: int = 16
    stride: int = 8
    window: int = 32
    prompt: str = "full"
    use_location: bool = True
    seed: int = 0
    template: PromptTemplate = field(default_factory=PromptTemplate)


class OrcaModel:
    """Maps one window of buoy observations (F x M x window) to a K x J x window grid.

    Inputs are standardised per feature with statistics taken from the
    training segment; they are stored as frozen ``scaler.*`` arrays so that a
    weights file fully determines the model.
    """

    def __init__(self, config: ModelConfig, grid: GridSpec, locations, feature_names,
                 interval_hours: float = 3.0, params: ModelParams | None = None,
                 scaler: tuple[np.ndarray, np.ndarray] | None = None):
        self.config = config
        self.grid = grid
        self.locations = np.asarray(locations, dtype=np.int64).reshape(-1, 2)
        self.feature_names = list(feature_names)
        F, M = len(self.feature_names), len(self.locations)
        self.meta = DatasetMeta(F, M, config.window, self.feature_names, interval_hours)
        template = config.template.with_variant(config.prompt)
        self.vocab: Vocabulary = prompt_vocabulary(template, self.meta)
        self.prompt_text, self.prompt_spans = render_prompt(template, self.meta)
        self.token_ids = self.vocab.encode(self.prompt_text)
        self.Z = zorder_encode(self.locations, grid)
        self.n_patches = patch_count(config.window, config.patch_len, config.stride)
        self.n_tokens = (config.soft_prompt_len + len(self.token_ids)
                         + int(config.use_location) + self.n_patches)
        if self.n_tokens > config.max_tokens:
            raise ValueError(f"{self.n_tokens} tokens exceed max_tokens={config.max_tokens}")
        self.params = params if params is not None else self._init_params(scaler)

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.grid.rows, self.grid.cols, self.config.window

    def backbone_config(self) -> BackboneConfig:
        c = self.config
        return BackboneConfig(c.layers, c.heads, c.width, c.ffn_mult, c.max_tokens, c.seed, len(self.vocab))

    def _init_params(self, scaler) -> ModelParams:
        c = self.config
        D, R, L = c.width, c.soft_prompt_len, c.patch_len
        F, M = len(self.feature_names), len(self.locations)
        K, J, T = self.grid_shape
        p = init_backbone(self.backbone_config())
        rng = np.random.default_rng([c.seed, 1])

        def normal(*shape, fan_in):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)

        p.add("soft_prompt", normal(R, D, fan_in=D))
        p.add("lstm.w_ih", normal(D, 4 * D, fan_in=D))
        p.add("lstm.w_hh", normal(D, 4 * D, fan_in=D))
        p.add("lstm.b", np.zeros(4 * D))
        p.add("prompt.w2", normal(D, D, fan_in=D))
        p.add("prompt.b2", np.zeros(D))
        p.add("prompt.w1", normal(D, D, fan_in=D))
        p.add("prompt.b1", np.zeros(D))
        if c.use_location:
            p.add("loc.w3", normal(self.Z.shape[1], D, fan_in=self.Z.shape[1]))
            p.add("loc.b3", np.zeros(D))
        p.add("patch.w4", normal(L, D, fan_in=L))
        p.add("patch.b4", np.zeros(D))
        # zero head: the untrained estimate is flat and learning stays in the span of seen windows
        p.add("head.w5", np.zeros((self.n_tokens * M * D, K * J * T)))
        p.add("head.b5", np.zeros(K * J * T))
        mean, std = scaler if scaler is not None else (np.zeros(F), np.ones(F))
        p.add("scaler.mean", np.asarray(mean, dtype=np.float64).reshape(F))
        p.add("scaler.std", np.asarray(std, dtype=np.float64).reshape(F))
        for k in p.arrays:
            p.arrays[k] = p.arrays[k].astype(np.float32)
        return p

    @classmethod
    def for_dataset(cls, config: ModelConfig, dataset: BuoyDataset, train: slice | None = None) -> OrcaModel:
        x = dataset.values[:, :, train if train is not None else slice(None)]
        mean = x.mean(axis=(1, 2))
        std = x.std(axis=(1, 2))
        std = np.where(std > 1e-6, std, 1.0)
        return cls(config, dataset.grid, dataset.locations, dataset.feature_names,
                   dataset.interval_hours, scaler=(mean, std))

    # -- forward ----------------------------------------------------------
    def bind(self, dtype=None) -> dict[str, Tensor]:
        return self.params.bind(dtype)

    def encode(self, x: np.ndarray, t: dict[str, Tensor]) -> Tensor:
        """Assemble the I x F x M x D backbone input for one window ``x``."""
        c = self.config
        dtype = t["wpe"].dtype
        mean = t["scaler.mean"].data.reshape(-1, 1, 1)
        std = t["scaler.std"].data.reshape(-1, 1, 1)
        xn = ((np.asarray(x, dtype=np.float64) - mean) / std).astype(dtype)
        H_q = encode_soft_prompt(t["soft_prompt"], t)
        P = t["wte"][self.token_ids]
        H_prompt = build_prompt_repr(H_q, P)
        H_loc = None
        if c.use_location:
            H_loc = spatial_embed(Tensor(self.Z, dtype=dtype), t["loc.w3"], t["loc.b3"])
        C = make_patches(xn, c.patch_len, c.stride).patches
        H_temp = temporal_embed(Tensor(C, dtype=dtype), t["patch.w4"], t["patch.b4"])
        return assemble_input(H_prompt, H_loc, H_temp)

    def forward(self, x: np.ndarray, t: dict[str, Tensor] | None = None) -> Tensor:
        if t is None:
            t = self.bind()
        x = np.asarray(x)
        want = (len(self.feature_names), len(self.locations), self.config.window)
        if x.shape != want:
            raise ValueError(f"window must be {want}, got {x.shape}")
        H_input = self.encode(x, t)
        H_LLM = backbone_forward(H_input, t, self.config.layers, self.config.heads)
        return pool_and_project(H_LLM, t["head.w5"], t["head.b5"], self.grid_shape)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, self.params.bind()).data

    def estimate(self, dataset: BuoyDataset, seg: slice) -> np.ndarray:
        """Stitch window estimates over ``seg`` of the full dataset; K x J x len(seg).

        Windows tile the segment from its start; the final window is aligned to
        the segment end and may reach back before the segment start.
        """
        start, stop, _ = seg.indices(dataset.values.shape[2])
        n, w = stop - start, self.config.window
        if stop < w:
            raise ValueError(f"segment ending at {stop} is shorter than the window length {w}")
        out = np.zeros(self.grid_shape[:2] + (n,), dtype=np.float32)
        for ws in window_starts(start, stop, w):
            pred = self.predict(dataset.values[:, :, ws:ws + w])
            lo = max(ws, start)
            out[:, :, lo - start:ws + w - start] = pred[:, :, lo - ws:]
        return out


def window_starts(start: int, stop: int, w: int) -> list[int]:
    """Starts of length-``w`` windows covering ``[start, stop)``."""
    if stop - start <= w:
        return [stop - w]
    starts = list(range(start, stop - w + 1, w))
    if starts[-1] + w < stop:
        starts.append(stop - w)
    return starts
