"""Structured task prompt, its token embedding, and the soft-prompt encoder."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .data import KNOWN_FEATURES
from .tensor import ShapeError, Tensor, as_tensor, concat, relu, sigmoid, tanh

SECTIONS = ("ACTOR", "INFORMATION", "TARGET", "FEATURES", "DATA")
VARIANTS = {
    "full": SECTIONS,
    "light": ("ACTOR", "TARGET"),
    "no-features": ("ACTOR", "INFORMATION", "TARGET", "DATA"),
}
PAD, UNK = "<pad>", "<unk>"


@dataclass
class PromptTemplate:
    """Five text sections; ``information`` and ``features`` are format strings.

    ``information`` may use ``{F}``, ``{M}``, ``{T}`` and ``{interval}``;
    ``features`` may use ``{features}``, which expands to e.g.
    ``wind direction (WDIR), wind speed (WSPD)``.
    """

    actor: str = "You are a marine scientist."
    information: str = ("The input holds {F} features measured by {M} buoys "
                        "over {T} time steps spaced {interval} hours apart.")
    target: str = ("Estimate the significant wave height of every grid cell "
                   "in the region at each time step.")
    features: str = "The features are {features}."
    data_decl: str = "Every input value is a floating point number."
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown prompt variant {self.variant!r}; choose from {sorted(VARIANTS)}")

    def with_variant(self, variant: str) -> PromptTemplate:
        return PromptTemplate(self.actor, self.information, self.target, self.features,
                              self.data_decl, variant)


@dataclass
class DatasetMeta:
    F: int
    M: int
    T: int
    feature_names: list[str]
    interval_hours: float = 3.0


def describe_feature(name: str) -> str:
    desc = KNOWN_FEATURES.get(name, (None, name.lower()))[1]
    return f"{desc} ({name})"


def render_prompt(template: PromptTemplate, meta: DatasetMeta) -> tuple[str, dict[str, tuple[int, int]]]:
    """Render the selected sections; returns the text and each section's char span."""
    interval = f"{meta.interval_hours:g}"
    bodies = {
        "ACTOR": template.actor,
        "INFORMATION": template.information.format(F=meta.F, M=meta.M, T=meta.T, interval=interval),
        "TARGET": template.target,
        "FEATURES": template.features.format(
            features=", ".join(describe_feature(n) for n in meta.feature_names)),
        "DATA": template.data_decl,
    }
    text, spans = "", {}
    for label in VARIANTS[template.variant]:
        if text:
            text += " "
        start = len(text)
        text += f"{label}: {bodies[label]}"
        spans[label] = (start, len(text))
    return text, spans


_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _TOKEN.findall(text.lower())


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=lambda: [PAD, UNK])

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with PAD, UNK")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts) -> Vocabulary:
        tokens = [PAD, UNK]
        seen = set(tokens)
        for text in texts:
            for tok in tokenize(text):
                if tok not in seen:
                    seen.add(tok)
                    tokens.append(tok)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> np.ndarray:
        unk = self.index[UNK]
        return np.array([self.index.get(t, unk) for t in tokenize(text)], dtype=np.int64)


def prompt_vocabulary(template: PromptTemplate, meta: DatasetMeta) -> Vocabulary:
    """Vocabulary covering every variant of ``template`` rendered for ``meta``."""
    return Vocabulary.build(render_prompt(template.with_variant(v), meta)[0] for v in VARIANTS)


def tokenize_and_embed(text: str, vocab: Vocabulary, embedding_table) -> Tensor:
    """Rows of ``embedding_table`` (V x D) for each token of ``text``: E x D."""
    table = as_tensor(embedding_table)
    if table.ndim != 2 or table.shape[0] != len(vocab):
        raise ShapeError(f"embedding table must be {len(vocab)} x D, got {table.shape}")
    return table[vocab.encode(text)]


def lstm_states(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Hidden-state sequence of a single-layer LSTM run along axis 0 of ``x`` (R x D_in).

    Gate layout of the 4H columns is input, forget, cell, output.
    """
    R = x.shape[0]
    H = w_hh.shape[0]
    if w_ih.shape != (x.shape[1], 4 * H) or w_hh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(
            f"lstm: expected w_ih ({x.shape[1]}, {4 * H}), w_hh ({H}, {4 * H}), b ({4 * H},); "
            f"got {w_ih.shape}, {w_hh.shape}, {b.shape}")
    pre_in = x @ w_ih + b  # all input projections at once
    h = Tensor(np.zeros((1, H), dtype=x.dtype))
    c = Tensor(np.zeros((1, H), dtype=x.dtype))
    states = []
    for r in range(R):
        z = pre_in[r:r + 1] + h @ w_hh
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * tanh(c)
        states.append(h)
    return concat(states, axis=0)


def encode_soft_prompt(Q: Tensor, p: dict) -> Tensor:
    """Soft prompt through the recurrent + two-layer affine encoder, R x D.

    ``p`` holds ``lstm.w_ih``, ``lstm.w_hh``, ``lstm.b``, ``prompt.w1``,
    ``prompt.b1``, ``prompt.w2``, ``prompt.b2`` as tensors.
    """
    Q = as_tensor(Q)
    if Q.ndim != 2 or Q.shape[0] == 0:
        raise ShapeError(f"soft prompt must be a nonempty R x D matrix, got {Q.shape}")
    states = lstm_states(Q, p["lstm.w_ih"], p["lstm.w_hh"], p["lstm.b"])
    hidden = relu(states @ p["prompt.w2"] + p["prompt.b2"])
    return hidden @ p["prompt.w1"] + p["prompt.b1"]


def build_prompt_repr(H_q: Tensor, P: Tensor) -> Tensor:
    """Rows of the encoded soft prompt followed by the prompt token embeddings."""
    H_q, P = as_tensor(H_q), as_tensor(P)
    if P.shape[0] == 0:
        if P.ndim == 2 and P.shape[1] not in (0, H_q.shape[1]):
            raise ShapeError(f"prompt repr: width {P.shape[1]} differs from soft prompt width {H_q.shape[1]}")
        return H_q
    if H_q.shape[1] != P.shape[1]:
        raise ShapeError(f"prompt repr: soft prompt width {H_q.shape[1]} != token embedding width {P.shape[1]} (axis 1)")
    return concat([H_q, P], axis=0)


@dataclass
class PromptBundle:
    token_ids: np.ndarray
    P: Tensor
    Q: Tensor
    H_q: Tensor
    H_prompt: Tensor

    def __post_init__(self):
        R, E = self.Q.shape[0], len(self.token_ids)
        if self.H_prompt.shape[0] != R + E:
            raise ShapeError(f"H_prompt has {self.H_prompt.shape[0]} rows, expected R+E={R + E}")
