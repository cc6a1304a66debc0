import numpy as np
import pytest

from orca_swh.prompt import (PAD, SECTIONS, UNK, DatasetMeta, PromptBundle, PromptTemplate, Vocabulary,
                             build_prompt_repr, encode_soft_prompt, prompt_vocabulary, render_prompt,
                             tokenize, tokenize_and_embed)
from orca_swh.tensor import ShapeError, Tensor, finite_diff_gradient, precision

META = DatasetMeta(5, 3, 16, ["WVHT", "WSPD", "WDIR", "ATMP", "PRES"])


def encoder_params(D, rng, zero=False, dtype=np.float64):
    def w(*shape):
        return Tensor(np.zeros(shape) if zero else rng.normal(0, 0.4, shape), dtype=dtype)

    return {"lstm.w_ih": w(D, 4 * D), "lstm.w_hh": w(D, 4 * D), "lstm.b": w(4 * D),
            "prompt.w2": w(D, D), "prompt.b2": w(D), "prompt.w1": w(D, D), "prompt.b1": w(D)}


def test_full_prompt_has_sections_in_order():
    text, spans = render_prompt(PromptTemplate(), META)
    positions = [text.index(f"{s}:") for s in SECTIONS]
    assert positions == sorted(positions)
    assert list(spans) == list(SECTIONS)
    for label, (a, b) in spans.items():
        assert text[a:b].startswith(label + ":")


def test_light_prompt():
    text, spans = render_prompt(PromptTemplate(variant="light"), META)
    assert text.startswith("ACTOR: You are a marine scientist.")
    assert list(spans) == ["ACTOR", "TARGET"]


def test_no_features_variant_drops_only_features():
    text, spans = render_prompt(PromptTemplate(variant="no-features"), META)
    assert list(spans) == ["ACTOR", "INFORMATION", "TARGET", "DATA"]
    assert "wind speed" not in text


def test_information_interpolates_counts():
    text, spans = render_prompt(PromptTemplate(), META)
    a, b = spans["INFORMATION"]
    info = text[a:b]
    for n in ("5", "3", "16"):
        assert n in info.split()


def test_features_section_names_features():
    text, spans = render_prompt(PromptTemplate(), META)
    a, b = spans["FEATURES"]
    assert "wind direction (WDIR)" in text[a:b]


def test_unknown_variant():
    with pytest.raises(ValueError):
        PromptTemplate(variant="short")


def test_vocabulary_ids_dense_with_pad_zero():
    vocab = prompt_vocabulary(PromptTemplate(), META)
    assert vocab.index[PAD] == 0 and vocab.index[UNK] == 1
    assert sorted(vocab.index.values()) == list(range(len(vocab)))


def test_tokenize_casefolds():
    assert tokenize("WDIR wdir, Wave-height!") == ["wdir", "wdir", "wave", "height"]


def test_embed_empty_text():
    vocab = Vocabulary.build(["a b"])
    P = tokenize_and_embed("", vocab, np.ones((len(vocab), 4)))
    assert P.shape == (0, 4)


def test_embed_case_folded_rows_match():
    vocab = Vocabulary.build(["WDIR speed"])
    table = np.random.default_rng(0).normal(size=(len(vocab), 6))
    P = tokenize_and_embed("WDIR wdir", vocab, table)
    assert P.shape == (2, 6)
    np.testing.assert_array_equal(P.data[0], P.data[1])


def test_embed_unknown_token_uses_unk_row():
    vocab = Vocabulary.build(["known"])
    table = np.arange(len(vocab) * 3, dtype=float).reshape(len(vocab), 3)
    P = tokenize_and_embed("mystery", vocab, table)
    np.testing.assert_array_equal(P.data[0], table[vocab.index[UNK]])


def test_embed_table_shape_checked():
    vocab = Vocabulary.build(["a b"])
    with pytest.raises(ShapeError):
        tokenize_and_embed("a", vocab, np.ones((2, 4)))


def test_soft_prompt_shape():
    rng = np.random.default_rng(0)
    H = encode_soft_prompt(Tensor(rng.normal(size=(8, 16))), encoder_params(16, rng, dtype=np.float32))
    assert H.shape == (8, 16)


def test_soft_prompt_zero_weights_give_bias():
    rng = np.random.default_rng(1)
    p = encoder_params(6, rng, zero=True)
    c = np.linspace(-1, 1, 6)
    p["prompt.b1"] = Tensor(c, dtype=np.float64)
    H = encode_soft_prompt(Tensor(rng.normal(size=(4, 6)), dtype=np.float64), p)
    np.testing.assert_array_equal(H.data, np.tile(c, (4, 1)))


def test_soft_prompt_empty_rejected():
    with pytest.raises(ShapeError):
        encode_soft_prompt(Tensor(np.zeros((0, 4))), encoder_params(4, np.random.default_rng(0)))


def test_soft_prompt_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    with precision(np.float64):
        p = encoder_params(5, rng)
        head = rng.normal(size=(3, 5))
        Q = rng.normal(size=(3, 5))
        q = Tensor(Q, requires_grad=True)
        (encode_soft_prompt(q, p) * head).sum().backward()
        est = finite_diff_gradient(lambda t: (encode_soft_prompt(t, p) * head).sum(), Q, h=1e-6)
    err = np.abs(q.grad - est.data) / np.maximum(np.maximum(np.abs(q.grad), np.abs(est.data)), 1e-5)
    assert err.max() < 1e-4


def test_prompt_repr_concatenates_soft_prompt_first():
    rng = np.random.default_rng(3)
    H_q, P = Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(3, 4)))
    H = build_prompt_repr(H_q, P)
    assert H.shape == (5, 4)
    np.testing.assert_array_equal(H.data[:2], H_q.data)
    assert H.data[0].tobytes() == H_q.data[0].tobytes()


def test_prompt_repr_without_tokens():
    H_q = Tensor(np.ones((2, 4)))
    assert build_prompt_repr(H_q, Tensor(np.zeros((0, 4)))).data is H_q.data


def test_prompt_repr_width_mismatch():
    with pytest.raises(ShapeError):
        build_prompt_repr(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 5))))


def test_bundle_checks_row_count():
    ids = np.array([2, 3, 4])
    Q = Tensor(np.ones((2, 4)))
    with pytest.raises(ShapeError):
        PromptBundle(ids, Tensor(np.ones((3, 4))), Q, Q, Tensor(np.ones((4, 4))))
