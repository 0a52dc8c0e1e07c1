import json
import math

import numpy as np
import pytest
from _gradcheck import gru_cell_gradient_error, model_gradient_error

from deformseq.autograd import RngStream, Tensor
from deformseq.dataset import fit_normalization, synthesize
from deformseq.errors import SchemaError, ShapeError, StateError
from deformseq.models import (
    ARCHITECTURES,
    Conv1dNet,
    EncoderDecoderGru,
    GruCellParams,
    TransformerBlockNet,
    build_model,
    causal_mask,
    gru_cell_step,
    load_checkpoint,
    save_checkpoint,
    scaled_dot_product_attention,
)
from deformseq.models.conv import pad_widths

SMALL = {
    "encdec_gru": {"hidden": 5},
    "gru": {"hidden": 5},
    "conv": {"filters": 4, "kernel": 3},
    "transformer": {"d_model": 8, "heads": 2, "d_ff": 8},
}


def _fitted(arch, seed=0, corpus=None, **hyper):
    corpus = corpus or synthesize(4, 12, seed=0)
    return build_model(arch, seed=seed, normalization=fit_normalization(corpus), **{**SMALL[arch], **hyper})


def _zero_cell(H):
    return GruCellParams(Tensor(np.zeros((3, 3 * H))), Tensor(np.zeros((H, 2 * H))),
                         Tensor(np.zeros((H, H))), Tensor(np.zeros(3 * H)))


def test_zero_gru_halves_state(rng):
    h = rng.normal(size=(2, 4))
    out = gru_cell_step(rng.normal(size=(2, 3)), h, _zero_cell(4)).data
    np.testing.assert_allclose(out, 0.5 * h, rtol=1e-15)


def test_saturated_update_gate_returns_candidate(rng):
    H = 3
    cell = _zero_cell(H)
    cell.bias.data[:H] = 50.0
    cell.w_in.data[:, 2 * H:] = rng.normal(size=(3, H))
    x = rng.normal(size=(1, 3))
    cand = np.tanh(x @ cell.w_in.data[:, 2 * H:])
    for h0 in (np.zeros((1, H)), rng.normal(size=(1, H))):
        np.testing.assert_allclose(gru_cell_step(x, h0, cell).data, cand, atol=1e-15)


def test_gru_cell_shape_errors():
    cell = _zero_cell(4)
    with pytest.raises(ShapeError):
        gru_cell_step(np.zeros((1, 3)), np.zeros((1, 5)), cell)
    with pytest.raises(ShapeError):
        gru_cell_step(np.zeros((1, 2)), np.zeros((1, 4)), cell)


@pytest.mark.parametrize("seed", range(3))
def test_gru_cell_gradients(seed):
    assert gru_cell_gradient_error(seed) < 1e-5


@pytest.mark.parametrize("arch", ["encdec_gru", "conv", "transformer"])
@pytest.mark.parametrize("seed", [0, 1])
def test_model_gradients(arch, seed):
    assert model_gradient_error(arch, seed) < 1e-5


def test_encdec_length_one_uses_single_step_state(rng):
    m = EncoderDecoderGru(seed=3, hidden=4)
    x = Tensor(rng.normal(size=(1, 1, 3)))
    enc = m._layer("enc")
    h1 = gru_cell_step(x.data[:, 0], np.zeros((1, 4)), enc).data
    np.testing.assert_allclose(m.encode(x).data, h1, rtol=1e-14)
    assert m(x).shape == (1, 1)


def test_zero_head_outputs_bias(rng):
    m = EncoderDecoderGru(seed=0, hidden=6)
    m.params["head.w"].data[:] = 0.0
    m.params["head.b"].data[:] = 0.37
    np.testing.assert_array_equal(m(rng.normal(size=(2, 9, 3))).data, 0.37)


def test_conv_identity_tap_is_causal(rng):
    k = 3
    m = Conv1dNet(seed=0, filters=1, kernel=k, padding="causal")
    for p in m.params.values():
        p.data[:] = 0.0
    # layer 1 picks channel 0 at the newest window position, layer 2 passes it on
    m.params["conv1.w"].data[(k - 1) * 3 + 0, 0] = 1.0
    m.params["conv2.w"].data[(k - 1) * 1, 0] = 1.0
    x = np.abs(rng.normal(size=(1, 10, 3)))
    np.testing.assert_allclose(m(x).data[0], x[0, :, 0], rtol=1e-15)


def test_conv_zero_weights_give_bias(rng):
    m = Conv1dNet(seed=0, filters=4, kernel=5, padding="symmetric")
    for name, p in m.params.items():
        p.data[:] = 0.0
    m.params["conv2.b"].data[:] = -0.25
    np.testing.assert_array_equal(m(rng.normal(size=(3, 7, 3))).data, -0.25)


@pytest.mark.parametrize("k, mode, widths", [
    (3, "causal", (2, 0)), (5, "causal", (4, 0)), (3, "symmetric", (1, 1)),
    (5, "symmetric", (2, 2)), (4, "symmetric", (1, 2)), (1, "symmetric", (0, 0)),
])
def test_pad_widths(k, mode, widths):
    assert pad_widths(k, mode) == widths


def test_attention_identical_keys_average_values(rng):
    q = rng.normal(size=(5, 4))
    k = np.tile(rng.normal(size=(1, 4)), (6, 1))
    v = rng.normal(size=(6, 3))
    out = scaled_dot_product_attention(q, k, v).data
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (5, 1)), rtol=1e-13)


def test_attention_scales_by_root_dk(rng):
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), np.eye(3)
    logits = q @ k.T / 2.0
    expected = np.exp(logits - logits.max(axis=1, keepdims=True))
    expected /= expected.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(scaled_dot_product_attention(q, k, v).data, expected, rtol=1e-13)


def test_causal_attention_zero_weights_beyond_row(rng):
    q, k = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    weights = scaled_dot_product_attention(q, k, np.eye(6), mask="causal").data
    assert np.all(weights[np.triu_indices(6, k=1)] == 0.0)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, rtol=1e-14)
    assert causal_mask(2, 2)[0, 1] == -math.inf and causal_mask(2, 2)[1, 0] == 0


def test_attention_shape_errors():
    with pytest.raises(ShapeError):
        scaled_dot_product_attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 4)))
    with pytest.raises(ShapeError):
        scaled_dot_product_attention(np.ones((2, 4)), np.ones((2, 4)), np.ones((3, 4)))


def test_transformer_length_one_single_head_causal(rng):
    m = TransformerBlockNet(seed=1, d_model=4, heads=1, d_ff=6, mask="causal")
    x = rng.normal(size=(1, 1, 3))
    e = m.params["embed.w"].data.T @ x[0, 0] + m.params["embed.b"].data
    v = e @ m.params["attn.v.w"].data + m.params["attn.v.b"].data
    a = v @ m.params["attn.o.w"].data + m.params["attn.o.b"].data

    def ln(z):
        return (z - z.mean()) / np.sqrt(z.var() + 1e-5)
    n1 = ln(e + a)
    ff = np.maximum(n1 @ m.params["ff1.w"].data, 0) @ m.params["ff2.w"].data
    n2 = ln(n1 + ff)
    expected = n2 @ m.params["head.w"].data[:, 0]
    assert m(x).data[0, 0] == pytest.approx(expected, rel=1e-12)


def test_transformer_inference_is_repeatable(rng):
    m = TransformerBlockNet(seed=0, d_model=8, heads=2, d_ff=8)
    x = rng.normal(size=(2, 10, 3))
    np.testing.assert_array_equal(m(x).data, m(x).data)
    trained = m(x, training=True, rng=RngStream(0)).data
    assert not np.array_equal(trained, m(x).data)


def test_transformer_rejects_indivisible_heads():
    with pytest.raises(ShapeError):
        TransformerBlockNet(d_model=10, heads=3)


@pytest.mark.parametrize("arch, hyper", [
    ("encdec_gru", {"hidden": 16}), ("encdec_gru", {"hidden": 64}), ("gru", {"hidden": 8}),
    ("conv", {"filters": 16, "kernel": 5}), ("conv", {"filters": 32, "kernel": 3}),
    ("transformer", {"d_model": 16, "heads": 2, "d_ff": 32}),
    ("transformer", {"d_model": 32, "heads": 4, "d_ff": 64}),
])
def test_parameter_counts(arch, hyper):
    m = build_model(arch, **hyper)
    assert m.n_params == ARCHITECTURES[arch].expected_param_count(**hyper)


def test_parameter_count_constants():
    # written out by hand for the default sizes
    assert EncoderDecoderGru.expected_param_count(hidden=64) == 2 * (3 * 64 * 3 + 3 * 64 * 64 + 3 * 64) + 65
    assert Conv1dNet.expected_param_count(filters=32, kernel=3) == 9 * 32 + 32 + 3 * 32 + 1
    assert TransformerBlockNet.expected_param_count(d_model=32, heads=2, d_ff=64) == 8673


@pytest.mark.parametrize("arch", sorted(SMALL))
@pytest.mark.parametrize("length", [1, 7, 100, 400])
def test_prediction_length(arch, length):
    m = _fitted(arch)
    path = synthesize(1, max(length, 2), seed=2).paths[0].truncated(length)
    out = m.predict(path)
    assert out.shape == (length,)
    assert np.all(np.isfinite(out))


@pytest.mark.parametrize("arch, hyper", [
    ("conv", {"padding": "causal"}),
    ("conv", {"padding": "causal", "kernel": 6}),
    ("transformer", {"mask": "causal"}),
    ("transformer", {"mask": "causal", "positional": "sinusoidal"}),
    ("gru", {}),
])
def test_exact_causality(arch, hyper):
    corpus = synthesize(6, 60, seed=3)
    m = _fitted(arch, seed=4, corpus=corpus, **hyper)
    feats = corpus.features()
    full = m.predict_features(feats)
    for t in (1, 2, 17, 59):
        np.testing.assert_allclose(m.predict_features(feats[:, :t]), full[:, :t], rtol=0, atol=1e-12)


@pytest.mark.parametrize("arch, hyper", [("encdec_gru", {}), ("transformer", {"mask": "none"})])
def test_non_causal_modes_deviate(arch, hyper):
    corpus = synthesize(6, 40, seed=3)
    m = _fitted(arch, seed=0, corpus=corpus, **hyper)
    feats = corpus.features()
    dev = np.abs(m.predict_features(feats[:, :20]) - m.predict_features(feats)[:, :20]).max(axis=1)
    assert np.all(dev > 1e-6)


def test_constant_model_prediction_is_constant():
    m = _fitted("conv", padding="symmetric")
    for p in m.params.values():
        p.data[:] = 0.0
    m.params["conv2.b"].data[:] = 0.8
    out = m.predict(synthesize(1, 30, seed=0).paths[0])
    np.testing.assert_array_equal(out, 0.8)


def test_predict_needs_normalization():
    m = build_model("conv")
    with pytest.raises(StateError):
        m.predict(synthesize(1, 5, seed=0).paths[0])
    with pytest.raises(StateError):
        m.to_dict()


def test_bad_feature_width():
    with pytest.raises(ShapeError):
        build_model("conv")(np.zeros((1, 5, 2)))


def test_unknown_arch():
    with pytest.raises(ValueError):
        build_model("lstm")


@pytest.mark.parametrize("arch", sorted(SMALL))
def test_checkpoint_round_trip(tmp_path, arch):
    m = _fitted(arch, seed=9)
    f1, f2 = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(m, f1)
    back = load_checkpoint(f1)
    assert back.arch == m.arch and back.hyper == m.hyper and back.seed == m.seed
    for k in m.params:
        np.testing.assert_array_equal(back.params[k].data, m.params[k].data)
    save_checkpoint(back, f2)
    assert f1.read_bytes() == f2.read_bytes()
    path = synthesize(1, 20, seed=1).paths[0]
    np.testing.assert_array_equal(back.predict(path), m.predict(path))


def test_checkpoint_rejects_foreign_documents(tmp_path):
    f = tmp_path / "x.json"
    f.write_text(json.dumps({"format": "other"}))
    with pytest.raises(SchemaError):
        load_checkpoint(f)
    doc = _fitted("conv").to_dict()
    doc["arch"] = "lstm"
    f.write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        load_checkpoint(f)


def test_copy_is_independent():
    m = _fitted("gru")
    c = m.copy()
    c.params["head.b"].data[:] = 5.0
    assert m.params["head.b"].data[0] == 0.0


def test_init_is_bounded_and_seeded():
    a, b = EncoderDecoderGru(seed=1, hidden=16), EncoderDecoderGru(seed=1, hidden=16)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    bound = math.sqrt(1 / 3)
    assert np.abs(a.params["enc.w_in"].data).max() <= bound
    assert np.abs(a.params["enc.u_h"].data).max() <= math.sqrt(1 / 16)
    assert np.all(a.params["enc.bias"].data == 0)
