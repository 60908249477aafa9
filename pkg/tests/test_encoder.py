import numpy as np
import pytest

from ssda import encoder as enc
from ssda.numgrad import finite_diff_grad, max_rel_error
from ssda.objectives import EmbeddingBatch, proto_loss
from ssda.trainer import sgd_step


def test_zero_params_give_zero_embeddings(rng):
    p = enc.init_params(0, (5, 7, 3))
    for w in p.weights:
        w[:] = 0.0
    x = rng.normal(size=(4, 5))
    assert not enc.forward(p, x).any()


def test_single_layer_is_affine_projection(rng):
    w = rng.normal(size=(3, 5))
    p = enc.EncoderParams([w], [np.zeros(3)])
    x = rng.normal(size=(6, 5))
    np.testing.assert_array_equal(enc.forward(p, x), x @ w.T)
    ident = enc.EncoderParams([np.eye(4)], [np.zeros(4)])
    np.testing.assert_array_equal(enc.forward(ident, x[:, :4]), x[:, :4])


def test_shape_checks():
    p = enc.init_params(0, (5, 7, 3))
    with pytest.raises(ValueError):
        enc.forward(p, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        enc.EncoderParams([np.zeros((3, 4)), np.zeros((2, 5))], [np.zeros(3), np.zeros(2)])
    with pytest.raises(ValueError):
        enc.EncoderParams([np.zeros((3, 4))], [np.zeros(3)], heads={"source": np.zeros((2, 5))})


def test_forward_is_pure(rng):
    p = enc.init_params(3)
    x = rng.normal(size=(5, 20))
    before = enc.clone_for_adaptation(p)
    a, b = enc.forward(p, x), enc.forward(p, x)
    np.testing.assert_array_equal(a, b)
    assert p.equals(before)


def test_init_determinism():
    a, b = enc.init_params(11, heads={"source": 4}), enc.init_params(11, heads={"source": 4})
    assert a.equals(b)
    assert not a.equals(enc.init_params(12, heads={"source": 4}))
    assert a.dims == (20, 32, 16)


def test_init_scale_follows_fan_in_rule():
    dims = (20, 32, 16)
    for layer, fan_in in enumerate(dims[:-1]):
        stds = [enc.init_params(seed, dims).weights[layer].std() for seed in range(10)]
        target = 1.0 / np.sqrt(fan_in)
        assert abs(np.mean(stds) - target) <= 0.1 * target


def test_parameter_gradients_through_encoder(rng):
    p = enc.init_params(5, (6, 9, 4))
    feats = rng.normal(size=(4 * 3, 6))

    def loss_of(named):
        q = enc.EncoderParams.from_named(named)
        return proto_loss(EmbeddingBatch(enc.forward(q, feats).reshape(4, 3, -1))).value

    emb, cache = enc.forward_cached(p, feats)
    out = proto_loss(EmbeddingBatch(emb.reshape(4, 3, -1)))
    grads = enc.backward(p, cache, out.grads["embeddings"].reshape(12, -1))
    num = finite_diff_grad(loss_of, p.named())
    assert max_rel_error(grads, num) <= 1e-4


def test_clone_is_deep():
    p = enc.init_params(1, heads={"source": 3})
    c = enc.clone_for_adaptation(p)
    assert c.equals(p)
    c.weights[0][0, 0] += 1.0
    c.heads["source"][0, 0] += 1.0
    c.heads["target"] = np.zeros((2, 16))
    assert not c.equals(p)
    assert "target" not in p.heads and p.weights[0][0, 0] != c.weights[0][0, 0]


def test_adapting_a_clone_leaves_original_loss(rng):
    p = enc.init_params(2, (6, 8, 4))
    feats = rng.normal(size=(8, 6))

    def loss(params):
        return proto_loss(EmbeddingBatch(enc.forward(params, feats).reshape(4, 2, -1)))

    before = loss(p).value
    c = enc.clone_for_adaptation(p)
    for _ in range(10):
        emb, cache = enc.forward_cached(c, feats)
        out = proto_loss(EmbeddingBatch(emb.reshape(4, 2, -1)))
        c = sgd_step(c, enc.backward(c, cache, out.grads["embeddings"].reshape(8, -1)), 0.1)
    assert loss(c).value < before
    assert loss(p).value == before


def test_checkpoint_round_trip_bit_exact(tmp_path):
    p = enc.init_params(9, heads={"source": 5, "target": 2})
    p.biases[0][:] = np.random.default_rng(0).normal(size=32) * 1e-300  # subnormal-ish values survive
    path = tmp_path / "ckpt.txt"
    enc.save_checkpoint(p, path)
    q = enc.load_checkpoint(path)
    assert q.equals(p)
    assert set(q.heads) == {"source", "target"}
    assert path.read_text().splitlines()[:2] == ["ssda-encoder v1", "dims 20 32 16"]


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("hello\n")
    with pytest.raises(ValueError):
        enc.load_checkpoint(path)
