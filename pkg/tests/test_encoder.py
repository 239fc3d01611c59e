import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlqa import autodiff as ad
from xlqa.encoder import (EncoderConfig, Params, backprop, encode, encoder_param_names, forward,
                          gradient_check, hidden_states, init_params, load_params, resolve_layer,
                          save_params, snapshot, track, word_pool)
from xlqa.errors import ContractError, FormatError, InputError, LengthError


def _numeric(fn, x, step=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = fn(x)
        x[idx] = orig - step
        down = fn(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


OPS = {
    "gelu": lambda t: ad.total(ad.gelu(t)),
    "softmax": lambda t: ad.total(ad.mul(ad.softmax(t), np.arange(12.0).reshape(3, 4))),
    "layer_norm": lambda t: ad.total(ad.mul(ad.layer_norm(t, np.linspace(0.5, 2, 4), np.ones(4)),
                                            np.arange(12.0).reshape(3, 4))),
    "square_norm": lambda t: ad.square_norm(t),
    "matmul3d": lambda t: ad.total(ad.mul(ad.reshape(t, (3, 1, 4)) @ np.ones((3, 4, 2)), 1.5)),
    "log_softmax_pick": lambda t: ad.log_softmax_pick(ad.reshape(t, (12,)), 5),
    "take_rows": lambda t: ad.square_norm(ad.take_rows(t, [0, 2, 2])),
    "transpose": lambda t: ad.total(ad.mul(ad.transpose(t, (1, 0)), np.arange(12.0).reshape(4, 3))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_primitive_gradients(name, rng):
    x = rng.standard_normal((3, 4))
    leaf = ad.leaf(x.copy())
    ad.backward(OPS[name](leaf))
    numeric = _numeric(lambda a: float(OPS[name](ad.Tensor(a)).data), x.copy())
    assert np.allclose(leaf.grad, numeric, atol=1e-6, rtol=1e-5)


def test_backprop_needs_scalar(tiny_params):
    tracked = track(tiny_params)
    with pytest.raises(ContractError):
        backprop(tracked, forward(tracked, [2, 5, 3]))


def test_config_validation():
    with pytest.raises(InputError):
        EncoderConfig(vocab_size=10, hidden_dim=10, num_heads=4)
    with pytest.raises(InputError):
        EncoderConfig(vocab_size=0)


def test_init_shapes_and_determinism():
    cfg = EncoderConfig(vocab_size=300, hidden_dim=16, num_layers=1, num_heads=4, ffn_dim=24, max_seq_len=10)
    p = init_params(cfg)
    assert p.names() == encoder_param_names(cfg)
    assert p["layers.0.Wq"].shape == (16, 16)
    assert p["layers.0.W1"].shape == (16, 24)
    assert p["tok_emb"].shape == (300, 16) and p["pos_emb"].shape == (10, 16)
    assert np.all(p["layers.0.ln1_g"] == 1) and np.all(p["layers.0.bq"] == 0)
    assert init_params(cfg).digest() == p.digest()
    assert init_params(EncoderConfig(**{**cfg.__dict__, "seed": 1})).digest() != p.digest()


def test_forward_shapes_and_errors(tiny_params, tiny_config):
    out = encode(tiny_params, [2, 10, 11, 3])
    assert out.shape == (4, tiny_config.hidden_dim)
    assert np.all(np.isfinite(out))
    assert len(hidden_states(tiny_params, [2, 3])) == tiny_config.num_layers + 1
    with pytest.raises(LengthError):
        encode(tiny_params, [4] * (tiny_config.max_seq_len + 1))
    with pytest.raises(InputError):
        encode(tiny_params, [tiny_config.vocab_size])
    assert encode(tiny_params, []).shape == (0, tiny_config.hidden_dim)


def test_layer_selection(tiny_params, tiny_config):
    top = tiny_config.num_layers
    assert resolve_layer(tiny_config, None) == top == resolve_layer(tiny_config, -1)
    assert resolve_layer(tiny_config, 0) == 0
    assert np.array_equal(encode(tiny_params, [2, 7, 3], 0), hidden_states(tiny_params, [2, 7, 3])[0].data)
    with pytest.raises(InputError):
        resolve_layer(tiny_config, top + 1)


def test_position_matters(tiny_params):
    a = encode(tiny_params, [2, 7, 8, 3])
    b = encode(tiny_params, [2, 8, 7, 3])
    assert not np.allclose(a[1], b[2])


def test_word_pool():
    vecs = np.arange(12.0).reshape(6, 2)
    pooled = word_pool(vecs, [(1, 3), (3, 4)])
    assert np.array_equal(pooled, [[3.0, 4.0], [6.0, 7.0]])
    for bad in ([(2, 2)], [(1, 3), (2, 4)], [(3, 4), (1, 2)], [(5, 7)]):
        with pytest.raises(InputError):
            word_pool(vecs, bad)


def test_gradient_check_full_encoder(tiny_params):
    rng = np.random.default_rng(0)
    target = rng.standard_normal((5, tiny_params.config.hidden_dim))

    def objective(src):
        return ad.square_norm(ad.sub(forward(src, [2, 9, 14, 30, 3]), target))

    worst, report = gradient_check(tiny_params, objective, max_entries=8)
    assert worst < 1e-4
    assert set(report) == set(tiny_params.names())


def test_embedding_gradient_is_one_hot(tiny_params):
    tracked = track(tiny_params)
    grads = backprop(tracked, ad.square_norm(forward(tracked, [2, 9, 3])))
    touched = np.nonzero(np.abs(grads["tok_emb"]).sum(axis=1))[0]
    assert touched.tolist() == [2, 3, 9]


def test_snapshot_is_immutable(tiny_params):
    snap = snapshot(tiny_params)
    with pytest.raises(ValueError):
        snap["tok_emb"][0, 0] = 1.0
    with pytest.raises(ContractError):
        snap.update({"tok_emb": np.ones_like(snap["tok_emb"])})
    live = tiny_params.copy()
    live.update({"tok_emb": np.ones_like(live["tok_emb"])})
    assert snap.equals(tiny_params) and not live.equals(tiny_params)


def test_checkpoint_round_trip_bit_exact(tmp_path, tiny_params):
    save_params(tiny_params, tmp_path / "a.ckpt", {"note": "x"})
    loaded, extra = load_params(tmp_path / "a.ckpt")
    assert extra == {"note": "x"}
    assert loaded.config == tiny_params.config and loaded.equals(tiny_params)
    save_params(loaded, tmp_path / "b.ckpt", {"note": "x"})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path, tiny_params):
    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(FormatError):
        load_params(tmp_path / "x")
    save_params(tiny_params, tmp_path / "a.ckpt")
    (tmp_path / "t").write_bytes((tmp_path / "a.ckpt").read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_params(tmp_path / "t")


@settings(max_examples=10, deadline=None)
@given(st.lists(st.integers(4, 259), min_size=1, max_size=10))
def test_encoding_is_deterministic(ids):
    cfg = EncoderConfig(vocab_size=260, hidden_dim=8, num_layers=1, num_heads=2, ffn_dim=8, max_seq_len=12)
    p = init_params(cfg)
    assert np.array_equal(encode(p, ids), encode(p.copy(), ids))
