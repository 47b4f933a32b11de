"""Recognizer network: shapes, invariances, determinism, checkpoints."""

import numpy as np
import pytest

from seqda import diffengine as de
from seqda.ctc import ctc_loss
from seqda.model import (ModelConfig, forward, init_params, load_checkpoint,
                         save_checkpoint, tap_shape)
from tests.conftest import check_gradients

SMALL = dict(num_classes=4, input_len=12, channels=13, conv_filters=6,
             pooled_len=4, lstm1_hidden=5, lstm2_hidden=5, seed=1)


def test_tap_shapes_paper_defaults():
    cfg = ModelConfig(num_classes=27)
    assert tap_shape(cfg, 1) == (400, 200)
    assert tap_shape(cfg, 2) == (60, 200)
    assert tap_shape(cfg, 3) == (60, 200)
    assert tap_shape(cfg, 4) == (60, 100)
    assert tap_shape(cfg, 5) == (60, 100)
    with pytest.raises(ValueError, match="1..5"):
        tap_shape(cfg, 6)


def test_config_validation():
    with pytest.raises(ValueError, match="num_classes"):
        ModelConfig(num_classes=1)
    with pytest.raises(ValueError, match="conv_filters"):
        ModelConfig(num_classes=3, conv_filters=0)
    with pytest.raises(ValueError, match="pooled_len"):
        ModelConfig(num_classes=3, input_len=10, pooled_len=20)


def test_forward_shapes(rng):
    cfg = ModelConfig(**SMALL)
    params = init_params(cfg)
    batch = rng.normal(size=(3, cfg.input_len, cfg.channels))
    lp, taps = forward(params, batch, cfg)
    assert lp.data.shape == (3, cfg.pooled_len, cfg.num_classes)
    for c in range(1, 6):
        t, f = tap_shape(cfg, c)
        assert taps[c].data.shape == (3, t, f)
    # rows are log-probabilities
    assert np.allclose(np.exp(lp.data).sum(-1), 1.0, atol=1e-10)


def test_forward_batch_shape_check(rng):
    cfg = ModelConfig(**SMALL)
    params = init_params(cfg)
    with pytest.raises(ValueError, match="batch shape"):
        forward(params, rng.normal(size=(2, 9, 13)), cfg)


def test_init_deterministic():
    cfg = ModelConfig(**SMALL)
    a, b = init_params(cfg), init_params(cfg)
    for k in a:
        assert np.array_equal(a[k].data, b[k].data)
    c = init_params(ModelConfig(**{**SMALL, "seed": 2}))
    assert not np.array_equal(a["conv1_w"].data, c["conv1_w"].data)


def test_init_scales():
    cfg = ModelConfig(**SMALL)
    p = init_params(cfg)
    bound = 1.0 / np.sqrt(5 * cfg.channels)
    assert np.abs(p["conv1_w"].data).max() <= bound
    # forget-gate bias starts at 1, other gates at 0
    h = cfg.lstm1_hidden
    b = p["lstmf_b"].data
    assert np.array_equal(b[h:2 * h], np.ones(h))
    assert np.all(b[:h] == 0) and np.all(b[2 * h:] == 0)


def test_permutation_equivariance(rng):
    """Samples are processed independently: permuting the batch permutes
    the outputs."""
    cfg = ModelConfig(**SMALL)
    params = init_params(cfg)
    batch = rng.normal(size=(4, cfg.input_len, cfg.channels))
    perm = [2, 0, 3, 1]
    lp1, taps1 = forward(params, batch, cfg)
    lp2, taps2 = forward(params, batch[perm], cfg)
    assert np.allclose(lp1.data[perm], lp2.data, atol=1e-12)
    for c in range(1, 6):
        assert np.allclose(taps1[c].data[perm], taps2[c].data, atol=1e-12)


def test_bilstm_direction_symmetry(rng):
    """With the conv kernels flipped in time and the forward/backward LSTM
    weights swapped, running the model on the time-reversed input reverses
    and swaps the BiLSTM tap halves."""
    cfg = ModelConfig(**SMALL)
    params = init_params(cfg)
    swapped = dict(params)
    for suffix in ("wx", "wh", "b"):
        swapped["lstmf_" + suffix] = params["lstmb_" + suffix]
        swapped["lstmb_" + suffix] = params["lstmf_" + suffix]
    for name in ("conv1_w", "conv2_w"):
        swapped[name] = de.as_tensor(params[name].data[::-1].copy())
    batch = rng.normal(size=(2, cfg.input_len, cfg.channels))
    _, taps = forward(params, batch, cfg)
    _, taps_r = forward(swapped, batch[:, ::-1], cfg)
    h = 2 * cfg.lstm1_hidden
    a = taps[2].data
    b = taps_r[2].data[:, ::-1]
    # conv padding is symmetric and pooling windows mirror, so the halves swap
    assert np.allclose(a[..., :h // 2], b[..., h // 2:], atol=1e-10)
    assert np.allclose(a[..., h // 2:], b[..., :h // 2], atol=1e-10)


def test_dropout_behavior(rng):
    cfg = ModelConfig(**SMALL)
    params = init_params(cfg)
    batch = rng.normal(size=(2, cfg.input_len, cfg.channels))
    lp_eval, taps_eval = forward(params, batch, cfg, train=False)
    # eval mode: tap3 is tap2 untouched
    assert np.array_equal(taps_eval[2].data, taps_eval[3].data)
    dr = np.random.default_rng(0)
    lp_tr, taps_tr = forward(params, batch, cfg, train=True, dropout_rng=dr)
    assert not np.array_equal(taps_tr[2].data, taps_tr[3].data)
    zero_frac = np.mean(taps_tr[3].data == 0.0)
    assert 0.1 < zero_frac < 0.3
    # same dropout rng state reproduces the outputs exactly
    lp_tr2, _ = forward(params, batch, cfg, train=True,
                        dropout_rng=np.random.default_rng(0))
    assert np.array_equal(lp_tr.data, lp_tr2.data)


def test_end_to_end_gradient(rng):
    """Finite differences through conv + pool + both LSTMs + head + CTC."""
    cfg = ModelConfig(num_classes=3, input_len=8, channels=13, conv_filters=3,
                      pooled_len=4, lstm1_hidden=3, lstm2_hidden=3, seed=0)
    params = init_params(cfg)
    batch = rng.normal(size=(1, cfg.input_len, cfg.channels))
    names = ["conv1_w", "lstmf_wx", "lstm2_wh", "fc1_w", "out_w", "out_b"]

    def fn(*arrs):
        p = dict(params)
        for nm, arr in zip(names, arrs):
            p[nm] = de.as_tensor(arr)
        lp, _ = forward(p, batch, cfg)
        sliced = de.reshape(de.narrow(lp, 0, 0, 1), (cfg.pooled_len, cfg.num_classes))
        return ctc_loss(sliced, [0, 1])

    check_gradients(fn, [params[nm].data for nm in names], tol=2e-4)


def test_checkpoint_roundtrip(tmp_path):
    cfg = ModelConfig(**SMALL)
    params = init_params(cfg)
    p = tmp_path / "m.ckpt"
    save_checkpoint(params, p)
    back = load_checkpoint(p)
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k].data, params[k].data)
    # bitwise stable: saving the loaded params reproduces the file
    q = tmp_path / "m2.ckpt"
    save_checkpoint(back, q)
    assert p.read_bytes() == q.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(ValueError, match="not a seqda checkpoint"):
        load_checkpoint(p)
