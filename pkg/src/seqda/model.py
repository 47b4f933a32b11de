"""Word-recognition network: two same-padded Conv1D layers, a BiLSTM, a
second unidirectional LSTM and a small head, with five embedding taps along
the way.  Main (tablet) and auxiliary (paper) pipelines instantiate this
same architecture with separate parameters.

Tap layout (time x features per sample):
  c=1 after the conv stack        (input_len, conv_filters)
  c=2 after the BiLSTM            (pooled_len, 2*lstm1_hidden)
  c=3 after dropout               (pooled_len, 2*lstm1_hidden)
  c=4 after the second LSTM       (pooled_len, lstm2_hidden)
  c=5 after the tanh projection   (pooled_len, lstm2_hidden)
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import diffengine as de

KERNEL_SIZE = 5
DROPOUT = 0.2


@dataclass
class ModelConfig:
    num_classes: int  # K + 1 including the CTC blank
    input_len: int = 400
    channels: int = 13
    conv_filters: int = 200
    pooled_len: int = 60
    lstm1_hidden: int = 100
    lstm2_hidden: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("input_len", "channels", "conv_filters", "pooled_len",
                     "lstm1_hidden", "lstm2_hidden"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be >= 1" % name)
        if self.num_classes < 2:
            raise ValueError("num_classes must include at least one symbol plus blank")
        if self.pooled_len > self.input_len:
            raise ValueError("pooled_len must not exceed input_len")


def tap_shape(cfg, c):
    """(time, features) of fusion tap c in 1..5."""
    if c == 1:
        return (cfg.input_len, cfg.conv_filters)
    if c in (2, 3):
        return (cfg.pooled_len, 2 * cfg.lstm1_hidden)
    if c in (4, 5):
        return (cfg.pooled_len, cfg.lstm2_hidden)
    raise ValueError("fusion point c must be one of 1..5, got %r" % (c,))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _lstm_params(rng, in_dim, hidden):
    wx = _uniform(rng, in_dim, (in_dim, 4 * hidden))
    wh = _uniform(rng, hidden, (hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return wx, wh, b


def init_params(cfg):
    """Deterministic fan-in-scaled uniform init; returns dict of grad Tensors."""
    rng = np.random.default_rng(cfg.seed)
    F, H1, H2 = cfg.conv_filters, cfg.lstm1_hidden, cfg.lstm2_hidden
    raw = {}
    raw["conv1_w"] = _uniform(rng, KERNEL_SIZE * cfg.channels, (KERNEL_SIZE, cfg.channels, F))
    raw["conv1_b"] = np.zeros(F)
    raw["conv2_w"] = _uniform(rng, KERNEL_SIZE * F, (KERNEL_SIZE, F, F))
    raw["conv2_b"] = np.zeros(F)
    raw["lstmf_wx"], raw["lstmf_wh"], raw["lstmf_b"] = _lstm_params(rng, F, H1)
    raw["lstmb_wx"], raw["lstmb_wh"], raw["lstmb_b"] = _lstm_params(rng, F, H1)
    raw["lstm2_wx"], raw["lstm2_wh"], raw["lstm2_b"] = _lstm_params(rng, 2 * H1, H2)
    raw["fc1_w"] = _uniform(rng, H2, (H2, H2))
    raw["fc1_b"] = np.zeros(H2)
    raw["out_w"] = _uniform(rng, H2, (H2, cfg.num_classes))
    raw["out_b"] = np.zeros(cfg.num_classes)
    return {k: de.parameter(v, name=k) for k, v in raw.items()}


def forward(params, batch, cfg, train=False, dropout_rng=None):
    """Run the network on a padded batch (b, input_len, 13).

    Returns (log_probs Tensor (b, pooled_len, K+1), taps dict c -> Tensor).
    Dropout is active only when train=True and a dropout_rng is supplied.
    """
    x = de.as_tensor(batch)
    if x.data.ndim != 3 or x.data.shape[1] != cfg.input_len or x.data.shape[2] != cfg.channels:
        raise ValueError("batch shape %s does not match config (%d, %d)"
                         % (x.data.shape, cfg.input_len, cfg.channels))
    h = de.relu(de.conv1d(x, params["conv1_w"], params["conv1_b"]))
    tap1 = de.relu(de.conv1d(h, params["conv2_w"], params["conv2_b"]))
    pooled = de.adaptive_max_pool_time(tap1, cfg.pooled_len)
    fwd = de.lstm_seq(pooled, params["lstmf_wx"], params["lstmf_wh"], params["lstmf_b"])
    bwd = de.lstm_seq(pooled, params["lstmb_wx"], params["lstmb_wh"], params["lstmb_b"],
                      reverse_time=True)
    tap2 = de.concat([fwd, bwd], axis=2)
    if train and dropout_rng is not None:
        keep = 1.0 - DROPOUT
        mask = (dropout_rng.random(tap2.data.shape) < keep) / keep
        tap3 = de.mul(tap2, mask)
    else:
        tap3 = tap2
    tap4 = de.lstm_seq(tap3, params["lstm2_wx"], params["lstm2_wh"], params["lstm2_b"])
    tap5 = de.tanh(de.affine(tap4, params["fc1_w"], params["fc1_b"]))
    logits = de.affine(tap5, params["out_w"], params["out_b"])
    log_probs = de.log_softmax(logits, axis=-1)
    return log_probs, {1: tap1, 2: tap2, 3: tap3, 4: tap4, 5: tap5}


CKPT_MAGIC = b"SEQDACKPT"
CKPT_VERSION = 1


def save_checkpoint(params, path):
    """Flat named-tensor container: header + little-endian float64 payload."""
    header = {
        "version": CKPT_VERSION,
        "tensors": [{"name": k, "shape": list(v.data.shape)} for k, v in params.items()],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for v in params.values():
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Load a checkpoint back into a dict of grad-enabled Tensors."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError("%s is not a seqda checkpoint" % path)
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != CKPT_VERSION:
            raise ValueError("unsupported checkpoint version %r" % header["version"])
        params = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            params[spec["name"]] = de.parameter(arr, name=spec["name"])
    return params
