"""Sensor-sequence data model: JSONL datasets, WD/WI splits, padding and
per-sample normalization, and a synthetic tablet/paper generator with a
controllable domain shift (paper samples are noisier, tablet samples carry a
magnetometer bias)."""

import json
from dataclasses import dataclass, field

import numpy as np

N_CHANNELS = 13
MAG_CHANNELS = slice(9, 12)  # acc-front 0:3, acc-rear 3:6, gyro 6:9, mag 9:12, force 12

TABLET = "tablet"
PAPER = "paper"


@dataclass
class MTSSample:
    id: str
    writer: str
    domain: str
    label: str
    signal: np.ndarray  # (m, 13)

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if self.signal.ndim != 2 or self.signal.shape[1] != N_CHANNELS:
            raise ValueError("sample %s: expected m x %d signal, got %s"
                             % (self.id, N_CHANNELS, self.signal.shape))
        if self.signal.shape[0] < 1:
            raise ValueError("sample %s: empty signal" % self.id)
        if not self.label:
            raise ValueError("sample %s: empty label" % self.id)
        if self.domain not in (TABLET, PAPER):
            raise ValueError("sample %s: unknown domain %r" % (self.id, self.domain))


@dataclass
class Dataset:
    samples: list
    alphabet: str

    def __post_init__(self):
        if not self.samples:
            raise ValueError("empty dataset")
        allowed = set(self.alphabet)
        for s in self.samples:
            bad = set(s.label) - allowed
            if bad:
                raise ValueError("sample %s: label character %r not in alphabet"
                                 % (s.id, sorted(bad)[0]))

    def __len__(self):
        return len(self.samples)

    def writers(self):
        return sorted({s.writer for s in self.samples})


def load_dataset(path, alphabet=None):
    """Load a JSONL dataset: one {id, writer, domain, label, signal} per line."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                samples.append(MTSSample(
                    id=str(rec["id"]), writer=str(rec["writer"]),
                    domain=rec["domain"], label=rec["label"],
                    signal=np.asarray(rec["signal"], dtype=np.float64)))
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError("%s line %d: malformed record (%s)" % (path, lineno, e))
    if not samples:
        raise ValueError("empty dataset: %s" % path)
    if alphabet is None:
        alphabet = "".join(sorted({ch for s in samples for ch in s.label}))
    return Dataset(samples=samples, alphabet=alphabet)


def save_dataset(ds, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in ds.samples:
            fh.write(json.dumps({
                "id": s.id, "writer": s.writer, "domain": s.domain,
                "label": s.label, "signal": s.signal.tolist()}) + "\n")


WD = "WD"
WI = "WI"


def split(ds, mode, ratio, seed):
    """Train/validation split.

    WD: per-writer stratified random split. WI: validation writers disjoint
    from training writers.  Deterministic in seed; union equals the input.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    rng = np.random.default_rng(seed)
    writers = ds.writers()
    train, val = [], []
    if mode == WD:
        by_writer = {w: [] for w in writers}
        for s in ds.samples:
            by_writer[s.writer].append(s)
        for w in writers:
            group = by_writer[w]
            idx = rng.permutation(len(group))
            n_train = int(round(ratio * len(group)))
            n_train = min(max(n_train, 0), len(group))
            chosen = set(idx[:n_train])
            for i, s in enumerate(group):
                (train if i in chosen else val).append(s)
    elif mode == WI:
        if len(writers) < 2:
            raise ValueError("WI split requires at least 2 writers")
        order = list(rng.permutation(len(writers)))
        n_train = int(round(ratio * len(writers)))
        n_train = min(max(n_train, 1), len(writers) - 1)
        train_writers = {writers[i] for i in order[:n_train]}
        for s in ds.samples:
            (train if s.writer in train_writers else val).append(s)
    else:
        raise ValueError("unknown split mode %r" % mode)
    return (Dataset(train, ds.alphabet), Dataset(val, ds.alphabet))


def pad_normalize(sample, target_len):
    """Per-channel z-score over valid steps, zero-padded to target_len.

    Returns (signal (target_len, 13), mask (target_len,)).  Channels with
    std < 1e-8 are divided by 1 instead (constant channels become zeros).
    """
    m = sample.signal.shape[0]
    if m > target_len:
        raise ValueError("sequence too long: %d > target %d" % (m, target_len))
    mu = sample.signal.mean(axis=0)
    sd = sample.signal.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    out = np.zeros((target_len, N_CHANNELS))
    out[:m] = (sample.signal - mu) / sd
    mask = np.zeros(target_len)
    mask[:m] = 1.0
    return out, mask


@dataclass
class SynthConfig:
    n_samples: int
    words: list
    n_writers: int = 4
    char_len: int = 20
    paper_noise_std: float = 0.3
    tablet_noise_std: float = 0.0
    tablet_mag_bias: tuple = (0.8, 0.5, -0.4)
    writer_offset_std: float = 0.1
    seed: int = 0
    alphabet: str = field(default="")

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.words:
            raise ValueError("empty word list")
        if (self.paper_noise_std < 0 or self.tablet_noise_std < 0
                or self.writer_offset_std < 0):
            raise ValueError("noise stds must be >= 0")
        if not self.alphabet:
            self.alphabet = "".join(sorted({ch for w in self.words for ch in w}))


def _char_signature(ch, char_len, seed):
    """Fixed sinusoid bank over the 13 channels, keyed by character and seed."""
    rng = np.random.default_rng([seed, ord(ch)])
    t = np.linspace(0.0, 1.0, char_len, endpoint=False)
    amp = rng.uniform(0.4, 1.2, size=(N_CHANNELS, 3))
    freq = rng.uniform(1.0, 6.0, size=(N_CHANNELS, 3))
    phase = rng.uniform(0.0, 2 * np.pi, size=(N_CHANNELS, 3))
    sig = np.zeros((char_len, N_CHANNELS))
    for c in range(N_CHANNELS):
        for k in range(3):
            sig[:, c] += amp[c, k] * np.sin(2 * np.pi * freq[c, k] * t + phase[c, k])
    return sig


def synth_generate(cfg):
    """Generate (tablet, paper) datasets with the configured domain shift."""
    sigs = {ch: _char_signature(ch, cfg.char_len, cfg.seed) for ch in cfg.alphabet}
    rng_w = np.random.default_rng([cfg.seed, 1])
    writer_offsets = {
        "w%d" % i: rng_w.normal(0.0, cfg.writer_offset_std, size=N_CHANNELS)
        for i in range(cfg.n_writers)}
    datasets = {}
    for domain in (TABLET, PAPER):
        rng = np.random.default_rng([cfg.seed, 2 if domain == TABLET else 3])
        samples = []
        for i in range(cfg.n_samples):
            word = cfg.words[int(rng.integers(len(cfg.words)))]
            writer = "w%d" % int(rng.integers(cfg.n_writers))
            sig = np.concatenate([sigs[ch] for ch in word], axis=0)
            sig = sig + writer_offsets[writer]
            noise = cfg.paper_noise_std if domain == PAPER else cfg.tablet_noise_std
            if noise > 0:
                sig = sig + rng.normal(0.0, noise, size=sig.shape)
            if domain == TABLET:
                sig = sig.copy()
                sig[:, MAG_CHANNELS] += np.asarray(cfg.tablet_mag_bias)
            samples.append(MTSSample(
                id="%s%04d" % (domain[0], i), writer=writer, domain=domain,
                label=word, signal=sig))
        datasets[domain] = Dataset(samples, cfg.alphabet)
    return datasets[TABLET], datasets[PAPER]
