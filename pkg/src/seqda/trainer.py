"""Training: CTC pretraining of the main (tablet) and auxiliary (paper)
networks, domain-adaptation fine-tuning with the pairwise losses at a chosen
fusion point, Adam optimization, per-epoch reporting, checkpointing and
CER/WER evaluation (optionally with n-gram rescoring)."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ctc, data, diffengine as de, lm as lm_mod, model as model_mod
from .config import thread_count
from .dml import DmlLossSpec, beta_lookup
from .metrics import cer, wer
from .pairing import (MarginPolicy, build_pair_dictionary, contrastive_loss,
                      dynamic_margin, ed_lower_bound, select_triplets,
                      triplet_loss)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    pretrain_epochs: int = 1000
    adapt_epochs: int = 200          # paper default for the contrastive phase
    schedule_max_e: int = 200        # ED schedule horizon, independent knob
    fusion_point: int = 3
    dml_kind: str = "kHoMM_p3"
    dml_variant: str = "full"
    dml_ng: int = 1
    dml_T: int = 1000
    pairing_mode: str = "triplet"    # triplet | contrastive
    lambda_pair: float = 1.0
    beta: float = None               # default: beta_lookup(dml_kind, fusion_point)
    beta_table: str = None
    split_mode: str = data.WD
    split_ratio: float = 0.8
    seed: int = 0
    checkpoint_every: int = 0        # 0 = final checkpoint only
    eval_max_samples: int = 0        # 0 = full validation set

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 1 <= self.fusion_point <= 5:
            raise ValueError("fusion point must be 1..5")
        if self.pairing_mode not in ("triplet", "contrastive"):
            raise ValueError("pairing mode must be triplet or contrastive")


class RunReport:
    """Per-epoch training log; CSV is the artifact of record."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.rows = []

    def append(self, **kw):
        self.rows.append([kw[c] for c in self.columns])

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return "%.12g" % v
    return str(v)


class Adam:
    """Vanilla Adam (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params, lr):
        self.params = list(params.values())
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def _label_indices(ds, label):
    return [ds.alphabet.index(ch) for ch in label]


def _check_feasible(ds, model_cfg):
    for s in ds.samples:
        need = len(s.label) + sum(1 for i in range(1, len(s.label))
                                  if s.label[i] == s.label[i - 1])
        if model_cfg.pooled_len < need:
            raise ValueError("label %r of sample %s infeasible for pooled_len %d"
                             % (s.label, s.id, model_cfg.pooled_len))


def _padded_cache(ds, input_len):
    xs = np.empty((len(ds.samples), input_len, data.N_CHANNELS))
    lens = np.empty(len(ds.samples), dtype=np.intp)
    for i, s in enumerate(ds.samples):
        xs[i], mask = data.pad_normalize(s, input_len)
        lens[i] = int(mask.sum())
    return xs, lens


def _valid_tap_len(m, tap_c, model_cfg):
    if tap_c == 1:
        return int(m)
    return max(1, math.ceil(m * model_cfg.pooled_len / model_cfg.input_len))


def _batch_ctc(log_probs, labels_list):
    """Mean CTC loss over the batch; log_probs (b, T', K+1) Tensor."""
    b = log_probs.data.shape[0]
    total = None
    for i, labels in enumerate(labels_list):
        lp_i = de.reshape(de.narrow(log_probs, 0, i, 1), log_probs.data.shape[1:])
        term = ctc.ctc_loss(lp_i, labels)
        total = term if total is None else de.add(total, term)
    return de.mul(total, 1.0 / b)


def _finite(x):
    return np.isfinite(x)


def pretrain(ds, model_cfg, cfg, out_dir=None, tag="main"):
    """CTC-train one network on one domain's dataset.

    Returns (params, RunReport, val_ds).  Deterministic in cfg.seed.
    """
    _check_feasible(ds, model_cfg)
    train_ds, val_ds = data.split(ds, cfg.split_mode, cfg.split_ratio, cfg.seed)
    xs, _ = _padded_cache(train_ds, model_cfg.input_len)
    labels = [_label_indices(train_ds, s.label) for s in train_ds.samples]
    params = model_mod.init_params(model_cfg)
    opt = Adam(params, cfg.lr)
    report = RunReport(["epoch", "ctc_loss", "val_cer", "val_wer"])
    for e in range(cfg.pretrain_epochs):
        rng = np.random.default_rng([cfg.seed, 100, e])
        order = rng.permutation(len(train_ds.samples))
        drop_rng = np.random.default_rng([cfg.seed, 101, e])
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            log_probs, _ = model_mod.forward(params, xs[idx], model_cfg,
                                             train=True, dropout_rng=drop_rng)
            loss = _batch_ctc(log_probs, [labels[i] for i in idx])
            if not _finite(loss.item()):
                raise RuntimeError("training diverged at epoch %d (NaN loss)" % e)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val = evaluate(params, val_ds, model_cfg, max_samples=cfg.eval_max_samples)
        report.append(epoch=e, ctc_loss=float(np.mean(losses)),
                      val_cer=val["cer"], val_wer=val["wer"])
        if out_dir and cfg.checkpoint_every and (e + 1) % cfg.checkpoint_every == 0:
            model_mod.save_checkpoint(params, os.path.join(
                out_dir, "%s_epoch%04d.ckpt" % (tag, e + 1)))
    if out_dir:
        model_mod.save_checkpoint(params, os.path.join(out_dir, "%s_final.ckpt" % tag))
    return params, report, val_ds


def _dml_spec(cfg, batch_seed):
    return DmlLossSpec(kind=cfg.dml_kind, variant=cfg.dml_variant,
                       n_g=cfg.dml_ng, T=cfg.dml_T, seed=batch_seed)


def adaptation_batch_loss(main_params, aux_params, model_cfg, cfg,
                          anchor_x, anchor_labels, anchor_lens,
                          pos_x, pos_labels, pos_lens,
                          neg_x, neg_labels, neg_lens,
                          alpha, spec, drop_rng=None):
    """Scalar adaptation objective for one batch, plus its logged parts.

    total = mean CTC(main on anchors) + mean CTC(aux on positives+negatives)
            + lambda_pair * pairwise loss at the fusion tap.
    """
    c = cfg.fusion_point
    train = drop_rng is not None
    lp_main, taps_main = model_mod.forward(main_params, anchor_x, model_cfg,
                                           train=train, dropout_rng=drop_rng)
    aux_x = np.concatenate([pos_x, neg_x], axis=0)
    lp_aux, taps_aux = model_mod.forward(aux_params, aux_x, model_cfg,
                                         train=train, dropout_rng=drop_rng)
    ctc_main = _batch_ctc(lp_main, anchor_labels)
    ctc_aux = _batch_ctc(lp_aux, list(pos_labels) + list(neg_labels))
    n = anchor_x.shape[0]
    tap_m, tap_a = taps_main[c], taps_aux[c]
    tap_time = tap_m.data.shape[1]

    def bag(tap, i, valid):
        v = min(_valid_tap_len(valid, c, model_cfg), tap_time)
        row = de.reshape(de.narrow(tap, 0, i, 1), tap.data.shape[1:])
        return de.narrow(row, 0, 0, v)

    a_bags = [bag(tap_m, i, anchor_lens[i]) for i in range(n)]
    p_bags = [bag(tap_a, i, pos_lens[i]) for i in range(n)]
    n_bags = [bag(tap_a, n + i, neg_lens[i]) for i in range(n)]
    if cfg.pairing_mode == "triplet":
        pair = triplet_loss(a_bags, p_bags, n_bags, spec, alpha)
    else:
        pairs = ([(a, p, True) for a, p in zip(a_bags, p_bags)]
                 + [(a, ng, False) for a, ng in zip(a_bags, n_bags)])
        pair = contrastive_loss(pairs, spec, alpha)
    total = de.add(de.add(ctc_main, ctc_aux), de.mul(pair, cfg.lambda_pair))
    return total, ctc_main.item(), ctc_aux.item(), pair.item()


def adapt(main_params, aux_params, tablet_ds, paper_ds, model_cfg, cfg,
          out_dir=None):
    """Fine-tune both networks with the pairwise loss at the fusion point."""
    _check_feasible(tablet_ds, model_cfg)
    _check_feasible(paper_ds, model_cfg)
    t_train, t_val = data.split(tablet_ds, cfg.split_mode, cfg.split_ratio, cfg.seed)
    p_train, p_val = data.split(paper_ds, cfg.split_mode, cfg.split_ratio, cfg.seed)
    dictionary = build_pair_dictionary(t_train, p_train)
    beta = cfg.beta if cfg.beta is not None else beta_lookup(
        cfg.dml_kind, cfg.fusion_point, cfg.beta_table)
    policy = MarginPolicy(beta=beta)
    xs_t, len_t = _padded_cache(t_train, model_cfg.input_len)
    xs_p, len_p = _padded_cache(p_train, model_cfg.input_len)
    lab_t = [_label_indices(t_train, s.label) for s in t_train.samples]
    lab_p = [_label_indices(p_train, s.label) for s in p_train.samples]
    opt_main = Adam(main_params, cfg.lr)
    opt_aux = Adam(aux_params, cfg.lr)
    report = RunReport(["epoch", "ctc_main", "ctc_aux", "pair_loss", "alpha",
                        "ed_bound", "tablet_cer", "tablet_wer",
                        "paper_cer", "paper_wer"])
    for e in range(cfg.adapt_epochs):
        e_sched = min(e, cfg.schedule_max_e - 1)
        bound = ed_lower_bound(e_sched, cfg.schedule_max_e)
        rng = np.random.default_rng([cfg.seed, 200, e])
        drop_rng = np.random.default_rng([cfg.seed, 201, e])
        order = rng.permutation(len(t_train.samples))
        ep = {"ctc_main": [], "ctc_aux": [], "pair": [], "alpha": []}
        for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
            anchors = [int(i) for i in order[lo:lo + cfg.batch_size]]
            triplets, _ = select_triplets(anchors, dictionary, e_sched,
                                          cfg.schedule_max_e,
                                          seed=[cfg.seed, 202, e, bi])
            if not triplets:
                continue
            alpha = dynamic_margin(triplets, policy)
            ai = [t.anchor for t in triplets]
            pi = [t.positive for t in triplets]
            ni = [t.negative for t in triplets]
            spec = _dml_spec(cfg, batch_seed=cfg.seed + 1000 * e + bi)
            opt_main.zero_grad()
            opt_aux.zero_grad()
            total, cm, ca, pl = adaptation_batch_loss(
                main_params, aux_params, model_cfg, cfg,
                xs_t[ai], [lab_t[i] for i in ai], len_t[ai],
                xs_p[pi], [lab_p[i] for i in pi], len_p[pi],
                xs_p[ni], [lab_p[i] for i in ni], len_p[ni],
                alpha, spec, drop_rng=drop_rng)
            if not _finite(total.item()):
                raise RuntimeError("adaptation diverged at epoch %d (NaN loss)" % e)
            total.backward()
            opt_main.step()
            opt_aux.step()
            ep["ctc_main"].append(cm)
            ep["ctc_aux"].append(ca)
            ep["pair"].append(pl)
            ep["alpha"].append(alpha)
        val_t = evaluate(main_params, t_val, model_cfg, max_samples=cfg.eval_max_samples)
        val_p = evaluate(aux_params, p_val, model_cfg, max_samples=cfg.eval_max_samples)
        report.append(epoch=e, ctc_main=float(np.mean(ep["ctc_main"])),
                      ctc_aux=float(np.mean(ep["ctc_aux"])),
                      pair_loss=float(np.mean(ep["pair"])),
                      alpha=float(np.mean(ep["alpha"])), ed_bound=bound,
                      tablet_cer=val_t["cer"], tablet_wer=val_t["wer"],
                      paper_cer=val_p["cer"], paper_wer=val_p["wer"])
        if out_dir and cfg.checkpoint_every and (e + 1) % cfg.checkpoint_every == 0:
            model_mod.save_checkpoint(main_params, os.path.join(
                out_dir, "adapt_main_epoch%04d.ckpt" % (e + 1)))
            model_mod.save_checkpoint(aux_params, os.path.join(
                out_dir, "adapt_aux_epoch%04d.ckpt" % (e + 1)))
    if out_dir:
        model_mod.save_checkpoint(main_params, os.path.join(out_dir, "adapt_main_final.ckpt"))
        model_mod.save_checkpoint(aux_params, os.path.join(out_dir, "adapt_aux_final.ckpt"))
    return main_params, aux_params, report, (t_val, p_val)


def evaluate(params, ds, model_cfg, lm_model=None, gamma=1.0, max_samples=0,
             eval_batch=64):
    """Decode every sample and report {cer, wer}.

    Without an LM: greedy best-path decoding.  With one: threshold path
    enumeration plus n-gram rescoring at weight gamma.
    """
    samples = ds.samples[:max_samples] if max_samples else ds.samples
    sub = data.Dataset(samples, ds.alphabet) if samples else ds
    xs, _ = _padded_cache(sub, model_cfg.input_len)
    def decode(lp):
        if lm_model is None:
            return ctc.best_path_decode(lp)
        cands = lm_mod.enumerate_paths(np.exp(lp))
        return list(lm_mod.rescore(cands, lm_model, gamma, ds.alphabet).word)

    preds, refs = [], []
    pool = ThreadPoolExecutor(max_workers=thread_count()) if lm_model is not None else None
    try:
        for lo in range(0, len(samples), eval_batch):
            batch = xs[lo:lo + eval_batch]
            log_probs, _ = model_mod.forward(params, batch, model_cfg, train=False)
            rows = [log_probs.data[i] for i in range(batch.shape[0])]
            decoded = pool.map(decode, rows) if pool else map(decode, rows)
            for s, word_idx in zip(samples[lo:lo + eval_batch], decoded):
                preds.append("".join(ds.alphabet[k] for k in word_idx))
                refs.append(s.label)
    finally:
        if pool:
            pool.shutdown()
    return {"cer": cer(preds, refs), "wer": wer(preds, refs)}
