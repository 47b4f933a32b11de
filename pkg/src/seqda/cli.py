"""Command-line entry point.

Subcommands: gen-data, pretrain, adapt, evaluate, build-lm, rescore,
pairs-report.  Every run writes a manifest (options + seeds + version) into
the output directory; CSV files are the artifacts of record, SVG plots are
rendered alongside them.  Exit codes: 0 success, 2 usage error, 1 runtime
failure."""

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from . import data, lm as lm_mod, model as model_mod, trainer as trainer_mod
from .config import load_flat_config, write_manifest
from .pairing import build_pair_dictionary
from .trainer import TrainConfig


class UsageError(Exception):
    pass


def _require_file(path, flag):
    if not os.path.isfile(path):
        raise UsageError("%s: file not found: %s" % (flag, path))
    return path


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _plot_lines(path, xs, series, xlabel, ylabel, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_bars(path, keys, values, xlabel, ylabel, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([str(k) for k in keys], values)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _pick(cfg_dict, cls, **extra):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {k: v for k, v in cfg_dict.items() if k in names}
    kwargs.update(extra)
    return cls(**kwargs)


def _train_and_model_cfg(cfg_dict, alphabet, seed_override=None):
    model_cfg = _pick(cfg_dict, model_mod.ModelConfig,
                      num_classes=len(alphabet) + 1)
    train_cfg = _pick(cfg_dict, TrainConfig)
    if seed_override is not None:
        train_cfg.seed = seed_override
        model_cfg.seed = seed_override
    return model_cfg, train_cfg


def cmd_gen_data(args):
    cfg_dict = load_flat_config(_require_file(args.config, "--config"))
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    words = cfg_dict.get("words")
    if isinstance(words, str):
        cfg_dict["words"] = words.split(",")
    synth_cfg = _pick(cfg_dict, data.SynthConfig)
    tablet, paper = data.synth_generate(synth_cfg)
    out = _outdir(args.out)
    data.save_dataset(tablet, os.path.join(out, "tablet.jsonl"))
    data.save_dataset(paper, os.path.join(out, "paper.jsonl"))
    write_manifest(out, "gen-data", cfg_dict, {"seed": synth_cfg.seed})
    print("wrote %d tablet / %d paper samples to %s" % (len(tablet), len(paper), out))


def _report_plot(report, out, stem, cols):
    epochs = report.column("epoch")
    series = {c: report.column(c) for c in cols if c in report.columns}
    _plot_lines(os.path.join(out, stem + ".svg"), epochs, series,
                "epoch", "value", stem)


def cmd_pretrain(args):
    cfg_dict = load_flat_config(_require_file(args.config, "--config"))
    ds = data.load_dataset(_require_file(args.data, "--data"))
    model_cfg, train_cfg = _train_and_model_cfg(cfg_dict, ds.alphabet, args.seed)
    out = _outdir(args.out)
    params, report, _ = trainer_mod.pretrain(ds, model_cfg, train_cfg,
                                             out_dir=out, tag="pretrain")
    report.write_csv(os.path.join(out, "pretrain_report.csv"))
    _report_plot(report, out, "pretrain_curves", ["ctc_loss", "val_cer", "val_wer"])
    write_manifest(out, "pretrain", cfg_dict, {"seed": train_cfg.seed})
    print("pretrained %d epochs; final CTC loss %.4f"
          % (train_cfg.pretrain_epochs, report.column("ctc_loss")[-1]))


def cmd_adapt(args):
    cfg_dict = load_flat_config(_require_file(args.config, "--config"))
    tablet = data.load_dataset(_require_file(args.tablet, "--tablet"))
    paper = data.load_dataset(_require_file(args.paper, "--paper"))
    main_params = model_mod.load_checkpoint(_require_file(args.main_ckpt, "--main-ckpt"))
    aux_params = model_mod.load_checkpoint(_require_file(args.aux_ckpt, "--aux-ckpt"))
    alphabet = "".join(sorted(set(tablet.alphabet) | set(paper.alphabet)))
    tablet = data.Dataset(tablet.samples, alphabet)
    paper = data.Dataset(paper.samples, alphabet)
    model_cfg, train_cfg = _train_and_model_cfg(cfg_dict, alphabet, args.seed)
    if args.c is not None:
        train_cfg.fusion_point = args.c
    if args.dml is not None:
        train_cfg.dml_kind = args.dml
    if args.mode is not None:
        train_cfg.pairing_mode = args.mode
    out = _outdir(args.out)
    _, _, report, _ = trainer_mod.adapt(main_params, aux_params, tablet, paper,
                                        model_cfg, train_cfg, out_dir=out)
    report.write_csv(os.path.join(out, "adapt_report.csv"))
    _report_plot(report, out, "adapt_error_curves",
                 ["tablet_cer", "tablet_wer", "paper_cer", "paper_wer"])
    _report_plot(report, out, "adapt_loss_curves",
                 ["ctc_main", "ctc_aux", "pair_loss"])
    write_manifest(out, "adapt", cfg_dict, {"seed": train_cfg.seed})
    print("adapted %d epochs; final tablet CER %.4f"
          % (train_cfg.adapt_epochs, report.column("tablet_cer")[-1]))


def cmd_evaluate(args):
    ds = data.load_dataset(_require_file(args.data, "--data"))
    params = model_mod.load_checkpoint(_require_file(args.ckpt, "--ckpt"))
    cfg_dict = load_flat_config(_require_file(args.config, "--config"))
    model_cfg = _pick(cfg_dict, model_mod.ModelConfig,
                      num_classes=len(ds.alphabet) + 1)
    lm_model = None
    if args.ngram:
        lm_model = lm_mod.load_ngram(_require_file(args.ngram, "--ngram"))
    res = trainer_mod.evaluate(params, ds, model_cfg, lm_model=lm_model,
                               gamma=args.gamma)
    out = _outdir(args.out)
    with open(os.path.join(out, "metrics.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["cer", "%.12g" % res["cer"]])
        w.writerow(["wer", "%.12g" % res["wer"]])
    write_manifest(out, "evaluate", {"gamma": args.gamma, "ngram": args.ngram},
                   {"seed": None})
    print("CER %.4f WER %.4f" % (res["cer"], res["wer"]))


def cmd_build_lm(args):
    with open(_require_file(args.corpus, "--corpus"), "r", encoding="utf-8") as fh:
        corpus = fh.read()
    model = lm_mod.build_ngram(corpus, args.ngram)
    out = _outdir(args.out)
    path = os.path.join(out, "%d-gram.lm" % args.ngram)
    lm_mod.save_ngram(model, path)
    write_manifest(out, "build-lm", {"corpus": args.corpus, "n": args.ngram},
                   {"seed": None})
    print("wrote %s (%d contexts)" % (path, len(model.counts)))


def cmd_rescore(args):
    ds = data.load_dataset(_require_file(args.data, "--data"))
    params = model_mod.load_checkpoint(_require_file(args.ckpt, "--ckpt"))
    cfg_dict = load_flat_config(_require_file(args.config, "--config"))
    model_cfg = _pick(cfg_dict, model_mod.ModelConfig,
                      num_classes=len(ds.alphabet) + 1)
    lm_model = lm_mod.load_ngram(_require_file(args.ngram, "--ngram"))
    out = _outdir(args.out)
    xs, _ = trainer_mod._padded_cache(ds, model_cfg.input_len)
    with open(os.path.join(out, "rescored.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "reference", "greedy", "rescored"])
        for lo in range(0, len(ds.samples), 64):
            log_probs, _ = model_mod.forward(params, xs[lo:lo + 64], model_cfg)
            for i, s in enumerate(ds.samples[lo:lo + 64]):
                lp = log_probs.data[i]
                from .ctc import best_path_decode
                greedy = "".join(ds.alphabet[k] for k in best_path_decode(lp))
                cands = lm_mod.enumerate_paths(np.exp(lp))
                best = lm_mod.rescore(cands, lm_model, args.gamma, ds.alphabet)
                w.writerow([s.id, s.label, greedy,
                            "".join(ds.alphabet[k] for k in best.word)])
    write_manifest(out, "rescore", {"gamma": args.gamma, "ngram": args.ngram},
                   {"seed": None})
    print("wrote rescored.csv for %d samples" % len(ds.samples))


def cmd_pairs_report(args):
    tablet = data.load_dataset(_require_file(args.tablet, "--tablet"))
    paper = data.load_dataset(_require_file(args.paper, "--paper"))
    dictionary = build_pair_dictionary(tablet, paper)
    out = _outdir(args.out)
    counts = dictionary.counts()
    with open(os.path.join(out, "pair_histogram.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ed", "pairs"])
        for d in sorted(counts):
            w.writerow([d, counts[d]])
    dictionary.export_csv(os.path.join(out, "pairs.csv"), tablet, paper)
    _plot_bars(os.path.join(out, "pair_histogram.svg"), sorted(counts),
               [counts[d] for d in sorted(counts)], "edit distance",
               "tablet-paper pairs", "pairs per edit distance")
    write_manifest(out, "pairs-report", {"tablet": args.tablet, "paper": args.paper},
                   {"seed": None})
    print("pair counts: %s" % counts)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="seqda",
        description="Tablet/paper domain adaptation for sensor-pen word recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic tablet/paper datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="CTC-pretrain one network")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="domain-adaptation fine-tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--tablet", required=True)
    p.add_argument("--paper", required=True)
    p.add_argument("--main-ckpt", required=True)
    p.add_argument("--aux-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--c", type=int, help="fusion point override")
    p.add_argument("--dml", help="DML loss kind override")
    p.add_argument("--mode", choices=["triplet", "contrastive"])
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="CER/WER of a checkpoint on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ngram")
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("build-lm", help="build a character n-gram model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ngram", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_lm)

    p = sub.add_parser("rescore", help="decode a dataset with LM rescoring")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ngram", required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("pairs-report", help="pair-count histogram by edit distance")
    p.add_argument("--tablet", required=True)
    p.add_argument("--paper", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pairs_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 2
    try:
        args.func(args)
    except UsageError as e:
        print("error: %s" % e, file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
