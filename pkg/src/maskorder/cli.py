"""Command-line interface tying the pipeline together.

Subcommands: gen-data, label, train, sample, analyze-merge, sweep, replay,
self-bleu. A JSON file passed via --config supplies defaults for any long
option of the chosen subcommand (command-line flags win).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import harness
from .core import SampleRecord, Vocabulary, load_records, save_records, validate_partition
from .denoiser import MarkovDenoiser, MarkovModel, RecordingDenoiser, ReplayDenoiser, TemperedDenoiser
from .indicator import (
    IndicatorConfig,
    IndicatorModel,
    TrainHyper,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .labeling import LabelingConfig, build_dataset, load_dataset, save_dataset
from .merge import final_results_preserving, merge_trajectory
from .ni_sampler import NIConfig, ni_decode, oracle_indicator_decode
from .orders import DecodeConfig, decode


def _add_denoiser_args(p):
    p.add_argument("--denoiser", required=True, help="Markov model JSON config")
    p.add_argument("--dtemp", type=float, default=None, help="tempering temperature")
    p.add_argument("--dnoise", type=float, default=0.0, help="tempering noise scale")
    p.add_argument("--dseed", type=int, default=0, help="tempering noise seed")


def _build_denoiser(args):
    model = MarkovModel.load(args.denoiser)
    den = MarkovDenoiser(model)
    if args.dtemp is not None or args.dnoise:
        den = TemperedDenoiser(
            den, temperature=args.dtemp or 1.0, noise_scale=args.dnoise, seed=args.dseed
        )
    return model, den


def _decode_cfg(args):
    threshold = args.epsilon if args.sampler == "threshold" else None
    return DecodeConfig(
        rule=args.rule, threshold=threshold, temperature=args.temperature, seed=args.seed
    )


def cmd_gen_data(args):
    model, den = _build_denoiser(args)
    records = harness.gen_data(
        den,
        model,
        prompt_len=args.prompt_len,
        gen_len=args.gen_len,
        count=args.count,
        cfg=_decode_cfg(args),
        seed=args.seed,
        threads=args.threads,
    )
    save_records(records, args.out)
    print(f"wrote {len(records)} trajectories to {args.out}")


def cmd_label(args):
    _, den = _build_denoiser(args)
    records = load_records(args.traj)
    rng = np.random.default_rng(args.seed)
    cfg = LabelingConfig(k1=args.k1, k2=args.k2, min_pos_prob=args.min_pos_prob)
    ds = build_dataset(records, den, args.cuts, rng, cfg)
    save_dataset(ds, args.out)
    print(
        f"wrote {len(ds.examples)} examples to {args.out} "
        f"(positive fraction {ds.positive_fraction:.3f})"
    )


def cmd_train(args):
    ds = load_dataset(args.data)
    if not ds.config:
        sys.exit("dataset meta file missing; cannot infer feature geometry")
    cfg = IndicatorConfig(
        vocab_size=ds.config["V"],
        k1=ds.config["K1"],
        k2=ds.config["K2"],
        feature_dim=ds.config["F"],
        emb_dim=args.emb_dim,
        hidden_dim=args.hidden_dim,
        depth=args.depth,
    )
    rng = np.random.default_rng(args.seed)
    model = IndicatorModel.init(cfg, rng)
    hyper = TrainHyper(lr=args.lr, batch_size=args.batch, epochs=args.epochs)
    trained, history = train(model, ds, hyper, rng)
    save_checkpoint(trained, args.out)
    last = history[-1] if history else {}
    print(
        f"trained {trained.num_params} parameters for {len(history)} epochs; "
        f"final: {json.dumps(last)}"
    )


def cmd_sample(args):
    model, den = _build_denoiser(args)
    if args.sampler == "merge-oracle":
        references = load_records(args.traj)
        records = []
        for ref in references:
            merged, _ = merge_trajectory(ref.trajectory, ref.base(), den)
            records.append(
                SampleRecord(ref.id, ref.vocab, ref.prompt, ref.gen_len, merged)
            )
    elif args.sampler == "ni":
        indicator = load_checkpoint(args.ckpt, expected_vocab_size=den.vocab.size)
        ni_cfg = NIConfig(
            base=DecodeConfig(threshold=args.base_epsilon, seed=args.seed),
            eps_phi=args.eps_phi,
            k1=indicator.config.k1,
            k2=indicator.config.k2,
            temperature=args.temperature if args.mode == "random" else None,
        )
        records = harness.gen_data(
            den,
            model,
            prompt_len=args.prompt_len,
            gen_len=args.gen_len,
            count=args.count,
            cfg=DecodeConfig(seed=args.seed),
            seed=args.seed,
            indicator=indicator,
            ni_cfg=ni_cfg,
            threads=args.threads,
        )
    else:
        records = harness.gen_data(
            den,
            model,
            prompt_len=args.prompt_len,
            gen_len=args.gen_len,
            count=args.count,
            cfg=_decode_cfg(args),
            seed=args.seed,
            threads=args.threads,
        )
    save_records(records, args.out)
    print(f"wrote {len(records)} trajectories to {args.out}")


def cmd_analyze_merge(args):
    _, den = _build_denoiser(args)
    records = load_records(args.traj)
    with open(args.report, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "original_steps", "merged_steps", "speedup", "preserved"])
        for rec in records:
            fn = merge_trajectory if args.mode == "traj" else final_results_preserving
            _, report = fn(rec.trajectory, rec.base(), den)
            writer.writerow(
                [
                    rec.id,
                    report.original_steps,
                    report.merged_steps,
                    f"{report.speedup:.6f}",
                    str(report.preserved).lower(),
                ]
            )
    print(f"wrote merge report for {len(records)} trajectories to {args.report}")


def cmd_sweep(args):
    model, den = _build_denoiser(args)
    indicator = load_checkpoint(args.ckpt, expected_vocab_size=den.vocab.size)
    rows, summary = harness.sweep(
        den,
        model,
        indicator,
        prompt_len=args.prompt_len,
        gen_len=args.gen_len,
        count=args.count,
        seed=args.seed,
        timings=args.timings,
    )
    harness.write_sweep_csv(rows, args.out)
    with open(args.summary, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(
        f"wrote {len(rows)} sweep rows to {args.out}; "
        f"{summary['ni_points_dominating']} NI points dominate "
        f"(pareto_ok={summary['pareto_ok']})"
    )


def cmd_replay(args):
    den = ReplayDenoiser(args.log, Vocabulary(args.vocab_size), strict=args.strict)
    references = load_records(args.traj)
    mismatches = 0
    records = []
    for ref in references:
        cfg = DecodeConfig(
            rule=args.rule,
            threshold=args.epsilon if args.sampler == "threshold" else None,
            seed=ref.trajectory.meta.get("seed", args.seed),
        )
        traj = decode(den, ref.prompt, ref.gen_len, cfg)
        records.append(SampleRecord(ref.id, ref.vocab, ref.prompt, ref.gen_len, traj))
        if traj.steps != ref.trajectory.steps:
            mismatches += 1
    if args.out:
        save_records(records, args.out)
    print(f"replayed {len(records)} trajectories; {mismatches} differ from the input file")
    if mismatches:
        sys.exit(1)


def cmd_self_bleu(args):
    from .core import final_tokens

    records = load_records(args.traj)
    samples = [final_tokens(r.trajectory) for r in records]
    value = harness.self_bleu(samples, n_gram=args.n)
    print(f"self-bleu-{args.n}: {value:.6f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="maskorder")
    parser.add_argument("--config", help="JSON file with default option values")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("gen-data", help="decode sampled prompts into a trajectory file")
    _add_denoiser_args(p)
    common(p)
    p.add_argument("--sampler", choices=["full", "threshold"], default="threshold")
    p.add_argument("--rule", choices=["prob", "margin", "negentropy"], default="prob")
    p.add_argument("--epsilon", type=float, default=0.8)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--prompt-len", type=int, default=8)
    p.add_argument("--gen-len", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("label", help="build indicator training data from trajectories")
    _add_denoiser_args(p)
    common(p)
    p.add_argument("--traj", required=True)
    p.add_argument("--cuts", type=int, default=4)
    p.add_argument("--min-pos-prob", type=float, default=0.15)
    p.add_argument("--k1", type=int, default=4)
    p.add_argument("--k2", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the indicator on a labeled dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--emb-dim", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="decode with a chosen sampler")
    _add_denoiser_args(p)
    common(p)
    p.add_argument("--sampler", choices=["full", "threshold", "ni", "merge-oracle"], required=True)
    p.add_argument("--rule", choices=["prob", "margin", "negentropy"], default="prob")
    p.add_argument("--epsilon", type=float, default=0.9)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--prompt-len", type=int, default=8)
    p.add_argument("--gen-len", type=int, default=32)
    p.add_argument("--ckpt", help="indicator checkpoint (sampler=ni)")
    p.add_argument("--eps-phi", type=float, default=0.9)
    p.add_argument("--base-epsilon", type=float, default=0.9)
    p.add_argument("--mode", choices=["greedy", "random"], default="greedy")
    p.add_argument("--traj", help="reference trajectories (sampler=merge-oracle)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("analyze-merge", help="merge analyses over recorded trajectories")
    _add_denoiser_args(p)
    common(p)
    p.add_argument("--traj", required=True)
    p.add_argument("--mode", choices=["traj", "final"], default="traj")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_analyze_merge)

    p = sub.add_parser("sweep", help="threshold and indicator trade-off grids")
    _add_denoiser_args(p)
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--prompt-len", type=int, default=8)
    p.add_argument("--gen-len", type=int, default=32)
    p.add_argument("--timings", action="store_true", help="fill wall_time with measured seconds")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="re-decode trajectories from a distribution log")
    common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--strict", action="store_true", help="key rows by query order, not state hash")
    p.add_argument("--sampler", choices=["full", "threshold"], default="threshold")
    p.add_argument("--rule", choices=["prob", "margin", "negentropy"], default="prob")
    p.add_argument("--epsilon", type=float, default=0.8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("self-bleu", help="diversity of final sequences in a trajectory file")
    common(p)
    p.add_argument("--traj", required=True)
    p.add_argument("--n", type=int, choices=[1, 2], default=1)
    p.set_defaults(func=cmd_self_bleu)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            defaults = json.load(fh)
        specified = {a.lstrip("-").replace("-", "_").split("=")[0] for a in (argv or sys.argv[1:])}
        for key, value in defaults.items():
            attr = key.replace("-", "_")
            if hasattr(args, attr) and attr not in specified:
                setattr(args, attr, value)
    args.func(args)


if __name__ == "__main__":
    main()
