"""Command line entry point.

Exit codes: 0 ok, 2 usage, 3 config, 4 io, 5 verification failure,
6 numerical abort. ``SEDD_OUTPUT_DIR`` overrides the configured output
directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import losses, samplers, training, verify
from .config import RunConfig
from .errors import (ArgumentError, CheckpointError, ConfigError, IngestionError,
                     NumericalAbort, SeddError)
from .likelihood import corpus_eval
from .scores import model_from_hparams

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY, EXIT_NUMERIC = 0, 2, 3, 4, 5, 6


def output_dir(cfg_dir: str | None, flag: str | None) -> Path:
    env = os.environ.get("SEDD_OUTPUT_DIR")
    return Path(env or flag or cfg_dir or "runs")


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _format_sequences(x, vocab) -> str:
    if vocab is not None:
        return "".join(corpus_mod.detokenize(row, vocab) + "\n" for row in x)
    return "".join(" ".join(map(str, row)) + "\n" for row in x)


# ------------------------------------------------------------------ subcommands


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.train = {**cfg.train, "seed": args.seed}
    if args.steps is not None:
        cfg.train = {**cfg.train, "total_steps": args.steps}
    cfg.validate()
    spec, schedule, tcfg = cfg.spec(), cfg.noise_schedule(), cfg.train_config()
    if "train" not in cfg.corpus:
        raise ConfigError("corpus.train is required for training")
    data = corpus_mod.load_corpus(cfg.corpus["train"])
    if data.d != cfg.d or data.n != spec.n:
        raise ConfigError(f"corpus is n={data.n}, d={data.d}; config expects n={spec.n}, d={cfg.d}")
    val = corpus_mod.load_corpus(cfg.corpus["valid"]) if "valid" in cfg.corpus else None
    truth = data.empirical() if tcfg.exact else None
    model = model_from_hparams(spec, cfg.model)
    out = output_dir(cfg.output_dir, args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        def emit(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        ckpt = training.train(tcfg, data, model, spec, schedule, truth=truth, val_corpus=val,
                              on_metrics=emit, run_config=cfg.to_dict())
    training.save_checkpoint(out / "checkpoint.sedd", ckpt)
    cfg.save(out / "config.json")
    print(f"wrote {out / 'checkpoint.sedd'}")
    return EXIT_OK


def _load_model(args):
    ckpt = training.load_checkpoint(args.checkpoint)
    model, spec, schedule = training.restore(ckpt, use_ema=not args.raw)
    return ckpt, model, spec, schedule


def _sampler(ckpt, args) -> samplers.SamplerConfig:
    cfg = dict(ckpt.config.get("sampling", {}))
    cfg.pop("num_samples", None)
    for key in ("method", "steps", "grid"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    try:
        return samplers.SamplerConfig(**cfg)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def _vocab(args):
    return corpus_mod.read_vocab(args.vocab) if args.vocab else None


def cmd_sample(args) -> int:
    ckpt, model, spec, schedule = _load_model(args)
    scfg = _sampler(ckpt, args)
    vocab = _vocab(args)
    rng = np.random.default_rng(args.seed)
    x = samplers.sample(model, spec, schedule, scfg, model.d, rng, args.num_samples)
    _write(_format_sequences(x, vocab), args.out)
    return EXIT_OK


def cmd_infill(args) -> int:
    ckpt, model, spec, schedule = _load_model(args)
    scfg = _sampler(ckpt, args)
    vocab = _vocab(args)
    prompt = samplers.PromptSpec.parse(args.prompt)
    rng = np.random.default_rng(args.seed)
    x = samplers.infill(model, spec, schedule, scfg, model.d, prompt, rng, args.num_samples)
    _write(_format_sequences(x, vocab), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt, model, spec, schedule = _load_model(args)
    data = corpus_mod.load_corpus(args.corpus)
    if data.d != model.d or data.n != spec.n:
        raise ConfigError("evaluation corpus does not match the checkpoint's n and d")
    seqs = data.sequences[: args.max_sequences] if args.max_sequences else data.sequences
    eta = float(ckpt.config.get("process", {}).get("eta", 1e-5))
    rep = corpus_eval(model, seqs, spec, schedule, args.mc_samples, np.random.default_rng(args.seed), eta)
    _write(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_all(args.seed)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in results]
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def landscape_rows(a: float = 0.2, s_min: float = 0.01, s_max: float = 2.0, num: int = 200):
    """``(s, csm, se)`` rows on a linear grid of ``s``, plus ``s = a`` itself."""
    if s_min <= 0:
        raise ArgumentError("s range must be positive for the score entropy column")
    s = np.union1d(np.linspace(s_min, s_max, num), [a])
    return np.column_stack([s, losses.csm_term(s, a), losses.se_term(s, a)])


def cmd_landscape(args) -> int:
    rows = landscape_rows(args.a, args.s_min, args.s_max, args.num)
    text = "s\tcsm\tse\n" + "".join(f"{s:.6g}\t{c:.6g}\t{e:.6g}\n" for s, c, e in rows)
    _write(text, args.out)
    return EXIT_OK


def cmd_corpus(args) -> int:
    if args.kind == "iid":
        probs = json.loads(args.probs) if args.probs else np.full(args.n, 1.0 / args.n)
        data = corpus_mod.gen_iid(args.n, args.d, probs, args.count, args.seed)
    elif args.kind == "markov":
        rng = np.random.default_rng(args.chain_seed)
        trans = rng.dirichlet(np.full(args.n, 0.5), size=args.n)
        init = corpus_mod.markov_stationary(trans)
        data = corpus_mod.gen_markov(args.n, args.d, init, trans, args.count, args.seed)
    else:
        vocab = _vocab(args) or corpus_mod.default_vocab()
        text = Path(args.text).read_text(encoding="utf-8")
        data = corpus_mod.tokenize_chars(text, vocab, args.d, args.unknown)
    corpus_mod.save_corpus(args.out, data)
    print(f"wrote {len(data)} sequences (n={data.n}, d={data.d}) to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sedd", description="Score entropy discrete diffusion toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="override train.total_steps")
    t.add_argument("--output-dir")
    t.set_defaults(func=cmd_train)

    def sampling_flags(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--method", choices=samplers.METHODS)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--grid", choices=samplers.GRIDS)
        sp.add_argument("--num-samples", type=int, default=16)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--vocab", help="print characters instead of ids")
        sp.add_argument("--raw", action="store_true", help="use raw instead of EMA parameters")
        sp.add_argument("--out")

    s = sub.add_parser("sample", help="unconditional samples")
    sampling_flags(s)
    s.set_defaults(func=cmd_sample)

    i = sub.add_parser("infill", help="samples conditioned on fixed positions")
    sampling_flags(i)
    i.add_argument("--prompt", required=True, help='filled positions, e.g. "0:3,5:1"')
    i.set_defaults(func=cmd_infill)

    e = sub.add_parser("eval", help="likelihood bound on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--mc-samples", type=int, default=1000)
    e.add_argument("--max-sequences", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--raw", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the oracle self-checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    ls = sub.add_parser("landscape", help="tabulate the two score losses against s")
    ls.add_argument("--a", type=float, default=0.2, help="ground-truth ratio")
    ls.add_argument("--s-min", type=float, default=0.01)
    ls.add_argument("--s-max", type=float, default=2.0)
    ls.add_argument("--num", type=int, default=200)
    ls.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    ls.add_argument("--out")
    ls.set_defaults(func=cmd_landscape)

    c = sub.add_parser("corpus", help="write a toy or char-level corpus file")
    c.add_argument("kind", choices=("iid", "markov", "text"))
    c.add_argument("--n", type=int, default=8)
    c.add_argument("--d", type=int, default=4)
    c.add_argument("--count", type=int, default=10000)
    c.add_argument("--probs", help="JSON list of token probabilities (iid)")
    c.add_argument("--text", help="input text file (text)")
    c.add_argument("--vocab")
    c.add_argument("--unknown", help="map out-of-vocabulary characters to this one")
    c.add_argument("--seed", type=int, default=0, help="sampling seed")
    c.add_argument("--chain-seed", type=int, default=0,
                   help="seed of the random transition matrix (markov); share it across splits")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corpus)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IngestionError, CheckpointError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArgumentError, SeddError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
