"""Command line interface.

Subcommands: synth, mask, train, eval, experiment, report.  Exit codes:
0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import bde, selftrain, tagger
from .annotation import mask_entities, partial_from_labels, to_corpus, write_kept_sidecar
from .corpus import (ConfigError, ParseError, SynthConfig, generate_synthetic,
                     infer_scheme, parse_conll, serialize_conll)
from .evaluation import evaluate_model
from .experiment import ExperimentConfig, MethodSpec, run_experiment, verify_report

USAGE_ERROR = 2


def _read_corpus(path: str, scheme=None, name: str = ""):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if scheme is None:
        scheme = infer_scheme(text)
    return parse_conll(text, scheme, name or os.path.basename(path))


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def cmd_synth(args: argparse.Namespace) -> int:
    data = _load_json(args.config)
    known = {f.name for f in SynthConfig.__dataclass_fields__.values()}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
    if "categories" in data:
        data["categories"] = tuple(data["categories"])
    if data.get("templates") is not None:
        data["templates"] = tuple(data["templates"])
    if data.get("gazetteers") is not None:
        data["gazetteers"] = {c: tuple(v) for c, v in data["gazetteers"].items()}
    config = SynthConfig(**data)
    if args.n_sentences is not None:
        config = replace(config, n_sentences=args.n_sentences)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    corpus = generate_synthetic(config)
    _write_text(args.out, serialize_conll(corpus))
    print(f"wrote {len(corpus.sentences)} sentences to {args.out}")
    return 0


def cmd_mask(args: argparse.Namespace) -> int:
    corpus = _read_corpus(args.corpus)
    seed = args.seed if args.seed is not None else 0
    partial, kept = mask_entities(corpus, args.fraction, seed)
    masked = to_corpus(partial, corpus.scheme, name=f"{corpus.name}-masked")
    _write_text(args.out, serialize_conll(masked))
    if args.kept_out:
        write_kept_sidecar(args.kept_out, kept)
    total = corpus.total_entities()
    print(f"kept {len(kept)} of {total} entities "
          f"(fraction {args.fraction!r}) -> {args.out}")
    return 0


def _train_method(args: argparse.Namespace):
    """Shared train path; returns (model, val_f1, traces, extras)."""
    spec = MethodSpec.parse(args.method)
    with open(args.train, "r", encoding="utf-8") as fh:
        train_text = fh.read()
    with open(args.dev, "r", encoding="utf-8") as fh:
        dev_text = fh.read()
    scheme = infer_scheme(train_text, dev_text)
    train_c = parse_conll(train_text, scheme, os.path.basename(args.train))
    dev_c = parse_conll(dev_text, scheme, os.path.basename(args.dev))
    partial = partial_from_labels(train_c)

    overrides = _load_json(args.config)
    tagger_cfg = tagger.TaggerConfig(**overrides.get("tagger", {}))
    if args.seed is not None:
        tagger_cfg = replace(tagger_cfg, seed=args.seed)
    st_cfg = selftrain.SelfTrainConfig(
        tagger=tagger_cfg,
        teacher_refresh_period=overrides.get("teacher_refresh_period", 1),
        self_train_epochs=overrides.get("self_train_epochs", 20),
        hard_targets=overrides.get("hard_targets", False))

    extras = {}
    if spec.kind == "bde":
        cfg = bde.BdeConfig(overrides.get("bde_k", 2), spec.inner, spec.final,
                            st_cfg, seed=tagger_cfg.seed)
        out = bde.run_bde(partial, dev_c, cfg)
        extras["lineage"] = out.lineage
        extras["soft"] = out.soft
        return out.model, out.val_f1, out.traces, extras
    result = selftrain.run_method(spec.kind, partial, dev_c, st_cfg)
    return result.model, result.val_f1, result.traces, extras


def cmd_train(args: argparse.Namespace) -> int:
    model, val_f1, traces, extras = _train_method(args)
    os.makedirs(args.out, exist_ok=True)
    tagger.save_checkpoint(model, os.path.join(args.out, "checkpoint.npz"))
    for trace in traces:
        trace.write_csv(os.path.join(args.out, f"trace_{trace.stage}.csv"))
    if "lineage" in extras:
        extras["lineage"].write_csv(os.path.join(args.out, "lineage.csv"))
        bde.save_soft(extras["soft"], os.path.join(args.out, "soft.bin"))
    print(f"val_f1={val_f1!r} checkpoint={os.path.join(args.out, 'checkpoint.npz')}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = tagger.load_checkpoint(args.checkpoint)
    corpus = _read_corpus(args.corpus, scheme=model.scheme)
    res = evaluate_model(model, corpus)
    rows = [("micro", res.precision, res.recall, res.f1)]
    if args.per_category:
        rows += [(c, *res.per_category[c]) for c in sorted(res.per_category)]
    lines = ["category,precision,recall,f1"]
    lines += [f"{name},{p!r},{r!r},{f!r}" for name, p, r, f in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        print(text, end="")
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    data = _load_json(args.config)
    out_dir = args.out or data.get("out_dir") or "runs/experiment"
    config = ExperimentConfig.from_dict(data)
    if args.seed is not None:
        config = replace(config, mask_seed=args.seed)
    results = run_experiment(config, out_dir)
    print(f"results: {results}")
    print(f"summary: {os.path.join(out_dir, 'summary.md')}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    problems = verify_report(args.run_dir, tolerance=args.tolerance)
    if problems:
        for p in problems:
            print(f"MISMATCH {p}")
        return 1
    print(f"report OK: summary.md matches results.csv within {args.tolerance!r}")
    return 0


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partialner",
        description="Sequence labelling under partial annotation: synthetic data, "
                    "entity masking, training, evaluation and experiment matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic CoNLL corpus")
    p.add_argument("--config", help="JSON generator config")
    p.add_argument("--seed", type=int, help="generator seed override")
    p.add_argument("--n-sentences", type=int, help="sentence count override")
    p.add_argument("--out", required=True, help="output CoNLL path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mask", help="hide a fraction of gold entities")
    p.add_argument("corpus", help="input CoNLL file")
    p.add_argument("--fraction", type=float, required=True,
                   help="fraction of entities to keep")
    p.add_argument("--seed", type=int, help="mask seed (default 0)")
    p.add_argument("--out", required=True, help="masked CoNLL output path")
    p.add_argument("--kept-out", help="optional sidecar CSV of kept spans")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train one model with one method")
    p.add_argument("--method", required=True,
                   help="supervised | bond | guided_bond | bde:<inner>+<final>")
    p.add_argument("--train", required=True, help="training CoNLL file "
                   "(unannotated entities already masked to O)")
    p.add_argument("--dev", required=True, help="validation CoNLL file")
    p.add_argument("--config", help="JSON training config overrides")
    p.add_argument("--seed", type=int, help="model seed override")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a CoNLL file")
    p.add_argument("checkpoint", help="checkpoint .npz path")
    p.add_argument("corpus", help="evaluation CoNLL file")
    p.add_argument("--per-category", action="store_true",
                   help="also print per-category rows")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a methods x fractions x seeds matrix")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="mask seed override")
    p.add_argument("--out", help="run directory (default runs/experiment)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="recompute summary stats from results.csv")
    p.add_argument("run_dir", help="experiment output directory")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; pass both through
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
