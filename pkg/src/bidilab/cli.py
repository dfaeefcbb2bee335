"""Operator surface: subcommands for tokenizer training, data prep,
training, the four evaluation protocols, fine-tuning, cost estimation,
and a transformation debug trace.

Exit codes: 0 success, 1 runtime failure, 2 bad usage or invalid config.
Environment overrides: BIDILAB_OUT replaces the configured output
directory; BIDILAB_THREADS caps BLAS/OpenMP threads (set before heavy
imports).
"""

from __future__ import annotations

import os

if os.environ.get("BIDILAB_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["BIDILAB_THREADS"])

import argparse
import csv
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as configmod
from . import evalsuite, finetune as finetunemod, plotting
from .config import ConfigError, ExperimentConfig, parse_config
from .data import load_documents, split_documents
from .model import PRESETS, init, load_checkpoint, preset_config
from .packing import pack, write_packed
from .seeds import substream
from .tokenizer import TokenizerModel, train_tokenizer
from .trainer import ZFLOP, TrainConfig, flops_estimate, train
from .transform import trace_transform, transform
from .variants import TransformPlan, get_variant, sample_plan

log = logging.getLogger("bidilab")

# Published analytic cost estimates (ZFLOPs at 100B tokens) for the
# standard presets, shown next to our estimator for comparison.
PRESET_REFERENCE_ZFLOPS = {"125M": 0.11, "355M": 0.31, "1.3B": 1.11, "2.7B": 2.23, "6.7B": 5.49}


class RunDirectory:
    """Exclusive owner of an output directory: lock file + manifest."""

    def __init__(self, path: Path):
        self.path = path
        self.lock = path / ".lock"

    def __enter__(self) -> Path:
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"{self.path} is locked by another run (remove {self.lock} if stale)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self.path

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)


def write_manifest(out_dir: Path, subcommand: str, config: ExperimentConfig | dict, seed: int):
    try:
        version = metadata.version("bidilab")
    except metadata.PackageNotFoundError:
        version = "unknown"
    config_dict = config.to_dict() if isinstance(config, ExperimentConfig) else config
    manifest = {
        "subcommand": subcommand,
        "config": config_dict,
        "config_hash": (
            config.digest() if isinstance(config, ExperimentConfig) else None
        ),
        "seed": seed,
        "code_version": version,
        "python": platform.python_version(),
        "argv": sys.argv[1:],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _out_dir(config: ExperimentConfig) -> Path:
    return Path(os.environ.get("BIDILAB_OUT", config.output_dir))


def _load_tokenizer(config: ExperimentConfig, out_dir: Path) -> TokenizerModel:
    if config.tokenizer.path:
        return TokenizerModel.load(config.tokenizer.path)
    cached = out_dir / "tokenizer.txt"
    if cached.exists():
        return TokenizerModel.load(cached)
    tok = train_tokenizer(config.corpus, config.tokenizer.vocab_size)
    tok.save(cached)
    return tok


def _write_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _load_eval_model(args):
    model, step, tokens, _ = load_checkpoint(args.checkpoint)
    log.info("loaded checkpoint at step %d (%d tokens)", step, tokens)
    return model


def _eval_docs(args, tokenizer, max_len):
    docs = list(
        load_documents(args.corpus, tokenizer, format=args.format, max_len=max_len)
    )
    if args.limit:
        docs = docs[: args.limit]
    return docs


# -- subcommand handlers ----------------------------------------------------


def cmd_tokenizer_train(args) -> int:
    tok = train_tokenizer(args.corpus, args.vocab_size)
    tok.save(args.out)
    print(f"trained tokenizer: vocab_size={tok.vocab_size}, merges={len(tok.merges)} -> {args.out}")
    return 0


def cmd_prepare(args) -> int:
    config = parse_config(args.config)
    out_dir = _out_dir(config)
    variant = get_variant(config.variant)
    max_len = config.train.max_len if config.train else 128
    with RunDirectory(out_dir):
        write_manifest(out_dir, "prepare", config, config.seed)
        tok = _load_tokenizer(config, out_dir)
        docs = list(
            load_documents(config.corpus, tok, format=config.corpus_format, max_len=max_len)
        )
        rng = substream(config.seed, "masks", "prepare")
        examples = (
            transform(doc, sample_plan(variant, len(doc), rng), tok.mask_id) for doc in docs
        )
        seqs = list(pack(examples, max_len, tok.pad_id))
        out = out_dir / "packed.bin"
        write_packed(out, seqs)
        print(f"packed {len(docs)} documents into {len(seqs)} sequences -> {out}")
    return 0


def cmd_train(args) -> int:
    config = parse_config(args.config)
    if config.train is None:
        raise ConfigError("config.train: section required for the train subcommand")
    variant = get_variant(args.variant or config.variant)
    if args.dry_run:
        print(f"config ok: variant={variant.name}, hash={config.digest()}")
        return 0
    out_dir = _out_dir(config)
    with RunDirectory(out_dir):
        write_manifest(out_dir, "train", config, config.seed)
        tok = _load_tokenizer(config, out_dir)
        docs = list(
            load_documents(
                config.corpus, tok, format=config.corpus_format, max_len=config.train.max_len
            )
        )
        model = init(config.model, config.seed)
        result = train(
            model, config.train, docs, variant, tok.mask_id, tok.pad_id,
            out_dir=out_dir, resume_from=args.resume,
        )
        plotting.save_loss_curve(
            result.metrics, out_dir / "loss_curve.png",
            title=f"{variant.name} training loss",
        )
        print(f"final loss {result.metrics[-1]['loss']:.4f} -> {result.final_checkpoint}")
    return 0


def cmd_eval_ppl(args) -> int:
    model = _load_eval_model(args)
    tokenizer = TokenizerModel.load(args.tokenizer)
    docs = _eval_docs(args, tokenizer, model.config.max_positions)
    ppl = evalsuite.full_doc_perplexity(model, docs, tokenizer.pad_id)
    print(f"full-document perplexity over {len(docs)} docs: {ppl:.4f}")
    return 0


def cmd_eval_suffix(args) -> int:
    model = _load_eval_model(args)
    tokenizer = TokenizerModel.load(args.tokenizer)
    docs = _eval_docs(args, tokenizer, model.config.max_positions)
    r_values = [float(v) for v in args.r_bidir.split(",")]
    rows = evalsuite.suffix_sweep(
        model, docs, r_values, tokenizer.pad_id, suffix_ratio=args.suffix_ratio
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(rows, out / "suffix_ppl.csv")
    plotting.save_sweep_figure(
        rows, "r_bidir", "ppl", out / "suffix_ppl.png",
        title="suffix perplexity vs bidirectional prefix ratio",
    )
    for row in rows:
        print(f"r_bidir={row['r_bidir']:.2f}  ppl={row['ppl']:.4f}")
    return 0


def cmd_eval_infill(args) -> int:
    model = _load_eval_model(args)
    tokenizer = TokenizerModel.load(args.tokenizer)
    docs = _eval_docs(args, tokenizer, model.config.max_positions)
    r_values = [float(v) for v in args.r_bidir.split(",")]
    rng = substream(args.seed, "eval-infill")
    rows = evalsuite.infill_sweep(
        model, docs, r_values, tokenizer.mask_id, tokenizer.pad_id, rng
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(rows, out / "infill_acc.csv")
    plotting.save_sweep_figure(
        rows, "r_bidir", "accuracy", out / "infill_acc.png",
        title="single-token infilling accuracy",
    )
    for row in rows:
        print(f"r_bidir={row['r_bidir']:.2f}  accuracy={row['accuracy']:.4f}")
    return 0


def cmd_eval_mc(args) -> int:
    model = _load_eval_model(args)
    tokenizer = TokenizerModel.load(args.tokenizer)
    task = evalsuite.load_mc_task(args.task)
    cfg = evalsuite.EvalConfig(r_bidir=args.r_bidir, scoring_mode=args.mode or task.mode)
    result = evalsuite.score_multiple_choice(model, task, cfg, tokenizer, tokenizer.pad_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        {"item": i, "choice": c, "gold": item.gold}
        for i, (c, item) in enumerate(zip(result.choices, task.items))
    ]
    _write_csv(rows, out / "mc_choices.csv")
    print(f"accuracy over {len(task.items)} items ({cfg.scoring_mode} mode): {result.accuracy:.4f}")
    return 0


def cmd_finetune(args) -> int:
    model = _load_eval_model(args)
    tokenizer = TokenizerModel.load(args.tokenizer)
    dataset = finetunemod.ClsDataset(
        train=finetunemod.load_cls_examples(args.train_file),
        dev=finetunemod.load_cls_examples(args.dev_file),
        num_labels=args.num_labels,
    )
    grid = finetunemod.FinetuneGrid(
        learning_rates=tuple(float(v) for v in args.lrs.split(",")),
        batch_sizes=tuple(int(v) for v in args.batch_sizes.split(",")),
        updates=args.updates,
        r_bidirs=tuple(float(v) for v in args.r_bidirs.split(",")),
    )
    result = finetunemod.finetune(model, dataset, grid, tokenizer, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(result.table, out / "grid.csv")
    plotting.save_grid_figure(result.table, out / "grid.png")
    print(f"best dev accuracy {result.best_accuracy:.4f} at {result.best_setting}")
    return 0


def cmd_flops(args) -> int:
    config = preset_config(args.preset)
    estimate = flops_estimate(config, args.max_len, int(float(args.tokens)))
    reference = PRESET_REFERENCE_ZFLOPS.get(args.preset)
    line = f"{args.preset}: estimated {estimate / ZFLOP:.3f} ZFLOPs"
    if reference is not None:
        line += f" (reference {reference:.2f} ZFLOPs)"
    print(line)
    return 0


def cmd_trace_transform(args) -> int:
    from .data import Document

    tokens = [int(v) for v in args.tokens.split(",")]
    doc = Document(tokens=tuple(tokens), source_id="cli")
    n = len(tokens)
    if args.masks:
        masks = tuple(int(v) for v in args.masks.split(","))
        plan = TransformPlan(
            n=n, n_mask=len(masks), mask_positions=masks,
            n_bidir=args.n_bidir, n_predict=args.n_predict if args.n_predict else n,
        )
        plan.validate()
    else:
        variant = get_variant(args.variant)
        plan = sample_plan(variant, n, substream(args.seed, "trace"))
    print(trace_transform(doc, plan, args.mask_id))
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bidilab",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("tokenizer-train", help="learn a byte-level BPE model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int, default=4096)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_tokenizer_train)

    p = sub.add_parser("prepare", help="transform and pack a corpus to binary records")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("train", help="pre-train a model under one variant")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", help="override the config's variant")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--dry-run", action="store_true", help="validate config and exit")
    p.set_defaults(handler=cmd_train)

    def eval_common(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--tokenizer", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--format", default="plain-blankline")
        p.add_argument("--limit", type=int, default=0)
        p.add_argument("--out", default="eval_out")

    p = sub.add_parser("eval-ppl", help="full-document perplexity")
    eval_common(p)
    p.set_defaults(handler=cmd_eval_ppl)

    p = sub.add_parser("eval-suffix", help="suffix perplexity sweep over r_bidir")
    eval_common(p)
    p.add_argument("--r-bidir", default="0,0.25,0.5,0.75,1")
    p.add_argument("--suffix-ratio", type=float, default=0.8)
    p.set_defaults(handler=cmd_eval_suffix)

    p = sub.add_parser("eval-infill", help="single-token infilling sweep")
    eval_common(p)
    p.add_argument("--r-bidir", default="0,0.25,0.5,0.75,1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_eval_infill)

    p = sub.add_parser("eval-mc", help="multiple-choice zero-shot scoring")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--task", required=True, help="JSONL task file")
    p.add_argument("--mode", choices=["full", "infill"])
    p.add_argument("--r-bidir", type=float, default=0.0)
    p.add_argument("--out", default="eval_out")
    p.set_defaults(handler=cmd_eval_mc)

    p = sub.add_parser("finetune", help="classification fine-tuning grid search")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--train-file", required=True)
    p.add_argument("--dev-file", required=True)
    p.add_argument("--num-labels", type=int, required=True)
    p.add_argument("--lrs", default="5e-6,1e-5,2e-5,5e-5")
    p.add_argument("--batch-sizes", default="16,32,64")
    p.add_argument("--r-bidirs", default="0,1")
    p.add_argument("--updates", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="finetune_out")
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("flops", help="analytic training-cost estimate")
    p.add_argument("--preset", required=True, choices=list(PRESETS))
    p.add_argument("--tokens", default="100e9")
    p.add_argument("--max-len", type=int, default=1024)
    p.set_defaults(handler=cmd_flops)

    p = sub.add_parser("trace-transform", help="step-by-step transformation trace")
    p.add_argument("--tokens", required=True, help="comma-separated token ids (EOS last)")
    p.add_argument("--variant", default="HybUni")
    p.add_argument("--masks", help="explicit 1-based mask positions, comma-separated")
    p.add_argument("--n-bidir", type=int, default=0)
    p.add_argument("--n-predict", type=int, default=0)
    p.add_argument("--mask-id", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_trace_transform)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
