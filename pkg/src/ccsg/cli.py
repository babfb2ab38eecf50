"""Command-line entry point: ``ccsg <subcommand> ...``.

Every run prints the resolved config hash. Failures exit with status 1 and a
single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import build_config

log = logging.getLogger("ccsg")

SUBCOMMANDS = ("train", "eval", "attribute", "construct", "filter", "ace", "genbench")


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports usage errors as exit 1 plus a JSON record."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    p.add_argument("--vectors", type=Path, help="vector file (default: vectors.txt next to --data)")
    p.add_argument("--data", type=Path, help="input dataset (JSONL)")
    p.add_argument("--format", choices=("statements", "multichoice"), default="statements")
    p.add_argument("--out", type=Path)


def build_parser() -> Parser:
    parser = Parser(prog="ccsg", description="Counterfactual contrastive training for plausibility estimation.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=Parser)

    p = sub.add_parser("train", help="train a model, write checkpoint and metrics")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-ccsg", action="store_true", help="plain cross-entropy ablation")
    p.add_argument("--heldout", type=Path, help="held-out dataset for per-epoch metrics")
    p.add_argument("--pairs", type=Path, help="held-out pairing file (pair_id, true_id, false_id)")
    p.add_argument("--compare-ablation", action="store_true",
                   help="train both arms with the same seed and write an ablation table")

    p = sub.add_parser("eval", help="accuracy / paired consistency of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--pairs", type=Path)
    p.add_argument("--force", action="store_true", help="continue on vocabulary hash mismatch")

    p = sub.add_parser("attribute", help="per-token contribution report and figure")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--mode", choices=("gradient", "grad_input"))
    p.add_argument("--plot-limit", type=int, default=6)

    p = sub.add_parser("construct", help="write the counterfactual-augmented corpus")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--epoch", type=int, default=2, help="epoch 1 produces no substitution negatives")

    p = sub.add_parser("filter", help="split statements by score threshold")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("ace", help="average causal effect of keyword / context interventions")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--intervention", choices=("keyword", "context"), default="keyword")

    p = sub.add_parser("genbench", help="write the synthetic paired benchmark")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train-pairs", type=int)
    p.add_argument("--heldout-pairs", type=int)
    p.add_argument("--selection-bias", type=float)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _config(args, **extra):
    cfg = build_config(args.config, seed=args.seed, **extra)
    print(f"config_hash = {cfg.hash()}")
    return cfg


def _require(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise CliError(f"--{n.replace('_', '-')} is required for {args.command}")


def _vectors(args):
    from .embedding_store import load_vectors

    path = args.vectors
    if path is None and args.data is not None:
        guess = args.data.parent / "vectors.txt"
        path = guess if guess.exists() else None
    if path is None:
        raise CliError("--vectors is required (no vectors.txt next to --data)")
    return load_vectors(path)


def _dataset(path, fmt):
    from .text import load_dataset

    return load_dataset(path, fmt)


def _statements(args):
    from .text import flatten

    _require(args, "data")
    return flatten(_dataset(args.data, args.format))


def _checkpoint(args):
    from .model import load_checkpoint, read_manifest

    return load_checkpoint(args.checkpoint), read_manifest(args.checkpoint)


def _check_vocab(params, store, force: bool):
    if params.vocab_hash() != store.vocab_hash():
        msg = (f"checkpoint vocabulary hash {params.vocab_hash()} does not match "
               f"vector file hash {store.vocab_hash()}")
        if not force:
            raise CliError(msg + " (use --force to continue)")
        log.warning("%s; continuing because of --force", msg)


def _meta(cfg, manifest=None, **more):
    out = {"config_hash": cfg.hash()}
    if manifest and "config_hash" in manifest:
        out["checkpoint_config_hash"] = manifest["config_hash"]
    out.update(more)
    return out


def _out_dir(args, default: str) -> Path:
    out = args.out or Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _train_arm(cfg, groups, store, heldout, pairs, outdir: Path):
    from .model import save_checkpoint
    from .plotting import plot_training_curves
    from .training import train

    outdir.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": cfg.hash()}
    t0 = time.perf_counter()
    with (outdir / "metrics.jsonl").open("w", encoding="utf-8") as fh:
        def on_record(rec):
            fh.write(json.dumps({**rec, **meta}, sort_keys=True) + "\n")

        res = train(cfg, groups, store, heldout=heldout, pairs=pairs, on_record=on_record)
    elapsed = time.perf_counter() - t0
    (outdir / "config.txt").write_text(f"# config_hash = {cfg.hash()}\n" + cfg.to_text(), encoding="utf-8")
    save_checkpoint(res.params, outdir / "model.ckpt", {
        "config_hash": cfg.hash(), "seed": cfg.seed, "no_ccsg": cfg.no_ccsg,
        "epochs": cfg.epochs, "params_digest": res.params.digest(),
    })
    plot_training_curves(res.metrics, outdir / "curves.png", meta)
    last = [m for m in res.metrics if m["kind"] == "epoch"][-1]
    return res, last, elapsed


def cmd_train(args) -> int:
    from .eval_filter import accuracy, paired_consistency
    from .synthetic import load_pairs
    from .text import flatten

    _require(args, "data")
    cfg = _config(args, epochs=args.epochs, no_ccsg=True if args.no_ccsg else None)
    store = _vectors(args)
    groups = _dataset(args.data, args.format)
    heldout = _dataset(args.heldout, args.format) if args.heldout else None
    pairs = load_pairs(args.pairs, flatten(heldout)) if args.pairs and heldout else None
    out = _out_dir(args, "run")

    if not args.compare_ablation:
        res, last, elapsed = _train_arm(cfg, groups, store, heldout, pairs, out)
        print(f"checkpoint = {out / 'model.ckpt'}")
        print(f"final L = {last['L']:.6f}  heldout_acc = {last['heldout_acc']}  ({elapsed:.1f}s)")
        return 0

    from .plotting import plot_ablation

    rows = []
    for arm, arm_cfg in (("ccsg", cfg.replace(no_ccsg=False)), ("no_ccsg", cfg.replace(no_ccsg=True))):
        res, last, elapsed = _train_arm(arm_cfg, groups, store, heldout, pairs, out / arm)
        row = {"arm": arm, "config_hash": arm_cfg.hash(), "seed": arm_cfg.seed, "final_L_bin": last["L_bin"],
               "accuracy": None, "paired_consistency": None, "seconds": round(elapsed, 2)}
        if heldout:
            row["accuracy"] = accuracy(res.params, flatten(heldout)).accuracy
        if pairs:
            row["paired_consistency"] = paired_consistency(res.params, pairs)
        rows.append(row)
    cols = ["arm", "seed", "accuracy", "paired_consistency", "final_L_bin", "seconds", "config_hash"]
    with (out / "ablation.tsv").open("w", encoding="utf-8") as fh:
        fh.write(f"# config_hash = {cfg.hash()}\n")
        fh.write("\t".join(cols) + "\n")
        for r in rows:
            fh.write("\t".join("" if r[c] is None else str(r[c]) for c in cols) + "\n")
    plot_ablation(rows, out / "ablation.png", meta={"config_hash": cfg.hash()})
    print((out / "ablation.tsv").read_text(encoding="utf-8"), end="")
    return 0


def cmd_eval(args) -> int:
    from .eval_filter import accuracy, paired_consistency
    from .synthetic import load_pairs

    cfg = _config(args)
    params, manifest = _checkpoint(args)
    store = _vectors(args)
    _check_vocab(params, store, args.force)
    stmts = _statements(args)
    report = accuracy(params, stmts, threads=max(1, args.threads))
    if args.pairs:
        report.paired_consistency = paired_consistency(params, load_pairs(args.pairs, stmts))
    print(report.summary())
    if args.out:
        rec = {**report.to_record(), **_meta(cfg, manifest)}
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rec, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return 0


def cmd_attribute(args) -> int:
    from .attribution import contribution_map, emit_contribution_report
    from .plotting import plot_contributions

    cfg = _config(args)
    params, manifest = _checkpoint(args)
    stmts = _statements(args)
    cmap = contribution_map(params, stmts, mode=args.mode or cfg.contribution_mode)
    out = args.out or Path("contributions.tsv")
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg, manifest)
    rows = emit_contribution_report(cmap, out, meta)
    png = plot_contributions(cmap, out.with_suffix(".png"), max_panels=args.plot_limit, meta=meta)
    print(f"wrote {len(rows)} rows to {out} and figure {png}")
    return 0


def cmd_construct(args) -> int:
    from .attribution import contribution_map
    from .constructor import construct
    from .text import StatementGroup, save_dataset

    cfg = _config(args)
    params, manifest = _checkpoint(args)
    store = _vectors(args)
    stmts = _statements(args)
    prev = contribution_map(params, stmts, mode=cfg.contribution_mode) if args.epoch > 1 else None
    batch = construct(stmts, store, prev, cfg.constructor(), epoch=args.epoch, seed=cfg.seed)
    groups = [StatementGroup(a.group_id, [a] + cs.negatives) for a, cs in zip(stmts, batch.sets)]
    out = args.out or Path("augmented.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(groups, out, _meta(cfg, manifest))
    counts = ", ".join(f"{k}={v}" for k, v in sorted(batch.counters.items()))
    print(f"{len(stmts)} anchors, {len(batch.negatives)} negatives ({counts}) -> {out}")
    return 0


def cmd_filter(args) -> int:
    from .eval_filter import filter_statements
    from .text import StatementGroup, save_dataset

    cfg = _config(args)
    params, manifest = _checkpoint(args)
    stmts = _statements(args)
    kept, dropped = filter_statements(params, stmts, args.threshold)
    out = _out_dir(args, "filtered")
    meta = _meta(cfg, manifest, threshold=args.threshold)
    for name, part in (("retained", kept), ("rejected", dropped)):
        save_dataset([StatementGroup(s.group_id, [s]) for s, _ in part], out / f"{name}.jsonl", meta)
    print(f"retained {len(kept)} / rejected {len(dropped)} of {len(stmts)} (score > {args.threshold})")
    return 0


def cmd_ace(args) -> int:
    from .eval_filter import estimate_ace

    cfg = _config(args)
    params, manifest = _checkpoint(args)
    store = _vectors(args)
    res = estimate_ace(params, _statements(args), args.intervention, store, cfg.constructor(),
                       cfg.contribution_mode)
    rec = {"intervention": args.intervention, "ace": res.ace, "mean_intervened": res.mean_intervened,
           "mean_original": res.mean_original, "applied": res.applied, "skipped": res.skipped,
           **_meta(cfg, manifest)}
    print(f"ACE({args.intervention}) = {res.ace:+.6f}  over {res.applied} statements ({res.skipped} skipped)")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rec, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_genbench(args) -> int:
    from .synthetic import BenchmarkSpec, corpus_digest, fixture_store, generate, write_benchmark

    cfg = _config(args)
    overrides = {k: v for k, v in (("n_train_pairs", args.train_pairs), ("n_heldout_pairs", args.heldout_pairs),
                                   ("selection_bias", args.selection_bias)) if v is not None}
    bench = generate(BenchmarkSpec(seed=args.seed, **overrides), fixture_store())
    paths = write_benchmark(bench, args.out, fixture_store(), {"config_hash": cfg.hash()})
    print(f"{len(bench.train_statements())} training statements, {len(bench.pairs)} held-out pairs, "
          f"digest {corpus_digest(bench)}")
    for key, p in paths.items():
        print(f"{key} = {p}")
    return 0


HANDLERS = {
    "train": cmd_train, "eval": cmd_eval, "attribute": cmd_attribute, "construct": cmd_construct,
    "filter": cmd_filter, "ace": cmd_ace, "genbench": cmd_genbench,
}


def _setup_logging():
    level = os.environ.get("CCSG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        if command is None:
            parser.print_usage(sys.stderr)
            raise CliError("missing subcommand")
        return HANDLERS[command](args)
    except Exception as exc:  # reported as one machine-readable line
        record = {"error": type(exc).__name__, "message": str(exc), "command": command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
