"""Command-line entry point.

Verbs: prepare, verbalize, embed, train, eval, report. Exit codes: 0 on
success, 2 for configuration problems, 3 for data problems, 4 for embedding
provider problems, 5 when training diverges, 1 for anything else.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .config import apply_env_overrides, config_hash, load_config
from .errors import (
    ConfigError,
    DataError,
    DivergedLoss,
    MissingTextEmbedding,
    ProviderError,
    VerbrecError,
)
from . import harness

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PROVIDER = 4
EXIT_DIVERGED = 5


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="verbrec",
        description="CTR experiments over verbalized tabular data with text embeddings",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def with_common(p):
        p.add_argument("--config", required=True, help="path to the experiment config YAML")
        p.add_argument("--seed", type=int, default=None, help="override the training seed")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="force the deterministic flag in the training config",
        )
        return p

    with_common(sub.add_parser("prepare", help="normalize the dataset and write splits"))
    with_common(sub.add_parser("verbalize", help="dump every distinct sentence to a TSV"))
    with_common(sub.add_parser("embed", help="populate the embedding cache"))
    with_common(sub.add_parser("train", help="train one model and write a run manifest"))
    ev = with_common(sub.add_parser("eval", help="re-evaluate a finished run on the test split"))
    ev.add_argument("--attempt", default=None, help="attempt directory (default: latest)")
    rep = sub.add_parser("report", help="render the comparison table from run manifests")
    rep.add_argument("run_dirs", nargs="+", help="run directories or a runs/ root")
    rep.add_argument("--out-markdown", default=None)
    rep.add_argument("--out-csv", default=None)
    return parser


def _load(args) -> "harness.ExperimentConfig":
    cfg = apply_env_overrides(load_config(args.config))
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if args.deterministic:
        cfg = replace(cfg, train=replace(cfg.train, deterministic=True))
    return cfg


def _run(args, out) -> int:
    if args.verb == "report":
        md = harness.cmd_report(
            args.run_dirs,
            out_markdown=Path(args.out_markdown) if args.out_markdown else None,
            out_csv=Path(args.out_csv) if args.out_csv else None,
        )
        out.write(md)
        return EXIT_OK

    cfg = _load(args)
    if args.verb == "prepare":
        res = harness.cmd_prepare(cfg)
        state = "up to date" if res.up_to_date else "written"
        out.write(f"prepared data {state}: {res.directory}\n")
        out.write(
            f"users={res.num_users} items={res.num_items} examples={res.num_examples} "
            f"positive_fraction={res.positive_fraction:.4f}\n"
        )
    elif args.verb == "verbalize":
        path = harness.cmd_verbalize(cfg)
        count = sum(1 for _ in open(path, encoding="utf-8"))
        out.write(f"wrote {count} documents: {path}\n")
    elif args.verb == "embed":
        res = harness.cmd_embed(cfg)
        if res.cache_path is None:
            out.write("raw variant: no text blocks, nothing to embed\n")
        else:
            out.write(
                f"embedded {res.total} texts (cache hits {res.hits}, misses {res.misses}) "
                f"dim={res.dim} cache={res.cache_path}\n"
            )
    elif args.verb == "train":
        def progress(rec):
            out.write(
                f"epoch {rec.epoch}: train_logloss={rec.train_logloss:.6f} "
                f"valid_auc={rec.valid_auc:.6f} valid_logloss={rec.valid_logloss:.6f} "
                f"({rec.seconds:.1f}s)\n"
            )
            out.flush()

        manifest, attempt = harness.cmd_train(cfg, progress=progress)
        out.write(
            f"run {manifest.config_hash} done: test_auc={manifest.auc:.6f} "
            f"test_logloss={manifest.logloss:.6f} best_epoch={manifest.best_epoch}\n"
        )
        out.write(f"artifacts: {attempt}\n")
    elif args.verb == "eval":
        attempt = Path(args.attempt) if args.attempt else None
        report = harness.cmd_eval(cfg, attempt=attempt)
        out.write(f"test_auc={report.auc:.6f} test_logloss={report.logloss:.6f}\n")
    else:  # pragma: no cover - argparse enforces the verb set
        raise ConfigError(f"unknown verb {args.verb!r}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = _parser().parse_args(argv)
    try:
        return _run(args, out)
    except ConfigError as exc:
        err.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except DataError as exc:
        err.write(f"data error: {exc}\n")
        return EXIT_DATA
    except (ProviderError, MissingTextEmbedding) as exc:
        err.write(f"provider error: {exc}\n")
        return EXIT_PROVIDER
    except DivergedLoss as exc:
        err.write(f"training diverged: {exc}\n")
        return EXIT_DIVERGED
    except VerbrecError as exc:
        err.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
